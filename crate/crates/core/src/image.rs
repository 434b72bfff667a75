//! Depth, color, grayscale and binary images plus the registered RGBD frame.
//!
//! Accessors taking continuous pixel coordinates use nearest-neighbor lookup and
//! never read out of bounds.

use crate::error::{Error, Result};
use crate::geometry::{pixel_index, Camera};
use crate::scalar::Real;

pub type Rgb = [u8; 3];

/// Per-pixel depth in meters; `0` means "no measurement".
#[derive(Clone, Debug, PartialEq)]
pub struct DepthImage<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Real> DepthImage<T> {
    pub fn new(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Config(format!(
                "depth buffer has {} values for {width}x{height}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|d| !d.is_finite() || **d < T::zero()) {
            return Err(Error::Config(format!("invalid depth value {bad}")));
        }
        Ok(DepthImage {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        DepthImage {
            width,
            height,
            data: vec![T::zero(); width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Raw stored value (0 for holes).
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    /// Valid depth at an integer pixel, `None` for holes or out-of-range indices.
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> Option<T> {
        if x >= self.width || y >= self.height {
            return None;
        }
        let d = self.get(x, y);
        (d > T::zero()).then_some(d)
    }

    /// Nearest-neighbor depth sample.
    #[inline]
    pub fn sample(&self, pixel: [T; 2]) -> Option<T> {
        let (x, y) = pixel_index(pixel[0], pixel[1], self.width, self.height)?;
        self.at(x, y)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ColorImage {
    width: usize,
    height: usize,
    data: Vec<Rgb>,
}

impl ColorImage {
    pub fn new(width: usize, height: usize, data: Vec<Rgb>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Config(format!(
                "color buffer has {} pixels for {width}x{height}",
                data.len()
            )));
        }
        Ok(ColorImage {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: Rgb) -> Self {
        ColorImage {
            width,
            height,
            data: vec![rgb; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
    pub fn data(&self) -> &[Rgb] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [Rgb] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Rgb {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: Rgb) {
        self.data[y * self.width + x] = rgb;
    }

    #[inline]
    pub fn sample<T: Real>(&self, pixel: [T; 2]) -> Option<Rgb> {
        let (x, y) = pixel_index(pixel[0], pixel[1], self.width, self.height)?;
        Some(self.get(x, y))
    }
}

/// 8-bit single channel image (the X-ray layer).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Config(format!(
                "gray buffer has {} pixels for {width}x{height}",
                data.len()
            )));
        }
        Ok(GrayImage {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
    pub fn data(&self) -> &[u8] {
        &self.data
    }
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    /// Replicates the gray value to all three channels.
    pub fn to_rgb(&self) -> ColorImage {
        ColorImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&g| [g, g, g]).collect(),
        }
    }
}

/// Binary image; `true` is foreground.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Config(format!(
                "mask buffer has {} pixels for {width}x{height}",
                data.len()
            )));
        }
        Ok(Mask {
            width,
            height,
            data,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let data = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Mask {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn and(&self, other: &Mask) -> Mask {
        self.zip(other, |a, b| a && b)
    }

    pub fn or(&self, other: &Mask) -> Mask {
        self.zip(other, |a, b| a || b)
    }

    /// `self ⊆ other`.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }

    fn zip(&self, other: &Mask, f: impl Fn(bool, bool) -> bool) -> Mask {
        assert_eq!(self.dims(), other.dims(), "mask dimensions differ");
        Mask {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }
}

pub(crate) fn ensure_dims(what: &'static str, expected: (usize, usize), found: (usize, usize)) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            found,
        })
    }
}

/// Registered depth + color pair with the camera that captured it.
#[derive(Clone, Debug)]
pub struct RgbdFrame<T> {
    pub depth: DepthImage<T>,
    pub color: ColorImage,
    pub camera: Camera<T>,
    pub timestamp_index: usize,
}

impl<T: Real> RgbdFrame<T> {
    pub fn new(
        depth: DepthImage<T>,
        color: ColorImage,
        camera: Camera<T>,
        timestamp_index: usize,
    ) -> Result<Self> {
        ensure_dims("color image", depth.dims(), color.dims())?;
        ensure_dims(
            "camera image size",
            depth.dims(),
            (camera.width(), camera.height()),
        )?;
        camera.validate()?;
        Ok(RgbdFrame {
            depth,
            color,
            camera,
            timestamp_index,
        })
    }
}
