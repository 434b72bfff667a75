//! Foreground segmentation of the synthesized depth image against a mean-depth
//! background model.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ensure_dims, DepthImage, Mask};
use crate::scalar::Real;

/// Per-pixel mean over the valid samples of an occluder-free initialization sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct BackgroundModel<T> {
    pub mean_depth: DepthImage<T>,
    /// Number of frames that contributed to each pixel; 0 marks the pixel model-invalid.
    pub valid_count: Vec<u32>,
}

impl<T: Real> BackgroundModel<T> {
    pub fn dims(&self) -> (usize, usize) {
        self.mean_depth.dims()
    }

    #[inline]
    pub fn mean_at(&self, x: usize, y: usize) -> Option<T> {
        let i = y * self.mean_depth.width() + x;
        (self.valid_count[i] > 0).then(|| self.mean_depth.get(x, y))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentationParams<T> {
    pub margin: T,
    /// Radius in pixels of the disc structuring element.
    pub opening_radius: usize,
    pub opening_iterations: usize,
}

impl<T: Real> Default for SegmentationParams<T> {
    fn default() -> Self {
        SegmentationParams {
            margin: T::lit(0.03),
            opening_radius: 1,
            opening_iterations: 1,
        }
    }
}

impl<T: Real> SegmentationParams<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > T::zero()) {
            return Err(Error::Config(format!("margin must be positive, got {}", self.margin)));
        }
        Ok(())
    }
}

pub fn build_background_model<T: Real>(init_depths: &[DepthImage<T>]) -> Result<BackgroundModel<T>> {
    let first = init_depths
        .first()
        .ok_or_else(|| Error::Config("background model needs at least one depth frame".into()))?;
    let (w, h) = first.dims();
    for d in &init_depths[1..] {
        ensure_dims("initialization depth frame", (w, h), d.dims())?;
    }
    let mut sum = vec![T::zero(); w * h];
    let mut count = vec![0u32; w * h];
    for d in init_depths {
        for (i, &v) in d.data().iter().enumerate() {
            if v > T::zero() {
                sum[i] = sum[i] + v;
                count[i] += 1;
            }
        }
    }
    let mean = sum
        .iter()
        .zip(&count)
        .map(|(&s, &c)| if c > 0 { s / T::of_usize(c as usize) } else { T::zero() })
        .collect();
    Ok(BackgroundModel {
        mean_depth: DepthImage::new(w, h, mean)?,
        valid_count: count,
    })
}

/// Thresholded mask before the morphological opening.
pub fn raw_mask<T: Real>(depth: &DepthImage<T>, model: &BackgroundModel<T>, margin: T) -> Result<Mask> {
    ensure_dims("live depth vs background model", model.dims(), depth.dims())?;
    let (w, h) = depth.dims();
    Ok(Mask::from_fn(w, h, |x, y| match (depth.at(x, y), model.mean_at(x, y)) {
        (Some(d), Some(m)) => d < m - margin,
        _ => false,
    }))
}

/// Foreground mask: raw threshold followed by an opening with a disc.
pub fn segment<T: Real>(
    depth: &DepthImage<T>,
    model: &BackgroundModel<T>,
    params: &SegmentationParams<T>,
) -> Result<Mask> {
    params.validate()?;
    let raw = raw_mask(depth, model, params.margin)?;
    Ok(open(&raw, params.opening_radius, params.opening_iterations))
}

/// Offsets of a discrete disc `dx² + dy² ≤ r²`.
pub fn disc(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                out.push((dx, dy));
            }
        }
    }
    out
}

/// Neighbourhood test over `element`; pixels outside the image are skipped, so
/// erosion and dilation stay adjoint on the bounded domain.
fn morph(mask: &Mask, element: &[(isize, isize)], erode: bool) -> Mask {
    let (w, h) = mask.dims();
    let src = mask.data();
    let mut out = vec![false; w * h];
    out.par_chunks_mut(w.max(1)).enumerate().for_each(|(y, row)| {
        for (x, px) in row.iter_mut().enumerate() {
            let mut hits = element.iter().filter_map(|&(dx, dy)| {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                (nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h)
                    .then(|| src[ny as usize * w + nx as usize])
            });
            *px = if erode { hits.all(|b| b) } else { hits.any(|b| b) };
        }
    });
    Mask::new(w, h, out).expect("same dimensions")
}

pub fn erode(mask: &Mask, radius: usize) -> Mask {
    morph(mask, &disc(radius), true)
}

pub fn dilate(mask: &Mask, radius: usize) -> Mask {
    morph(mask, &disc(radius), false)
}

/// `iterations` erosions followed by as many dilations.
pub fn open(mask: &Mask, radius: usize, iterations: usize) -> Mask {
    let element = disc(radius);
    let mut m = mask.clone();
    for _ in 0..iterations {
        m = morph(&m, &element, true);
    }
    for _ in 0..iterations {
        m = morph(&m, &element, false);
    }
    m
}
