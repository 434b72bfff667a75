//! Multi-layer blending of foreground, recovered background and X-ray images.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ensure_dims, ColorImage, GrayImage, Mask};
use crate::raycast::LayerSet;
use crate::scalar::Real;

pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// Blend weights `(alpha, beta, gamma, delta_x)`.
///
/// `alpha + beta + gamma = 1` weights the foreground, background and X-ray layers
/// on foreground pixels; `delta_x` mixes background and X-ray everywhere else.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBlend")]
pub struct BlendParams {
    alpha: f64,
    beta: f64,
    gamma: f64,
    delta_x: f64,
}

#[derive(Deserialize)]
struct RawBlend {
    alpha: f64,
    beta: f64,
    gamma: f64,
    delta_x: f64,
}

impl TryFrom<RawBlend> for BlendParams {
    type Error = Error;
    fn try_from(r: RawBlend) -> Result<Self> {
        BlendParams::new(r.alpha, r.beta, r.gamma, r.delta_x)
    }
}

impl BlendParams {
    pub fn new(alpha: f64, beta: f64, gamma: f64, delta_x: f64) -> Result<Self> {
        for (name, v) in [("alpha", alpha), ("beta", beta), ("gamma", gamma), ("delta", delta_x)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidBlend(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        let sum = alpha + beta + gamma;
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::InvalidBlend(format!(
                "alpha + beta + gamma must equal 1 (tolerance {SIMPLEX_TOLERANCE:e}), got {sum}"
            )));
        }
        Ok(BlendParams {
            alpha,
            beta,
            gamma,
            delta_x,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    pub fn delta_x(&self) -> f64 {
        self.delta_x
    }
    pub fn as_array(&self) -> [f64; 4] {
        [self.alpha, self.beta, self.gamma, self.delta_x]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlendPreset {
    pub name: String,
    pub params: BlendParams,
}

const PRESETS: [(&str, [f64; 4]); 6] = [
    ("xray-only", [0.0, 0.0, 1.0, 1.0]),
    ("background", [0.0, 1.0, 0.0, 0.0]),
    ("transparent-hands-on-background", [0.4, 0.6, 0.0, 0.0]),
    ("three-layer", [0.2, 0.3, 0.5, 0.5]),
    ("foreground", [1.0, 0.0, 0.0, 0.0]),
    ("opaque-hands-on-xray", [1.0, 0.0, 0.0, 1.0]),
];

pub fn preset_table() -> Vec<BlendPreset> {
    PRESETS
        .iter()
        .map(|&(name, [a, b, g, d])| BlendPreset {
            name: name.to_string(),
            params: BlendParams::new(a, b, g, d).expect("preset table entries are valid"),
        })
        .collect()
}

pub fn find_preset(name: &str) -> Option<BlendPreset> {
    preset_table().into_iter().find(|p| p.name == name)
}

/// Unrounded blend of one channel.
#[inline]
pub fn blend_channel(params: &BlendParams, foreground: bool, c: u8, b: u8, x: u8) -> f64 {
    let (c, b, x) = (c as f64, b as f64, x as f64);
    if foreground {
        params.alpha * c + params.beta * b + params.gamma * x
    } else {
        (1.0 - params.delta_x) * b + params.delta_x * x
    }
}

#[inline]
fn quantize(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Blends raw layer images; see [`compose`].
pub fn compose_images(
    fg_color: &ColorImage,
    bg_color: &ColorImage,
    mask: &Mask,
    xray: &GrayImage,
    params: &BlendParams,
) -> Result<ColorImage> {
    let dims = fg_color.dims();
    ensure_dims("background color", dims, bg_color.dims())?;
    ensure_dims("mask", dims, mask.dims())?;
    ensure_dims("x-ray", dims, xray.dims())?;
    let (w, h) = dims;
    let mut out = ColorImage::filled(w, h, [0; 3]);
    out.data_mut()
        .par_iter_mut()
        .enumerate()
        .for_each(|(i, px)| {
            let fg = mask.data()[i];
            let c = fg_color.data()[i];
            let b = bg_color.data()[i];
            let x = xray.data()[i];
            for ch in 0..3 {
                px[ch] = quantize(blend_channel(params, fg, c[ch], b[ch], x));
            }
        });
    Ok(out)
}

/// `I_layers`: per pixel `αI_c + βI_b + γI_xray` on the foreground mask and
/// `(1 − δx)I_b + δx·I_xray` elsewhere, rounded half-up.
pub fn compose<T: Real>(layers: &LayerSet<T>, params: &BlendParams) -> Result<ColorImage> {
    compose_images(&layers.fg_color, &layers.bg_color, &layers.mask, &layers.xray, params)
}
