//! Per-frame processing: fuse the side views, synthesize the target view,
//! segment it and recover the background behind the foreground.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Camera, Vec3};
use crate::image::{DepthImage, GrayImage, RgbdFrame};
use crate::raycast::{cast_primary, cast_secondary, compose_background, LayerSet, RaycastParams};
use crate::scalar::Real;
use crate::segmentation::{build_background_model, segment, BackgroundModel, SegmentationParams};
use crate::tsdf::{fuse, FusionParams, GridSpec, VoxelGrid};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig<T> {
    pub grid: GridSpec<T>,
    pub fusion: FusionParams<T>,
    pub raycast: RaycastParams<T>,
    pub segmentation: SegmentationParams<T>,
}

impl<T: Real> Default for PipelineConfig<T> {
    /// 256³ voxels of 2 mm centered 20 cm above the origin.
    fn default() -> Self {
        PipelineConfig {
            grid: default_grid(256, T::lit(0.002)),
            fusion: FusionParams::default(),
            raycast: RaycastParams::default(),
            segmentation: SegmentationParams::default(),
        }
    }
}

/// Cube of `n` voxels of `voxel_size`, centered 20 cm above the origin.
///
/// # Panics
/// When `n < 2` or `voxel_size` is not positive.
pub fn default_grid<T: Real>(n: usize, voxel_size: T) -> GridSpec<T> {
    GridSpec::cube(n, voxel_size, Vec3::new(T::zero(), T::zero(), T::lit(0.2))).expect("valid default grid")
}

impl<T: Real> PipelineConfig<T> {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.fusion.validate()?;
        self.raycast.validate()?;
        self.segmentation.validate()
    }
}

/// Wall-clock time per stage in milliseconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub fuse: f64,
    pub primary: f64,
    pub segment: f64,
    pub secondary: f64,
    pub compose: f64,
}

impl StageTimings {
    pub fn total(&self) -> f64 {
        self.fuse + self.primary + self.segment + self.secondary + self.compose
    }

    pub fn mean(all: &[StageTimings]) -> StageTimings {
        if all.is_empty() {
            return StageTimings::default();
        }
        let n = all.len() as f64;
        let sum = |f: fn(&StageTimings) -> f64| all.iter().map(f).sum::<f64>() / n;
        StageTimings {
            fuse: sum(|t| t.fuse),
            primary: sum(|t| t.primary),
            segment: sum(|t| t.segment),
            secondary: sum(|t| t.secondary),
            compose: sum(|t| t.compose),
        }
    }
}

fn timed<R>(slot: &mut f64, f: impl FnOnce() -> R) -> R {
    let start = Instant::now();
    let r = f();
    *slot = start.elapsed().as_secs_f64() * 1e3;
    r
}

/// Synthesized target-view depth for one occluder-free frame.
pub fn synthesize_depth<T: Real>(
    views: &[RgbdFrame<T>],
    target: &Camera<T>,
    config: &PipelineConfig<T>,
) -> Result<DepthImage<T>> {
    let grid = fuse(views, &config.grid, &config.fusion)?;
    Ok(cast_primary(&grid, target, &config.raycast)?.1)
}

/// Background model from the synthesized depth of every initialization frame.
pub fn background_model<T: Real>(
    init: &[Vec<RgbdFrame<T>>],
    target: &Camera<T>,
    config: &PipelineConfig<T>,
) -> Result<BackgroundModel<T>> {
    if init.is_empty() {
        return Err(Error::Config("no initialization frames".into()));
    }
    let depths = init
        .iter()
        .map(|views| synthesize_depth(views, target, config))
        .collect::<Result<Vec<_>>>()?;
    build_background_model(&depths)
}

/// Everything produced for one live frame.
#[derive(Clone, Debug)]
pub struct FrameOutput<T> {
    pub layers: LayerSet<T>,
    pub timings: StageTimings,
    pub grid: VoxelGrid<T>,
}

pub fn process_frame<T: Real>(
    views: &[RgbdFrame<T>],
    target: &Camera<T>,
    model: &BackgroundModel<T>,
    xray: GrayImage,
    config: &PipelineConfig<T>,
) -> Result<FrameOutput<T>> {
    config.validate()?;
    let mut t = StageTimings::default();
    let grid = timed(&mut t.fuse, || fuse(views, &config.grid, &config.fusion))?;
    let (fg_color, fg_depth) = timed(&mut t.primary, || cast_primary(&grid, target, &config.raycast))?;
    let mask = timed(&mut t.segment, || segment(&fg_depth, model, &config.segmentation))?;
    let (recovered, valid) = timed(&mut t.secondary, || {
        cast_secondary(&grid, target, &fg_depth, &mask, &config.raycast)
    })?;
    let (bg_color, bg_valid) = timed(&mut t.compose, || compose_background(&fg_color, &mask, &recovered, &valid))?;
    let layers = LayerSet {
        fg_color,
        fg_depth,
        mask,
        bg_color,
        bg_valid,
        xray,
    };
    layers.validate()?;
    Ok(FrameOutput {
        layers,
        timings: t,
        grid,
    })
}
