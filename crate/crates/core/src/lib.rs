//! Two-camera RGBD fusion into a truncated signed distance field, view synthesis
//! from an occluded viewpoint, background recovery behind the foreground and
//! layer blending with an X-ray image.
//!
//! The numeric core is generic over [`scalar::Real`]. The aliases at the root fix
//! it to `f64`; [`single`] has the `f32` variants.

pub mod error;
pub mod geometry;
pub mod image;
pub mod scalar;
pub mod tsdf;
pub mod raycast;
pub mod segmentation;
pub mod compositor;
pub mod scene;
pub mod metrics;
pub mod pipeline;
pub mod bench;
pub mod io;

pub use error::{Error, Result};

pub type Vec3 = geometry::Vec3<f64>;
pub type Camera = geometry::Camera<f64>;
pub type DepthImage = image::DepthImage<f64>;
pub type RgbdFrame = image::RgbdFrame<f64>;
pub type GridSpec = tsdf::GridSpec<f64>;
pub type FusionParams = tsdf::FusionParams<f64>;
pub type VoxelGrid = tsdf::VoxelGrid<f64>;
pub type RaycastParams = raycast::RaycastParams<f64>;
pub type LayerSet = raycast::LayerSet<f64>;
pub type BackgroundModel = segmentation::BackgroundModel<f64>;
pub type SegmentationParams = segmentation::SegmentationParams<f64>;
pub type PipelineConfig = pipeline::PipelineConfig<f64>;

pub mod single {
    pub type Vec3 = crate::geometry::Vec3<f32>;
    pub type Camera = crate::geometry::Camera<f32>;
    pub type DepthImage = crate::image::DepthImage<f32>;
    pub type RgbdFrame = crate::image::RgbdFrame<f32>;
    pub type GridSpec = crate::tsdf::GridSpec<f32>;
    pub type FusionParams = crate::tsdf::FusionParams<f32>;
    pub type VoxelGrid = crate::tsdf::VoxelGrid<f32>;
    pub type RaycastParams = crate::raycast::RaycastParams<f32>;
    pub type LayerSet = crate::raycast::LayerSet<f32>;
    pub type BackgroundModel = crate::segmentation::BackgroundModel<f32>;
    pub type SegmentationParams = crate::segmentation::SegmentationParams<f32>;
    pub type PipelineConfig = crate::pipeline::PipelineConfig<f32>;
}
