//! Two-view truncated signed distance fusion.
//!
//! Every voxel center `x` is projected into each side camera. The camera votes
//! with the truncated signed distance between the surface it measured along the
//! ray through `x` and `x` itself, provided `x` is not hidden deep behind that
//! surface. The field is the plain mean of the votes; the color field averages the
//! sampled colors with the same binary weights.

use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Camera, Vec3};
use crate::image::{Rgb, RgbdFrame};
use crate::scalar::Real;

/// Which side of the measured surface earns a camera vote.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightRule {
    /// Vote when `s > -eta`: free space, the surface, and up to `eta` behind it.
    #[default]
    Visible,
    /// Vote only when `s < -eta`, i.e. the inequality exactly as printed in the
    /// original formulation. Kept for comparison runs.
    LiteralBehind,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionParams<T> {
    /// Truncation distance in meters.
    pub delta_trunc: T,
    /// Visibility tolerance in meters.
    pub eta: T,
    #[serde(default)]
    pub weight_rule: WeightRule,
}

impl<T: Real> Default for FusionParams<T> {
    fn default() -> Self {
        FusionParams {
            delta_trunc: T::lit(0.002),
            eta: T::lit(0.006),
            weight_rule: WeightRule::Visible,
        }
    }
}

impl<T: Real> FusionParams<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta_trunc > T::zero()) || !(self.eta >= T::zero()) || !self.eta.is_finite() {
            return Err(Error::Config(format!(
                "fusion parameters need delta_trunc > 0 and eta >= 0 (got {}, {})",
                self.delta_trunc, self.eta
            )));
        }
        Ok(())
    }
}

/// Scaled truncation: `s / delta` inside the band, `sgn(s)` outside.
#[inline]
pub fn truncate<T: Real>(s: T, delta: T) -> T {
    if s.abs() / delta > T::one() {
        s.signum()
    } else {
        s / delta
    }
}

/// Signed distance along the viewing ray between the surface measured by `frame`
/// and `point`: positive in front of the surface, negative behind it.
///
/// The depth image stores distance along the optical axis; it is converted to a
/// range along the ray through `point` before subtracting `||point - C||`.
#[inline]
pub fn signed_distance<T: Real>(frame: &RgbdFrame<T>, point: &Vec3<T>) -> Option<T> {
    let p_cam = frame.camera.pose.transform(point);
    signed_distance_cam(&frame.camera, frame, &p_cam)
}

#[inline]
fn signed_distance_cam<T: Real>(camera: &Camera<T>, frame: &RgbdFrame<T>, p_cam: &Vec3<T>) -> Option<T> {
    let proj = camera.project_camera_point(p_cam)?;
    let measured = frame.depth.sample(proj.pixel)?;
    let range = p_cam.norm();
    Some(range * (measured / proj.depth) - range)
}

/// Per-camera truncated signed distance `v ∈ [-1, 1]`, or `None` when the point
/// does not project onto a valid depth sample.
pub fn truncated_signed_distance<T: Real>(
    frame: &RgbdFrame<T>,
    point: &Vec3<T>,
    params: &FusionParams<T>,
) -> Option<T> {
    signed_distance(frame, point).map(|s| truncate(s, params.delta_trunc))
}

#[inline]
fn weight_for<T: Real>(s: T, params: &FusionParams<T>) -> bool {
    match params.weight_rule {
        WeightRule::Visible => s > -params.eta,
        WeightRule::LiteralBehind => s < -params.eta,
    }
}

/// Binary visibility vote of one camera for `point`.
pub fn visibility_weight<T: Real>(frame: &RgbdFrame<T>, point: &Vec3<T>, params: &FusionParams<T>) -> u8 {
    match signed_distance(frame, point) {
        Some(s) if weight_for(s, params) => 1,
        _ => 0,
    }
}

/// Voxel lattice placement. Voxel `(i, j, k)` is centered at
/// `min_corner + (i + 0.5, j + 0.5, k + 0.5) * voxel_size`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec<T> {
    pub dims: [usize; 3],
    pub voxel_size: T,
    /// Center of the grid in world coordinates.
    pub origin: Vec3<T>,
}

impl<T: Real> GridSpec<T> {
    pub fn new(dims: [usize; 3], voxel_size: T, origin: Vec3<T>) -> Result<Self> {
        let spec = GridSpec {
            dims,
            voxel_size,
            origin,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Cubic grid of `n` voxels per side.
    pub fn cube(n: usize, voxel_size: T, origin: Vec3<T>) -> Result<Self> {
        Self::new([n; 3], voxel_size, origin)
    }

    pub fn validate(&self) -> Result<()> {
        // Interpolation needs two voxel centers per axis.
        if self.dims.iter().any(|&n| n < 2) {
            return Err(Error::Config(format!(
                "grid dims {:?}: every axis needs at least 2 voxels",
                self.dims
            )));
        }
        if !(self.voxel_size > T::zero()) || !self.voxel_size.is_finite() {
            return Err(Error::Config(format!(
                "voxel size must be positive, got {}",
                self.voxel_size
            )));
        }
        if !self.origin.is_finite() {
            return Err(Error::Config("grid origin is not finite".into()));
        }
        Ok(())
    }

    pub fn voxel_count(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn extent(&self) -> Vec3<T> {
        Vec3(self.dims.map(|n| T::of_usize(n) * self.voxel_size))
    }

    pub fn min_corner(&self) -> Vec3<T> {
        self.origin - self.extent() * T::lit(0.5)
    }

    pub fn max_corner(&self) -> Vec3<T> {
        self.origin + self.extent() * T::lit(0.5)
    }

    /// Linear index, x fastest.
    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Vec3<T> {
        let half = T::lit(0.5);
        let m = self.min_corner();
        Vec3::new(
            m.x() + (T::of_usize(i) + half) * self.voxel_size,
            m.y() + (T::of_usize(j) + half) * self.voxel_size,
            m.z() + (T::of_usize(k) + half) * self.voxel_size,
        )
    }

    /// Continuous voxel coordinates: voxel centers sit on integers.
    #[inline]
    pub fn to_voxel_coords(&self, p: &Vec3<T>) -> Vec3<T> {
        let half = T::lit(0.5);
        let m = self.min_corner();
        let inv = T::one() / self.voxel_size;
        Vec3::new(
            (p.x() - m.x()) * inv - half,
            (p.y() - m.y()) * inv - half,
            (p.z() - m.z()) * inv - half,
        )
    }
}

/// Side length, in cells, of the blocks used for empty-space skipping.
pub const SKIP_BLOCK: usize = 8;

#[derive(Clone, Debug)]
struct Occupancy {
    /// Per cell (indexed by its lowest corner): all 8 corners observed and positive.
    cells: Vec<bool>,
    block_dims: [usize; 3],
    blocks: Vec<bool>,
}

impl Occupancy {
    fn build<T: Real>(spec: &GridSpec<T>, tsdf: &[T]) -> Self {
        let [nx, ny, nz] = spec.dims;
        let positive: Vec<bool> = tsdf.iter().map(|v| *v > T::zero()).collect();
        let mut cells = vec![false; tsdf.len()];
        cells.par_chunks_mut(nx).enumerate().for_each(|(row, out)| {
            let (j, k) = (row % ny, row / ny);
            if j + 1 >= ny || k + 1 >= nz {
                return;
            }
            let at = |i: usize, dj: usize, dk: usize| positive[i + nx * (j + dj + ny * (k + dk))];
            for (i, cell) in out.iter_mut().enumerate().take(nx - 1) {
                *cell = (0..2).all(|dk| (0..2).all(|dj| at(i, dj, dk) && at(i + 1, dj, dk)));
            }
        });
        let block_dims = spec.dims.map(|n| (n - 1).div_ceil(SKIP_BLOCK));
        let [bx, by, bz] = block_dims;
        let blocks = (0..bx * by * bz)
            .into_par_iter()
            .map(|b| {
                let (i0, j0, k0) = (b % bx * SKIP_BLOCK, b / bx % by * SKIP_BLOCK, b / (bx * by) * SKIP_BLOCK);
                (k0..(k0 + SKIP_BLOCK).min(nz - 1)).all(|k| {
                    (j0..(j0 + SKIP_BLOCK).min(ny - 1))
                        .all(|j| (i0..(i0 + SKIP_BLOCK).min(nx - 1)).all(|i| cells[i + nx * (j + ny * k)]))
                })
            })
            .collect();
        Occupancy {
            cells,
            block_dims,
            blocks,
        }
    }
}

/// Fused TSDF and color fields over a dense voxel lattice.
#[derive(Clone, Debug)]
pub struct VoxelGrid<T> {
    spec: GridSpec<T>,
    params: FusionParams<T>,
    /// NaN marks unobserved voxels, which lets interpolation propagate "no
    /// information" without separate weight reads.
    tsdf: Vec<T>,
    weight: Vec<T>,
    color: Vec<Rgb>,
    /// Strictly positive cells and blocks, built on first use by the raycaster.
    occupancy: OnceLock<Occupancy>,
}

impl<T: Real> PartialEq for VoxelGrid<T> {
    /// Bitwise comparison of the stored fields.
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
            && self.params == other.params
            && self.color == other.color
            && self.weight == other.weight
            && self
                .tsdf
                .iter()
                .zip(&other.tsdf)
                .all(|(a, b)| a == b || (a.is_nan() && b.is_nan()))
    }
}

impl<T: Real> VoxelGrid<T> {
    pub fn spec(&self) -> &GridSpec<T> {
        &self.spec
    }

    pub fn params(&self) -> &FusionParams<T> {
        &self.params
    }

    #[inline]
    pub fn is_observed(&self, index: usize) -> bool {
        self.weight[index] > T::zero()
    }

    /// Fused value of an observed voxel.
    #[inline]
    pub fn tsdf(&self, index: usize) -> Option<T> {
        let v = self.tsdf[index];
        (!v.is_nan()).then_some(v)
    }

    #[inline]
    pub fn weight_sum(&self, index: usize) -> T {
        self.weight[index]
    }

    #[inline]
    pub fn color(&self, index: usize) -> Rgb {
        self.color[index]
    }

    pub fn observed_count(&self) -> usize {
        self.weight.iter().filter(|w| **w > T::zero()).count()
    }

    /// Builds a grid directly from per-voxel samples `(tsdf, weight_sum, color)`;
    /// weight 0 marks the voxel unobserved. Used for synthetic fields in tests.
    pub fn from_fn(
        spec: GridSpec<T>,
        params: FusionParams<T>,
        f: impl Fn(Vec3<T>) -> (T, T, Rgb),
    ) -> Result<Self> {
        spec.validate()?;
        let n = spec.voxel_count();
        let mut tsdf = Vec::with_capacity(n);
        let mut weight = Vec::with_capacity(n);
        let mut color = Vec::with_capacity(n);
        for k in 0..spec.dims[2] {
            for j in 0..spec.dims[1] {
                for i in 0..spec.dims[0] {
                    let (v, w, c) = f(spec.voxel_center(i, j, k));
                    if w > T::zero() {
                        tsdf.push(v.max(-T::one()).min(T::one()));
                        weight.push(w);
                    } else {
                        tsdf.push(T::nan());
                        weight.push(T::zero());
                    }
                    color.push(c);
                }
            }
        }
        Ok(VoxelGrid {
            spec,
            params,
            tsdf,
            weight,
            color,
            occupancy: OnceLock::new(),
        })
    }

    /// Trilinear interpolation of the fused field. `None` when the point lies
    /// outside the lattice of voxel centers or any of the 8 neighbors is unobserved.
    #[inline]
    pub fn field_at(&self, point: &Vec3<T>) -> Option<T> {
        let g = self.spec.to_voxel_coords(point);
        let mut base = [0usize; 3];
        let mut frac = [T::zero(); 3];
        for a in 0..3 {
            let last = T::of_usize(self.spec.dims[a] - 1);
            // absorb rounding of points computed exactly on the outermost centers
            let slack = T::lit(1e-6);
            let c = g.0[a];
            if !(c >= -slack && c <= last + slack) {
                return None;
            }
            let c = c.max(T::zero()).min(last);
            let i0 = c.floor().to_usize()?.min(self.spec.dims[a] - 2);
            base[a] = i0;
            frac[a] = c - T::of_usize(i0);
        }
        let [nx, ny, _] = self.spec.dims;
        let i000 = base[0] + nx * (base[1] + ny * base[2]);
        let sx = 1;
        let sy = nx;
        let sz = nx * ny;
        let t = &self.tsdf;
        let c000 = t[i000];
        let c100 = t[i000 + sx];
        let c010 = t[i000 + sy];
        let c110 = t[i000 + sx + sy];
        let c001 = t[i000 + sz];
        let c101 = t[i000 + sx + sz];
        let c011 = t[i000 + sy + sz];
        let c111 = t[i000 + sx + sy + sz];
        let [fx, fy, fz] = frac;
        let lerp = |a: T, b: T, f: T| a + (b - a) * f;
        let c00 = lerp(c000, c100, fx);
        let c10 = lerp(c010, c110, fx);
        let c01 = lerp(c001, c101, fx);
        let c11 = lerp(c011, c111, fx);
        let v = lerp(lerp(c00, c10, fy), lerp(c01, c11, fy), fz);
        (!v.is_nan()).then_some(v)
    }

    fn occupancy(&self) -> &Occupancy {
        self.occupancy.get_or_init(|| Occupancy::build(&self.spec, &self.tsdf))
    }

    /// Whether the interpolated field is strictly positive throughout the cell
    /// whose lowest corner is voxel `(i, j, k)`. Each index must be below `dims - 1`.
    #[inline]
    pub fn cell_is_positive(&self, i: usize, j: usize, k: usize) -> bool {
        self.occupancy().cells[self.spec.index(i, j, k)]
    }

    /// Number of [`SKIP_BLOCK`]-cell blocks along each axis.
    pub fn block_dims(&self) -> [usize; 3] {
        self.occupancy().block_dims
    }

    /// Whether every cell of block `b` is positive. Block `b` spans voxel
    /// coordinates `[SKIP_BLOCK * b, min(SKIP_BLOCK * (b + 1), dims - 1)]` per axis.
    #[inline]
    pub fn block_is_positive(&self, b: [usize; 3]) -> bool {
        let occ = self.occupancy();
        let [bx, by, _] = occ.block_dims;
        occ.blocks[b[0] + bx * (b[1] + by * b[2])]
    }

    /// Index of the voxel whose center is nearest to `point`.
    #[inline]
    pub fn nearest_voxel(&self, point: &Vec3<T>) -> Option<usize> {
        let g = self.spec.to_voxel_coords(point);
        let half = T::lit(0.5);
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let r = (g.0[a] + half).floor();
            if !(r >= T::zero()) {
                return None;
            }
            let r = r.to_usize()?;
            if r >= self.spec.dims[a] {
                return None;
            }
            idx[a] = r;
        }
        Some(self.spec.index(idx[0], idx[1], idx[2]))
    }

    /// Fused color of the nearest observed voxel.
    pub fn color_at(&self, point: &Vec3<T>) -> Option<Rgb> {
        let i = self.nearest_voxel(point)?;
        self.is_observed(i).then(|| self.color[i])
    }

    /// Writes the debug dump: one JSON header line followed by little-endian
    /// `f32` tsdf (0 for unobserved), `f32` weight_sum and `u8 x 3` colors, each
    /// array in x-fastest voxel order.
    pub fn write_dump<W: Write>(&self, mut out: W) -> Result<()> {
        let header = GridDumpHeader::from_grid(self);
        let mut line = serde_json::to_vec(&header)?;
        line.push(b'\n');
        let mut buf = Vec::with_capacity(line.len() + self.tsdf.len() * 11);
        buf.extend_from_slice(&line);
        for v in &self.tsdf {
            let v = if v.is_nan() { 0.0f32 } else { v.as_f64() as f32 };
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for w in &self.weight {
            buf.extend_from_slice(&(w.as_f64() as f32).to_le_bytes());
        }
        for c in &self.color {
            buf.extend_from_slice(c);
        }
        out.write_all(&buf).map_err(|e| Error::io("<grid dump>", e))
    }

    pub fn save_dump(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_dump(std::io::BufWriter::new(f))
    }
}

/// JSON header of a grid dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridDumpHeader {
    pub dims: [usize; 3],
    pub voxel_size: f64,
    pub origin: [f64; 3],
    pub delta_trunc: f64,
    pub eta: f64,
    pub weight_rule: WeightRule,
    pub order: String,
    pub arrays: Vec<String>,
}

impl GridDumpHeader {
    fn from_grid<T: Real>(g: &VoxelGrid<T>) -> Self {
        GridDumpHeader {
            dims: g.spec.dims,
            voxel_size: g.spec.voxel_size.as_f64(),
            origin: g.spec.origin.0.map(|c| c.as_f64()),
            delta_trunc: g.params.delta_trunc.as_f64(),
            eta: g.params.eta.as_f64(),
            weight_rule: g.params.weight_rule,
            order: "x-fastest".into(),
            arrays: vec!["tsdf:f32le".into(), "weight_sum:f32le".into(), "color:u8x3".into()],
        }
    }
}

/// Parsed grid dump.
#[derive(Clone, Debug)]
pub struct GridDump {
    pub header: GridDumpHeader,
    pub tsdf: Vec<f32>,
    pub weight_sum: Vec<f32>,
    pub color: Vec<Rgb>,
}

impl GridDump {
    pub fn read<R: BufRead>(mut input: R) -> Result<Self> {
        let mut line = String::new();
        input
            .read_line(&mut line)
            .map_err(|e| Error::io("<grid dump>", e))?;
        let header: GridDumpHeader = serde_json::from_str(line.trim_end())?;
        let n: usize = header.dims.iter().product();
        let mut raw = Vec::new();
        input
            .read_to_end(&mut raw)
            .map_err(|e| Error::io("<grid dump>", e))?;
        if raw.len() != n * 11 {
            return Err(Error::format(
                "<grid dump>",
                format!("expected {} payload bytes, found {}", n * 11, raw.len()),
            ));
        }
        let f32s = |bytes: &[u8]| -> Vec<f32> {
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect()
        };
        Ok(GridDump {
            tsdf: f32s(&raw[..4 * n]),
            weight_sum: f32s(&raw[4 * n..8 * n]),
            color: raw[8 * n..].chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
            header,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(std::io::BufReader::new(f))
    }
}

/// Fuses the frames into a fresh grid.
///
/// Each voxel is computed independently, so the result does not depend on how the
/// work is partitioned across threads. For two frames the result is also
/// invariant to their order.
pub fn fuse<T: Real>(
    frames: &[RgbdFrame<T>],
    spec: &GridSpec<T>,
    params: &FusionParams<T>,
) -> Result<VoxelGrid<T>> {
    spec.validate()?;
    params.validate()?;
    if frames.is_empty() {
        return Err(Error::Config("fusion needs at least one frame".into()));
    }
    for f in frames {
        f.camera.validate()?;
    }
    let n = spec.voxel_count();
    let mut tsdf = vec![T::nan(); n];
    let mut weight = vec![T::zero(); n];
    let mut color = vec![[0u8; 3]; n];
    let nx = spec.dims[0];
    let ny = spec.dims[1];

    // Camera-frame coordinates are affine in the voxel x index along a row.
    let steps: Vec<Vec3<T>> = frames
        .iter()
        .map(|f| {
            let r = &f.camera.pose.rotation;
            Vec3::new(r.0[0][0], r.0[1][0], r.0[2][0]) * spec.voxel_size
        })
        .collect();

    tsdf.par_chunks_mut(nx)
        .zip(weight.par_chunks_mut(nx))
        .zip(color.par_chunks_mut(nx))
        .enumerate()
        .for_each(|(row, ((tsdf_row, weight_row), color_row))| {
            let j = row % ny;
            let k = row / ny;
            let bases: Vec<Vec3<T>> = frames
                .iter()
                .map(|f| f.camera.pose.transform(&spec.voxel_center(0, j, k)))
                .collect();
            for i in 0..nx {
                let fi = T::of_usize(i);
                let mut sum_v = T::zero();
                let mut sum_w = 0u32;
                let mut sum_c = [0u32; 3];
                for (c, frame) in frames.iter().enumerate() {
                    let p_cam = bases[c] + steps[c] * fi;
                    let Some(proj) = frame.camera.project_camera_point(&p_cam) else {
                        continue;
                    };
                    let Some((px, py)) = frame.camera.intrinsics.pixel_index(proj.pixel[0], proj.pixel[1]) else {
                        continue;
                    };
                    let Some(measured) = frame.depth.at(px, py) else {
                        continue;
                    };
                    let range = p_cam.norm();
                    let s = range * (measured / proj.depth) - range;
                    if !weight_for(s, params) {
                        continue;
                    }
                    sum_v = sum_v + truncate(s, params.delta_trunc);
                    sum_w += 1;
                    let rgb = frame.color.get(px, py);
                    for ch in 0..3 {
                        sum_c[ch] += rgb[ch] as u32;
                    }
                }
                if sum_w > 0 {
                    let w = T::of_usize(sum_w as usize);
                    tsdf_row[i] = (sum_v / w).max(-T::one()).min(T::one());
                    weight_row[i] = w;
                    // integer mean rounded half-up
                    color_row[i] = sum_c.map(|s| ((2 * s + sum_w) / (2 * sum_w)) as u8);
                }
            }
        });

    Ok(VoxelGrid {
        spec: *spec,
        params: *params,
        tsdf,
        weight,
        color,
        occupancy: OnceLock::new(),
    })
}
