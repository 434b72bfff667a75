//! Zero-crossing raycasting through a fused grid.
//!
//! Rays are marched in fixed steps over the interpolated field. A surface is a
//! transition from a positive sample to a negative one within a run of observed
//! samples (zeros may sit in between); the bracket is then refined by bisection.
//! An unobserved sample, on the march or as a bisection midpoint, breaks the run.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Camera, Ray, Vec3};
use crate::image::{ensure_dims, ColorImage, DepthImage, GrayImage, Mask, Rgb};
use crate::scalar::Real;
use crate::tsdf::{VoxelGrid, SKIP_BLOCK};

/// Color written where a ray finds no surface. Always paired with depth 0.
pub const MISS_COLOR: Rgb = [0, 0, 0];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RaycastParams<T> {
    /// March step in meters; `None` uses the grid's voxel size.
    pub coarse_step: Option<T>,
    /// Ray parameter interval, intersected with the grid bounds.
    pub t_min: T,
    pub t_max: T,
    pub refine_iters: u32,
    /// Sub-steps per coarse step taken where the field is not provably positive.
    pub surface_substeps: u32,
    /// Offset past the first-run surface where the second run starts.
    pub second_run_margin: T,
}

impl<T: Real> Default for RaycastParams<T> {
    fn default() -> Self {
        RaycastParams {
            coarse_step: None,
            t_min: T::zero(),
            t_max: T::infinity(),
            refine_iters: 24,
            surface_substeps: 16,
            second_run_margin: T::lit(0.04),
        }
    }
}

impl<T: Real> RaycastParams<T> {
    pub fn validate(&self) -> Result<()> {
        if let Some(step) = self.coarse_step {
            if !(step > T::zero()) || !step.is_finite() {
                return Err(Error::Config(format!("coarse step must be positive, got {step}")));
            }
        }
        if self.surface_substeps < 1 {
            return Err(Error::Config("surface_substeps must be at least 1".into()));
        }
        if self.refine_iters < 1 {
            return Err(Error::Config("refine_iters must be at least 1".into()));
        }
        if !(self.second_run_margin > T::zero()) {
            return Err(Error::Config(format!(
                "second-run margin must be positive, got {}",
                self.second_run_margin
            )));
        }
        if !(self.t_max > self.t_min) || self.t_min.is_nan() {
            return Err(Error::Config("t_max must exceed t_min".into()));
        }
        Ok(())
    }

    pub fn step_for(&self, grid: &VoxelGrid<T>) -> T {
        self.coarse_step.unwrap_or(grid.spec().voxel_size)
    }
}

/// Result of bisecting a sign-change bracket.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Refinement<T> {
    /// `f(lo) > 0`, `f(hi) <= 0`, `hi - lo <= initial width / 2^iters`.
    Converged { lo: T, hi: T },
    /// A midpoint fell on unobserved space; `[lo, hi]` is the last bracket whose
    /// endpoints were both observed.
    Stalled { lo: T, hi: T },
}

impl<T: Real> Refinement<T> {
    pub fn bracket(&self) -> (T, T) {
        match *self {
            Refinement::Converged { lo, hi } | Refinement::Stalled { lo, hi } => (lo, hi),
        }
    }
}

/// Bisects `[lo, hi]` where `f(lo) > 0` and `f(hi) <= 0`. Every midpoint is
/// reported to `visit` (for inspection in tests).
pub fn refine_bracket<T: Real>(
    mut f: impl FnMut(T) -> Option<T>,
    mut lo: T,
    mut hi: T,
    iters: u32,
    mut visit: impl FnMut(T),
) -> Refinement<T> {
    let half = T::lit(0.5);
    for _ in 0..iters {
        let mid = lo + (hi - lo) * half;
        visit(mid);
        match f(mid) {
            None => return Refinement::Stalled { lo, hi },
            Some(v) if v > T::zero() => lo = mid,
            Some(_) => hi = mid,
        }
    }
    Refinement::Converged { lo, hi }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Crossing<T> {
    /// Ray parameter (distance from the ray origin).
    pub t: T,
    pub point: Vec3<T>,
    pub color: Rgb,
}

/// Parameter interval `[enter, exit]` over which `ray` stays inside the lattice of
/// voxel centers, if any.
pub fn clip_to_grid<T: Real>(grid: &VoxelGrid<T>, ray: &Ray<T>) -> Option<(T, T)> {
    let spec = grid.spec();
    let half = spec.voxel_size * T::lit(0.5);
    let lo = spec.min_corner();
    let hi = spec.max_corner();
    let mut t0 = T::neg_infinity();
    let mut t1 = T::infinity();
    for a in 0..3 {
        let (bmin, bmax) = (lo.0[a] + half, hi.0[a] - half);
        let o = ray.origin.0[a];
        let d = ray.direction.0[a];
        if d == T::zero() {
            if o < bmin || o > bmax {
                return None;
            }
            continue;
        }
        let inv = T::one() / d;
        let (mut ta, mut tb) = ((bmin - o) * inv, (bmax - o) * inv);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
    }
    (t0 <= t1).then_some((t0, t1))
}

/// True when every cell overlapping the bounding box of two points (in voxel
/// coordinates) is strictly positive, which bounds the field on the segment.
#[inline]
fn segment_is_positive<T: Real>(grid: &VoxelGrid<T>, a: &Vec3<T>, b: &Vec3<T>) -> bool {
    let dims = grid.spec().dims;
    let mut range = [(0usize, 0usize); 3];
    for axis in 0..3 {
        let last_cell = T::of_usize(dims[axis] - 2);
        let lo = a.0[axis].min(b.0[axis]).floor().max(T::zero()).min(last_cell);
        let hi = a.0[axis].max(b.0[axis]).floor().max(T::zero()).min(last_cell);
        match (lo.to_usize(), hi.to_usize()) {
            (Some(l), Some(h)) => range[axis] = (l, h),
            _ => return false,
        }
    }
    for k in range[2].0..=range[2].1 {
        for j in range[1].0..=range[1].1 {
            for i in range[0].0..=range[0].1 {
                if !grid.cell_is_positive(i, j, k) {
                    return false;
                }
            }
        }
    }
    true
}

fn block_of<T: Real>(p: &Vec3<T>) -> Option<[usize; 3]> {
    let b = T::of_usize(SKIP_BLOCK);
    let mut out = [0usize; 3];
    for a in 0..3 {
        out[a] = (p.0[a].max(T::zero()) / b).floor().to_usize()?;
    }
    Some(out)
}

fn same_block<T: Real>(a: &Vec3<T>, b: &Vec3<T>) -> bool {
    matches!((block_of(a), block_of(b)), (Some(x), Some(y)) if x == y)
}

/// Number of whole coarse segments of length `seg_len` that fit inside the
/// strictly positive block containing `start` (voxel coordinates), if any.
fn block_skip<T: Real>(grid: &VoxelGrid<T>, start: &Vec3<T>, dir_vox: &Vec3<T>, seg_len: T) -> Option<usize> {
    let b = block_of(start)?;
    let bdims = grid.block_dims();
    if (0..3).any(|a| b[a] >= bdims[a]) || !grid.block_is_positive(b) {
        return None;
    }
    let dims = grid.spec().dims;
    let mut t_exit = T::infinity();
    for a in 0..3 {
        let d = dir_vox.0[a];
        if d == T::zero() {
            continue;
        }
        let lo = T::of_usize(b[a] * SKIP_BLOCK);
        let hi = T::of_usize(((b[a] + 1) * SKIP_BLOCK).min(dims[a] - 1));
        let bound = if d > T::zero() { hi } else { lo };
        t_exit = t_exit.min((bound - start.0[a]) / d);
    }
    let m = (t_exit / seg_len).floor().to_usize()?;
    (m >= 2).then(|| m - 1)
}

/// Marches `ray` from `t_start` and returns the first positive-to-negative
/// zero crossing.
///
/// Samples sit on the lattice `t_begin + k * coarse_step / surface_substeps`.
/// Whole coarse steps are skipped when the cells around them are strictly
/// positive; elsewhere every sub-step is sampled, and the first bracket found is
/// bisected.
pub fn cast_ray<T: Real>(
    grid: &VoxelGrid<T>,
    ray: &Ray<T>,
    t_start: T,
    params: &RaycastParams<T>,
) -> Option<Crossing<T>> {
    let (enter, exit) = clip_to_grid(grid, ray)?;
    let t_begin = enter.max(t_start).max(params.t_min);
    let t_end = exit.min(params.t_max);
    if !(t_begin <= t_end) {
        return None;
    }
    let sub = params.surface_substeps.max(1) as usize;
    let fine = params.step_for(grid) / T::of_usize(sub);
    let spec = grid.spec();
    let field = |t: T| grid.field_at(&ray.at(t));
    let sample_t = |k: usize| t_begin + fine * T::of_usize(k);

    let mut last_positive: Option<T> = None;
    // Applies the sample rule at `t`; returns a crossing when one is found.
    let visit = |t: T, last_positive: &mut Option<T>| -> Option<Crossing<T>> {
        match field(t) {
            None => *last_positive = None,
            Some(v) if v > T::zero() => *last_positive = Some(t),
            Some(v) if v < T::zero() => {
                if let Some(ta) = *last_positive {
                    let (lo, hi) = refine_bracket(field, ta, t, params.refine_iters, |_| {}).bracket();
                    let tc = lo + (hi - lo) * T::lit(0.5);
                    let point = ray.at(tc);
                    let color = grid
                        .color_at(&point)
                        .or_else(|| grid.color_at(&ray.at(hi)))
                        .or_else(|| grid.color_at(&ray.at(lo)))
                        .unwrap_or(MISS_COLOR);
                    return Some(Crossing { t: tc, point, color });
                }
            }
            // exact zero: neither opens nor breaks a run
            Some(_) => {}
        }
        None
    };

    if let Some(hit) = visit(t_begin, &mut last_positive) {
        return Some(hit);
    }
    let mut k0 = 0usize;
    let mut seg_start = spec.to_voxel_coords(&ray.at(t_begin));
    let seg_len = fine * T::of_usize(sub);
    let dir_vox = ray.direction * (T::one() / spec.voxel_size);
    loop {
        if let Some(m) = block_skip(grid, &seg_start, &dir_vox, seg_len) {
            let k1 = k0 + m * sub;
            let t1 = sample_t(k1);
            let seg_end = spec.to_voxel_coords(&ray.at(t1));
            if t1 <= t_end && same_block(&seg_start, &seg_end) {
                last_positive = Some(t1);
                k0 = k1;
                seg_start = seg_end;
                continue;
            }
        }
        let k1 = k0 + sub;
        let t1 = sample_t(k1);
        let seg_end = spec.to_voxel_coords(&ray.at(t1));
        if t1 <= t_end && segment_is_positive(grid, &seg_start, &seg_end) {
            last_positive = Some(t1);
        } else {
            for k in k0 + 1..=k1 {
                let t = sample_t(k);
                if t > t_end {
                    return None;
                }
                if let Some(hit) = visit(t, &mut last_positive) {
                    return Some(hit);
                }
            }
        }
        k0 = k1;
        seg_start = seg_end;
    }
}

/// First-run raycast from `camera`: synthesized color and depth (distance from the
/// optical center to the surface; 0 on misses).
pub fn cast_primary<T: Real>(
    grid: &VoxelGrid<T>,
    camera: &Camera<T>,
    params: &RaycastParams<T>,
) -> Result<(ColorImage, DepthImage<T>)> {
    params.validate()?;
    camera.validate()?;
    let (w, h) = (camera.width(), camera.height());
    let mut color = vec![MISS_COLOR; w * h];
    let mut depth = vec![T::zero(); w * h];
    color
        .par_chunks_mut(w)
        .zip(depth.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, (crow, drow))| {
            for x in 0..w {
                let ray = camera.ray_unchecked([T::of_usize(x), T::of_usize(y)]);
                if let Some(hit) = cast_ray(grid, &ray, T::zero(), params) {
                    crow[x] = hit.color;
                    drow[x] = hit.t;
                }
            }
        });
    Ok((ColorImage::new(w, h, color)?, DepthImage::new(w, h, depth)?))
}

/// Second-run raycast on foreground pixels, starting `second_run_margin` past
/// the first-run surface. Returns the recovered colors and the pixels where a
/// further surface was found.
pub fn cast_secondary<T: Real>(
    grid: &VoxelGrid<T>,
    camera: &Camera<T>,
    fg_depth: &DepthImage<T>,
    mask: &Mask,
    params: &RaycastParams<T>,
) -> Result<(ColorImage, Mask)> {
    params.validate()?;
    let (w, h) = (camera.width(), camera.height());
    ensure_dims("foreground depth", (w, h), fg_depth.dims())?;
    ensure_dims("mask", (w, h), mask.dims())?;
    let mut color = vec![MISS_COLOR; w * h];
    let mut valid = vec![false; w * h];
    color
        .par_chunks_mut(w)
        .zip(valid.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, (crow, vrow))| {
            for x in 0..w {
                if !mask.get(x, y) {
                    continue;
                }
                let Some(d) = fg_depth.at(x, y) else {
                    continue;
                };
                let ray = camera.ray_unchecked([T::of_usize(x), T::of_usize(y)]);
                if let Some(hit) = cast_ray(grid, &ray, d + params.second_run_margin, params) {
                    crow[x] = hit.color;
                    vrow[x] = true;
                }
            }
        });
    Ok((ColorImage::new(w, h, color)?, Mask::new(w, h, valid)?))
}

/// Merges first-run colors outside the mask with recovered colors inside it.
///
/// Foreground pixels without a recovered surface are filled from the nearest
/// valid pixel on the same row (left wins ties) and flagged invalid.
pub fn compose_background(
    fg_color: &ColorImage,
    mask: &Mask,
    recovered: &ColorImage,
    recovered_valid: &Mask,
) -> Result<(ColorImage, Mask)> {
    let dims = fg_color.dims();
    ensure_dims("mask", dims, mask.dims())?;
    ensure_dims("recovered color", dims, recovered.dims())?;
    ensure_dims("recovered mask", dims, recovered_valid.dims())?;
    let (w, h) = dims;
    let mut out = fg_color.clone();
    let mut valid = Mask::empty(w, h);
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                valid.set(x, y, true);
            } else if recovered_valid.get(x, y) {
                out.set(x, y, recovered.get(x, y));
                valid.set(x, y, true);
            }
        }
    }
    let snapshot = out.clone();
    for y in 0..h {
        let row_valid: Vec<usize> = (0..w).filter(|&x| valid.get(x, y)).collect();
        for x in 0..w {
            if valid.get(x, y) {
                continue;
            }
            let fill = nearest_in_row(&row_valid, x)
                .map(|sx| snapshot.get(sx, y))
                .unwrap_or(MISS_COLOR);
            out.set(x, y, fill);
        }
    }
    Ok((out, valid))
}

fn nearest_in_row(sorted: &[usize], x: usize) -> Option<usize> {
    let pos = sorted.partition_point(|&c| c < x);
    let right = sorted.get(pos).copied();
    let left = pos.checked_sub(1).map(|p| sorted[p]);
    match (left, right) {
        (Some(l), Some(r)) => Some(if x - l <= r - x { l } else { r }),
        (l, r) => l.or(r),
    }
}

/// Every image the compositor consumes for one frame.
#[derive(Clone, Debug)]
pub struct LayerSet<T> {
    pub fg_color: ColorImage,
    pub fg_depth: DepthImage<T>,
    pub mask: Mask,
    pub bg_color: ColorImage,
    pub bg_valid: Mask,
    pub xray: GrayImage,
}

impl<T: Real> LayerSet<T> {
    pub fn validate(&self) -> Result<()> {
        let dims = self.fg_color.dims();
        ensure_dims("foreground depth", dims, self.fg_depth.dims())?;
        ensure_dims("mask", dims, self.mask.dims())?;
        ensure_dims("background color", dims, self.bg_color.dims())?;
        ensure_dims("background validity", dims, self.bg_valid.dims())?;
        ensure_dims("x-ray", dims, self.xray.dims())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CameraIntrinsics, CameraPose};
    use crate::tsdf::{FusionParams, GridSpec};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    const VOXEL: f64 = 0.004;

    fn spec() -> GridSpec<f64> {
        GridSpec::cube(96, VOXEL, Vec3::new(0.0, 0.0, 0.7)).unwrap()
    }

    /// Grid holding the truncated signed distance of an analytic surface measured
    /// along +z, the viewing direction of `axis_camera`.
    fn grid_from_sdf(sdf: impl Fn(Vec3<f64>) -> f64, rgb: impl Fn(Vec3<f64>) -> Rgb) -> VoxelGrid<f64> {
        VoxelGrid::from_fn(spec(), FusionParams::default(), |p| {
            let s = sdf(p);
            // observed band of three voxels behind the surface
            if s < -3.0 * VOXEL {
                (0.0, 0.0, [0; 3])
            } else {
                ((s / VOXEL).clamp(-1.0, 1.0), 1.0, rgb(p))
            }
        })
        .unwrap()
    }

    fn axis_camera() -> Camera<f64> {
        Camera::new(
            CameraIntrinsics::new(300.0, 300.0, 31.5, 31.5, 64, 64).unwrap(),
            CameraPose::identity(),
        )
        .unwrap()
    }

    fn center_ray() -> Ray<f64> {
        Ray {
            origin: Vec3::zero(),
            direction: Vec3::new(0.0, 0.0, 1.0),
        }
    }

    #[test]
    fn plane_depth_matches_ray_plane_intersection() {
        let g = grid_from_sdf(|p| 0.8 - p.z(), |_| [10, 20, 30]);
        let hit = cast_ray(&g, &center_ray(), 0.0, &RaycastParams::default()).unwrap();
        assert_abs_diff_eq!(hit.t, 0.8, epsilon = VOXEL / 2.0 + 1e-4);
        assert_eq!(hit.color, [10, 20, 30]);

        let (color, depth) = cast_primary(&g, &axis_camera(), &RaycastParams::default()).unwrap();
        // pixel (31, 31) is half a pixel off axis; its optical-axis depth is 0.8
        let ray = axis_camera().ray_through_pixel([31.0, 31.0]).unwrap();
        let expected = 0.8 / ray.direction.z();
        assert_abs_diff_eq!(depth.get(31, 31), expected, epsilon = VOXEL / 2.0 + 1e-4);
        assert_eq!(color.get(31, 31), [10, 20, 30]);
    }

    #[test]
    fn sphere_front_depth() {
        let c = Vec3::new(0.0, 0.0, 0.6);
        let g = grid_from_sdf(move |p| (p - c).norm() - 0.05, |_| [200, 0, 0]);
        let hit = cast_ray(&g, &center_ray(), 0.0, &RaycastParams::default()).unwrap();
        assert_abs_diff_eq!(hit.t, 0.55, epsilon = VOXEL / 2.0 + 1e-4);
    }

    #[test]
    fn all_positive_ray_misses() {
        let g = grid_from_sdf(|_| 1.0, |_| [1, 1, 1]);
        assert!(cast_ray(&g, &center_ray(), 0.0, &RaycastParams::default()).is_none());
        let (color, depth) = cast_primary(&g, &axis_camera(), &RaycastParams::default()).unwrap();
        assert!(depth.data().iter().all(|&d| d == 0.0));
        assert!(color.data().iter().all(|&c| c == MISS_COLOR));
    }

    #[test]
    fn grid_behind_camera_gives_all_miss() {
        let g = grid_from_sdf(|p| 0.8 - p.z(), |_| [10, 20, 30]);
        let pose = CameraPose::looking_at(
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(0.0, 0.0, -1.0),
            Vec3::new(0.0, 1.0, 0.0),
        )
        .unwrap();
        let cam = Camera::new(axis_camera().intrinsics, pose).unwrap();
        let (_, depth) = cast_primary(&g, &cam, &RaycastParams::default()).unwrap();
        assert!(depth.data().iter().all(|&d| d == 0.0));
    }

    #[test]
    fn negative_to_positive_is_not_a_surface() {
        // back face of a slab seen from inside: only an exit transition
        let g = grid_from_sdf(|p| p.z() - 0.7, |_| [5, 5, 5]);
        assert!(cast_ray(&g, &center_ray(), 0.0, &RaycastParams::default()).is_none());
    }

    #[test]
    fn unobserved_gap_breaks_the_bracket() {
        // positive, then a 2 cm unobserved band, then negative: no surface
        let g = VoxelGrid::from_fn(spec(), FusionParams::default(), |p| {
            if p.z() < 0.70 {
                (1.0, 1.0, [0; 3])
            } else if p.z() < 0.72 {
                (0.0, 0.0, [0; 3])
            } else {
                (-1.0, 1.0, [0; 3])
            }
        })
        .unwrap();
        assert!(cast_ray(&g, &center_ray(), 0.0, &RaycastParams::default()).is_none());
    }

    #[test]
    fn coarse_step_larger_than_voxel_still_finds_plane() {
        let g = grid_from_sdf(|p| 0.8 - p.z(), |_| [0; 3]);
        let params = RaycastParams {
            coarse_step: Some(0.003),
            ..RaycastParams::default()
        };
        let hit = cast_ray(&g, &center_ray(), 0.0, &params).unwrap();
        assert_abs_diff_eq!(hit.t, 0.8, epsilon = VOXEL / 2.0 + 1e-4);
    }

    fn two_layer_grid() -> VoxelGrid<f64> {
        // occluder slab 0.60..0.62 over a background plane at 0.80, as if the
        // side cameras saw the plane underneath
        grid_from_sdf(
            |p| {
                let occ = 0.60 - p.z();
                let plane = 0.80 - p.z();
                if p.z() < 0.63 {
                    occ
                } else if p.z() < 0.70 {
                    1.0
                } else {
                    plane
                }
            },
            |p| if p.z() < 0.7 { [250, 0, 0] } else { [0, 0, 250] },
        )
    }

    #[test]
    fn second_run_finds_background_behind_foreground() {
        let g = two_layer_grid();
        let cam = axis_camera();
        let params = RaycastParams::default();
        let (fg_color, fg_depth) = cast_primary(&g, &cam, &params).unwrap();
        assert_eq!(fg_color.get(31, 31), [250, 0, 0]);
        let mask = Mask::from_fn(64, 64, |x, _| x < 32);
        let (rec, valid) = cast_secondary(&g, &cam, &fg_depth, &mask, &params).unwrap();
        for y in 0..64 {
            for x in 0..64 {
                if x < 32 {
                    assert!(valid.get(x, y));
                    assert_eq!(rec.get(x, y), [0, 0, 250]);
                } else {
                    // mask = 0: never traced
                    assert!(!valid.get(x, y));
                    assert_eq!(rec.get(x, y), MISS_COLOR);
                }
            }
        }
        // recovered crossings lie beyond fg depth + margin
        let ray = cam.ray_through_pixel([10.0, 20.0]).unwrap();
        let t0 = fg_depth.get(10, 20) + params.second_run_margin;
        let hit = cast_ray(&g, &ray, t0, &params).unwrap();
        assert!(hit.t > t0);
    }

    #[test]
    fn second_run_without_further_surface_is_invalid() {
        let g = grid_from_sdf(|p| 0.6 - p.z(), |_| [9, 9, 9]);
        let cam = axis_camera();
        let params = RaycastParams::default();
        let (_, fg_depth) = cast_primary(&g, &cam, &params).unwrap();
        let mask = Mask::from_fn(64, 64, |_, _| true);
        let (_, valid) = cast_secondary(&g, &cam, &fg_depth, &mask, &params).unwrap();
        assert_eq!(valid.count(), 0);
    }

    #[test]
    fn compose_background_contract() {
        let fg = ColorImage::new(4, 1, vec![[1, 1, 1], [2, 2, 2], [3, 3, 3], [4, 4, 4]]).unwrap();
        let rec = ColorImage::filled(4, 1, [9, 9, 9]);
        let none = Mask::empty(4, 1);
        let (out, valid) = compose_background(&fg, &none, &rec, &none).unwrap();
        assert_eq!(out, fg);
        assert_eq!(valid.count(), 4);

        let mask = Mask::from_fn(4, 1, |x, _| x >= 1);
        let rec_valid = Mask::from_fn(4, 1, |x, _| x == 1);
        let (out, valid) = compose_background(&fg, &mask, &rec, &rec_valid).unwrap();
        assert_eq!(out.get(0, 0), [1, 1, 1]);
        assert_eq!(out.get(1, 0), [9, 9, 9]);
        // x = 2 and 3 unrecovered: filled from the nearest valid pixel (x = 1)
        assert_eq!(out.get(2, 0), [9, 9, 9]);
        assert_eq!(out.get(3, 0), [9, 9, 9]);
        assert_eq!(valid.data(), &[true, true, false, false]);
    }

    #[test]
    fn hole_fill_prefers_nearest_then_left() {
        assert_eq!(nearest_in_row(&[0, 4], 2), Some(0));
        assert_eq!(nearest_in_row(&[0, 4], 3), Some(4));
        assert_eq!(nearest_in_row(&[5], 1), Some(5));
        assert_eq!(nearest_in_row(&[], 1), None);
        let fg = ColorImage::filled(3, 1, [7, 7, 7]);
        let all = Mask::from_fn(3, 1, |_, _| true);
        let (out, valid) = compose_background(&fg, &all, &fg, &Mask::empty(3, 1)).unwrap();
        assert_eq!(valid.count(), 0);
        assert!(out.data().iter().all(|&c| c == MISS_COLOR));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let fg = ColorImage::filled(3, 1, [7, 7, 7]);
        assert!(matches!(
            compose_background(&fg, &Mask::empty(2, 1), &fg, &Mask::empty(3, 1)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn params_validation() {
        let bad = RaycastParams {
            refine_iters: 0,
            ..RaycastParams::<f64>::default()
        };
        assert!(bad.validate().is_err());
        let bad = RaycastParams {
            coarse_step: Some(0.0),
            ..RaycastParams::<f64>::default()
        };
        assert!(bad.validate().is_err());
        let bad = RaycastParams {
            second_run_margin: 0.0,
            ..RaycastParams::<f64>::default()
        };
        assert!(bad.validate().is_err());
    }

    /// Exhaustive fine march with linear interpolation inside the first
    /// sign-change interval.
    fn fine_march(grid: &VoxelGrid<f64>, ray: &Ray<f64>, step: f64) -> Option<f64> {
        let (enter, exit) = clip_to_grid(grid, ray)?;
        let mut last: Option<(f64, f64)> = None;
        let mut k = 0usize;
        loop {
            let t = enter + step * k as f64;
            if t > exit {
                return None;
            }
            k += 1;
            match grid.field_at(&ray.at(t)) {
                None => last = None,
                Some(v) if v > 0.0 => last = Some((t, v)),
                Some(v) if v < 0.0 => {
                    if let Some((ta, va)) = last {
                        return Some(ta + (t - ta) * va / (va - v));
                    }
                }
                Some(_) => {}
            }
        }
    }

    #[test]
    fn binary_search_agrees_with_fine_march_on_sphere_scene() {
        let c = Vec3::new(0.01, -0.02, 0.62);
        let g = grid_from_sdf(
            move |p| ((p - c).norm() - 0.05).min(0.8 - p.z()),
            |_| [1, 2, 3],
        );
        let cam = axis_camera();
        let params = RaycastParams::default();
        for y in 0..64 {
            for x in 0..64 {
                let ray = cam.ray_through_pixel([x as f64, y as f64]).unwrap();
                let fast = cast_ray(&g, &ray, 0.0, &params).map(|h| h.t);
                let slow = fine_march(&g, &ray, VOXEL / 16.0);
                match (fast, slow) {
                    (Some(a), Some(b)) => assert!((a - b).abs() <= VOXEL / 8.0, "{x},{y}: {a} vs {b}"),
                    (None, None) => {}
                    other => panic!("hit/miss disagreement at {x},{y}: {other:?}"),
                }
            }
        }
    }

    proptest! {
        #[test]
        fn bisection_stays_in_bracket(root in 0.01f64..0.99, width in 1e-3f64..0.1, iters in 1u32..40) {
            let lo0 = 0.0;
            let hi0 = width;
            let r = root * width;
            let mut inside = true;
            let out = refine_bracket(|t| Some(r - t), lo0, hi0, iters, |m| inside &= m > lo0 && m < hi0);
            prop_assert!(inside);
            match out {
                Refinement::Converged { lo, hi } => {
                    prop_assert!(lo >= lo0 && hi <= hi0);
                    prop_assert!(hi - lo <= width / 2f64.powi(iters as i32) + 1e-15);
                    prop_assert!(lo <= r && r <= hi);
                }
                Refinement::Stalled { .. } => prop_assert!(false),
            }
        }
    }

    #[test]
    fn bisection_stalls_on_unobserved_midpoint() {
        let out = refine_bracket(|t: f64| if t > 0.4 && t < 0.6 { None } else { Some(0.7 - t) }, 0.0, 1.0, 10, |_| {});
        assert_eq!(out, Refinement::Stalled { lo: 0.0, hi: 1.0 });
    }
}
