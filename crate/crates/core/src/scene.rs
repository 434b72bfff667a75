//! Analytic test scenes: a textured background plane with occluding primitives,
//! rendered into ideal or noisy RGBD frames together with their ground truth.
//!
//! World units are meters. The plane is horizontal (`z = height`) and cameras look
//! down on it from above.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Camera, CameraIntrinsics, CameraPose, Mat3, Ray, Vec3};
use crate::image::{ColorImage, DepthImage, GrayImage, Mask, Rgb, RgbdFrame};
use crate::scalar::Real;

type V = Vec3<f64>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Shape {
    Sphere { center: [f64; 3], radius: f64 },
    /// Segment `a`-`b` swept by a ball of `radius`.
    Capsule { a: [f64; 3], b: [f64; 3], radius: f64 },
    /// Axis-aligned in the occluder's local frame.
    Box { center: [f64; 3], half_extents: [f64; 3] },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub color: Rgb,
}

/// Local-to-world rigid placement `x_world = R x_local + t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    /// Row-major rotation.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

impl Placement {
    pub fn at(translation: [f64; 3]) -> Self {
        Placement {
            rotation: Mat3::<f64>::identity().to_row_major(),
            translation,
        }
    }

    /// Rotation about world `z` by `yaw`, then tilt about the local `x` axis.
    pub fn new(translation: [f64; 3], yaw: f64, tilt: f64) -> Self {
        let r = Mat3::rotation(V::new(0.0, 0.0, 1.0), yaw).mul_mat(&Mat3::rotation(V::new(1.0, 0.0, 0.0), tilt));
        Placement {
            rotation: r.to_row_major(),
            translation,
        }
    }

    fn matrix(&self) -> Mat3<f64> {
        Mat3::from_row_major(self.rotation)
    }

    fn to_world(&self, p: &V) -> V {
        self.matrix().mul_vec(p) + Vec3(self.translation)
    }

    fn ray_to_local(&self, ray: &Ray<f64>) -> Ray<f64> {
        let rt = self.matrix().transpose();
        Ray {
            origin: rt.mul_vec(&(ray.origin - Vec3(self.translation))),
            direction: rt.mul_vec(&ray.direction),
        }
    }
}

/// A rigid occluder (hand, fist, instrument) with one placement per frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Occluder {
    pub name: String,
    pub parts: Vec<Primitive>,
    pub trajectory: Vec<Placement>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Marking {
    Cross { center: [f64; 2], arm: f64, width: f64, color: Rgb },
    Line { from: [f64; 2], to: [f64; 2], width: f64, color: Rgb },
}

impl Marking {
    pub fn color(&self) -> Rgb {
        match self {
            Marking::Cross { color, .. } | Marking::Line { color, .. } => *color,
        }
    }

    /// Distance from `(x, y)` to the marking outline, positive inside.
    pub fn inset(&self, x: f64, y: f64) -> f64 {
        match *self {
            Marking::Cross { center, arm, width, .. } => {
                let (dx, dy) = ((x - center[0]).abs(), (y - center[1]).abs());
                let horizontal = (arm - dx).min(width / 2.0 - dy);
                let vertical = (width / 2.0 - dx).min(arm - dy);
                horizontal.max(vertical)
            }
            Marking::Line { from, to, width, .. } => {
                let (vx, vy) = (to[0] - from[0], to[1] - from[1]);
                let len2 = vx * vx + vy * vy;
                let s = if len2 > 0.0 {
                    (((x - from[0]) * vx + (y - from[1]) * vy) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let (px, py) = (from[0] + s * vx - x, from[1] + s * vy - y);
                width / 2.0 - (px * px + py * py).sqrt()
            }
        }
    }
}

/// Smooth two-tone pattern plus sharp markings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneTexture {
    pub base: Rgb,
    /// Per-channel amplitude of the sinusoidal modulation.
    pub amplitude: [f64; 3],
    /// Period of the modulation in meters.
    pub period: f64,
    pub markings: Vec<Marking>,
}

impl PlaneTexture {
    pub fn color_at(&self, x: f64, y: f64) -> Rgb {
        // later markings paint over earlier ones
        if let Some(m) = self.markings.iter().rev().find(|m| m.inset(x, y) >= 0.0) {
            return m.color();
        }
        let k = std::f64::consts::TAU / self.period;
        let w = (k * x).sin() * (k * y).sin();
        let mut out = [0u8; 3];
        for c in 0..3 {
            out[c] = (self.base[c] as f64 + self.amplitude[c] * w).round().clamp(0.0, 255.0) as u8;
        }
        out
    }

    /// The marking covering `(x, y)` at least `min_inset` deep, if any.
    pub fn marking_at(&self, x: f64, y: f64, min_inset: f64) -> Option<&Marking> {
        self.markings.iter().rev().find(|m| m.inset(x, y) >= min_inset)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackgroundPlane {
    /// World `z` of the plane.
    pub height: f64,
    pub texture: PlaneTexture,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub plane: BackgroundPlane,
    pub occluders: Vec<Occluder>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub depth_sigma: f64,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            depth_sigma: 0.002,
            dropout_rate: 0.01,
            seed: 0,
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.depth_sigma >= 0.0 && self.depth_sigma.is_finite()) || !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "noise needs depth_sigma >= 0 and dropout_rate in [0, 1), got {} / {}",
                self.depth_sigma, self.dropout_rate
            )));
        }
        Ok(())
    }
}

/// Surface hit by a scene ray.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub color: Rgb,
    pub occluder: bool,
}

fn sphere_entry(o: &V, d: &V, c: &V, r: f64) -> Option<f64> {
    let oc = *o - *c;
    let b = oc.dot(d);
    let cc = oc.dot(&oc) - r * r;
    let h = b * b - cc;
    if h < 0.0 {
        return None;
    }
    let t = -b - h.sqrt();
    (t > 0.0).then_some(t)
}

fn capsule_entry(o: &V, d: &V, a: &V, b: &V, r: f64) -> Option<f64> {
    let ba = *b - *a;
    let oa = *o - *a;
    let baba = ba.dot(&ba);
    let bard = ba.dot(d);
    let baoa = ba.dot(&oa);
    let rdoa = d.dot(&oa);
    let oaoa = oa.dot(&oa);
    let qa = baba - bard * bard;
    let mut best: Option<f64> = None;
    let mut take = |t: Option<f64>| {
        if let Some(t) = t {
            best = Some(best.map_or(t, |b: f64| b.min(t)));
        }
    };
    if qa > 1e-12 {
        let qb = baba * rdoa - baoa * bard;
        let qc = baba * oaoa - baoa * baoa - r * r * baba;
        let h = qb * qb - qa * qc;
        if h >= 0.0 {
            let t = (-qb - h.sqrt()) / qa;
            let y = baoa + t * bard;
            if t > 0.0 && y > 0.0 && y < baba {
                take(Some(t));
            }
        }
    }
    take(sphere_entry(o, d, a, r));
    take(sphere_entry(o, d, b, r));
    best
}

fn box_entry(o: &V, d: &V, c: &V, half: &[f64; 3]) -> Option<f64> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        let (lo, hi) = (c.0[a] - half[a], c.0[a] + half[a]);
        if d.0[a] == 0.0 {
            if o.0[a] < lo || o.0[a] > hi {
                return None;
            }
            continue;
        }
        let (mut ta, mut tb) = ((lo - o.0[a]) / d.0[a], (hi - o.0[a]) / d.0[a]);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
    }
    (t0 <= t1 && t0 > 0.0).then_some(t0)
}

impl Shape {
    /// First entry of a local-frame ray into the solid.
    pub fn entry(&self, ray: &Ray<f64>) -> Option<f64> {
        let (o, d) = (&ray.origin, &ray.direction);
        match self {
            Shape::Sphere { center, radius } => sphere_entry(o, d, &Vec3(*center), *radius),
            Shape::Capsule { a, b, radius } => capsule_entry(o, d, &Vec3(*a), &Vec3(*b), *radius),
            Shape::Box { center, half_extents } => box_entry(o, d, &Vec3(*center), half_extents),
        }
    }

    /// World-space axis-aligned bounds under `placement`.
    pub fn bounds(&self, placement: &Placement) -> (V, V) {
        let mut points: Vec<(V, f64)> = Vec::new();
        match self {
            Shape::Sphere { center, radius } => points.push((Vec3(*center), *radius)),
            Shape::Capsule { a, b, radius } => {
                points.push((Vec3(*a), *radius));
                points.push((Vec3(*b), *radius));
            }
            Shape::Box { center, half_extents: h } => {
                for corner in 0..8 {
                    let s = |bit: usize| if corner >> bit & 1 == 1 { 1.0 } else { -1.0 };
                    let off = V::new(s(0) * h[0], s(1) * h[1], s(2) * h[2]);
                    points.push((Vec3(*center) + off, 0.0));
                }
            }
        }
        let mut lo = V::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
        let mut hi = -lo;
        for (p, r) in points {
            let w = placement.to_world(&p);
            for a in 0..3 {
                lo.0[a] = lo.0[a].min(w.0[a] - r);
                hi.0[a] = hi.0[a].max(w.0[a] + r);
            }
        }
        (lo, hi)
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            Shape::Sphere { radius, .. } | Shape::Capsule { radius, .. } => *radius > 0.0,
            Shape::Box { half_extents, .. } => half_extents.iter().all(|&h| h > 0.0),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidScene(format!("degenerate primitive {self:?}")))
        }
    }
}

impl Scene {
    /// Builds a scene and checks that every occluder sits on or above the plane.
    pub fn new(plane: BackgroundPlane, occluders: Vec<Occluder>) -> Result<Self> {
        let scene = Scene { plane, occluders };
        scene.validate()?;
        Ok(scene)
    }

    /// Number of frames described by the occluder trajectories (1 for a bare plane).
    pub fn frame_count(&self) -> usize {
        self.occluders.first().map_or(1, |o| o.trajectory.len())
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.frame_count();
        for occ in &self.occluders {
            if occ.trajectory.len() != n || n == 0 {
                return Err(Error::InvalidScene(format!(
                    "occluder {} has {} placements, expected {n}",
                    occ.name,
                    occ.trajectory.len()
                )));
            }
            if occ.parts.is_empty() {
                return Err(Error::InvalidScene(format!("occluder {} has no parts", occ.name)));
            }
            for part in &occ.parts {
                part.shape.validate()?;
            }
            for (f, placement) in occ.trajectory.iter().enumerate() {
                CameraPose::new(Mat3::from_row_major(placement.rotation), Vec3(placement.translation))
                    .map_err(|_| Error::InvalidScene(format!("occluder {} frame {f}: rotation not rigid", occ.name)))?;
                let (lo, _) = occ.bounds(f);
                // contact is allowed, penetration is not
                if lo.z() < self.plane.height - 1e-9 {
                    return Err(Error::InvalidScene(format!(
                        "occluder {} frame {f} reaches below the background plane (z = {:.4})",
                        occ.name,
                        lo.z()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Checks that every occluder stays strictly below the cameras and inside
/// `[lo, hi]`, and that the plane it hides from any camera lies inside too.
    pub fn check_contained(&self, lo: &V, hi: &V, cameras: &[Camera<f64>]) -> Result<()> {
        let ceiling = cameras
            .iter()
            .map(|c| c.optical_center().z())
            .fold(f64::INFINITY, f64::min);
        for occ in &self.occluders {
            for f in 0..self.frame_count() {
                let (a, b) = occ.bounds(f);
                if b.z() >= ceiling {
                    return Err(Error::InvalidScene(format!("occluder {} frame {f} reaches the cameras", occ.name)));
                }
                if (0..3).any(|i| a.0[i] < lo.0[i] || b.0[i] > hi.0[i]) {
                    return Err(Error::InvalidScene(format!(
                        "occluder {} frame {f} leaves the reconstruction volume",
                        occ.name
                    )));
                }
                // the plane behind the occluder must be reconstructible too
                for cam in cameras {
                    let c = cam.optical_center();
                    for corner in 0..8 {
                        let pick = |bit: usize, i: usize| if corner >> bit & 1 == 1 { b.0[i] } else { a.0[i] };
                        let p = V::new(pick(0, 0), pick(1, 1), pick(2, 2));
                        let s = (c.z() - self.plane.height) / (c.z() - p.z());
                        let (x, y) = (c.x() + s * (p.x() - c.x()), c.y() + s * (p.y() - c.y()));
                        if x < lo.x() || x > hi.x() || y < lo.y() || y > hi.y() {
                            return Err(Error::InvalidScene(format!(
                                "background behind occluder {} frame {f} leaves the reconstruction volume",
                                occ.name
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// The same scene without occluders.
    pub fn background_only(&self) -> Scene {
        Scene {
            plane: self.plane.clone(),
            occluders: Vec::new(),
        }
    }

    fn plane_entry(&self, ray: &Ray<f64>) -> Option<f64> {
        let dz = ray.direction.z();
        if dz == 0.0 {
            return None;
        }
        let t = (self.plane.height - ray.origin.z()) / dz;
        (t > 0.0).then_some(t)
    }

    /// Nearest occluder entry along `ray` at `frame`.
    pub fn occluder_hit(&self, ray: &Ray<f64>, frame: usize) -> Option<(f64, Rgb)> {
        let mut best: Option<(f64, Rgb)> = None;
        for occ in &self.occluders {
            let local = occ.trajectory[frame].ray_to_local(ray);
            for part in &occ.parts {
                if let Some(t) = part.shape.entry(&local) {
                    if best.is_none_or(|(bt, _)| t < bt) {
                        best = Some((t, part.color));
                    }
                }
            }
        }
        best
    }

    /// Nearest surface along `ray`; occluders are ignored when `with_occluders` is false.
    pub fn trace(&self, ray: &Ray<f64>, frame: usize, with_occluders: bool) -> Option<Hit> {
        let plane = self.plane_entry(ray).map(|t| {
            let p = ray.at(t);
            Hit {
                t,
                color: self.plane.texture.color_at(p.x(), p.y()),
                occluder: false,
            }
        });
        let occ = if with_occluders { self.occluder_hit(ray, frame) } else { None };
        match (plane, occ) {
            (Some(p), Some((t, _))) if t >= p.t => Some(p),
            (_, Some((t, color))) => Some(Hit { t, color, occluder: true }),
            (p, None) => p,
        }
    }

    /// Background point seen through `ray`, ignoring occluders.
    pub fn plane_point(&self, ray: &Ray<f64>) -> Option<V> {
        self.plane_entry(ray).map(|t| ray.at(t))
    }

    /// Whether `camera` sees the background point `p` unobstructed at `frame`.
    pub fn sees(&self, camera: &Camera<f64>, p: &V, frame: usize) -> bool {
        if camera.project(p).is_none() {
            return false;
        }
        let c = camera.optical_center();
        let Some(dir) = (*p - c).normalized() else {
            return false;
        };
        let dist = (*p - c).norm();
        let ray = Ray { origin: c, direction: dir };
        !matches!(self.occluder_hit(&ray, frame), Some((t, _)) if t < dist - 1e-9)
    }
}

impl Occluder {
    /// World-space bounds of the occluder at `frame`.
    pub fn bounds(&self, frame: usize) -> (V, V) {
        let placement = &self.trajectory[frame];
        let mut lo = V::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
        let mut hi = -lo;
        for part in &self.parts {
            let (a, b) = part.shape.bounds(placement);
            for i in 0..3 {
                lo.0[i] = lo.0[i].min(a.0[i]);
                hi.0[i] = hi.0[i].max(b.0[i]);
            }
        }
        (lo, hi)
    }
}

/// splitmix64 finalizer, used to derive independent noise streams.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable identifier of a camera so each viewpoint gets its own noise stream.
fn camera_key(camera: &Camera<f64>) -> u64 {
    let k = &camera.intrinsics;
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    let values = camera
        .pose
        .rotation
        .to_row_major()
        .into_iter()
        .chain(camera.pose.translation.0)
        .chain([k.fx, k.fy, k.cx, k.cy]);
    for v in values {
        h = mix(h ^ v.to_bits());
    }
    h
}

fn render_rows<P: Send + Clone>(camera: &Camera<f64>, init: P, f: impl Fn(usize, usize) -> P + Sync) -> Vec<P> {
    let (w, h) = (camera.width(), camera.height());
    let mut out = vec![init; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, px) in row.iter_mut().enumerate() {
            *px = f(x, y);
        }
    });
    out
}

/// Ideal optical-axis depth and color along every pixel center ray.
pub fn render_ideal(scene: &Scene, camera: &Camera<f64>, frame: usize) -> (Vec<f64>, Vec<Rgb>) {
    let axis = camera.optical_axis();
    let px = render_rows(camera, (0.0, [0u8; 3]), |x, y| {
        let ray = camera.ray_unchecked([x as f64, y as f64]);
        match scene.trace(&ray, frame, true) {
            Some(hit) => (hit.t * ray.direction.dot(&axis), hit.color),
            None => (0.0, [0; 3]),
        }
    });
    px.into_iter().unzip()
}

/// Synthetic sensor frame. Noise is applied on top of the ideal render and is
/// a pure function of the noise seed, the frame index and the camera.
pub fn render_rgbd<T: Real>(
    scene: &Scene,
    camera: &Camera<f64>,
    frame_index: usize,
    noise: Option<&NoiseModel>,
) -> Result<RgbdFrame<T>> {
    camera.validate()?;
    if frame_index >= scene.frame_count() && !scene.occluders.is_empty() {
        return Err(Error::InvalidScene(format!(
            "frame {frame_index} outside trajectory of {} frames",
            scene.frame_count()
        )));
    }
    let frame = if scene.occluders.is_empty() { 0 } else { frame_index };
    let (mut depth, color) = render_ideal(scene, camera, frame);
    let (w, _) = (camera.width(), camera.height());
    if let Some(noise) = noise {
        noise.validate()?;
        let normal = Normal::new(0.0, noise.depth_sigma).expect("validated sigma");
        let stream = mix(noise.seed ^ mix(frame_index as u64 ^ mix(camera_key(camera))));
        depth.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(stream ^ y as u64));
            for d in row.iter_mut() {
                let drop = rng.random::<f64>() < noise.dropout_rate;
                let e = normal.sample(&mut rng);
                if *d > 0.0 {
                    *d = if drop { 0.0 } else { (*d + e).max(0.0) };
                }
            }
        });
    }
    let (w, h) = (camera.width(), camera.height());
    RgbdFrame::new(
        DepthImage::new(w, h, depth.into_iter().map(T::lit).collect())?,
        ColorImage::new(w, h, color)?,
        camera.cast(),
        frame_index,
    )
}

/// Target view with every occluder removed.
pub fn render_background_truth(scene: &Scene, camera: &Camera<f64>) -> ColorImage {
    let color = render_rows(camera, [0u8; 3], |x, y| {
        let ray = camera.ray_unchecked([x as f64, y as f64]);
        scene.trace(&ray, 0, false).map_or([0; 3], |h| h.color)
    });
    ColorImage::new(camera.width(), camera.height(), color).expect("sized by camera")
}

/// Pixels whose nearest surface is an occluder.
pub fn ground_truth_mask(scene: &Scene, camera: &Camera<f64>, frame: usize) -> Mask {
    let data = render_rows(camera, false, |x, y| {
        let ray = camera.ray_unchecked([x as f64, y as f64]);
        scene.trace(&ray, frame, true).is_some_and(|h| h.occluder)
    });
    Mask::new(camera.width(), camera.height(), data).expect("sized by camera")
}

/// Pixels whose background point lies at least `min_inset` inside a marking.
pub fn marking_mask(scene: &Scene, camera: &Camera<f64>, min_inset: f64) -> Mask {
    let data = render_rows(camera, false, |x, y| {
        let ray = camera.ray_unchecked([x as f64, y as f64]);
        scene
            .plane_point(&ray)
            .is_some_and(|p| scene.plane.texture.marking_at(p.x(), p.y(), min_inset).is_some())
    });
    Mask::new(camera.width(), camera.height(), data).expect("sized by camera")
}

/// Per-pixel flag: the background point behind the pixel is seen by at least
/// one of `sides`.
pub fn background_visibility(scene: &Scene, target: &Camera<f64>, sides: &[Camera<f64>], frame: usize) -> Mask {
    let data = render_rows(target, false, |x, y| {
        let ray = target.ray_unchecked([x as f64, y as f64]);
        scene
            .plane_point(&ray)
            .is_some_and(|p| sides.iter().any(|c| scene.sees(c, &p, frame)))
    });
    Mask::new(target.width(), target.height(), data).expect("sized by camera")
}

/// Percentage of `mask` pixels whose background is visible from a side camera
/// (100 for an empty mask).
pub fn recoverable_fraction(
    scene: &Scene,
    target: &Camera<f64>,
    sides: &[Camera<f64>],
    frame: usize,
    mask: &Mask,
) -> f64 {
    let visible = background_visibility(scene, target, sides, frame);
    let total = mask.count();
    if total == 0 {
        return 100.0;
    }
    100.0 * mask.and(&visible).count() as f64 / total as f64
}

/// Grayscale bone-like pattern keyed to plane coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct XrayPattern {
    pub background: u8,
    pub bone: u8,
    /// Bones as 2D capsules `(from, to, radius)` on the plane.
    pub bones: Vec<([f64; 2], [f64; 2], f64)>,
    /// Width of the soft bone edge in meters.
    pub edge: f64,
}

impl XrayPattern {
    pub fn hand() -> Self {
        let mut bones = Vec::new();
        for (i, x) in [-0.045, -0.015, 0.015, 0.045].into_iter().enumerate() {
            let top = 0.07 - 0.01 * (i as f64 - 1.5).abs();
            bones.push(([x * 0.8, -0.06], [x, 0.01], 0.006));
            bones.push(([x, 0.016], [x * 1.1, top], 0.005));
        }
        bones.push(([0.05, -0.06], [0.085, -0.01], 0.007));
        bones.push(([-0.03, -0.11], [-0.02, -0.07], 0.011));
        bones.push(([0.02, -0.11], [0.025, -0.07], 0.009));
        XrayPattern {
            background: 40,
            bone: 215,
            bones,
            edge: 0.003,
        }
    }

    pub fn intensity(&self, x: f64, y: f64) -> u8 {
        let mut density: f64 = 0.0;
        for (a, b, r) in &self.bones {
            let d = Marking::Line {
                from: *a,
                to: *b,
                width: 2.0 * r,
                color: [0; 3],
            }
            .inset(x, y);
            density = density.max(((d + self.edge) / self.edge).clamp(0.0, 1.0));
        }
        let v = self.background as f64 + density * (self.bone as f64 - self.background as f64);
        v.round() as u8
    }
}

/// X-ray layer for `camera`: the bone pattern at each pixel's background point.
pub fn render_xray(scene: &Scene, camera: &Camera<f64>, pattern: &XrayPattern) -> GrayImage {
    let data = render_rows(camera, 0u8, |x, y| {
        let ray = camera.ray_unchecked([x as f64, y as f64]);
        scene
            .plane_point(&ray)
            .map_or(pattern.background, |p| pattern.intensity(p.x(), p.y()))
    });
    GrayImage::new(camera.width(), camera.height(), data).expect("sized by camera")
}

/// Camera rig shared by every benchmark sequence.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigConfig {
    pub width: usize,
    pub height: usize,
    /// Horizontal field of view in degrees.
    pub fov_deg: f64,
    /// Height of all optical centers above the plane.
    pub camera_height: f64,
    /// Lateral offset of each side camera from the target viewpoint.
    pub baseline: f64,
}

impl Default for RigConfig {
    fn default() -> Self {
        RigConfig {
            width: 512,
            height: 424,
            fov_deg: 70.0,
            camera_height: 0.9,
            baseline: 0.15,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rig {
    pub sides: [Camera<f64>; 2],
    pub target: Camera<f64>,
}

impl RigConfig {
    /// Target camera above the origin looking straight down; side cameras offset
    /// along world `x` and aimed at the origin.
    pub fn build(&self) -> Result<Rig> {
        let k = CameraIntrinsics::from_fov(self.width, self.height, self.fov_deg.to_radians())?;
        let up = V::new(0.0, 1.0, 0.0);
        let look = V::zero();
        let cam = |x: f64| -> Result<Camera<f64>> {
            Camera::new(k, CameraPose::looking_at(V::new(x, 0.0, self.camera_height), look, up)?)
        };
        Ok(Rig {
            sides: [cam(-self.baseline)?, cam(self.baseline)?],
            target: cam(0.0)?,
        })
    }
}

/// One benchmark sequence: a scene, its rig and its frame layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sequence {
    pub id: usize,
    pub name: String,
    pub scene: Scene,
    pub rig: RigConfig,
    pub init_frames: usize,
    /// Reference height of the occluder above the plane for each live frame.
    pub heights: Vec<f64>,
    pub xray: XrayPattern,
}

impl Sequence {
    pub fn live_frames(&self) -> usize {
        self.scene.frame_count()
    }

    /// Frame index used for noise seeding of live frame `f` (init frames come first).
    pub fn noise_index(&self, f: usize) -> usize {
        self.init_frames + f
    }

    /// The two side views of occluder-free initialization frame `i`.
    pub fn init_views<T: Real>(&self, i: usize, noise: Option<&NoiseModel>) -> Result<[RgbdFrame<T>; 2]> {
        let rig = self.rig.build()?;
        let bg = self.scene.background_only();
        Ok([
            render_rgbd(&bg, &rig.sides[0], i, noise)?,
            render_rgbd(&bg, &rig.sides[1], i, noise)?,
        ])
    }

    /// The two side views of live frame `f`.
    pub fn live_views<T: Real>(&self, f: usize, noise: Option<&NoiseModel>) -> Result<[RgbdFrame<T>; 2]> {
        let rig = self.rig.build()?;
        // reseed so live frames never share noise with init frames
        let index = self.noise_index(f);
        let noise = noise.map(|n| NoiseModel {
            seed: n.seed ^ mix(index as u64),
            ..*n
        });
        let mut views = [
            render_rgbd::<T>(&self.scene, &rig.sides[0], f, noise.as_ref())?,
            render_rgbd::<T>(&self.scene, &rig.sides[1], f, noise.as_ref())?,
        ];
        for v in views.iter_mut() {
            v.timestamp_index = index;
        }
        Ok(views)
    }
}

const PHANTOM: Rgb = [206, 168, 146];
const INK: Rgb = [28, 42, 132];
const GLOVE: Rgb = [96, 164, 212];

fn phantom_texture(markings: Vec<Marking>) -> PlaneTexture {
    PlaneTexture {
        base: PHANTOM,
        amplitude: [18.0, 16.0, 14.0],
        period: 0.08,
        markings,
    }
}

fn incision_lines() -> Vec<Marking> {
    vec![
        Marking::Line {
            from: [-0.06, -0.03],
            to: [0.05, 0.05],
            width: 0.006,
            color: INK,
        },
        Marking::Line {
            from: [-0.04, 0.06],
            to: [0.04, -0.05],
            width: 0.004,
            color: [150, 30, 40],
        },
    ]
}

fn cross_target() -> Marking {
    Marking::Cross {
        center: [0.0, 0.0],
        arm: 0.03,
        width: 0.008,
        color: INK,
    }
}

/// Open hand: palm box with four fingers and a thumb, fingers along `+y`.
pub fn open_hand() -> Vec<Primitive> {
    let mut parts = vec![Primitive {
        shape: Shape::Box {
            center: [0.0, 0.0, 0.0],
            half_extents: [0.04, 0.045, 0.012],
        },
        color: GLOVE,
    }];
    for (i, x) in [-0.033, -0.011, 0.011, 0.033].into_iter().enumerate() {
        let len = 0.07 - 0.008 * (i as f64 - 1.5).abs();
        parts.push(Primitive {
            shape: Shape::Capsule {
                a: [x, 0.04, 0.0],
                b: [x * 1.15, 0.04 + len, 0.0],
                radius: 0.009,
            },
            color: GLOVE,
        });
    }
    parts.push(Primitive {
        shape: Shape::Capsule {
            a: [0.038, -0.015, 0.0],
            b: [0.07, 0.03, 0.0],
            radius: 0.01,
        },
        color: GLOVE,
    });
    parts
}

pub fn fist() -> Vec<Primitive> {
    vec![Primitive {
        shape: Shape::Sphere {
            center: [0.0, 0.0, 0.0],
            radius: 0.05,
        },
        color: GLOVE,
    }]
}

/// Hammer head above the local origin with the handle along `-y`.
pub fn hammer() -> Vec<Primitive> {
    vec![
        Primitive {
            shape: Shape::Box {
                center: [0.0, 0.06, 0.0],
                half_extents: [0.018, 0.05, 0.018],
            },
            color: [150, 152, 160],
        },
        Primitive {
            shape: Shape::Capsule {
                a: [0.0, 0.01, 0.0],
                b: [0.0, -0.12, 0.0],
                radius: 0.011,
            },
            color: [122, 74, 36],
        },
    ]
}

pub const SCALPEL_HALF_LENGTH: f64 = 0.07;
pub const SCALPEL_RADIUS: f64 = 0.01;

/// Scalpel handle along local `y`.
pub fn scalpel() -> Vec<Primitive> {
    vec![Primitive {
        shape: Shape::Capsule {
            a: [0.0, -SCALPEL_HALF_LENGTH, 0.0],
            b: [0.0, SCALPEL_HALF_LENGTH, 0.0],
            radius: SCALPEL_RADIUS,
        },
        color: [196, 198, 210],
    }]
}

/// Tilt that brings the lower scalpel end into contact with the plane when the
/// scalpel center is at 5 cm.
pub fn scalpel_tilt() -> f64 {
    ((0.05 - SCALPEL_RADIUS) / SCALPEL_HALF_LENGTH).asin()
}

fn hover(heights: &[f64], jitter: &[[f64; 3]]) -> Vec<Placement> {
    heights
        .iter()
        .zip(jitter.iter().cycle())
        .map(|(&h, j)| Placement::new([j[0], j[1], h], j[2], 0.0))
        .collect()
}

/// Options for [`build_suite`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub rig: RigConfig,
    pub init_frames: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            rig: RigConfig::default(),
            init_frames: 10,
        }
    }
}

pub fn benchmark_suite() -> Vec<Sequence> {
    build_suite(&SuiteConfig::default()).expect("built-in suite is valid")
}

/// The six benchmark sequences: open hand and fist at 20 and 30 cm, a hammer
/// sweeping down onto a cross target and a tilted scalpel close to the plane.
pub fn build_suite(config: &SuiteConfig) -> Result<Vec<Sequence>> {
    let steady = [
        [0.0, 0.0, 0.0],
        [0.008, -0.004, 0.05],
        [-0.006, 0.006, -0.04],
        [0.003, 0.01, 0.02],
    ];
    let hand = |h: f64| vec![h; 4];
    let hammer_heights = vec![0.30, 0.25, 0.20, 0.15, 0.10, 0.05];
    let scalpel_heights = vec![0.30, 0.12, 0.08, 0.06, 0.05, 0.05];
    let tilt = scalpel_tilt();
    let scalpel_path: Vec<Placement> = scalpel_heights
        .iter()
        .enumerate()
        .map(|(i, &h)| Placement::new([0.004 * i as f64, 0.01, h], 0.05 * (i % 2) as f64, -tilt))
        .collect();
    let hammer_path: Vec<Placement> = hammer_heights
        .iter()
        .map(|&h| Placement::new([0.0, 0.0, h], 0.0, 0.0))
        .collect();

    let specs: Vec<(&str, Vec<Marking>, &str, Vec<Primitive>, Vec<f64>, Vec<Placement>)> = vec![
        ("open-hand-20cm", vec![], "hand", open_hand(), hand(0.2), hover(&hand(0.2), &steady)),
        ("fist-20cm", vec![], "fist", fist(), hand(0.2), hover(&hand(0.2), &steady)),
        ("open-hand-30cm-marked", incision_lines(), "hand", open_hand(), hand(0.3), hover(&hand(0.3), &steady)),
        ("fist-30cm-marked", incision_lines(), "fist", fist(), hand(0.3), hover(&hand(0.3), &steady)),
        ("hammer-cross-5-30cm", vec![cross_target()], "hammer", hammer(), hammer_heights, hammer_path),
        ("scalpel-low", incision_lines(), "scalpel", scalpel(), scalpel_heights, scalpel_path),
    ];
    specs
        .into_iter()
        .enumerate()
        .map(|(i, (name, markings, occ_name, parts, heights, trajectory))| {
            let scene = Scene::new(
                BackgroundPlane {
                    height: 0.0,
                    texture: phantom_texture(markings),
                },
                vec![Occluder {
                    name: occ_name.into(),
                    parts,
                    trajectory,
                }],
            )?;
            Ok(Sequence {
                id: i + 1,
                name: name.into(),
                scene,
                rig: config.rig,
                init_frames: config.init_frames,
                heights,
                xray: XrayPattern::hand(),
            })
        })
        .collect()
}
