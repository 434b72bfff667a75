//! Pinhole camera math.
//!
//! Conventions: poses map world to camera coordinates (`x_cam = R x_world + t`),
//! the camera looks down its +z axis with +x right and +y down in the image, and
//! pixel centers sit at integer coordinates. A continuous pixel coordinate `u`
//! belongs to column `floor(u + 0.5)`.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec3<T>(pub [T; 3]);

impl<T: Real> Vec3<T> {
    #[inline]
    pub fn new(x: T, y: T, z: T) -> Self {
        Vec3([x, y, z])
    }

    #[inline]
    pub fn zero() -> Self {
        Vec3([T::zero(); 3])
    }

    #[inline]
    pub fn x(&self) -> T {
        self.0[0]
    }
    #[inline]
    pub fn y(&self) -> T {
        self.0[1]
    }
    #[inline]
    pub fn z(&self) -> T {
        self.0[2]
    }

    #[inline]
    pub fn dot(&self, o: &Self) -> T {
        self.0[0] * o.0[0] + self.0[1] * o.0[1] + self.0[2] * o.0[2]
    }

    #[inline]
    pub fn cross(&self, o: &Self) -> Self {
        let [a1, a2, a3] = self.0;
        let [b1, b2, b3] = o.0;
        Vec3([a2 * b3 - a3 * b2, a3 * b1 - a1 * b3, a1 * b2 - a2 * b1])
    }

    #[inline]
    pub fn norm(&self) -> T {
        self.dot(self).sqrt()
    }

    /// Unit vector in the same direction; `None` for the zero vector.
    pub fn normalized(&self) -> Option<Self> {
        let n = self.norm();
        if n > T::zero() && n.is_finite() {
            Some(*self * (T::one() / n))
        } else {
            None
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Vec3<U> {
        Vec3(self.0.map(|c| U::lit(c.as_f64())))
    }
}

impl<T: Real> Add for Vec3<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Vec3([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}

impl<T: Real> Sub for Vec3<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Vec3([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }
}

impl<T: Real> Mul<T> for Vec3<T> {
    type Output = Self;
    #[inline]
    fn mul(self, s: T) -> Self {
        Vec3(self.0.map(|c| c * s))
    }
}

impl<T: Real> Neg for Vec3<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Vec3(self.0.map(|c| -c))
    }
}

/// Row-major 3x3 matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mat3<T>(pub [[T; 3]; 3]);

impl<T: Real> Mat3<T> {
    pub fn identity() -> Self {
        let (o, z) = (T::one(), T::zero());
        Mat3([[o, z, z], [z, o, z], [z, z, o]])
    }

    pub fn from_rows(r0: Vec3<T>, r1: Vec3<T>, r2: Vec3<T>) -> Self {
        Mat3([r0.0, r1.0, r2.0])
    }

    pub fn from_row_major(v: [T; 9]) -> Self {
        Mat3([[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]])
    }

    pub fn to_row_major(&self) -> [T; 9] {
        let m = &self.0;
        [
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        ]
    }

    /// Right-handed rotation by `angle` radians about `axis`.
    pub fn rotation(axis: Vec3<T>, angle: T) -> Self {
        let Some(k) = axis.normalized() else {
            return Self::identity();
        };
        let (s, c) = angle.sin_cos();
        let t = T::one() - c;
        let [x, y, z] = k.0;
        Mat3([
            [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
            [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
            [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
        ])
    }

    pub fn transpose(&self) -> Self {
        let m = &self.0;
        Mat3([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn determinant(&self) -> T {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    #[inline]
    pub fn row(&self, i: usize) -> Vec3<T> {
        Vec3(self.0[i])
    }

    #[inline]
    pub fn mul_vec(&self, v: &Vec3<T>) -> Vec3<T> {
        Vec3([self.row(0).dot(v), self.row(1).dot(v), self.row(2).dot(v)])
    }

    pub fn mul_mat(&self, o: &Self) -> Self {
        let ot = o.transpose();
        let mut out = [[T::zero(); 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = self.row(i).dot(&ot.row(j));
            }
        }
        Mat3(out)
    }
}

/// Tolerance used for orthonormality checks: 1e-9 in double precision, relaxed to
/// what single precision can represent.
pub fn orthonormal_tolerance<T: Real>() -> T {
    T::lit(1e-9).max(T::epsilon() * T::lit(64.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics<T> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: usize,
    pub height: usize,
}

impl<T: Real> CameraIntrinsics<T> {
    pub fn new(fx: T, fy: T, cx: T, cy: T, width: usize, height: usize) -> Result<Self> {
        let k = CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Square pixels, principal point at the image center, horizontal field of view in radians.
    pub fn from_fov(width: usize, height: usize, horizontal_fov: T) -> Result<Self> {
        let half = T::lit(0.5);
        let f = T::of_usize(width) * half / (horizontal_fov * half).tan();
        Self::new(
            f,
            f,
            T::of_usize(width) * half - half,
            T::of_usize(height) * half - half,
            width,
            height,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > T::zero()
            && self.fy > T::zero()
            && self.fx.is_finite()
            && self.fy.is_finite()
            && self.cx >= T::zero()
            && self.cx < T::of_usize(self.width)
            && self.cy >= T::zero()
            && self.cy < T::of_usize(self.height);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidCamera(format!(
                "intrinsics fx={} fy={} cx={} cy={} for {}x{}",
                self.fx, self.fy, self.cx, self.cy, self.width, self.height
            )))
        }
    }

    /// Integer pixel containing the continuous coordinate, if inside the image.
    #[inline]
    pub fn pixel_index(&self, u: T, v: T) -> Option<(usize, usize)> {
        pixel_index(u, v, self.width, self.height)
    }
}

/// Nearest integer pixel (`floor(c + 0.5)`) when it lies within a `width` x `height` image.
#[inline]
pub fn pixel_index<T: Real>(u: T, v: T, width: usize, height: usize) -> Option<(usize, usize)> {
    let half = T::lit(0.5);
    let iu = (u + half).floor();
    let iv = (v + half).floor();
    if !(iu >= T::zero() && iv >= T::zero()) {
        return None;
    }
    let (iu, iv) = (iu.to_usize()?, iv.to_usize()?);
    (iu < width && iv < height).then_some((iu, iv))
}

/// World-to-camera rigid transform.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraPose<T> {
    pub rotation: Mat3<T>,
    pub translation: Vec3<T>,
}

impl<T: Real> CameraPose<T> {
    pub fn new(rotation: Mat3<T>, translation: Vec3<T>) -> Result<Self> {
        let pose = CameraPose {
            rotation,
            translation,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn identity() -> Self {
        CameraPose {
            rotation: Mat3::identity(),
            translation: Vec3::zero(),
        }
    }

    /// Camera at `eye` looking at `target`; `up` is the world direction that should
    /// appear upward in the image.
    pub fn looking_at(eye: Vec3<T>, target: Vec3<T>, up: Vec3<T>) -> Result<Self> {
        let z = (target - eye)
            .normalized()
            .ok_or_else(|| Error::InvalidCamera("eye equals target".into()))?;
        let y = -(up - z * up.dot(&z));
        let y = y
            .normalized()
            .ok_or_else(|| Error::InvalidCamera("up parallel to viewing direction".into()))?;
        let x = y.cross(&z);
        let rotation = Mat3::from_rows(x, y, z);
        let translation = -rotation.mul_vec(&eye);
        Self::new(rotation, translation)
    }

    pub fn validate(&self) -> Result<()> {
        let tol = orthonormal_tolerance::<T>();
        let rtr = self.rotation.transpose().mul_mat(&self.rotation);
        let id = Mat3::<T>::identity();
        let mut worst = T::zero();
        for i in 0..3 {
            for j in 0..3 {
                worst = worst.max((rtr.0[i][j] - id.0[i][j]).abs());
            }
        }
        let det = self.rotation.determinant();
        if worst > tol || (det - T::one()).abs() > tol || !self.translation.is_finite() {
            return Err(Error::InvalidCamera(format!(
                "rotation not proper orthonormal (|RtR-I|={worst}, det={det})"
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn transform(&self, world: &Vec3<T>) -> Vec3<T> {
        self.rotation.mul_vec(world) + self.translation
    }

    #[inline]
    pub fn inverse_transform(&self, cam: &Vec3<T>) -> Vec3<T> {
        self.rotation.transpose().mul_vec(&(*cam - self.translation))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera<T> {
    pub intrinsics: CameraIntrinsics<T>,
    pub pose: CameraPose<T>,
}

/// A point seen by a camera: continuous pixel coordinates plus depth along the optical axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection<T> {
    pub pixel: [T; 2],
    pub depth: T,
}

impl<T: Real> Camera<T> {
    pub fn new(intrinsics: CameraIntrinsics<T>, pose: CameraPose<T>) -> Result<Self> {
        intrinsics.validate()?;
        pose.validate()?;
        Ok(Camera { intrinsics, pose })
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        self.pose.validate()
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    /// Perspective projection of a camera-frame point; no bounds check.
    #[inline]
    pub fn project_camera_point(&self, p: &Vec3<T>) -> Option<Projection<T>> {
        let z = p.z();
        if !(z > T::zero()) {
            return None;
        }
        let k = &self.intrinsics;
        Some(Projection {
            pixel: [k.fx * p.x() / z + k.cx, k.fy * p.y() / z + k.cy],
            depth: z,
        })
    }

    /// Projects a world point. `None` when the point is behind the camera or lands
    /// outside the image.
    #[inline]
    pub fn project(&self, point: &Vec3<T>) -> Option<Projection<T>> {
        let proj = self.project_camera_point(&self.pose.transform(point))?;
        self.intrinsics
            .pixel_index(proj.pixel[0], proj.pixel[1])
            .map(|_| proj)
    }

    /// `C = -R^T t`.
    pub fn optical_center(&self) -> Vec3<T> {
        -self.pose.rotation.transpose().mul_vec(&self.pose.translation)
    }

    /// Camera optical axis in world coordinates.
    pub fn optical_axis(&self) -> Vec3<T> {
        self.pose.rotation.row(2)
    }

    /// Unnormalized camera-frame direction `K^-1 [u v 1]^T`.
    #[inline]
    pub fn backproject_direction(&self, u: T, v: T) -> Vec3<T> {
        let k = &self.intrinsics;
        Vec3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, T::one())
    }

    /// World ray from the optical center through a (continuous) pixel position.
    pub fn ray_through_pixel(&self, pixel: [T; 2]) -> Result<Ray<T>> {
        if self.intrinsics.pixel_index(pixel[0], pixel[1]).is_none() {
            return Err(Error::PixelOutOfBounds {
                u: pixel[0].as_f64(),
                v: pixel[1].as_f64(),
                width: self.width(),
                height: self.height(),
            });
        }
        Ok(self.ray_unchecked(pixel))
    }

    #[inline]
    pub(crate) fn ray_unchecked(&self, pixel: [T; 2]) -> Ray<T> {
        let d_cam = self.backproject_direction(pixel[0], pixel[1]);
        let d_world = self.pose.rotation.transpose().mul_vec(&d_cam);
        Ray {
            origin: self.optical_center(),
            direction: d_world.normalized().expect("z component is one"),
        }
    }

    /// World point at optical-axis depth `depth` along the ray through `pixel`.
    pub fn unproject(&self, pixel: [T; 2], depth: T) -> Vec3<T> {
        let cam = self.backproject_direction(pixel[0], pixel[1]) * depth;
        self.pose.inverse_transform(&cam)
    }

    pub fn cast<U: Real>(&self) -> Camera<U> {
        let k = &self.intrinsics;
        Camera {
            intrinsics: CameraIntrinsics {
                fx: U::lit(k.fx.as_f64()),
                fy: U::lit(k.fy.as_f64()),
                cx: U::lit(k.cx.as_f64()),
                cy: U::lit(k.cy.as_f64()),
                width: k.width,
                height: k.height,
            },
            pose: CameraPose {
                rotation: Mat3(self.pose.rotation.0.map(|r| r.map(|c| U::lit(c.as_f64())))),
                translation: self.pose.translation.cast(),
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray<T> {
    pub origin: Vec3<T>,
    /// Unit length.
    pub direction: Vec3<T>,
}

impl<T: Real> Ray<T> {
    #[inline]
    pub fn at(&self, t: T) -> Vec3<T> {
        self.origin + self.direction * t
    }
}
