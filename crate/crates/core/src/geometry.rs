//! Pinhole cameras, rigid camera-to-world poses, and viewing rays.
//!
//! Depth values are z-depths (distance along the optical axis), and pixel
//! `(u, v)` covers the continuous square `[u, u+1) x [v, v+1)` with its center
//! at `(u + 0.5, v + 0.5)`.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use crate::error::{domain, format, Result};

const ORTHO_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return domain(format!("focal lengths must be positive, got ({}, {})", self.fx, self.fy));
        }
        if self.width == 0 || self.height == 0 {
            return domain("image size must be at least 1x1");
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64 && self.cy >= 0.0 && self.cy < self.height as f64)
        {
            return domain(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            ));
        }
        Ok(())
    }

    /// Intrinsics for a `width x height` image with the principal point at the image center.
    pub fn centered(focal: f64, width: usize, height: usize) -> Result<Self> {
        Self::new(focal, focal, width as f64 / 2.0, height as f64 / 2.0, width, height)
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Camera-frame direction (z = 1) through the center of pixel `(u, v)`.
    #[inline]
    pub fn normalized_ray(&self, u: usize, v: usize) -> Vector3<f64> {
        Vector3::new(
            (u as f64 + 0.5 - self.cx) / self.fx,
            (v as f64 + 0.5 - self.cy) / self.fy,
            1.0,
        )
    }

    /// Continuous pixel coordinates of a camera-frame point, in the pixel-index
    /// convention (pixel centers land on integers). Returns `None` for z <= 0.
    #[inline]
    pub fn project_camera(&self, p: &Vector3<f64>) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        Some((
            self.fx * p.x / p.z + self.cx - 0.5,
            self.fy * p.y / p.z + self.cy - 0.5,
        ))
    }

    fn check_pixel(&self, u: usize, v: usize) -> Result<()> {
        if u >= self.width || v >= self.height {
            return domain(format!("pixel ({u}, {v}) outside {}x{} image", self.width, self.height));
        }
        Ok(())
    }
}

/// Rigid camera-to-world transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|x| x.is_finite()) {
            return domain("pose contains non-finite entries");
        }
        let ortho_err = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if ortho_err > ORTHO_TOL {
            return domain(format!("rotation is not orthonormal (error {ortho_err:e})"));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ORTHO_TOL {
            return domain(format!("rotation determinant is {det}, expected +1"));
        }
        Ok(Self { rotation, translation })
    }

    /// Like [`Pose::new`], but projects a nearly-orthonormal matrix (as read from
    /// text files with limited precision) onto SO(3) first.
    pub fn from_approx(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if let Ok(p) = Self::new(rotation, translation) {
            return Ok(p);
        }
        let err = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if !(err < 1e-3) {
            return domain(format!("rotation is far from orthonormal (error {err:e})"));
        }
        let svd = rotation.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let r = u * vt;
        Self::new(r, translation)
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self { rotation: Matrix3::identity(), translation: t }
    }

    /// Camera at `eye` looking at `target`. Camera axes: +z forward, +y down
    /// (image rows), +x right; `up` is the approximate world up direction.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Result<Self> {
        let forward = target - eye;
        if forward.norm() < 1e-12 {
            return domain("look_at: eye and target coincide");
        }
        let z = forward.normalize();
        let x = z.cross(&-up);
        if x.norm() < 1e-9 {
            return domain("look_at: up vector parallel to viewing direction");
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let r = Matrix3::from_columns(&[x, y, z]);
        Self::new(r, eye)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    #[inline]
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    #[inline]
    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self { rotation: rt, translation: -(rt * self.translation) }
    }

    /// `self * other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    #[inline]
    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.tr_mul(&(p - self.translation))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    /// Unit length.
    pub direction: Vector3<f64>,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vector3<f64> {
        self.origin + self.direction * t
    }
}

/// World-frame viewing ray through the center of pixel `(u, v)`.
pub fn pixel_to_ray(intrinsics: &CameraIntrinsics, pose: &Pose, u: usize, v: usize) -> Result<Ray> {
    intrinsics.check_pixel(u, v)?;
    let d = pose.transform_vector(&intrinsics.normalized_ray(u, v)).normalize();
    Ok(Ray { origin: pose.translation, direction: d })
}

/// World point seen at pixel `(u, v)` with z-depth `depth`.
pub fn backproject(
    intrinsics: &CameraIntrinsics,
    pose: &Pose,
    u: usize,
    v: usize,
    depth: f64,
) -> Result<Vector3<f64>> {
    intrinsics.check_pixel(u, v)?;
    if !(depth > 0.0 && depth.is_finite()) {
        return domain(format!("depth must be positive and finite, got {depth}"));
    }
    Ok(backproject_unchecked(intrinsics, pose, u, v, depth))
}

#[inline]
pub(crate) fn backproject_unchecked(
    intrinsics: &CameraIntrinsics,
    pose: &Pose,
    u: usize,
    v: usize,
    depth: f64,
) -> Vector3<f64> {
    pose.transform_point(&(intrinsics.normalized_ray(u, v) * depth))
}

/// Projects a world point to continuous pixel coordinates and z-depth.
pub fn project(intrinsics: &CameraIntrinsics, pose: &Pose, p: &Vector3<f64>) -> Option<(f64, f64, f64)> {
    let pc = pose.world_to_camera(p);
    intrinsics.project_camera(&pc).map(|(u, v)| (u, v, pc.z))
}

/// One line of a trajectory file.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryEntry {
    pub frame_id: String,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub pose: Pose,
}

impl TrajectoryEntry {
    pub fn intrinsics(&self, width: usize, height: usize) -> Result<CameraIntrinsics> {
        CameraIntrinsics::new(self.fx, self.fy, self.cx, self.cy, width, height)
    }

    pub fn to_line(&self) -> String {
        let r = self.pose.rotation();
        let t = self.pose.translation();
        let mut s = format!("{} {} {} {} {}", self.frame_id, self.fx, self.fy, self.cx, self.cy);
        for row in 0..3 {
            for col in 0..3 {
                let _ = write!(s, " {}", r[(row, col)]);
            }
            let _ = write!(s, " {}", t[row]);
        }
        s
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 17 {
            return format(format!("trajectory line has {} fields, expected 17", toks.len()));
        }
        let nums: Vec<f64> = toks[1..]
            .iter()
            .map(|t| t.parse::<f64>().map_err(|_| crate::Error::Format(format!("bad number '{t}'"))))
            .collect::<Result<_>>()?;
        let r = Matrix3::new(
            nums[4], nums[5], nums[6], nums[8], nums[9], nums[10], nums[12], nums[13], nums[14],
        );
        let t = Vector3::new(nums[7], nums[11], nums[15]);
        Ok(Self {
            frame_id: toks[0].to_string(),
            fx: nums[0],
            fy: nums[1],
            cx: nums[2],
            cy: nums[3],
            pose: Pose::from_approx(r, t)?,
        })
    }
}

/// Parses a trajectory file body; blank lines and `#` comments are skipped.
pub fn parse_trajectory(text: &str) -> Result<Vec<TrajectoryEntry>> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(TrajectoryEntry::parse_line)
        .collect()
}

pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryEntry>> {
    parse_trajectory(&std::fs::read_to_string(path)?)
}

pub fn write_trajectory(path: &Path, entries: &[TrajectoryEntry]) -> Result<()> {
    let mut s = String::from("# frame_id fx fy cx cy r00 r01 r02 tx r10 r11 r12 ty r20 r21 r22 tz\n");
    for e in entries {
        s.push_str(&e.to_line());
        s.push('\n');
    }
    std::fs::write(path, s)?;
    Ok(())
}
