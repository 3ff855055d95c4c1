//! Synthetic data: depth rendering from meshes, depth noise, ground-truth
//! TSDF volumes, and dataset manifests.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::depth::{is_valid_depth, DepthMap};
use crate::error::{domain, format, Error, Result};
use crate::geometry::{CameraIntrinsics, Pose};
use crate::mesh::{Bvh, PseudoNormals, TriangleMesh};
use crate::volume::TsdfVolume;

/// Distance (in voxels) that maps to a normalized value of 1.
pub const DEFAULT_HALF_WIDTH_VOXELS: f64 = 4.0;
pub const DEFAULT_SPECKLE_FRACTION: f64 = 0.05;
pub const DEFAULT_SPECKLE_RANGE: (f64, f64) = (0.5, 1.5);

/// Renders z-depth by casting one ray per pixel center. Misses are 0 (invalid).
pub fn render_depth(mesh: &TriangleMesh, k: &CameraIntrinsics, pose: &Pose) -> DepthMap {
    let mut depth = blank(k);
    if mesh.is_empty() {
        return depth;
    }
    let bvh = Bvh::build(mesh);
    render_with(&bvh, k, pose, &mut depth);
    depth
}

fn blank(k: &CameraIntrinsics) -> DepthMap {
    DepthMap::filled(k.width, k.height, 0.0).expect("intrinsics have a positive size")
}

fn render_with(bvh: &Bvh<'_>, k: &CameraIntrinsics, pose: &Pose, out: &mut DepthMap) {
    let origin = *pose.translation();
    let w = k.width;
    for v in 0..k.height {
        for u in 0..w {
            // with the unnormalized ray (x, y, 1) the hit parameter equals z-depth
            let dir = pose.transform_vector(&k.normalized_ray(u, v));
            if let Some((t, _)) = bvh.intersect(&origin, &dir, 0.0) {
                out.data_mut()[v * w + u] = t as f32;
            }
        }
    }
}

/// Renders many views of the same mesh, sharing one hierarchy.
pub fn render_views(mesh: &TriangleMesh, k: &CameraIntrinsics, poses: &[Pose]) -> Vec<DepthMap> {
    let bvh = Bvh::build(mesh);
    poses
        .iter()
        .map(|p| {
            let mut d = blank(k);
            if !mesh.is_empty() {
                render_with(&bvh, k, p, &mut d);
            }
            d
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    /// `d * (1 + sigma * d * z)` per valid pixel.
    Multiplicative,
    /// Multiplicative noise plus sparse gross scaling outliers.
    Speckle,
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Multiplicative => "multiplicative",
            Self::Speckle => "speckle",
        })
    }
}

impl FromStr for NoiseKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multiplicative" => Ok(Self::Multiplicative),
            "speckle" => Ok(Self::Speckle),
            _ => domain(format!("unknown noise kind '{s}'")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    pub sigma: f64,
    pub speckle_fraction: f64,
    pub speckle_scale_range: (f64, f64),
    pub seed: u64,
}

impl NoiseModel {
    pub fn multiplicative(sigma: f64, seed: u64) -> Self {
        Self { kind: NoiseKind::Multiplicative, sigma, speckle_fraction: 0.0, speckle_scale_range: (1.0, 1.0), seed }
    }

    pub fn speckle(sigma: f64, seed: u64) -> Self {
        Self {
            kind: NoiseKind::Speckle,
            sigma,
            speckle_fraction: DEFAULT_SPECKLE_FRACTION,
            speckle_scale_range: DEFAULT_SPECKLE_RANGE,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return domain("noise sigma must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.speckle_fraction) {
            return domain("speckle fraction must lie in [0, 1]");
        }
        let (lo, hi) = self.speckle_scale_range;
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
            return domain("speckle scale range must satisfy 0 < lo <= hi");
        }
        Ok(())
    }

    /// Same model with the seed replaced (used to give each frame its own stream).
    pub fn reseeded(&self, seed: u64) -> Self {
        Self { seed, ..*self }
    }
}

/// Applies the noise model. Each pixel draws from its own stream keyed by
/// (seed, pixel index), so results do not depend on traversal order.
pub fn add_noise(depth: &DepthMap, model: &NoiseModel) -> Result<DepthMap> {
    model.validate()?;
    let mut out = depth.clone();
    let speckle = model.kind == NoiseKind::Speckle && model.speckle_fraction > 0.0;
    if model.sigma == 0.0 && !speckle {
        return Ok(out);
    }
    let (lo, hi) = model.speckle_scale_range;
    for (i, d) in out.data_mut().iter_mut().enumerate() {
        if !is_valid_depth(*d) {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
        rng.set_stream(i as u64);
        let z: f64 = rng.sample(StandardNormal);
        let d0 = *d as f64;
        let mut n = d0 * (1.0 + model.sigma * d0 * z);
        if speckle && rng.random::<f64>() < model.speckle_fraction {
            n *= lo + (hi - lo) * rng.random::<f64>();
        }
        *d = (n as f32).max(f32::MIN_POSITIVE);
    }
    Ok(out)
}

/// Ground-truth volume plus how it was signed.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    pub volume: TsdfVolume,
    /// False when the mesh was not watertight and unsigned distances were stored.
    pub signed: bool,
}

/// Samples the mesh's signed distance at every voxel center, truncated and
/// normalized by `half_width_voxels * voxel_size`. Inside is negative.
pub fn mesh_to_gt_tsdf(mesh: &TriangleMesh, template: &TsdfVolume, half_width_voxels: f64) -> Result<GroundTruth> {
    if !(half_width_voxels.is_finite() && half_width_voxels > 0.0) {
        return domain("half width must be positive");
    }
    let mut volume = TsdfVolume::like(template);
    volume.weights_mut().fill(1.0);
    if mesh.is_empty() {
        log::warn!("empty mesh: ground truth is all free space");
        volume.values_mut().fill(1.0);
        return Ok(GroundTruth { volume, signed: false });
    }
    let signed = mesh.is_watertight();
    if !signed {
        log::warn!("mesh is not watertight; storing unsigned distances");
    }
    let bvh = Bvh::build(mesh);
    let pseudo = PseudoNormals::new(mesh);
    let scale = half_width_voxels * template.voxel_size() as f64;
    for i in 0..volume.len() {
        let [x, y, z] = volume.coords(i);
        let p = volume.voxel_center(x, y, z);
        let cp = bvh.closest_point(&p).expect("non-empty mesh");
        let mut d = cp.dist2.sqrt();
        if signed && pseudo.normal(&cp).dot(&(p - cp.point)) < 0.0 {
            d = -d;
        }
        volume.values_mut()[i] = (d / scale).clamp(-1.0, 1.0) as f32;
    }
    Ok(GroundTruth { volume, signed })
}

/// Poses on a ring around `center`, all looking at it, at `elevation` radians
/// above the horizontal plane. World "up" is -y (image rows grow downward).
pub fn orbit_poses(center: Vector3<f64>, distance: f64, elevation: f64, count: usize) -> Result<Vec<Pose>> {
    let up = Vector3::new(0.0, -1.0, 0.0);
    (0..count)
        .map(|i| {
            let az = std::f64::consts::TAU * i as f64 / count as f64;
            let dir = Vector3::new(az.cos() * elevation.cos(), -elevation.sin(), az.sin() * elevation.cos());
            Pose::look_at(center + dir * distance, center, up)
        })
        .collect()
}

/// Poses spread over a sphere (Fibonacci lattice) looking at `center`.
pub fn sphere_poses(center: Vector3<f64>, distance: f64, count: usize) -> Result<Vec<Pose>> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
            let r = (1.0 - y * y).sqrt();
            let th = golden * i as f64;
            let dir = Vector3::new(th.cos() * r, y, th.sin() * r);
            let up = if dir.y.abs() > 0.9 { Vector3::z() } else { Vector3::new(0.0, -1.0, 0.0) };
            Pose::look_at(center + dir * distance, center, up)
        })
        .collect()
}

/// One dataset frame: a depth file and the 1-based line of its pose in the trajectory file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub depth_path: PathBuf,
    pub trajectory_line: usize,
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut toks = line.split_whitespace();
        let (Some(p), Some(r), None) = (toks.next(), toks.next(), toks.next()) else {
            return format(format!("manifest line {}: expected 'depth_path trajectory_line'", n + 1));
        };
        let trajectory_line = r
            .parse::<usize>()
            .ok()
            .filter(|&r| r > 0)
            .ok_or_else(|| Error::Format(format!("manifest line {}: bad trajectory line '{r}'", n + 1)))?;
        out.push(ManifestEntry { depth_path: PathBuf::from(p), trajectory_line });
    }
    Ok(out)
}

pub fn write_manifest(entries: &[ManifestEntry]) -> String {
    let mut s = String::from("# depth_path trajectory_line\n");
    for e in entries {
        s.push_str(&format!("{} {}\n", e.depth_path.display(), e.trajectory_line));
    }
    s
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    parse_manifest(&std::fs::read_to_string(path)?)
}
