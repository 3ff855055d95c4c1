//! Global TSDF value/weight grids, trilinear sampling, and the adjoint
//! trilinear splatting used to write updates back.
//!
//! Voxel `(x, y, z)` has its center at `origin + (x, y, z) * voxel_size` and
//! linear index `x + X * (y + Y * z)`. Values are normalized signed distances
//! in `[-1, 1]`, positive in front of the surface.

use std::path::Path;

use nalgebra::Vector3;

use crate::binio::{put_f32s, put_u32, Reader};
use crate::error::{domain, format, Result};

pub const VOLUME_MAGIC: &[u8; 6] = b"RFVOL\0";
pub const VOLUME_VERSION: u32 = 1;

/// Voxel size used throughout the desk-scale experiments (meters).
pub const DEFAULT_VOXEL_SIZE: f64 = 0.008;

#[derive(Clone, Debug, PartialEq)]
pub struct TsdfVolume {
    dims: [usize; 3],
    origin: [f32; 3],
    voxel_size: f32,
    values: Vec<f32>,
    weights: Vec<f32>,
}

impl TsdfVolume {
    /// Zero-initialized value and weight grids.
    pub fn new(dims: [usize; 3], origin: [f32; 3], voxel_size: f32) -> Result<Self> {
        if dims.contains(&0) {
            return domain(format!("volume dims must be positive, got {dims:?}"));
        }
        if !(voxel_size > 0.0 && voxel_size.is_finite()) {
            return domain(format!("voxel size must be positive, got {voxel_size}"));
        }
        if !origin.iter().all(|o| o.is_finite()) {
            return domain("volume origin must be finite");
        }
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n <= u32::MAX as usize)
            .map_or_else(|| domain(format!("volume dims {dims:?} too large")), Ok)?;
        Ok(Self { dims, origin, voxel_size, values: vec![0.0; n], weights: vec![0.0; n] })
    }

    /// Grid whose voxel centers are symmetric about `center`.
    pub fn centered(dims: [usize; 3], center: [f64; 3], voxel_size: f64) -> Result<Self> {
        let origin = [0, 1, 2].map(|a| (center[a] - (dims[a] as f64 - 1.0) * 0.5 * voxel_size) as f32);
        Self::new(dims, origin, voxel_size as f32)
    }

    /// Empty volume sharing this one's grid.
    pub fn like(&self) -> Self {
        Self::new(self.dims, self.origin, self.voxel_size).expect("valid template")
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn origin(&self) -> [f32; 3] {
        self.origin
    }

    pub fn voxel_size(&self) -> f32 {
        self.voxel_size
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    /// Raw mutable access; callers must keep values in `[-1, 1]` and weights `>= 0`.
    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn weights_mut(&mut self) -> &mut [f32] {
        &mut self.weights
    }

    pub fn same_grid(&self, other: &TsdfVolume) -> bool {
        self.dims == other.dims && self.origin == other.origin && self.voxel_size == other.voxel_size
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let x = idx % self.dims[0];
        let y = (idx / self.dims[0]) % self.dims[1];
        let z = idx / (self.dims[0] * self.dims[1]);
        [x, y, z]
    }

    #[inline]
    pub fn voxel_center(&self, x: usize, y: usize, z: usize) -> Vector3<f64> {
        let s = self.voxel_size as f64;
        Vector3::new(
            self.origin[0] as f64 + x as f64 * s,
            self.origin[1] as f64 + y as f64 * s,
            self.origin[2] as f64 + z as f64 * s,
        )
    }

    /// Trilinear footprint of a world point.
    #[inline]
    pub fn footprint(&self, p: &Vector3<f64>) -> GridSample {
        let inv = 1.0 / self.voxel_size as f64;
        let g = [
            (p.x - self.origin[0] as f64) * inv,
            (p.y - self.origin[1] as f64) * inv,
            (p.z - self.origin[2] as f64) * inv,
        ];
        GridSample::from_grid_coords(g, self.dims)
    }

    /// Trilinearly interpolated `(value, weight)` at `p`. Out-of-grid corners
    /// contribute nothing.
    pub fn trilinear_sample(&self, p: &Vector3<f64>) -> Result<(f64, f64, GridSample)> {
        if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
            return domain("sample point must be finite");
        }
        let fp = self.footprint(p);
        let (v, w) = self.read(&fp);
        Ok((v, w, fp))
    }

    #[inline]
    pub(crate) fn read(&self, fp: &GridSample) -> (f64, f64) {
        let mut v = 0.0;
        let mut w = 0.0;
        fp.for_each_corner(self.dims, |i, t| {
            v += t * self.values[i] as f64;
            w += t * self.weights[i] as f64;
        });
        (v, w)
    }

    /// Running-average update (Curless-Levoy) distributed over the footprint:
    /// every in-grid corner `i` receives `value` with weight `w_i * update_weight`.
    pub fn trilinear_splat(&mut self, fp: &GridSample, value: f64, update_weight: f64) -> Result<()> {
        if !(update_weight >= 0.0 && update_weight.is_finite()) {
            return domain(format!("update weight must be non-negative, got {update_weight}"));
        }
        if !value.is_finite() {
            return domain("update value must be finite");
        }
        self.splat_unchecked(fp, value, update_weight);
        Ok(())
    }

    #[inline]
    pub(crate) fn splat_unchecked(&mut self, fp: &GridSample, value: f64, update_weight: f64) {
        let dims = self.dims;
        fp.for_each_corner(dims, |i, t| {
            let w = t * update_weight;
            if w > 0.0 {
                self.update_voxel(i, value, w);
            }
        });
    }

    /// Applies one running-average update to voxel `i`.
    #[inline]
    pub fn update_voxel(&mut self, i: usize, value: f64, w: f64) {
        let w_old = self.weights[i] as f64;
        let w_new = w_old + w;
        let v = (w_old * self.values[i] as f64 + w * value) / w_new;
        self.values[i] = v.clamp(-1.0, 1.0) as f32;
        self.weights[i] = w_new as f32;
    }

    /// Resets voxels with `0 < W < floor` to `V = 0, W = 0`; returns how many were reset.
    pub fn reset_low_weight(&mut self, floor: f32) -> usize {
        let mut n = 0;
        for (v, w) in self.values.iter_mut().zip(self.weights.iter_mut()) {
            if *w > 0.0 && *w < floor {
                *v = 0.0;
                *w = 0.0;
                n += 1;
            }
        }
        n
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.len();
        let mut out = Vec::with_capacity(6 + 4 * 8 + 8 * n);
        out.extend_from_slice(VOLUME_MAGIC);
        put_u32(&mut out, VOLUME_VERSION);
        for d in self.dims {
            put_u32(&mut out, d as u32);
        }
        put_f32s(&mut out, &self.origin);
        put_f32s(&mut out, &[self.voxel_size]);
        put_f32s(&mut out, &self.values);
        put_f32s(&mut out, &self.weights);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "volume file");
        r.magic(VOLUME_MAGIC)?;
        let version = r.u32()?;
        if version != VOLUME_VERSION {
            return format(format!("volume file: unsupported version {version}"));
        }
        let dims = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
        let origin = [r.f32()?, r.f32()?, r.f32()?];
        let voxel_size = r.f32()?;
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n > 0 && n <= u32::MAX as usize)
            .map_or_else(|| format(format!("volume file: bad dims {dims:?}")), Ok)?;
        let expected = n.checked_mul(8).map_or_else(|| format("volume file: dims overflow"), Ok)?;
        if r.remaining() != expected {
            return format(format!(
                "volume file: payload is {} bytes, dims {dims:?} need {expected}",
                r.remaining()
            ));
        }
        let mut vol = Self::new(dims, origin, voxel_size).map_err(|e| crate::Error::Format(e.to_string()))?;
        vol.values = r.f32_vec(n)?;
        vol.weights = r.f32_vec(n)?;
        r.finish()?;
        if vol.values.iter().any(|v| !(v.abs() <= 1.0)) {
            return format("volume file: value outside [-1, 1]");
        }
        if vol.weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return format("volume file: negative or non-finite weight");
        }
        Ok(vol)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Trilinear footprint of one world point: the base corner of the enclosing
/// voxel cell and the fractional offsets inside it. Corners outside the grid
/// carry zero weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSample {
    base: [i32; 3],
    frac: [f64; 3],
}

impl GridSample {
    /// Footprint that touches no voxel.
    pub const EMPTY: GridSample = GridSample { base: [i32::MIN; 3], frac: [0.0; 3] };

    #[inline]
    pub fn from_grid_coords(g: [f64; 3], dims: [usize; 3]) -> Self {
        for a in 0..3 {
            if !(g[a] > -1.0 && g[a] < dims[a] as f64) {
                return Self::EMPTY;
            }
        }
        let fl = [g[0].floor(), g[1].floor(), g[2].floor()];
        GridSample {
            base: [fl[0] as i32, fl[1] as i32, fl[2] as i32],
            frac: [g[0] - fl[0], g[1] - fl[1], g[2] - fl[2]],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.base[0] == i32::MIN
    }

    pub fn base(&self) -> [i32; 3] {
        self.base
    }

    pub fn frac(&self) -> [f64; 3] {
        self.frac
    }

    /// The eight corners as `(linear index or None if out of grid, weight)`,
    /// corner `c` offset by `(c & 1, (c >> 1) & 1, (c >> 2) & 1)`.
    pub fn corners(&self, dims: [usize; 3]) -> [(Option<usize>, f64); 8] {
        let mut out = [(None, 0.0); 8];
        if self.is_empty() {
            return out;
        }
        for (c, slot) in out.iter_mut().enumerate() {
            let off = [c & 1, (c >> 1) & 1, (c >> 2) & 1];
            let mut w = 1.0;
            let mut inside = true;
            let mut idx = [0usize; 3];
            for a in 0..3 {
                let f = self.frac[a];
                w *= if off[a] == 1 { f } else { 1.0 - f };
                let coord = self.base[a] as i64 + off[a] as i64;
                if coord < 0 || coord >= dims[a] as i64 {
                    inside = false;
                } else {
                    idx[a] = coord as usize;
                }
            }
            let lin = inside.then(|| idx[0] + dims[0] * (idx[1] + dims[1] * idx[2]));
            *slot = (lin, if inside { w } else { 0.0 });
        }
        out
    }

    /// Visits every in-grid corner with non-zero weight.
    #[inline]
    pub fn for_each_corner(&self, dims: [usize; 3], mut f: impl FnMut(usize, f64)) {
        if self.is_empty() {
            return;
        }
        let [bx, by, bz] = self.base;
        let [fx, fy, fz] = self.frac;
        let wx = [1.0 - fx, fx];
        let wy = [1.0 - fy, fy];
        let wz = [1.0 - fz, fz];
        for (dz, &cz) in wz.iter().enumerate() {
            let z = bz as i64 + dz as i64;
            if z < 0 || z >= dims[2] as i64 || cz == 0.0 {
                continue;
            }
            for (dy, &cy) in wy.iter().enumerate() {
                let y = by as i64 + dy as i64;
                if y < 0 || y >= dims[1] as i64 || cy == 0.0 {
                    continue;
                }
                let row = dims[0] * (y as usize + dims[1] * z as usize);
                let wyz = cy * cz;
                for (dx, &cx) in wx.iter().enumerate() {
                    let x = bx as i64 + dx as i64;
                    if x < 0 || x >= dims[0] as i64 || cx == 0.0 {
                        continue;
                    }
                    f(row + x as usize, cx * wyz);
                }
            }
        }
    }

    /// Sum of the in-grid corner weights (at most 1).
    pub fn in_grid_mass(&self, dims: [usize; 3]) -> f64 {
        let mut m = 0.0;
        self.for_each_corner(dims, |_, w| m += w);
        m
    }

    /// Linear sampling stencil applied to an arbitrary field.
    pub fn gather(&self, dims: [usize; 3], field: &[f64]) -> f64 {
        let mut acc = 0.0;
        self.for_each_corner(dims, |i, w| acc += w * field[i]);
        acc
    }

    /// Adjoint of [`GridSample::gather`]: adds `w_i * value` to each corner.
    pub fn scatter_add(&self, dims: [usize; 3], field: &mut [f64], value: f64) {
        self.for_each_corner(dims, |i, w| field[i] += w * value);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_volume(rng: &mut ChaCha8Rng, dims: [usize; 3]) -> TsdfVolume {
        let mut v = TsdfVolume::new(dims, [-0.1, 0.2, 0.05], 0.01).unwrap();
        for x in v.values_mut() {
            *x = rng.random_range(-1.0..=1.0);
        }
        for w in v.weights_mut() {
            *w = rng.random_range(0.0..5.0);
        }
        v
    }

    /// Naive oracle: enumerate the 8 cell corners from the world point directly.
    fn oracle_sample(vol: &TsdfVolume, p: &Vector3<f64>) -> f64 {
        let s = vol.voxel_size() as f64;
        let o = vol.origin();
        let g = [(p.x - o[0] as f64) / s, (p.y - o[1] as f64) / s, (p.z - o[2] as f64) / s];
        let i0 = g.map(|x| x.floor());
        let mut acc = 0.0;
        for dx in 0..2 {
            for dy in 0..2 {
                for dz in 0..2 {
                    let c = [i0[0] + dx as f64, i0[1] + dy as f64, i0[2] + dz as f64];
                    let w = (1.0 - (g[0] - c[0]).abs()) * (1.0 - (g[1] - c[1]).abs()) * (1.0 - (g[2] - c[2]).abs());
                    let dims = vol.dims();
                    if (0..3).all(|a| c[a] >= 0.0 && c[a] < dims[a] as f64) {
                        let idx = vol.index(c[0] as usize, c[1] as usize, c[2] as usize);
                        acc += w * vol.values()[idx] as f64;
                    }
                }
            }
        }
        acc
    }

    #[test]
    fn new_volume_is_zero() {
        let v = TsdfVolume::new([128, 128, 128], [0.0; 3], 0.008).unwrap();
        assert_eq!(v.len(), 128 * 128 * 128);
        assert!(v.values().iter().all(|&x| x == 0.0));
        assert!(v.weights().iter().all(|&x| x == 0.0));
        let v = TsdfVolume::new([1, 1, 1], [0.0; 3], 0.008).unwrap();
        assert_eq!(v.values(), &[0.0]);
        let v = TsdfVolume::new([2, 3, 4], [0.0; 3], 0.008).unwrap();
        assert_eq!(v.len(), 24);
        assert!(TsdfVolume::new([2, 2, 2], [0.0; 3], 0.0).is_err());
        assert!(TsdfVolume::new([2, 2, 2], [0.0; 3], -1.0).is_err());
        assert!(TsdfVolume::new([0, 2, 2], [0.0; 3], 1.0).is_err());
    }

    #[test]
    fn sample_at_voxel_center() {
        let mut v = TsdfVolume::new([4, 4, 4], [0.0; 3], 0.5).unwrap();
        let i = v.index(1, 2, 3);
        v.values_mut()[i] = 0.25;
        v.weights_mut()[i] = 2.0;
        let (val, w, fp) = v.trilinear_sample(&v.voxel_center(1, 2, 3)).unwrap();
        assert_eq!(val, 0.25);
        assert_eq!(w, 2.0);
        let nz: Vec<_> = fp.corners(v.dims()).into_iter().filter(|(_, w)| *w > 0.0).collect();
        assert_eq!(nz, vec![(Some(i), 1.0)]);
    }

    #[test]
    fn sample_midpoint_is_average() {
        let mut v = TsdfVolume::new([4, 4, 4], [0.0; 3], 0.5).unwrap();
        let (a, b) = (v.index(1, 1, 1), v.index(2, 1, 1));
        v.values_mut()[a] = -0.5;
        v.values_mut()[b] = 0.9;
        let p = (v.voxel_center(1, 1, 1) + v.voxel_center(2, 1, 1)) / 2.0;
        let (val, _, _) = v.trilinear_sample(&p).unwrap();
        assert!((val - 0.2).abs() < 1e-7);
    }

    #[test]
    fn sample_rejects_non_finite() {
        let v = TsdfVolume::new([2, 2, 2], [0.0; 3], 1.0).unwrap();
        assert!(v.trilinear_sample(&Vector3::new(f64::NAN, 0.0, 0.0)).is_err());
        assert!(v.trilinear_sample(&Vector3::new(0.0, f64::INFINITY, 0.0)).is_err());
    }

    #[test]
    fn out_of_grid_corners_are_dropped() {
        let v = TsdfVolume::new([2, 2, 2], [0.0; 3], 1.0).unwrap();
        let fp = v.footprint(&Vector3::new(-0.5, 0.0, 0.0));
        assert!((fp.in_grid_mass(v.dims()) - 0.5).abs() < 1e-15);
        assert!(v.footprint(&Vector3::new(5.0, 0.0, 0.0)).is_empty());
        assert_eq!(v.footprint(&Vector3::new(5.0, 0.0, 0.0)).in_grid_mass(v.dims()), 0.0);
    }

    #[test]
    fn sample_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let v = random_volume(&mut rng, [6, 5, 7]);
        for _ in 0..2000 {
            let p = Vector3::new(
                rng.random_range(-0.12..-0.1 + 0.07),
                rng.random_range(0.18..0.2 + 0.06),
                rng.random_range(0.03..0.05 + 0.08),
            );
            let (val, _, _) = v.trilinear_sample(&p).unwrap();
            assert!((val - oracle_sample(&v, &p)).abs() < 1e-12);
        }
    }

    #[test]
    fn first_splat_at_center() {
        let mut v = TsdfVolume::new([3, 3, 3], [0.0; 3], 1.0).unwrap();
        let fp = v.footprint(&Vector3::new(1.0, 1.0, 1.0));
        v.trilinear_splat(&fp, 1.0, 1.0).unwrap();
        let i = v.index(1, 1, 1);
        assert_eq!(v.values()[i], 1.0);
        assert_eq!(v.weights()[i], 1.0);
        assert_eq!(v.weights().iter().filter(|&&w| w > 0.0).count(), 1);
    }

    #[test]
    fn zero_weight_splat_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut v = random_volume(&mut rng, [4, 4, 4]);
        let before = v.clone();
        let fp = v.footprint(&Vector3::new(-0.08, 0.215, 0.07));
        v.trilinear_splat(&fp, 0.7, 0.0).unwrap();
        assert_eq!(v, before);
        assert!(v.trilinear_splat(&fp, 0.7, -1.0).is_err());
    }

    #[test]
    fn sample_and_splat_stencils_are_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dims = [7, 6, 5];
        let v = TsdfVolume::new(dims, [0.0; 3], 1.0).unwrap();
        for _ in 0..50 {
            let field: Vec<f64> = (0..v.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let fps: Vec<GridSample> = (0..40)
                .map(|_| {
                    v.footprint(&Vector3::new(
                        rng.random_range(-1.0..7.5),
                        rng.random_range(-1.0..6.5),
                        rng.random_range(-1.0..5.5),
                    ))
                })
                .collect();
            let l: Vec<f64> = fps.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
            let lhs: f64 = fps.iter().zip(&l).map(|(fp, li)| fp.gather(dims, &field) * li).sum();
            let mut splat = vec![0.0; v.len()];
            for (fp, li) in fps.iter().zip(&l) {
                fp.scatter_add(dims, &mut splat, *li);
            }
            let rhs: f64 = field.iter().zip(&splat).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-9);
        }
    }

    #[test]
    fn serialization_roundtrip_and_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = random_volume(&mut rng, [16, 16, 16]);
        let bytes = v.to_bytes();
        let back = TsdfVolume::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back, v);

        assert!(matches!(TsdfVolume::from_bytes(&[]), Err(crate::Error::Format(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(TsdfVolume::from_bytes(&bad).is_err());

        let big = TsdfVolume::new([128, 128, 128], [0.0; 3], 0.008).unwrap().to_bytes();
        assert!(matches!(TsdfVolume::from_bytes(&big[..big.len() - 4]), Err(crate::Error::Format(_))));

        let mut overflow = bytes[..10].to_vec();
        for _ in 0..3 {
            overflow.extend_from_slice(&u32::MAX.to_le_bytes());
        }
        overflow.extend_from_slice(&bytes[22..]);
        assert!(TsdfVolume::from_bytes(&overflow).is_err());
    }

    proptest! {
        #[test]
        fn sampling_is_linear_in_values(
            seed in any::<u64>(), alpha in -1.0f64..1.0, beta in -1.0f64..1.0,
            px in -0.12f64..-0.03, py in 0.18f64..0.26, pz in 0.03f64..0.12,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_volume(&mut rng, [5, 5, 5]);
            let b = random_volume(&mut rng, [5, 5, 5]);
            let p = Vector3::new(px, py, pz);
            let fp = a.footprint(&p);
            let dims = a.dims();
            let fa: Vec<f64> = a.values().iter().map(|&x| x as f64).collect();
            let fb: Vec<f64> = b.values().iter().map(|&x| x as f64).collect();
            let comb: Vec<f64> = fa.iter().zip(&fb).map(|(x, y)| alpha * x + beta * y).collect();
            let lhs = fp.gather(dims, &comb);
            let rhs = alpha * a.trilinear_sample(&p).unwrap().0 + beta * b.trilinear_sample(&p).unwrap().0;
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        #[test]
        fn splats_preserve_invariants(
            seed in any::<u64>(),
            ops in proptest::collection::vec((-0.5f64..4.5, -0.5f64..4.5, -0.5f64..4.5, -3.0f64..3.0, 0.0f64..4.0), 1..60),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut v = TsdfVolume::new([4, 4, 4], [0.0; 3], 1.0).unwrap();
            for x in v.values_mut() { *x = rng.random_range(-1.0..=1.0); }
            for (x, y, z, val, w) in ops {
                let before = v.weights().to_vec();
                let fp = v.footprint(&Vector3::new(x, y, z));
                v.trilinear_splat(&fp, val, w).unwrap();
                prop_assert!(v.weights().iter().zip(&before).all(|(a, b)| a >= b));
            }
            prop_assert!(v.values().iter().all(|x| (-1.0..=1.0).contains(x)));
            prop_assert!(v.weights().iter().all(|&w| w >= 0.0));
        }
    }
}
