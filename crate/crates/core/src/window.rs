//! View-aligned local TSDF windows: extraction along each routed viewing ray,
//! network feature assembly, splatting predicted updates back, and the
//! periodic low-weight outlier filter.
//!
//! Window arrays are stored `(S, H, W)` so they map directly onto network
//! channels. Sample `j` of a ray sits at z-depth `d + (j - (S-1)/2) * voxel_size`,
//! so low indices are nearer the camera.

use crate::depth::{is_valid_depth, ConfidenceMap, DepthMap};
use crate::error::{domain, Result};
use crate::geometry::{backproject_unchecked, CameraIntrinsics, Pose};
use crate::nn::Tensor;
use crate::volume::{GridSample, TsdfVolume};

/// Samples per ray used unless configured otherwise.
pub const DEFAULT_WINDOW_SAMPLES: usize = 9;
/// Confidence threshold below which rays are discarded.
pub const DEFAULT_CONFIDENCE_THRESHOLD: f32 = 0.9;
pub const DEFAULT_FILTER_PERIOD: u64 = 100;
pub const DEFAULT_WEIGHT_FLOOR: f32 = 3.0;

#[derive(Clone, Debug)]
pub struct LocalWindow {
    width: usize,
    height: usize,
    samples: usize,
    values: Vec<f32>,
    weights: Vec<f32>,
    footprints: Vec<GridSample>,
    valid: Vec<bool>,
}

impl LocalWindow {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Samples per ray (S).
    pub fn samples(&self) -> usize {
        self.samples
    }

    /// Extracted values `V*`, laid out `(S, H, W)`.
    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Extracted accumulated weights `W*`, laid out `(S, H, W)`.
    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn footprints(&self) -> &[GridSample] {
        &self.footprints
    }

    /// Per-pixel mask `(H, W)`: false for missing depth or rejected confidence.
    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    #[inline]
    pub fn sample_index(&self, s: usize, u: usize, v: usize) -> usize {
        (s * self.height + v) * self.width + u
    }

    fn invalidate(&mut self, pix: usize) {
        self.valid[pix] = false;
        let plane = self.width * self.height;
        for s in 0..self.samples {
            let i = s * plane + pix;
            self.values[i] = 0.0;
            self.weights[i] = 0.0;
            self.footprints[i] = GridSample::EMPTY;
        }
    }
}

/// Samples `S` trilinear TSDF reads along every valid routed ray.
pub fn extract(
    volume: &TsdfVolume,
    routed: &DepthMap,
    intrinsics: &CameraIntrinsics,
    pose: &Pose,
    samples: usize,
) -> Result<LocalWindow> {
    if samples == 0 || samples.is_multiple_of(2) {
        return domain(format!("window sample count must be odd, got {samples}"));
    }
    if !routed.matches(intrinsics) {
        return domain("routed depth does not match intrinsics");
    }
    let (w, h) = (intrinsics.width, intrinsics.height);
    let plane = w * h;
    let n = plane * samples;
    let mut win = LocalWindow {
        width: w,
        height: h,
        samples,
        values: vec![0.0; n],
        weights: vec![0.0; n],
        footprints: vec![GridSample::EMPTY; n],
        valid: vec![false; plane],
    };
    let step = volume.voxel_size() as f64;
    let half = (samples / 2) as i64;
    for v in 0..h {
        for u in 0..w {
            let pix = v * w + u;
            let d = routed.get(u, v);
            if !is_valid_depth(d) {
                continue;
            }
            win.valid[pix] = true;
            for s in 0..samples {
                let z = d as f64 + (s as i64 - half) as f64 * step;
                if z <= 0.0 {
                    continue;
                }
                let p = backproject_unchecked(intrinsics, pose, u, v, z);
                let fp = volume.footprint(&p);
                let (val, wt) = volume.read(&fp);
                let i = s * plane + pix;
                win.values[i] = val as f32;
                win.weights[i] = wt as f32;
                win.footprints[i] = fp;
            }
        }
    }
    Ok(win)
}

/// Network input `[D, C, W*_1..W*_S, V*_1..V*_S]` as a `(2S+2, H, W)` tensor.
#[derive(Clone, Debug)]
pub struct FeatureStack {
    pub tensor: Tensor,
    pub samples: usize,
}

impl FeatureStack {
    pub fn channels(&self) -> usize {
        self.tensor.shape()[0]
    }
}

/// Weight channels are fed as `W / (1 + W)`.
#[inline]
pub fn compress_weight(w: f32) -> f32 {
    w / (1.0 + w)
}

/// Builds the fusion-network input. Rays with missing depth or confidence
/// below `c_thr` are zeroed in every channel and marked invalid in `window`,
/// so they are also skipped by [`integrate`].
pub fn assemble_features(
    window: &mut LocalWindow,
    routed: &DepthMap,
    confidence: &ConfidenceMap,
    c_thr: f32,
) -> Result<FeatureStack> {
    let (w, h, s) = (window.width, window.height, window.samples);
    if routed.width() != w || routed.height() != h || confidence.width() != w || confidence.height() != h {
        return domain("feature inputs have mismatched shapes");
    }
    if !(0.0..=1.0).contains(&c_thr) {
        return domain(format!("confidence threshold must be in [0, 1], got {c_thr}"));
    }
    let plane = w * h;
    for pix in 0..plane {
        if window.valid[pix] && confidence.data()[pix] < c_thr {
            window.invalidate(pix);
        }
    }
    let mut data = vec![0.0f32; (2 * s + 2) * plane];
    for pix in 0..plane {
        if !window.valid[pix] {
            continue;
        }
        data[pix] = routed.data()[pix];
        data[plane + pix] = confidence.data()[pix];
        for k in 0..s {
            data[(2 + k) * plane + pix] = compress_weight(window.weights[k * plane + pix]);
            data[(2 + s + k) * plane + pix] = window.values[k * plane + pix];
        }
    }
    Ok(FeatureStack { tensor: Tensor::from_parts(vec![2 * s + 2, h, w], data), samples: s })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct IntegrateStats {
    pub samples_splatted: usize,
    pub voxels_touched: usize,
}

/// Splats predicted updates `(S, H, W)` into the global volume through the
/// footprints recorded at extraction; each sample's update weight is its
/// in-grid trilinear mass.
pub fn integrate(volume: &mut TsdfVolume, window: &LocalWindow, updates: &[f32]) -> Result<IntegrateStats> {
    let plane = window.width * window.height;
    if updates.len() != plane * window.samples {
        return domain(format!(
            "updates have {} entries, window needs {}",
            updates.len(),
            plane * window.samples
        ));
    }
    if updates.iter().any(|x| !(-1.0..=1.0).contains(x)) {
        return domain("predicted updates must lie in [-1, 1]");
    }
    let dims = volume.dims();
    let mut touched = vec![0u64; volume.len().div_ceil(64)];
    let mut stats = IntegrateStats::default();
    for pix in 0..plane {
        if !window.valid[pix] {
            continue;
        }
        for s in 0..window.samples {
            let i = s * plane + pix;
            let fp = &window.footprints[i];
            let mass = fp.in_grid_mass(dims);
            if mass <= 0.0 {
                continue;
            }
            fp.for_each_corner(dims, |idx, _| touched[idx / 64] |= 1 << (idx % 64));
            volume.splat_unchecked(fp, updates[i] as f64, mass);
            stats.samples_splatted += 1;
        }
    }
    stats.voxels_touched = touched.iter().map(|b| b.count_ones() as usize).sum();
    Ok(stats)
}

/// Every `period` frames, resets voxels with `0 < W < weight_floor`.
pub fn post_filter(volume: &mut TsdfVolume, frame_counter: u64, period: u64, weight_floor: f32) -> Result<usize> {
    if period == 0 {
        return domain("post-filter period must be at least 1");
    }
    if !frame_counter.is_multiple_of(period) {
        return Ok(0);
    }
    Ok(volume.reset_low_weight(weight_floor))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn head_on() -> (CameraIntrinsics, Pose) {
        (CameraIntrinsics::centered(40.0, 16, 12).unwrap(), Pose::identity())
    }

    #[test]
    fn nine_samples_centered() {
        let vol = TsdfVolume::centered([32, 32, 64], [0.0, 0.0, 0.5], 0.008).unwrap();
        let (k, p) = head_on();
        let d = DepthMap::filled(16, 12, 0.5).unwrap();
        let win = extract(&vol, &d, &k, &p, 9).unwrap();
        assert_eq!(win.samples(), 9);
        assert_eq!(win.values().len(), 9 * 16 * 12);
        assert!(win.values().iter().all(|&x| x == 0.0));
        assert!(win.weights().iter().all(|&x| x == 0.0));
        assert!(extract(&vol, &d, &k, &p, 8).is_err());
    }

    #[test]
    fn plane_sdf_gives_linear_ramp() {
        let mut vol = TsdfVolume::centered([48, 48, 64], [0.0, 0.0, 0.5], 0.008).unwrap();
        let z0 = 0.5;
        let band = 8.0 * 0.008;
        for i in 0..vol.len() {
            let [x, y, z] = vol.coords(i);
            let c = vol.voxel_center(x, y, z);
            vol.values_mut()[i] = ((z0 - c.z) / band).clamp(-1.0, 1.0) as f32;
            vol.weights_mut()[i] = 1.0;
        }
        let (k, p) = head_on();
        let d = DepthMap::filled(16, 12, z0 as f32).unwrap();
        let win = extract(&vol, &d, &k, &p, 9).unwrap();
        for pix in 0..16 * 12 {
            for s in 0..9 {
                let expect = -(s as f64 - 4.0) / 8.0;
                let got = win.values()[s * 16 * 12 + pix] as f64;
                assert!((got - expect).abs() < 1e-3, "s={s}: {got} vs {expect}");
            }
        }
    }

    #[test]
    fn feature_channels_and_rejection() {
        let vol = TsdfVolume::centered([16, 16, 16], [0.0, 0.0, 0.5], 0.008).unwrap();
        let (k, p) = head_on();
        let d = DepthMap::filled(16, 12, 0.5).unwrap();
        let conf = ConfidenceMap::filled(16, 12, 0.5).unwrap();

        let mut win = extract(&vol, &d, &k, &p, 9).unwrap();
        let f = assemble_features(&mut win, &d, &conf, 0.0).unwrap();
        assert_eq!(f.channels(), 20);
        assert_eq!(win.valid_count(), 16 * 12);
        assert!(f.tensor.channel(0).iter().all(|&x| x == 0.5));

        let f = assemble_features(&mut win, &d, &conf, 0.9).unwrap();
        assert!(f.tensor.data().iter().all(|&x| x == 0.0));
        assert_eq!(win.valid_count(), 0);

        let bad = ConfidenceMap::filled(8, 12, 1.0).unwrap();
        assert!(assemble_features(&mut win, &d, &bad, 0.5).is_err());
    }

    #[test]
    fn zero_updates_raise_weight_only() {
        let mut vol = TsdfVolume::centered([32, 32, 32], [0.0, 0.0, 0.5], 0.008).unwrap();
        let (k, p) = head_on();
        let d = DepthMap::filled(16, 12, 0.5).unwrap();
        let win = extract(&vol, &d, &k, &p, 9).unwrap();
        let st = integrate(&mut vol, &win, &vec![0.0; win.values().len()]).unwrap();
        assert!(st.voxels_touched > 0);
        assert!(vol.values().iter().all(|&x| x == 0.0));
        assert!(vol.weights().iter().any(|&x| x > 0.0));
        assert!(integrate(&mut vol, &win, &vec![1.5; win.values().len()]).is_err());
        assert!(integrate(&mut vol, &win, &[0.0; 3]).is_err());
    }

    #[test]
    fn single_ray_is_local() {
        let mut vol = TsdfVolume::centered([32, 32, 32], [0.0, 0.0, 0.5], 0.008).unwrap();
        let (k, p) = head_on();
        let mut data = vec![0.0; 16 * 12];
        data[5 * 16 + 7] = 0.5;
        let d = DepthMap::new(16, 12, data).unwrap();
        let win = extract(&vol, &d, &k, &p, 9).unwrap();
        let mut allowed = vec![false; vol.len()];
        for fp in win.footprints() {
            fp.for_each_corner(vol.dims(), |i, _| allowed[i] = true);
        }
        integrate(&mut vol, &win, &vec![0.3; win.values().len()]).unwrap();
        for (i, _) in allowed.iter().enumerate().filter(|(_, &a)| !a) {
            assert_eq!(vol.weights()[i], 0.0);
            assert_eq!(vol.values()[i], 0.0);
        }
        assert!(vol.weights().iter().any(|&w| w > 0.0));
    }

    /// Feeding the extracted values back is a fixed point when every sample
    /// lands on a voxel center: a 3x3 camera whose rays have slopes -1, 0, +1
    /// and a depth on a voxel plane.
    #[test]
    fn reintegrating_extracted_values_is_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let vs = 0.5f32;
        let mut vol = TsdfVolume::new([41, 41, 30], [-10.0, -10.0, 0.0], vs).unwrap();
        for x in vol.values_mut() {
            *x = rng.random_range(-1.0..=1.0);
        }
        vol.weights_mut().iter_mut().for_each(|w| *w = 2.0);
        let before = vol.clone();
        let k = CameraIntrinsics::new(1.0, 1.0, 1.5, 1.5, 3, 3).unwrap();
        let d = DepthMap::filled(3, 3, 6.0).unwrap();
        let win = extract(&vol, &d, &k, &Pose::identity(), 9).unwrap();
        let updates = win.values().to_vec();
        integrate(&mut vol, &win, &updates).unwrap();
        for i in 0..vol.len() {
            assert!((vol.values()[i] - before.values()[i]).abs() < 1e-5);
        }
    }

    #[test]
    fn constant_field_is_fixed_point_for_any_camera() {
        let mut vol = TsdfVolume::centered([40, 40, 40], [0.0, 0.0, 0.5], 0.008).unwrap();
        vol.values_mut().iter_mut().for_each(|v| *v = -0.37);
        vol.weights_mut().iter_mut().for_each(|w| *w = 1.5);
        let k = CameraIntrinsics::centered(35.0, 16, 12).unwrap();
        let pose = Pose::look_at(
            nalgebra::Vector3::new(0.05, -0.02, 0.0),
            nalgebra::Vector3::new(0.0, 0.0, 0.5),
            nalgebra::Vector3::new(0.0, -1.0, 0.0),
        )
        .unwrap();
        let d = DepthMap::filled(16, 12, 0.5).unwrap();
        let win = extract(&vol, &d, &k, &pose, 9).unwrap();
        let updates = win.values().to_vec();
        integrate(&mut vol, &win, &updates).unwrap();
        assert!(vol.values().iter().all(|&v| (v + 0.37).abs() < 1e-5));
    }

    #[test]
    fn post_filter_thresholds() {
        let mut vol = TsdfVolume::new([5, 1, 1], [0.0; 3], 1.0).unwrap();
        vol.weights_mut().copy_from_slice(&[0.0, 1.0, 2.9, 3.0, 10.0]);
        vol.values_mut().copy_from_slice(&[0.1, 0.2, 0.3, 0.4, 0.5]);
        let snapshot = vol.clone();
        assert_eq!(post_filter(&mut vol, 50, 100, 3.0).unwrap(), 0);
        assert_eq!(vol, snapshot);
        assert_eq!(post_filter(&mut vol, 100, 100, 3.0).unwrap(), 2);
        assert_eq!(vol.weights(), &[0.0, 0.0, 0.0, 3.0, 10.0]);
        assert_eq!(vol.values(), &[0.1, 0.0, 0.0, 0.4, 0.5]);
        assert_eq!(post_filter(&mut vol, 200, 100, 3.0).unwrap(), 0);
        assert!(post_filter(&mut vol, 1, 0, 3.0).is_err());
    }
}
