//! Depth fusion network inference and the per-frame learned pipeline
//! (route, extract, predict, integrate, post-filter).
//!
//! Fusion network schedule for window size `S` (`C0 = 2S + 2` input channels):
//!
//! * encoder blocks `fusion.enc{1..4}`: `conv1` 3x3 (`C_in -> 20`), leaky ReLU,
//!   `bn1`, `conv2` 3x3 (`20 -> 20`), leaky ReLU, `bn2`; the block output is
//!   concatenated after its input, so channels grow `C0 -> C0 + 80`.
//! * decoder blocks `fusion.dec{1..3}`: `conv1` 1x1 (`C_in -> C_out`), leaky ReLU,
//!   `bn1`, `conv2` 1x1 (`C_out -> C_out`), leaky ReLU, `bn2`, with `C_out`
//!   80, 60, 40.
//! * `fusion.dec4`: `conv1` 1x1 (`40 -> 20`), leaky ReLU, `bn1`, `conv2` 1x1
//!   (`20 -> S`), tanh.
//!
//! Dropout is an identity at inference and has no parameters.

use std::time::{Duration, Instant};

use serde::Serialize;

use crate::depth::{DepthFrame, DepthMap};
use crate::error::{domain, format, Result};
use crate::nn::{
    bn_specs, conv_specs, record, Architecture, BatchNorm, Conv, Epilogue,
    NetworkWeights, Tensor, TensorSpec, Trace, LEAKY_SLOPE,
};
use crate::routing::RoutingNet;
use crate::volume::TsdfVolume;
use crate::window::{
    assemble_features, extract, integrate, post_filter, FeatureStack, DEFAULT_CONFIDENCE_THRESHOLD,
    DEFAULT_FILTER_PERIOD, DEFAULT_WEIGHT_FLOOR, DEFAULT_WINDOW_SAMPLES,
};

pub const ENCODER_BLOCKS: usize = 4;
pub const ENCODER_GROWTH: usize = 20;
const DECODER_WIDTHS: [usize; 3] = [80, 60, 40];
const FINAL_HIDDEN: usize = 20;

pub fn fusion_schedule(samples: usize) -> Vec<TensorSpec> {
    let mut s = Vec::new();
    let mut c = 2 * samples + 2;
    for b in 1..=ENCODER_BLOCKS {
        let p = format!("fusion.enc{b}");
        conv_specs(&mut s, &format!("{p}.conv1"), ENCODER_GROWTH, c, 3);
        bn_specs(&mut s, &format!("{p}.bn1"), ENCODER_GROWTH);
        conv_specs(&mut s, &format!("{p}.conv2"), ENCODER_GROWTH, ENCODER_GROWTH, 3);
        bn_specs(&mut s, &format!("{p}.bn2"), ENCODER_GROWTH);
        c += ENCODER_GROWTH;
    }
    for (i, &out) in DECODER_WIDTHS.iter().enumerate() {
        let p = format!("fusion.dec{}", i + 1);
        conv_specs(&mut s, &format!("{p}.conv1"), out, c, 1);
        bn_specs(&mut s, &format!("{p}.bn1"), out);
        conv_specs(&mut s, &format!("{p}.conv2"), out, out, 1);
        bn_specs(&mut s, &format!("{p}.bn2"), out);
        c = out;
    }
    conv_specs(&mut s, "fusion.dec4.conv1", FINAL_HIDDEN, c, 1);
    bn_specs(&mut s, "fusion.dec4.bn1", FINAL_HIDDEN);
    conv_specs(&mut s, "fusion.dec4.conv2", samples, FINAL_HIDDEN, 1);
    s
}

/// Window size `S` encoded by a fusion weight set (rows of the output layer).
pub fn infer_window_size(w: &NetworkWeights) -> Result<usize> {
    let out = w.get("fusion.dec4.conv2.weight")?;
    let s = out.shape()[0];
    if s == 0 || s % 2 == 0 {
        return format(format!("fusion output layer has {s} rows; window size must be odd"));
    }
    Ok(s)
}

#[derive(Clone, Debug)]
pub struct FusionNet {
    weights: NetworkWeights,
    samples: usize,
}

impl FusionNet {
    pub fn new(weights: NetworkWeights) -> Result<Self> {
        if weights.arch() != Architecture::Fusion {
            return domain(format!("expected fusion weights, got {}", weights.arch().name()));
        }
        weights.validate()?;
        let samples = infer_window_size(&weights)?;
        Ok(Self { weights, samples })
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn weights(&self) -> &NetworkWeights {
        &self.weights
    }

    /// Predicted updates `v*` as an `(S, H, W)` tensor with entries in `[-1, 1]`.
    pub fn predict_updates(&self, features: &FeatureStack) -> Result<Tensor> {
        self.predict_traced(&features.tensor, None)
    }

    /// Like [`Self::predict_updates`], but the per-ray decoder runs only
    /// where `rays` is true; other rays get 0. Values at kept rays are
    /// identical to the full evaluation since every decoder layer is 1x1.
    pub fn predict_rays(&self, features: &FeatureStack, rays: &[bool]) -> Result<Tensor> {
        let (_, h, w) = features.tensor.chw()?;
        if rays.len() != h * w {
            return domain(format!("ray mask has {} entries for a {w}x{h} input", rays.len()));
        }
        let keep: Vec<usize> = (0..h * w).filter(|&i| rays[i]).collect();
        let mut out = Tensor::zeros(vec![self.samples, h, w]);
        if keep.is_empty() {
            return Ok(out);
        }
        let enc = self.encode(&features.tensor, &mut None)?;
        if keep.len() == h * w {
            return self.decode(enc, &mut None);
        }
        let (c, n) = (enc.shape()[0], keep.len());
        let mut packed = Vec::with_capacity(c * n);
        for ch in 0..c {
            let plane = enc.channel(ch);
            packed.extend(keep.iter().map(|&i| plane[i]));
        }
        let dec = self.decode(Tensor::from_parts(vec![c, 1, n], packed), &mut None)?;
        for s in 0..self.samples {
            let (src, dst) = (dec.channel(s), &mut out.data_mut()[s * h * w..(s + 1) * h * w]);
            for (&i, &v) in keep.iter().zip(src) {
                dst[i] = v;
            }
        }
        Ok(out)
    }

    pub fn predict_traced(&self, input: &Tensor, mut trace: Option<&mut Trace>) -> Result<Tensor> {
        let x = self.encode(input, &mut trace)?;
        self.decode(x, &mut trace)
    }

    fn encode(&self, input: &Tensor, trace: &mut Option<&mut Trace>) -> Result<Tensor> {
        let (c, _, _) = input.chw()?;
        if c != 2 * self.samples + 2 {
            return domain(format!("fusion network expects {} channels, got {c}", 2 * self.samples + 2));
        }
        record(trace, "fusion.input", input);
        let w = &self.weights;
        let mut x = Tensor::with_channel_capacity(input, ENCODER_BLOCKS * ENCODER_GROWTH);
        for b in 1..=ENCODER_BLOCKS {
            let p = format!("fusion.enc{b}");
            let y = conv_act_bn(w, &p, "1", &x, trace)?;
            let y = conv_act_bn(w, &p, "2", &y, trace)?;
            x.append_channels(&y)?;
            record(trace, &format!("{p}.out"), &x);
        }
        Ok(x)
    }

    fn decode(&self, mut x: Tensor, trace: &mut Option<&mut Trace>) -> Result<Tensor> {
        let w = &self.weights;
        for b in 1..=DECODER_WIDTHS.len() {
            let p = format!("fusion.dec{b}");
            x = conv_act_bn(w, &p, "1", &x, trace)?;
            x = conv_act_bn(w, &p, "2", &x, trace)?;
        }
        x = conv_act_bn(w, "fusion.dec4", "1", &x, trace)?;
        let mut out = Conv::from(w, "fusion.dec4.conv2")?.forward(&x)?;
        out.data_mut().iter_mut().for_each(|v| *v = v.tanh());
        record(trace, "fusion.dec4.conv2", &out);
        Ok(out)
    }
}

fn conv_act_bn(
    w: &NetworkWeights,
    prefix: &str,
    layer: &str,
    x: &Tensor,
    trace: &mut Option<&mut Trace>,
) -> Result<Tensor> {
    let ep = Epilogue {
        leaky_slope: Some(LEAKY_SLOPE),
        affine: Some(BatchNorm::from(w, &format!("{prefix}.bn{layer}"))?.affine()?),
    };
    let y = Conv::from(w, &format!("{prefix}.conv{layer}"))?.forward_fused(x, &ep)?;
    record(trace, &format!("{prefix}.conv{layer}"), &y);
    Ok(y)
}

pub fn predict_updates(features: &FeatureStack, weights: &NetworkWeights) -> Result<Tensor> {
    FusionNet::new(weights.clone())?.predict_updates(features)
}

pub fn random_fusion_weights(samples: usize, seed: u64) -> NetworkWeights {
    crate::routing::random_weights(Architecture::Fusion, &fusion_schedule(samples), seed)
}

/// Weights whose output ignores the input and reproduces the projective
/// truncated-distance ramp `-(j - S/2) / (S/2)` along every ray, so the learned
/// pipeline behaves like standard fusion centered on the routed depth.
pub fn projective_fusion_weights(samples: usize) -> NetworkWeights {
    let half = (samples / 2) as f32;
    let tensors = fusion_schedule(samples)
        .into_iter()
        .map(|spec| {
            let mut t = Tensor::zeros(spec.shape.clone());
            if spec.name.ends_with(".var") || spec.name.ends_with(".gamma") {
                t.data_mut().iter_mut().for_each(|x| *x = 1.0);
            }
            if spec.name == "fusion.dec4.conv2.bias" {
                for (j, b) in t.data_mut().iter_mut().enumerate() {
                    let target = if half == 0.0 { 0.0 } else { -(j as f32 - half) / half };
                    *b = if target.abs() >= 1.0 { 10.0 * target.signum() } else { target.atanh() };
                }
            }
            (spec.name, t)
        })
        .collect();
    NetworkWeights::new(Architecture::Fusion, tensors).expect("schedule names are unique")
}

/// Settings of the learned pipeline.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PipelineConfig {
    pub confidence_threshold: f32,
    pub filter_period: u64,
    pub weight_floor: f32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
            filter_period: DEFAULT_FILTER_PERIOD,
            weight_floor: DEFAULT_WEIGHT_FLOOR,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct StageTimings {
    pub routing_ms: f64,
    pub extraction_ms: f64,
    pub fusion_ms: f64,
    pub integration_ms: f64,
    pub post_filter_ms: f64,
}

impl StageTimings {
    pub fn total_ms(&self) -> f64 {
        self.routing_ms + self.extraction_ms + self.fusion_ms + self.integration_ms + self.post_filter_ms
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct FrameStats {
    pub frame: u64,
    pub valid_rays: usize,
    pub rejected_rays: usize,
    pub voxels_touched: usize,
    pub reset_voxels: usize,
    pub timings: StageTimings,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// Learned fusion state: both networks, settings, and the frame counter that
/// drives the periodic post-filter.
#[derive(Clone, Debug)]
pub struct LearnedFusion {
    routing: RoutingNet,
    fusion: FusionNet,
    config: PipelineConfig,
    frames: u64,
}

impl LearnedFusion {
    pub fn new(routing: RoutingNet, fusion: FusionNet, config: PipelineConfig) -> Result<Self> {
        if !(0.0..=1.0).contains(&config.confidence_threshold) {
            return domain("confidence threshold must be in [0, 1]");
        }
        if config.filter_period == 0 {
            return domain("post-filter period must be at least 1");
        }
        Ok(Self { routing, fusion, config, frames: 0 })
    }

    pub fn with_defaults(routing: NetworkWeights, fusion: NetworkWeights) -> Result<Self> {
        let fusion = FusionNet::new(fusion)?;
        if fusion.samples() != DEFAULT_WINDOW_SAMPLES {
            log::info!("fusion weights use a window of {} samples", fusion.samples());
        }
        Self::new(RoutingNet::new(routing)?, fusion, PipelineConfig::default())
    }

    pub fn samples(&self) -> usize {
        self.fusion.samples()
    }

    pub fn frames_fused(&self) -> u64 {
        self.frames
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    /// Runs the four processing stages on one raw depth frame and, on
    /// post-filter boundaries, the low-weight reset.
    pub fn fuse_frame(&mut self, volume: &mut TsdfVolume, frame: &DepthFrame) -> Result<FrameStats> {
        let t0 = Instant::now();
        let (routed, confidence) = self.routing.route(&frame.depth)?;
        let t1 = Instant::now();
        let mut window = extract(volume, &routed, &frame.intrinsics, &frame.pose, self.samples())?;
        let observed = window.valid_count();
        let features = assemble_features(&mut window, &routed, &confidence, self.config.confidence_threshold)?;
        let t2 = Instant::now();
        let updates = self.fusion.predict_rays(&features, window.valid())?;
        let t3 = Instant::now();
        let st = integrate(volume, &window, updates.data())?;
        let t4 = Instant::now();
        self.frames += 1;
        let reset = post_filter(volume, self.frames, self.config.filter_period, self.config.weight_floor)?;
        let t5 = Instant::now();
        let valid = window.valid_count();
        Ok(FrameStats {
            frame: self.frames,
            valid_rays: valid,
            rejected_rays: observed - valid,
            voxels_touched: st.voxels_touched,
            reset_voxels: reset,
            timings: StageTimings {
                routing_ms: ms(t1 - t0),
                extraction_ms: ms(t2 - t1),
                fusion_ms: ms(t3 - t2),
                integration_ms: ms(t4 - t3),
                post_filter_ms: ms(t5 - t4),
            },
        })
    }
}

/// One-shot form of [`LearnedFusion::fuse_frame`] for callers that keep the
/// frame counter themselves.
#[allow(clippy::too_many_arguments)]
pub fn fuse_frame(
    volume: &mut TsdfVolume,
    raw_depth: &DepthMap,
    intrinsics: &crate::geometry::CameraIntrinsics,
    pose: &crate::geometry::Pose,
    routing_weights: &NetworkWeights,
    fusion_weights: &NetworkWeights,
    config: PipelineConfig,
    frame_counter: u64,
) -> Result<FrameStats> {
    let mut p = LearnedFusion::new(
        RoutingNet::new(routing_weights.clone())?,
        FusionNet::new(fusion_weights.clone())?,
        config,
    )?;
    p.frames = frame_counter;
    let frame = DepthFrame::new(raw_depth.clone(), *intrinsics, *pose)?;
    p.fuse_frame(volume, &frame)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CameraIntrinsics, Pose};
    use crate::routing::{passthrough_routing_weights, random_routing_weights};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn schedule_channel_growth() {
        let s = fusion_schedule(9);
        let first = s.iter().find(|t| t.name == "fusion.enc1.conv1.weight").unwrap();
        assert_eq!(first.shape, vec![20, 20, 3, 3]);
        let enc4 = s.iter().find(|t| t.name == "fusion.enc4.conv1.weight").unwrap();
        assert_eq!(enc4.shape, vec![20, 80, 3, 3]);
        let dec1 = s.iter().find(|t| t.name == "fusion.dec1.conv1.weight").unwrap();
        assert_eq!(dec1.shape, vec![80, 100, 1, 1]);
        let dec4 = s.iter().find(|t| t.name == "fusion.dec4.conv1.weight").unwrap();
        assert_eq!(dec4.shape, vec![20, 40, 1, 1]);
        let out = s.iter().find(|t| t.name == "fusion.dec4.conv2.weight").unwrap();
        assert_eq!(out.shape, vec![9, 20, 1, 1]);
    }

    #[test]
    fn output_in_range_and_shape() {
        let net = FusionNet::new(random_fusion_weights(9, 1)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data: Vec<f32> = (0..20 * 10 * 14).map(|_| rng.random_range(-5.0..5.0)).collect();
        let fs = FeatureStack { tensor: Tensor::new(vec![20, 10, 14], data).unwrap(), samples: 9 };
        let out = net.predict_updates(&fs).unwrap();
        assert_eq!(out.shape(), &[9, 10, 14]);
        assert!(out.data().iter().all(|v| (-1.0..=1.0).contains(v)));

        let bad = FeatureStack { tensor: Tensor::zeros(vec![18, 4, 4]), samples: 8 };
        assert!(net.predict_updates(&bad).is_err());
    }

    #[test]
    fn ray_subset_matches_full_prediction() {
        let net = FusionNet::new(random_fusion_weights(9, 4)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (h, w) = (40, 60);
        let data: Vec<f32> = (0..20 * h * w).map(|_| rng.random_range(-2.0..2.0)).collect();
        let fs = FeatureStack { tensor: Tensor::new(vec![20, h, w], data).unwrap(), samples: 9 };
        let full = net.predict_updates(&fs).unwrap();
        for density in [0.0, 0.3, 1.0] {
            let rays: Vec<bool> = (0..h * w).map(|_| rng.random_bool(density)).collect();
            let sub = net.predict_rays(&fs, &rays).unwrap();
            assert_eq!(sub.shape(), full.shape());
            for s in 0..9 {
                for (i, &keep) in rays.iter().enumerate() {
                    let (a, b) = (sub.channel(s)[i], full.channel(s)[i]);
                    assert_eq!(a.to_bits(), if keep { b.to_bits() } else { 0 }, "sample {s} ray {i}");
                }
            }
        }
        assert!(net.predict_rays(&fs, &[true; 3]).is_err());
    }

    #[test]
    fn projective_weights_emit_ramp() {
        let net = FusionNet::new(projective_fusion_weights(9)).unwrap();
        let fs = FeatureStack { tensor: Tensor::zeros(vec![20, 2, 2]), samples: 9 };
        let out = net.predict_updates(&fs).unwrap();
        for j in 0..9 {
            let expect = -(j as f32 - 4.0) / 4.0;
            assert!(out.channel(j).iter().all(|&v| (v - expect).abs() < 1e-6), "j={j}");
        }
    }

    #[test]
    fn window_size_follows_weights() {
        for s in [3, 5, 9, 11] {
            let net = FusionNet::new(random_fusion_weights(s, 0)).unwrap();
            assert_eq!(net.samples(), s);
        }
        assert!(FusionNet::new(random_routing_weights(0)).is_err());
    }

    #[test]
    fn all_rejected_frame_leaves_volume_unchanged() {
        let mut vol = TsdfVolume::centered([32, 32, 32], [0.0, 0.0, 0.6], 0.008).unwrap();
        vol.values_mut().iter_mut().enumerate().for_each(|(i, v)| *v = ((i % 13) as f32 - 6.0) / 6.0);
        vol.weights_mut().iter_mut().for_each(|w| *w = 1.0);
        let before = vol.clone();
        let mut p = LearnedFusion::with_defaults(passthrough_routing_weights(0.5), random_fusion_weights(9, 3)).unwrap();
        let k = CameraIntrinsics::centered(30.0, 16, 12).unwrap();
        let frame = DepthFrame::new(DepthMap::filled(16, 12, 0.6).unwrap(), k, Pose::identity()).unwrap();
        let st = p.fuse_frame(&mut vol, &frame).unwrap();
        assert_eq!(vol, before);
        assert_eq!(p.frames_fused(), 1);
        assert_eq!(st.valid_rays, 0);
        assert_eq!(st.rejected_rays, 16 * 12);
        assert_eq!(st.voxels_touched, 0);
    }

    #[test]
    fn stats_report_every_stage() {
        let mut vol = TsdfVolume::centered([32, 32, 32], [0.0, 0.0, 0.6], 0.008).unwrap();
        let mut p =
            LearnedFusion::with_defaults(passthrough_routing_weights(0.99), projective_fusion_weights(9)).unwrap();
        let k = CameraIntrinsics::centered(30.0, 16, 12).unwrap();
        let frame = DepthFrame::new(DepthMap::filled(16, 12, 0.6).unwrap(), k, Pose::identity()).unwrap();
        let st = p.fuse_frame(&mut vol, &frame).unwrap();
        let json = serde_json::to_value(st.timings).unwrap();
        for key in ["routing_ms", "extraction_ms", "fusion_ms", "integration_ms"] {
            assert!(json.get(key).is_some());
        }
        assert_eq!(st.valid_rays, 16 * 12);
        assert!(st.voxels_touched > 0);
    }
}
