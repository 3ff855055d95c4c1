//! Depth routing network: a depth-one U-Net with a shared encoder and two
//! decoders predicting a denoised depth map and a per-pixel confidence.
//!
//! Layer schedule (all 3x3 convolutions use padding 1, no normalization):
//!
//! | layer                      | shape            | activation |
//! |----------------------------|------------------|------------|
//! | `routing.enc1.conv1`       | 1 -> 32, 3x3     | leaky ReLU |
//! | `routing.enc1.conv2`       | 32 -> 32, 3x3    | leaky ReLU |
//! | max-pool 2x2               |                  |            |
//! | `routing.bottleneck.conv1` | 32 -> 64, 3x3    | leaky ReLU |
//! | `routing.bottleneck.conv2` | 64 -> 64, 3x3    | leaky ReLU |
//! | per decoder `dec_depth` / `dec_conf`: upsample 2x, concat `[up(64), skip(32)]` |
//! | `routing.<dec>.conv1`      | 96 -> 32, 3x3    | leaky ReLU |
//! | `routing.<dec>.conv2`      | 32 -> 32, 3x3    | leaky ReLU |
//! | `routing.<dec>.head`       | 32 -> 1, 1x1     | linear (depth) / sigmoid (confidence) |

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use crate::depth::{ConfidenceMap, DepthMap};
use crate::error::{domain, Result};
use crate::nn::{
    concat_channels, conv2d_fused, conv_specs, max_pool2, record, upsample_nearest2, Architecture, Conv, Epilogue,
    NetworkWeights, Tensor, TensorSpec, Trace, LEAKY_SLOPE,
};

const ENC: usize = 32;
const BOTTLENECK: usize = 64;
const DEC: usize = 32;
const DECODERS: [&str; 2] = ["dec_depth", "dec_conf"];

/// Confidence floor keeping `-log c` finite.
pub const MIN_CONFIDENCE: f32 = 1e-6;

pub fn routing_schedule() -> Vec<TensorSpec> {
    let mut s = Vec::new();
    conv_specs(&mut s, "routing.enc1.conv1", ENC, 1, 3);
    conv_specs(&mut s, "routing.enc1.conv2", ENC, ENC, 3);
    conv_specs(&mut s, "routing.bottleneck.conv1", BOTTLENECK, ENC, 3);
    conv_specs(&mut s, "routing.bottleneck.conv2", BOTTLENECK, BOTTLENECK, 3);
    for d in DECODERS {
        conv_specs(&mut s, &format!("routing.{d}.conv1"), DEC, BOTTLENECK + ENC, 3);
        conv_specs(&mut s, &format!("routing.{d}.conv2"), DEC, DEC, 3);
        conv_specs(&mut s, &format!("routing.{d}.head"), 1, DEC, 1);
    }
    s
}

/// Inference wrapper around validated routing weights.
#[derive(Clone, Debug)]
pub struct RoutingNet {
    weights: NetworkWeights,
    // both decoders' first convolutions read the same input; stacked, they
    // run as one layer
    dec_conv1: (Tensor, Vec<f32>),
}

impl RoutingNet {
    pub fn new(weights: NetworkWeights) -> Result<Self> {
        if weights.arch() != Architecture::Routing {
            return domain(format!("expected routing weights, got {}", weights.arch().name()));
        }
        weights.validate()?;
        let mut kernel = Vec::new();
        let mut bias = Vec::new();
        for d in DECODERS {
            let c = Conv::from(&weights, &format!("routing.{d}.conv1"))?;
            kernel.extend_from_slice(c.weight.data());
            bias.extend_from_slice(c.bias);
        }
        let kernel = Tensor::from_parts(vec![2 * DEC, BOTTLENECK + ENC, 3, 3], kernel);
        Ok(Self { weights, dec_conv1: (kernel, bias) })
    }

    pub fn weights(&self) -> &NetworkWeights {
        &self.weights
    }

    /// Denoised depth and confidence for `depth`; missing values enter the network as 0.
    pub fn route(&self, depth: &DepthMap) -> Result<(DepthMap, ConfidenceMap)> {
        self.route_traced(depth, None)
    }

    pub fn route_traced(&self, depth: &DepthMap, mut trace: Option<&mut Trace>) -> Result<(DepthMap, ConfidenceMap)> {
        let (w, h) = (depth.width(), depth.height());
        if w % 2 != 0 || h % 2 != 0 {
            return domain(format!("routing needs even image dimensions, got {w}x{h}"));
        }
        let input = Tensor::from_parts(vec![1, h, w], depth.zero_filled());
        record(&mut trace, "routing.input", &input);
        let wt = &self.weights;

        let mut x = conv_act(wt, "routing.enc1.conv1", &input, &mut trace)?;
        x = conv_act(wt, "routing.enc1.conv2", &x, &mut trace)?;
        let skip = x;
        let pooled = max_pool2(&skip)?;
        let mut b = conv_act(wt, "routing.bottleneck.conv1", &pooled, &mut trace)?;
        b = conv_act(wt, "routing.bottleneck.conv2", &b, &mut trace)?;
        let up = upsample_nearest2(&b)?;
        let merged = concat_channels(&up, &skip)?;

        let both = conv2d_fused(&merged, &self.dec_conv1.0, &self.dec_conv1.1, 1, 1, &LEAKY)?;
        let mut heads = Vec::with_capacity(2);
        for (i, d) in DECODERS.into_iter().enumerate() {
            let mut y = both.channels(i * DEC..(i + 1) * DEC)?;
            record(&mut trace, &format!("routing.{d}.conv1"), &y);
            y = conv_act(wt, &format!("routing.{d}.conv2"), &y, &mut trace)?;
            heads.push(Conv::from(wt, &format!("routing.{d}.head"))?.forward(&y)?);
        }
        let conf_logits = heads.pop().unwrap();
        let depth_out = heads.pop().unwrap();
        let conf: Vec<f32> = conf_logits
            .data()
            .iter()
            .map(|&z| (1.0 / (1.0 + (-z).exp())).clamp(MIN_CONFIDENCE, 1.0))
            .collect();
        record(&mut trace, "routing.dec_depth.head", &depth_out);
        record(&mut trace, "routing.dec_conf.head", &Tensor::from_parts(vec![1, h, w], conf.clone()));
        Ok((DepthMap::new(w, h, depth_out.into_data())?, ConfidenceMap::new(w, h, conf)?))
    }
}

const LEAKY: Epilogue = Epilogue { leaky_slope: Some(LEAKY_SLOPE), affine: None };

fn conv_act(w: &NetworkWeights, name: &str, x: &Tensor, trace: &mut Option<&mut Trace>) -> Result<Tensor> {
    let y = Conv::from(w, name)?.forward_fused(x, &LEAKY)?;
    record(trace, name, &y);
    Ok(y)
}

/// Convenience wrapper matching the free-function form.
pub fn route(depth: &DepthMap, weights: &NetworkWeights) -> Result<(DepthMap, ConfidenceMap)> {
    RoutingNet::new(weights.clone())?.route(depth)
}

/// He-initialized weights with small random biases.
pub fn random_routing_weights(seed: u64) -> NetworkWeights {
    random_weights(Architecture::Routing, &routing_schedule(), seed)
}

/// Weights that copy the input depth through unchanged (missing stays 0) and
/// report a constant confidence.
pub fn passthrough_routing_weights(confidence: f32) -> NetworkWeights {
    let c = confidence.clamp(MIN_CONFIDENCE, 1.0 - 1e-6);
    let logit = (c / (1.0 - c)).ln();
    let tensors = routing_schedule()
        .into_iter()
        .map(|spec| {
            let mut t = Tensor::zeros(spec.shape.clone());
            let center = |t: &mut Tensor, o: usize, i: usize| {
                let s = t.shape().to_vec();
                let idx = ((o * s[1] + i) * s[2] + s[2] / 2) * s[3] + s[3] / 2;
                t.data_mut()[idx] = 1.0;
            };
            match spec.name.as_str() {
                "routing.enc1.conv1.weight"
                | "routing.enc1.conv2.weight"
                | "routing.dec_depth.conv2.weight"
                | "routing.dec_depth.head.weight" => center(&mut t, 0, 0),
                "routing.dec_depth.conv1.weight" => center(&mut t, 0, BOTTLENECK),
                "routing.dec_conf.head.bias" => t.data_mut()[0] = logit,
                _ => {}
            }
            (spec.name, t)
        })
        .collect();
    NetworkWeights::new(Architecture::Routing, tensors).expect("schedule names are unique")
}

pub(crate) fn random_weights(arch: Architecture, schedule: &[TensorSpec], seed: u64) -> NetworkWeights {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tensors = schedule
        .iter()
        .map(|spec| {
            let n: usize = spec.shape.iter().product();
            let name = &spec.name;
            let data: Vec<f32> = if name.ends_with(".weight") {
                let fan_in: usize = spec.shape[1..].iter().product();
                let std = (2.0 / fan_in as f32).sqrt();
                let dist = Normal::new(0.0, std).unwrap();
                (0..n).map(|_| dist.sample(&mut rng)).collect()
            } else if name.ends_with(".var") {
                (0..n).map(|_| 0.5 + rand::Rng::random::<f32>(&mut rng)).collect()
            } else if name.ends_with(".gamma") {
                (0..n).map(|_| 0.8 + 0.4 * rand::Rng::random::<f32>(&mut rng)).collect()
            } else {
                let dist = Normal::new(0.0, 0.05f32).unwrap();
                (0..n).map(|_| dist.sample(&mut rng)).collect()
            };
            (name.clone(), Tensor::from_parts(spec.shape.clone(), data))
        })
        .collect();
    NetworkWeights::new(arch, tensors).expect("schedule names are unique")
}
