use depthfuse::fusion::{random_fusion_weights, FusionNet};
use depthfuse::nn::{max_activation_diff, read_activation_dump, write_activation_dump, Architecture, Tensor, Trace};
use depthfuse::routing::{random_routing_weights, RoutingNet};
use depthfuse::{DepthMap, NetworkWeights, TsdfVolume};
use proptest::prelude::*;

fn volume_strategy() -> impl Strategy<Value = TsdfVolume> {
    (1usize..6, 1usize..6, 1usize..6, 0.001f32..1.0).prop_flat_map(|(x, y, z, vs)| {
        let n = x * y * z;
        (prop::collection::vec(-1.0f32..=1.0, n), prop::collection::vec(0.0f32..50.0, n)).prop_map(move |(v, w)| {
            let mut vol = TsdfVolume::new([x, y, z], [-0.5, 0.25, 1.0], vs).unwrap();
            vol.values_mut().copy_from_slice(&v);
            vol.weights_mut().copy_from_slice(&w);
            vol
        })
    })
}

proptest! {
    #[test]
    fn volume_bytes_round_trip(vol in volume_strategy()) {
        prop_assert_eq!(TsdfVolume::from_bytes(&vol.to_bytes()).unwrap(), vol);
    }

    #[test]
    fn volume_rejects_truncation(vol in volume_strategy(), cut in 1usize..16) {
        let b = vol.to_bytes();
        prop_assert!(TsdfVolume::from_bytes(&b[..b.len() - cut.min(b.len())]).is_err());
    }

    #[test]
    fn rfdpt_round_trip(w in 1usize..12, h in 1usize..12, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data = (0..w * h).map(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.1f32..8.0) }).collect();
        let d = DepthMap::new(w, h, data).unwrap();
        prop_assert_eq!(DepthMap::from_bytes(&d.to_bytes()).unwrap(), d);
    }
}

#[test]
fn png_depth_round_trips_at_millimeter_scale() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("d.png");
    let d = DepthMap::new(4, 2, vec![0.0, 0.5, 1.0, 1.2345, 2.0, 3.0, 0.0, 6.5]).unwrap();
    d.save(&p, 1000.0).unwrap();
    let back = DepthMap::load(&p, 1000.0).unwrap();
    for (a, b) in d.data().iter().zip(back.data()) {
        assert!((a - b).abs() <= 0.5e-3, "{a} vs {b}");
    }
    assert_eq!(back.data()[0], 0.0);
}

#[test]
fn weight_files_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    for (w, name) in [(random_routing_weights(1), "r.rfwts"), (random_fusion_weights(9, 2), "f.rfwts")] {
        let p = tmp.path().join(name);
        w.save(&p).unwrap();
        assert_eq!(NetworkWeights::load(&p).unwrap(), w);
    }
}

#[test]
fn weight_file_with_missing_tensor_is_rejected() {
    let w = random_routing_weights(1);
    let kept: Vec<(String, Tensor)> = w.tensors()[1..].to_vec();
    let partial = NetworkWeights::new(Architecture::Routing, kept).unwrap();
    assert!(NetworkWeights::from_bytes(&partial.to_bytes()).is_err());
    assert!(RoutingNet::new(partial).is_err());
}

fn routing_trace() -> Trace {
    let depth = DepthMap::new(20, 14, (0..280).map(|i| if i % 23 == 0 { 0.0 } else { 1.0 + (i % 7) as f32 * 0.1 }).collect())
        .unwrap();
    let mut trace = Trace::new();
    RoutingNet::new(random_routing_weights(8)).unwrap().route_traced(&depth, Some(&mut trace)).unwrap();
    trace
}

#[test]
fn routing_dump_round_trip_has_zero_difference() {
    let trace = routing_trace();
    assert!(trace.iter().any(|(n, _)| n == "routing.input"));
    let dump = read_activation_dump(&write_activation_dump(Architecture::Routing, &trace).unwrap()).unwrap();
    assert_eq!(dump.arch(), Architecture::Routing);
    assert_eq!(max_activation_diff(&dump, &trace).unwrap(), 0.0);
}

#[test]
fn perturbed_dump_exceeds_parity_tolerance() {
    let mut trace = routing_trace();
    let dump = read_activation_dump(&write_activation_dump(Architecture::Routing, &trace).unwrap()).unwrap();
    let mid = trace.len() / 2;
    trace[mid].1.data_mut()[3] += 2e-4;
    let diff = max_activation_diff(&dump, &trace).unwrap();
    assert!(diff > 1e-4 && diff < 3e-4, "{diff}");
}

#[test]
fn fusion_dump_replays_from_its_input() {
    let net = FusionNet::new(random_fusion_weights(9, 3)).unwrap();
    let input = Tensor::new(vec![20, 6, 5], (0..20 * 30).map(|i| ((i * 37 % 101) as f32 / 50.0) - 1.0).collect())
        .unwrap();
    let mut trace = Trace::new();
    net.predict_traced(&input, Some(&mut trace)).unwrap();
    let dump = read_activation_dump(&write_activation_dump(Architecture::Fusion, &trace).unwrap()).unwrap();
    let mut replay = Trace::new();
    net.predict_traced(dump.get("fusion.input").unwrap(), Some(&mut replay)).unwrap();
    assert_eq!(replay.len(), trace.len());
    assert_eq!(max_activation_diff(&dump, &replay).unwrap(), 0.0);
}

#[test]
fn dump_missing_a_layer_is_an_error() {
    let trace = routing_trace();
    let partial: Trace = trace[..trace.len() - 1].to_vec();
    let dump = read_activation_dump(&write_activation_dump(Architecture::Routing, &partial).unwrap()).unwrap();
    assert!(max_activation_diff(&dump, &trace).is_err());
}
