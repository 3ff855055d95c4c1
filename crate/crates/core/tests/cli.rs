use std::path::Path;
use std::process::{Command, Output};

use depthfuse::nn::Architecture;
use depthfuse::{NetworkWeights, TriangleMesh, TsdfVolume};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_depthfuse")).current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    run(dir, args).status.code().unwrap()
}

const SMALL: &[&str] = &[
    "--grid", "32,32,32", "--voxel-size", "0.015", "--views", "3", "--width", "64", "--height", "48", "--focal", "55",
    "--sigma", "0.005", "--seed", "2",
];

fn synth(dir: &Path, extra: &[&str]) {
    let mut args = vec!["synth", "--out", "ds"];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    ok(dir, &args);
}

#[test]
fn synth_writes_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), &[]);
    let ds = tmp.path().join("ds");
    for f in ["manifest.txt", "trajectory.txt", "gt.rfvol", "mesh.ply", "synth.config.txt", "depth/000000.png", "depth/000002.png"] {
        assert!(ds.join(f).exists(), "missing {f}");
    }
    let gt = TsdfVolume::load(&ds.join("gt.rfvol")).unwrap();
    assert_eq!(gt.dims(), [32, 32, 32]);
    assert!(gt.values().iter().all(|v| (-1.0..=1.0).contains(v)));
    let manifest = std::fs::read_to_string(ds.join("manifest.txt")).unwrap();
    assert_eq!(manifest.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#')).count(), 3);
    let cfg = std::fs::read_to_string(ds.join("synth.config.txt")).unwrap();
    for key in ["seed", "grid", "voxel_size", "shape", "noise", "depth_format", "s"] {
        assert!(cfg.lines().any(|l| l.split('=').next().unwrap().trim() == key), "{key} not recorded in\n{cfg}");
    }
}

#[test]
fn fuse_eval_mesh_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(d, &["--depth-format", "rfdpt", "--shape", "sphere", "--radius", "0.15"]);
    ok(d, &["fuse", "--dataset", "ds", "--like", "ds/gt.rfvol", "--mode", "tsdf", "--out", "t.rfvol"]);
    ok(d, &["fuse", "--dataset", "ds", "--like", "ds/gt.rfvol", "--out", "l.rfvol"]);
    for v in ["t.rfvol", "l.rfvol"] {
        let vol = TsdfVolume::load(&d.join(v)).unwrap();
        assert!(vol.weights().iter().any(|&w| w > 0.0), "{v} is empty");
        assert!(d.join(format!("{v}.config.txt")).exists());
    }

    let json = ok(d, &["eval", "--est", "t.rfvol", "--gt", "ds/gt.rfvol", "--out", "t.json"]);
    let rec: serde_json::Value = serde_json::from_str(json.trim()).unwrap();
    let written: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("t.json")).unwrap()).unwrap();
    assert_eq!(rec, written);
    assert_eq!(rec["all"]["voxels"].as_u64().unwrap(), 32 * 32 * 32);
    assert!(rec["all"]["mad"].as_f64().unwrap().is_finite());

    ok(d, &["mesh", "--volume", "t.rfvol", "--out", "t.ply"]);
    let mesh = TriangleMesh::load(&d.join("t.ply")).unwrap();
    assert!(mesh.faces().len() > 100);
    // the zero crossing sits on the analytic sphere to within a fraction of a voxel
    let errs: Vec<f64> = mesh.vertices().iter().map(|p| (p.norm() - 0.15).abs() / 0.015).collect();
    let mean = errs.iter().sum::<f64>() / errs.len() as f64;
    assert!(mean < 0.5, "mean vertex error {mean} voxels, max {}", errs.iter().cloned().fold(0.0, f64::max));
}

#[test]
fn weights_presets_load_with_their_architecture() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    for (preset, arch) in [
        ("passthrough-routing", Architecture::Routing),
        ("random-routing", Architecture::Routing),
        ("projective-fusion", Architecture::Fusion),
        ("random-fusion", Architecture::Fusion),
    ] {
        ok(d, &["weights", "--preset", preset, "--s", "7", "--out", "w.rfwts"]);
        assert_eq!(NetworkWeights::load(&d.join("w.rfwts")).unwrap().arch(), arch, "{preset}");
    }
    assert_eq!(code(d, &["weights", "--preset", "nope", "--out", "w.rfwts"]), 2);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    // configuration errors
    assert_eq!(code(d, &["fuse", "--out", "x.rfvol"]), 2);
    assert_eq!(code(d, &["synth", "--out", "ds", "--shape", "teapot"]), 2);
    assert_eq!(code(d, &["synth", "--out", "ds", "--views", "three"]), 2);
    std::fs::write(d.join("bad.txt"), "this line has no equals sign\n").unwrap();
    assert_eq!(code(d, &["synth", "--config", "bad.txt", "--out", "ds"]), 2);
    // io / format errors
    assert_eq!(code(d, &["mesh", "--volume", "missing.rfvol", "--out", "m.ply"]), 3);
    std::fs::write(d.join("junk.rfvol"), b"not a volume").unwrap();
    assert_eq!(code(d, &["mesh", "--volume", "junk.rfvol", "--out", "m.ply"]), 3);
    assert_eq!(code(d, &["eval", "--est", "junk.rfvol", "--gt", "junk.rfvol"]), 3);
    // numeric domain errors
    let a = TsdfVolume::centered([4, 4, 4], [0.0; 3], 0.1).unwrap();
    let b = TsdfVolume::centered([5, 4, 4], [0.0; 3], 0.1).unwrap();
    a.save(&d.join("a.rfvol")).unwrap();
    b.save(&d.join("b.rfvol")).unwrap();
    assert_eq!(code(d, &["eval", "--est", "a.rfvol", "--gt", "b.rfvol"]), 4);
}

#[test]
fn parity_command_accepts_matching_and_rejects_perturbed_dumps() {
    use depthfuse::nn::{write_activation_dump, Trace};
    use depthfuse::routing::{random_routing_weights, RoutingNet};
    use depthfuse::DepthMap;

    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let weights = random_routing_weights(5);
    weights.save(&d.join("r.rfwts")).unwrap();
    let depth = DepthMap::new(16, 12, (0..192).map(|i| 0.5 + (i % 17) as f32 * 0.03).collect()).unwrap();
    let mut trace = Trace::new();
    RoutingNet::new(weights).unwrap().route_traced(&depth, Some(&mut trace)).unwrap();
    std::fs::write(d.join("good.rfwts"), write_activation_dump(Architecture::Routing, &trace).unwrap()).unwrap();
    let out = ok(d, &["parity", "--weights", "r.rfwts", "--dump", "good.rfwts"]);
    assert!(out.contains("\"max_abs_diff\":0"), "{out}");

    let last = trace.len() - 1;
    trace[last].1.data_mut()[0] += 1e-3;
    std::fs::write(d.join("bad.rfwts"), write_activation_dump(Architecture::Routing, &trace).unwrap()).unwrap();
    assert_eq!(code(d, &["parity", "--weights", "r.rfwts", "--dump", "bad.rfwts"]), 4);
    // a routing dump against fusion weights is a configuration mismatch
    depthfuse::fusion::random_fusion_weights(5, 1).save(&d.join("f.rfwts")).unwrap();
    assert_eq!(code(d, &["parity", "--weights", "f.rfwts", "--dump", "good.rfwts"]), 2);
}
