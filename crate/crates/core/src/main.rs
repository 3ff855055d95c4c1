use std::collections::BTreeMap;
use std::fmt::Display;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::Vector3;

use depthfuse::baseline::{integrate_frame_standard, DEFAULT_TRUNCATION_VOXELS};
use depthfuse::config::Config;
use depthfuse::eval::{evaluate, marching_cubes};
use depthfuse::fusion::{projective_fusion_weights, random_fusion_weights, FusionNet, LearnedFusion, PipelineConfig};
use depthfuse::geometry::{read_trajectory, write_trajectory, TrajectoryEntry};
use depthfuse::nn::{max_activation_diff, read_activation_dump, Architecture, NetworkWeights, Trace};
use depthfuse::routing::{passthrough_routing_weights, random_routing_weights, RoutingNet};
use depthfuse::synth::{
    add_noise, mesh_to_gt_tsdf, read_manifest, render_views, sphere_poses, write_manifest, ManifestEntry, NoiseKind,
    NoiseModel,
};
use depthfuse::window::{
    DEFAULT_CONFIDENCE_THRESHOLD, DEFAULT_FILTER_PERIOD, DEFAULT_WEIGHT_FLOOR, DEFAULT_WINDOW_SAMPLES,
};
use depthfuse::{CameraIntrinsics, DepthFrame, DepthMap, Error, TriangleMesh, TsdfVolume};

const DEFAULT_DEPTH_SCALE: f32 = 5000.0;
const DEFAULT_GRID: [usize; 3] = [128, 128, 128];
const DEFAULT_VOXEL: f64 = depthfuse::volume::DEFAULT_VOXEL_SIZE;

#[derive(Parser)]
#[command(name = "depthfuse", version, about = "Depth-map fusion into TSDF volumes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset (depth maps, trajectory, ground-truth volume).
    Synth(SynthArgs),
    /// Fuse a dataset into a volume.
    Fuse(FuseArgs),
    /// Compare an estimated volume against ground truth.
    Eval(EvalArgs),
    /// Extract the zero level set as a binary PLY mesh.
    Mesh(MeshArgs),
    /// Write a built-in network weight file.
    Weights(WeightsArgs),
    /// Re-run a network on the input stored in an activation dump and report the largest difference.
    Parity(ParityArgs),
}

#[derive(Args, Default)]
struct Common {
    /// `key = value` config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    voxel_size: Option<f64>,
    /// Grid dimensions X,Y,Z.
    #[arg(long)]
    grid: Option<String>,
    /// Grid center X,Y,Z in meters.
    #[arg(long)]
    center: Option<String>,
    /// Raw units per meter for 16-bit PNG depth.
    #[arg(long)]
    depth_scale: Option<f32>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// PLY or OBJ mesh; overrides --shape.
    #[arg(long)]
    mesh: Option<PathBuf>,
    /// sphere | box | torus
    #[arg(long)]
    shape: Option<String>,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    views: Option<usize>,
    /// Camera distance from the grid center.
    #[arg(long)]
    distance: Option<f64>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    focal: Option<f64>,
    /// multiplicative | speckle
    #[arg(long)]
    noise: Option<String>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    speckle_fraction: Option<f64>,
    /// png | rfdpt
    #[arg(long)]
    depth_format: Option<String>,
    /// Window size; sets the ground-truth normalization half-width to (s-1)/2 voxels.
    #[arg(long)]
    s: Option<usize>,
}

#[derive(Args)]
struct FuseArgs {
    #[command(flatten)]
    common: Common,
    /// Dataset directory with manifest.txt and trajectory.txt.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Output volume (RFVOL).
    #[arg(long)]
    out: Option<PathBuf>,
    /// tsdf | learned
    #[arg(long)]
    mode: Option<String>,
    /// Window samples per ray (odd).
    #[arg(long)]
    s: Option<usize>,
    /// Confidence threshold; rays below it are dropped.
    #[arg(long)]
    cthr: Option<f32>,
    /// Truncation in voxels for --mode tsdf.
    #[arg(long)]
    trunc: Option<u32>,
    /// RFWTS routing weights; default is the passthrough preset.
    #[arg(long)]
    routing_weights: Option<PathBuf>,
    /// RFWTS fusion weights; default is the projective preset.
    #[arg(long)]
    fusion_weights: Option<PathBuf>,
    /// Frames between low-weight resets.
    #[arg(long)]
    post_filter_period: Option<u64>,
    /// Voxels with 0 < W below this are reset.
    #[arg(long)]
    post_filter_floor: Option<f32>,
    /// Fuse every Nth frame.
    #[arg(long)]
    stride: Option<usize>,
    /// Take the grid from an existing volume instead of --grid/--voxel-size/--center.
    #[arg(long)]
    like: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    est: Option<PathBuf>,
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Also write the JSON record here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MeshArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    volume: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    iso: Option<f32>,
}

#[derive(Args)]
struct WeightsArgs {
    /// passthrough-routing | projective-fusion | random-routing | random-fusion
    #[arg(long)]
    preset: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    s: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Constant confidence of the passthrough routing preset.
    #[arg(long)]
    confidence: Option<f32>,
}

#[derive(Args)]
struct ParityArgs {
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    dump: PathBuf,
    /// Fail when the largest absolute difference exceeds this.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f32,
}

/// Failure with the process exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(msg: impl Display) -> Self {
        Self { code: 2, message: msg.to_string() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io(_) | Error::Format(_) => 3,
            Error::Domain(_) => 4,
        };
        Self { code, message: e.to_string() }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Fuse(a) => cmd_fuse(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Mesh(a) => cmd_mesh(a),
        Command::Weights(a) => cmd_weights(a),
        Command::Parity(a) => cmd_parity(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load_config(path: Option<&Path>) -> CliResult<Config> {
    match path {
        None => Ok(Config::default()),
        Some(p) => Config::load(p).map_err(|e| match e {
            Error::Io(io) => Failure { code: 3, message: format!("{}: {io}", p.display()) },
            other => Failure::config(other),
        }),
    }
}

fn set<T: Display>(cfg: &mut Config, key: &str, v: &Option<T>) {
    if let Some(v) = v {
        cfg.set(key, v);
    }
}

fn set_path(cfg: &mut Config, key: &str, v: &Option<PathBuf>) {
    if let Some(v) = v {
        cfg.set(key, v.display());
    }
}

fn apply_common(cfg: &mut Config, c: &Common) {
    set(cfg, "seed", &c.seed);
    set(cfg, "voxel_size", &c.voxel_size);
    set(cfg, "grid", &c.grid);
    set(cfg, "center", &c.center);
    set(cfg, "depth_scale", &c.depth_scale);
}

/// Typed config lookups where a bad value is a configuration error.
trait Get {
    /// Value of `key`, or `default`, which is then recorded so the written
    /// effective config is complete.
    fn val<T: std::str::FromStr + std::fmt::Display>(&mut self, key: &str, default: T) -> CliResult<T>;
    fn opt<T: std::str::FromStr>(&self, key: &str) -> CliResult<Option<T>>;
    fn path(&self, key: &str) -> CliResult<PathBuf>;
}

impl Get for Config {
    fn val<T: std::str::FromStr + std::fmt::Display>(&mut self, key: &str, default: T) -> CliResult<T> {
        if self.get_str(key).is_none() {
            self.set(key, &default);
        }
        self.get_or(key, default).map_err(Failure::config)
    }

    fn opt<T: std::str::FromStr>(&self, key: &str) -> CliResult<Option<T>> {
        self.get(key).map_err(Failure::config)
    }

    fn path(&self, key: &str) -> CliResult<PathBuf> {
        self.get_str(key)
            .map(PathBuf::from)
            .ok_or_else(|| Failure::config(format!("missing required setting '{key}'")))
    }
}

fn grid_volume(cfg: &mut Config) -> CliResult<TsdfVolume> {
    let dims = cfg.get_array::<usize, 3>("grid").map_err(Failure::config)?.unwrap_or(DEFAULT_GRID);
    let center = cfg.get_array::<f64, 3>("center").map_err(Failure::config)?.unwrap_or([0.0; 3]);
    cfg.set("grid", format!("{},{},{}", dims[0], dims[1], dims[2]));
    cfg.set("center", format!("{},{},{}", center[0], center[1], center[2]));
    let vs = cfg.val("voxel_size", DEFAULT_VOXEL)?;
    TsdfVolume::centered(dims, center, vs).map_err(Failure::config)
}

fn write_config_file(path: &Path, cfg: &Config) -> CliResult<()> {
    std::fs::write(path, cfg.to_text()).map_err(|e| Failure::from(Error::Io(e)))
}

fn io(e: std::io::Error) -> Failure {
    Error::Io(e).into()
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn cmd_synth(a: SynthArgs) -> CliResult<()> {
    let mut cfg = load_config(a.common.config.as_deref())?;
    apply_common(&mut cfg, &a.common);
    set_path(&mut cfg, "out", &a.out);
    set_path(&mut cfg, "mesh", &a.mesh);
    set(&mut cfg, "shape", &a.shape);
    set(&mut cfg, "radius", &a.radius);
    set(&mut cfg, "views", &a.views);
    set(&mut cfg, "distance", &a.distance);
    set(&mut cfg, "width", &a.width);
    set(&mut cfg, "height", &a.height);
    set(&mut cfg, "focal", &a.focal);
    set(&mut cfg, "noise", &a.noise);
    set(&mut cfg, "sigma", &a.sigma);
    set(&mut cfg, "speckle_fraction", &a.speckle_fraction);
    set(&mut cfg, "depth_format", &a.depth_format);
    set(&mut cfg, "s", &a.s);

    let out = cfg.path("out")?;
    let template = grid_volume(&mut cfg)?;
    let center: Vector3<f64> = cfg.get_array::<f64, 3>("center").map_err(Failure::config)?.unwrap_or([0.0; 3]).into();
    let mesh = match cfg.get_str("mesh") {
        Some(p) => TriangleMesh::load(Path::new(p))?,
        None => {
            let r = cfg.val("radius", 0.3)?;
            match cfg.val("shape", String::from("sphere"))?.as_str() {
                "sphere" => TriangleMesh::icosphere(center, r, 4),
                "box" => TriangleMesh::cuboid(center, Vector3::new(r, 0.8 * r, 0.6 * r))
                    .rotated(Vector3::new(1.0, 2.0, 0.5), 0.6, center),
                "torus" => TriangleMesh::torus(center, r, 0.35 * r, 64, 32).rotated(Vector3::x(), 0.9, center),
                other => return Err(Failure::config(format!("unknown shape '{other}'"))),
            }
        }
    };
    let views = cfg.val("views", 20usize)?;
    let (w, h) = (cfg.val("width", 320usize)?, cfg.val("height", 240usize)?);
    let focal = cfg.val("focal", 260.0f64)?;
    let distance = cfg.val("distance", 1.2f64)?;
    let seed = cfg.val("seed", 0u64)?;
    let kind: NoiseKind = cfg.val("noise", String::from("multiplicative"))?.parse().map_err(Failure::config)?;
    let mut noise = match kind {
        NoiseKind::Multiplicative => NoiseModel::multiplicative(0.0, seed),
        NoiseKind::Speckle => NoiseModel::speckle(0.0, seed),
    };
    noise.sigma = cfg.val("sigma", 0.0)?;
    noise.speckle_fraction = cfg.val("speckle_fraction", noise.speckle_fraction)?;
    noise.validate().map_err(Failure::config)?;
    let format = cfg.val("depth_format", String::from("png"))?;
    if format != "png" && format != "rfdpt" {
        return Err(Failure::config(format!("unknown depth format '{format}'")));
    }
    let scale = cfg.val("depth_scale", DEFAULT_DEPTH_SCALE)?;
    let s = cfg.val("s", DEFAULT_WINDOW_SAMPLES)?;
    if s < 2 {
        return Err(Failure::config("s must be at least 2"));
    }

    let k = CameraIntrinsics::centered(focal, w, h).map_err(Failure::config)?;
    let poses = sphere_poses(center, distance, views)?;
    std::fs::create_dir_all(out.join("depth")).map_err(io)?;
    let t0 = Instant::now();
    let depths = render_views(&mesh, &k, &poses);
    let mut entries = Vec::new();
    let mut manifest = Vec::new();
    for (i, (depth, pose)) in depths.iter().zip(&poses).enumerate() {
        let frame_noise = noise.reseeded(seed.wrapping_add((i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)));
        let noisy = add_noise(depth, &frame_noise)?;
        let rel = PathBuf::from("depth").join(format!("{i:06}.{format}"));
        noisy.save(&out.join(&rel), scale)?;
        entries.push(TrajectoryEntry {
            frame_id: format!("{i:06}"),
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            pose: *pose,
        });
        manifest.push(ManifestEntry { depth_path: rel, trajectory_line: i + 1 });
    }
    write_trajectory(&out.join("trajectory.txt"), &entries)?;
    std::fs::write(out.join("manifest.txt"), write_manifest(&manifest)).map_err(io)?;
    let gt = mesh_to_gt_tsdf(&mesh, &template, (s as f64 - 1.0) / 2.0)?;
    gt.volume.save(&out.join("gt.rfvol"))?;
    mesh.save_ply(&out.join("mesh.ply"))?;
    cfg.set("gt_signed", gt.signed);
    write_config_file(&out.join("synth.config.txt"), &cfg)?;
    log::info!("rendered {views} views and ground truth into {} in {:.1} s", out.display(), t0.elapsed().as_secs_f64());
    Ok(())
}

fn load_frames(dataset: &Path, stride: usize, depth_scale: f32) -> CliResult<Vec<DepthFrame>> {
    let manifest = read_manifest(&dataset.join("manifest.txt"))?;
    let traj = read_trajectory(&dataset.join("trajectory.txt"))?;
    let mut frames = Vec::new();
    for entry in manifest.iter().step_by(stride) {
        let t = traj.get(entry.trajectory_line - 1).ok_or_else(|| {
            Failure::from(Error::Format(format!("manifest refers to missing trajectory entry {}", entry.trajectory_line)))
        })?;
        let depth = DepthMap::load(&dataset.join(&entry.depth_path), depth_scale)?;
        let k = t.intrinsics(depth.width(), depth.height())?;
        frames.push(DepthFrame::new(depth, k, t.pose)?);
    }
    Ok(frames)
}

fn cmd_fuse(a: FuseArgs) -> CliResult<()> {
    let mut cfg = load_config(a.common.config.as_deref())?;
    apply_common(&mut cfg, &a.common);
    set_path(&mut cfg, "dataset", &a.dataset);
    set_path(&mut cfg, "out", &a.out);
    set(&mut cfg, "mode", &a.mode);
    set(&mut cfg, "s", &a.s);
    set(&mut cfg, "cthr", &a.cthr);
    set(&mut cfg, "trunc", &a.trunc);
    set_path(&mut cfg, "routing_weights", &a.routing_weights);
    set_path(&mut cfg, "fusion_weights", &a.fusion_weights);
    set(&mut cfg, "post_filter_period", &a.post_filter_period);
    set(&mut cfg, "post_filter_floor", &a.post_filter_floor);
    set(&mut cfg, "stride", &a.stride);
    set_path(&mut cfg, "like", &a.like);

    let dataset = cfg.path("dataset")?;
    let out = cfg.path("out")?;
    let mode = cfg.val("mode", String::from("learned"))?;
    let stride = cfg.val("stride", 1usize)?;
    if stride == 0 {
        return Err(Failure::config("stride must be at least 1"));
    }
    let scale = cfg.val("depth_scale", DEFAULT_DEPTH_SCALE)?;
    let mut volume = match cfg.get_str("like") {
        Some(p) => TsdfVolume::like(&TsdfVolume::load(Path::new(p))?),
        None => grid_volume(&mut cfg)?,
    };
    cfg.set("mode", &mode);
    cfg.set("stride", stride);

    let mut stats = Vec::new();
    match mode.as_str() {
        "tsdf" => {
            let trunc = cfg.val("trunc", DEFAULT_TRUNCATION_VOXELS)?;
            if trunc == 0 {
                return Err(Failure::config("trunc must be at least 1"));
            }
            cfg.set("trunc", trunc);
            write_config_file(&sibling(&out, ".config.txt"), &cfg)?;
            let frames = load_frames(&dataset, stride, scale)?;
            for (i, f) in frames.iter().enumerate() {
                let t = Instant::now();
                let st = integrate_frame_standard(&mut volume, f, trunc)?;
                stats.push(serde_json::json!({
                    "frame": i + 1,
                    "valid_rays": st.valid_rays,
                    "samples": st.samples,
                    "total_ms": t.elapsed().as_secs_f64() * 1e3,
                }));
            }
        }
        "learned" => {
            let routing = match cfg.get_str("routing_weights") {
                Some(p) => NetworkWeights::load(Path::new(p))?,
                None => passthrough_routing_weights(1.0),
            };
            let fusion = match cfg.get_str("fusion_weights") {
                Some(p) => NetworkWeights::load(Path::new(p))?,
                None => projective_fusion_weights(cfg.val("s", DEFAULT_WINDOW_SAMPLES)?),
            };
            let fusion = FusionNet::new(fusion)?;
            if let Some(s) = cfg.opt::<usize>("s")? {
                if s != fusion.samples() {
                    return Err(Failure::config(format!(
                        "s = {s} but the fusion weights expect a window of {}",
                        fusion.samples()
                    )));
                }
            }
            let pc = PipelineConfig {
                confidence_threshold: cfg.val("cthr", DEFAULT_CONFIDENCE_THRESHOLD)?,
                filter_period: cfg.val("post_filter_period", DEFAULT_FILTER_PERIOD)?,
                weight_floor: cfg.val("post_filter_floor", DEFAULT_WEIGHT_FLOOR)?,
            };
            cfg.set("s", fusion.samples());
            cfg.set("cthr", pc.confidence_threshold);
            cfg.set("post_filter_period", pc.filter_period);
            cfg.set("post_filter_floor", pc.weight_floor);
            let mut pipeline = LearnedFusion::new(RoutingNet::new(routing)?, fusion, pc).map_err(Failure::config)?;
            write_config_file(&sibling(&out, ".config.txt"), &cfg)?;
            let frames = load_frames(&dataset, stride, scale)?;
            for f in &frames {
                let st = pipeline.fuse_frame(&mut volume, f)?;
                stats.push(serde_json::to_value(st).expect("stats serialize"));
            }
        }
        other => return Err(Failure::config(format!("unknown mode '{other}' (expected tsdf or learned)"))),
    }
    volume.save(&out)?;
    let mut f = std::fs::File::create(sibling(&out, ".stats.jsonl")).map_err(io)?;
    for s in &stats {
        writeln!(f, "{s}").map_err(io)?;
    }
    let observed = volume.weights().iter().filter(|&&w| w > 0.0).count();
    log::info!("fused {} frames ({mode}); {observed} voxels observed; wrote {}", stats.len(), out.display());
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> CliResult<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    set_path(&mut cfg, "est", &a.est);
    set_path(&mut cfg, "gt", &a.gt);
    set_path(&mut cfg, "out", &a.out);
    let (est_p, gt_p) = (cfg.path("est")?, cfg.path("gt")?);
    let est = TsdfVolume::load(&est_p)?;
    let gt = TsdfVolume::load(&gt_p)?;
    let mut meta = BTreeMap::new();
    meta.insert("est".to_string(), est_p.display().to_string());
    meta.insert("gt".to_string(), gt_p.display().to_string());
    meta.insert("dims".to_string(), format!("{:?}", est.dims()));
    meta.insert("voxel_size".to_string(), est.voxel_size().to_string());
    let rec = evaluate(&est, &gt, meta)?;
    let json = rec.to_json();
    println!("{json}");
    if let Some(p) = cfg.get_str("out") {
        std::fs::write(p, format!("{json}\n")).map_err(io)?;
        write_config_file(&sibling(Path::new(p), ".config.txt"), &cfg)?;
    }
    Ok(())
}

fn cmd_mesh(a: MeshArgs) -> CliResult<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    set_path(&mut cfg, "volume", &a.volume);
    set_path(&mut cfg, "out", &a.out);
    set(&mut cfg, "iso", &a.iso);
    let vol = TsdfVolume::load(&cfg.path("volume")?)?;
    let out = cfg.path("out")?;
    let iso = cfg.val("iso", 0.0f32)?;
    cfg.set("iso", iso);
    let mesh = marching_cubes(&vol, iso);
    mesh.save_ply(&out)?;
    write_config_file(&sibling(&out, ".config.txt"), &cfg)?;
    log::info!("{} vertices, {} triangles -> {}", mesh.vertices().len(), mesh.faces().len(), out.display());
    Ok(())
}

fn cmd_weights(a: WeightsArgs) -> CliResult<()> {
    let s = a.s.unwrap_or(DEFAULT_WINDOW_SAMPLES);
    let seed = a.seed.unwrap_or(0);
    let w = match a.preset.as_str() {
        "passthrough-routing" => passthrough_routing_weights(a.confidence.unwrap_or(1.0)),
        "projective-fusion" => projective_fusion_weights(s),
        "random-routing" => random_routing_weights(seed),
        "random-fusion" => random_fusion_weights(s, seed),
        other => return Err(Failure::config(format!("unknown preset '{other}'"))),
    };
    w.save(&a.out)?;
    Ok(())
}

fn cmd_parity(a: ParityArgs) -> CliResult<()> {
    let weights = NetworkWeights::load(&a.weights)?;
    let dump = read_activation_dump(&std::fs::read(&a.dump).map_err(io)?)?;
    if dump.arch() != weights.arch() {
        return Err(Failure::config("dump and weights describe different networks"));
    }
    let mut trace = Trace::new();
    match weights.arch() {
        Architecture::Routing => {
            let input = dump.get("routing.input")?;
            let (_, h, w) = input.chw()?;
            let depth = DepthMap::new(w, h, input.data().to_vec())?;
            RoutingNet::new(weights)?.route_traced(&depth, Some(&mut trace))?;
        }
        Architecture::Fusion => {
            let input = dump.get("fusion.input")?;
            let net = FusionNet::new(weights)?;
            net.predict_traced(input, Some(&mut trace))?;
        }
    }
    let diff = max_activation_diff(&dump, &trace)?;
    println!("{{\"layers\":{},\"max_abs_diff\":{diff}}}", trace.len());
    if diff > a.tolerance {
        return Err(Failure { code: 4, message: format!("max difference {diff} exceeds {}", a.tolerance) });
    }
    Ok(())
}
