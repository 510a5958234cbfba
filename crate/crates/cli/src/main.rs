use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use skinweights::autodiff::{AdamConfig, DEFAULT_LEARNING_RATE, DEFAULT_WEIGHT_DECAY};
use skinweights::hgraph::{GraphConfig, HeterGraph, DEFAULT_GEO_CAP, DEFAULT_GEO_THRESHOLD, DEFAULT_INVERSE_EPS, DEFAULT_K};
use skinweights::hollowdist::{compute_all_detailed, FieldSummary, VertexBoneDistances};
use skinweights::hskinnet::{prepare_rig, train, DistanceMode, HyperParams, Model, TrainConfig, TrainSample};
use skinweights::rigcore::{load_rig, load_weights, save_weights, DEFAULT_MERGE_TOLERANCE};
use skinweights::skinlab::{self, EvalReport, PoseFile, DEFAULT_POSE_COUNT, DEFAULT_TAU};
use skinweights::synthgen::{self, SynthConfig};
use skinweights::voxelize::{build_rig_grid, voxelize_surface, VoxelExport, DEFAULT_RESOLUTION};
use skinweights::{Error, Real, Rig, WeightRows};

#[derive(Parser)]
#[command(name = "skinweights", version, about = "Skin-weight prediction for rigged characters")]
struct Cli {
    /// Worker threads for per-bone and per-rig parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic rigs with ground-truth weights.
    Synth(SynthArgs),
    /// Voxelize a rig's surface and dump the grid.
    Voxelize(GridArgs),
    /// Hollow distances from every vertex to every bone.
    Hollowdist(GridArgs),
    /// Build the vertex/bone graph and dump its summary.
    Graph(GraphArgs),
    Train(TrainArgs),
    Predict(PredictArgs),
    Eval(EvalArgs),
    /// Pose a rig with linear blend skinning and write an OBJ.
    Deform(DeformArgs),
    #[command(subcommand)]
    Stats(StatsCommand),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
    resolution: usize,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long)]
    rig: PathBuf,
    #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
    resolution: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GraphArgs {
    #[arg(long)]
    rig: PathBuf,
    #[arg(long)]
    dist: PathBuf,
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    #[arg(long, default_value_t = DEFAULT_GEO_THRESHOLD)]
    geo_threshold: f64,
    #[arg(long, default_value_t = DEFAULT_GEO_CAP)]
    geo_cap: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Distance {
    Hollow,
    Euclidean,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Full,
    Compact,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    epochs: usize,
    #[arg(long, default_value_t = DEFAULT_LEARNING_RATE)]
    lr: f64,
    #[arg(long, default_value_t = DEFAULT_WEIGHT_DECAY)]
    wd: f64,
    #[arg(long = "lambda-s", default_value_t = 0.4)]
    lambda_s: f64,
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    #[arg(long, value_enum, default_value_t = Distance::Hollow)]
    distance: Distance,
    #[arg(long)]
    no_smoothing: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Layer widths: `full` or the narrow `compact` set.
    #[arg(long, value_enum, default_value_t = Preset::Full)]
    preset: Preset,
    #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
    resolution: usize,
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch loss log (JSON lines); defaults to `<out>.loss.jsonl`.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    rig: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    /// Weights file, or a rig bundle carrying weights.
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    rig: PathBuf,
    #[arg(long, default_value_t = DEFAULT_POSE_COUNT)]
    poses: usize,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct DeformArgs {
    #[arg(long)]
    rig: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    pose: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum StatsCommand {
    /// Weight coverage by the K nearest bones, K = 1..kmax.
    Topk {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 8)]
        kmax: usize,
        #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
        resolution: usize,
        #[arg(long, default_value_t = DEFAULT_TAU)]
        tau: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Failure split by exit code: bad input (1) or failed computation (2).
enum Failure {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<Error>() {
            Some(
                Error::Schema(_)
                | Error::IndexOutOfRange { .. }
                | Error::Skeleton(_)
                | Error::WeightSum { .. }
                | Error::Weights(_)
                | Error::InvalidArgument(_),
            ) => Failure::Validation(e),
            _ => Failure::Runtime(e),
        }
    }
}

type Outcome = Result<(), Failure>;

fn invalid(msg: impl std::fmt::Display) -> Failure {
    Failure::Validation(anyhow!("{msg}"))
}

/// Loading an input that fails for any reason is a validation error.
fn input<T>(what: &str, path: &Path, r: skinweights::Result<T>) -> Result<T, Failure> {
    r.map_err(|e| Failure::Validation(anyhow::Error::new(e).context(format!("reading {what} {}", path.display()))))
}

fn load_input_rig(path: &Path) -> Result<Rig, Failure> {
    input("rig", path, load_rig(path))
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> anyhow::Result<()> {
    let mut s = serde_json::to_string(value)?;
    s.push('\n');
    write_text(path, &s)
}

fn check_resolution(r: usize) -> Result<(), Failure> {
    if r < 4 {
        return Err(invalid(format!("--resolution {r} must be at least 4")));
    }
    Ok(())
}

fn merged(rig: &Rig) -> (Rig, Vec<usize>) {
    rig.merged(DEFAULT_MERGE_TOLERANCE)
}

fn cmd_synth(a: SynthArgs) -> Outcome {
    if a.count == 0 {
        return Err(invalid("--count must be at least 1"));
    }
    check_resolution(a.resolution)?;
    let cfg = SynthConfig { resolution: a.resolution, seed: a.seed, ..Default::default() };
    let files = synthgen::gen_dataset(a.count, &cfg, a.seed, &a.out).map_err(anyhow::Error::new)?;
    eprintln!("wrote {} rigs to {}", files.len(), a.out.display());
    Ok(())
}

fn cmd_voxelize(a: GridArgs) -> Outcome {
    check_resolution(a.resolution)?;
    let (rig, _) = merged(&load_input_rig(&a.rig)?);
    let mut grid = build_rig_grid(&rig, a.resolution).map_err(anyhow::Error::new)?;
    voxelize_surface(&rig.mesh, &mut grid);
    write_json(&a.out, &VoxelExport::from_grid(&grid))?;
    Ok(())
}

#[derive(Serialize, serde::Deserialize)]
struct DistanceDump {
    resolution: usize,
    vertices: usize,
    bones: usize,
    /// Row per merged vertex.
    distances: Vec<Vec<f64>>,
    fields: Vec<FieldSummary>,
}

fn cmd_hollowdist(a: GridArgs) -> Outcome {
    check_resolution(a.resolution)?;
    let (rig, _) = merged(&load_input_rig(&a.rig)?);
    let mut grid = build_rig_grid(&rig, a.resolution).map_err(anyhow::Error::new)?;
    voxelize_surface(&rig.mesh, &mut grid);
    let (d, fields) = compute_all_detailed(&rig, &grid).map_err(anyhow::Error::new)?;
    let dump = DistanceDump {
        resolution: a.resolution,
        vertices: d.vertex_count(),
        bones: d.bone_count(),
        distances: d.rows().map(<[Real]>::to_vec).collect(),
        fields,
    };
    write_json(&a.out, &dump)?;
    Ok(())
}

fn cmd_graph(a: GraphArgs) -> Outcome {
    if a.k == 0 || !(a.geo_threshold > 0.0) {
        return Err(invalid("--k must be ≥ 1 and --geo-threshold positive"));
    }
    let (rig, _) = merged(&load_input_rig(&a.rig)?);
    let text = fs::read_to_string(&a.dist).map_err(|e| invalid(format!("reading {}: {e}", a.dist.display())))?;
    let dump: DistanceDump = serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", a.dist.display())))?;
    let d = input("distances", &a.dist, VertexBoneDistances::from_rows(dump.distances))?;
    let cfg = GraphConfig { k: a.k, geo_threshold: a.geo_threshold, geo_cap: a.geo_cap, inverse_eps: DEFAULT_INVERSE_EPS };
    let g = HeterGraph::build(&rig.mesh, &rig.skeleton, &d, &cfg).map_err(anyhow::Error::new)?;
    write_json(&a.out, &g.summary())?;
    Ok(())
}

fn dataset_rigs(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let files = input("dataset", dir, synthgen::read_manifest(dir))?;
    if files.is_empty() {
        return Err(invalid(format!("{} lists no rigs", dir.display())));
    }
    Ok(files)
}

#[derive(Serialize)]
struct LossRecord {
    epoch: usize,
    loss: f64,
    data: f64,
    smooth: f64,
}

fn cmd_train(a: TrainArgs) -> Outcome {
    check_resolution(a.resolution)?;
    let mut hyper = match a.preset {
        Preset::Full => HyperParams::full(),
        Preset::Compact => HyperParams::compact(),
    };
    hyper.k = a.k;
    hyper.lambda_s = a.lambda_s;
    hyper.smoothing = !a.no_smoothing;
    hyper.resolution = a.resolution;
    hyper.distance = match a.distance {
        Distance::Hollow => DistanceMode::Hollow,
        Distance::Euclidean => DistanceMode::Euclidean,
    };
    hyper.validate().map_err(|e| Failure::Validation(e.into()))?;
    if !(a.lr > 0.0) || !(a.wd >= 0.0) {
        return Err(invalid("--lr must be positive and --wd non-negative"));
    }

    let files = dataset_rigs(&a.data)?;
    let rigs = files.iter().map(|f| load_input_rig(f)).collect::<Result<Vec<_>, _>>()?;
    if let Some(r) = rigs.iter().find(|r| r.weights.is_none()) {
        return Err(invalid(format!("rig {} has no ground-truth weights", r.name)));
    }
    let samples = rigs
        .par_iter()
        .map(|rig| {
            let p = prepare_rig(rig, &hyper)?;
            TrainSample::new(rig.name.clone(), &p.graph, p.rig.weights.as_ref().expect("checked above"))
        })
        .collect::<skinweights::Result<Vec<_>>>()
        .map_err(anyhow::Error::new)?;

    let cfg = TrainConfig {
        epochs: a.epochs,
        seed: a.seed,
        adam: AdamConfig { lr: a.lr, weight_decay: a.wd, ..Default::default() },
    };
    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".loss.jsonl");
        PathBuf::from(p)
    });
    let mut log = String::new();
    let outcome = train(&samples, &hyper, &cfg, |r| {
        let rec = LossRecord { epoch: r.epoch, loss: r.mean_loss, data: r.mean_data, smooth: r.mean_smooth };
        log.push_str(&serde_json::to_string(&rec).expect("record serializes"));
        log.push('\n');
        eprintln!("epoch {} loss {:.6}", r.epoch, r.mean_loss);
    })
    .map_err(anyhow::Error::new)?;
    write_text(&log_path, &log)?;
    write_text(&a.out, &outcome.model.to_json())?;
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> Outcome {
    let model: Model<Real> = input("model", &a.model, Model::load(&a.model))?;
    let rig = load_input_rig(&a.rig)?;
    let w = model.predict(&rig).map_err(anyhow::Error::new)?;
    save_weights(&w, &a.out).map_err(anyhow::Error::new)?;
    Ok(())
}

fn load_gt(path: &Path) -> Result<WeightRows, Failure> {
    if let Ok(w) = load_weights(path) {
        return Ok(w);
    }
    let rig = load_input_rig(path)?;
    rig.weights.ok_or_else(|| invalid(format!("{} carries no weights", path.display())))
}

fn cmd_eval(a: EvalArgs) -> Outcome {
    if a.poses == 0 || !(a.tau > 0.0) {
        return Err(invalid("--poses must be ≥ 1 and --tau positive"));
    }
    let rig = load_input_rig(&a.rig)?;
    let pred: WeightRows = input("weights", &a.pred, load_weights(&a.pred))?;
    let gt = load_gt(&a.gt)?;
    let n = rig.mesh.vertex_count();
    if pred.len() != n || gt.len() != n {
        return Err(invalid(format!("weights have {} and {} rows; rig has {n} vertices", pred.len(), gt.len())));
    }
    let poses = skinlab::sample_poses(&rig.skeleton, a.poses, a.seed).map_err(anyhow::Error::new)?;
    let m = skinlab::evaluate(&rig, &pred, &gt, &poses, a.tau).map_err(|e| Failure::from(anyhow::Error::new(e)))?;
    write_json(&a.report, &EvalReport::from_rigs(vec![m]))?;
    Ok(())
}

fn cmd_deform(a: DeformArgs) -> Outcome {
    let rig = load_input_rig(&a.rig)?;
    let w: WeightRows = input("weights", &a.weights, load_weights(&a.weights))?;
    let pose = input("pose", &a.pose, PoseFile::load(&a.pose))?;
    let pose = input("pose", &a.pose, pose.to_pose(rig.skeleton.bone_count()))?;
    let t = skinlab::forward_kinematics(&rig.skeleton, &pose).map_err(anyhow::Error::new)?;
    let v = skinlab::lbs_deform(&rig.mesh, &w, &t).map_err(|e| Failure::from(anyhow::Error::new(e)))?;
    let mut obj = Vec::new();
    for p in &v {
        writeln!(obj, "v {} {} {}", p[0], p[1], p[2]).expect("write to memory");
    }
    for t in &rig.mesh.triangles {
        writeln!(obj, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1).expect("write to memory");
    }
    write_text(&a.out, &String::from_utf8(obj).expect("ascii"))?;
    Ok(())
}

fn cmd_stats_topk(data: &Path, kmax: usize, resolution: usize, tau: f64, out: &Path) -> Outcome {
    if kmax == 0 || !(tau > 0.0) {
        return Err(invalid("--kmax must be ≥ 1 and --tau positive"));
    }
    check_resolution(resolution)?;
    let files = dataset_rigs(data)?;
    let rigs = files.iter().map(|f| load_input_rig(f)).collect::<Result<Vec<_>, _>>()?;
    let mut pairs = Vec::new();
    for rig in &rigs {
        let (m, _) = merged(rig);
        let w = m.weights.clone().ok_or_else(|| invalid(format!("rig {} has no weights", rig.name)))?;
        let mut grid = build_rig_grid(&m, resolution).map_err(anyhow::Error::new)?;
        voxelize_surface(&m.mesh, &mut grid);
        let d = skinweights::hollowdist::compute_all(&m, &grid).map_err(anyhow::Error::new)?;
        pairs.push((w, d));
    }
    let refs: Vec<_> = pairs.iter().map(|(w, d)| (w, d)).collect();
    let cov = skinlab::topk_coverage(&refs, kmax, tau).map_err(anyhow::Error::new)?;
    let mut csv = String::from("k,mass,influence\n");
    for k in 0..kmax {
        csv.push_str(&format!("{},{},{}\n", k + 1, cov.mass[k], cov.influence[k]));
    }
    write_text(out, &csv)?;
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(invalid("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Failure::Runtime(e.into()))?;
    }
    match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Voxelize(a) => cmd_voxelize(a),
        Command::Hollowdist(a) => cmd_hollowdist(a),
        Command::Graph(a) => cmd_graph(a),
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Deform(a) => cmd_deform(a),
        Command::Stats(StatsCommand::Topk { data, kmax, resolution, tau, out }) => {
            cmd_stats_topk(&data, kmax, resolution, tau, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

