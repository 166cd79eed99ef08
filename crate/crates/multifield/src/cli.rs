//! Scriptable pipeline: one binary with a subcommand per stage, a JSON
//! run configuration with flag overrides (flags win), and a JSON report
//! per command. Exit codes: 0 success, 2 configuration error, 3 data
//! error, 4 numeric failure.

use crate::features::{build_dataset, read_dataset, write_dataset, FeatureDataset, FeatureError};
use crate::field::{
    read_checkpoint, train_resume, write_checkpoint, Checkpoint, CheckpointMeta, FieldError,
    MimoConfig, MimoModel, TrainConfig, TrainState,
};
use crate::geom::{
    generate_shape, read_ply, sample_surface, shape_landmarks, write_obj, write_ply, GeomError,
    Pose, ShapeCategory, ShapeSpec, SpatialIndex, UnitQuat, Vec3,
};
use crate::grasp::{
    evaluate_grasp, fit_gmm, fit_gmm_bic, fuse_candidates, generate_candidates, label_candidates,
    read_candidates, refine_grasp, sample_gmm, select_task_relevant, train_evaluator,
    transfer_demo_to_canonical, write_candidates, write_evaluator, write_gmm, EmConfig,
    EvaluatorModel, EvaluatorTrainConfig, GraspCandidate, GraspError, GripperModel, Provenance,
    RefineConfig,
};
use crate::pose::{
    pose_descriptor, read_demonstration, transfer_pose, BpsSpec, PoseError, TransferConfig,
};
use crate::recon::{resample_reconstruction, MiseConfig, ReconError};
use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug, Parser)]
#[command(name = "multifield", version, about = "Implicit multi-feature field pipeline")]
pub struct Cli {
    /// JSON run configuration; omitted fields take defaults
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// override the configured seed
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// override the configured output directory
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// worker threads for parallel stages (0 = all cores)
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate procedural shapes and their feature datasets
    GenDataset,
    /// Train the multi-head field on a generated dataset
    Train,
    /// Evaluate a checkpoint: occupancy accuracy, reconstruction IoU,
    /// correspondence and self-transfer errors
    Eval,
    /// Reconstruct a mesh from an observed cloud
    Reconstruct,
    /// Transfer a demonstrated pose onto a novel cloud
    Transfer,
    /// Full grasp loop: candidates, labels, mixture, evaluator, trials
    GraspPipeline,
    /// Fit a pose mixture to stored grasp candidates
    FitGmm,
    /// Train the grasp evaluator on stored labeled candidates
    TrainEvaluator,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::GenDataset => "gen-dataset",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Reconstruct => "reconstruct",
            Command::Transfer => "transfer",
            Command::GraspPipeline => "grasp-pipeline",
            Command::FitGmm => "fit-gmm",
            Command::TrainEvaluator => "train-evaluator",
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapesBlock {
    /// mug, bowl or bottle
    pub category: String,
    pub count: usize,
}

impl Default for ShapesBlock {
    fn default() -> Self {
        Self {
            category: "mug".into(),
            count: 2,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainBlock {
    #[serde(flatten)]
    pub config: TrainConfig,
    /// continue a previous run from its checkpoint and optimizer state
    pub resume: bool,
}

impl Default for TrainBlock {
    fn default() -> Self {
        Self {
            config: TrainConfig::default(),
            resume: false,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalBlock {
    /// voxel grid resolution for the IoU metric
    pub iou_grid: usize,
    /// self-transfer solver settings
    pub transfer: TransferConfig,
    pub bps: BpsSpec,
    /// epochs for the four-branch vs occupancy-only comparison
    /// (0 skips the comparison)
    pub ab_epochs: usize,
}

impl Default for EvalBlock {
    fn default() -> Self {
        Self {
            iou_grid: 24,
            transfer: TransferConfig {
                restarts: 1,
                iterations: 150,
                ..TransferConfig::default()
            },
            bps: BpsSpec {
                n: 12,
                radius: 0.15,
                seed: 0,
            },
            ab_epochs: 0,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructBlock {
    /// observed cloud (PLY); omitted = sample the first configured shape
    pub cloud: Option<PathBuf>,
    pub mise: MiseConfig,
    /// points in the resampled output cloud
    pub resample_points: usize,
}

impl Default for ReconstructBlock {
    fn default() -> Self {
        Self {
            cloud: None,
            mise: MiseConfig::default(),
            resample_points: 1024,
        }
    }
}

#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferBlock {
    /// demonstration JSON (see the demonstration file format)
    pub demo: Option<PathBuf>,
    /// novel observed cloud (PLY)
    pub cloud: Option<PathBuf>,
    pub solver: TransferConfig,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraspBlock {
    pub gripper: GripperModel,
    /// heuristic candidates to generate on the canonical instance
    pub candidates: usize,
    /// random poses added so failures are represented during labeling
    pub negatives: usize,
    /// novel instances to run the end-to-end loop on
    pub trials: usize,
    /// mixture poses sampled and scored per trial
    pub samples_per_trial: usize,
    pub gmm_k_max: usize,
    pub em: EmConfig,
    pub evaluator: EvaluatorTrainConfig,
    pub refine: RefineConfig,
    /// observed-cloud points per instance
    pub cloud_points: usize,
    /// demonstration file; omitted = the best labeled success on the
    /// canonical instance doubles as the demonstration
    pub demo: Option<PathBuf>,
    /// candidates kept by descriptor similarity to the demonstration
    pub task_relevant_k: usize,
    /// basis points for pose descriptors
    pub bps: BpsSpec,
    /// solver for demo-to-canonical and per-trial pose transfer
    pub transfer: TransferConfig,
    /// demo-transfer restarts above this residual are discarded
    pub residual_cutoff: f64,
}

impl Default for GraspBlock {
    fn default() -> Self {
        Self {
            gripper: GripperModel::default(),
            candidates: 40,
            negatives: 40,
            trials: 5,
            samples_per_trial: 16,
            gmm_k_max: 3,
            em: EmConfig::default(),
            evaluator: EvaluatorTrainConfig::default(),
            refine: RefineConfig::default(),
            cloud_points: 256,
            demo: None,
            task_relevant_k: 20,
            bps: BpsSpec {
                n: 12,
                radius: 0.15,
                seed: 0,
            },
            transfer: TransferConfig {
                restarts: 2,
                iterations: 100,
                ..TransferConfig::default()
            },
            residual_cutoff: 1e6,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitGmmBlock {
    /// candidates file (JSON lines); default <out>/candidates.jsonl
    pub candidates: Option<PathBuf>,
    /// fixed component count; omitted = select by information criterion
    pub k: Option<usize>,
    pub k_max: usize,
    pub em: EmConfig,
}

impl Default for FitGmmBlock {
    fn default() -> Self {
        Self {
            candidates: None,
            k: None,
            k_max: 5,
            em: EmConfig::default(),
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainEvaluatorBlock {
    /// labeled candidates file; default <out>/candidates.jsonl
    pub candidates: Option<PathBuf>,
    /// observed cloud (PLY); omitted = sample the first configured shape
    pub cloud: Option<PathBuf>,
    pub gripper: GripperModel,
    pub config: EvaluatorTrainConfig,
}

impl Default for TrainEvaluatorBlock {
    fn default() -> Self {
        Self {
            candidates: None,
            cloud: None,
            gripper: GripperModel::default(),
            config: EvaluatorTrainConfig::default(),
        }
    }
}

/// The whole run configuration; every output embeds a snapshot of it so
/// experiments are reproducible from the report alone.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    /// 0 = one thread per core
    pub threads: usize,
    pub shapes: ShapesBlock,
    pub dataset: crate::features::DatasetConfig,
    pub model: MimoConfig,
    pub train: TrainBlock,
    pub eval: EvalBlock,
    pub reconstruct: ReconstructBlock,
    pub transfer: TransferBlock,
    pub grasp: GraspBlock,
    pub fit_gmm: FitGmmBlock,
    pub train_evaluator: TrainEvaluatorBlock,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            threads: 0,
            shapes: ShapesBlock::default(),
            dataset: crate::features::DatasetConfig::default(),
            model: MimoConfig::default(),
            train: TrainBlock::default(),
            eval: EvalBlock::default(),
            reconstruct: ReconstructBlock::default(),
            transfer: TransferBlock::default(),
            grasp: GraspBlock::default(),
            fit_gmm: FitGmmBlock::default(),
            train_evaluator: TrainEvaluatorBlock::default(),
        }
    }
}

/// Result record written next to every command's artifacts.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Report {
    pub command: String,
    pub config: RunConfig,
    pub metrics: BTreeMap<String, f64>,
    pub artifacts: Vec<String>,
    pub wall_clock_seconds: f64,
    pub version: String,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl From<GeomError> for CliError {
    fn from(e: GeomError) -> Self {
        match e {
            GeomError::InvalidParams { .. } | GeomError::UnknownCategory(_) => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<FeatureError> for CliError {
    fn from(e: FeatureError) -> Self {
        match e {
            FeatureError::Geom(g) | FeatureError::Shape { source: g, .. } => g.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<FieldError> for CliError {
    fn from(e: FieldError) -> Self {
        match e {
            FieldError::ConfigMismatch(_) => CliError::Config(e.to_string()),
            FieldError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ReconError> for CliError {
    fn from(e: ReconError) -> Self {
        match e {
            ReconError::InvalidConfig(_) | ReconError::InvalidCount => {
                CliError::Config(e.to_string())
            }
            ReconError::AllInside | ReconError::AllOutside => CliError::Numeric(e.to_string()),
            ReconError::ReconstructionFailed(_) => CliError::Numeric(e.to_string()),
            ReconError::Field(f) => f.into(),
            ReconError::Geom(g) => g.into(),
        }
    }
}

impl From<PoseError> for CliError {
    fn from(e: PoseError) -> Self {
        match e {
            PoseError::InvalidCount(_) | PoseError::InvalidRadius(_) => {
                CliError::Config(e.to_string())
            }
            PoseError::OptimizationDiverged => CliError::Numeric(e.to_string()),
            PoseError::Field(f) => f.into(),
            PoseError::Recon(r) => r.into(),
            PoseError::Geom(g) => g.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<GraspError> for CliError {
    fn from(e: GraspError) -> Self {
        match e {
            GraspError::InvalidParams(_) => CliError::Config(e.to_string()),
            GraspError::NonFinite(_) => CliError::Numeric(e.to_string()),
            GraspError::Geom(g) => g.into(),
            GraspError::Field(f) => f.into(),
            GraspError::Pose(p) => p.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(format!("i/o error: {e}"))
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::Config(format!("cannot read config {}: {e}", path.display()))
            })?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out = out.clone();
    }
    if let Some(threads) = cli.threads {
        config.threads = threads;
    }
    Ok(config)
}

fn category(config: &RunConfig) -> Result<ShapeCategory, CliError> {
    config
        .shapes
        .category
        .parse::<ShapeCategory>()
        .map_err(|e| CliError::Config(format!("shapes.category: {e}")))
}

fn shape_specs(config: &RunConfig) -> Result<Vec<ShapeSpec>, CliError> {
    let cat = category(config)?;
    if config.shapes.count == 0 {
        return Err(CliError::Config("shapes.count must be positive".into()));
    }
    Ok((0..config.shapes.count)
        .map(|i| ShapeSpec::sample(cat, config.seed.wrapping_add(i as u64)))
        .collect())
}

fn dataset_dir(config: &RunConfig) -> PathBuf {
    config.out.join("dataset")
}

fn checkpoint_path(config: &RunConfig) -> PathBuf {
    config.out.join("model.ckpt")
}

fn load_model(config: &RunConfig) -> Result<MimoModel, CliError> {
    let path = checkpoint_path(config);
    let ckpt = read_checkpoint(&path)
        .map_err(|e| CliError::Data(format!("checkpoint {}: {e}", path.display())))?;
    Ok(ckpt.model)
}

fn dataset_hash(datasets: &[FeatureDataset]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    for d in datasets {
        eat(d.shape_id.as_bytes());
        eat(&d.seed.to_le_bytes());
        for p in &d.observed.points {
            for v in [p.x, p.y, p.z] {
                eat(&v.to_bits().to_le_bytes());
            }
        }
        for s in &d.samples {
            for v in [s.x.x, s.x.y, s.x.z, s.occ, s.sdf, s.cdd] {
                eat(&v.to_bits().to_le_bytes());
            }
            for &v in &s.escf {
                eat(&v.to_bits().to_le_bytes());
            }
        }
    }
    h
}

/// Run a parsed command line; the report is also written to
/// `<out>/report-<command>.json`.
pub fn run(cli: &Cli) -> Result<Report, CliError> {
    let config = load_config(cli)?;
    if config.threads > 0 {
        // ignore the error if a global pool already exists (tests)
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build_global();
    }
    std::fs::create_dir_all(&config.out)?;
    let start = std::time::Instant::now();
    let (metrics, artifacts) = match cli.command {
        Command::GenDataset => cmd_gen_dataset(&config)?,
        Command::Train => cmd_train(&config)?,
        Command::Eval => cmd_eval(&config)?,
        Command::Reconstruct => cmd_reconstruct(&config)?,
        Command::Transfer => cmd_transfer(&config)?,
        Command::GraspPipeline => cmd_grasp_pipeline(&config)?,
        Command::FitGmm => cmd_fit_gmm(&config)?,
        Command::TrainEvaluator => cmd_train_evaluator(&config)?,
    };
    for v in metrics.values() {
        if !v.is_finite() {
            return Err(CliError::Numeric("non-finite metric in report".into()));
        }
    }
    let report = Report {
        command: cli.command.name().into(),
        config: config.clone(),
        metrics,
        artifacts,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        version: env!("CARGO_PKG_VERSION").into(),
    };
    let path = config.out.join(format!("report-{}.json", cli.command.name()));
    std::fs::write(
        &path,
        serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    Ok(report)
}

type CmdOutput = (BTreeMap<String, f64>, Vec<String>);

fn art(path: &Path) -> String {
    path.display().to_string()
}

fn cmd_gen_dataset(config: &RunConfig) -> Result<CmdOutput, CliError> {
    let specs = shape_specs(config)?;
    let mut dataset_config = config.dataset.clone();
    dataset_config.seed = config.seed;
    let datasets = build_dataset(&specs, &dataset_config)?;
    let dir = dataset_dir(config);
    std::fs::create_dir_all(&dir)?;
    write_dataset(&datasets, &dir)?;
    let mut metrics = BTreeMap::new();
    metrics.insert("shapes".into(), datasets.len() as f64);
    metrics.insert(
        "samples_per_shape".into(),
        dataset_config.samples_per_shape as f64,
    );
    Ok((metrics, vec![art(&dir)]))
}

fn loss_csv(path: &Path, curve: &[crate::field::LossRecord]) -> Result<(), CliError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "step,L1,L2,L3,L4,s1,s2,s3,s4,total")?;
    for r in curve {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            r.step,
            r.branch[0],
            r.branch[1],
            r.branch[2],
            r.branch[3],
            r.s[0],
            r.s[1],
            r.s[2],
            r.s[3],
            r.total
        )?;
    }
    Ok(())
}

fn cmd_train(config: &RunConfig) -> Result<CmdOutput, CliError> {
    let datasets = read_dataset(&dataset_dir(config))?;
    let mut train_config = config.train.config.clone();
    train_config.seed = config.seed;

    let state_path = config.out.join("train_state.json");
    let ckpt_path = checkpoint_path(config);
    let (mut model, resume_state) = if config.train.resume {
        let ckpt = read_checkpoint(&ckpt_path)?;
        let text = std::fs::read_to_string(&state_path).map_err(|e| {
            CliError::Data(format!("optimizer state {}: {e}", state_path.display()))
        })?;
        let state: TrainState = serde_json::from_str(&text).map_err(|e| {
            CliError::Data(format!("optimizer state {}: {e}", state_path.display()))
        })?;
        (ckpt.model, Some(state))
    } else {
        (MimoModel::init(config.model.clone(), config.seed), None)
    };

    let (report, state) = train_resume(&mut model, &datasets, &train_config, resume_state)?;
    let meta = CheckpointMeta {
        dataset_hash: dataset_hash(&datasets),
        step_count: state.step,
    };
    write_checkpoint(&ckpt_path, &Checkpoint { model, meta })?;
    std::fs::write(
        &state_path,
        serde_json::to_string(&state).expect("state serializes"),
    )?;
    let csv_path = config.out.join("loss.csv");
    // on resume, append to the existing curve so the file stays complete
    if config.train.resume && csv_path.exists() {
        let mut text = std::fs::read_to_string(&csv_path)?;
        for r in &report.curve {
            text.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.step,
                r.branch[0],
                r.branch[1],
                r.branch[2],
                r.branch[3],
                r.s[0],
                r.s[1],
                r.s[2],
                r.s[3],
                r.total
            ));
        }
        std::fs::write(&csv_path, text)?;
    } else {
        loss_csv(&csv_path, &report.curve)?;
    }

    let mut metrics = BTreeMap::new();
    metrics.insert("steps".into(), state.step as f64);
    if let Some(last) = report.curve.last() {
        metrics.insert("final_loss".into(), last.total);
    }
    Ok((
        metrics,
        vec![art(&ckpt_path), art(&csv_path), art(&state_path)],
    ))
}

/// Volumetric IoU between the model's occupancy and the ground-truth mesh
/// on a regular grid over the padded mesh bounds.
fn model_iou(model: &MimoModel, dataset: &FeatureDataset, grid: usize) -> Result<f64, CliError> {
    let mesh = generate_shape(&dataset.spec)?;
    let index = SpatialIndex::build(mesh)?;
    let latent = model.encode(&dataset.observed)?;
    let (lo, hi) = index.mesh().bounds();
    let pad = (hi - lo).norm() * 0.05;
    let (lo, hi) = (
        lo - Vec3::new(pad, pad, pad),
        hi + Vec3::new(pad, pad, pad),
    );
    let mut queries = Vec::with_capacity(grid * grid * grid);
    for i in 0..grid {
        for j in 0..grid {
            for k in 0..grid {
                let f = |a: f64, b: f64, q: usize| {
                    a + (b - a) * (q as f64 + 0.5) / grid as f64
                };
                queries.push(Vec3::new(f(lo.x, hi.x, i), f(lo.y, hi.y, j), f(lo.z, hi.z, k)));
            }
        }
    }
    let outputs = model.predict_batch(&latent, &queries);
    let (mut inter, mut union) = (0usize, 0usize);
    for (q, o) in queries.iter().zip(&outputs) {
        let truth = index.is_inside_unchecked(*q);
        let pred = o.occ_probability() > 0.5;
        if truth && pred {
            inter += 1;
        }
        if truth || pred {
            union += 1;
        }
    }
    if union == 0 {
        return Err(CliError::Numeric("empty occupancy union in IoU".into()));
    }
    Ok(inter as f64 / union as f64)
}

fn occupancy_accuracy(model: &MimoModel, datasets: &[FeatureDataset]) -> Result<f64, CliError> {
    let (mut correct, mut total) = (0usize, 0usize);
    for d in datasets {
        let latent = model.encode(&d.observed)?;
        let queries: Vec<Vec3> = d.samples.iter().map(|s| s.x).collect();
        for (s, o) in d.samples.iter().zip(model.predict_batch(&latent, &queries)) {
            let pred = o.occ_probability() > 0.5;
            if pred == (s.occ > 0.5) {
                correct += 1;
            }
            total += 1;
        }
    }
    Ok(correct as f64 / total.max(1) as f64)
}

fn cmd_eval(config: &RunConfig) -> Result<CmdOutput, CliError> {
    let datasets = read_dataset(&dataset_dir(config))?;
    if datasets.is_empty() {
        return Err(CliError::Data("dataset directory is empty".into()));
    }
    let model = load_model(config)?;
    let mut metrics = BTreeMap::new();

    metrics.insert(
        "occupancy_accuracy".into(),
        occupancy_accuracy(&model, &datasets)?,
    );
    let mut iou_sum = 0.0;
    for d in &datasets {
        iou_sum += model_iou(&model, d, config.eval.iou_grid)?;
    }
    metrics.insert("mean_iou".into(), iou_sum / datasets.len() as f64);

    // correspondence: descriptor nearest neighbor of a reference landmark,
    // reported only when the parametric ground truth exists
    if datasets.len() >= 2 {
        if let Some(err) = correspondence_error(&model, &datasets)? {
            metrics.insert("correspondence_error".into(), err);
        }
    }

    // pose self-transfer on the first shape
    let x = config
        .eval
        .bps
        .sample()
        .map_err(|e| CliError::Config(format!("eval.bps: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x6576_616c);
    let t0 = Pose::new(
        UnitQuat::from_axis_angle(
            Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ),
            rng.gen_range(0.05..0.3),
        ),
        Vec3::new(
            rng.gen_range(-0.05..0.05),
            rng.gen_range(-0.05..0.05),
            rng.gen_range(-0.05..0.05),
        ),
    );
    let cloud = &datasets[0].observed;
    let z_ref = pose_descriptor(&model, cloud, &t0, &x).map_err(CliError::from)?;
    let mut solver = config.eval.transfer.clone();
    solver.seed = config.seed;
    let (t_star, residual) = transfer_pose(&model, cloud, &x, &z_ref, &solver)?;
    metrics.insert(
        "transfer_translation_error".into(),
        (t_star.translation - t0.translation).norm(),
    );
    metrics.insert(
        "transfer_rotation_error_deg".into(),
        t_star.rotation.angle_to(t0.rotation).to_degrees(),
    );
    metrics.insert("transfer_residual".into(), residual);

    // four-branch vs occupancy-only comparison on this corpus
    if config.eval.ab_epochs > 0 {
        let base = TrainConfig {
            epochs: config.eval.ab_epochs,
            seed: config.seed,
            ..config.train.config.clone()
        };
        let mut iou = [0.0f64; 2];
        for (slot, branches) in [[true; 4], [true, false, false, false]]
            .into_iter()
            .enumerate()
        {
            let mut m = MimoModel::init(config.model.clone(), config.seed);
            let cfg = TrainConfig { branches, ..base.clone() };
            crate::field::train(&mut m, &datasets, &cfg)?;
            let mut sum = 0.0;
            for d in &datasets {
                sum += model_iou(&m, d, config.eval.iou_grid)?;
            }
            iou[slot] = sum / datasets.len() as f64;
        }
        metrics.insert("ab_iou_four_branch".into(), iou[0]);
        metrics.insert("ab_iou_occupancy_only".into(), iou[1]);
    }
    Ok((metrics, Vec::new()))
}

/// Mean normalized landmark-correspondence error across target shapes, or
/// `None` when the category has no distinctive landmark ground truth.
fn correspondence_error(
    model: &MimoModel,
    datasets: &[FeatureDataset],
) -> Result<Option<f64>, CliError> {
    let landmark = match datasets[0].spec.category {
        ShapeCategory::Mug => "handle_tip",
        ShapeCategory::Bottle => "neck_top",
        ShapeCategory::Bowl => return Ok(None), // rotationally symmetric
    };
    let reference = &datasets[0];
    let p_ref = match shape_landmarks(&reference.spec)?.get(landmark) {
        Some(p) => *p,
        None => return Ok(None),
    };
    let latent_ref = model.encode(&reference.observed)?;
    let z_ref = model.point_descriptor(&latent_ref, p_ref);

    let mut total = 0.0;
    let mut count = 0usize;
    for target in &datasets[1..] {
        if target.spec.category != reference.spec.category {
            continue;
        }
        let p_true = match shape_landmarks(&target.spec)?.get(landmark) {
            Some(p) => *p,
            None => continue,
        };
        let mesh = generate_shape(&target.spec)?;
        let candidates = sample_surface(&mesh, 512, target.seed ^ 0x636f_7272)?;
        let latent = model.encode(&target.observed)?;
        let descs = model.point_descriptors(&latent, &candidates.points);
        let (mut best, mut best_d) = (0usize, f64::INFINITY);
        for (i, z) in descs.iter().enumerate() {
            let d: f64 = z.iter().zip(&z_ref).map(|(a, b)| (a - b).abs()).sum();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        let (lo, hi) = mesh.bounds();
        let diameter = (hi - lo).norm();
        total += (candidates.points[best] - p_true).norm() / diameter;
        count += 1;
    }
    Ok((count > 0).then(|| total / count as f64))
}

fn cmd_reconstruct(config: &RunConfig) -> Result<CmdOutput, CliError> {
    let model = load_model(config)?;
    let observed = match &config.reconstruct.cloud {
        Some(path) => read_ply(path)?,
        None => {
            let spec = shape_specs(config)?.remove(0);
            let mesh = generate_shape(&spec)?;
            sample_surface(&mesh, 512, config.seed)?
        }
    };
    let (mesh, resampled) = resample_reconstruction(
        &model,
        &observed,
        config.reconstruct.resample_points,
        config.seed,
        &config.reconstruct.mise,
    )?;
    let obj_path = config.out.join("recon.obj");
    let ply_path = config.out.join("recon_resample.ply");
    write_obj(&mesh, &obj_path)?;
    write_ply(&resampled, &ply_path)?;
    let mut metrics = BTreeMap::new();
    metrics.insert("vertices".into(), mesh.vertices.len() as f64);
    metrics.insert("faces".into(), mesh.faces.len() as f64);
    metrics.insert("signed_volume".into(), mesh.signed_volume());
    Ok((metrics, vec![art(&obj_path), art(&ply_path)]))
}

fn cmd_transfer(config: &RunConfig) -> Result<CmdOutput, CliError> {
    let model = load_model(config)?;
    let demo_path = config
        .transfer
        .demo
        .as_ref()
        .ok_or_else(|| CliError::Config("transfer.demo is required".into()))?;
    let cloud_path = config
        .transfer
        .cloud
        .as_ref()
        .ok_or_else(|| CliError::Config("transfer.cloud is required".into()))?;
    let demo = read_demonstration(demo_path)?;
    let novel = read_ply(cloud_path)?;
    let x = demo.bps.sample()?;
    let z_ref = pose_descriptor(&model, &demo.source_cloud, &demo.grasp_pose, &x)?;
    let mut solver = config.transfer.solver.clone();
    solver.seed = config.seed;
    let (pose, residual) = transfer_pose(&model, &novel, &x, &z_ref, &solver)?;

    let out_path = config.out.join("transfer.json");
    #[derive(serde::Serialize)]
    struct TransferResult {
        pose: [f64; 7],
        residual: f64,
    }
    std::fs::write(
        &out_path,
        serde_json::to_string_pretty(&TransferResult {
            pose: pose.to_array(),
            residual,
        })
        .expect("result serializes"),
    )?;
    let mut metrics = BTreeMap::new();
    metrics.insert("residual".into(), residual);
    Ok((metrics, vec![art(&out_path)]))
}

/// Random poses near the object used as labeling negatives; most fail the
/// contact checks, giving the evaluator both classes.
fn random_poses(mesh_bound: f64, n: usize, seed: u64) -> Vec<Pose> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6e65_6773);
    (0..n)
        .map(|_| {
            let axis = Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let axis = if axis.norm() < 1e-6 { Vec3::Z } else { axis };
            Pose::new(
                UnitQuat::from_axis_angle(axis, rng.gen_range(0.0..std::f64::consts::PI)),
                Vec3::new(
                    rng.gen_range(-1.5 * mesh_bound..1.5 * mesh_bound),
                    rng.gen_range(-1.5 * mesh_bound..1.5 * mesh_bound),
                    rng.gen_range(-1.5 * mesh_bound..1.5 * mesh_bound),
                ),
            )
        })
        .collect()
}

#[derive(serde::Serialize, serde::Deserialize)]
struct TrialRecord {
    trial: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pose: Option<[f64; 7]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    probability_initial: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    probability_final: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    refined: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    provenance: Option<Provenance>,
    #[serde(skip_serializing_if = "Option::is_none")]
    success: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn cmd_grasp_pipeline(config: &RunConfig) -> Result<CmdOutput, CliError> {
    let model = load_model(config)?;
    let g = &config.grasp;
    let cat = category(config)?;

    // canonical instance: heuristic candidates + random negatives, labeled
    let canonical_spec = ShapeSpec::sample(cat, config.seed);
    let canonical_mesh = generate_shape(&canonical_spec)?;
    let mut candidates =
        generate_candidates(&canonical_mesh, &g.gripper, g.candidates, config.seed)?;
    let (lo, hi) = canonical_mesh.bounds();
    let bound = (hi - lo).norm() / 2.0;
    candidates.extend(random_poses(bound, g.negatives, config.seed).into_iter().map(
        |pose| GraspCandidate {
            pose,
            label: None,
            provenance: Provenance::Heuristic,
            config_hash: None,
        },
    ));
    label_candidates(&canonical_mesh, &g.gripper, &mut candidates)?;
    let cand_path = config.out.join("candidates.jsonl");
    write_candidates(&cand_path, &candidates)?;

    let successes: Vec<&GraspCandidate> = candidates
        .iter()
        .filter(|c| c.label == Some(true))
        .collect();
    if successes.is_empty() {
        return Err(CliError::Data(
            "no successful grasps on the canonical instance".into(),
        ));
    }
    let canonical_cloud = sample_surface(&canonical_mesh, g.cloud_points, config.seed)?;

    // demonstration: supplied file, or the first labeled success
    let (demo_cloud, t_demo) = match &g.demo {
        Some(path) => {
            let demo = read_demonstration(path)?;
            (demo.source_cloud, demo.grasp_pose)
        }
        None => (canonical_cloud.clone(), successes[0].pose),
    };

    // task-relevant selection + demo transfer, fused into the mixture input
    let x = g
        .bps
        .sample()
        .map_err(|e| CliError::Config(format!("grasp.bps: {e}")))?;
    let z_demo = pose_descriptor(&model, &demo_cloud, &t_demo, &x)?;
    let owned: Vec<GraspCandidate> = successes.into_iter().cloned().collect();
    let relevant = select_task_relevant(
        &model,
        &canonical_cloud,
        &owned,
        &x,
        &z_demo,
        g.task_relevant_k,
    )?;
    let mut solver = g.transfer.clone();
    solver.seed = config.seed;
    let mut transferred = transfer_demo_to_canonical(
        &model,
        &demo_cloud,
        &canonical_cloud,
        &x,
        &t_demo,
        &solver,
        g.residual_cutoff,
    )?;
    label_candidates(&canonical_mesh, &g.gripper, &mut transferred)?;
    transferred.retain(|c| c.label == Some(true));
    let fused = fuse_candidates(
        relevant.into_iter().map(|(c, _)| c).collect(),
        transferred,
        0.005,
        2.0,
    );
    let gmm_poses: Vec<Pose> = fused.iter().map(|c| c.pose).collect();
    let mut em = g.em.clone();
    em.seed = config.seed;
    let (gmm, k) = fit_gmm_bic(&gmm_poses, g.gmm_k_max, &em)?;
    let gmm_path = config.out.join("gmm.json");
    write_gmm(&gmm_path, &gmm)?;

    // evaluator on the canonical instance's labeled set
    let mut evaluator =
        EvaluatorModel::init(model.config.latent_dim, g.gripper.clone(), config.seed);
    let mut ev_config = g.evaluator.clone();
    ev_config.seed = config.seed;
    train_evaluator(&model, &mut evaluator, &canonical_cloud, &candidates, &ev_config)?;
    let ev_path = config.out.join("evaluator.json");
    write_evaluator(&ev_path, &evaluator)?;

    // end-to-end trials on novel instances; failures recorded, not fatal
    let trials_path = config.out.join("trials.jsonl");
    let mut trials_file = std::io::BufWriter::new(std::fs::File::create(&trials_path)?);
    let mut successes_n = 0usize;
    let mut refined_n = 0usize;
    let mut failed_n = 0usize;
    let canonical_latent = model.encode(&canonical_cloud)?;
    for trial in 0..g.trials {
        let record = run_trial(
            config,
            &model,
            &evaluator,
            &gmm,
            &canonical_latent,
            &x,
            cat,
            trial,
        );
        let record = match record {
            Ok(r) => r,
            Err(e) => TrialRecord {
                trial,
                pose: None,
                probability_initial: None,
                probability_final: None,
                refined: None,
                provenance: None,
                success: None,
                error: Some(e.to_string()),
            },
        };
        successes_n += usize::from(record.success == Some(true));
        refined_n += usize::from(record.refined == Some(true));
        failed_n += usize::from(record.error.is_some());
        serde_json::to_writer(&mut trials_file, &record)
            .map_err(|e| CliError::Data(e.to_string()))?;
        writeln!(trials_file)?;
    }
    drop(trials_file);

    let mut metrics = BTreeMap::new();
    metrics.insert("gmm_components".into(), k as f64);
    metrics.insert("candidates".into(), candidates.len() as f64);
    metrics.insert(
        "label_success_rate".into(),
        owned.len() as f64 / candidates.len() as f64,
    );
    metrics.insert("trials".into(), g.trials as f64);
    metrics.insert("trials_failed".into(), failed_n as f64);
    metrics.insert("trials_refined".into(), refined_n as f64);
    metrics.insert(
        "trial_success_rate".into(),
        successes_n as f64 / (g.trials.max(1)) as f64,
    );
    Ok((
        metrics,
        vec![art(&cand_path), art(&gmm_path), art(&ev_path), art(&trials_path)],
    ))
}

#[allow(clippy::too_many_arguments)]
fn run_trial(
    config: &RunConfig,
    model: &MimoModel,
    evaluator: &EvaluatorModel,
    gmm: &crate::grasp::GraspGmm,
    canonical_latent: &crate::field::Latent,
    x: &crate::pose::BasisPointSet,
    cat: ShapeCategory,
    trial: usize,
) -> Result<TrialRecord, CliError> {
    let g = &config.grasp;
    let trial_seed = config.seed ^ ((trial as u64 + 1) << 24);
    let spec = ShapeSpec::sample(cat, trial_seed);
    let mesh = generate_shape(&spec)?;
    let cloud = sample_surface(&mesh, g.cloud_points, trial_seed)?;
    let latent = model.encode(&cloud).map_err(CliError::from)?;

    // sample in canonical space, pick the best by the evaluator, then
    // transfer the pick onto the novel instance by descriptor matching
    let samples = sample_gmm(gmm, g.samples_per_trial, trial_seed)?;
    let (mut best_pose, mut best_p) = (samples[0], f64::NEG_INFINITY);
    for pose in &samples {
        let p = evaluate_grasp(evaluator, &latent, pose);
        if p > best_p {
            best_p = p;
            best_pose = *pose;
        }
    }
    let z = crate::pose::pose_descriptor_with_latent(model, canonical_latent, &best_pose, x);
    let mut solver = g.transfer.clone();
    solver.seed = trial_seed;
    let (transferred, _residual) = transfer_pose(model, &cloud, x, &z, &solver)?;
    let refine = refine_grasp(evaluator, &latent, &transferred, &g.refine)?;
    let index = SpatialIndex::build(mesh)?;
    let success = crate::grasp::label_candidate(&index, &g.gripper, &refine.pose);
    Ok(TrialRecord {
        trial,
        pose: Some(refine.pose.to_array()),
        probability_initial: Some(refine.probability_before),
        probability_final: Some(refine.probability_after),
        refined: Some(refine.iterations > 0),
        provenance: Some(Provenance::GmmSample),
        success: Some(success),
        error: None,
    })
}

fn cmd_fit_gmm(config: &RunConfig) -> Result<CmdOutput, CliError> {
    let path = config
        .fit_gmm
        .candidates
        .clone()
        .unwrap_or_else(|| config.out.join("candidates.jsonl"));
    let candidates = read_candidates(&path)?;
    // labeled sets contribute their successes; unlabeled sets are taken whole
    let labeled: Vec<Pose> = candidates
        .iter()
        .filter(|c| c.label == Some(true))
        .map(|c| c.pose)
        .collect();
    let poses = if labeled.is_empty() {
        candidates.iter().map(|c| c.pose).collect()
    } else {
        labeled
    };
    if poses.is_empty() {
        return Err(CliError::Data(format!(
            "no poses to fit in {}",
            path.display()
        )));
    }
    let mut em = config.fit_gmm.em.clone();
    em.seed = config.seed;
    let (gmm, k) = match config.fit_gmm.k {
        Some(k) => (fit_gmm(&poses, k, &em)?, k),
        None => fit_gmm_bic(&poses, config.fit_gmm.k_max, &em)?,
    };
    let gmm_path = config.out.join("gmm.json");
    write_gmm(&gmm_path, &gmm)?;
    let mut ll = 0.0;
    for p in &poses {
        ll += gmm.log_density(p)?;
    }
    let mut metrics = BTreeMap::new();
    metrics.insert("components".into(), k as f64);
    metrics.insert("poses".into(), poses.len() as f64);
    metrics.insert("log_likelihood".into(), ll);
    Ok((metrics, vec![art(&gmm_path)]))
}

fn cmd_train_evaluator(config: &RunConfig) -> Result<CmdOutput, CliError> {
    let model = load_model(config)?;
    let te = &config.train_evaluator;
    let cand_path = te
        .candidates
        .clone()
        .unwrap_or_else(|| config.out.join("candidates.jsonl"));
    let candidates = read_candidates(&cand_path)?;
    let cloud = match &te.cloud {
        Some(path) => read_ply(path)?,
        None => {
            let spec = shape_specs(config)?.remove(0);
            let mesh = generate_shape(&spec)?;
            sample_surface(&mesh, config.grasp.cloud_points, config.seed)?
        }
    };
    let mut evaluator =
        EvaluatorModel::init(model.config.latent_dim, te.gripper.clone(), config.seed);
    let mut ev_config = te.config.clone();
    ev_config.seed = config.seed;
    let curve = train_evaluator(&model, &mut evaluator, &cloud, &candidates, &ev_config)?;
    let ev_path = config.out.join("evaluator.json");
    write_evaluator(&ev_path, &evaluator)?;
    let csv_path = config.out.join("evaluator_loss.csv");
    let mut w = std::io::BufWriter::new(std::fs::File::create(&csv_path)?);
    writeln!(w, "epoch,loss")?;
    for (i, l) in curve.iter().enumerate() {
        writeln!(w, "{i},{l}")?;
    }
    drop(w);
    let mut metrics = BTreeMap::new();
    metrics.insert("epochs".into(), curve.len() as f64);
    if let Some(last) = curve.last() {
        metrics.insert("final_loss".into(), *last);
    }
    Ok((metrics, vec![art(&ev_path), art(&csv_path)]))
}
