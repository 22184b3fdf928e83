//! Command implementations behind the `ccrf-depth` binary.
//!
//! Exit codes: 0 success, 2 configuration error, 3 I/O or malformed input,
//! 4 numerical failure.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use ccrf_depth::checkpoint::Checkpoint;
use ccrf_depth::config::{ConfigError, RunConfig};
use ccrf_depth::crf::{self, CrfError, CrfInstance, PairwiseWeights};
use ccrf_depth::eval::{self, make3d_masks, metrics, DepthPair, EvalError, MetricsReport};
use ccrf_depth::experiment::{
    check_counts, prepare_all, sweep, training_examples, ExperimentError, Labeled, TrainingSet,
    SWEEP_CSV_HEADER,
};
use ccrf_depth::formats::{self, read_dataset, write_atomic, DatasetItem, FormatError};
use ccrf_depth::graph::GraphError;
use ccrf_depth::image::DepthMap;
use ccrf_depth::oracle::{self, GridSpec, OracleError, QuadratureSpec, FD_STEP};
use ccrf_depth::pipeline::PipelineError;
use ccrf_depth::synth::{generate_dataset, SynthError};
use ccrf_depth::trainer::{
    batch_gradient, init_state, run_epoch, Freeze, TrainConfig, TrainError, TrainExample,
    TrainState,
};
use ccrf_depth::unary::{ForwardMode, UnaryError, UnaryModel};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<CrfError> for CliError {
    fn from(e: CrfError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<UnaryError> for CliError {
    fn from(e: UnaryError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::InvalidConfig(_) | GraphError::TooManySuperpixels { .. } => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Io(e.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Graph(g) => g.into(),
            PipelineError::Crf(c) => c.into(),
            PipelineError::Unary(u) => u.into(),
            PipelineError::Width { .. } => CliError::Config(e.to_string()),
            PipelineError::NoData => CliError::Io(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Crf(c) => c.into(),
            TrainError::Unary(u) => u.into(),
            TrainError::Pipeline(p) => p.into(),
            TrainError::InvalidConfig(_) => CliError::Config(e.to_string()),
            TrainError::EmptyDataset | TrainError::MissingGroundTruth(_) => {
                CliError::Io(e.to_string())
            }
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Pipeline(p) => p.into(),
            EvalError::EmptyMask | EvalError::InvalidCap(_) => CliError::Config(e.to_string()),
            EvalError::ShapeMismatch(..) | EvalError::InvalidDepth { .. } => {
                CliError::Io(e.to_string())
            }
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Synth(x) => x.into(),
            ExperimentError::Pipeline(x) => x.into(),
            ExperimentError::Train(x) => x.into(),
            ExperimentError::Eval(x) => x.into(),
            ExperimentError::DuplicateCount(_) | ExperimentError::NoCounts => {
                CliError::Config(e.to_string())
            }
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "ccrf-depth",
    version,
    about = "Depth from single images with a continuous CRF over superpixels"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate synthetic train and test datasets.
    Synth(SynthArgs),
    /// Train a model on a dataset directory.
    Train(TrainArgs),
    /// Predict a depth raster for one image.
    Predict(PredictArgs),
    /// Evaluate a checkpoint on a dataset directory.
    Eval(EvalArgs),
    /// Compare analytic gradients with finite differences on a random instance.
    Gradcheck(GradcheckArgs),
    /// Train and evaluate at several superpixel counts.
    Sweep(SweepArgs),
    /// Cross-check the closed forms against the brute-force oracles.
    Verify(VerifyArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// TOML run configuration; defaults apply to missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Destination; `train/` and `test/` are created inside.
    /// Defaults to `<output_dir>/data`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training dataset directory (with manifest.txt).
    #[arg(long)]
    pub data: PathBuf,
    /// Hold the pairwise weights at zero.
    #[arg(long)]
    pub unary_only: bool,
    /// Continue from a checkpoint. Its configuration is used unless
    /// `--config` is given.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Override the total epoch count.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Defaults to `<output_dir>/model.ckpt`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Defaults to `<output_dir>/history.csv`.
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Also write the checkpoint every this many epochs.
    #[arg(long, default_value_t = 10)]
    pub checkpoint_every: usize,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Binary PPM image.
    #[arg(long)]
    pub image: PathBuf,
    /// Output depth raster.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Required unless `--gt-as-prediction` is set.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Also report metrics restricted to ground truth below this depth.
    #[arg(long)]
    pub c1_cap: Option<f64>,
    /// Score the ground truth against itself.
    #[arg(long)]
    pub gt_as_prediction: bool,
    /// Write the metrics CSV here as well as printing the table.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Superpixel count of the random instance.
    #[arg(long, default_value_t = 8)]
    pub n: usize,
    /// Number of similarity descriptors.
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    /// Relative tolerance.
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Held-out dataset directory.
    #[arg(long)]
    pub test: PathBuf,
    /// Comma-separated superpixel counts.
    #[arg(long, value_delimiter = ',', default_value = "50,200,700")]
    pub counts: Vec<usize>,
    /// Write the CSV here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Verify(a) => cmd_verify(a),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text =
                fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            RunConfig::from_toml(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
        }
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
        }
        _ => Ok(()),
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    Ok(write_atomic(path, text.as_bytes())?)
}

fn labeled(items: Vec<DatasetItem>) -> Vec<Labeled> {
    items.into_iter().map(|i| (i.image, i.depth)).collect()
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let config = load_config(args.config.as_deref())?;
    let out = args.out.unwrap_or_else(|| config.output_dir.join("data"));
    let spec = config.scene_spec(0);
    let items = |count: usize, seed: u64| -> Result<Vec<DatasetItem>> {
        Ok(generate_dataset(&spec, count, seed)?
            .into_iter()
            .map(|(seed, s)| DatasetItem {
                image: s.image,
                depth: s.depth,
                seed,
            })
            .collect())
    };
    // Everything is generated before the first file is written.
    let mut splits = vec![("train", items(config.train_count, config.data_seed)?)];
    if config.test_count > 0 {
        splits.push(("test", items(config.test_count, config.test_seed())?));
    }
    for (name, data) in &splits {
        let dir = out.join(name);
        formats::write_dataset(&dir, data)?;
        println!("wrote {} scenes to {}", data.len(), dir.display());
    }
    Ok(())
}

pub const HISTORY_HEADER: &str = "epoch,lr,mean_nll";

fn history_csv(state: &TrainState) -> String {
    let mut out = format!("{HISTORY_HEADER}\n");
    for r in &state.history {
        out.push_str(&format!("{},{},{}\n", r.epoch, r.lr, r.mean_nll));
    }
    out
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let resumed = args.resume.as_deref().map(Checkpoint::read).transpose()?;
    let mut config = match (&args.config, &resumed) {
        (Some(p), _) => load_config(Some(p))?,
        (None, Some(ck)) => ck.config.clone(),
        (None, None) => RunConfig::default(),
    };
    if let Some(e) = args.epochs {
        config.epochs = e;
        config.validate()?;
    }
    if args.checkpoint_every == 0 {
        return Err(CliError::Config(
            "--checkpoint-every must be positive".into(),
        ));
    }
    let unary_only = match &resumed {
        Some(ck) if args.unary_only && !ck.unary_only => {
            return Err(CliError::Config(
                "--unary-only given but the checkpoint holds a full model".into(),
            ))
        }
        Some(ck) => ck.unary_only,
        None => args.unary_only,
    };
    let ckpt_path = args
        .checkpoint
        .unwrap_or_else(|| config.output_dir.join("model.ckpt"));
    let hist_path = args
        .history
        .unwrap_or_else(|| config.output_dir.join("history.csv"));

    let items = labeled(read_dataset(&args.data)?);
    let pipe = config.pipeline();
    let tc = config.train_config();
    let (examples, standardizer, mut state) = match resumed {
        Some(ck) => {
            let images = prepare_all(items, &pipe)?;
            let examples = training_examples(&images, &ck.standardizer)?;
            (examples, ck.standardizer, ck.state)
        }
        None => {
            let set = TrainingSet::new(items, &pipe)?;
            let state = init_state(&config.widths(set.input_width()), &tc, unary_only)?;
            (set.examples, set.standardizer, state)
        }
    };
    if examples.is_empty() {
        return Err(TrainError::EmptyDataset.into());
    }

    let save = |state: &TrainState| -> Result<()> {
        let ck = Checkpoint {
            config: config.clone(),
            unary_only,
            state: state.clone(),
            standardizer: standardizer.clone(),
        };
        ensure_parent(&ckpt_path)?;
        ck.write(&ckpt_path)?;
        write_file(&hist_path, &history_csv(state))
    };
    while state.epoch < tc.epochs {
        let rec = run_epoch(&mut state, &examples, &tc, unary_only)?;
        if !rec.mean_nll.is_finite() {
            return Err(CliError::Numerical(format!("epoch {} diverged", rec.epoch)));
        }
        eprintln!(
            "epoch {:>3}  lr {:.3e}  mean NLL {:.4}",
            rec.epoch, rec.lr, rec.mean_nll
        );
        if state.epoch % args.checkpoint_every == 0 && state.epoch < tc.epochs {
            save(&state)?;
        }
    }
    save(&state)?;
    println!(
        "trained {} epochs, beta = {:?}, checkpoint {}",
        state.epoch,
        state.beta.as_slice(),
        ckpt_path.display()
    );
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<()> {
    let ck = Checkpoint::read(&args.checkpoint)?;
    let image = formats::read_ppm(&args.image)?;
    let depth = eval::predict_image(
        image,
        &ck.state.model,
        &ck.standardizer,
        &ck.state.beta,
        &ck.config.pipeline(),
    )?;
    ensure_parent(&args.out)?;
    formats::write_depth(&args.out, &depth)?;
    println!(
        "wrote {}x{} depth raster to {}",
        depth.height(),
        depth.width(),
        args.out.display()
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    if let Some(cap) = args.c1_cap {
        if !(cap > 0.0) {
            return Err(EvalError::InvalidCap(cap).into());
        }
    }
    let items = read_dataset(&args.data)?;
    let predictions: Vec<DepthMap> = if args.gt_as_prediction {
        items.iter().map(|i| i.depth.clone()).collect()
    } else {
        let path = args.checkpoint.as_deref().ok_or_else(|| {
            CliError::Config("--checkpoint is required unless --gt-as-prediction is set".into())
        })?;
        let ck = Checkpoint::read(path)?;
        let pipe = ck.config.pipeline();
        items
            .iter()
            .map(|i| {
                eval::predict_image(
                    i.image.clone(),
                    &ck.state.model,
                    &ck.standardizer,
                    &ck.state.beta,
                    &pipe,
                )
            })
            .collect::<std::result::Result<_, _>>()?
    };
    let pairs = |cap: Option<f64>| -> Result<Vec<DepthPair>> {
        items
            .iter()
            .zip(&predictions)
            .map(|(i, p)| {
                let mask = match cap {
                    Some(c) => make3d_masks(&i.depth, c)?.0,
                    None => i.depth.map(|_| true),
                };
                Ok(DepthPair::new(p.clone(), i.depth.clone(), mask)?)
            })
            .collect()
    };
    let mut rows: Vec<(&str, MetricsReport)> = vec![("c2", metrics(&pairs(None)?)?)];
    if let Some(cap) = args.c1_cap {
        let c1 = metrics(&pairs(Some(cap))?).map_err(|e| match e {
            EvalError::EmptyMask => {
                CliError::Config(format!("C1 evaluation: no ground-truth depth below {cap}"))
            }
            other => other.into(),
        })?;
        rows.push(("c1", c1));
    }
    let mut csv = format!("mask,{}\n", MetricsReport::CSV_HEADER);
    for (name, m) in &rows {
        csv.push_str(&format!("{name},{}\n", m.csv_row()));
    }
    for (name, m) in &rows {
        println!("{}", name.to_uppercase());
        print!("{}", m.table());
    }
    match &args.csv {
        Some(p) => write_file(p, &csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

/// Random graph with similarities in [0, 1] and unit-scale depths.
fn random_instance(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Result<CrfInstance<f64>> {
    let mut edges = Vec::new();
    for p in 0..n {
        for q in (p + 1)..n {
            if q == p + 1 || rng.random_bool(0.3) {
                edges.push((p, q));
            }
        }
    }
    let sim = (0..edges.len() * k).map(|_| rng.random::<f64>()).collect();
    let z = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Ok(CrfInstance::new(n, k, edges, sim, z, Some(y))?)
}

fn random_weights(rng: &mut ChaCha8Rng, k: usize) -> Result<PairwiseWeights<f64>> {
    Ok(PairwiseWeights::new(
        (0..k).map(|_| 0.05 + rng.random::<f64>()).collect(),
    )?)
}

fn max_rel_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-3))
        .fold(0.0, f64::max)
}

fn verdict(name: &str, gap: f64, tol: f64) -> bool {
    let ok = gap <= tol;
    println!(
        "{name}: {} (max relative gap {gap:.2e}, tolerance {tol:.0e})",
        if ok { "PASS" } else { "FAIL" }
    );
    ok
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<()> {
    if args.n == 0 || args.k == 0 || !(args.tol > 0.0) {
        return Err(CliError::Config(
            "n and k must be positive and tol > 0".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let instance = random_instance(&mut rng, args.n, args.k)?;
    let beta = random_weights(&mut rng, args.k)?;
    let d = 4;
    let inputs: Vec<Vec<f64>> = (0..args.n)
        .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let model = UnaryModel::<f64>::init(&[d, 6, 5, 1], args.seed)?;
    let predict = |m: &UnaryModel<f64>| -> Result<Vec<f64>> {
        inputs.iter().map(|x| Ok(m.predict(x)?)).collect()
    };
    let with_z = instance.clone().with_z(predict(&model)?)?;

    let gz = crf::grad_z(&with_z, &beta)?;
    let fz = oracle::fd_gradient(
        |z| crf::nll(&with_z.clone().with_z(z.to_vec()).unwrap(), &beta).unwrap_or(f64::NAN),
        with_z.z(),
        FD_STEP,
    );
    let gb = crf::grad_beta(&with_z, &beta)?;
    let fb = oracle::fd_gradient(
        |b| match PairwiseWeights::new(b.to_vec()) {
            Ok(w) => crf::nll(&with_z, &w).unwrap_or(f64::NAN),
            Err(_) => f64::NAN,
        },
        beta.as_slice(),
        FD_STEP,
    );
    let config = TrainConfig {
        lambda1: 0.0,
        lambda2: 0.0,
        beta_init: beta.as_slice().to_vec(),
        ..Default::default()
    };
    let state = TrainState::new(model.clone(), beta.clone());
    let example = TrainExample {
        inputs: inputs.clone(),
        instance,
    };
    let (_, gt, _) = batch_gradient(
        &state,
        &[&example],
        &config,
        Freeze::default(),
        &mut ForwardMode::Eval,
    )?;
    let ft = oracle::fd_gradient(
        |theta| {
            let mut m = model.clone();
            if m.set_params(theta).is_err() {
                return f64::NAN;
            }
            let z: Vec<f64> = inputs
                .iter()
                .map(|x| m.predict(x).unwrap_or(f64::NAN))
                .collect();
            crf::nll(&example.instance.clone().with_z(z).unwrap(), &beta).unwrap_or(f64::NAN)
        },
        &model.params(),
        FD_STEP,
    );
    println!(
        "gradcheck: n = {}, K = {}, {} network parameters, seed {}",
        args.n,
        args.k,
        model.param_count(),
        args.seed
    );
    let mut ok = verdict("grad_z", max_rel_gap(&gz, &fz), args.tol);
    ok &= verdict("grad_theta", max_rel_gap(&gt, &ft), args.tol);
    ok &= verdict("grad_beta", max_rel_gap(&gb, &fb), args.tol);
    if ok {
        Ok(())
    } else {
        Err(CliError::Numerical("gradient check failed".into()))
    }
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    check_counts(&args.counts)?;
    let config = load_config(args.config.as_deref())?;
    let train = labeled(read_dataset(&args.data)?);
    let test = labeled(read_dataset(&args.test)?);
    let rows = sweep(&train, &test, &config, &args.counts, |r| {
        eprintln!(
            "{} superpixels: rms {:.4}, {:.1} s",
            r.count, r.rms, r.train_seconds
        );
    })?;
    let mut csv = format!("{SWEEP_CSV_HEADER}\n");
    for r in &rows {
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    match &args.out {
        Some(p) => write_file(p, &csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn cmd_verify(args: VerifyArgs) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut ok = true;

    let mut gap: f64 = 0.0;
    for n in [1, 2, 1, 2, 3] {
        let inst = random_instance(&mut rng, n, 3)?;
        let w = random_weights(&mut rng, 3)?;
        let spec = QuadratureSpec {
            points: if n == 3 { 121 } else { 401 },
            ..Default::default()
        };
        let analytic = crf::log_partition(&inst, &w)?;
        let quad = oracle::quad_log_partition(&inst, &w, &spec)?;
        gap = gap.max((analytic - quad).abs() / analytic.abs().max(1.0));
    }
    ok &= verdict("log partition vs quadrature", gap, 1e-6);

    let grid = GridSpec {
        lo: -2.0,
        hi: 2.0,
        points: 400,
    };
    let mut cells: f64 = 0.0;
    for _ in 0..5 {
        let inst = random_instance(&mut rng, 2, 3)?;
        let w = random_weights(&mut rng, 3)?;
        let y = crf::map_infer(&inst, &w)?;
        let g = oracle::grid_map(&inst, &w, &grid)?;
        for (a, b) in y.iter().zip(&g) {
            cells = cells.max((a - b).abs() / grid.cell());
        }
    }
    let map_ok = cells <= 1.0;
    println!(
        "MAP vs grid search: {} (largest offset {cells:.2} grid cells)",
        if map_ok { "PASS" } else { "FAIL" }
    );
    ok &= map_ok;

    let inst = random_instance(&mut rng, 3, 3)?;
    let w = random_weights(&mut rng, 3)?;
    let mc = oracle::mc_moments(&inst, &w, 100_000, args.seed)?;
    let (mean, cov) = oracle::gaussian_moments(&inst, &w)?;
    let se = mc.mean_standard_errors();
    let cse = mc.covariance_standard_errors();
    let mut z: f64 = 0.0;
    for i in 0..3 {
        z = z.max((mc.mean[i] - mean[i]).abs() / se[i]);
        for j in 0..3 {
            z = z.max((mc.covariance[i][j] - cov[i][j]).abs() / cse[i][j]);
        }
    }
    let mc_ok = z < 4.0;
    println!(
        "Monte Carlo moments: {} (largest deviation {z:.2} standard errors)",
        if mc_ok { "PASS" } else { "FAIL" }
    );
    ok &= mc_ok;

    let inst = random_instance(&mut rng, 10, 3)?;
    let w = random_weights(&mut rng, 3)?;
    let gz = crf::grad_z(&inst, &w)?;
    let fz = oracle::fd_gradient(
        |z| crf::nll(&inst.clone().with_z(z.to_vec()).unwrap(), &w).unwrap_or(f64::NAN),
        inst.z(),
        FD_STEP,
    );
    ok &= verdict("grad_z vs finite differences", max_rel_gap(&gz, &fz), 1e-5);
    let gb = crf::grad_beta(&inst, &w)?;
    let fb = oracle::fd_gradient(
        |b| match PairwiseWeights::new(b.to_vec()) {
            Ok(v) => crf::nll(&inst, &v).unwrap_or(f64::NAN),
            Err(_) => f64::NAN,
        },
        w.as_slice(),
        FD_STEP,
    );
    ok &= verdict(
        "grad_beta vs finite differences",
        max_rel_gap(&gb, &fb),
        1e-5,
    );

    if ok {
        Ok(())
    } else {
        Err(CliError::Numerical("oracle cross-check failed".into()))
    }
}
