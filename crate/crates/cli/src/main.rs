//! `slrbm` command-line tool.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 verification
//! failure.

mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Axis;
use slrbm::data::{
    encode_checkpoint, load_checkpoint, load_idx_images, load_idx_labels, split_indices, subset,
    write_idx_images, write_idx_labels, RawImages, DEFAULT_THRESHOLD,
};
use slrbm::eval::{encode, export_representations, knn_classify, EncodeMode, EvalSummary};
use slrbm::trainer::train;
use slrbm::verify::{self, OracleCheck, OracleSizes};
use slrbm::{Dataset, DeltaSource, ModelKind, TrainConfig};

use manifest::{InputFile, Inputs, RunManifest};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Verification(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Verification(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Verification(m) => f.write_str(m),
        }
    }
}

impl From<slrbm::Error> for CliError {
    fn from(e: slrbm::Error) -> Self {
        use slrbm::Error as E;
        match e {
            E::InvalidArgument(_)
            | E::Config(_)
            | E::TooLarge { .. }
            | E::TooManyNeighbors { .. }
            | E::MissingLabels => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser)]
#[command(
    name = "slrbm",
    version,
    about = "Signed-Laplacian regularized RBMs: train, evaluate with 1NN, verify against exact enumeration"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes checkpoint.slrbm, train_report.csv and manifest.toml.
    Train(TrainArgs),
    /// 1NN error rate of a checkpoint's codes; writes eval.csv.
    Eval(EvalArgs),
    /// Check closed forms against exact enumeration and graph identities.
    OracleCheck(OracleArgs),
    /// Export hidden codes as CSV; writes reprs.csv.
    DumpReprs(DumpArgs),
    /// Write disjoint stratified train/test IDX files from one labelled set.
    Split(SplitArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Rbm,
    Slrbm,
    Graphrbm,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Rbm => ModelKind::Rbm,
            ModelArg::Slrbm => ModelKind::Slrbm,
            ModelArg::Graphrbm => ModelKind::GraphRbm,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DeltaArg {
    MeanField,
    Sample,
}

#[derive(Clone, Copy, ValueEnum)]
enum CodeArg {
    Probability,
    Sample,
}

#[derive(Args)]
struct TrainArgs {
    /// IDX image file (gzip accepted)
    #[arg(long, required_unless_present = "replay")]
    images: Option<PathBuf>,
    /// IDX label file (gzip accepted)
    #[arg(long, required_unless_present = "replay")]
    labels: Option<PathBuf>,
    /// TOML file of training keys (`key = value` per line); flags override it
    #[arg(long, conflicts_with = "replay")]
    config: Option<PathBuf>,
    /// Re-run from a manifest.toml; inputs are checked against its digests
    #[arg(long)]
    replay: Option<PathBuf>,
    /// Model variant [default: slrbm]
    #[arg(long, value_enum)]
    model: Option<ModelArg>,
    /// Regularization weight lambda; ignored for rbm [default: 1e-2]
    #[arg(long)]
    lambda: Option<f64>,
    /// Learning rate [default: 1e-2]
    #[arg(long)]
    eta: Option<f64>,
    /// Minibatch size [default: 100]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Passes over the data [default: 100]
    #[arg(long)]
    epochs: Option<usize>,
    /// L2 decay on the weights [default: 1e-4]
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Hidden units [default: 128]
    #[arg(long)]
    n_hidden: Option<usize>,
    /// Gibbs steps per update [default: 1]
    #[arg(long)]
    cd_k: Option<usize>,
    /// Master seed for initialization, shuffling and sampling [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Neighbour states in delta: probabilities or binary samples [default: mean-field]
    #[arg(long, value_enum)]
    delta_source: Option<DeltaArg>,
    /// Apply delta in the negative phase too [default: true]
    #[arg(long)]
    delta_in_negative_phase: Option<bool>,
    /// Neighbours per point for graphrbm [default: 5]
    #[arg(long)]
    knn_p: Option<usize>,
    /// Heat-kernel width for graphrbm edges; unit weights when absent
    #[arg(long)]
    knn_rho: Option<f64>,
    /// Pixels strictly above this byte value become 1 [default: 127]
    #[arg(long)]
    threshold: Option<u8>,
    /// Train on a stratified subset with this many examples per class
    #[arg(long)]
    per_class: Option<usize>,
    /// Seed of the subset draw [default: the training seed]
    #[arg(long)]
    subset_seed: Option<u64>,
    /// Output directory
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Trained checkpoint
    #[arg(long)]
    checkpoint: PathBuf,
    /// Reference set images for 1NN
    #[arg(long)]
    train_images: PathBuf,
    #[arg(long)]
    train_labels: PathBuf,
    /// Query set images
    #[arg(long)]
    test_images: PathBuf,
    #[arg(long)]
    test_labels: PathBuf,
    /// Binarization threshold; should match training
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: u8,
    /// Neighbours in the vote
    #[arg(long, default_value_t = 1)]
    k: usize,
    /// Codes used for the distance
    #[arg(long, value_enum, default_value = "probability")]
    codes: CodeArg,
    /// Seed for sampled codes
    #[arg(long, default_value_t = 0)]
    encode_seed: u64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct OracleArgs {
    /// Random instances per suite; 0 passes vacuously
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Largest visible layer drawn
    #[arg(long, default_value_t = 4)]
    max_visible: usize,
    /// Largest hidden layer drawn
    #[arg(long, default_value_t = 4)]
    max_hidden: usize,
    /// Largest batch drawn
    #[arg(long, default_value_t = 3)]
    max_batch: usize,
}

#[derive(Args)]
struct DumpArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: u8,
    /// Keep only these labels, e.g. 0,1
    #[arg(long, value_delimiter = ',')]
    classes: Option<Vec<u8>>,
    /// Stratified subset with this many examples per class
    #[arg(long)]
    per_class: Option<usize>,
    #[arg(long, default_value_t = 0)]
    subset_seed: u64,
    #[arg(long, value_enum, default_value = "probability")]
    codes: CodeArg,
    #[arg(long, default_value_t = 0)]
    encode_seed: u64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// Training examples per class
    #[arg(long)]
    train_per_class: usize,
    /// Held-out examples per class
    #[arg(long, default_value_t = 0)]
    test_per_class: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::OracleCheck(a) => cmd_oracle_check(a),
        Command::DumpReprs(a) => cmd_dump_reprs(a),
        Command::Split(a) => cmd_split(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_dataset(images: &Path, labels: &Path, threshold: u8) -> Result<Dataset> {
    for path in [images, labels] {
        if !path.is_file() {
            return Err(CliError::Data(format!("{}: no such file", path.display())));
        }
    }
    Ok(Dataset::load(images, labels, threshold)?)
}

fn read_checkpoint(path: &Path) -> Result<slrbm::Checkpoint> {
    load_checkpoint(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn code_mode(codes: CodeArg, seed: u64) -> EncodeMode {
    match codes {
        CodeArg::Probability => EncodeMode::Probability,
        CodeArg::Sample => EncodeMode::Sample { seed },
    }
}

/// Flags over the config file (or replayed manifest) over defaults.
fn resolve_config(args: &TrainArgs, base: TrainConfig) -> Result<TrainConfig> {
    let mut c = base;
    if let Some(m) = args.model {
        c.model = m.into();
    }
    macro_rules! set {
        ($($field:ident),*) => { $(if let Some(x) = args.$field { c.$field = x; })* };
    }
    set!(
        lambda,
        eta,
        batch_size,
        epochs,
        weight_decay,
        n_hidden,
        cd_k,
        seed,
        delta_in_negative_phase,
        knn_p
    );
    if let Some(d) = args.delta_source {
        c.delta_source = match d {
            DeltaArg::MeanField => DeltaSource::MeanField,
            DeltaArg::Sample => DeltaSource::Sample,
        };
    }
    if args.knn_rho.is_some() {
        c.knn_rho = args.knn_rho;
    }
    if c.model == ModelKind::Rbm && c.lambda != 0.0 {
        if args.lambda.is_some() {
            eprintln!("warning: --lambda is ignored for --model rbm");
        }
        c.lambda = 0.0;
    }
    c.validate()?;
    Ok(c)
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let (base, replayed) = match (&args.replay, &args.config) {
        (Some(path), _) => {
            let m = RunManifest::read(path)?;
            m.inputs.images.verify()?;
            m.inputs.labels.verify()?;
            (m.config.clone(), Some(m))
        }
        (None, Some(path)) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            (TrainConfig::from_toml(&text)?, None)
        }
        (None, None) => (TrainConfig::default(), None),
    };
    let config = resolve_config(&args, base)?;

    let images = args
        .images
        .clone()
        .or_else(|| replayed.as_ref().map(|m| m.inputs.images.path.clone()))
        .expect("clap requires images without --replay");
    let labels = args
        .labels
        .clone()
        .or_else(|| replayed.as_ref().map(|m| m.inputs.labels.path.clone()))
        .expect("clap requires labels without --replay");
    let threshold = args
        .threshold
        .or(replayed.as_ref().map(|m| m.threshold))
        .unwrap_or(DEFAULT_THRESHOLD);
    let per_class = args
        .per_class
        .or(replayed.as_ref().and_then(|m| m.per_class));
    let subset_seed = per_class.map(|_| {
        args.subset_seed
            .or(replayed.as_ref().and_then(|m| m.subset_seed))
            .unwrap_or(config.seed)
    });

    let mut data = load_dataset(&images, &labels, threshold)?;
    if let (Some(pc), Some(seed)) = (per_class, subset_seed) {
        data = subset(&data, pc, seed)?;
    }

    create_dir(&args.out_dir)?;
    let mut manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: config.seed,
        threshold,
        per_class,
        subset_seed,
        config: config.clone(),
        inputs: Inputs {
            images: InputFile::digest(&images)?,
            labels: InputFile::digest(&labels)?,
        },
        outputs: RunManifest::outputs_in(&args.out_dir),
    };
    manifest.write()?;

    let (params, report) = train(&data, &config)?;
    let bytes = encode_checkpoint(&params, &config)?;
    fs::write(&manifest.outputs.checkpoint, &bytes)
        .map_err(|e| CliError::Data(format!("{}: {e}", manifest.outputs.checkpoint.display())))?;
    write_file(&manifest.outputs.train_report, &report.to_csv())?;
    manifest.outputs.checkpoint_sha256 = Some(manifest::sha256_file(&manifest.outputs.checkpoint)?);
    manifest.write()?;

    let last = report.epochs.last();
    println!(
        "trained {} on {} samples for {} epochs in {:.1}s{}",
        config.model.as_str(),
        data.len(),
        config.epochs,
        report.seconds,
        last.map(|e| format!(", final reconstruction error {:.4}", e.recon_error))
            .unwrap_or_default()
    );
    println!("checkpoint {}", manifest.outputs.checkpoint.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let ck = read_checkpoint(&args.checkpoint)?;
    let train_set = load_dataset(&args.train_images, &args.train_labels, args.threshold)?;
    let test_set = load_dataset(&args.test_images, &args.test_labels, args.threshold)?;
    let mode = code_mode(args.codes, args.encode_seed);
    let a = encode(&ck.params, &train_set, mode)?;
    let b = encode(&ck.params, &test_set, mode)?;
    let result = knn_classify(&a, &b, args.k)?;
    let summary = EvalSummary {
        model: ck.config.model.as_str().to_string(),
        lambda: ck.config.effective_lambda(),
        eta: ck.config.eta,
        seed: ck.seed(),
        error_rate: result.error_rate,
    };
    create_dir(&args.out_dir)?;
    let path = args.out_dir.join(manifest::EVAL);
    write_file(
        &path,
        &format!("{}\n{}\n", EvalSummary::CSV_HEADER, summary.csv_row()),
    )?;
    println!(
        "{} 1NN error {:.2}% ({} test, {} reference)",
        summary.model,
        100.0 * result.error_rate,
        test_set.len(),
        train_set.len()
    );
    Ok(())
}

fn cmd_oracle_check(args: OracleArgs) -> Result<()> {
    let check = OracleCheck {
        trials: args.trials,
        seed: args.seed,
        sizes: OracleSizes {
            max_visible: args.max_visible,
            max_hidden: args.max_hidden,
            max_batch: args.max_batch,
        },
    };
    if check.trials == 0 {
        eprintln!("warning: 0 trials requested; every suite passes vacuously");
    }
    let reports = verify::run_all(&check)?;
    let mut failed = Vec::new();
    for r in &reports {
        println!(
            "{:<12} {}/{} passed  worst {:.3e}  {}",
            r.name,
            r.passed,
            r.trials,
            r.worst,
            if r.ok() { "ok" } else { "FAIL" }
        );
        if let Some(f) = &r.first_failure {
            println!("  first failure: {f}");
        }
        if !r.ok() {
            failed.push(r.name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verification(format!(
            "failed suites: {}",
            failed.join(", ")
        )))
    }
}

fn cmd_dump_reprs(args: DumpArgs) -> Result<()> {
    let ck = read_checkpoint(&args.checkpoint)?;
    let mut data = load_dataset(&args.images, &args.labels, args.threshold)?;
    if let Some(classes) = &args.classes {
        data = data.filter_classes(classes);
    }
    if let Some(pc) = args.per_class {
        if !data.is_empty() {
            data = subset(&data, pc, args.subset_seed)?;
        }
    }
    let mut reps = encode(&ck.params, &data, code_mode(args.codes, args.encode_seed))?;
    reps.source = Some(args.checkpoint.display().to_string());
    create_dir(&args.out_dir)?;
    let path = args.out_dir.join(manifest::REPRS);
    export_representations(&reps, &path)?;
    println!("{} rows to {}", reps.len(), path.display());
    Ok(())
}

fn select_raw(raw: &RawImages, indices: &[usize]) -> RawImages {
    RawImages {
        rows: raw.rows,
        cols: raw.cols,
        pixels: raw.pixels.select(Axis(0), indices),
    }
}

fn cmd_split(args: SplitArgs) -> Result<()> {
    let raw = load_idx_images(&args.images)?;
    let labels = load_idx_labels(&args.labels)?;
    if raw.len() != labels.len() {
        return Err(CliError::Data(format!(
            "{} images but {} labels",
            raw.len(),
            labels.len()
        )));
    }
    let (train_idx, test_idx) = split_indices(
        &labels,
        args.train_per_class,
        args.test_per_class,
        args.seed,
    )?;
    create_dir(&args.out_dir)?;
    let mut parts = vec![("train", train_idx)];
    if args.test_per_class > 0 {
        parts.push(("test", test_idx));
    }
    for (name, idx) in parts {
        let img = args.out_dir.join(format!("{name}-images-idx3-ubyte.gz"));
        let lab = args.out_dir.join(format!("{name}-labels-idx1-ubyte.gz"));
        write_idx_images(&img, &select_raw(&raw, &idx))?;
        let picked: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
        write_idx_labels(&lab, &picked)?;
        println!("{name}: {} samples to {}", idx.len(), img.display());
    }
    Ok(())
}
