//! Command-line front end: `gridsearch`, `train`, `eval` and `upsample`.
//!
//! Each command is also callable in-process through the `cmd_*` functions.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::checkpoint::{from_checkpoint, to_checkpoint, Checkpoint};
use crate::config::{Resolved, RunConfig};
use crate::error::{Error, Result};
use crate::imageops::{downsample, to_grayscale};
use crate::io::{read_flo, read_image, write_flo, write_image};
use crate::optim::Optimizer;
use crate::pipeline::{
    dataset_mean, evaluate, grid_search_scales, load_manifest, train_epochs, EpochRecord, GridSearchResult, Model,
    Prediction, TaskKind, TaskMetrics, UpsampleTask,
};

/// Which parameter groups learn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Variant {
    /// Scaled basic features, Gaussian kernels, nothing learnt.
    Basic,
    /// Learnt lattice kernels on basic features.
    Kernels,
    /// Learnt feature embedding with Gaussian kernels.
    Embedding,
    /// Embedding and kernels learnt jointly.
    Both,
}

#[derive(Clone, Debug, Default, Args)]
pub struct CommonArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (0: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Selects which parameter groups learn.
    #[arg(long, value_enum)]
    pub variant: Option<Variant>,
    /// Drop the batch normalization at the end of the embedding network.
    #[arg(long)]
    pub no_batchnorm: bool,
    /// Feed spatial coordinates through the embedding network.
    #[arg(long)]
    pub embed_spatial: bool,
    /// Refine the spatial scale factor during training.
    #[arg(long)]
    pub learn_lambda_s: bool,
    /// Keep the normalization kernel Gaussian.
    #[arg(long)]
    pub gaussian_normalization: bool,
    /// Filter the data directly instead of its offset from the guidance.
    #[arg(long)]
    pub no_offset: bool,
}

#[derive(Debug, Parser)]
#[command(name = "permlattice", version, about = "Learnt permutohedral lattice filtering for guided upsampling")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Search the feature scale factors with fixed Gaussian kernels.
    Gridsearch {
        #[command(flatten)]
        common: CommonArgs,
        /// Where to write the config with the chosen scales
        /// (default: `<config>.tuned.toml`).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train and write a checkpoint plus a CSV log.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Output checkpoint (default: `[paths] checkpoint`).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Overrides the configured number of epochs.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Evaluate a checkpoint on the evaluation manifest.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Upsample one input with a trained checkpoint.
    Upsample {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Low-resolution data (image, or `.flo` for flow).
        #[arg(long)]
        input: PathBuf,
        /// High-resolution guidance image.
        #[arg(long)]
        guidance: PathBuf,
        /// Output file (image, or `.flo` for flow).
        #[arg(long)]
        output: PathBuf,
    },
}

impl Command {
    pub fn common(&self) -> &CommonArgs {
        match self {
            Command::Gridsearch { common, .. }
            | Command::Train { common, .. }
            | Command::Eval { common, .. }
            | Command::Upsample { common, .. } => common,
        }
    }
}

/// Loads the config named in `args` and applies the command-line overrides.
pub fn load_config(args: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&args.config)?;
    apply_overrides(&mut cfg, args);
    Ok(cfg)
}

pub fn apply_overrides(cfg: &mut RunConfig, args: &CommonArgs) {
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(t) = args.threads {
        cfg.threads = t;
    }
    if let Some(v) = args.variant {
        let (e, k) = match v {
            Variant::Basic => (false, false),
            Variant::Kernels => (false, true),
            Variant::Embedding => (true, false),
            Variant::Both => (true, true),
        };
        cfg.train.learn_embedding = e;
        cfg.train.learn_kernels = k;
    }
    cfg.model.batch_norm &= !args.no_batchnorm;
    cfg.model.embed_spatial |= args.embed_spatial;
    cfg.scale.learn_lambda_s |= args.learn_lambda_s;
    cfg.train.gaussian_normalization |= args.gaussian_normalization;
    if args.no_offset {
        cfg.model.offset_mode = Some(false);
    }
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::Config(format!("missing path: {what}")))
}

fn load_tasks(r: &Resolved, manifest: &Path) -> Result<Vec<UpsampleTask>> {
    let tasks = load_manifest(manifest, r.task)?;
    if tasks.is_empty() {
        return Err(Error::Format(format!("{} lists no samples", manifest.display())));
    }
    if let Some(t) = tasks.iter().find(|t| t.factor != r.factor) {
        return Err(Error::Format(format!("sample with factor {} in a factor-{} run", t.factor, r.factor)));
    }
    Ok(tasks)
}

/// Grid search over the configured candidates. Writes the per-candidate
/// table to `[paths] report` (if set) and the config with the winning scales
/// to `output`.
pub fn cmd_gridsearch(cfg: &RunConfig, config_path: &Path, output: Option<&Path>) -> Result<GridSearchResult> {
    let r = cfg.resolve()?;
    let tasks = load_tasks(&r, required(&r.paths.train_manifest, "[paths] train_manifest")?)?;
    let mean = dataset_mean(tasks.iter().map(|t| &t.guidance))?;
    let result = grid_search_scales(r.shape, &mean, &tasks, &r.grid_lambda_s, &r.grid_lambda_i)?;

    let metric = match r.task {
        TaskKind::Color => "psnr",
        TaskKind::Flow => "aee",
    };
    let mut table = format!("lambda_s,lambda_i,{metric}\n");
    for c in &result.table {
        writeln!(table, "{},{},{:.6}", c.lambda_s, c.lambda_i, c.metric).unwrap();
    }
    if let Some(p) = &r.paths.report {
        std::fs::write(p, &table)?;
    }
    let mut tuned = RunConfig::parse(&std::fs::read_to_string(config_path)?)?;
    tuned.scale.lambda_s = Some(result.best.lambda_s);
    tuned.scale.lambda_i = Some(result.best.lambda_i);
    let default_out = config_path.with_extension("tuned.toml");
    std::fs::write(output.unwrap_or(&default_out), tuned.to_toml()?)?;
    Ok(result)
}

fn write_log(path: &Path, curve: &[EpochRecord], append: bool) -> Result<()> {
    let fresh = !append || !path.exists();
    let mut f = std::fs::OpenOptions::new().create(true).append(!fresh).write(true).truncate(fresh).open(path)?;
    if fresh {
        writeln!(f, "epoch,loss,metric,empty_cells")?;
    }
    for e in curve {
        writeln!(f, "{},{:.9e},{:.9e},{}", e.epoch, e.loss, e.metric, e.empty_cells)?;
    }
    Ok(())
}

/// Trains from scratch (or from `resume`) up to the configured epoch count,
/// writes the checkpoint and appends the epochs run to `[paths] log`.
pub fn cmd_train(cfg: &RunConfig, checkpoint_out: Option<&Path>, resume: Option<&Path>) -> Result<Vec<EpochRecord>> {
    let r = cfg.resolve()?;
    let out = match checkpoint_out {
        Some(p) => p,
        None => required(&r.paths.checkpoint, "[paths] checkpoint or --checkpoint")?,
    };
    let tasks = load_tasks(&r, required(&r.paths.train_manifest, "[paths] train_manifest")?)?;
    let (mut model, mut optimizer, start) = match resume {
        Some(p) => {
            let state = from_checkpoint(&Checkpoint::load(p)?)?;
            check_compatible(&state.model, &r)?;
            let mut opt = Optimizer::new(r.optim.clone())?;
            opt.restore(state.optimizer_steps, state.moments)?;
            (state.model, opt, state.epoch)
        }
        None => {
            let mean = dataset_mean(tasks.iter().map(|t| &t.guidance))?;
            (Model::init(r.shape, r.scale, mean, r.train.seed)?, Optimizer::new(r.optim.clone())?, 0)
        }
    };
    let count = r.train.epochs.saturating_sub(start);
    let curve = train_epochs(&mut model, &mut optimizer, &tasks, &r.train, start, count)?;
    to_checkpoint(&model, Some(&optimizer), start + count).save(out)?;
    if let Some(log) = &r.paths.log {
        write_log(log, &curve, resume.is_some())?;
    }
    Ok(curve)
}

fn check_compatible(model: &Model, r: &Resolved) -> Result<()> {
    if model.shape != r.shape {
        return Err(Error::Version(format!(
            "checkpoint model {:?} does not match configured model {:?}",
            model.shape, r.shape
        )));
    }
    Ok(())
}

fn load_model(r: &Resolved, checkpoint: Option<&Path>) -> Result<Model> {
    let path = match checkpoint {
        Some(p) => p,
        None => required(&r.paths.checkpoint, "[paths] checkpoint or --checkpoint")?,
    };
    let state = from_checkpoint(&Checkpoint::load(path)?)?;
    check_compatible(&state.model, r)?;
    Ok(state.model)
}

/// Per-image metrics plus their mean, rendered as CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<TaskMetrics>,
    pub text: String,
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn fmt_metric(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.6}"))
}

pub fn render_report(kind: TaskKind, rows: &[TaskMetrics]) -> String {
    let mut s = String::new();
    match kind {
        TaskKind::Color => {
            s.push_str("image,psnr,empty_cells\n");
            for (i, m) in rows.iter().enumerate() {
                writeln!(s, "{i},{},{}", fmt_metric(m.psnr), m.empty_cells).unwrap();
            }
            writeln!(s, "mean,{},", fmt_metric(mean_defined(rows.iter().map(|m| m.psnr)))).unwrap();
        }
        TaskKind::Flow => {
            s.push_str("image,aee,baee,empty_cells\n");
            for (i, m) in rows.iter().enumerate() {
                writeln!(s, "{i},{},{},{}", fmt_metric(m.aee), fmt_metric(m.baee), m.empty_cells).unwrap();
            }
            writeln!(
                s,
                "mean,{},{},",
                fmt_metric(mean_defined(rows.iter().map(|m| m.aee))),
                fmt_metric(mean_defined(rows.iter().map(|m| m.baee)))
            )
            .unwrap();
        }
    }
    s
}

/// Evaluates a checkpoint on `[paths] eval_manifest`; the report also goes
/// to `[paths] report` when set.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<EvalReport> {
    let r = cfg.resolve()?;
    let model = load_model(&r, checkpoint)?;
    let tasks = load_tasks(&r, required(&r.paths.eval_manifest, "[paths] eval_manifest")?)?;
    let rows = evaluate(&model, &tasks)?;
    let text = render_report(r.task, &rows);
    if let Some(p) = &r.paths.report {
        std::fs::write(p, &text)?;
    }
    Ok(EvalReport { rows, text })
}

/// Upsamples `input` under `guidance` and writes the result to `output`.
pub fn cmd_upsample(
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    input: &Path,
    guidance: &Path,
    output: &Path,
) -> Result<Prediction> {
    let r = cfg.resolve()?;
    let model = load_model(&r, checkpoint)?;
    let lowres = match r.task {
        TaskKind::Color => read_image(input)?,
        TaskKind::Flow => read_flo(input)?,
    };
    let guide = read_image(guidance)?;
    let guide = match r.task {
        TaskKind::Color => to_grayscale(&guide)?,
        TaskKind::Flow => guide,
    };
    if lowres.height() == 0 || guide.height() % lowres.height() != 0 {
        return Err(Error::Format("guidance size is not a multiple of the input size".into()));
    }
    let factor = guide.height() / lowres.height();
    let task = UpsampleTask::new(lowres, downsample(&guide, factor)?, guide, None)?;
    let pred = model.predict(&task)?;
    match r.task {
        TaskKind::Color => write_image(output, &pred.output)?,
        TaskKind::Flow => write_flo(output, &pred.output)?,
    }
    Ok(pred)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(cli.command.common())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Gridsearch { common, output } => {
            let res = cmd_gridsearch(&cfg, &common.config, output.as_deref())?;
            for c in &res.table {
                println!("lambda_s={} lambda_i={} metric={:.6}", c.lambda_s, c.lambda_i, c.metric);
            }
            println!("best: lambda_s={} lambda_i={}", res.best.lambda_s, res.best.lambda_i);
            Ok(())
        }
        Command::Train { checkpoint, resume, epochs, .. } => {
            let mut cfg = cfg.clone();
            if let Some(e) = epochs {
                cfg.train.epochs = *e;
            }
            for e in cmd_train(&cfg, checkpoint.as_deref(), resume.as_deref())? {
                println!("epoch {} loss {:.6e} metric {:.4} empty {}", e.epoch, e.loss, e.metric, e.empty_cells);
            }
            Ok(())
        }
        Command::Eval { checkpoint, .. } => {
            print!("{}", cmd_eval(&cfg, checkpoint.as_deref())?.text);
            Ok(())
        }
        Command::Upsample { checkpoint, input, guidance, output, .. } => {
            let p = cmd_upsample(&cfg, checkpoint.as_deref(), input, guidance, output)?;
            println!("wrote {} ({} empty cells)", output.display(), p.empty_cells);
            Ok(())
        }
    })
}

/// Parses `args` and runs the command. Returns the process exit code:
/// 0 success, 2 usage or configuration error, 3 data error, 4 numeric failure.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
