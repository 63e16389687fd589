use std::path::{Path, PathBuf};

use clap::Parser;
use permlattice::checkpoint::{from_checkpoint, to_checkpoint, Checkpoint};
use permlattice::cli::{cmd_eval, cmd_gridsearch, cmd_train, cmd_upsample, main_with_args, Cli, Command};
use permlattice::config::RunConfig;
use permlattice::imageops::to_grayscale;
use permlattice::io::{read_image, write_image};
use permlattice::pipeline::{dataset_mean, load_manifest, synth, Model, TaskKind, UpsampleTask};
use permlattice::{Error, Image};

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    /// Synthetic colour set written as PNGs with train/eval manifests.
    fn new(grey: bool) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let mut manifest = String::new();
        for (i, img) in synth::synthetic_color_images(3, 24, 24, 11).into_iter().enumerate() {
            let img = if grey { to_grayscale(&img).unwrap().broadcast(3).unwrap() } else { img };
            let name = format!("img{i}.png");
            write_image(dir.path().join(&name), &img).unwrap();
            manifest.push_str(&format!("[[sample]]\nhighres = \"{name}\"\nfactor = 4\n\n"));
        }
        std::fs::write(dir.path().join("train.toml"), &manifest).unwrap();
        std::fs::write(dir.path().join("eval.toml"), &manifest).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn config(&self, extra: &str) -> PathBuf {
        let text = format!(
            "seed = 3\n\n[train]\nepochs = 2\ncrop_height = 16\ncrop_width = 16\nbatch_size = 2\n\n\
             [gridsearch]\nlambda_s = [0.65]\nlambda_i = [5.0]\n\n\
             [paths]\ntrain_manifest = \"train.toml\"\neval_manifest = \"eval.toml\"\n\
             checkpoint = \"model.ckpt\"\nlog = \"log.csv\"\nreport = \"report.csv\"\n{extra}"
        );
        let p = self.path("run.toml");
        std::fs::write(&p, text).unwrap();
        p
    }
}

fn load(p: &Path) -> RunConfig {
    RunConfig::load(p).unwrap()
}

#[test]
fn gridsearch_single_candidate_is_echoed() {
    let fx = Fixture::new(false);
    let cfg_path = fx.config("");
    let res = cmd_gridsearch(&load(&cfg_path), &cfg_path, None).unwrap();
    assert_eq!((res.best.lambda_s, res.best.lambda_i), (0.65, 5.0));
    let tuned = RunConfig::load(fx.path("run.tuned.toml")).unwrap();
    assert_eq!((tuned.scale.lambda_s, tuned.scale.lambda_i), (Some(0.65), Some(5.0)));
    let report = std::fs::read_to_string(fx.path("report.csv")).unwrap();
    assert!(report.starts_with("lambda_s,lambda_i,psnr\n0.65,5,"));
    let again = cmd_gridsearch(&load(&cfg_path), &cfg_path, None).unwrap();
    assert_eq!(again, res);
}

#[test]
fn zero_epochs_writes_the_initialization() {
    let fx = Fixture::new(false);
    let cfg_path = fx.config("");
    let mut cfg = load(&cfg_path);
    cfg.train.epochs = 0;
    let curve = cmd_train(&cfg, None, None).unwrap();
    assert!(curve.is_empty());
    let r = cfg.resolve().unwrap();
    let tasks = load_manifest(fx.path("train.toml"), TaskKind::Color).unwrap();
    let mean = dataset_mean(tasks.iter().map(|t| &t.guidance)).unwrap();
    let init = Model::init(r.shape, r.scale, mean, 3).unwrap();
    let expected = to_checkpoint(&init, Some(&permlattice::optim::Optimizer::new(r.optim).unwrap()), 0);
    assert_eq!(Checkpoint::load(fx.path("model.ckpt")).unwrap(), expected);
}

#[test]
fn resumed_training_continues_the_curve() {
    let fx = Fixture::new(false);
    let cfg_path = fx.config("");
    let mut cfg = load(&cfg_path);
    cfg.train.epochs = 4;
    let full = cmd_train(&cfg, Some(&fx.path("full.ckpt")), None).unwrap();

    cfg.train.epochs = 2;
    let first = cmd_train(&cfg, Some(&fx.path("half.ckpt")), None).unwrap();
    cfg.train.epochs = 4;
    let second = cmd_train(&cfg, Some(&fx.path("resumed.ckpt")), Some(&fx.path("half.ckpt"))).unwrap();
    let joined: Vec<_> = first.into_iter().chain(second).collect();
    assert_eq!(joined.len(), full.len());
    for (a, b) in joined.iter().zip(&full) {
        assert_eq!(a.epoch, b.epoch);
        assert!((a.loss - b.loss).abs() <= 1e-6 * b.loss.abs().max(1.0));
        assert!((a.metric - b.metric).abs() <= 1e-6 * b.metric.abs().max(1.0));
    }
    let a = from_checkpoint(&Checkpoint::load(fx.path("full.ckpt")).unwrap()).unwrap();
    let b = from_checkpoint(&Checkpoint::load(fx.path("resumed.ckpt")).unwrap()).unwrap();
    assert_eq!(a.model.kernel, b.model.kernel);
    assert_eq!(a.epoch, 4);
    let log = std::fs::read_to_string(fx.path("log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 4);
}

#[test]
fn variants_map_to_learning_flags() {
    let parse = |v: &str| {
        let cli = Cli::try_parse_from(["permlattice", "train", "--config", "x.toml", "--variant", v]).unwrap();
        let mut cfg = RunConfig::default();
        permlattice::cli::apply_overrides(&mut cfg, cli.command.common());
        (cfg.train.learn_embedding, cfg.train.learn_kernels)
    };
    assert_eq!(parse("basic"), (false, false));
    assert_eq!(parse("kernels"), (false, true));
    assert_eq!(parse("embedding"), (true, false));
    assert_eq!(parse("both"), (true, true));
    let cli = Cli::try_parse_from([
        "permlattice",
        "train",
        "--config",
        "x.toml",
        "--no-batchnorm",
        "--embed-spatial",
        "--learn-lambda-s",
        "--gaussian-normalization",
        "--seed",
        "9",
        "--threads",
        "2",
    ])
    .unwrap();
    let mut cfg = RunConfig::default();
    permlattice::cli::apply_overrides(&mut cfg, cli.command.common());
    assert!(!cfg.model.batch_norm && cfg.model.embed_spatial && cfg.scale.learn_lambda_s);
    assert!(cfg.train.gaussian_normalization);
    assert_eq!((cfg.seed, cfg.threads), (9, 2));
    assert!(matches!(cli.command, Command::Train { .. }));
}

const GOLDEN: &str = "image,psnr,empty_cells\n0,inf,0\n1,inf,0\n2,inf,0\nmean,inf,\n";

#[test]
fn eval_report_on_zero_offset_set_matches_golden() {
    let fx = Fixture::new(true);
    let cfg_path = fx.config("");
    let cfg = load(&cfg_path);
    cmd_train(&cfg, None, None).unwrap();
    let report = cmd_eval(&cfg, None).unwrap();
    assert_eq!(report.text, GOLDEN);
    assert_eq!(std::fs::read_to_string(fx.path("report.csv")).unwrap(), GOLDEN);
    assert_eq!(cmd_eval(&cfg, None).unwrap(), report);
}

#[test]
fn eval_aggregate_is_the_mean_of_rows() {
    let fx = Fixture::new(false);
    let cfg = load(&fx.config(""));
    cmd_train(&cfg, None, None).unwrap();
    let report = cmd_eval(&cfg, None).unwrap();
    let mean: f64 = report.rows.iter().map(|r| r.psnr.unwrap()).sum::<f64>() / report.rows.len() as f64;
    let last = report.text.lines().last().unwrap();
    let printed: f64 = last.split(',').nth(1).unwrap().parse().unwrap();
    assert!((printed - mean).abs() < 1e-6);
    for (line, row) in report.text.lines().skip(1).zip(&report.rows) {
        let v: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!((v - row.psnr.unwrap()).abs() < 1e-6);
    }
}

#[test]
fn incompatible_checkpoint_is_a_version_error() {
    let fx = Fixture::new(false);
    let cfg_path = fx.config("");
    let cfg = load(&cfg_path);
    cmd_train(&cfg, None, None).unwrap();
    let mut other = cfg.clone();
    other.train.learn_embedding = false;
    assert!(matches!(cmd_eval(&other, None), Err(Error::Version(_))));
    std::fs::write(fx.path("junk.ckpt"), b"SLCK\x07\x00\x00\x00\x00\x00\x00\x00").unwrap();
    assert!(matches!(cmd_eval(&cfg, Some(&fx.path("junk.ckpt"))), Err(Error::Version(_))));
}

#[test]
fn upsample_grey_input_at_unit_factor_returns_guidance() {
    let fx = Fixture::new(true);
    let cfg = load(&fx.config(""));
    cmd_train(&cfg, None, None).unwrap();
    let grey = read_image(fx.path("img0.png")).unwrap();
    write_image(fx.path("guide.png"), &to_grayscale(&grey).unwrap()).unwrap();
    let pred = cmd_upsample(&cfg, None, &fx.path("img0.png"), &fx.path("guide.png"), &fx.path("out.png")).unwrap();
    assert_eq!(pred.output, grey);
    let written = read_image(fx.path("out.png")).unwrap();
    for (a, b) in written.as_slice().iter().zip(grey.as_slice()) {
        assert!((a - b).abs() < 1e-5);
    }
}

#[test]
fn upsample_matches_in_process_prediction() {
    let fx = Fixture::new(false);
    let cfg = load(&fx.config(""));
    cmd_train(&cfg, None, None).unwrap();
    let task = UpsampleTask::from_rgb(read_image(fx.path("img1.png")).unwrap(), 4).unwrap();
    write_image(fx.path("small.png"), &task.lowres).unwrap();
    write_image(fx.path("guide.png"), &task.guidance).unwrap();
    let pred = cmd_upsample(&cfg, None, &fx.path("small.png"), &fx.path("guide.png"), &fx.path("out.png")).unwrap();

    let model = from_checkpoint(&Checkpoint::load(fx.path("model.ckpt")).unwrap()).unwrap().model;
    let lowres = read_image(fx.path("small.png")).unwrap();
    let guide = read_image(fx.path("guide.png")).unwrap();
    let lowres_guide = permlattice::imageops::downsample(&guide, 4).unwrap();
    let direct = model.predict(&UpsampleTask::new(lowres, lowres_guide, guide, None).unwrap()).unwrap();
    assert_eq!(direct.output, pred.output);
    let written = read_image(fx.path("out.png")).unwrap();
    let quantized: Image = direct.output.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0);
    for (a, b) in written.as_slice().iter().zip(quantized.as_slice()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn exit_codes() {
    let fx = Fixture::new(false);
    let cfg_path = fx.config("");
    let cfg = cfg_path.to_str().unwrap();
    assert_eq!(main_with_args(["permlattice", "frobnicate"]), 2);
    assert_eq!(main_with_args(["permlattice", "--help"]), 0);
    std::fs::write(fx.path("bad.toml"), "factor = 0\n").unwrap();
    assert_eq!(main_with_args(["permlattice", "train", "--config", fx.path("bad.toml").to_str().unwrap()]), 2);
    assert_eq!(main_with_args(["permlattice", "eval", "--config", cfg, "--checkpoint", "/nonexistent/ckpt"]), 3);
    assert_eq!(main_with_args(["permlattice", "train", "--config", cfg, "--epochs", "1", "--threads", "2"]), 0);
    assert_eq!(main_with_args(["permlattice", "eval", "--config", cfg]), 0);
    assert_eq!(Error::NonFiniteLoss("x".into()).exit_code(), 4);
    assert_eq!(Error::NonFiniteGradient("x".into()).exit_code(), 4);
}

#[test]
fn training_is_deterministic_across_thread_counts() {
    let fx = Fixture::new(false);
    let cfg_path = fx.config("");
    let cfg = cfg_path.to_str().unwrap();
    let mut logs = Vec::new();
    for threads in ["1", "3"] {
        assert_eq!(main_with_args(["permlattice", "train", "--config", cfg, "--threads", threads]), 0);
        logs.push(std::fs::read_to_string(fx.path("log.csv")).unwrap());
    }
    assert_eq!(logs[0], logs[1]);
}
