// Copyright 2026 The rgbd-distill Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 configuration error, 3 runtime
//! failure.

use crate::baseline::{load_modality_nets, single_modality_trainer, teacher_confusion, FusionTeacher, KdTrainer, TeacherTrainer};
use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::data::{generate_synthetic, load_dataset, write_dataset, Split};
use crate::error::{Error, Result};
use crate::eval::{miou, IouReport};
use crate::losscheck::run_suite;
use crate::training::{confusion, fit, Branches, EpochRow, FitPaths, Learner, Trainer};
use crate::types::{Modality, RgbdSample};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "rgbd-distill", version, about = "Cross-modal distillation for RGB-D segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides applied after the file, e.g. `--set use_con=false`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Directory receiving metrics, checkpoints and reports.
    #[arg(long)]
    out: PathBuf,
    /// Continue from a full checkpoint; its config is used, with `--set` applied.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Joint training of both modality networks.
    Train(RunArgs),
    /// Cross-entropy training of the fusion teacher.
    TrainTeacher(RunArgs),
    /// Distil a single-modality student from a trained teacher.
    TrainKdBaseline {
        #[command(flatten)]
        run: RunArgs,
        /// Teacher checkpoint produced by `train-teacher`.
        #[arg(long)]
        teacher: Option<PathBuf>,
        #[arg(long)]
        modality: Modality,
        /// Weight of the label term; defaults to `kd_alpha` from the config.
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Train one modality network with the segmentation loss only.
    TrainSingle {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        modality: Modality,
    },
    /// Per-class IoU and mIoU of every network in a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Evaluation manifest; defaults to the checkpoint's `eval_manifest`.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Loss identities and gradient checks.
    Losscheck,
    /// Write a synthetic RGB-D dataset with train and test manifests.
    GenSynthetic {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Training images.
        #[arg(long)]
        n: usize,
        /// Test images, drawn after the training images.
        #[arg(long, default_value_t = 0)]
        test_n: usize,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

/// Parses `args` (program name first), runs the command and returns the exit
/// code. Diagnostics go to `err`, results to `out`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{e}");
                    EXIT_USAGE
                }
            };
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn load_config(args: &RunArgs) -> Result<TrainConfig> {
    let mut cfg = match &args.config {
        Some(p) => TrainConfig::load(p).map_err(|e| match e {
            Error::Data { path, msg } => Error::config(format!("{}: {msg}", path.display())),
            other => other,
        })?,
        None => TrainConfig::default(),
    };
    cfg.apply_overrides(&args.overrides)?;
    cfg.validate()
}

/// Training samples and optional evaluation samples named by the config.
fn load_data(cfg: &TrainConfig) -> Result<(Vec<RgbdSample>, Option<Vec<RgbdSample>>)> {
    if cfg.train_manifest.is_empty() {
        return Err(Error::config("train_manifest is not set"));
    }
    let load = |p: &str| -> Result<Vec<RgbdSample>> {
        let (m, samples) = load_dataset(p, cfg.depth_norm, cfg.ignore_index)?;
        if m.num_classes != cfg.num_classes {
            return Err(Error::config(format!(
                "{p} declares {} classes, config has num_classes = {}",
                m.num_classes, cfg.num_classes
            )));
        }
        Ok(samples)
    };
    let train = load(&cfg.train_manifest)?;
    let eval = if cfg.eval_manifest.is_empty() {
        None
    } else {
        Some(load(&cfg.eval_manifest)?)
    };
    Ok((train, eval))
}

fn train_with<L: Learner>(l: &mut L, out_dir: &Path, err: &mut dyn Write) -> Result<Vec<EpochRow>> {
    let cfg = l.config().clone();
    let (train, eval) = load_data(&cfg)?;
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("config.cfg"), cfg.to_text())?;
    let paths = FitPaths { out_dir: out_dir.to_path_buf() };
    let mut progress = |r: &EpochRow| {
        let miou: Vec<String> = r.miou.iter().map(|v| v.map_or("-".into(), |v| format!("{v:.4}"))).collect();
        let _ = writeln!(
            err,
            "epoch {:>4}  lr {:.3e}  loss {:.5}  mIoU rgb {} depth {}  ({:.1}s)",
            r.epoch, r.lr, r.report.total, miou[0], miou[1], r.seconds
        );
    };
    fit(l, &train, eval.as_deref(), &paths, &mut progress)
}

fn resumed_config(mut cfg: TrainConfig, overrides: &[String]) -> Result<TrainConfig> {
    let before = (cfg.backbone, cfg.num_classes);
    cfg.apply_overrides(overrides)?;
    if (cfg.backbone, cfg.num_classes) != before {
        return Err(Error::config("backbone and num_classes cannot change on resume"));
    }
    cfg.validate()
}

fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    match cmd {
        Command::Train(args) => {
            let mut t = match &args.resume {
                Some(p) => {
                    let mut t = Trainer::load(p)?;
                    t.cfg = resumed_config(t.cfg.clone(), &args.overrides)?;
                    t
                }
                None => Trainer::new(load_config(&args)?, Branches::Joint)?,
            };
            train_with(&mut t, &args.out, err)?;
        }
        Command::TrainSingle { run, modality } => {
            let mut t = match &run.resume {
                Some(p) => {
                    let mut t = Trainer::load(p)?;
                    if t.branches != Branches::Single(modality) {
                        return Err(Error::config(format!("{} is not a {modality} single-modality state", p.display())));
                    }
                    t.cfg = resumed_config(t.cfg.clone(), &run.overrides)?;
                    t
                }
                None => single_modality_trainer(load_config(&run)?, modality)?,
            };
            train_with(&mut t, &run.out, err)?;
        }
        Command::TrainTeacher(args) => {
            let mut t = match &args.resume {
                Some(p) => {
                    let mut t = TeacherTrainer::load(p)?;
                    t.cfg = resumed_config(t.cfg.clone(), &args.overrides)?;
                    t
                }
                None => TeacherTrainer::new(load_config(&args)?)?,
            };
            train_with(&mut t, &args.out, err)?;
        }
        Command::TrainKdBaseline { run, teacher, modality, alpha } => {
            let mut t = match (&run.resume, &teacher) {
                (Some(p), _) => {
                    let mut t = KdTrainer::load(p)?;
                    if t.modality != modality {
                        return Err(Error::config(format!("{} distils the {} network", p.display(), t.modality)));
                    }
                    t.cfg = resumed_config(t.cfg.clone(), &run.overrides)?;
                    t
                }
                (None, Some(teacher)) => {
                    let cfg = load_config(&run)?;
                    let alpha = alpha.unwrap_or(cfg.kd_alpha);
                    KdTrainer::from_teacher_checkpoint(cfg, teacher, modality, alpha)?
                }
                (None, None) => return Err(Error::config("--teacher is required unless resuming")),
            };
            train_with(&mut t, &run.out, err)?;
        }
        Command::Eval { checkpoint, manifest, out: out_dir } => {
            let report = evaluate_checkpoint(&checkpoint, manifest.as_deref())?;
            for (name, r) in &report.networks {
                writeln!(out, "[{name}]\n{}", r.table())?;
            }
            fs::create_dir_all(&out_dir)?;
            let path = out_dir.join("eval.json");
            fs::write(&path, serde_json::to_string_pretty(&report).expect("serialisable"))?;
            writeln!(out, "report written to {}", path.display())?;
        }
        Command::Losscheck => {
            let checks = run_suite()?;
            let mut failed = 0;
            for c in &checks {
                writeln!(out, "{c}")?;
                failed += usize::from(!c.passed());
            }
            if failed > 0 {
                writeln!(err, "{failed} of {} checks failed", checks.len())?;
                return Ok(EXIT_RUNTIME);
            }
        }
        Command::GenSynthetic { seed, n, test_n, classes, height, width, out: dir } => {
            if n == 0 {
                return Err(Error::config("--n must be positive"));
            }
            let all = generate_synthetic(seed, n + test_n, height, width, classes).map_err(|e| Error::config(e.to_string()))?;
            let (train, test) = all.split_at(n);
            let p = write_dataset(&dir, "train", train, classes, Split::Train)?;
            writeln!(out, "{}", p.display())?;
            if !test.is_empty() {
                let p = write_dataset(&dir, "test", test, classes, Split::Test)?;
                writeln!(out, "{}", p.display())?;
            }
        }
    }
    Ok(EXIT_OK)
}

/// Contents of the JSON evaluation report.
#[derive(Debug, Serialize)]
pub struct EvalReport {
    pub checkpoint: String,
    pub manifest: String,
    pub kind: String,
    /// `(network, report)` pairs: `rgb`, `depth` or `teacher`.
    pub networks: Vec<(String, IouReport)>,
}

/// Evaluates every network stored in a checkpoint on `manifest`, or on the
/// checkpoint config's `eval_manifest`.
pub fn evaluate_checkpoint(checkpoint: &Path, manifest: Option<&Path>) -> Result<EvalReport> {
    let ck = Checkpoint::load(checkpoint)?;
    let cfg = TrainConfig::parse_str(&ck.meta.config)?;
    let manifest = match manifest {
        Some(m) => m.to_path_buf(),
        None if !cfg.eval_manifest.is_empty() => PathBuf::from(&cfg.eval_manifest),
        None => return Err(Error::config("no --manifest given and the checkpoint has no eval_manifest")),
    };
    let (m, samples) = load_dataset(&manifest, cfg.depth_norm, cfg.ignore_index)?;
    if m.num_classes != cfg.num_classes {
        return Err(Error::config(format!(
            "{} declares {} classes, the checkpoint predicts {}",
            manifest.display(),
            m.num_classes,
            cfg.num_classes
        )));
    }
    let mut networks = Vec::new();
    if ck.meta.kind == "teacher" {
        let mut t = FusionTeacher::restore(&ck)?;
        networks.push(("teacher".to_string(), miou(&teacher_confusion(&mut t, &samples, &cfg)?)?));
    } else {
        for mut net in load_modality_nets(&ck)? {
            let r = miou(&confusion(&mut net, &samples, &cfg)?)?;
            networks.push((net.modality.to_string(), r));
        }
    }
    if networks.is_empty() {
        return Err(Error::Checkpoint(format!("{} holds no evaluable network", checkpoint.display())));
    }
    Ok(EvalReport {
        checkpoint: checkpoint.display().to_string(),
        manifest: manifest.display().to_string(),
        kind: ck.meta.kind.clone(),
        networks,
    })
}
