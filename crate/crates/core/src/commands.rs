//! The `wdm` command-line interface.
//!
//! Every subcommand reads an [`ExperimentConfig`], applies `--set` and
//! `--seed` overrides, archives the effective config in the run directory
//! and writes its results there. Exit statuses:
//!
//! | code | meaning                                              |
//! |------|------------------------------------------------------|
//! | 0    | success (for `verify`: the polarity's success case)  |
//! | 2    | bad command-line usage                               |
//! | 3    | configuration error                                  |
//! | 4    | I/O error                                            |
//! | 5    | numeric error (non-finite values)                    |
//! | 6    | data parse error                                     |
//! | 7    | corrupt or incompatible checkpoint                   |
//! | 8    | statistical error (degenerate scores)                |
//! | 9    | any other invalid input                              |
//! | 10   | `verify`: the polarity's failure case                |
//! | 11   | `prove`: at least one check failed                   |

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::denoiser::Denoiser;
use crate::error::{Result, WdmError};
use crate::experiment::{Experiment, ExperimentConfig, Polarity};
use crate::prove::run_suite;
use crate::train::TrainOutcome;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_IO: i32 = 4;
pub const EXIT_NUMERIC: i32 = 5;
pub const EXIT_PARSE: i32 = 6;
pub const EXIT_CHECKPOINT: i32 = 7;
pub const EXIT_STATISTICAL: i32 = 8;
pub const EXIT_INVALID: i32 = 9;
pub const EXIT_VERDICT: i32 = 10;
pub const EXIT_PROOF: i32 = 11;

pub const BASELINE_FILE: &str = "baseline.wdmk";
pub const CONTROL_FILE: &str = "control.wdmk";
pub const WATERMARKED_FILE: &str = "watermarked.wdmk";

pub fn exit_code(e: &WdmError) -> i32 {
    match e {
        WdmError::Config(_) => EXIT_CONFIG,
        WdmError::Io(_) => EXIT_IO,
        WdmError::Numeric(_) => EXIT_NUMERIC,
        WdmError::Parse { .. } => EXIT_PARSE,
        WdmError::Corrupt(_) | WdmError::VersionMismatch { .. } => EXIT_CHECKPOINT,
        WdmError::Statistical(_) => EXIT_STATISTICAL,
        WdmError::Dimension(_) | WdmError::Parameter(_) | WdmError::Contract(_) => EXIT_INVALID,
    }
}

#[derive(Debug, Parser)]
#[command(name = "wdm", version, about = "Watermark diffusion models and verify ownership")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// Experiment configuration (TOML). Defaults are used when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.epochs=50`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Override the master seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AttackKind {
    Quantize,
    Perturb,
    Finetune,
    All,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the default configuration to a file.
    InitConfig {
        path: PathBuf,
    },
    /// Train the unwatermarked baseline and the independent control model.
    Train(Common),
    /// Embed the watermark (from scratch or by fine-tuning the baseline).
    Embed(Common),
    /// Extract watermark samples from a model.
    Extract {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to extract from; defaults to the watermarked model.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Test whether a suspect model carries the watermark.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Defaults to the watermarked model of the run.
        #[arg(long)]
        suspect: Option<PathBuf>,
        /// Defaults to the control model of the run.
        #[arg(long)]
        control: Option<PathBuf>,
    },
    /// Run removal attacks against the watermarked model.
    Attack {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "all")]
        kind: AttackKind,
    },
    /// Check the kernel identities numerically.
    Prove(Common),
    /// Merge all results under the run directory into `summary.csv`.
    Report(Common),
}

/// Parses arguments and runs; returns the process exit status.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cmd: Command) -> Result<i32> {
    match cmd {
        Command::InitConfig { path } => {
            write_text(&path, &ExperimentConfig::default().to_toml_string()?)?;
            Ok(EXIT_OK)
        }
        Command::Train(c) => cmd_train(&Run::open(&c)?),
        Command::Embed(c) => cmd_embed(&Run::open(&c)?),
        Command::Extract { common, model } => cmd_extract(&Run::open(&common)?, model.as_deref()),
        Command::Verify { common, suspect, control } => {
            cmd_verify(&Run::open(&common)?, suspect.as_deref(), control.as_deref())
        }
        Command::Attack { common, kind } => cmd_attack(&Run::open(&common)?, kind),
        Command::Prove(c) => cmd_prove(&Run::open(&c)?),
        Command::Report(c) => cmd_report(&Run::open(&c)?),
    }
}

/// A resolved configuration and its run directory.
pub struct Run {
    pub exp: Experiment,
    pub dir: PathBuf,
    pub hash: String,
}

impl Run {
    pub fn open(c: &Common) -> Result<Self> {
        let base = match &c.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        let mut cfg = base.with_overrides(&c.set)?;
        if let Some(s) = c.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        let hash = cfg.hash()?;
        let dir = cfg.output_dir.clone();
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        let text = format!("# config_hash = \"{hash}\"\n{}", cfg.to_toml_string()?);
        write_text(&dir.join("config.toml"), &text)?;
        Ok(Run {
            exp: Experiment::new(cfg)?,
            dir,
            hash,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn load_model(&self, path: &Path) -> Result<Denoiser> {
        let ckpt = load_checkpoint(path)?;
        if ckpt.steps != self.exp.sched.steps() {
            return Err(WdmError::Config(format!(
                "{} was trained with {} steps, config has {}",
                path.display(),
                ckpt.steps,
                self.exp.sched.steps()
            )));
        }
        Ok(ckpt.model)
    }

    fn save_model(&self, model: &Denoiser, name: &str) -> Result<()> {
        save_checkpoint(model, &self.exp.sched, &self.path(name))
    }

    fn write_report<T: Serialize>(&self, name: &str, report: &T) -> Result<()> {
        #[derive(Serialize)]
        struct Wrapped<'a, T> {
            config_hash: &'a str,
            report: &'a T,
        }
        let text = toml::to_string(&Wrapped {
            config_hash: &self.hash,
            report,
        })
        .map_err(|e| WdmError::Io(e.to_string()))?;
        write_text(&self.path(name), &text)
    }

    fn write_csv(&self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let path = self.path(name);
        let mut w = csv::Writer::from_path(&path).map_err(|e| WdmError::Io(format!("{}: {e}", path.display())))?;
        let csv_err = |e: csv::Error| WdmError::Io(format!("{}: {e}", path.display()));
        let mut head: Vec<&str> = header.to_vec();
        head.push("config_hash");
        w.write_record(&head).map_err(csv_err)?;
        for row in rows {
            let mut r = row.clone();
            r.push(self.hash.clone());
            w.write_record(&r).map_err(csv_err)?;
        }
        w.flush().map_err(|e| io_err(&path, e))
    }
}

fn io_err(path: &Path, e: std::io::Error) -> WdmError {
    WdmError::Io(format!("{}: {e}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn epoch_losses(role: &str, out: &TrainOutcome, epochs: usize) -> Vec<Vec<String>> {
    if epochs == 0 || out.losses.is_empty() {
        return Vec::new();
    }
    let per = out.losses.len() / epochs;
    out.losses
        .chunks(per.max(1))
        .enumerate()
        .map(|(i, c)| {
            vec![
                role.to_string(),
                (i + 1).to_string(),
                (c.iter().sum::<f64>() / c.len() as f64).to_string(),
            ]
        })
        .collect()
}

fn cmd_train(run: &Run) -> Result<i32> {
    log::info!("training baseline");
    let base = run.exp.train_baseline()?;
    log::info!("training control");
    let ctrl = run.exp.train_control()?;
    run.save_model(&base.model, BASELINE_FILE)?;
    run.save_model(&ctrl.model, CONTROL_FILE)?;
    let epochs = run.exp.cfg.train.epochs;
    let mut rows = epoch_losses("baseline", &base, epochs);
    rows.extend(epoch_losses("control", &ctrl, epochs));
    run.write_csv("train_loss.csv", &["model", "epoch", "mean_loss"], &rows)?;
    Ok(EXIT_OK)
}

fn cmd_embed(run: &Run) -> Result<i32> {
    let base = match run.exp.cfg.watermark.embed {
        crate::experiment::EmbedMode::Finetune => Some(run.load_model(&run.path(BASELINE_FILE))?),
        crate::experiment::EmbedMode::Scratch => None,
    };
    log::info!("embedding watermark");
    let out = run.exp.embed(base.as_ref())?;
    run.save_model(&out.model, WATERMARKED_FILE)?;
    let rows = epoch_losses("watermarked", &out, run.exp.embedding_epochs());
    run.write_csv("embed_loss.csv", &["model", "epoch", "mean_loss"], &rows)?;
    Ok(EXIT_OK)
}

fn cmd_extract(run: &Run, model: Option<&Path>) -> Result<i32> {
    let path = model.map(Path::to_path_buf).unwrap_or_else(|| run.path(WATERMARKED_FILE));
    let m = run.load_model(&path)?;
    let samples = run.exp.extract(&m)?;
    let (n, d) = samples.dims2()?;
    let mut header: Vec<String> = vec!["chain".into()];
    header.extend((0..d).map(|j| format!("x{j}")));
    let rows: Vec<Vec<String>> = (0..n)
        .map(|i| {
            let mut r = vec![i.to_string()];
            r.extend(samples.row(i).iter().map(|v| v.to_string()));
            r
        })
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    run.write_csv("extracted.csv", &header, &rows)?;
    let scores = run.exp.scores_of(&samples)?;
    let rows: Vec<Vec<String>> = scores
        .iter()
        .enumerate()
        .map(|(i, s)| vec![i.to_string(), s.to_string()])
        .collect();
    run.write_csv("extracted_scores.csv", &["repetition", "score"], &rows)?;
    Ok(EXIT_OK)
}

fn cmd_verify(run: &Run, suspect: Option<&Path>, control: Option<&Path>) -> Result<i32> {
    let sp = suspect.map(Path::to_path_buf).unwrap_or_else(|| run.path(WATERMARKED_FILE));
    let cp = control.map(Path::to_path_buf).unwrap_or_else(|| run.path(CONTROL_FILE));
    let report = run.exp.verify_models(&run.load_model(&sp)?, &run.load_model(&cp)?)?;
    run.write_report("verify_report.toml", &report)?;
    println!(
        "verdict: {} (p = {:e}, mu_s = {}, mu_c = {})",
        if report.verdict { "watermark detected" } else { "watermark not detected" },
        report.p_value,
        report.mu_s,
        report.mu_c
    );
    let success = match run.exp.cfg.verify.polarity {
        Polarity::DetectedIsSuccess => report.verdict,
        Polarity::CleanIsSuccess => !report.verdict,
    };
    Ok(if success { EXIT_OK } else { EXIT_VERDICT })
}

fn cmd_attack(run: &Run, kind: AttackKind) -> Result<i32> {
    let model = run.load_model(&run.path(WATERMARKED_FILE))?;
    let control = run.load_model(&run.path(CONTROL_FILE))?;
    let lr = run.exp.cfg.attack.finetune_lr.unwrap_or(run.exp.cfg.train.lr);
    if matches!(kind, AttackKind::Quantize | AttackKind::All) {
        let q = run.exp.quantization_attack(&model, &control)?;
        if q.saturated > 0 {
            log::warn!("{} parameters saturated in half precision", q.saturated);
        }
        run.write_report("attack_quantize.toml", &q)?;
    }
    if matches!(kind, AttackKind::Perturb | AttackKind::All) {
        let rows: Vec<Vec<String>> = run
            .exp
            .perturbation_sweep(&model, &control)?
            .into_iter()
            .map(|r| {
                vec![
                    r.std.to_string(),
                    r.mu_s.to_string(),
                    r.mu_c.to_string(),
                    r.p_value.to_string(),
                    r.verdict.to_string(),
                ]
            })
            .collect();
        run.write_csv("attack_perturb.csv", &["std", "mu_s", "mu_c", "p_value", "verdict"], &rows)?;
    }
    if matches!(kind, AttackKind::Finetune | AttackKind::All) {
        let rows: Vec<Vec<String>> = run
            .exp
            .finetune_trend(&model, &control)?
            .into_iter()
            .map(|r| {
                vec![
                    r.epoch.to_string(),
                    r.fidelity.to_string(),
                    r.mu_s.to_string(),
                    r.p_value.to_string(),
                    r.verdict.to_string(),
                    lr.to_string(),
                ]
            })
            .collect();
        run.write_csv(
            "attack_finetune.csv",
            &["epoch", "fidelity", "mu_s", "p_value", "verdict", "attacker_lr"],
            &rows,
        )?;
    }
    Ok(EXIT_OK)
}

fn cmd_prove(run: &Run) -> Result<i32> {
    let report = run_suite(&run.exp.cfg.prove)?;
    run.write_report("prove_report.toml", &report)?;
    for c in &report.checks {
        println!(
            "{} {:<34} {:?} value={:e}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.kind,
            c.value
        );
    }
    Ok(if report.all_passed { EXIT_OK } else { EXIT_PROOF })
}

const REPORT_FILES: &[&str] = &[
    "verify_report.toml",
    "attack_quantize.toml",
    "prove_report.toml",
    "attack_perturb.csv",
    "attack_finetune.csv",
    "train_loss.csv",
    "embed_loss.csv",
    "extracted_scores.csv",
];

fn flatten_toml(prefix: &str, v: &toml::Value, out: &mut Vec<(String, String)>) {
    match v {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten_toml(&key, v, out);
            }
        }
        toml::Value::Array(a) if a.iter().all(|x| !x.is_table()) => {
            out.push((prefix.to_string(), format!("{} values", a.len())));
        }
        toml::Value::Array(a) => {
            for (i, x) in a.iter().enumerate() {
                flatten_toml(&format!("{prefix}.{i}"), x, out);
            }
        }
        toml::Value::String(s) => out.push((prefix.to_string(), s.clone())),
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

/// Collects every result file in the run directory and its immediate
/// subdirectories (one per parallel job) into `summary.csv`.
fn cmd_report(run: &Run) -> Result<i32> {
    let mut jobs: Vec<(String, PathBuf)> = vec![(".".into(), run.dir.clone())];
    let mut subdirs: Vec<PathBuf> = fs::read_dir(&run.dir)
        .map_err(|e| io_err(&run.dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    for p in subdirs {
        let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        jobs.push((name, p));
    }
    let mut rows = Vec::new();
    for (job, dir) in &jobs {
        for file in REPORT_FILES {
            let path = dir.join(file);
            if !path.exists() {
                continue;
            }
            if file.ends_with(".toml") {
                let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
                let value: toml::Value = toml::from_str(&text)
                    .map_err(|e| WdmError::Parse { offset: 0, message: format!("{}: {e}", path.display()) })?;
                let mut flat = Vec::new();
                flatten_toml("", &value, &mut flat);
                for (k, v) in flat.into_iter().filter(|(k, _)| k != "config_hash") {
                    rows.push(vec![job.clone(), file.to_string(), k, v]);
                }
            } else {
                let mut rdr = csv::Reader::from_path(&path).map_err(|e| WdmError::Io(format!("{}: {e}", path.display())))?;
                let n = rdr.records().count();
                rows.push(vec![job.clone(), file.to_string(), "rows".into(), n.to_string()]);
            }
        }
    }
    run.write_csv("summary.csv", &["job", "file", "key", "value"], &rows)?;
    Ok(EXIT_OK)
}
