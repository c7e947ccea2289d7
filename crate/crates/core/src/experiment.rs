//! Experiment configuration and the end-to-end pipeline shared by the CLI,
//! the acceptance suite and the C interface.
//!
//! All randomness in a run derives from the master `seed` through
//! [`derive_seed`], one stream per role (data, baseline, control, extraction
//! and so on), so two runs of one configuration are bit-identical.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attacks::{finetune_attack_every, perturb_weights, quantize_weights_with_report, snapshot_interval};
use crate::data::{load_dataset, DataFormat, Dataset, ImageOptions, RingMixture};
use crate::denoiser::{Architecture, Denoiser};
use crate::error::{Result, WdmError};
use crate::prove::SuiteOptions;
use crate::sampler::{clamp_for_export, extract_watermark, sample_task};
use crate::schedule::NoiseSchedule;
use crate::tensor::Tensor;
use crate::train::{embed_watermark, train_baseline, TrainConfig, TrainOutcome, WatermarkMode, WatermarkSpec};
use crate::verify::{frechet_similarity, mse_per_sample, prf_trigger, verify, VerificationReport, DEFAULT_ALPHA};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_1: f64,
    pub beta_t: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            steps: 100,
            beta_1: 1e-3,
            beta_t: 0.2,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.steps, self.beta_1, self.beta_t)
    }
}

/// Optimisation settings; seeds come from the experiment's master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub task_batch: usize,
    pub watermark_batch: usize,
    pub lr: f64,
    pub gamma2: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            epochs: 600,
            batch_size: 32,
            task_batch: 16,
            watermark_batch: 16,
            lr: 1e-3,
            gamma2: 1.0,
        }
    }
}

impl TrainSettings {
    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            task_batch: self.task_batch,
            watermark_batch: self.watermark_batch,
            lr: self.lr,
            gamma2: self.gamma2,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TaskSource {
    Ring {
        modes: usize,
        radius: f64,
        spread: f64,
    },
    File {
        path: PathBuf,
        format: DataFormat,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        image: Option<ImageOptions>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Training rows. For file sources the first `train_size` rows train and
    /// the next `holdout_size` rows are held out.
    pub train_size: usize,
    pub holdout_size: usize,
    pub task: TaskSource,
}

impl Default for DataConfig {
    fn default() -> Self {
        let ring = RingMixture::default();
        DataConfig {
            train_size: 512,
            holdout_size: 5000,
            task: TaskSource::Ring {
                modes: ring.modes,
                radius: ring.radius,
                spread: ring.spread,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TriggerSource {
    /// An explicitly chosen trigger.
    Values { values: Vec<f64> },
    /// A trigger derived from a secret key, uniform in `[low, high)`.
    Prf { key: String, low: f64, high: f64 },
    /// The first sample of a data file.
    File {
        path: PathBuf,
        format: DataFormat,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        image: Option<ImageOptions>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum WatermarkSource {
    /// One watermark sample.
    Values { values: Vec<f64> },
    /// Every sample of a data file.
    File {
        path: PathBuf,
        format: DataFormat,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        image: Option<ImageOptions>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbedMode {
    /// Train from a fresh initialisation with both objectives.
    Scratch,
    /// Continue from the trained baseline.
    Finetune,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WatermarkConfig {
    pub gamma1: f64,
    pub embed: EmbedMode,
    /// Epochs of watermark fine-tuning; only used in `finetune` mode.
    pub finetune_epochs: usize,
    pub trigger: TriggerSource,
    pub sample: WatermarkSource,
}

impl Default for WatermarkConfig {
    fn default() -> Self {
        WatermarkConfig {
            gamma1: 0.8,
            embed: EmbedMode::Scratch,
            finetune_epochs: 100,
            trigger: TriggerSource::Values {
                values: vec![-30.0, 30.0],
            },
            sample: WatermarkSource::Values {
                values: vec![0.0, 0.0],
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Mse,
    Frechet,
}

/// Which verdict the `verify` command reports as exit status 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Polarity {
    /// Exit 0 when the watermark is detected in the suspect model.
    DetectedIsSuccess,
    /// Exit 0 when the suspect model is judged clean.
    CleanIsSuccess,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    pub repetitions: usize,
    pub alpha: f64,
    pub metric: Metric,
    /// Extracted samples per repetition when `metric = "frechet"`.
    pub frechet_batch: usize,
    /// Clamp generated samples to `[-1, 1]` before scoring.
    pub clamp: bool,
    /// Task samples drawn for fidelity and leakage measurements.
    pub fidelity_samples: usize,
    pub polarity: Polarity,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            repetitions: 100,
            alpha: DEFAULT_ALPHA,
            metric: Metric::Mse,
            frechet_batch: 50,
            clamp: false,
            fidelity_samples: 5000,
            polarity: Polarity::DetectedIsSuccess,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub perturb_stds: Vec<f64>,
    /// Fine-tuning budget as a fraction of the embedding epochs.
    pub finetune_fraction: f64,
    /// Snapshot spacing as a fraction of the fine-tuning budget.
    pub snapshot_fraction: f64,
    /// Attacker learning rate; defaults to the defender's.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finetune_lr: Option<f64>,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            perturb_stds: vec![0.005, 0.01, 0.02, 0.04],
            finetune_fraction: 0.1,
            snapshot_fraction: 0.1,
            finetune_lr: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub schedule: ScheduleConfig,
    pub model: Architecture,
    pub train: TrainSettings,
    pub data: DataConfig,
    pub watermark: WatermarkConfig,
    pub verify: VerifyConfig,
    pub attack: AttackConfig,
    pub prove: SuiteOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            schedule: ScheduleConfig::default(),
            model: Architecture::new(2, vec![128, 128, 128], 16),
            train: TrainSettings::default(),
            data: DataConfig::default(),
            watermark: WatermarkConfig::default(),
            verify: VerifyConfig::default(),
            attack: AttackConfig::default(),
            prove: SuiteOptions::default(),
        }
    }
}

fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(WdmError::Config(msg.into()))
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| WdmError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| WdmError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| WdmError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Applies `key.path=value` overrides. Values parse as TOML where possible
    /// and fall back to plain strings.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Value = toml::Value::try_from(self).map_err(|e| WdmError::Config(e.to_string()))?;
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| WdmError::Config(format!("override '{item}' is not key=value")))?;
            let value = parse_override_value(raw.trim());
            set_path(&mut doc, key.trim(), value)?;
        }
        let cfg: ExperimentConfig = doc.try_into().map_err(|e: toml::de::Error| WdmError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.build().map_err(|e| WdmError::Config(e.to_string()))?;
        self.model.validate().map_err(|e| WdmError::Config(e.to_string()))?;
        self.train
            .to_train_config(0)
            .validate()
            .map_err(|e| WdmError::Config(e.to_string()))?;
        if !(self.watermark.gamma1 > 0.0 && self.watermark.gamma1 <= 1.0) {
            return config_err(format!("watermark.gamma1 must lie in (0, 1], got {}", self.watermark.gamma1));
        }
        if self.verify.repetitions < 2 {
            return config_err("verify.repetitions must be at least 2");
        }
        if !(self.verify.alpha > 0.0 && self.verify.alpha < 1.0) {
            return config_err("verify.alpha must lie in (0, 1)");
        }
        if self.verify.metric == Metric::Frechet && self.verify.frechet_batch < 2 {
            return config_err("verify.frechet_batch must be at least 2");
        }
        if self.verify.fidelity_samples < 2 {
            return config_err("verify.fidelity_samples must be at least 2");
        }
        if self.attack.perturb_stds.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return config_err("attack.perturb_stds must be finite and non-negative");
        }
        if self.attack.finetune_fraction.is_nan() || self.attack.finetune_fraction < 0.0 || !(self.attack.snapshot_fraction > 0.0 && self.attack.snapshot_fraction <= 1.0) {
            return config_err("attack fractions out of range");
        }
        if self.data.train_size == 0 || self.data.holdout_size < 2 {
            return config_err("data.train_size must be positive and data.holdout_size at least 2");
        }
        Ok(())
    }

    /// SHA-256 of the canonical TOML rendering, as lowercase hex.
    pub fn hash(&self) -> Result<String> {
        let text = self.to_toml_string()?;
        Ok(Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect())
    }
}

fn parse_override_value(raw: &str) -> toml::Value {
    let probe = format!("v = {raw}");
    match probe.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_path(doc: &mut toml::Value, key: &str, value: toml::Value) -> Result<()> {
    let mut cur = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| WdmError::Config(format!("'{key}': '{part}' is not inside a table")))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), value);
            return Ok(());
        }
        cur = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    config_err("empty override key")
}

/// Role-specific seed: the first eight bytes of `SHA-256(seed ‖ role)`.
pub fn derive_seed(master: u64, role: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(role.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest length"))
}

fn load_source(path: &Path, format: DataFormat, image: Option<ImageOptions>) -> Result<Dataset> {
    load_dataset(path, format, image)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizationOutcome {
    pub saturated: usize,
    pub max_abs_change: f64,
    pub before: VerificationReport,
    pub after: VerificationReport,
    /// `|μ_s(after) − μ_s(before)|`.
    pub delta_ws: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationRow {
    pub std: f64,
    pub mu_s: f64,
    pub mu_c: f64,
    pub p_value: f64,
    pub verdict: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendRow {
    pub epoch: usize,
    pub fidelity: f64,
    pub mu_s: f64,
    pub p_value: f64,
    pub verdict: bool,
}

/// A configuration resolved into schedule, data and watermark.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub sched: NoiseSchedule,
    pub task: Dataset,
    pub holdout: Dataset,
    pub watermark: WatermarkSpec,
}

impl Experiment {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let sched = cfg.schedule.build()?;
        let (task, holdout) = Self::load_task(&cfg)?;
        if task.dim() != cfg.model.input_dim {
            return config_err(format!(
                "task samples have {} values but model.input_dim is {}",
                task.dim(),
                cfg.model.input_dim
            ));
        }
        let shape = task.sample_shape().to_vec();
        let trigger = match &cfg.watermark.trigger {
            TriggerSource::Values { values } => Tensor::new(shape.clone(), values.clone())
                .map_err(|e| WdmError::Config(format!("watermark.trigger: {e}")))?,
            TriggerSource::Prf { key, low, high } => prf_trigger(key.as_bytes(), &shape, *low, *high)?,
            TriggerSource::File { path, format, image } => {
                let ds = load_source(path, *format, *image)?;
                Tensor::new(shape.clone(), ds.sample(0).to_vec())
                    .map_err(|e| WdmError::Config(format!("watermark.trigger: {e}")))?
            }
        };
        let (data, mode) = match &cfg.watermark.sample {
            WatermarkSource::Values { values } => {
                let t = Tensor::new(shape.clone(), values.clone())
                    .map_err(|e| WdmError::Config(format!("watermark.sample: {e}")))?;
                (Dataset::single(&t), WatermarkMode::SingleSample)
            }
            WatermarkSource::File { path, format, image } => {
                let ds = load_source(path, *format, *image)?;
                let mode = if ds.len() == 1 {
                    WatermarkMode::SingleSample
                } else {
                    WatermarkMode::MultiSample
                };
                (ds, mode)
            }
        };
        if cfg.verify.metric == Metric::Frechet && data.len() < 2 {
            return config_err("the frechet metric needs a watermark dataset with at least two samples");
        }
        let watermark = WatermarkSpec::new(trigger, cfg.watermark.gamma1, data, mode)
            .map_err(|e| WdmError::Config(format!("watermark: {e}")))?;
        Ok(Experiment {
            cfg,
            sched,
            task,
            holdout,
            watermark,
        })
    }

    fn load_task(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
        let (n, m) = (cfg.data.train_size, cfg.data.holdout_size);
        match &cfg.data.task {
            TaskSource::Ring { modes, radius, spread } => {
                let ring = RingMixture {
                    modes: *modes,
                    radius: *radius,
                    spread: *spread,
                };
                Ok((
                    ring.sample(n, derive_seed(cfg.seed, "data-train"))?,
                    ring.sample(m, derive_seed(cfg.seed, "data-holdout"))?,
                ))
            }
            TaskSource::File { path, format, image } => {
                let all = load_source(path, *format, *image)?;
                if all.len() < n + m {
                    return config_err(format!(
                        "{} has {} samples, need {} for training plus {} held out",
                        path.display(),
                        all.len(),
                        n,
                        m
                    ));
                }
                let d = all.dim();
                let shape = all.sample_shape().to_vec();
                let train = Dataset::new(shape.clone(), all.values()[..n * d].to_vec())?;
                let hold = Dataset::new(shape, all.values()[n * d..(n + m) * d].to_vec())?;
                Ok((train, hold))
            }
        }
    }

    pub fn seed(&self, role: &str) -> u64 {
        derive_seed(self.cfg.seed, role)
    }

    fn fresh(&self, role: &str) -> Result<Denoiser> {
        Denoiser::init(self.cfg.model.clone(), self.seed(&format!("{role}-init")))
    }

    /// The unwatermarked reference model.
    pub fn train_baseline(&self) -> Result<TrainOutcome> {
        let cfg = self.cfg.train.to_train_config(self.seed("baseline-train"));
        train_baseline(&self.fresh("baseline")?, &self.task, &self.sched, &cfg)
    }

    /// An independent unwatermarked model used as the verification control.
    pub fn train_control(&self) -> Result<TrainOutcome> {
        let cfg = self.cfg.train.to_train_config(self.seed("control-train"));
        train_baseline(&self.fresh("control")?, &self.task, &self.sched, &cfg)
    }

    /// Embeds the watermark. From scratch the run shares the baseline's
    /// initialisation and task stream; fine-tuning starts from `baseline`.
    pub fn embed(&self, baseline: Option<&Denoiser>) -> Result<TrainOutcome> {
        match self.cfg.watermark.embed {
            EmbedMode::Scratch => {
                let cfg = self.cfg.train.to_train_config(self.seed("baseline-train"));
                embed_watermark(&self.fresh("baseline")?, &self.task, &self.watermark, &self.sched, &cfg)
            }
            EmbedMode::Finetune => {
                let base = baseline.ok_or_else(|| {
                    WdmError::Config("finetune embedding needs a trained baseline".into())
                })?;
                let mut cfg = self.cfg.train.to_train_config(self.seed("embed-train"));
                cfg.epochs = self.cfg.watermark.finetune_epochs;
                embed_watermark(base, &self.task, &self.watermark, &self.sched, &cfg)
            }
        }
    }

    /// Epochs the watermark was trained for.
    pub fn embedding_epochs(&self) -> usize {
        match self.cfg.watermark.embed {
            EmbedMode::Scratch => self.cfg.train.epochs,
            EmbedMode::Finetune => self.cfg.watermark.finetune_epochs,
        }
    }

    fn post(&self, x: Tensor) -> Tensor {
        if self.cfg.verify.clamp {
            clamp_for_export(&x)
        } else {
            x
        }
    }

    /// Extraction chains for every repetition, `[chains, d]`.
    pub fn extract(&self, model: &Denoiser) -> Result<Tensor> {
        let per = match self.cfg.verify.metric {
            Metric::Mse => 1,
            Metric::Frechet => self.cfg.verify.frechet_batch,
        };
        let n = self.cfg.verify.repetitions * per;
        Ok(self.post(extract_watermark(model, &self.watermark, &self.sched, n, self.seed("extract"))?))
    }

    /// One watermark similarity score per repetition.
    pub fn watermark_scores(&self, model: &Denoiser) -> Result<Vec<f64>> {
        let samples = self.extract(model)?;
        self.scores_of(&samples)
    }

    pub fn scores_of(&self, samples: &Tensor) -> Result<Vec<f64>> {
        let wm = self.watermark.data();
        match self.cfg.verify.metric {
            Metric::Mse => {
                if wm.len() == 1 {
                    return mse_per_sample(&wm.sample_tensor(0), samples);
                }
                let (n, _) = samples.dims2()?;
                (0..n)
                    .map(|i| {
                        let row = Tensor::from_vec(samples.row(i).to_vec());
                        let mut best = f64::INFINITY;
                        for j in 0..wm.len() {
                            best = best.min(crate::verify::mse_similarity(&wm.sample_tensor(j), &row)?);
                        }
                        Ok(best)
                    })
                    .collect()
            }
            Metric::Frechet => {
                let (n, d) = samples.dims2()?;
                let per = self.cfg.verify.frechet_batch;
                let reference = wm.as_matrix();
                (0..n / per)
                    .map(|r| {
                        let batch = Tensor::matrix(per, d, samples.data()[r * per * d..(r + 1) * per * d].to_vec())?;
                        frechet_similarity(&batch, &reference)
                    })
                    .collect()
            }
        }
    }

    pub fn verify_scores(&self, d_s: &[f64], d_c: &[f64]) -> Result<VerificationReport> {
        verify(d_s, d_c, self.cfg.verify.alpha)
    }

    pub fn verify_models(&self, suspect: &Denoiser, control: &Denoiser) -> Result<VerificationReport> {
        let d_s = self.watermark_scores(suspect)?;
        let d_c = self.watermark_scores(control)?;
        self.verify_scores(&d_s, &d_c)
    }

    pub fn task_samples(&self, model: &Denoiser) -> Result<Tensor> {
        Ok(self.post(sample_task(
            model,
            &self.sched,
            self.cfg.verify.fidelity_samples,
            self.seed("task-samples"),
        )?))
    }

    /// Fréchet distance between generated task samples and the held-out set.
    pub fn fidelity(&self, model: &Denoiser) -> Result<f64> {
        frechet_similarity(&self.task_samples(model)?, &self.holdout.as_matrix())
    }

    /// Mean similarity score of generated task samples to the watermark.
    pub fn leakage(&self, model: &Denoiser) -> Result<f64> {
        let samples = self.task_samples(model)?;
        let saved = self.cfg.verify.metric;
        let scores = if saved == Metric::Mse {
            self.scores_of(&samples)?
        } else {
            let mut me = self.clone();
            me.cfg.verify.metric = Metric::Mse;
            me.scores_of(&samples)?
        };
        Ok(scores.iter().sum::<f64>() / scores.len() as f64)
    }

    pub fn quantization_attack(&self, model: &Denoiser, control: &Denoiser) -> Result<QuantizationOutcome> {
        let d_c = self.watermark_scores(control)?;
        let before = self.verify_scores(&self.watermark_scores(model)?, &d_c)?;
        let (q, report) = quantize_weights_with_report(model);
        let after = self.verify_scores(&self.watermark_scores(&q)?, &d_c)?;
        Ok(QuantizationOutcome {
            saturated: report.saturated,
            max_abs_change: report.max_abs_change,
            delta_ws: (after.mu_s - before.mu_s).abs(),
            before,
            after,
        })
    }

    pub fn perturbation_sweep(&self, model: &Denoiser, control: &Denoiser) -> Result<Vec<PerturbationRow>> {
        let d_c = self.watermark_scores(control)?;
        let seed = self.seed("perturb");
        self.cfg
            .attack
            .perturb_stds
            .iter()
            .map(|&std| {
                let attacked = perturb_weights(model, std, seed)?;
                let r = self.verify_scores(&self.watermark_scores(&attacked)?, &d_c)?;
                Ok(PerturbationRow {
                    std,
                    mu_s: r.mu_s,
                    mu_c: r.mu_c,
                    p_value: r.p_value,
                    verdict: r.verdict,
                })
            })
            .collect()
    }

    /// Fine-tunes `model` on task data only and scores every snapshot.
    pub fn finetune_trend(&self, model: &Denoiser, control: &Denoiser) -> Result<Vec<TrendRow>> {
        let epochs = (self.embedding_epochs() as f64 * self.cfg.attack.finetune_fraction).round() as usize;
        let mut cfg = self.cfg.train.to_train_config(self.seed("finetune-attack"));
        cfg.epochs = epochs;
        if let Some(lr) = self.cfg.attack.finetune_lr {
            cfg.lr = lr;
        }
        let every = ((epochs as f64 * self.cfg.attack.snapshot_fraction).round() as usize).max(1);
        let every = if epochs == 0 { snapshot_interval(0) } else { every };
        let out = finetune_attack_every(model, &self.task, &self.sched, &cfg, every)?;
        let d_c = self.watermark_scores(control)?;
        out.snapshots
            .iter()
            .map(|(epoch, m)| {
                let r = self.verify_scores(&self.watermark_scores(m)?, &d_c)?;
                Ok(TrendRow {
                    epoch: *epoch,
                    fidelity: self.fidelity(m)?,
                    mu_s: r.mu_s,
                    p_value: r.p_value,
                    verdict: r.verdict,
                })
            })
            .collect()
    }
}
