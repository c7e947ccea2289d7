//! Watermark-removal attacks: half-precision quantization, Gaussian weight
//! noise and fine-tuning on task data. Every attack works on a copy.

use half::f16;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::Dataset;
use crate::denoiser::Denoiser;
use crate::error::{param_err, Result};
use crate::schedule::NoiseSchedule;
use crate::train::{train_baseline_with, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct QuantizationReport {
    /// Parameters whose magnitude exceeded the largest finite half value.
    pub saturated: usize,
    pub max_abs_change: f64,
}

/// Rounds one value to the nearest binary16 (ties to even) and back,
/// saturating at ±65504.
pub fn quantize_value(v: f64) -> (f64, bool) {
    let h = f16::from_f64(v);
    if h.is_infinite() {
        let max = f64::from(f16::MAX);
        (max.copysign(v), true)
    } else {
        (f64::from(h), false)
    }
}

pub fn quantize_weights_with_report(model: &Denoiser) -> (Denoiser, QuantizationReport) {
    let mut report = QuantizationReport::default();
    let out = model.map_params(|v| {
        let (q, sat) = quantize_value(v);
        if sat {
            report.saturated += 1;
        }
        report.max_abs_change = report.max_abs_change.max((q - v).abs());
        q
    });
    if report.saturated > 0 {
        log::warn!("{} parameters saturated during half-precision quantization", report.saturated);
    }
    (out, report)
}

pub fn quantize_weights(model: &Denoiser) -> Denoiser {
    quantize_weights_with_report(model).0
}

/// Adds independent `N(0, std²)` noise to every parameter. The underlying
/// standard normal draws depend only on `seed`, so for one seed a larger
/// `std` scales the same perturbation direction.
pub fn perturb_weights(model: &Denoiser, std: f64, seed: u64) -> Result<Denoiser> {
    if !std.is_finite() || std < 0.0 {
        return param_err(format!("perturbation std must be finite and non-negative, got {std}"));
    }
    if std == 0.0 {
        return Ok(model.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(model.map_params(|v| {
        let z: f64 = rng.sample(StandardNormal);
        v + std * z
    }))
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub model: Denoiser,
    /// `(epoch, model)` pairs, starting with the untouched model at epoch 0.
    pub snapshots: Vec<(usize, Denoiser)>,
    pub losses: Vec<f64>,
}

/// Default snapshot spacing: a tenth of the epoch budget.
pub fn snapshot_interval(epochs: usize) -> usize {
    (epochs / 10).max(1)
}

/// Fine-tunes all layers with the plain denoising loss on task data. The
/// attacker never sees the trigger or the watermark data.
pub fn finetune_attack(
    model: &Denoiser,
    task: &Dataset,
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
) -> Result<FinetuneOutcome> {
    finetune_attack_every(model, task, sched, cfg, snapshot_interval(cfg.epochs))
}

pub fn finetune_attack_every(
    model: &Denoiser,
    task: &Dataset,
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
    every: usize,
) -> Result<FinetuneOutcome> {
    if every == 0 {
        return param_err("snapshot interval must be positive");
    }
    let mut snapshots = vec![(0, model.clone())];
    let last = cfg.epochs;
    let outcome = train_baseline_with(model, task, sched, cfg, &mut |epoch, m| {
        if epoch % every == 0 || epoch == last {
            snapshots.push((epoch, m.clone()));
        }
        Ok(())
    })?;
    Ok(FinetuneOutcome {
        model: outcome.model,
        snapshots,
        losses: outcome.losses,
    })
}
