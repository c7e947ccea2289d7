//! Baseline DDPM training and joint watermark embedding.
//!
//! Both trainers share one batch sampler with a fixed random-draw contract:
//!
//! * the task stream (ChaCha stream 0) draws, in order, the epoch shuffle, then
//!   per iteration one step per task row and the task noise;
//! * the watermark stream (ChaCha stream 1) draws, per iteration, the
//!   watermark indices and then the watermark noise.
//!
//! Watermark row `j` reuses the step of task row `j mod task_rows`, so each
//! task/watermark pair shares its step. The baseline trainer only consumes the
//! task stream, which makes embedding with the watermark term masked out
//! bit-identical to baseline training on the same seed.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::data::Dataset;
use crate::denoiser::Denoiser;
use crate::error::{dim_err, param_err, Result, WdmError};
use crate::optim::AdamState;
use crate::schedule::NoiseSchedule;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub task_batch: usize,
    pub watermark_batch: usize,
    pub lr: f64,
    pub gamma2: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    /// Desk-scale defaults: 32-row batches split 16/16, lr 1e-3, γ₂ = 1.
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 32,
            task_batch: 16,
            watermark_batch: 16,
            lr: 1e-3,
            gamma2: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Full-scale settings: batch 128 split 64/64, lr 1e-5.
    pub fn full_scale() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 128,
            task_batch: 64,
            watermark_batch: 64,
            lr: 1e-5,
            gamma2: 1.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.task_batch + self.watermark_batch != self.batch_size {
            return param_err(format!(
                "batch split {}+{} does not sum to batch size {}",
                self.task_batch, self.watermark_batch, self.batch_size
            ));
        }
        if self.task_batch == 0 {
            return param_err("task batch must be positive");
        }
        if !(self.gamma2 > 0.0 && self.gamma2.is_finite()) {
            return param_err(format!("gamma2 must be positive, got {}", self.gamma2));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return param_err(format!("learning rate must be non-negative, got {}", self.lr));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WatermarkMode {
    SingleSample,
    MultiSample,
}

/// The secret pieces of a watermark: trigger, trigger factor, and the
/// watermark samples to be learned.
#[derive(Debug, Clone, PartialEq)]
pub struct WatermarkSpec {
    trigger: Tensor,
    gamma1: f64,
    data: Dataset,
    mode: WatermarkMode,
}

impl WatermarkSpec {
    /// `gamma1` must lie in (0, 1]; 1 disables the trigger and exists for testing.
    pub fn new(trigger: Tensor, gamma1: f64, data: Dataset, mode: WatermarkMode) -> Result<Self> {
        if trigger.shape() != data.sample_shape() && trigger.len() != data.dim() {
            return dim_err(format!(
                "trigger shape {:?} does not match sample shape {:?}",
                trigger.shape(),
                data.sample_shape()
            ));
        }
        if !(gamma1 > 0.0 && gamma1 <= 1.0) {
            return param_err(format!("gamma1 must lie in (0, 1], got {gamma1}"));
        }
        if mode == WatermarkMode::SingleSample && data.len() != 1 {
            return param_err(format!(
                "single-sample watermark with {} samples",
                data.len()
            ));
        }
        Ok(WatermarkSpec {
            trigger,
            gamma1,
            data,
            mode,
        })
    }

    /// One watermark sample `a`.
    pub fn single(trigger: Tensor, gamma1: f64, watermark: &Tensor) -> Result<Self> {
        Self::new(trigger, gamma1, Dataset::single(watermark), WatermarkMode::SingleSample)
    }

    pub fn trigger(&self) -> &Tensor {
        &self.trigger
    }

    pub fn gamma1(&self) -> f64 {
        self.gamma1
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn mode(&self) -> WatermarkMode {
        self.mode
    }

    /// Same watermark with a different trigger factor.
    pub fn with_gamma1(&self, gamma1: f64) -> Result<Self> {
        Self::new(self.trigger.clone(), gamma1, self.data.clone(), self.mode)
    }
}

/// `γ₂·mse(eps, pred_task) + mse(eps_w, pred_wm)`
pub fn wdp_loss(eps: &Tensor, eps_w: &Tensor, pred_task: &Tensor, pred_wm: &Tensor, gamma2: f64) -> Result<f64> {
    eps.check_same_shape(pred_task)?;
    eps_w.check_same_shape(pred_wm)?;
    let mse = |a: &Tensor, b: &Tensor| -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
    };
    Ok(gamma2 * mse(eps, pred_task) + mse(eps_w, pred_wm))
}

/// Everything drawn for one optimisation step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDraw {
    pub steps: Vec<usize>,
    /// Noised task inputs `x_t`, `[task_rows, d]`.
    pub task_input: Tensor,
    pub task_noise: Tensor,
    /// Trigger-mixed watermark inputs `γ₁x_t^w + (1−γ₁)b`, `[wm_rows, d]`.
    pub wm_input: Option<Tensor>,
    pub wm_noise: Option<Tensor>,
    pub wm_steps: Vec<usize>,
}

/// Deterministic source of training batches; see the module docs for the
/// draw order.
pub struct BatchSampler<'a> {
    task: &'a Dataset,
    wm: Option<&'a WatermarkSpec>,
    sched: &'a NoiseSchedule,
    task_batch: usize,
    wm_batch: usize,
    task_rng: ChaCha8Rng,
    wm_rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
}

impl<'a> BatchSampler<'a> {
    pub fn new(
        task: &'a Dataset,
        wm: Option<&'a WatermarkSpec>,
        sched: &'a NoiseSchedule,
        cfg: &TrainConfig,
    ) -> Self {
        let mut task_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        task_rng.set_stream(0);
        let mut wm_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        wm_rng.set_stream(1);
        BatchSampler {
            task,
            wm,
            sched,
            task_batch: cfg.task_batch,
            wm_batch: cfg.watermark_batch,
            task_rng,
            wm_rng,
            order: Vec::new(),
            cursor: 0,
        }
    }

    pub fn iterations_per_epoch(&self) -> usize {
        self.task.len().div_ceil(self.task_batch)
    }

    /// Starts an epoch by reshuffling the task order.
    pub fn start_epoch(&mut self) {
        self.order = (0..self.task.len()).collect();
        self.order.shuffle(&mut self.task_rng);
        self.cursor = 0;
    }

    pub fn next_step(&mut self) -> StepDraw {
        let end = (self.cursor + self.task_batch).min(self.order.len());
        let idx = &self.order[self.cursor..end];
        self.cursor = end;
        let rows = idx.len();
        let d = self.task.dim();
        let t_max = self.sched.steps();
        let steps: Vec<usize> = (0..rows).map(|_| self.task_rng.random_range(1..=t_max)).collect();
        let x0 = self.task.gather(idx);
        let noise: Vec<f64> = (0..rows * d).map(|_| self.task_rng.sample(StandardNormal)).collect();
        let task_noise = Tensor::matrix(rows, d, noise).expect("noise shape");
        let task_input = noised(&x0, &task_noise, &steps, self.sched, None);

        let (wm_input, wm_noise, wm_steps) = match self.wm {
            Some(wm) if self.wm_batch > 0 => {
                let n = self.wm_batch;
                let wm_idx: Vec<usize> = (0..n).map(|_| self.wm_rng.random_range(0..wm.data().len())).collect();
                let w0 = wm.data().gather(&wm_idx);
                let noise: Vec<f64> = (0..n * d).map(|_| self.wm_rng.sample(StandardNormal)).collect();
                let wm_noise = Tensor::matrix(n, d, noise).expect("noise shape");
                let wm_steps: Vec<usize> = (0..n).map(|j| steps[j % rows]).collect();
                let mixed = noised(&w0, &wm_noise, &wm_steps, self.sched, Some((wm.trigger(), wm.gamma1())));
                (Some(mixed), Some(wm_noise), wm_steps)
            }
            _ => (None, None, Vec::new()),
        };
        StepDraw {
            steps,
            task_input,
            task_noise,
            wm_input,
            wm_noise,
            wm_steps,
        }
    }
}

/// Row-wise forward sampling with per-row steps, optionally followed by the
/// trigger mix `γ₁·x + (1−γ₁)·b`.
fn noised(x0: &Tensor, eps: &Tensor, steps: &[usize], sched: &NoiseSchedule, mix: Option<(&Tensor, f64)>) -> Tensor {
    let (n, d) = x0.dims2().expect("rank-2 batch");
    let mut out = Vec::with_capacity(n * d);
    for (r, &t) in steps.iter().enumerate() {
        let ab = sched.alpha_bar(t);
        let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
        for c in 0..d {
            let x = sa * x0.data()[r * d + c] + sn * eps.data()[r * d + c];
            out.push(match mix {
                Some((b, g)) => g * x + (1.0 - g) * b.data()[c],
                None => x,
            });
        }
    }
    Tensor::matrix(n, d, out).expect("batch shape")
}

/// Model plus the per-iteration loss trace.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Denoiser,
    pub losses: Vec<f64>,
}

/// Called after every epoch with the 1-based epoch number.
pub type EpochHook<'h> = dyn FnMut(usize, &Denoiser) -> Result<()> + 'h;

struct Objective<'a> {
    wm: Option<&'a WatermarkSpec>,
    wm_weight: f64,
}

fn run(
    model: &Denoiser,
    task: &Dataset,
    objective: Objective<'_>,
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
    hook: &mut EpochHook<'_>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if task.is_empty() {
        return param_err("task dataset is empty");
    }
    if task.dim() != model.arch().input_dim {
        return dim_err(format!(
            "task samples have {} values, model expects {}",
            task.dim(),
            model.arch().input_dim
        ));
    }
    if let Some(wm) = objective.wm {
        if wm.trigger().len() != task.dim() || wm.data().dim() != task.dim() {
            return dim_err("watermark shape does not match task samples");
        }
    }
    let mut model = model.clone();
    let mut adam = AdamState::new(model.params());
    let names = model.arch().param_names();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut sampler = BatchSampler::new(task, objective.wm, sched, cfg);
    let mut losses = Vec::new();

    for epoch in 1..=cfg.epochs {
        sampler.start_epoch();
        for _ in 0..sampler.iterations_per_epoch() {
            let draw = sampler.next_step();
            let mut g = Graph::new();
            let params = model.register(&mut g);
            let x = g.constant(draw.task_input);
            let eps = g.constant(draw.task_noise);
            let pred = model.forward_graph(&mut g, &params, x, &draw.steps)?;
            let task_term = g.mse_loss(pred, eps)?;
            let mut loss = task_term;
            if let (Some(wx), Some(we)) = (draw.wm_input, draw.wm_noise) {
                let weighted = g.scale(task_term, cfg.gamma2);
                let wx = g.constant(wx);
                let we = g.constant(we);
                let wpred = model.forward_graph(&mut g, &params, wx, &draw.wm_steps)?;
                let wm_term = g.mse_loss(wpred, we)?;
                let wm_term = g.scale(wm_term, objective.wm_weight);
                loss = g.add(weighted, wm_term)?;
            }
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(WdmError::Numeric(format!(
                    "non-finite loss at epoch {epoch}, iteration {}",
                    losses.len()
                )));
            }
            losses.push(value);
            g.backward(loss)?;
            let grads: Vec<Tensor> = params.iter().map(|&p| g.grad_tensor(p)).collect();
            adam.step(model.params_mut(), &grads, cfg.lr, &names)?;
            model.apply_precision();
        }
        hook(epoch, &model)?;
    }
    Ok(TrainOutcome { model, losses })
}

/// Trains with the standard simplified DDPM loss on task data only.
pub fn train_baseline(model: &Denoiser, task: &Dataset, sched: &NoiseSchedule, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_baseline_with(model, task, sched, cfg, &mut |_, _| Ok(()))
}

pub fn train_baseline_with(
    model: &Denoiser,
    task: &Dataset,
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
    hook: &mut EpochHook<'_>,
) -> Result<TrainOutcome> {
    let objective = Objective { wm: None, wm_weight: 0.0 };
    run(model, task, objective, sched, cfg, hook)
}

/// Learns the task process and the watermark process together. Works from a
/// fresh model (training from scratch) or a pretrained one (fine-tuning);
/// the optimizer state always starts fresh.
pub fn embed_watermark(
    model: &Denoiser,
    task: &Dataset,
    wm: &WatermarkSpec,
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let objective = Objective { wm: Some(wm), wm_weight: 1.0 };
    run(model, task, objective, sched, cfg, &mut |_, _| Ok(()))
}

/// Embedding with the watermark term multiplied by zero. All watermark draws
/// still happen, so this must reproduce [`train_baseline`] bit for bit when
/// `gamma2 = 1`.
pub fn embed_watermark_masked(
    model: &Denoiser,
    task: &Dataset,
    wm: &WatermarkSpec,
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let objective = Objective { wm: Some(wm), wm_weight: 0.0 };
    run(model, task, objective, sched, cfg, &mut |_, _| Ok(()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::RingMixture;
    use crate::denoiser::Architecture;

    fn setup() -> (Denoiser, Dataset, NoiseSchedule) {
        let m = Denoiser::init(Architecture::new(2, vec![16, 16], 8), 1).unwrap();
        let d = RingMixture::default().sample(64, 2).unwrap();
        (m, d, NoiseSchedule::scaled_linear(20).unwrap())
    }

    fn wm() -> WatermarkSpec {
        WatermarkSpec::single(
            Tensor::from_vec(vec![-1.5, 1.5]),
            0.8,
            &Tensor::from_vec(vec![0.9, 0.9]),
        )
        .unwrap()
    }

    #[test]
    fn wdp_loss_cases() {
        let z = Tensor::zeros(&[2]);
        let e = Tensor::from_vec(vec![1.0, 0.0]);
        let ew = Tensor::from_vec(vec![0.0, 1.0]);
        assert_eq!(wdp_loss(&e, &ew, &e, &ew, 1.0).unwrap(), 0.0);
        assert_eq!(wdp_loss(&e, &ew, &z, &z, 1.0).unwrap(), 1.0);
        assert_eq!(wdp_loss(&e, &ew, &z, &z, 0.0).unwrap(), 0.5);
        assert!(wdp_loss(&e, &ew, &Tensor::zeros(&[3]), &z, 1.0).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        assert!(c.validate().is_ok());
        c.task_batch = 10;
        assert!(c.validate().is_err());
        let c = TrainConfig { gamma2: 0.0, ..TrainConfig::default() };
        assert!(c.validate().is_err());
        assert_eq!(TrainConfig::full_scale().lr, 1e-5);
    }

    #[test]
    fn watermark_spec_validation() {
        let a = Tensor::from_vec(vec![0.0, 0.0]);
        assert!(WatermarkSpec::single(Tensor::zeros(&[3]), 0.8, &a).is_err());
        assert!(WatermarkSpec::single(Tensor::zeros(&[2]), 0.0, &a).is_err());
        let two = Dataset::new(vec![2], vec![0.0; 4]).unwrap();
        assert!(WatermarkSpec::new(Tensor::zeros(&[2]), 0.8, two, WatermarkMode::SingleSample).is_err());
    }

    #[test]
    fn zero_epochs_is_noop() {
        let (m, d, s) = setup();
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        assert_eq!(train_baseline(&m, &d, &s, &cfg).unwrap().model, m);
        assert_eq!(embed_watermark(&m, &d, &wm(), &s, &cfg).unwrap().model, m);
    }

    #[test]
    fn masked_embedding_reproduces_baseline() {
        let (m, d, s) = setup();
        let cfg = TrainConfig { epochs: 3, ..TrainConfig::default() };
        let a = train_baseline(&m, &d, &s, &cfg).unwrap();
        let b = embed_watermark_masked(&m, &d, &wm(), &s, &cfg).unwrap();
        assert_eq!(a.model.flat_params(), b.model.flat_params());
        assert_eq!(a.losses, b.losses);
        let c = embed_watermark(&m, &d, &wm(), &s, &cfg).unwrap();
        assert_ne!(a.model.flat_params(), c.model.flat_params());
    }

    #[test]
    fn recorded_loss_is_wdp_loss_of_draws() {
        let (m, d, s) = setup();
        let w = wm();
        let cfg = TrainConfig { epochs: 1, lr: 0.0, ..TrainConfig::default() };
        let out = embed_watermark(&m, &d, &w, &s, &cfg).unwrap();
        let mut sampler = BatchSampler::new(&d, Some(&w), &s, &cfg);
        sampler.start_epoch();
        for (i, recorded) in out.losses.iter().enumerate() {
            let draw = sampler.next_step();
            // one shared step per task/watermark pair
            assert_eq!(draw.steps, draw.wm_steps);
            let pred_rows = |x: &Tensor, st: &[usize]| -> Tensor {
                let mut rows = Vec::new();
                for (r, &t) in st.iter().enumerate() {
                    rows.extend(m.predict_noise(&Tensor::from_vec(x.row(r).to_vec()), t).unwrap().into_data());
                }
                Tensor::matrix(st.len(), 2, rows).unwrap()
            };
            let pt = pred_rows(&draw.task_input, &draw.steps);
            let wi = draw.wm_input.unwrap();
            let pw = pred_rows(&wi, &draw.wm_steps);
            let expected = wdp_loss(&draw.task_noise, &draw.wm_noise.unwrap(), &pt, &pw, cfg.gamma2).unwrap();
            assert!((recorded - expected).abs() < 1e-12, "iteration {i}");
        }
    }

    #[test]
    fn degenerate_trigger_is_second_standard_term() {
        let (_, d, s) = setup();
        let a = Tensor::from_vec(vec![0.9, 0.9]);
        let plain = WatermarkSpec::single(Tensor::zeros(&[2]), 1.0, &a).unwrap();
        let cfg = TrainConfig::default();
        let mut sampler = BatchSampler::new(&d, Some(&plain), &s, &cfg);
        sampler.start_epoch();
        let draw = sampler.next_step();
        let wi = draw.wm_input.unwrap();
        let wn = draw.wm_noise.unwrap();
        for (r, &t) in draw.wm_steps.iter().enumerate() {
            let ab = s.alpha_bar(t);
            for c in 0..2 {
                let std = ab.sqrt() * a.data()[c] + (1.0 - ab).sqrt() * wn.data()[r * 2 + c];
                assert_eq!(wi.data()[r * 2 + c], std);
            }
        }
    }

    #[test]
    fn training_reduces_loss() {
        let (m, d, s) = setup();
        let cfg = TrainConfig { epochs: 60, task_batch: 16, watermark_batch: 0, batch_size: 16, ..TrainConfig::default() };
        let out = train_baseline(&m, &d, &s, &cfg).unwrap();
        let avg = |w: &[f64]| w.iter().sum::<f64>() / w.len() as f64;
        let n = out.losses.len();
        assert!(avg(&out.losses[n - 20..]) < avg(&out.losses[..20]));
    }
}
