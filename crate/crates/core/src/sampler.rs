//! Ancestral sampling and watermark extraction.
//!
//! Chains are simulated as one batch, but chain `i` draws all of its noise
//! from its own ChaCha stream `i` under the given seed, so a chain's output
//! does not depend on how many other chains run beside it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::denoiser::Denoiser;
use crate::error::{param_err, Result, WdmError};
use crate::schedule::{reverse_step, NoiseSchedule};
use crate::tensor::Tensor;
use crate::train::WatermarkSpec;

/// Anything that predicts the noise of a batch `[n, d]` at a shared step.
pub trait NoisePredictor {
    fn sample_dim(&self) -> usize;
    fn predict(&self, x: &Tensor, t: usize) -> Result<Tensor>;
}

impl NoisePredictor for Denoiser {
    fn sample_dim(&self) -> usize {
        self.arch().input_dim
    }

    fn predict(&self, x: &Tensor, t: usize) -> Result<Tensor> {
        self.predict_noise(x, t)
    }
}

fn chain_rngs(n: usize, seed: u64) -> Vec<ChaCha8Rng> {
    (0..n)
        .map(|i| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(i as u64);
            r
        })
        .collect()
}

fn gaussian_batch(rngs: &mut [ChaCha8Rng], d: usize) -> Tensor {
    let n = rngs.len();
    let mut data = Vec::with_capacity(n * d);
    for r in rngs.iter_mut() {
        for _ in 0..d {
            data.push(r.sample(StandardNormal));
        }
    }
    Tensor::matrix(n, d, data).expect("batch shape")
}

/// Runs the reverse chain from `T` to 1. With `mix = Some((b, γ₁))` the model
/// sees `γ₁·x + (1−γ₁)·b` while the state itself evolves unmixed.
fn reverse_chain<P: NoisePredictor + ?Sized>(
    model: &P,
    sched: &NoiseSchedule,
    n: usize,
    seed: u64,
    mix: Option<(&Tensor, f64)>,
) -> Result<Tensor> {
    if n == 0 {
        return param_err("need at least one chain");
    }
    let d = model.sample_dim();
    let mut rngs = chain_rngs(n, seed);
    let mut x = gaussian_batch(&mut rngs, d);
    for t in (1..=sched.steps()).rev() {
        let input = match mix {
            Some((b, g)) => {
                let mut v = x.clone();
                for (i, val) in v.data_mut().iter_mut().enumerate() {
                    *val = g * *val + (1.0 - g) * b.data()[i % d];
                }
                v
            }
            None => x.clone(),
        };
        let eps = model.predict(&input, t)?;
        let z = if t > 1 {
            gaussian_batch(&mut rngs, d)
        } else {
            Tensor::zeros(&[n, d])
        };
        x = reverse_step(&x, &eps, t, sched, &z)?;
        if !x.is_finite() {
            return Err(WdmError::Numeric(format!("non-finite chain state at step {t}")));
        }
    }
    Ok(x)
}

/// `n` task samples as an `[n, d]` matrix.
pub fn sample_task<P: NoisePredictor + ?Sized>(model: &P, sched: &NoiseSchedule, n: usize, seed: u64) -> Result<Tensor> {
    reverse_chain(model, sched, n, seed, None)
}

/// `n` extracted watermark samples as an `[n, d]` matrix.
pub fn extract_watermark<P: NoisePredictor + ?Sized>(
    model: &P,
    wm: &WatermarkSpec,
    sched: &NoiseSchedule,
    n: usize,
    seed: u64,
) -> Result<Tensor> {
    reverse_chain(model, sched, n, seed, Some((wm.trigger(), wm.gamma1())))
}

/// Clamps samples to `[-1, 1]` for image export.
pub fn clamp_for_export(samples: &Tensor) -> Tensor {
    samples.map(|v| v.clamp(-1.0, 1.0))
}
