//! Adam with bias correction.

use crate::error::{dim_err, Result, WdmError};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    /// Fresh state with the usual (0.9, 0.999, 1e-8) hyperparameters.
    pub fn new(params: &[Tensor]) -> Self {
        Self::with_hyper(params, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyper(params: &[Tensor], beta1: f64, beta2: f64, eps: f64) -> Self {
        AdamState {
            beta1,
            beta2,
            eps,
            step: 0,
            first: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            second: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update in place. `names` label parameters in error messages.
    pub fn step(
        &mut self,
        params: &mut [Tensor],
        grads: &[Tensor],
        lr: f64,
        names: &[&str],
    ) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first.len() {
            return dim_err(format!(
                "adam got {} params, {} grads, state for {}",
                params.len(),
                grads.len(),
                self.first.len()
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            p.check_same_shape(g)?;
            if p.len() != self.first[i].len() {
                return dim_err(format!("adam state for parameter {i} has the wrong size"));
            }
            if !g.is_finite() {
                let name = names.get(i).copied().unwrap_or("?");
                return Err(WdmError::Numeric(format!(
                    "non-finite gradient for parameter `{name}`"
                )));
            }
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grads_leave_params() {
        let mut params = vec![Tensor::from_vec(vec![1.0, -2.0]), Tensor::scalar(3.0)];
        let before = params.clone();
        let grads = vec![Tensor::zeros(&[2]), Tensor::scalar(0.0)];
        let mut st = AdamState::new(&params);
        st.step(&mut params, &grads, 0.1, &[]).unwrap();
        assert_eq!(params, before);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn hand_stepped_single_scalar() {
        // m = 0.1, v = 0.001, m̂ = 1, v̂ = 1, w' = 1 - 0.1 * 1 / (1 + 1e-8)
        let mut p = vec![Tensor::scalar(1.0)];
        let mut st = AdamState::new(&p);
        st.step(&mut p, &[Tensor::scalar(1.0)], 0.1, &["w"]).unwrap();
        let m = (1.0 - 0.9) * 1.0;
        let v = (1.0 - 0.999) * 1.0;
        let m_hat = m / (1.0 - 0.9);
        let v_hat: f64 = v / (1.0 - 0.999);
        let expected = 1.0 - 0.1 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((p[0].item() - expected).abs() < 1e-12);

        // second step with g = 1 again
        st.step(&mut p, &[Tensor::scalar(1.0)], 0.1, &["w"]).unwrap();
        let m2 = 0.9 * m + 0.1;
        let v2 = 0.999 * v + 0.001;
        let w2 = expected - 0.1 * (m2 / (1.0 - 0.81)) / ((v2 / (1.0 - 0.999f64.powi(2))).sqrt() + 1e-8);
        assert!((p[0].item() - w2).abs() < 1e-12);
    }

    #[test]
    fn identical_params_identical_updates() {
        let mut p = vec![Tensor::from_vec(vec![0.5, 0.5]), Tensor::from_vec(vec![0.5, 0.5])];
        let g = vec![Tensor::from_vec(vec![0.3, -0.2]), Tensor::from_vec(vec![0.3, -0.2])];
        let mut st = AdamState::new(&p);
        for _ in 0..3 {
            st.step(&mut p, &g, 0.01, &[]).unwrap();
        }
        assert_eq!(p[0], p[1]);
    }

    #[test]
    fn non_finite_grad_named() {
        let mut p = vec![Tensor::scalar(1.0)];
        let mut st = AdamState::new(&p);
        let err = st
            .step(&mut p, &[Tensor::scalar(f64::NAN)], 0.1, &["layer0.weight"])
            .unwrap_err();
        assert!(err.to_string().contains("layer0.weight"));
        assert_eq!(st.step_count(), 0);
    }
}
