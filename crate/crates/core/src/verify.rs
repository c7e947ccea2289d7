//! Watermark similarity, the one-sided Welch test, and keyed triggers.

use hmac::{Hmac, Mac};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use crate::error::{dim_err, param_err, Result, WdmError};
use crate::tensor::Tensor;

/// The significance level used throughout: 1e-3.
pub const DEFAULT_ALPHA: f64 = 1e-3;

/// Ridge added to each covariance before taking matrix square roots.
pub const COVARIANCE_RIDGE: f64 = 1e-6;

/// Mean squared element difference; smaller means more similar.
pub fn mse_similarity(a: &Tensor, a_hat: &Tensor) -> Result<f64> {
    if a.len() != a_hat.len() {
        return dim_err(format!(
            "cannot compare shapes {:?} and {:?}",
            a.shape(),
            a_hat.shape()
        ));
    }
    Ok(a.data()
        .iter()
        .zip(a_hat.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64)
}

/// MSE of each row of `samples` (`[n, d]`) against the watermark `a`.
pub fn mse_per_sample(a: &Tensor, samples: &Tensor) -> Result<Vec<f64>> {
    let (n, d) = samples.dims2()?;
    if a.len() != d {
        return dim_err(format!("watermark has {} values, samples have {d}", a.len()));
    }
    (0..n)
        .map(|i| mse_similarity(a, &Tensor::from_vec(samples.row(i).to_vec())))
        .collect()
}

fn moments(batch: &Tensor) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (n, d) = batch.dims2()?;
    if n < 2 {
        return dim_err("a covariance needs at least two samples");
    }
    let x = DMatrix::from_row_slice(n, d, batch.data());
    let mean = DVector::from_iterator(d, x.column_iter().map(|c| c.mean()));
    let mut centered = x;
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let mut cov = centered.transpose() * &centered / (n - 1) as f64;
    for i in 0..d {
        cov[(i, i)] += COVARIANCE_RIDGE;
    }
    Ok((mean, cov))
}

fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let scale = sym.diagonal().iter().map(|v| v.abs()).fold(1.0, f64::max);
    let eig = SymmetricEigen::new(sym);
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        if *v < -1e-9 * scale {
            return Err(WdmError::Numeric(format!(
                "covariance product is not positive semidefinite (eigenvalue {v})"
            )));
        }
        *v = v.max(0.0).sqrt();
    }
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose())
}

fn sqrt_trace(c1: &DMatrix<f64>, c2: &DMatrix<f64>) -> Result<f64> {
    let r1 = psd_sqrt(c1)?;
    let sandwich = &r1 * c2 * &r1;
    Ok(psd_sqrt(&sandwich)?.trace())
}

/// Fréchet distance between Gaussian fits of two `[n, d]` sample batches:
/// `‖μ₁−μ₂‖² + Tr(C₁ + C₂ − 2(C₁^{1/2} C₂ C₁^{1/2})^{1/2})`.
///
/// The cross term is evaluated in both orders and averaged, so the result is
/// exactly symmetric in its arguments.
pub fn frechet_similarity(batch_a: &Tensor, batch_b: &Tensor) -> Result<f64> {
    let (_, da) = batch_a.dims2()?;
    let (_, db) = batch_b.dims2()?;
    if da != db {
        return dim_err(format!("sample widths differ: {da} vs {db}"));
    }
    let (m1, c1) = moments(batch_a)?;
    let (m2, c2) = moments(batch_b)?;
    let cross = 0.5 * (sqrt_trace(&c1, &c2)? + sqrt_trace(&c2, &c1)?);
    let fd = (&m1 - &m2).norm_squared() + (c1.trace() + c2.trace()) - 2.0 * cross;
    Ok(fd.max(0.0))
}

/// Regularized incomplete beta `I_x(a, b)`.
fn beta_reg(a: f64, b: f64, x: f64) -> f64 {
    statrs::function::beta::beta_reg(a, b, x.clamp(0.0, 1.0))
}

/// Upper tail `P(T > x)` of Student's t with `dof` degrees of freedom.
pub fn student_t_sf(x: f64, dof: f64) -> f64 {
    let tail = 0.5 * beta_reg(dof / 2.0, 0.5, dof / (dof + x * x));
    if x >= 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

/// Student's t CDF via the regularized incomplete beta function.
pub fn student_t_cdf(x: f64, dof: f64) -> f64 {
    assert!(dof > 0.0, "degrees of freedom must be positive");
    let tail = 0.5 * beta_reg(dof / 2.0, 0.5, dof / (dof + x * x));
    if x >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WelchResult {
    pub t_stat: f64,
    pub dof: f64,
    pub p_value: f64,
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// One-sided Welch test of `H₀: μ_c ≤ μ_s` against `H₁: μ_c > μ_s`.
pub fn welch_test(d_s: &[f64], d_c: &[f64]) -> Result<WelchResult> {
    if d_s.len() < 2 || d_c.len() < 2 {
        return Err(WdmError::Statistical(
            "each sample needs at least two scores".into(),
        ));
    }
    if d_s.iter().chain(d_c).any(|v| !v.is_finite()) {
        return Err(WdmError::Statistical("non-finite similarity score".into()));
    }
    let (ms, vs) = mean_var(d_s);
    let (mc, vc) = mean_var(d_c);
    let a = vc / d_c.len() as f64;
    let b = vs / d_s.len() as f64;
    let se2 = a + b;
    if se2 <= 0.0 {
        return Err(WdmError::Statistical(
            "both samples have zero variance".into(),
        ));
    }
    let t = (mc - ms) / se2.sqrt();
    let dof = se2 * se2 / (a * a / (d_c.len() - 1) as f64 + b * b / (d_s.len() - 1) as f64);
    Ok(WelchResult {
        t_stat: t,
        dof,
        p_value: student_t_sf(t, dof).clamp(0.0, 1.0),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub d_s: Vec<f64>,
    pub d_c: Vec<f64>,
    pub mu_s: f64,
    pub mu_c: f64,
    pub t_stat: f64,
    pub dof: f64,
    pub p_value: f64,
    pub alpha: f64,
    /// True when the suspect model is judged to carry the watermark.
    pub verdict: bool,
}

/// Similarity comparison followed by the one-sided Welch test.
pub fn verify(d_s: &[f64], d_c: &[f64], alpha: f64) -> Result<VerificationReport> {
    if !(0.0..=1.0).contains(&alpha) {
        return param_err(format!("significance level {alpha} outside [0, 1]"));
    }
    let w = welch_test(d_s, d_c)?;
    Ok(VerificationReport {
        d_s: d_s.to_vec(),
        d_c: d_c.to_vec(),
        mu_s: mean_var(d_s).0,
        mu_c: mean_var(d_c).0,
        t_stat: w.t_stat,
        dof: w.dof,
        p_value: w.p_value,
        alpha,
        verdict: w.p_value < alpha,
    })
}

/// Deterministic trigger from a secret key: HMAC-SHA256 over a big-endian
/// block counter yields a byte stream whose 8-byte words map to `[low, high)`.
pub fn prf_trigger(key: &[u8], shape: &[usize], low: f64, high: f64) -> Result<Tensor> {
    if key.is_empty() {
        return param_err("trigger key must not be empty");
    }
    if !low.is_finite() || !high.is_finite() || high <= low {
        return param_err(format!("trigger range [{low}, {high}) is empty"));
    }
    let n: usize = shape.iter().product();
    let mut values = Vec::with_capacity(n);
    let mut counter: u64 = 0;
    while values.len() < n {
        let mut mac = Hmac::<Sha256>::new_from_slice(key).expect("hmac accepts any key length");
        mac.update(&counter.to_be_bytes());
        let block = mac.finalize().into_bytes();
        for word in block.chunks_exact(8) {
            if values.len() == n {
                break;
            }
            let w = u64::from_be_bytes(word.try_into().expect("8-byte chunk"));
            let u = (w >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
            let mut v = low + (high - low) * u;
            if v >= high {
                v = low.max(high - (high - low) * f64::EPSILON);
            }
            values.push(v);
        }
        counter += 1;
    }
    Tensor::new(shape.to_vec(), values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn mse_cases() {
        let a = Tensor::from_vec(vec![1.0, 1.0]);
        assert_eq!(mse_similarity(&a, &a).unwrap(), 0.0);
        assert_eq!(mse_similarity(&a, &Tensor::zeros(&[2])).unwrap(), 1.0);
        assert!(mse_similarity(&a, &Tensor::zeros(&[3])).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = Normal::new(0.0, 1.0).unwrap();
        let x: Vec<f64> = (0..64).map(|_| n.sample(&mut rng)).collect();
        let y: Vec<f64> = (0..64).map(|_| n.sample(&mut rng)).collect();
        let mut oracle = 0.0;
        for i in 0..64 {
            oracle += (x[i] - y[i]).powi(2);
        }
        oracle /= 64.0;
        let a = Tensor::new(vec![8, 8], x).unwrap();
        let b = Tensor::new(vec![8, 8], y).unwrap();
        assert!((mse_similarity(&a, &b).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn frechet_identity_and_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = Normal::new(0.0, 1.0).unwrap();
        let a = Tensor::matrix(50, 3, (0..150).map(|_| n.sample(&mut rng)).collect()).unwrap();
        let b = Tensor::matrix(40, 3, (0..120).map(|_| 0.5 * n.sample(&mut rng) + 0.2).collect()).unwrap();
        assert!(frechet_similarity(&a, &a).unwrap() < 1e-8);
        assert_eq!(frechet_similarity(&a, &b).unwrap(), frechet_similarity(&b, &a).unwrap());
        assert!(frechet_similarity(&a, &b).unwrap() > 0.0);
        // fewer samples than dimensions still works thanks to the ridge
        let small = Tensor::matrix(2, 3, vec![0.0, 1.0, 2.0, 1.0, 0.0, -1.0]).unwrap();
        assert!(frechet_similarity(&small, &a).unwrap().is_finite());
        assert!(frechet_similarity(&Tensor::zeros(&[1, 3]), &a).is_err());
    }

    #[test]
    fn frechet_one_dimensional_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = Normal::new(0.0, 1.0).unwrap();
        let a = Tensor::matrix(10_000, 1, (0..10_000).map(|_| n.sample(&mut rng)).collect()).unwrap();
        let b = Tensor::matrix(10_000, 1, (0..10_000).map(|_| 1.0 + n.sample(&mut rng)).collect()).unwrap();
        let fd = frechet_similarity(&a, &b).unwrap();
        assert!((fd - 1.0).abs() < 0.1, "fd {fd}");
        // sample-level closed form (m1-m2)^2 + (s1-s2)^2
        let (m1, v1) = mean_var(a.data());
        let (m2, v2) = mean_var(b.data());
        let closed = (m1 - m2).powi(2) + (v1.sqrt() - v2.sqrt()).powi(2);
        assert!((fd - closed).abs() < 1e-5);
    }

    #[test]
    fn t_cdf_fixed_points() {
        assert!((student_t_cdf(1.0, 1.0) - 0.75).abs() < 1e-12);
        for dof in [0.5, 1.0, 3.0, 30.0] {
            assert!((student_t_cdf(0.0, dof) - 0.5).abs() < 1e-15);
        }
        assert!((student_t_cdf(2.228, 10.0) - 0.975).abs() < 1e-4);
    }

    #[test]
    fn welch_null_case() {
        let d = [0.3, 0.5, 0.4, 0.6];
        let w = welch_test(&d, &d).unwrap();
        assert_eq!(w.t_stat, 0.0);
        assert!((w.p_value - 0.5).abs() < 1e-15);
        assert!(welch_test(&[1.0, 1.0], &[2.0, 2.0]).is_err());
        assert!(welch_test(&[1.0], &[2.0, 3.0]).is_err());
    }

    #[test]
    fn verdicts() {
        let d_s = [0.1, 0.0, 0.1, 0.2];
        let d_c = [2.1, 2.0, 1.9, 2.0];
        let r = verify(&d_s, &d_c, DEFAULT_ALPHA).unwrap();
        assert!(r.verdict);
        assert_eq!(r.verdict, r.p_value < r.alpha);
        assert!((r.mu_s - 0.1).abs() < 1e-15 && (r.mu_c - 2.0).abs() < 1e-15);
        assert!(!verify(&d_s, &d_c, 0.0).unwrap().verdict);
        let replicate = [0.11, 0.01, 0.09, 0.21];
        assert!(!verify(&d_s, &replicate, DEFAULT_ALPHA).unwrap().verdict);
    }

    #[test]
    fn prf_trigger_properties() {
        let a = prf_trigger(b"owner-key", &[4, 4], -1.0, 1.0).unwrap();
        assert_eq!(a, prf_trigger(b"owner-key", &[4, 4], -1.0, 1.0).unwrap());
        assert!(a.data().iter().all(|v| (-1.0..1.0).contains(v)));
        assert!(prf_trigger(b"", &[2], -1.0, 1.0).is_err());
        assert!(prf_trigger(b"k", &[2], 1.0, 1.0).is_err());

        let big_a = prf_trigger(b"key-one", &[64, 64], -1.0, 1.0).unwrap();
        let big_b = prf_trigger(b"key-two", &[64, 64], -1.0, 1.0).unwrap();
        let differ = big_a.data().iter().zip(big_b.data()).filter(|(x, y)| x != y).count();
        assert!(differ as f64 >= 0.99 * 4096.0);
        // uniform on [-1, 1): mean 0, sd 1/sqrt(3)
        let se = (1.0 / 3.0f64).sqrt() / 64.0;
        assert!(big_a.mean().abs() < 3.0 * se);
    }
}
