//! Frozen reference values for the statistics layer, plus property checks.

use proptest::prelude::*;
use wdm::tensor::Tensor;
use wdm::verify::{frechet_similarity, student_t_cdf, verify, welch_test};

mod common {
    pub mod stats_cases;
}
use common::stats_cases::{T_CDF, WELCH};

// Reference CDF values computed with an independent statistics library.
const T_CDF_REFERENCE: &[(f64, f64, f64)] = &[
    (1.0, 1.0, 0.7500000000000002),
    (2.0, 3.0, 0.9303370157205785),
    (-1.5, 4.5, 0.10010954282807658),
    (0.3, 30.0, 0.6168769473578236),
    (5.0, 2.0, 0.9811252243246881),
    (10.0, 100.0, 0.9999999999999999),
    (-3.0, 7.3, 0.009490275511566747),
    (2.5, 0.7, 0.8401478186593632),
];

#[test]
fn student_t_cdf_matches_reference() {
    for &(x, dof, want) in T_CDF_REFERENCE {
        let got = student_t_cdf(x, dof);
        assert!((got - want).abs() < 1e-10, "x={x} dof={dof}: {got} vs {want}");
    }
}

#[test]
fn welch_matches_reference() {
    let cases: &[(&[f64], &[f64], f64, f64, f64)] = &[
        (
            &[0.12, 0.08, 0.15, 0.11, 0.09, 0.13],
            &[0.35, 0.41, 0.29, 0.38, 0.44],
            9.350696025254255,
            5.327378354780527,
            8.34462914154727e-05,
        ),
        (
            &[1.0, 2.0, 3.0, 4.0],
            &[2.0, 2.5, 3.5, 4.0, 5.0, 6.5],
            1.5156837721956704,
            7.660305683450732,
            0.0848606534598117,
        ),
    ];
    for &(d_s, d_c, t, dof, p) in cases {
        let w = welch_test(d_s, d_c).unwrap();
        assert!((w.t_stat - t).abs() < 1e-10, "t {}", w.t_stat);
        assert!((w.dof - dof).abs() < 1e-9, "dof {}", w.dof);
        assert!((w.p_value - p).abs() < 1e-10 * p.max(1e-3), "p {}", w.p_value);
    }
}

#[test]
fn frechet_matches_reference() {
    let a = Tensor::matrix(
        5,
        3,
        vec![
            0.1, 0.2, -0.3, 0.5, -0.1, 0.0, -0.4, 0.3, 0.2, 0.0, 0.0, 1.0, 0.7, -0.6, 0.1,
        ],
    )
    .unwrap();
    let b = Tensor::matrix(
        4,
        3,
        vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.5, 0.5, 0.5],
    )
    .unwrap();
    let fd = frechet_similarity(&a, &b).unwrap();
    assert!((fd - 0.3006562903878085).abs() < 1e-9, "fd {fd}");
}

#[test]
fn shared_oracle_cases() {
    for &(x, dof, want) in T_CDF {
        let got = student_t_cdf(x, dof);
        assert!((got - want).abs() <= 1e-10 * want.abs().max(1e-6), "x={x} dof={dof}: {got} vs {want}");
    }
    for c in WELCH {
        let w = welch_test(c.d_s, c.d_c).unwrap();
        assert!((w.t_stat - c.t).abs() < 1e-10 * c.t.abs(), "t {} vs {}", w.t_stat, c.t);
        assert!((w.dof - c.dof).abs() < 1e-9 * c.dof, "dof {} vs {}", w.dof, c.dof);
        assert!((w.p_value - c.p).abs() < 1e-8 * c.p, "p {} vs {}", w.p_value, c.p);
    }
}

#[test]
fn identical_samples_give_half() {
    let d = [0.3, 0.1, 0.4, 0.1, 0.5];
    let w = welch_test(&d, &d).unwrap();
    assert_eq!(w.t_stat, 0.0);
    assert!((w.p_value - 0.5).abs() < 1e-15);
}

fn scores() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, 3..20)
}

proptest! {
    #[test]
    fn t_cdf_is_antisymmetric(x in -50.0f64..50.0, dof in 0.2f64..200.0) {
        let s = student_t_cdf(x, dof) + student_t_cdf(-x, dof);
        prop_assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn t_cdf_is_monotone(x in -20.0f64..20.0, dx in 0.0f64..5.0, dof in 0.2f64..200.0) {
        prop_assert!(student_t_cdf(x + dx, dof) >= student_t_cdf(x, dof) - 1e-15);
    }

    #[test]
    fn welch_gap_never_raises_p(d_s in scores(), d_c in scores(), shift in 0.0f64..3.0) {
        prop_assume!(welch_test(&d_s, &d_c).is_ok());
        let shifted: Vec<f64> = d_c.iter().map(|v| v + shift).collect();
        let p0 = welch_test(&d_s, &d_c).unwrap().p_value;
        let p1 = welch_test(&d_s, &shifted).unwrap().p_value;
        prop_assert!(p1 <= p0 + 1e-15);
    }

    #[test]
    fn welch_swap_is_antisymmetric(d_s in scores(), d_c in scores()) {
        prop_assume!(welch_test(&d_s, &d_c).is_ok());
        let a = welch_test(&d_s, &d_c).unwrap();
        let b = welch_test(&d_c, &d_s).unwrap();
        prop_assert!((a.t_stat + b.t_stat).abs() <= 1e-12 * a.t_stat.abs().max(1.0));
        prop_assert!((a.dof - b.dof).abs() <= 1e-9 * a.dof);
        prop_assert!((a.p_value + b.p_value - 1.0).abs() < 1e-10);
    }

    #[test]
    fn verdict_matches_threshold(d_s in scores(), d_c in scores(), alpha in 0.0f64..1.0) {
        if let Ok(r) = verify(&d_s, &d_c, alpha) {
            prop_assert!((0.0..=1.0).contains(&r.p_value));
            prop_assert_eq!(r.verdict, r.p_value < alpha);
        }
    }

    #[test]
    fn frechet_symmetric(seed in 0u64..1000) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a = Tensor::matrix(6, 2, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let b = Tensor::matrix(9, 2, (0..18).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        prop_assert_eq!(frechet_similarity(&a, &b).unwrap(), frechet_similarity(&b, &a).unwrap());
        prop_assert!(frechet_similarity(&a, &a).unwrap() < 1e-8);
    }
}
