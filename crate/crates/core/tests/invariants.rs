//! Cross-module invariants checked on generated data.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use resdr::data::BasisConfig;
use resdr::dimsel::param_count;
use resdr::grassmann::{random_semi_orthogonal, riemann_distance, Subspace};
use resdr::linalg::Mat;
use resdr::matnorm::{build_row_covariance, CovStructure};
use resdr::rpfc::{fit_rpfc, McemConfig, SigmaModel};
use resdr::simbench::{generate_dataset, run_benchmark, BenchConfig, Method, SimDesign};

fn structure(kind: usize, a: f64, b: f64, p: usize) -> CovStructure {
    match kind {
        0 => CovStructure::Isotropic(a),
        1 => CovStructure::Diagonal((0..p).map(|k| a * (1.0 + k as f64 / p as f64)).collect()),
        2 => CovStructure::Ar1 { variance: a, rho: b },
        _ => CovStructure::Exchangeable { variance: a, cov: a * b.abs() * 0.9 },
    }
}

fn symmetric_eigenvalues(m: &Mat) -> Vec<f64> {
    m.clone().symmetric_eigen().eigenvalues.iter().cloned().collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn row_covariance_lives_on_the_tangent_space(
        seed in any::<u64>(), p in 3usize..9, d in 1usize..3, kind in 0usize..4, a in 0.05f64..1.0, b in -0.9f64..0.9,
    ) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let base = random_semi_orthogonal(p, d, &mut rng).unwrap();
        let sigma = build_row_covariance(&structure(kind, a, b, p), &base).unwrap();
        prop_assert!((&sigma * base.basis()).norm() < 1e-8);
        prop_assert!((&sigma - sigma.transpose()).amax() < 1e-10);
        let eig = symmetric_eigenvalues(&sigma);
        prop_assert!(eig.iter().all(|&l| l >= -1e-10));
        prop_assert!(eig.iter().filter(|&&l| l > 1e-10).count() <= p - d);
    }

    #[test]
    fn parameter_count_formula(p in 2usize..15, r in 1usize..8, w in 1usize..6) {
        prop_assume!(w < p);
        prop_assert_eq!(param_count(p, r, w), p * (p + 3) / 2 + r * w + w * (p - w));
    }

    #[test]
    fn generated_truth_is_consistent(seed in any::<u64>(), model in 0usize..2, n in 3usize..12) {
        let name = if model == 0 { "m1-ar1" } else { "m2-exchangeable" };
        let mut design: SimDesign = name.parse().unwrap();
        design.n = n;
        let (data, truth) = generate_dataset(&design, &mut ChaCha20Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(data.n(), n);
        prop_assert_eq!(truth.gamma0.d(), model + 1);
        prop_assert!(data.clusters.iter().all(|c| (10..=15).contains(&c.m())));
        prop_assert!((&truth.sigma * truth.gamma0.basis()).norm() < 1e-8);
        let dinv = truth.delta.clone().try_inverse().unwrap();
        for (g, t) in truth.gamma.iter().zip(&truth.theta) {
            let from_gamma = Subspace::from_span(&(&dinv * g.basis())).unwrap();
            let stored = Subspace::from_span(t).unwrap();
            prop_assert!(riemann_distance(&from_gamma, &stored).unwrap() < 1e-8);
        }
    }
}

#[test]
fn rpfc_fit_satisfies_its_invariants() {
    let mut design: SimDesign = "m1-isotropic-0.04".parse().unwrap();
    design.n = 40;
    let (data, _) = generate_dataset(&design, &mut ChaCha20Rng::seed_from_u64(8)).unwrap();
    let mcem = McemConfig { samples: 150, ..Default::default() };
    let fit = fit_rpfc(&data, 1, &BasisConfig::default(), &mcem, SigmaModel::Isotropic).unwrap();
    assert!((&fit.sigma * fit.gamma0.basis()).norm() < 1e-8);
    assert!(symmetric_eigenvalues(&fit.delta).iter().all(|&l| l > 0.0));
    let dinv = fit.delta.clone().try_inverse().unwrap();
    assert_eq!(fit.theta_hat.len(), fit.gamma_hat.len());
    for (g, t) in fit.gamma_hat.iter().zip(&fit.theta_hat) {
        let expected = Subspace::from_span(&(&dinv * g.basis())).unwrap();
        assert!(riemann_distance(&expected, t).unwrap() < 1e-8);
    }
    for v in &fit.vhat {
        assert!((fit.gamma0.basis().transpose() * v.mat()).amax() < 1e-10);
    }
}

#[test]
fn benchmark_report_shape() {
    let mut design: SimDesign = "m1-diagonal".parse().unwrap();
    design.n = 25;
    let cfg = BenchConfig {
        designs: vec![design],
        methods: vec![Method::Gpfc, Method::Spfc],
        reps: 3,
        seed: 2,
        mcem: McemConfig::default(),
    };
    let report = run_benchmark(&cfg).unwrap();
    assert!(report.failures.is_empty());
    assert!(report.rows.iter().all(|r| r.sd >= 0.0 && r.reps == 3));
    assert!(report.get("m1-diagonal-n25", "gpfc", "fixed_effect").is_some());
    // GPFC has no Σ estimate
    assert!(report.get("m1-diagonal-n25", "gpfc", "sigma").is_none());
    assert_eq!(report.to_csv(false), run_benchmark(&cfg).unwrap().to_csv(false));
}
