//! Sampling checks of the data generator and the e/ẽ/ê oracle quantities.

use pi0kit_core::estimators::Method;
use pi0kit_core::simulation::{generate_dataset, run_study, SimulationConfig};
use pi0kit_core::testing::{test_matrix, TestFamily};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_config(m: usize, b: usize, r: usize) -> SimulationConfig {
    SimulationConfig {
        m,
        b,
        r,
        ..Default::default()
    }
}

#[test]
fn block_covariance_matches_ar1() {
    let config = small_config(3, 3, 1);
    let draws = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (data, truth) = generate_dataset(&config, draws, 0.5, 1.0, &mut rng).unwrap();
    let s2 = truth.covariance.sigma2[0];
    let n = draws as f64;
    for i in 0..3 {
        for j in i..3 {
            let target = truth.covariance.entry(i, j);
            assert_eq!(target, s2 * 0.5f64.powi((j - i) as i32));
            // rows have mean zero, so the raw cross moment is the covariance
            let cov = data.row(i).dot(&data.row(j)) / n;
            // Var(XY) = σᵢ²σⱼ² + σᵢⱼ² for a zero-mean Gaussian pair
            let se = ((s2 * s2 + target * target) / n).sqrt();
            assert!((cov - target).abs() <= 3.0 * se, "({i},{j}): {cov} vs {target} ± {se}");
        }
    }
}

#[test]
fn within_block_lag_one_correlation() {
    let config = small_config(1000, 100, 10);
    for (seed, rho) in [(22u64, 0.2), (23, 0.5)] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (data, truth) = generate_dataset(&config, 10_000, rho, 1.0, &mut rng).unwrap();
        // one pair (first two rows) per block and column keeps the pairs independent
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        let mut pairs = 0.0f64;
        for (k, &s2) in truth.covariance.sigma2.iter().enumerate() {
            let (x, y) = (data.row(k * 100), data.row(k * 100 + 1));
            let s = s2.sqrt();
            for (a, b) in x.iter().zip(y.iter()) {
                let (a, b) = (a / s, b / s);
                sxy += a * b;
                sxx += a * a;
                syy += b * b;
                pairs += 1.0;
            }
        }
        let r = sxy / (sxx * syy).sqrt();
        let se = (1.0 - rho * rho) / pairs.sqrt();
        assert!((r - rho).abs() <= 3.0 * se, "rho {rho}: {r} ± {se}");
        // rows in different blocks are independent
        let cross = data.row(99).dot(&data.row(100)) / 10_000.0;
        let sd = (truth.covariance.sigma2[0] * truth.covariance.sigma2[1] / 10_000.0).sqrt();
        assert!(cross.abs() <= 4.0 * sd);
    }
}

#[test]
fn pure_null_dataset_gives_uniform_p_values() {
    let config = SimulationConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let (data, truth) = generate_dataset(&config, 25, 0.0, 1.0, &mut rng).unwrap();
    assert!(truth.mu.iter().all(|&m| m == 0.0));
    let outcomes = test_matrix(data.view(), None, TestFamily::TOneSampleTwoSided, None).unwrap();
    let mut p: Vec<f64> = outcomes.iter().map(|o| o.p_value).collect();
    p.sort_by(f64::total_cmp);
    let m = p.len() as f64;
    let ks = p
        .iter()
        .enumerate()
        .map(|(i, &v)| (v - i as f64 / m).max((i + 1) as f64 / m - v))
        .fold(0.0, f64::max);
    assert!(ks < 1.949 / m.sqrt(), "KS statistic {ks}");
}

#[test]
fn plug_in_e_approaches_truth_with_n() {
    let mut config = SimulationConfig {
        pi0_grid: vec![0.5],
        rho_grid: vec![0.0],
        seed: 25,
        ..Default::default()
    };
    config.estimator.methods = vec![Method::E1];
    config.estimator.bootstrap_reps = 20;
    let summary = run_study(&config).unwrap();
    let gap = |n: usize| {
        let cell = config.cells().iter().position(|c| c.n == n).unwrap();
        let gaps: Vec<f64> = summary
            .replications
            .iter()
            .filter(|r| r.cell == cell)
            .map(|r| (r.e_tilde.unwrap() - r.e_true.unwrap()).abs())
            .collect();
        gaps.iter().sum::<f64>() / gaps.len() as f64
    };
    let (g25, g50) = (gap(25), gap(50));
    assert!(g50 < g25, "|ẽ − e|: n=25 {g25}, n=50 {g50}");
}

#[test]
fn working_e_never_exceeds_plug_in_e() {
    let mut config = SimulationConfig {
        pi0_grid: vec![0.3, 0.6, 0.9],
        n_grid: vec![25],
        rho_grid: vec![0.0],
        replications: 30,
        seed: 26,
        ..Default::default()
    };
    config.estimator.methods = vec![Method::E1];
    config.estimator.bootstrap_reps = 20;
    let summary = run_study(&config).unwrap();
    let mut checked = 0;
    for r in &summary.replications {
        let d = r.d.unwrap();
        if d >= 1 && d <= r.m1 {
            assert!(r.e_hat.unwrap() <= r.e_tilde.unwrap(), "{r:?}");
            checked += 1;
        }
    }
    assert!(checked >= 30, "only {checked} replications had d ≤ m₁");
}

#[test]
fn summary_moments_are_consistent() {
    let mut config = SimulationConfig {
        pi0_grid: vec![0.7],
        n_grid: vec![25],
        rho_grid: vec![0.5],
        replications: 10,
        seed: 27,
        ..Default::default()
    };
    config.estimator.bootstrap_reps = 20;
    let summary = run_study(&config).unwrap();
    assert_eq!(summary.cells.len(), Method::ALL.len());
    for c in &summary.cells {
        assert!(c.mse + 1e-12 >= c.bias * c.bias, "{c:?}");
        assert!((c.bias - (c.mean - 0.7)).abs() < 1e-12);
    }
}
