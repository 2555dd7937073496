//! Simulation study: block-correlated Gaussian data, replicated estimation
//! and bias / MSE / kurtosis summaries per (π₀, n, ρ) cell.

use std::collections::BTreeMap;
use std::io::Write;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, Open01, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::epv::{epv_with_model, EpvRecord, SignalModel};
use crate::error::{Error, Result};
use crate::estimators::{estimate_all, EstimatorConfig, Method};
use crate::testing::{test_matrix, TestFamily, TestOutcome};

/// How "exponential(10)" is parameterized when drawing block variances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceReading {
    /// Exponential with rate 10 (mean 0.1), divided by 3.
    Rate,
    /// Exponential with mean 10, divided by 3.
    Mean,
}

impl std::str::FromStr for VarianceReading {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rate" => Ok(VarianceReading::Rate),
            "mean" => Ok(VarianceReading::Mean),
            _ => Err(Error::InvalidParameter(format!(
                "variance reading must be 'rate' or 'mean', got '{s}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub m: usize,
    pub n_grid: Vec<usize>,
    pub pi0_grid: Vec<f64>,
    /// Block size.
    pub b: usize,
    /// Block count.
    pub r: usize,
    pub rho_grid: Vec<f64>,
    pub replications: usize,
    pub seed: u64,
    pub mu0: f64,
    pub effect_range: f64,
    pub variance_reading: VarianceReading,
    pub estimator: EstimatorConfig,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            m: 1000,
            n_grid: vec![25, 50],
            pi0_grid: (1..=9).map(|k| k as f64 / 10.0).collect(),
            b: 100,
            r: 10,
            rho_grid: vec![0.0, 0.2, 0.5],
            replications: 100,
            seed: 0,
            mu0: 0.0,
            effect_range: 0.5,
            variance_reading: VarianceReading::Rate,
            estimator: EstimatorConfig::default(),
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.m != self.b * self.r {
            return Err(Error::InvalidParameter(format!(
                "m = {} must equal b × r = {} × {}",
                self.m, self.b, self.r
            )));
        }
        if self.n_grid.is_empty() || self.n_grid.iter().any(|&n| n < 2) {
            return Err(Error::InvalidParameter("every n must be >= 2".into()));
        }
        if self.pi0_grid.is_empty() || self.pi0_grid.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidParameter("every pi0 must be in [0, 1]".into()));
        }
        if self.rho_grid.is_empty() || self.rho_grid.iter().any(|r| !(0.0..1.0).contains(r)) {
            return Err(Error::InvalidParameter("every rho must be in [0, 1)".into()));
        }
        if self.replications == 0 {
            return Err(Error::InvalidParameter("replications must be >= 1".into()));
        }
        if !(self.effect_range > 0.0) || !self.mu0.is_finite() {
            return Err(Error::InvalidParameter("effect_range must be positive, mu0 finite".into()));
        }
        self.estimator.validate()
    }

    /// Cells in output order: π₀ outermost, then n, then ρ.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &pi0 in &self.pi0_grid {
            for &n in &self.n_grid {
                for &rho in &self.rho_grid {
                    out.push(Cell { pi0, n, rho });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub pi0: f64,
    pub n: usize,
    pub rho: f64,
}

impl std::fmt::Display for Cell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "(pi0={}, n={}, rho={})", self.pi0, self.n, self.rho)
    }
}

/// Block-diagonal covariance: block k is σ_k²·(ρ^|i−j|) of size b × b.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockCovariance {
    pub block_size: usize,
    pub rho: f64,
    pub sigma2: Vec<f64>,
}

impl BlockCovariance {
    pub fn dim(&self) -> usize {
        self.block_size * self.sigma2.len()
    }

    pub fn block_of(&self, row: usize) -> usize {
        row / self.block_size
    }

    /// Σ_{ij}, for checking only; never materialized as a matrix.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let (bi, bj) = (self.block_of(i), self.block_of(j));
        if bi != bj {
            return 0.0;
        }
        self.sigma2[bi] * self.rho.powi(i.abs_diff(j) as i32)
    }
}

/// Draws the r block variances for one dataset.
pub fn build_covariance<R: Rng + ?Sized>(
    config: &SimulationConfig,
    rho: f64,
    rng: &mut R,
) -> Result<BlockCovariance> {
    if config.m != config.b * config.r {
        return Err(Error::InvalidParameter(format!(
            "m = {} must equal b × r = {} × {}",
            config.m, config.b, config.r
        )));
    }
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::InvalidParameter(format!("rho must be in [0, 1), got {rho}")));
    }
    let rate = match config.variance_reading {
        VarianceReading::Rate => 10.0,
        VarianceReading::Mean => 0.1,
    };
    let exp = Exp::new(rate).expect("positive rate");
    let sigma2 = (0..config.r).map(|_| rng.sample(exp) / 3.0).collect();
    Ok(BlockCovariance {
        block_size: config.b,
        rho,
        sigma2,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthAssignment {
    pub is_null: Vec<bool>,
    pub mu: Vec<f64>,
    pub covariance: BlockCovariance,
}

impl TruthAssignment {
    pub fn m1(&self) -> usize {
        self.is_null.iter().filter(|&&n| !n).count()
    }

    /// True standardized effect μ_i/σ_i.
    pub fn delta(&self, i: usize) -> f64 {
        let s2 = self.covariance.sigma2[self.covariance.block_of(i)];
        self.mu[i] / s2.sqrt()
    }
}

/// One m × n dataset: rows are hypotheses, columns i.i.d. N(μ, Σ) draws.
pub fn generate_dataset<R: Rng + ?Sized>(
    config: &SimulationConfig,
    n: usize,
    rho: f64,
    pi0: f64,
    rng: &mut R,
) -> Result<(Array2<f64>, TruthAssignment)> {
    if !(0.0..=1.0).contains(&pi0) {
        return Err(Error::InvalidParameter(format!("pi0 must be in [0, 1], got {pi0}")));
    }
    let m = config.m;
    let cov = build_covariance(config, rho, rng)?;

    // the nudge keeps e.g. 1000 × 0.57 from flooring to 569
    let m0 = ((m as f64 * pi0 + 1e-9).floor() as usize).min(m);
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(rng);
    let mut is_null = vec![false; m];
    for &i in &order[..m0] {
        is_null[i] = true;
    }
    let mut mu = vec![config.mu0; m];
    let alternatives = &order[m0..];
    let positives = alternatives.len().div_ceil(2);
    for (k, &i) in alternatives.iter().enumerate() {
        let u: f64 = rng.sample(Open01);
        let magnitude = config.effect_range * u;
        mu[i] = if k < positives { magnitude } else { -magnitude };
    }

    let innovation = (1.0 - rho * rho).sqrt();
    let mut data = Array2::<f64>::zeros((m, n));
    for j in 0..n {
        for (k, &s2) in cov.sigma2.iter().enumerate() {
            let sigma = s2.sqrt();
            let mut x = 0.0;
            for t in 0..cov.block_size {
                let z: f64 = rng.sample(StandardNormal);
                x = if t == 0 { z } else { rho * x + innovation * z };
                let i = k * cov.block_size + t;
                data[[i, j]] = mu[i] + sigma * x;
            }
        }
    }
    Ok((
        data,
        TruthAssignment {
            is_null,
            mu,
            covariance: cov,
        },
    ))
}

/// e (true δ) and ẽ (estimated δ̂) averaged over the true alternatives.
/// Both are `None` when there are no alternatives.
pub fn oracle_e_quantities(
    truth: &TruthAssignment,
    outcomes: &[TestOutcome],
    records: &[EpvRecord],
) -> Result<Option<(f64, f64)>> {
    let model = SignalModel::from_outcomes(outcomes)?;
    let alt: Vec<usize> = (0..truth.is_null.len()).filter(|&i| !truth.is_null[i]).collect();
    if alt.is_empty() {
        return Ok(None);
    }
    let m1 = alt.len() as f64;
    let mut e_true = 0.0;
    for &i in &alt {
        e_true += model.expected_p_cached(truth.delta(i))?;
    }
    // ascending order, matching how ê is summed
    let mut tilde: Vec<f64> = alt.iter().map(|&i| records[i].e_hat).collect();
    tilde.sort_by(f64::total_cmp);
    let e_tilde = tilde.iter().sum::<f64>() / m1;
    Ok(Some((e_true / m1, e_tilde)))
}

/// Per-replication results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replication {
    pub cell: usize,
    pub replication: usize,
    pub estimates: BTreeMap<Method, f64>,
    pub m1: usize,
    /// d used by E1.
    pub d: Option<usize>,
    pub e_hat: Option<f64>,
    pub e_true: Option<f64>,
    pub e_tilde: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub pi0: f64,
    pub n: usize,
    pub rho: f64,
    pub method: Method,
    pub replications: usize,
    pub mean: f64,
    pub bias: f64,
    pub mse: f64,
    /// m₄/m₂² of the estimates (not excess, no bias correction).
    pub kurtosis: f64,
    pub e_true_mean: f64,
    pub e_tilde_mean: f64,
    pub e_hat_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub config: SimulationConfig,
    pub cells: Vec<CellSummary>,
    pub replications: Vec<Replication>,
}

/// Plain moment-ratio kurtosis m₄/m₂²; NaN when the variance is zero.
pub fn kurtosis(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let (mut m2, mut m4) = (0.0, 0.0);
    for &x in xs {
        let d2 = (x - mean) * (x - mean);
        m2 += d2;
        m4 += d2 * d2;
    }
    m2 /= n;
    m4 /= n;
    if m2 == 0.0 {
        f64::NAN
    } else {
        m4 / (m2 * m2)
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn unit_stream(cell: usize, replication: usize) -> u64 {
    ((cell as u64) << 32) | replication as u64
}

/// Runs one replication of one cell.
pub fn run_replication(
    config: &SimulationConfig,
    cells: &[Cell],
    cell: usize,
    replication: usize,
) -> Result<Replication> {
    let c = cells[cell];
    let stream = unit_stream(cell, replication);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(stream);
    let (data, truth) = generate_dataset(config, c.n, c.rho, c.pi0, &mut rng)?;
    let outcomes = test_matrix(data.view(), None, TestFamily::TOneSampleTwoSided, None)?;
    let p: Vec<f64> = outcomes.iter().map(|o| o.p_value).collect();

    let mut est_config = config.estimator.clone();
    est_config.seed = splitmix64(config.seed ^ splitmix64(stream));
    let results = estimate_all(&p, &outcomes, &est_config)?;

    let mut estimates = BTreeMap::new();
    let (mut d, mut e_hat) = (None, None);
    for (method, r) in results {
        let est = r?;
        if method == Method::E1 {
            d = est.intermediates.get("d").map(|&v| v as usize);
            e_hat = est.intermediates.get("e_hat").copied();
        }
        estimates.insert(method, est.value);
    }

    let model = SignalModel::from_outcomes(&outcomes)?;
    let records = epv_with_model(&model, &outcomes)?;
    let oracle = oracle_e_quantities(&truth, &outcomes, &records)?;
    Ok(Replication {
        cell,
        replication,
        estimates,
        m1: truth.m1(),
        d,
        e_hat,
        e_true: oracle.map(|o| o.0),
        e_tilde: oracle.map(|o| o.1),
    })
}

/// Runs the full study. `progress` is called with the number of finished
/// replications out of the total.
pub fn run_study_with_progress(
    config: &SimulationConfig,
    progress: &(dyn Fn(usize, usize) + Sync),
) -> Result<SimSummary> {
    config.validate()?;
    let cells = config.cells();
    let units: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..config.replications).map(move |r| (c, r)))
        .collect();
    let total = units.len();
    let done = std::sync::atomic::AtomicUsize::new(0);
    let results: Vec<Result<Replication>> = units
        .par_iter()
        .map(|&(c, r)| {
            let out = run_replication(config, &cells, c, r).map_err(|e| Error::Simulation {
                cell: cells[c].to_string(),
                replication: r,
                source: Box::new(e),
            });
            let k = done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1;
            progress(k, total);
            out
        })
        .collect();
    let replications = results.into_iter().collect::<Result<Vec<_>>>()?;
    let summaries = summarize(config, &cells, &replications);
    Ok(SimSummary {
        config: config.clone(),
        cells: summaries,
        replications,
    })
}

pub fn run_study(config: &SimulationConfig) -> Result<SimSummary> {
    run_study_with_progress(config, &|_, _| {})
}

fn mean_of(xs: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut k) = (0.0, 0usize);
    for x in xs {
        s += x;
        k += 1;
    }
    if k == 0 {
        f64::NAN
    } else {
        s / k as f64
    }
}

fn summarize(config: &SimulationConfig, cells: &[Cell], reps: &[Replication]) -> Vec<CellSummary> {
    let mut out = Vec::new();
    for (ci, cell) in cells.iter().enumerate() {
        let rows: Vec<&Replication> = reps.iter().filter(|r| r.cell == ci).collect();
        let e_true_mean = mean_of(rows.iter().filter_map(|r| r.e_true));
        let e_tilde_mean = mean_of(rows.iter().filter_map(|r| r.e_tilde));
        let e_hat_mean = mean_of(rows.iter().filter_map(|r| r.e_hat));
        for &method in &Method::ALL {
            if !config.estimator.methods.contains(&method) {
                continue;
            }
            let values: Vec<f64> = rows.iter().filter_map(|r| r.estimates.get(&method).copied()).collect();
            let nrep = values.len() as f64;
            let mean = values.iter().sum::<f64>() / nrep;
            let bias = values.iter().map(|v| v - cell.pi0).sum::<f64>() / nrep;
            let mse = values.iter().map(|v| (v - cell.pi0).powi(2)).sum::<f64>() / nrep;
            out.push(CellSummary {
                pi0: cell.pi0,
                n: cell.n,
                rho: cell.rho,
                method,
                replications: values.len(),
                mean,
                bias,
                mse,
                kurtosis: kurtosis(&values),
                e_true_mean,
                e_tilde_mean,
                e_hat_mean,
            });
        }
    }
    out
}

/// One row per cell × method. `config_line` is written first as a `#`
/// comment so the file carries its own provenance. The e / ẽ / ê columns
/// are included when `oracle` is set.
pub fn write_summary_csv<W: Write>(
    summary: &SimSummary,
    config_line: Option<&str>,
    oracle: bool,
    mut out: W,
) -> Result<()> {
    if let Some(line) = config_line {
        writeln!(out, "# {line}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![
        "pi0",
        "n",
        "rho",
        "method",
        "replications",
        "mean",
        "bias",
        "mse",
        "kurtosis_m4_over_m2sq",
    ];
    if oracle {
        header.extend(["e_true_mean", "e_tilde_mean", "e_hat_mean"]);
    }
    header.push("seed");
    w.write_record(&header)?;
    let seed = summary.config.seed.to_string();
    for c in &summary.cells {
        let mut row = vec![
            c.pi0.to_string(),
            c.n.to_string(),
            c.rho.to_string(),
            c.method.to_string(),
            c.replications.to_string(),
            c.mean.to_string(),
            c.bias.to_string(),
            c.mse.to_string(),
            c.kurtosis.to_string(),
        ];
        if oracle {
            row.extend([
                c.e_true_mean.to_string(),
                c.e_tilde_mean.to_string(),
                c.e_hat_mean.to_string(),
            ]);
        }
        row.push(seed.clone());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// One row per replication × method, for density plots.
pub fn write_replications_csv<W: Write>(summary: &SimSummary, out: W) -> Result<()> {
    let cells = summary.config.cells();
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "pi0", "n", "rho", "replication", "method", "estimate", "m1", "d", "e_hat", "e_true", "e_tilde",
    ])?;
    for r in &summary.replications {
        let c = cells[r.cell];
        for (method, value) in &r.estimates {
            w.write_record([
                c.pi0.to_string(),
                c.n.to_string(),
                c.rho.to_string(),
                r.replication.to_string(),
                method.to_string(),
                value.to_string(),
                r.m1.to_string(),
                r.d.map(|d| d.to_string()).unwrap_or_default(),
                opt(r.e_hat),
                opt(r.e_true),
                opt(r.e_tilde),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
