//! π₀ estimators: Storey's λ-estimator with bootstrap λ selection, Cheng's
//! bias-corrected π̂₀^U, and the expected-p-value estimator π̂₀^E with its
//! one-step iterate.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::epv::{epv_with_model, EpvRecord, SignalModel};
use crate::error::{Error, Result};
use crate::testing::TestOutcome;

/// Below this gap, 0.5 − ê (or (1 − λ) − Q̂) is treated as zero.
pub const DENOMINATOR_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "storey_bootstrap")]
    StoreyBootstrap,
    E1,
    E3,
    U,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::StoreyBootstrap, Method::E1, Method::E3, Method::U];

    pub fn name(&self) -> &'static str {
        match self {
            Method::StoreyBootstrap => "storey_bootstrap",
            Method::E1 => "E1",
            Method::E3 => "E3",
            Method::U => "U",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "storey_bootstrap" | "storey" | "b" => Ok(Method::StoreyBootstrap),
            "e1" | "e" => Ok(Method::E1),
            "e3" => Ok(Method::E3),
            "u" | "cheng" => Ok(Method::U),
            _ => Err(Error::InvalidParameter(format!("unknown method '{s}'"))),
        }
    }
}

/// Source of π̂₀^I for the E and U estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialEstimator {
    StoreyBootstrap,
    External(f64),
}

impl InitialEstimator {
    pub fn label(&self) -> &'static str {
        match self {
            InitialEstimator::StoreyBootstrap => "storey_bootstrap",
            InitialEstimator::External(_) => "external",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub storey_lambda_grid: Vec<f64>,
    pub cheng_lambda_grid: Vec<f64>,
    pub bootstrap_reps: usize,
    pub initial_estimator: InitialEstimator,
    pub seed: u64,
    pub methods: Vec<Method>,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            storey_lambda_grid: lambda_grid(0.0, 0.95, 0.05),
            cheng_lambda_grid: lambda_grid(0.20, 0.50, 0.05),
            bootstrap_reps: 100,
            initial_estimator: InitialEstimator::StoreyBootstrap,
            seed: 0,
            methods: Method::ALL.to_vec(),
        }
    }
}

/// Evenly spaced grid from `start` to `end` inclusive, rounded to 10 decimals
/// so that e.g. 0.15 is the literal 0.15.
pub fn lambda_grid(start: f64, end: f64, step: f64) -> Vec<f64> {
    let n = ((end - start) / step + 1e-9).floor() as usize;
    (0..=n)
        .map(|k| ((start + k as f64 * step) * 1e10).round() / 1e10)
        .collect()
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, grid) in [
            ("storey lambda grid", &self.storey_lambda_grid),
            ("cheng lambda grid", &self.cheng_lambda_grid),
        ] {
            if grid.is_empty() {
                return Err(Error::InvalidParameter(format!("{name} is empty")));
            }
            if grid.iter().any(|l| !(0.0..1.0).contains(l)) {
                return Err(Error::InvalidParameter(format!("{name} must lie in [0, 1)")));
            }
            if grid.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::InvalidParameter(format!("{name} must be strictly increasing")));
            }
        }
        if self.bootstrap_reps == 0 {
            return Err(Error::InvalidParameter("bootstrap_reps must be >= 1".into()));
        }
        if let InitialEstimator::External(v) = self.initial_estimator {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidParameter(format!(
                    "initial pi0 must be in [0, 1], got {v}"
                )));
            }
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidParameter("no methods selected".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pi0Estimate {
    pub method: Method,
    pub value: f64,
    /// Source of π̂₀^I, when the method uses one.
    pub initial: Option<String>,
    pub intermediates: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
}

impl Pi0Estimate {
    fn new(method: Method, value: f64) -> Self {
        Self {
            method,
            value: clamp01(value),
            initial: None,
            intermediates: BTreeMap::new(),
            warnings: Vec::new(),
        }
    }
}

fn clamp01(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

fn lambda_key(prefix: &str, lambda: f64) -> String {
    format!("{prefix}_lambda_{lambda:.2}")
}

/// π̂₀(λ) = #{p ≥ λ} / (m(1 − λ)), unclamped.
pub fn storey_at_lambda(p_values: &[f64], lambda: f64) -> Result<f64> {
    if p_values.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(0.0..1.0).contains(&lambda) {
        return Err(Error::Domain(lambda));
    }
    let w = p_values.iter().filter(|&&p| p >= lambda).count();
    Ok(w as f64 / (p_values.len() as f64 * (1.0 - lambda)))
}

/// Storey's estimator at the λ minimizing the bootstrap MSE.
pub fn storey_bootstrap(p_values: &[f64], config: &EstimatorConfig) -> Result<Pi0Estimate> {
    if p_values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let grid = &config.storey_lambda_grid;
    let m = p_values.len();
    let mf = m as f64;

    // resampling runs over the sorted values so row order cannot matter
    let mut sorted = p_values.to_vec();
    sorted.sort_by(f64::total_cmp);
    // bin[i] = number of grid points ≤ p_i, so p_i ≥ λ_j iff bin[i] > j
    let bins: Vec<usize> = sorted
        .iter()
        .map(|&p| grid.partition_point(|&l| l <= p))
        .collect();
    let estimates_from_counts = |counts: &[usize]| -> Vec<f64> {
        let mut w = m;
        let mut out = Vec::with_capacity(grid.len());
        // counts[k] = #{bin == k}; W(λ_j) = m − Σ_{k ≤ j} counts[k]
        for (j, &l) in grid.iter().enumerate() {
            w -= counts[j];
            out.push(w as f64 / (mf * (1.0 - l)));
        }
        out
    };
    let mut counts = vec![0usize; grid.len() + 1];
    for &b in &bins {
        counts[b] += 1;
    }
    let full = estimates_from_counts(&counts);
    let target = full.iter().copied().fold(f64::INFINITY, f64::min);

    let mut mse = vec![0.0; grid.len()];
    for b in 0..config.bootstrap_reps {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(b as u64);
        counts.iter_mut().for_each(|c| *c = 0);
        for _ in 0..m {
            counts[bins[rng.gen_range(0..m)]] += 1;
        }
        for (acc, est) in mse.iter_mut().zip(estimates_from_counts(&counts)) {
            *acc += (est - target).powi(2);
        }
    }
    let reps = config.bootstrap_reps as f64;
    mse.iter_mut().for_each(|v| *v /= reps);

    // strict comparison keeps the smaller λ on ties
    let mut best = 0;
    for j in 1..grid.len() {
        if mse[j] < mse[best] {
            best = j;
        }
    }

    let mut est = Pi0Estimate::new(Method::StoreyBootstrap, full[best]);
    est.intermediates.insert("lambda_best".into(), grid[best]);
    est.intermediates.insert("raw".into(), full[best]);
    for (j, &l) in grid.iter().enumerate() {
        est.intermediates.insert(lambda_key("pi0", l), full[j]);
        est.intermediates.insert(lambda_key("mse", l), mse[j]);
    }
    Ok(est)
}

/// Indices of hypotheses ordered from strongest to weakest signal: ascending
/// ê, then descending |δ̂|, then ascending index.
pub fn signal_order(records: &[EpvRecord]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..records.len()).collect();
    idx.sort_by(|&a, &b| {
        let (ra, rb) = (&records[a], &records[b]);
        ra.e_hat
            .total_cmp(&rb.e_hat)
            .then(rb.effect_size_hat.abs().total_cmp(&ra.effect_size_hat.abs()))
            .then(ra.hypothesis_index.cmp(&rb.hypothesis_index))
    });
    idx
}

/// d = ⌊m(1 − π̂₀^I)⌋.
pub fn alternative_count(m: usize, pi0_initial: f64) -> usize {
    let d = (m as f64 * (1.0 - pi0_initial)).floor();
    (d.max(0.0) as usize).min(m)
}

/// ê: mean of the d smallest ê_i with d = ⌊m(1 − π̂₀^I)⌋. Returns (0, 0)
/// when d is 0.
pub fn e_hat(records: &[EpvRecord], pi0_initial: f64) -> (f64, usize) {
    let d = alternative_count(records.len(), pi0_initial);
    if d == 0 {
        return (0.0, 0);
    }
    let order = signal_order(records);
    let sum: f64 = order[..d].iter().map(|&i| records[i].e_hat).sum();
    (sum / d as f64, d)
}

// summed in sorted order so the result is independent of row order
fn mean(xs: &[f64]) -> f64 {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.iter().sum::<f64>() / xs.len() as f64
}

/// π̂₀^E = clamp((p̄ − ê)/(0.5 − ê)).
pub fn proposed_e(
    p_values: &[f64],
    records: &[EpvRecord],
    pi0_initial: f64,
    _config: &EstimatorConfig,
) -> Result<Pi0Estimate> {
    proposed_e_stage(Method::E1, p_values, records, pi0_initial)
}

fn proposed_e_stage(
    method: Method,
    p_values: &[f64],
    records: &[EpvRecord],
    pi0_initial: f64,
) -> Result<Pi0Estimate> {
    if p_values.is_empty() {
        return Err(Error::EmptyInput);
    }
    if p_values.len() != records.len() {
        return Err(Error::InvalidParameter(format!(
            "{} p-values but {} expected-p records",
            p_values.len(),
            records.len()
        )));
    }
    if !(0.0..=1.0).contains(&pi0_initial) {
        return Err(Error::InvalidParameter(format!(
            "initial pi0 must be in [0, 1], got {pi0_initial}"
        )));
    }
    let p_bar = mean(p_values);
    let (e, d) = e_hat(records, pi0_initial);
    let mut warnings = Vec::new();
    let raw = if e >= 0.5 - DENOMINATOR_EPS {
        if p_bar >= 0.5 {
            warnings.push(format!("e_hat = {e} leaves no room for correction; reporting 1"));
            1.0
        } else {
            return Err(Error::DegenerateDenominator(format!(
                "e_hat = {e} with mean p-value {p_bar}"
            )));
        }
    } else {
        (p_bar - e) / (0.5 - e)
    };
    if d == 0 {
        warnings.push("d = 0: no hypotheses selected as alternatives, e_hat set to 0".into());
    }
    let mut est = Pi0Estimate::new(method, raw);
    est.warnings = warnings;
    let im = &mut est.intermediates;
    im.insert("p_bar".into(), p_bar);
    im.insert("e_hat".into(), e);
    im.insert("d".into(), d as f64);
    im.insert("d_zero".into(), if d == 0 { 1.0 } else { 0.0 });
    im.insert("pi0_initial".into(), pi0_initial);
    im.insert("raw".into(), raw);
    Ok(est)
}

/// π̂₀^E computed once from `pi0_initial`, then again with the first result
/// as the initial estimate.
pub fn proposed_e_iterated(
    p_values: &[f64],
    records: &[EpvRecord],
    pi0_initial: f64,
    _config: &EstimatorConfig,
) -> Result<Pi0Estimate> {
    let first = proposed_e_stage(Method::E1, p_values, records, pi0_initial)?;
    let mut second = proposed_e_stage(Method::E3, p_values, records, first.value)?;
    for (k, v) in &first.intermediates {
        second.intermediates.insert(format!("stage1_{k}"), *v);
    }
    second.intermediates.insert("stage1_value".into(), first.value);
    let mut warnings: Vec<String> = first.warnings.iter().map(|w| format!("stage 1: {w}")).collect();
    warnings.append(&mut second.warnings);
    second.warnings = warnings;
    Ok(second)
}

/// Cheng's π̂₀^U averaged over the configured λ grid. Q̂(λ) is
/// (1/m)·Σ Q_{δ̂}(λ) over the d strongest signals.
pub fn cheng_u(
    p_values: &[f64],
    outcomes: &[TestOutcome],
    pi0_initial: f64,
    config: &EstimatorConfig,
) -> Result<Pi0Estimate> {
    let model = SignalModel::from_outcomes(outcomes)?;
    let records = epv_with_model(&model, outcomes)?;
    cheng_u_with(&model, p_values, &records, pi0_initial, config)
}

pub(crate) fn cheng_u_with(
    model: &SignalModel,
    p_values: &[f64],
    records: &[EpvRecord],
    pi0_initial: f64,
    config: &EstimatorConfig,
) -> Result<Pi0Estimate> {
    if p_values.is_empty() {
        return Err(Error::EmptyInput);
    }
    if p_values.len() != records.len() {
        return Err(Error::InvalidParameter(format!(
            "{} p-values but {} outcomes",
            p_values.len(),
            records.len()
        )));
    }
    let m = p_values.len();
    let mf = m as f64;
    let d = alternative_count(m, pi0_initial);
    let selected = &signal_order(records)[..d];

    let mut intermediates = BTreeMap::new();
    let mut warnings = Vec::new();
    let mut total = 0.0;
    let mut used = 0usize;
    for &lambda in &config.cheng_lambda_grid {
        if lambda <= 0.0 {
            warnings.push(format!("lambda {lambda} skipped: Q is undefined at 0"));
            continue;
        }
        let mut q_sum = 0.0;
        for &i in selected {
            q_sum += model.upper_tail_cached(lambda, records[i].effect_size_hat)?;
        }
        let q_hat = q_sum / mf;
        let w = p_values.iter().filter(|&&p| p >= lambda).count() as f64;
        let denom = (1.0 - lambda) - q_hat;
        intermediates.insert(lambda_key("q_hat", lambda), q_hat);
        if denom.abs() <= DENOMINATOR_EPS {
            warnings.push(format!("lambda {lambda} skipped: degenerate denominator {denom}"));
            continue;
        }
        let pi = clamp01((w / mf - q_hat) / denom);
        intermediates.insert(lambda_key("pi0", lambda), pi);
        total += pi;
        used += 1;
    }
    if used == 0 {
        return Err(Error::DegenerateDenominator(
            "every lambda in the grid was skipped".into(),
        ));
    }
    intermediates.insert("d".into(), d as f64);
    intermediates.insert("pi0_initial".into(), pi0_initial);
    intermediates.insert("lambdas_used".into(), used as f64);
    let mut est = Pi0Estimate::new(Method::U, total / used as f64);
    est.intermediates = intermediates;
    est.warnings = warnings;
    Ok(est)
}

/// Runs every configured method. A failing method is reported in place
/// without stopping the others.
pub fn estimate_all(
    p_values: &[f64],
    outcomes: &[TestOutcome],
    config: &EstimatorConfig,
) -> Result<BTreeMap<Method, Result<Pi0Estimate>>> {
    config.validate()?;
    if p_values.is_empty() {
        return Err(Error::EmptyInput);
    }
    if p_values.len() != outcomes.len() {
        return Err(Error::InvalidParameter(format!(
            "{} p-values but {} outcomes",
            p_values.len(),
            outcomes.len()
        )));
    }
    let wants = |m: Method| config.methods.contains(&m);
    let needs_storey = wants(Method::StoreyBootstrap)
        || (config.initial_estimator == InitialEstimator::StoreyBootstrap
            && (wants(Method::E1) || wants(Method::E3) || wants(Method::U)));
    let storey = needs_storey.then(|| storey_bootstrap(p_values, config));

    let initial: std::result::Result<f64, String> = match config.initial_estimator {
        InitialEstimator::External(v) => Ok(v),
        InitialEstimator::StoreyBootstrap => match &storey {
            Some(Ok(s)) => Ok(s.value),
            Some(Err(e)) => Err(format!("initial estimate failed: {e}")),
            None => Err("initial estimate not computed".into()),
        },
    };
    let label = config.initial_estimator.label().to_string();

    let signal = if wants(Method::E1) || wants(Method::E3) || wants(Method::U) {
        Some(SignalModel::from_outcomes(outcomes).and_then(|model| {
            let records = epv_with_model(&model, outcomes)?;
            Ok((model, records))
        }))
    } else {
        None
    };

    let mut out = BTreeMap::new();
    for &method in &Method::ALL {
        if !wants(method) {
            continue;
        }
        let result = match method {
            Method::StoreyBootstrap => match &storey {
                Some(Ok(s)) => Ok(s.clone()),
                Some(Err(e)) => Err(Error::InvalidParameter(e.to_string())),
                None => unreachable!("storey is computed when requested"),
            },
            _ => {
                let (model, records) = match signal.as_ref().expect("signal computed") {
                    Ok(pair) => (&pair.0, &pair.1),
                    Err(e) => {
                        out.insert(method, Err(Error::InvalidParameter(e.to_string())));
                        continue;
                    }
                };
                match &initial {
                    Err(msg) => Err(Error::InvalidParameter(msg.clone())),
                    Ok(pi0_i) => match method {
                        Method::E1 => proposed_e(p_values, records, *pi0_i, config),
                        Method::E3 => proposed_e_iterated(p_values, records, *pi0_i, config),
                        Method::U => cheng_u_with(model, p_values, records, *pi0_i, config),
                        Method::StoreyBootstrap => unreachable!(),
                    }
                    .map(|mut e| {
                        e.initial = Some(label.clone());
                        e
                    }),
                }
            }
        };
        out.insert(method, result);
    }
    Ok(out)
}
