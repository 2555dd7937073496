//! Expected p-values under the alternative, e_δ, and the upper-tail
//! probability Q_δ(λ) of a non-null p-value, for the three test families.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::distributions::{
    truncated_t_expectation_with, NoncentralTDist, TDist, TruncationRegion,
};
use crate::error::{Error, Result};
use crate::quadrature::AdaptiveOptions;
use crate::special::{normal_cdf, normal_sf, normal_upper_quantile};
use crate::testing::{TestFamily, TestOutcome};

// the integrand is a smooth CDF difference; bisection supplies the accuracy
const EPV_RULE_ORDER: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpvRecord {
    pub hypothesis_index: usize,
    /// e_δ̂ for this hypothesis, in [0, 0.5].
    pub e_hat: f64,
    pub effect_size_hat: f64,
}

/// e_δ for the right-sided Z test: 1 − E Φ(X + √n·δ) = 1 − Φ(√n·δ/√2).
pub fn e_delta_z(delta: f64, n: usize) -> f64 {
    e_z_from_ncp((n as f64).sqrt() * delta)
}

fn e_z_from_ncp(ncp: f64) -> f64 {
    normal_sf(ncp * std::f64::consts::FRAC_1_SQRT_2)
}

/// e_δ for a two-sided t test with `df` degrees of freedom and
/// noncentrality `ncp`:
///
/// e = E_{X∼t(0,∞)} F_ncp(X) − E_{X∼t(−∞,0)} F_ncp(X).
///
/// By symmetry of the central t the second term equals E_{X∼t(0,∞)} F_ncp(−X),
/// so both are taken in a single pass over (0, ∞).
pub fn e_delta_t(df: f64, ncp: f64) -> Result<f64> {
    let central = TDist::new(df)?;
    if ncp == 0.0 {
        return Ok(0.5);
    }
    let alt = NoncentralTDist::new(df, ncp)?;
    let a = ncp.abs();
    let hints = [a, 0.5 * a, a + 2.0, (a - 2.0).max(0.0)];
    let e = truncated_t_expectation_with(
        |x| alt.cdf(x) - alt.cdf(-x),
        &central,
        TruncationRegion::positive_half(),
        &hints,
        AdaptiveOptions {
            order: EPV_RULE_ORDER,
            ..AdaptiveOptions::default()
        },
    )?;
    Ok(e.clamp(0.0, 0.5))
}

/// e_δ for the one-sample two-sided t test on n observations.
pub fn e_delta_t1(delta: f64, n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!("n must be >= 2, got {n}")));
    }
    let n = n as f64;
    e_delta_t(n - 1.0, n.sqrt() * delta)
}

/// e_δ for the two-sample two-sided t test with group sizes n1, n2.
pub fn e_delta_t2(delta: f64, n1: usize, n2: usize) -> Result<f64> {
    if n1 < 2 || n2 < 2 {
        return Err(Error::InvalidParameter(format!(
            "group sizes must be >= 2, got ({n1}, {n2})"
        )));
    }
    let (a, b) = (n1 as f64, n2 as f64);
    e_delta_t(a + b - 2.0, (a * b / (a + b)).sqrt() * delta)
}

/// Q_δ(λ): probability that a two-sided t-test p-value exceeds λ when the
/// statistic is noncentral t with noncentrality `ncp_scale · delta`.
pub fn q_delta(lambda: f64, delta: f64, df: f64, ncp_scale: f64) -> Result<f64> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::Domain(lambda));
    }
    let crit = TDist::new(df)?.upper_quantile(0.5 * lambda)?;
    q_t_at_critical(crit, df, ncp_scale * delta)
}

fn q_t_at_critical(crit: f64, df: f64, ncp: f64) -> Result<f64> {
    let alt = NoncentralTDist::new(df, ncp)?;
    Ok((alt.cdf(crit) - alt.cdf(-crit)).clamp(0.0, 1.0))
}

/// Q_δ(λ) for the right-sided Z test: Φ(z_λ − √n·δ), z_λ the upper λ-point.
pub fn q_delta_z(lambda: f64, delta: f64, n: usize) -> Result<f64> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::Domain(lambda));
    }
    Ok(normal_cdf(normal_upper_quantile(lambda) - (n as f64).sqrt() * delta))
}

/// The sampling model shared by a batch of test outcomes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SignalModel {
    Z { ncp_scale: f64 },
    T { family: TestFamily, df: f64, ncp_scale: f64 },
}

impl SignalModel {
    pub fn from_outcomes(outcomes: &[TestOutcome]) -> Result<Self> {
        let first = outcomes.first().ok_or(Error::EmptyInput)?;
        for (i, o) in outcomes.iter().enumerate() {
            if o.family != first.family {
                return Err(Error::FamilyMix(format!(
                    "row {i} is {} but row 0 is {}",
                    o.family, first.family
                )));
            }
            if o.df != first.df || o.ncp_scale != first.ncp_scale {
                return Err(Error::FamilyMix(format!(
                    "row {i} has df {} and scale {}, row 0 has df {} and scale {}",
                    o.df, o.ncp_scale, first.df, first.ncp_scale
                )));
            }
        }
        Ok(match first.family {
            TestFamily::ZOneSided => SignalModel::Z {
                ncp_scale: first.ncp_scale,
            },
            family => SignalModel::T {
                family,
                df: first.df,
                ncp_scale: first.ncp_scale,
            },
        })
    }

    pub fn ncp_scale(&self) -> f64 {
        match *self {
            SignalModel::Z { ncp_scale } | SignalModel::T { ncp_scale, .. } => ncp_scale,
        }
    }

    /// e_δ evaluated directly.
    pub fn expected_p(&self, delta: f64) -> Result<f64> {
        match *self {
            SignalModel::Z { ncp_scale } => Ok(e_z_from_ncp(ncp_scale * delta)),
            SignalModel::T { df, ncp_scale, .. } => e_delta_t(df, ncp_scale * delta),
        }
    }

    /// Q_δ(λ) evaluated directly.
    pub fn upper_tail(&self, lambda: f64, delta: f64) -> Result<f64> {
        match *self {
            SignalModel::Z { ncp_scale } => {
                if !(lambda > 0.0 && lambda < 1.0) {
                    return Err(Error::Domain(lambda));
                }
                Ok(normal_cdf(normal_upper_quantile(lambda) - ncp_scale * delta))
            }
            SignalModel::T { df, ncp_scale, .. } => q_delta(lambda, delta, df, ncp_scale),
        }
    }

    /// e_δ through the shared interpolation table (t families) or the closed
    /// form (Z).
    pub fn expected_p_cached(&self, delta: f64) -> Result<f64> {
        if delta == 0.0 {
            return Ok(0.5);
        }
        match *self {
            SignalModel::Z { .. } => self.expected_p(delta),
            SignalModel::T { df, ncp_scale, .. } => {
                let table = TTables::for_df(df);
                table.expected_p(ncp_scale * delta)
            }
        }
    }

    /// Q_δ(λ) through the shared interpolation table (t families) or the
    /// closed form (Z).
    pub fn upper_tail_cached(&self, lambda: f64, delta: f64) -> Result<f64> {
        match *self {
            SignalModel::Z { .. } => self.upper_tail(lambda, delta),
            SignalModel::T { df, ncp_scale, .. } => {
                if !(lambda > 0.0 && lambda < 1.0) {
                    return Err(Error::Domain(lambda));
                }
                TTables::for_df(df).upper_tail(lambda, ncp_scale * delta)
            }
        }
    }
}

/// ê_i = e_{δ̂_i} for every outcome, in input order.
pub fn epv_for_outcomes(outcomes: &[TestOutcome]) -> Result<Vec<EpvRecord>> {
    let model = SignalModel::from_outcomes(outcomes)?;
    epv_with_model(&model, outcomes)
}

pub(crate) fn epv_with_model(model: &SignalModel, outcomes: &[TestOutcome]) -> Result<Vec<EpvRecord>> {
    outcomes
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let e = model.expected_p_cached(o.effect_size_hat)?;
            Ok(EpvRecord {
                hypothesis_index: i,
                e_hat: e.clamp(0.0, 0.5),
                effect_size_hat: o.effect_size_hat,
            })
        })
        .collect()
}

// Interpolation grid: s = S0·asinh(|ncp| / S0), uniform in s with step H.
// Both e and Q are even in ncp, hence even in s, which supplies the node
// left of zero.
const GRID_S0: f64 = 4.0;
const GRID_H: f64 = 0.01;
const GRID_MAX_NCP: f64 = 1000.0;

fn grid_len() -> usize {
    ((GRID_S0 * (GRID_MAX_NCP / GRID_S0).asinh()) / GRID_H).ceil() as usize + 3
}

fn node_ncp(k: usize) -> f64 {
    GRID_S0 * (k as f64 * GRID_H / GRID_S0).sinh()
}

struct LazyCurve {
    nodes: Vec<OnceLock<f64>>,
}

impl LazyCurve {
    fn new() -> Self {
        Self {
            nodes: (0..grid_len()).map(|_| OnceLock::new()).collect(),
        }
    }

    fn node<F: Fn(f64) -> Result<f64>>(&self, k: usize, exact: &F) -> Result<f64> {
        if let Some(v) = self.nodes[k].get() {
            return Ok(*v);
        }
        let v = exact(node_ncp(k))?;
        // a concurrent writer computed the same deterministic value
        let _ = self.nodes[k].set(v);
        Ok(v)
    }

    /// Four-point Lagrange interpolation in s; falls back to the exact
    /// function outside the grid.
    fn eval<F: Fn(f64) -> Result<f64>>(&self, ncp: f64, exact: F) -> Result<f64> {
        let a = ncp.abs();
        let s = GRID_S0 * (a / GRID_S0).asinh();
        let pos = s / GRID_H;
        let k = pos.floor() as usize;
        if k + 2 >= self.nodes.len() {
            return exact(a);
        }
        let u = pos - k as f64;
        let left = if k == 0 { 1 } else { k - 1 };
        let f = [
            self.node(left, &exact)?,
            self.node(k, &exact)?,
            self.node(k + 1, &exact)?,
            self.node(k + 2, &exact)?,
        ];
        let w = [
            -u * (u - 1.0) * (u - 2.0) / 6.0,
            (u + 1.0) * (u - 1.0) * (u - 2.0) / 2.0,
            -(u + 1.0) * u * (u - 2.0) / 2.0,
            (u + 1.0) * u * (u - 1.0) / 6.0,
        ];
        Ok(f.iter().zip(&w).map(|(f, w)| f * w).sum())
    }
}

/// Memoized e and Q curves for one t degrees-of-freedom value. Shared
/// process-wide; node values are pure functions of (df, node), so the
/// results do not depend on which thread filled a node first.
struct TTables {
    df: f64,
    expected_p: LazyCurve,
    upper_tail: Mutex<HashMap<u64, Arc<(f64, LazyCurve)>>>,
}

impl TTables {
    fn for_df(df: f64) -> Arc<TTables> {
        static REGISTRY: OnceLock<Mutex<HashMap<u64, Arc<TTables>>>> = OnceLock::new();
        let registry = REGISTRY.get_or_init(Default::default);
        let mut map = registry.lock().expect("table registry poisoned");
        map.entry(df.to_bits())
            .or_insert_with(|| {
                Arc::new(TTables {
                    df,
                    expected_p: LazyCurve::new(),
                    upper_tail: Mutex::new(HashMap::new()),
                })
            })
            .clone()
    }

    fn expected_p(&self, ncp: f64) -> Result<f64> {
        let df = self.df;
        self.expected_p
            .eval(ncp, |eta| e_delta_t(df, eta))
            .map(|e| e.clamp(0.0, 0.5))
    }

    fn upper_tail(&self, lambda: f64, ncp: f64) -> Result<f64> {
        let curve = {
            let mut map = self.upper_tail.lock().expect("table poisoned");
            match map.get(&lambda.to_bits()) {
                Some(c) => c.clone(),
                None => {
                    let crit = TDist::new(self.df)?.upper_quantile(0.5 * lambda)?;
                    let c = Arc::new((crit, LazyCurve::new()));
                    map.insert(lambda.to_bits(), c.clone());
                    c
                }
            }
        };
        let (crit, ref lazy) = *curve;
        let df = self.df;
        lazy.eval(ncp, |eta| q_t_at_critical(crit, df, eta))
            .map(|q| q.clamp(0.0, 1.0))
    }
}
