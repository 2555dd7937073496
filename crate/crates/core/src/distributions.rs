//! Central and noncentral Student-t distributions, the standard normal, and
//! expectations against half-line truncated t densities.
//!
//! All values here are immutable after construction and every function is
//! pure, so they can be shared freely across threads.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{integrate_adaptive, AdaptiveOptions};
use crate::special::{beta_reg_xy, ln_gamma, normal_sf};

pub use crate::special::{normal_cdf, normal_pdf, normal_quantile};

/// Above this |ncp| the Poisson-weighted series is replaced by direct
/// integration over the χ mixing variable.
pub const NCT_SERIES_MAX_NCP: f64 = 37.0;
const NCT_SERIES_ERRMAX: f64 = 1e-12;
const NCT_SERIES_MAX_ITER: usize = 2000;
// the mixing integrand is smooth on every panel; a short rule with more
// bisection is several times cheaper than the default order
pub(crate) const MIXTURE_RULE_ORDER: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TDist {
    df: f64,
}

impl TDist {
    pub fn new(df: f64) -> Result<Self> {
        if !(df > 0.0) || !df.is_finite() {
            return Err(Error::InvalidParameter(format!("degrees of freedom must be positive, got {df}")));
        }
        Ok(Self { df })
    }

    pub fn df(&self) -> f64 {
        self.df
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        let v = self.df;
        ln_gamma(0.5 * (v + 1.0))
            - ln_gamma(0.5 * v)
            - 0.5 * (v * std::f64::consts::PI).ln()
            - 0.5 * (v + 1.0) * (x * x / v).ln_1p()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }

    /// P(T ≤ x).
    pub fn cdf(&self, x: f64) -> f64 {
        if x > 0.0 {
            1.0 - self.tail(x)
        } else {
            self.tail(x)
        }
    }

    /// P(T > x).
    pub fn sf(&self, x: f64) -> f64 {
        self.cdf(-x)
    }

    // P(T > |x|)
    fn tail(&self, x: f64) -> f64 {
        if x == 0.0 {
            return 0.5;
        }
        let x2 = x * x;
        if !x2.is_finite() {
            return 0.0;
        }
        let v = self.df;
        let denom = v + x2;
        0.5 * beta_reg_xy(0.5 * v, 0.5, v / denom, x2 / denom)
    }

    /// Upper p-point: the value t with P(T > t) = p.
    pub fn upper_quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Domain(p));
        }
        if p == 0.5 {
            return Ok(0.0);
        }
        if p > 0.5 {
            return Ok(-self.upper_tail_root(1.0 - p));
        }
        Ok(self.upper_tail_root(p))
    }

    // Solves P(T > t) = p for t > 0, p < 1/2, by safeguarded Newton.
    fn upper_tail_root(&self, p: f64) -> f64 {
        let v = self.df;
        let z = crate::special::normal_upper_quantile(p);
        let mut t = z + (z * z * z + z) / (4.0 * v);
        if !(t > 0.0) || !t.is_finite() {
            t = 1.0;
        }
        let mut lo = 0.0;
        let mut hi = t.max(1.0);
        while self.tail(hi) > p {
            lo = hi;
            hi *= 2.0;
        }
        if t <= lo || t >= hi {
            t = 0.5 * (lo + hi);
        }
        for _ in 0..500 {
            let g = self.tail(t) - p;
            if g == 0.0 {
                return t;
            }
            if g > 0.0 {
                lo = t;
            } else {
                hi = t;
            }
            let mut next = t + g / self.pdf(t);
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - t).abs() <= 1e-15 * t.max(1.0) || hi - lo <= 1e-15 * hi {
                return next;
            }
            t = next;
        }
        t
    }
}

pub fn t_cdf(x: f64, dist: &TDist) -> f64 {
    dist.cdf(x)
}

/// Upper-point quantile: `t_cdf(t_quantile(p)) = 1 − p`.
pub fn t_quantile(p: f64, dist: &TDist) -> Result<f64> {
    dist.upper_quantile(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoncentralTDist {
    df: f64,
    ncp: f64,
}

impl NoncentralTDist {
    pub fn new(df: f64, ncp: f64) -> Result<Self> {
        TDist::new(df)?;
        if !ncp.is_finite() {
            return Err(Error::InvalidParameter(format!("noncentrality must be finite, got {ncp}")));
        }
        Ok(Self { df, ncp })
    }

    pub fn df(&self) -> f64 {
        self.df
    }

    pub fn ncp(&self) -> f64 {
        self.ncp
    }

    /// P(T ≤ x) for T = (Z + ncp) / √(χ²_df / df).
    pub fn cdf(&self, x: f64) -> f64 {
        if self.ncp == 0.0 {
            return TDist { df: self.df }.cdf(x);
        }
        if x == f64::INFINITY {
            return 1.0;
        }
        if x == f64::NEG_INFINITY {
            return 0.0;
        }
        if self.ncp.abs() > NCT_SERIES_MAX_NCP {
            return self.cdf_by_mixture(x);
        }
        self.cdf_by_series(x)
    }

    /// Poisson-weighted incomplete-beta series with odd/even recursions
    /// (Lenth's AS 243). Negative x is reflected through
    /// F(x; ν, δ) = 1 − F(−x; ν, −δ).
    pub(crate) fn cdf_by_series(&self, x: f64) -> f64 {
        let (t, del, reflected) = if x >= 0.0 {
            (x, self.ncp, false)
        } else {
            (-x, -self.ncp, true)
        };
        let v = self.df;
        let t2 = t * t;
        let mut tnc = 0.0;
        if t2 > 0.0 {
            let xb = t2 / (t2 + v);
            let one_minus_xb = v / (t2 + v);
            let lambda = del * del;
            let mut p = 0.5 * (-0.5 * lambda).exp();
            let mut q = (2.0 / std::f64::consts::PI).sqrt() * p * del;
            let mut s = 0.5 - p;
            if s < 1e-7 {
                s = -0.5 * (-0.5 * lambda).exp_m1();
            }
            let mut a = 0.5;
            let b = 0.5 * v;
            let rxb = one_minus_xb.powf(b);
            let albeta = 0.5 * std::f64::consts::PI.ln() + ln_gamma(b) - ln_gamma(0.5 + b);
            let mut xodd = beta_reg_xy(a, b, xb, one_minus_xb);
            let mut godd = 2.0 * rxb * (a * xb.ln() - albeta).exp();
            let bx = b * xb;
            let mut xeven = if bx < f64::EPSILON { bx } else { 1.0 - rxb };
            let mut geven = bx * rxb;
            tnc = p * xodd + q * xeven;
            for it in 1..=NCT_SERIES_MAX_ITER {
                a += 1.0;
                xodd -= godd;
                xeven -= geven;
                godd *= xb * (a + b - 1.0) / a;
                geven *= xb * (a + b - 0.5) / (a + 0.5);
                let itf = it as f64;
                p *= lambda / (2.0 * itf);
                q *= lambda / (2.0 * itf + 1.0);
                tnc += p * xodd + q * xeven;
                s -= p;
                if s < -1e-10 || (s <= 0.0 && it > 1) {
                    break;
                }
                let errbd = 2.0 * s * (xodd - godd);
                if errbd.abs() < NCT_SERIES_ERRMAX && it > 1 {
                    break;
                }
            }
        }
        tnc += normal_sf(del);
        let tnc = tnc.clamp(0.0, 1.0);
        if reflected {
            1.0 - tnc
        } else {
            tnc
        }
    }

    /// F(x) = ∫₀^∞ Φ(x·w − ncp) g(w) dw, where g is the density of
    /// W = √(χ²_df / df). Evaluated on w = tan θ.
    pub(crate) fn cdf_by_mixture(&self, x: f64) -> f64 {
        let v = self.df;
        let ncp = self.ncp;
        // F(x) ≤ Φ(x·W − ncp) ≤ Φ(−ncp) for x ≤ 0, which is below 1e-299 here
        if x <= 0.0 && ncp > NCT_SERIES_MAX_NCP {
            return 0.0;
        }
        if x >= 0.0 && ncp < -NCT_SERIES_MAX_NCP {
            return 1.0;
        }
        // density of W = √(χ²_v / v): ln g(w) = c + (v − 1) ln w − v w² / 2
        let half_v = 0.5 * v;
        let ln_c = std::f64::consts::LN_2 + half_v * half_v.ln() - ln_gamma(half_v);
        let integrand = |theta: f64| {
            let w = theta.tan();
            if !(w > 0.0) || !w.is_finite() {
                return 0.0;
            }
            let z = x * w - ncp;
            if z < -39.0 {
                return 0.0;
            }
            let ln_g = ln_c + (v - 1.0) * w.ln() - half_v * w * w;
            if ln_g < -745.0 {
                return 0.0;
            }
            crate::special::normal_cdf(z) * ln_g.exp() * (1.0 + w * w)
        };
        let spread = (2.0 / v).sqrt();
        let mut breaks = vec![0.0, std::f64::consts::FRAC_PI_2];
        for w in [1.0 - 4.0 * spread, 1.0, 1.0 + 4.0 * spread] {
            if w > 0.0 {
                breaks.push(w.atan());
            }
        }
        if x > 0.0 {
            let w_cross = ncp / x;
            if w_cross > 0.0 && w_cross.is_finite() {
                breaks.push(w_cross.atan());
            }
        }
        breaks.sort_by(f64::total_cmp);
        breaks.dedup();
        let opts = AdaptiveOptions {
            abs_tol: 1e-11,
            max_depth: 30,
            order: MIXTURE_RULE_ORDER,
        };
        integrate_adaptive(&integrand, &breaks, opts)
            .unwrap_or(f64::NAN)
            .clamp(0.0, 1.0)
    }
}

pub fn noncentral_t_cdf(x: f64, dist: &NoncentralTDist) -> f64 {
    dist.cdf(x)
}

/// Open interval (lower, upper) of the extended real line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationRegion {
    lower: f64,
    upper: f64,
}

impl TruncationRegion {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if lower.is_nan() || upper.is_nan() || lower >= upper {
            return Err(Error::InvalidParameter(format!(
                "truncation region ({lower}, {upper}) is empty"
            )));
        }
        Ok(Self { lower, upper })
    }

    /// (−∞, 0)
    pub fn negative_half() -> Self {
        Self {
            lower: f64::NEG_INFINITY,
            upper: 0.0,
        }
    }

    /// (0, ∞)
    pub fn positive_half() -> Self {
        Self {
            lower: 0.0,
            upper: f64::INFINITY,
        }
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }
}

/// E[f(X)] for X drawn from `dist` truncated to `region`.
///
/// For the half-lines this is ∫ f(x)·2·f_t(x) dx over the region.
pub fn truncated_t_expectation<F: Fn(f64) -> f64>(
    f: F,
    dist: &TDist,
    region: TruncationRegion,
) -> Result<f64> {
    truncated_t_expectation_with(f, dist, region, &[], AdaptiveOptions::default())
}

/// As [`truncated_t_expectation`], with extra break points (in x) where the
/// integrand is known to change quickly, and explicit quadrature options.
pub fn truncated_t_expectation_with<F: Fn(f64) -> f64>(
    f: F,
    dist: &TDist,
    region: TruncationRegion,
    hints: &[f64],
    opts: AdaptiveOptions,
) -> Result<f64> {
    let mass = dist.cdf(region.upper) - dist.cdf(region.lower);
    if !(mass > 0.0) {
        return Err(Error::InvalidParameter("truncation region carries no mass".into()));
    }
    let integrand = |theta: f64| {
        let x = theta.tan();
        f(x) * dist.pdf(x) * (1.0 + x * x)
    };
    let lo = region.lower.atan();
    let hi = region.upper.atan();
    let mut breaks = vec![lo, hi];
    for x in [0.0, 1.0, -1.0, 4.0, -4.0, 16.0, -16.0]
        .iter()
        .chain(hints.iter())
    {
        let theta = x.atan();
        if theta > lo && theta < hi {
            breaks.push(theta);
        }
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    Ok(integrate_adaptive(&integrand, &breaks, opts)? / mass)
}
