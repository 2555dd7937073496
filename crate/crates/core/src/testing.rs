//! Per-hypothesis test statistics, p-values and effect-size estimates.

use std::fmt;
use std::str::FromStr;

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::TDist;
use crate::error::{Error, Result};
use crate::special::normal_sf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestFamily {
    /// Right-sided Z test with known σ.
    ZOneSided,
    /// One-sample two-sided t test.
    TOneSampleTwoSided,
    /// Pooled-variance two-sample two-sided t test.
    TTwoSampleTwoSided,
}

impl TestFamily {
    pub fn short_name(&self) -> &'static str {
        match self {
            TestFamily::ZOneSided => "z",
            TestFamily::TOneSampleTwoSided => "t1",
            TestFamily::TTwoSampleTwoSided => "t2",
        }
    }
}

impl fmt::Display for TestFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for TestFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "z" | "z_one_sided" => Ok(TestFamily::ZOneSided),
            "t1" | "t_one_sample_two_sided" => Ok(TestFamily::TOneSampleTwoSided),
            "t2" | "t_two_sample_two_sided" => Ok(TestFamily::TTwoSampleTwoSided),
            other => Err(Error::InvalidParameter(format!("unknown test family '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Group {
    X,
    Y,
}

/// One row of the data matrix, optionally split into two groups.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    values: Vec<f64>,
    groups: Option<Vec<Group>>,
}

impl Sample {
    pub fn one_sample(values: Vec<f64>) -> Result<Self> {
        check_finite(&values)?;
        Ok(Self { values, groups: None })
    }

    pub fn two_sample(values: Vec<f64>, groups: Vec<Group>) -> Result<Self> {
        check_finite(&values)?;
        if groups.len() != values.len() {
            return Err(Error::Labels(format!(
                "{} labels for {} values",
                groups.len(),
                values.len()
            )));
        }
        Ok(Self {
            values,
            groups: Some(groups),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn groups(&self) -> Option<&[Group]> {
        self.groups.as_deref()
    }

    fn split(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let groups = self
            .groups
            .as_ref()
            .ok_or_else(|| Error::Labels("two-sample test needs group labels".into()))?;
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (&v, g) in self.values.iter().zip(groups) {
            match g {
                Group::X => x.push(v),
                Group::Y => y.push(v),
            }
        }
        Ok((x, y))
    }
}

fn check_finite(values: &[f64]) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateSample("non-finite value".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub p_value: f64,
    pub effect_size_hat: f64,
    /// Realised test statistic (Z or T).
    pub statistic: f64,
    pub family: TestFamily,
    /// Degrees of freedom; infinite for the Z test.
    pub df: f64,
    /// √n or √(n₁n₂/(n₁+n₂)); noncentrality = ncp_scale · δ.
    pub ncp_scale: f64,
}

fn mean_and_ss(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    (mean, ss)
}

fn is_constant(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[0] == w[1])
}

/// Right-sided Z test of μ = 0 against μ > 0 with known σ.
pub fn z_test(sample: &Sample, sigma: f64) -> Result<TestOutcome> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma}")));
    }
    let values = sample.values();
    if values.is_empty() {
        return Err(Error::DegenerateSample("Z test needs at least one value".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let scale = n.sqrt();
    let z = scale * mean / sigma;
    Ok(TestOutcome {
        p_value: normal_sf(z),
        effect_size_hat: (mean / sigma).max(0.0),
        statistic: z,
        family: TestFamily::ZOneSided,
        df: f64::INFINITY,
        ncp_scale: scale,
    })
}

/// One-sample two-sided t test of μ = 0. The effect estimate is x̄/S, so
/// that `ncp_scale · effect_size_hat` is exactly the realised T.
pub fn t_test_one_sample(sample: &Sample) -> Result<TestOutcome> {
    let values = sample.values();
    if values.len() < 2 {
        return Err(Error::DegenerateSample(format!(
            "one-sample t test needs n >= 2, got {}",
            values.len()
        )));
    }
    if is_constant(values) {
        return Err(Error::ZeroVariance);
    }
    let n = values.len() as f64;
    let (mean, ss) = mean_and_ss(values);
    let s = (ss / (n - 1.0)).sqrt();
    if !(s > 0.0) {
        return Err(Error::ZeroVariance);
    }
    let effect = mean / s;
    let scale = n.sqrt();
    let t = scale * effect;
    let df = n - 1.0;
    Ok(TestOutcome {
        p_value: two_sided_p(t, df),
        effect_size_hat: effect,
        statistic: t,
        family: TestFamily::TOneSampleTwoSided,
        df,
        ncp_scale: scale,
    })
}

/// Pooled-variance two-sample two-sided t test of μ_X = μ_Y.
pub fn t_test_two_sample(sample: &Sample) -> Result<TestOutcome> {
    let (x, y) = sample.split()?;
    t_test_two_groups(&x, &y)
}

pub(crate) fn t_test_two_groups(x: &[f64], y: &[f64]) -> Result<TestOutcome> {
    if x.len() < 2 || y.len() < 2 {
        return Err(Error::DegenerateSample(format!(
            "two-sample t test needs both groups >= 2, got ({}, {})",
            x.len(),
            y.len()
        )));
    }
    if is_constant(x) && is_constant(y) {
        return Err(Error::ZeroVariance);
    }
    let n1 = x.len() as f64;
    let n2 = y.len() as f64;
    let (mx, ssx) = mean_and_ss(x);
    let (my, ssy) = mean_and_ss(y);
    let df = n1 + n2 - 2.0;
    let s = ((ssx + ssy) / df).sqrt();
    if !(s > 0.0) {
        return Err(Error::ZeroVariance);
    }
    let effect = (mx - my) / s;
    let scale = (n1 * n2 / (n1 + n2)).sqrt();
    let t = scale * effect;
    Ok(TestOutcome {
        p_value: two_sided_p(t, df),
        effect_size_hat: effect,
        statistic: t,
        family: TestFamily::TTwoSampleTwoSided,
        df,
        ncp_scale: scale,
    })
}

fn two_sided_p(t: f64, df: f64) -> f64 {
    let dist = TDist::new(df).expect("df >= 1");
    (2.0 * dist.sf(t.abs())).min(1.0)
}

/// Applies the chosen test to every row of `data` (rows = hypotheses).
///
/// Rows are evaluated in parallel; output `i` always corresponds to row `i`.
/// Failing rows are collected with their indices into [`Error::Rows`].
pub fn test_matrix(
    data: ArrayView2<'_, f64>,
    groups: Option<&[Group]>,
    family: TestFamily,
    sigma: Option<f64>,
) -> Result<Vec<TestOutcome>> {
    let ncols = data.ncols();
    match family {
        TestFamily::TTwoSampleTwoSided => {
            let g = groups.ok_or_else(|| Error::Labels("two-sample test needs group labels".into()))?;
            if g.len() != ncols {
                return Err(Error::Labels(format!("{} labels for {} columns", g.len(), ncols)));
            }
        }
        TestFamily::ZOneSided => {
            if sigma.is_none() {
                return Err(Error::InvalidParameter("Z test needs a known sigma".into()));
            }
        }
        TestFamily::TOneSampleTwoSided => {}
    }

    let results: Vec<Result<TestOutcome>> = (0..data.nrows())
        .into_par_iter()
        .map(|i| {
            let row = data.row(i);
            let outcome = match family {
                TestFamily::ZOneSided => {
                    Sample::one_sample(row.to_vec()).and_then(|s| z_test(&s, sigma.unwrap_or(1.0)))
                }
                TestFamily::TOneSampleTwoSided => {
                    Sample::one_sample(row.to_vec()).and_then(|s| t_test_one_sample(&s))
                }
                TestFamily::TTwoSampleTwoSided => {
                    let g = groups.unwrap_or(&[]);
                    let mut x = Vec::new();
                    let mut y = Vec::new();
                    for (&v, grp) in row.iter().zip(g) {
                        match grp {
                            Group::X => x.push(v),
                            Group::Y => y.push(v),
                        }
                    }
                    check_finite(&x)
                        .and_then(|_| check_finite(&y))
                        .and_then(|_| t_test_two_groups(&x, &y))
                }
            };
            outcome.map_err(|e| e.at_row(i))
        })
        .collect();

    let mut outcomes = Vec::with_capacity(results.len());
    let mut errors = Vec::new();
    for r in results {
        match r {
            Ok(o) => outcomes.push(o),
            Err(e) => errors.push(e),
        }
    }
    if errors.is_empty() {
        Ok(outcomes)
    } else {
        Err(Error::Rows(errors))
    }
}
