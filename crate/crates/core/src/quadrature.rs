//! Fixed-order Gauss–Legendre rules and a deterministic adaptive driver.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use crate::error::{Error, Result};

/// Default rule order.
pub const DEFAULT_ORDER: usize = 64;
/// Default absolute tolerance for adaptive integration.
pub const DEFAULT_ABS_TOL: f64 = 1e-12;
/// Maximum bisection depth below each initial panel.
pub const DEFAULT_MAX_DEPTH: usize = 24;

#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Builds an `order`-point rule on [−1, 1] by Newton iteration on the
    /// Legendre polynomial roots.
    pub fn new(order: usize) -> Self {
        assert!(order >= 1);
        let n = order;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut deriv = 0.0;
            for _ in 0..100 {
                let (p, dp) = legendre_with_derivative(n, x);
                deriv = dp;
                let dx = p / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, dp) = legendre_with_derivative(n, x);
            if dp.is_finite() {
                deriv = dp;
            }
            let w = 2.0 / ((1.0 - x * x) * deriv * deriv);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    /// Shared default-order rule.
    pub fn default_rule() -> &'static Self {
        Self::shared(DEFAULT_ORDER)
    }

    /// Process-wide rule of the given order, built once.
    pub fn shared(order: usize) -> &'static Self {
        static RULES: OnceLock<Mutex<HashMap<usize, &'static GaussLegendre>>> = OnceLock::new();
        let mut map = RULES
            .get_or_init(Default::default)
            .lock()
            .expect("rule cache poisoned");
        map.entry(order)
            .or_insert_with(|| Box::leak(Box::new(GaussLegendre::new(order))))
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, f: &F, a: f64, b: f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * f(mid + half * x))
            .sum::<f64>()
            * half
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p1 = 1.0;
    let mut p2 = 0.0;
    for j in 1..=n {
        let p3 = p2;
        p2 = p1;
        let jf = j as f64;
        p1 = ((2.0 * jf - 1.0) * x * p2 - (jf - 1.0) * p3) / jf;
    }
    let dp = n as f64 * (x * p1 - p2) / (x * x - 1.0);
    (p1, dp)
}

#[derive(Debug, Clone, Copy)]
pub struct AdaptiveOptions {
    pub abs_tol: f64,
    pub max_depth: usize,
    /// Gauss–Legendre order used on each panel.
    pub order: usize,
}

impl Default for AdaptiveOptions {
    fn default() -> Self {
        Self {
            abs_tol: DEFAULT_ABS_TOL,
            max_depth: DEFAULT_MAX_DEPTH,
            order: DEFAULT_ORDER,
        }
    }
}

/// Integrates `f` over the panels delimited by `breaks` (sorted, at least two
/// points). Each panel is compared against the sum of its two halves and
/// bisected until they agree within its share of `abs_tol`.
pub fn integrate_adaptive<F: Fn(f64) -> f64>(
    f: &F,
    breaks: &[f64],
    opts: AdaptiveOptions,
) -> Result<f64> {
    if breaks.len() < 2 {
        return Err(Error::InvalidParameter("need at least two break points".into()));
    }
    let rule = GaussLegendre::shared(opts.order);
    let total = breaks[breaks.len() - 1] - breaks[0];
    if total.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::InvalidParameter("empty integration range".into()));
    }

    let mut sum = 0.0;
    let mut unresolved = 0.0;
    let mut panels = 0usize;
    // (a, b, whole-panel estimate, depth), processed depth-first in order
    let mut stack: Vec<(f64, f64, f64, usize)> = Vec::new();
    for w in breaks.windows(2).rev() {
        if w[1] > w[0] {
            stack.push((w[0], w[1], rule.integrate(f, w[0], w[1]), 0));
        }
    }
    while let Some((a, b, whole, depth)) = stack.pop() {
        panels += 1;
        let mid = 0.5 * (a + b);
        let left = rule.integrate(f, a, mid);
        let right = rule.integrate(f, mid, b);
        let refined = left + right;
        let err = (refined - whole).abs();
        let tol = opts.abs_tol * (b - a) / total;
        if err <= tol {
            sum += refined;
        } else if depth >= opts.max_depth {
            sum += refined;
            unresolved += err;
        } else {
            stack.push((mid, b, right, depth + 1));
            stack.push((a, mid, left, depth + 1));
        }
    }
    if !sum.is_finite() || unresolved > opts.abs_tol {
        return Err(Error::NonConvergence {
            error: unresolved,
            panels,
        });
    }
    Ok(sum)
}
