//! Small statistics helpers for the Monte Carlo experiments.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::RngSeed;

/// Least-squares line `y = intercept + slope·x`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(invalid("a line fit needs at least two paired points"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(invalid("fit data must be finite"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(invalid("fit abscissae are all equal"));
    }
    let slope = sxy / sxx;
    let r_squared = if syy > 0.0 { (sxy * sxy) / (sxx * syy) } else { 1.0 };
    Ok(LinearFit { slope, intercept: my - slope * mx, r_squared })
}

/// Sample mean and standard deviation (`n − 1` denominator; 0 for one point).
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

/// Standard error of the mean.
pub fn std_error(v: &[f64]) -> f64 {
    mean_std(v).1 / (v.len() as f64).sqrt()
}

/// `(k + 0.5)/(n + 1)`, a proportion that stays positive when `k = 0`.
pub fn haldane(k: usize, n: usize) -> f64 {
    (k as f64 + 0.5) / (n as f64 + 1.0)
}

/// Binomial standard error of a proportion.
pub fn binomial_se(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Empirical `q`-quantile by the nearest-rank rule on a sorted copy.
pub fn quantile(v: &[f64], q: f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let rank = ((q * s.len() as f64).ceil() as usize).clamp(1, s.len());
    s[rank - 1]
}

/// Percentile bootstrap interval of the slope of `ln mean` against `x`,
/// resampling within each group.
pub fn bootstrap_log_slope_ci(
    x: &[f64],
    groups: &[Vec<f64>],
    floor: f64,
    reps: usize,
    level: f64,
    seed: RngSeed,
) -> Result<(f64, f64)> {
    if x.len() != groups.len() || groups.iter().any(|g| g.is_empty()) {
        return Err(invalid("bootstrap needs one nonempty group per abscissa"));
    }
    let mut rng = seed.rng();
    let mut slopes = Vec::with_capacity(reps);
    for _ in 0..reps {
        let y: Vec<f64> = groups
            .iter()
            .map(|g| {
                let s: f64 = (0..g.len()).map(|_| g[rng.random_range(0..g.len())]).sum();
                (s / g.len() as f64).max(floor).ln()
            })
            .collect();
        slopes.push(linear_fit(x, &y)?.slope);
    }
    let a = (1.0 - level) / 2.0;
    Ok((quantile(&slopes, a), quantile(&slopes, 1.0 - a)))
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(|x, y| x.total_cmp(y));
    b.sort_by(|x, y| x.total_cmp(y));
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let t = a[i].min(b[j]);
        while i < a.len() && a[i] <= t {
            i += 1;
        }
        while j < b.len() && b[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

/// Asymptotic KS rejection threshold at significance `alpha`.
pub fn ks_critical(n: usize, m: usize, alpha: f64) -> f64 {
    let c = (-(alpha / 2.0).ln() / 2.0).sqrt();
    c * ((n + m) as f64 / (n as f64 * m as f64)).sqrt()
}
