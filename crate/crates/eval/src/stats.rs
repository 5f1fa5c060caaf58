//! Shapiro-Wilk normality test and the two-sided Mann-Whitney rank-sum test.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{EvalError, Result};
use crate::report::{Metric, MetricReport, METRICS};

pub const ALPHA: f64 = 0.05;
pub const SHAPIRO_MIN: usize = 3;
pub const SHAPIRO_MAX: usize = 50;
/// Largest `n·m` evaluated by exact enumeration.
pub const EXACT_LIMIT: usize = 400;
pub const DEFAULT_K: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatResult {
    pub test: String,
    /// `W` for Shapiro-Wilk, `U` of the first sample for Mann-Whitney.
    pub statistic: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub reject_null: bool,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    /// `exact` or `normal` for Mann-Whitney.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
}

impl StatResult {
    fn new(test: &str, statistic: f64, p: f64, n: usize, m: Option<usize>, method: Option<&str>) -> Self {
        let p = p.clamp(0.0, 1.0);
        StatResult {
            test: test.into(),
            statistic,
            p_value: p,
            alpha: ALPHA,
            reject_null: p < ALPHA,
            n,
            m,
            method: method.map(str::to_string),
        }
    }
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
}

/// Shapiro-Wilk `W` with Royston's coefficient approximation and normalizing
/// transformation, for `3 ≤ n ≤ 50`.
pub fn shapiro_wilk(x: &[f64]) -> Result<StatResult> {
    let n = x.len();
    if !(SHAPIRO_MIN..=SHAPIRO_MAX).contains(&n) {
        return Err(EvalError::Stats(format!(
            "shapiro-wilk needs {SHAPIRO_MIN}..={SHAPIRO_MAX} values, got {n}"
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(EvalError::Stats("shapiro-wilk input contains non-finite values".into()));
    }
    let mut xs = x.to_vec();
    xs.sort_by(f64::total_cmp);
    let range = xs[n - 1] - xs[0];
    if range <= 0.0 {
        return Err(EvalError::Stats("shapiro-wilk input has zero variance".into()));
    }

    const C1: [f64; 6] = [0.0, 0.221157, -0.147981, -2.07119, 4.434685, -2.706056];
    const C2: [f64; 6] = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633];
    const C3: [f64; 4] = [0.544, -0.39978, 0.025054, -6.714e-4];
    const C4: [f64; 4] = [1.3822, -0.77857, 0.062767, -0.0020322];
    const C5: [f64; 4] = [-1.5861, -0.31082, -0.083751, 0.0038915];
    const C6: [f64; 3] = [-0.4803, -0.082676, 0.0030302];
    const G: [f64; 2] = [-2.273, 0.459];

    let half = n / 2;
    let an = n as f64;
    // Magnitudes of the coefficients for the lower half of the order
    // statistics; the upper half mirrors them with the opposite sign.
    let mut a = vec![0.0f64; half];
    if n == 3 {
        a[0] = std::f64::consts::FRAC_1_SQRT_2;
    } else {
        let norm = std_normal();
        let m: Vec<f64> = (1..=half)
            .map(|i| -norm.inverse_cdf((i as f64 - 0.375) / (an + 0.25)))
            .collect();
        let summ2 = 2.0 * m.iter().map(|v| v * v).sum::<f64>();
        let ssumm2 = summ2.sqrt();
        let rsn = 1.0 / an.sqrt();
        let a1 = m[0] / ssumm2 + poly(&C1, rsn);
        let (first, fac) = if n > 5 {
            let a2 = m[1] / ssumm2 + poly(&C2, rsn);
            let fac = ((summ2 - 2.0 * m[0] * m[0] - 2.0 * m[1] * m[1]) / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2)).sqrt();
            a[1] = a2;
            (2, fac)
        } else {
            let fac = ((summ2 - 2.0 * m[0] * m[0]) / (1.0 - 2.0 * a1 * a1)).sqrt();
            (1, fac)
        };
        a[0] = a1;
        for i in first..half {
            a[i] = m[i] / fac;
        }
    }

    // W as the squared correlation between the scaled order statistics and
    // the antisymmetric coefficient vector.
    let coef = |i: usize| -> f64 {
        if i < half {
            -a[i]
        } else if n - 1 - i < half {
            a[n - 1 - i]
        } else {
            0.0
        }
    };
    let sa = (0..n).map(coef).sum::<f64>() / an;
    let sx = xs.iter().map(|v| v / range).sum::<f64>() / an;
    let (mut ssa, mut ssx, mut sax) = (0.0, 0.0, 0.0);
    for (i, v) in xs.iter().enumerate() {
        let asa = coef(i) - sa;
        let xsx = v / range - sx;
        ssa += asa * asa;
        ssx += xsx * xsx;
        sax += asa * xsx;
    }
    let ssassx = (ssa * ssx).sqrt();
    let w1 = (ssassx - sax) * (ssassx + sax) / (ssa * ssx);
    let w = 1.0 - w1;

    let p = if n == 3 {
        let pi6 = 6.0 / std::f64::consts::PI;
        let stqr = std::f64::consts::FRAC_PI_3;
        (pi6 * (w.sqrt().asin() - stqr)).max(0.0)
    } else {
        let y = w1.ln();
        let xx = an.ln();
        let (y, mean, sd) = if n <= 11 {
            let gamma = poly(&G, an);
            if y >= gamma {
                return Ok(StatResult::new("shapiro_wilk", w, 1e-99, n, None, None));
            }
            (-(gamma - y).ln(), poly(&C3, an), poly(&C4, an).exp())
        } else {
            (y, poly(&C5, xx), poly(&C6, xx).exp())
        };
        std_normal().sf((y - mean) / sd)
    };
    Ok(StatResult::new("shapiro_wilk", w, p, n, None, None))
}

/// Midranks (1-based) of `values`, and the tie-group sizes.
fn midranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        if j > i {
            ties.push(j - i + 1);
        }
        i = j + 1;
    }
    (ranks, ties)
}

/// Number of ways each `U` in `0..=n·m` arises among all `C(n+m, n)`
/// rank assignments.
pub fn u_distribution(n: usize, m: usize) -> Vec<u128> {
    // f[j][u]: counts for samples of size (current n, j).
    let mut f: Vec<Vec<u128>> = (0..=m).map(|_| vec![1]).collect();
    for i in 1..=n {
        let mut g: Vec<Vec<u128>> = Vec::with_capacity(m + 1);
        g.push(vec![1]);
        for j in 1..=m {
            // Largest element belongs to x: U gains j. Otherwise it belongs to y.
            let mut row = vec![0u128; i * j + 1];
            for (u, &c) in f[j].iter().enumerate() {
                row[u + j] += c;
            }
            for (u, &c) in g[j - 1].iter().enumerate() {
                row[u] += c;
            }
            g.push(row);
        }
        f = g;
    }
    f.swap_remove(m)
}

/// How [`mann_whitney_with`] computes the p-value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Exact when `n·m ≤ 400` and there are no ties, normal otherwise.
    Auto,
    /// Full enumeration of the `U` distribution; fails on ties.
    Exact,
    /// Normal approximation with tie and continuity corrections.
    Normal,
}

/// Two-sided Mann-Whitney test of `x` against `y`. The statistic is `U` of
/// `x`: the number of pairs with `x_i > y_j`, ties counting one half.
pub fn mann_whitney(x: &[f64], y: &[f64]) -> Result<StatResult> {
    mann_whitney_with(x, y, Method::Auto)
}

pub fn mann_whitney_with(x: &[f64], y: &[f64], method: Method) -> Result<StatResult> {
    let (n, m) = (x.len(), y.len());
    if n == 0 || m == 0 {
        return Err(EvalError::Stats("mann-whitney needs two non-empty samples".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(EvalError::Stats("mann-whitney input contains non-finite values".into()));
    }
    let all: Vec<f64> = x.iter().chain(y).copied().collect();
    let (ranks, ties) = midranks(&all);
    let r1: f64 = ranks[..n].iter().sum();
    let u = r1 - (n * (n + 1)) as f64 / 2.0;
    let nm = (n * m) as f64;

    let exact = match method {
        Method::Auto => n * m <= EXACT_LIMIT && ties.is_empty(),
        Method::Exact if !ties.is_empty() => {
            return Err(EvalError::Stats("exact mann-whitney is undefined with ties".into()))
        }
        Method::Exact => true,
        Method::Normal => false,
    };
    if exact {
        let counts = u_distribution(n, m);
        let total: u128 = counts.iter().sum();
        let ui = u as usize;
        let lower: u128 = counts[..=ui].iter().sum();
        let upper: u128 = counts[ui..].iter().sum();
        let p = (2.0 * lower.min(upper) as f64 / total as f64).min(1.0);
        return Ok(StatResult::new("mann_whitney", u, p, n, Some(m), Some("exact")));
    }

    let big_n = (n + m) as f64;
    let tie_term: f64 = ties.iter().map(|&t| (t as f64).powi(3) - t as f64).sum();
    let var = nm / 12.0 * ((big_n + 1.0) - tie_term / (big_n * (big_n - 1.0)));
    let p = if var <= 0.0 {
        1.0
    } else {
        let z = ((u - nm / 2.0).abs() - 0.5).max(0.0) / var.sqrt();
        (2.0 * std_normal().sf(z)).min(1.0)
    };
    Ok(StatResult::new("mann_whitney", u, p, n, Some(m), Some("normal")))
}

/// Outcome of one test in a comparison; tests that cannot run (for example
/// Shapiro-Wilk on a constant sample) are recorded with the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TestOutcome {
    Ran(StatResult),
    Skipped { skipped: String },
}

impl TestOutcome {
    fn from(r: Result<StatResult>) -> Self {
        match r {
            Ok(s) => TestOutcome::Ran(s),
            Err(e) => TestOutcome::Skipped {
                skipped: e.to_string(),
            },
        }
    }

    pub fn result(&self) -> Option<&StatResult> {
        match self {
            TestOutcome::Ran(s) => Some(s),
            TestOutcome::Skipped { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricComparison {
    #[serde(rename = "shapiro_A")]
    pub shapiro_a: TestOutcome,
    #[serde(rename = "shapiro_B")]
    pub shapiro_b: TestOutcome,
    pub mannwhitney: StatResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub model_a: String,
    pub model_b: String,
    pub k: usize,
    pub metrics: BTreeMap<Metric, MetricComparison>,
}

impl Comparison {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Positions used from a report of `len` samples: all of them when
/// `len ≤ k`, else `k` drawn without replacement with `seed`, in ascending
/// order.
pub fn subsample_indices(len: usize, k: usize, seed: u64) -> Vec<usize> {
    if len <= k {
        return (0..len).collect();
    }
    let mut idx = sample(&mut sigseg_synthdoc::seed::rng(seed), len, k).into_vec();
    idx.sort_unstable();
    idx
}

/// Runs Shapiro-Wilk on each side and Mann-Whitney between the sides for
/// every metric.
pub fn compare_models(a: &MetricReport, b: &MetricReport, k: usize, seed: u64) -> Result<Comparison> {
    if k == 0 {
        return Err(EvalError::Stats("k must be at least 1".into()));
    }
    let ia = subsample_indices(a.samples.len(), k, seed);
    let ib = subsample_indices(b.samples.len(), k, seed);
    let mut metrics = BTreeMap::new();
    for metric in METRICS {
        let pick = |r: &MetricReport, idx: &[usize]| -> Vec<f64> {
            idx.iter().map(|&i| r.samples[i].get(metric)).collect()
        };
        let (xa, xb) = (pick(a, &ia), pick(b, &ib));
        metrics.insert(
            metric,
            MetricComparison {
                shapiro_a: TestOutcome::from(shapiro_wilk(&xa)),
                shapiro_b: TestOutcome::from(shapiro_wilk(&xb)),
                mannwhitney: mann_whitney(&xa, &xb)?,
            },
        );
    }
    Ok(Comparison {
        model_a: a.model.clone(),
        model_b: b.model.clone(),
        k,
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn u_distribution_small_cases() {
        // n = m = 2: U in 0..=4 with counts 1,1,2,1,1.
        assert_eq!(u_distribution(2, 2), vec![1, 1, 2, 1, 1]);
        assert_eq!(u_distribution(1, 3), vec![1, 1, 1, 1]);
        let total: u128 = u_distribution(20, 20).iter().sum();
        assert_eq!(total, 137_846_528_820);
    }

    #[test]
    fn midranks_with_ties() {
        let (r, t) = midranks(&[3.0, 1.0, 3.0, 2.0]);
        assert_eq!(r, vec![3.5, 1.0, 3.5, 2.0]);
        assert_eq!(t, vec![2]);
    }

    #[test]
    fn shapiro_rejects_bad_input() {
        assert!(shapiro_wilk(&[1.0, 2.0]).is_err());
        assert!(shapiro_wilk(&[2.0; 10]).is_err());
        assert!(shapiro_wilk(&vec![0.5; 51]).is_err());
    }
}
