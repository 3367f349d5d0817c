use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::RunRecord;
use crate::error::{Error, Result};
use crate::session::Algorithm;

/// Seeds needed on each side of a comparison.
pub const MIN_SEEDS: usize = 3;

/// Pooled sizes up to this are tested by exact enumeration.
const EXACT_LIMIT: usize = 20;

/// Across-seed statistics of one (environment, algorithm) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub env: String,
    pub algorithm: Algorithm,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    /// Runs that aborted; they count only for the interactions they finished.
    pub failures: usize,
    pub mean: Vec<f64>,
    /// Population standard deviation.
    pub std: Vec<f64>,
    pub smoothed: Vec<f64>,
    /// Per-seed mean over the last window, in `seeds` order. Failed runs are
    /// left out.
    pub last_window_means: Vec<f64>,
    pub last_window_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub last_window: usize,
    pub smoothing_window: usize,
    pub cells: Vec<CellSummary>,
}

impl Summary {
    pub fn cell(&self, env: &str, algorithm: Algorithm) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.env == env && c.algorithm == algorithm)
    }

    pub fn envs(&self) -> Vec<String> {
        let mut v: Vec<String> = self.cells.iter().map(|c| c.env.clone()).collect();
        v.dedup();
        v
    }
}

/// Trailing mean over at most `window` values ending at each index.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for (i, v) in values.iter().enumerate() {
        sum += v;
        if i >= w {
            sum -= values[i - w];
        }
        out.push(sum / (i + 1).min(w) as f64);
    }
    out
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn aggregate(records: &[RunRecord], last_window: usize, smoothing_window: usize) -> Result<Summary> {
    if records.is_empty() {
        return Err(Error::InsufficientData("no run records to aggregate".into()));
    }
    let mut cells: BTreeMap<(String, Algorithm), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        cells.entry((r.env.clone(), r.algorithm)).or_default().push(r);
    }
    let mut out = Vec::with_capacity(cells.len());
    for ((env, algorithm), mut runs) in cells {
        runs.sort_by_key(|r| r.seed);
        let hash = &runs[0].config_hash;
        if let Some(other) = runs.iter().find(|r| &r.config_hash != hash) {
            return Err(Error::Usage(format!(
                "{env}/{algorithm} mixes configs {} and {}",
                &hash[..hash.len().min(12)],
                &other.config_hash[..other.config_hash.len().min(12)]
            )));
        }
        if runs.windows(2).any(|w| w[0].seed == w[1].seed) {
            return Err(Error::Usage(format!("{env}/{algorithm} holds a seed twice")));
        }
        let len = runs.iter().map(|r| r.metrics.len()).max().unwrap_or(0);
        let full: Vec<_> = runs.iter().filter(|r| r.failure.is_none()).collect();
        let mut m = Vec::with_capacity(len);
        let mut sd = Vec::with_capacity(len);
        for i in 0..len {
            let col: Vec<f64> = runs.iter().filter_map(|r| r.metrics.get(i).copied()).collect();
            let mu = mean(&col);
            m.push(mu);
            sd.push((col.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / col.len() as f64).sqrt());
        }
        let last_window_means: Vec<f64> = full
            .iter()
            .filter(|r| !r.metrics.is_empty())
            .map(|r| mean(&r.metrics[r.metrics.len().saturating_sub(last_window)..]))
            .collect();
        out.push(CellSummary {
            smoothed: moving_average(&m, smoothing_window),
            last_window_mean: if last_window_means.is_empty() {
                f64::NAN
            } else {
                mean(&last_window_means)
            },
            env,
            algorithm,
            config_hash: hash.clone(),
            seeds: runs.iter().map(|r| r.seed).collect(),
            failures: runs.len() - full.len(),
            mean: m,
            std: sd,
            last_window_means,
        });
    }
    Ok(Summary {
        last_window,
        smoothing_window,
        cells: out,
    })
}

/// One-sided Mann-Whitney test of "`a` tends to be smaller than `b`".
/// Returns `(U_a, p)` where `U_a` counts pairs with `a_i > b_j` (ties ½).
/// Exact over all rank assignments for small samples, normal approximation
/// with tie and continuity corrections otherwise.
pub fn mann_whitney_less(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientData("rank-sum test needs two non-empty samples".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Usage("rank-sum test on non-finite values".into()));
    }
    let (na, nb) = (a.len(), b.len());
    let u: f64 = a
        .iter()
        .map(|x| {
            b.iter()
                .map(|y| match x.partial_cmp(y).expect("finite") {
                    std::cmp::Ordering::Greater => 1.0,
                    std::cmp::Ordering::Equal => 0.5,
                    std::cmp::Ordering::Less => 0.0,
                })
                .sum::<f64>()
        })
        .sum();

    let mut pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    pooled.sort_by(|x, y| x.partial_cmp(y).expect("finite"));
    let ranks = midranks(&pooled);
    let n = na + nb;

    let p = if n <= EXACT_LIMIT {
        // U_a = R_a − na(na+1)/2, so compare rank sums directly.
        let observed = u + (na * (na + 1)) as f64 / 2.0;
        let (mut hits, mut total) = (0u64, 0u64);
        enumerate_sums(&ranks, na, 0, 0.0, &mut |s| {
            total += 1;
            if s <= observed + 1e-9 {
                hits += 1;
            }
        });
        hits as f64 / total as f64
    } else {
        let mu = (na * nb) as f64 / 2.0;
        let mut tie_term = 0.0;
        let mut i = 0;
        while i < n {
            let j = (i..n).find(|&j| pooled[j] != pooled[i]).unwrap_or(n);
            let t = (j - i) as f64;
            tie_term += t * t * t - t;
            i = j;
        }
        let nf = n as f64;
        let var = (na * nb) as f64 / 12.0 * ((nf + 1.0) - tie_term / (nf * (nf - 1.0)));
        if var <= 0.0 {
            1.0
        } else {
            let z = (u + 0.5 - mu) / var.sqrt();
            Normal::standard().cdf(z).min(1.0)
        }
    };
    Ok((u, p))
}

fn midranks(sorted: &[f64]) -> Vec<f64> {
    let n = sorted.len();
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let j = (i..n).find(|&j| sorted[j] != sorted[i]).unwrap_or(n);
        let r = (i + j + 1) as f64 / 2.0;
        ranks[i..j].iter_mut().for_each(|x| *x = r);
        i = j;
    }
    ranks
}

fn enumerate_sums(ranks: &[f64], k: usize, start: usize, acc: f64, f: &mut dyn FnMut(f64)) {
    if k == 0 {
        f(acc);
        return;
    }
    for i in start..=ranks.len() - k {
        enumerate_sums(ranks, k - 1, i + 1, acc + ranks[i], f);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub env: String,
    pub a: Algorithm,
    pub b: Algorithm,
    pub a_mean: f64,
    pub b_mean: f64,
    pub u: f64,
    /// One-sided: small when `a` scores lower than `b`.
    pub p: f64,
}

/// Rank-sum comparison of last-window per-seed means, one per environment
/// holding both algorithms.
pub fn compare(summary: &Summary, a: Algorithm, b: Algorithm) -> Result<Vec<Comparison>> {
    let mut out = Vec::new();
    for env in summary.envs() {
        let (Some(ca), Some(cb)) = (summary.cell(&env, a), summary.cell(&env, b)) else {
            continue;
        };
        for c in [ca, cb] {
            if c.last_window_means.len() < MIN_SEEDS {
                return Err(Error::InsufficientData(format!(
                    "insufficient seeds: {env}/{} has {} completed runs, need {MIN_SEEDS}",
                    c.algorithm,
                    c.last_window_means.len()
                )));
            }
        }
        let (u, p) = mann_whitney_less(&ca.last_window_means, &cb.last_window_means)?;
        out.push(Comparison {
            env: env.clone(),
            a,
            b,
            a_mean: ca.last_window_mean,
            b_mean: cb.last_window_mean,
            u,
            p,
        });
    }
    if out.is_empty() {
        return Err(Error::InsufficientData(format!("no environment has both {a} and {b}")));
    }
    Ok(out)
}
