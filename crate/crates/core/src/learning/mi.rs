//! Plug-in estimate of the mutual information between human actions and the
//! hidden information, pooled over states. Reported only, never optimized.

use std::collections::BTreeMap;

use crate::domain::InteractionTuple;
use crate::error::{Error, Result};

/// Fewest tuples the estimate accepts.
pub const MIN_SAMPLES: usize = 100;

/// Joint bin index of each row, with `bins` equal-width bins per component
/// spanning the observed range.
fn bin_rows(rows: &[&[f64]], bins: usize) -> Vec<usize> {
    let width = rows.first().map_or(0, |r| r.len());
    let mut lo = vec![f64::INFINITY; width];
    let mut hi = vec![f64::NEG_INFINITY; width];
    for r in rows {
        for (j, v) in r.iter().enumerate() {
            lo[j] = lo[j].min(*v);
            hi[j] = hi[j].max(*v);
        }
    }
    rows.iter()
        .map(|r| {
            r.iter().enumerate().fold(0, |acc, (j, v)| {
                let span = hi[j] - lo[j];
                let b = if span > 0.0 {
                    (((v - lo[j]) / span * bins as f64) as usize).min(bins - 1)
                } else {
                    0
                };
                acc * bins + b
            })
        })
        .collect()
}

/// Entropy in bits of the empirical distribution of `labels`.
pub fn entropy(labels: &[usize]) -> f64 {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(*l).or_default() += 1;
    }
    let n = labels.len() as f64;
    -counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            p * p.log2()
        })
        .sum::<f64>()
}

/// `Î(a; θ)` in bits from paired labels.
pub fn plug_in_mi(a: &[usize], theta: &[usize]) -> f64 {
    let joint: Vec<usize> = a
        .iter()
        .zip(theta)
        .map(|(x, y)| x.wrapping_mul(1 << 20) ^ y)
        .collect();
    (entropy(a) + entropy(theta) - entropy(&joint)).max(0.0)
}

/// Discretizes actions and `θ` into `bins` per component and returns the
/// plug-in estimate in bits.
pub fn mi_diagnostic<'a, I>(tuples: I, bins: usize) -> Result<f64>
where
    I: IntoIterator<Item = &'a InteractionTuple>,
{
    if bins == 0 {
        return Err(Error::Usage("bins must be at least 1".into()));
    }
    let tuples: Vec<_> = tuples.into_iter().collect();
    if tuples.len() < MIN_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "mutual information needs at least {MIN_SAMPLES} tuples, got {}",
            tuples.len()
        )));
    }
    let a: Vec<&[f64]> = tuples.iter().map(|t| t.a.as_slice()).collect();
    let th: Vec<&[f64]> = tuples.iter().map(|t| t.theta.as_slice()).collect();
    Ok(plug_in_mi(&bin_rows(&a, bins), &bin_rows(&th, bins)))
}
