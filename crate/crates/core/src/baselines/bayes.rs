//! Bayesian optimization over the entries of a linear interface.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gp::Gp;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BayesConfig {
    pub length_scale: f64,
    pub noise: f64,
    /// Random starts of the acquisition search.
    pub restarts: usize,
    /// Hill-climbing moves per start.
    pub local_steps: usize,
    /// Proposals drawn uniformly before the surrogate is consulted.
    pub initial_random: usize,
    /// The surrogate is fit on at most this many most recent observations.
    pub max_observations: usize,
}

impl Default for BayesConfig {
    fn default() -> Self {
        BayesConfig {
            length_scale: 0.5,
            noise: 1e-2,
            restarts: 16,
            local_steps: 30,
            initial_random: 5,
            max_observations: 200,
        }
    }
}

/// Observed `(point, reward)` pairs in the box `[-1, 1]^dim` and the
/// surrogate fit on them.
#[derive(Debug, Clone)]
pub struct BayesOpt {
    dim: usize,
    config: BayesConfig,
    points: Vec<Vec<f64>>,
    rewards: Vec<f64>,
    best: Option<usize>,
    surrogate: Option<Gp>,
    fallbacks: usize,
}

impl BayesOpt {
    pub fn new(dim: usize, config: BayesConfig) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("bayes search space needs at least one entry".into()));
        }
        if !(config.length_scale > 0.0) || !(config.noise >= 0.0) {
            return Err(Error::Config("bayes length_scale must be positive and noise non-negative".into()));
        }
        Ok(BayesOpt {
            dim,
            config,
            points: Vec::new(),
            rewards: Vec::new(),
            best: None,
            surrogate: None,
            fallbacks: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Best observed `(point, reward)`.
    pub fn best(&self) -> Option<(&[f64], f64)> {
        self.best.map(|i| (self.points[i].as_slice(), self.rewards[i]))
    }

    /// Proposals that fell back to random because the surrogate failed.
    pub fn fallbacks(&self) -> usize {
        self.fallbacks
    }

    pub fn surrogate(&self) -> Option<&Gp> {
        self.surrogate.as_ref()
    }

    fn random_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.dim).map(|_| rng.random_range(-1.0..=1.0)).collect()
    }

    pub fn observe(&mut self, point: &[f64], reward: f64) -> Result<()> {
        if point.len() != self.dim {
            return Err(Error::shape("bayes observation", self.dim, point.len()));
        }
        if !reward.is_finite() {
            log::warn!("rejected non-finite bayes reward {reward}");
            return Err(Error::Usage(format!("bayes reward must be finite, got {reward}")));
        }
        if point.iter().any(|v| !(v.abs() <= 1.0)) {
            return Err(Error::Usage("bayes observation lies outside [-1, 1]".into()));
        }
        self.points.push(point.to_vec());
        self.rewards.push(reward);
        if self.best.is_none_or(|b| reward > self.rewards[b]) {
            self.best = Some(self.points.len() - 1);
        }
        let from = self.points.len().saturating_sub(self.config.max_observations.max(1));
        self.surrogate = match Gp::fit(
            &self.points[from..],
            &self.rewards[from..],
            self.config.length_scale,
            self.config.noise,
        ) {
            Ok(gp) => Some(gp),
            Err(e) => {
                log::warn!("surrogate refit failed: {e}");
                None
            }
        };
        Ok(())
    }

    /// Next point to evaluate: random during the cold start, otherwise the
    /// best expected improvement found by multi-start hill climbing.
    pub fn propose<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<f64> {
        if self.points.len() < self.config.initial_random.max(1) {
            return self.random_point(rng);
        }
        let (Some(gp), Some((best_point, best))) = (self.surrogate.as_ref(), self.best()) else {
            self.fallbacks += 1;
            log::warn!("no usable surrogate, proposing at random");
            return self.random_point(rng);
        };
        let mut starts: Vec<Vec<f64>> = (0..self.config.restarts).map(|_| self.random_point(rng)).collect();
        starts.push(best_point.to_vec());
        let mut winner = (f64::NEG_INFINITY, starts[0].clone());
        for start in starts {
            let mut x = start;
            let mut ei = gp.expected_improvement(&x, best);
            let mut step = 0.25;
            for i in 0..self.config.local_steps {
                let cand: Vec<f64> = x
                    .iter()
                    .map(|v| (v + rng.random_range(-step..=step)).clamp(-1.0, 1.0))
                    .collect();
                let c = gp.expected_improvement(&cand, best);
                if c > ei {
                    x = cand;
                    ei = c;
                } else if i % 10 == 9 {
                    step *= 0.5;
                }
            }
            if ei > winner.0 {
                winner = (ei, x);
            }
        }
        winner.1
    }

    /// CSV with columns `index, a0, …, reward`.
    pub fn write_log<W: Write>(&self, mut out: W) -> Result<()> {
        let header: Vec<String> = (0..self.dim).map(|i| format!("a{i}")).collect();
        writeln!(out, "index,{},reward", header.join(",")).map_err(|e| Error::io("bayes log", e))?;
        for (i, (p, r)) in self.points.iter().zip(&self.rewards).enumerate() {
            let cols: Vec<String> = p.iter().map(|v| format!("{v}")).collect();
            writeln!(out, "{i},{},{r}", cols.join(",")).map_err(|e| Error::io("bayes log", e))?;
        }
        Ok(())
    }
}
