//! User-friendly priors over interface mappings and prior-only pretraining.

use std::fmt;
use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::losses;
use super::nets::InterfacePolicy;
use crate::autodiff::{Optimizer, Tape};
use crate::env::Environment;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorKind {
    None,
    Proportionality,
    Convexity,
    /// Designer-supplied `P0`, see [`PriorSampler`].
    Generic,
}

impl fmt::Display for PriorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PriorKind::None => "none",
            PriorKind::Proportionality => "proportionality",
            PriorKind::Convexity => "convexity",
            PriorKind::Generic => "generic",
        };
        f.write_str(s)
    }
}

/// Draws `x̂ ~ P0(· | s, θ)` from raw state and hidden information.
pub trait PriorSampler: Send + Sync {
    fn sample(&self, s: &[f64], theta: &[f64], rng: &mut dyn RngCore) -> Vec<f64>;
}

impl<F> PriorSampler for F
where
    F: Fn(&[f64], &[f64], &mut dyn RngCore) -> Vec<f64> + Send + Sync,
{
    fn sample(&self, s: &[f64], theta: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        self(s, theta, rng)
    }
}

/// Shared handle to a sampler.
pub type SharedPrior = Arc<dyn PriorSampler>;

/// `x̂ = θ / radius`, truncated or zero-padded to the signal width: signals
/// that read the hidden information off directly.
pub fn linear_prior(theta_radius: f64, signal_dim: usize) -> SharedPrior {
    Arc::new(move |_s: &[f64], theta: &[f64], _rng: &mut dyn RngCore| {
        (0..signal_dim)
            .map(|i| theta.get(i).map_or(0.0, |v| (v / theta_radius).clamp(-1.0, 1.0)))
            .collect()
    })
}

/// Samples the prior for every row of a batch.
pub fn sample_targets(
    sampler: &dyn PriorSampler,
    states: &Array2<f64>,
    thetas: &Array2<f64>,
    signal_dim: usize,
    rng: &mut dyn RngCore,
) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((states.nrows(), signal_dim));
    for i in 0..states.nrows() {
        let s = states.row(i).to_vec();
        let th = thetas.row(i).to_vec();
        let x = sampler.sample(&s, &th, rng);
        if x.len() != signal_dim {
            return Err(Error::shape("prior sample", signal_dim, x.len()));
        }
        out.row_mut(i).assign(&ndarray::Array1::from(x));
    }
    Ok(out)
}

/// Settings for prior-only pretraining.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    /// Stop once the per-sample prior loss falls below this.
    pub tolerance: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            steps: 1_000,
            batch: 64,
            lr: 1e-3,
            tolerance: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainReport {
    pub steps: usize,
    pub final_loss: f64,
    pub converged: bool,
}

/// Synthetic state for prior training. Highway lanes are drawn independently
/// so every lane configuration is covered.
pub(crate) fn synthetic_state<R: Rng + ?Sized>(env: &Environment, rng: &mut R) -> Vec<f64> {
    match env {
        Environment::Highway(_) => (0..3).map(|_| f64::from(rng.random_range(0..2u8))).collect(),
        Environment::Treasure(_) => env.sample_state(rng).0,
    }
}

pub(crate) fn synthetic_batch<R: Rng + ?Sized>(
    env: &Environment,
    rows: usize,
    rng: &mut R,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let dims = env.dims();
    let mut s = Array2::zeros((rows, dims.state));
    let mut t1 = Array2::zeros((rows, dims.theta));
    let mut t2 = Array2::zeros((rows, dims.theta));
    for i in 0..rows {
        s.row_mut(i).assign(&ndarray::Array1::from(synthetic_state(env, rng)));
        t1.row_mut(i).assign(&ndarray::Array1::from(env.sample_theta(rng).0));
        t2.row_mut(i).assign(&ndarray::Array1::from(env.sample_theta(rng).0));
    }
    (s, t1, t2)
}

/// Trains `policy` on synthetic `(s, θ)` pairs to minimize the chosen prior
/// loss alone. A no-op for [`PriorKind::None`].
pub fn initialize_with_prior<R: Rng + ?Sized>(
    policy: &mut InterfacePolicy,
    env: &Environment,
    kind: PriorKind,
    gamma: f64,
    sampler: Option<&dyn PriorSampler>,
    config: &PretrainConfig,
    rng: &mut R,
) -> Result<PretrainReport> {
    if kind == PriorKind::None || config.steps == 0 {
        return Ok(PretrainReport {
            steps: 0,
            final_loss: 0.0,
            converged: kind == PriorKind::None,
        });
    }
    if kind == PriorKind::Generic && sampler.is_none() {
        return Err(Error::Config("generic prior requires a sampler".into()));
    }
    let scales = policy.scales();
    let mut opt = Optimizer::adam(config.lr)?;
    let mut last = f64::INFINITY;
    for step in 0..config.steps {
        let (s, t1, t2) = synthetic_batch(env, config.batch, rng);
        let mut tape = Tape::new();
        let bound = policy.net.bind(&mut tape, true);
        let loss = match kind {
            PriorKind::Convexity => losses::prior_convexity(&mut tape, &bound, &scales, &s, &t1)?,
            PriorKind::Proportionality => {
                losses::prior_proportionality(&mut tape, &bound, &scales, &s, &t1, &t2, gamma)?.0
            }
            PriorKind::Generic => {
                let mut dyn_rng = ChaCha8Rng::seed_from_u64(rng.next_u64());
                let targets = sample_targets(
                    sampler.expect("checked above"),
                    &s,
                    &t1,
                    env.dims().signal,
                    &mut dyn_rng,
                )?;
                losses::prior_generic(&mut tape, &bound, &scales, &s, &t1, &targets)?
            }
            PriorKind::None => unreachable!(),
        };
        last = tape.scalar(loss) / config.batch as f64;
        if last < config.tolerance {
            return Ok(PretrainReport {
                steps: step,
                final_loss: last,
                converged: true,
            });
        }
        tape.backward(loss)?;
        policy.net.accumulate_grads(&tape, &bound);
        opt.step(&mut policy.net)?;
    }
    log::warn!(
        "{kind} prior pretraining stopped after {} steps at loss {last:.3e}",
        config.steps
    );
    Ok(PretrainReport {
        steps: config.steps,
        final_loss: last,
        converged: false,
    })
}

/// Mean `‖R(s, θ) + R(s, −θ)‖` over `samples` fresh synthetic pairs.
pub fn antisymmetry_residual<R: Rng + ?Sized>(
    policy: &InterfacePolicy,
    env: &Environment,
    samples: usize,
    rng: &mut R,
) -> Result<f64> {
    let (s, t, _) = synthetic_batch(env, samples, rng);
    let x = policy.signals(&s, &t)?;
    let xn = policy.signals(&s, &t.mapv(|v| -v))?;
    let sum = x + xn;
    Ok(sum
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
        .sum::<f64>()
        / samples as f64)
}

/// Mean ratio `‖x1 − x2‖ / ‖θ1 − θ2‖` (feature units) over nearby pairs
/// `‖θ1 − θ2‖ ≤ radius·step`; a local Lipschitz estimate of the signal map.
pub fn local_signal_slope<R: Rng + ?Sized>(
    policy: &InterfacePolicy,
    env: &Environment,
    samples: usize,
    step: f64,
    rng: &mut R,
) -> Result<f64> {
    let dims = env.dims();
    let radius = env.theta_radius();
    let mut total = 0.0;
    for _ in 0..samples {
        let s = synthetic_state(env, rng);
        let t1: Vec<f64> = (0..dims.theta).map(|_| rng.random_range(-radius..radius)).collect();
        let t2: Vec<f64> = t1
            .iter()
            .map(|v| v + rng.random_range(-step..step) * radius)
            .collect();
        let x1 = policy.net.predict(&policy.features(&s, &t1))?;
        let x2 = policy.net.predict(&policy.features(&s, &t2))?;
        let dx: f64 = x1.iter().zip(&x2).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let dt: f64 = t1
            .iter()
            .zip(&t2)
            .map(|(a, b)| ((a - b) / radius).powi(2))
            .sum::<f64>()
            .sqrt()
            .max(1e-12);
        total += dx / dt;
    }
    Ok(total / samples as f64)
}
