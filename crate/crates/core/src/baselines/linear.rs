use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Dims, HiddenInfo, Signal, SignalMap, State};
use crate::env::Environment;
use crate::error::{Error, Result};

/// `x = clamp(A · [s̃, θ̃], -1, 1)` on feature-scaled state and `θ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearInterface {
    pub a: Array2<f64>,
    dims: Dims,
    state_scale: f64,
    theta_scale: f64,
}

impl LinearInterface {
    pub fn new(env: &Environment, a: Array2<f64>) -> Result<Self> {
        let dims = env.dims();
        let want = (dims.signal, dims.state + dims.theta);
        if a.dim() != want {
            return Err(Error::shape("linear interface matrix", format!("{want:?}"), format!("{:?}", a.dim())));
        }
        Ok(LinearInterface {
            a,
            dims,
            state_scale: env.state_scale(),
            theta_scale: env.theta_radius(),
        })
    }

    /// Number of free entries in `A`.
    pub fn num_entries(env: &Environment) -> usize {
        let d = env.dims();
        d.signal * (d.state + d.theta)
    }

    pub fn from_flat(env: &Environment, flat: &[f64]) -> Result<Self> {
        let d = env.dims();
        let a = Array2::from_shape_vec((d.signal, d.state + d.theta), flat.to_vec())
            .map_err(|_| Error::shape("linear interface entries", Self::num_entries(env), flat.len()))?;
        Self::new(env, a)
    }

    /// Entries drawn uniformly from `[-1, 1]`.
    pub fn random<R: Rng + ?Sized>(env: &Environment, rng: &mut R) -> Result<Self> {
        let flat: Vec<f64> = (0..Self::num_entries(env))
            .map(|_| rng.random_range(-1.0..=1.0))
            .collect();
        Self::from_flat(env, &flat)
    }

    pub fn flat(&self) -> Vec<f64> {
        self.a.iter().copied().collect()
    }
}

impl SignalMap for LinearInterface {
    fn signal(&self, s: &State, theta: &HiddenInfo) -> Result<Signal> {
        if s.dim() != self.dims.state || theta.dim() != self.dims.theta {
            return Err(Error::Usage(format!(
                "linear interface expects state/θ widths {}/{}, got {}/{}",
                self.dims.state,
                self.dims.theta,
                s.dim(),
                theta.dim()
            )));
        }
        let z: Vec<f64> = s
            .0
            .iter()
            .map(|v| v / self.state_scale)
            .chain(theta.0.iter().map(|v| v / self.theta_scale))
            .collect();
        Ok(Signal(
            self.a
                .rows()
                .into_iter()
                .map(|r| r.iter().zip(&z).map(|(w, v)| w * v).sum::<f64>().clamp(-1.0, 1.0))
                .collect(),
        ))
    }
}
