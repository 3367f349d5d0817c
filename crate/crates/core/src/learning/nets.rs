//! The three learned models: interface policy, human model and decoder.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Mlp};
use crate::domain::{Action, Dims, HiddenInfo, Signal, State};
use crate::env::Environment;
use crate::error::{Error, Result};

/// Hidden-layer widths of the three networks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetSizes {
    pub policy: Vec<usize>,
    pub human_model: Vec<usize>,
    pub decoder: Vec<usize>,
}

impl Default for NetSizes {
    fn default() -> Self {
        NetSizes {
            policy: vec![64, 64],
            human_model: vec![64, 64],
            decoder: vec![128, 128],
        }
    }
}

fn widths(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut w = Vec::with_capacity(hidden.len() + 2);
    w.push(input);
    w.extend_from_slice(hidden);
    w.push(output);
    w
}

/// Network inputs and outputs in feature space: states and `θ` divided by
/// their box radius, actions by the action bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scales {
    pub state: f64,
    pub theta: f64,
    pub action: f64,
}

impl Scales {
    pub fn of(env: &Environment) -> Self {
        Scales {
            state: env.state_scale(),
            theta: env.theta_radius(),
            action: env.action_bound(),
        }
    }
}

fn check_width(what: &str, want: usize, got: usize) -> Result<()> {
    if want != got {
        return Err(Error::Usage(format!("{what} has width {got}, expected {want}")));
    }
    Ok(())
}

/// `R_ψ : (s, θ) ↦ x`, squashed into `(-1, 1)^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterfacePolicy {
    pub net: Mlp,
    dims: Dims,
    scales: Scales,
}

impl InterfacePolicy {
    pub fn new<R: Rng + ?Sized>(env: &Environment, hidden: &[usize], rng: &mut R) -> Result<Self> {
        let dims = env.dims();
        let net = Mlp::new(
            "policy",
            &widths(dims.state + dims.theta, hidden, dims.signal),
            Activation::Tanh,
            Activation::Tanh,
            rng,
        )?;
        Ok(InterfacePolicy {
            net,
            dims,
            scales: Scales::of(env),
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn scales(&self) -> Scales {
        self.scales
    }

    /// Network input row for `(s, θ)`.
    pub fn features(&self, s: &[f64], theta: &[f64]) -> Vec<f64> {
        s.iter()
            .map(|v| v / self.scales.state)
            .chain(theta.iter().map(|v| v / self.scales.theta))
            .collect()
    }

    pub fn emit_signal(&self, s: &State, theta: &HiddenInfo) -> Result<Signal> {
        check_width("state", self.dims.state, s.dim())?;
        check_width("theta", self.dims.theta, theta.dim())?;
        Ok(Signal(self.net.predict(&self.features(&s.0, &theta.0))?))
    }

    /// Batched signals for raw state and `θ` rows.
    pub fn signals(&self, states: &Array2<f64>, thetas: &Array2<f64>) -> Result<Array2<f64>> {
        let input = ndarray::concatenate(
            ndarray::Axis(1),
            &[(states / self.scales.state).view(), (thetas / self.scales.theta).view()],
        )
        .map_err(|e| Error::Usage(e.to_string()))?;
        self.net.forward_batch(&input)
    }
}

impl crate::domain::SignalMap for InterfacePolicy {
    fn signal(&self, s: &State, theta: &HiddenInfo) -> Result<Signal> {
        self.emit_signal(s, theta)
    }
}

/// `H_φ : (s, x) ↦ a`, bounded to the action box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanModel {
    pub net: Mlp,
    dims: Dims,
    scales: Scales,
}

impl HumanModel {
    pub fn new<R: Rng + ?Sized>(env: &Environment, hidden: &[usize], rng: &mut R) -> Result<Self> {
        let dims = env.dims();
        let net = Mlp::new(
            "human_model",
            &widths(dims.state + dims.signal, hidden, dims.action),
            Activation::Tanh,
            Activation::Tanh,
            rng,
        )?
        .with_output_scale(env.action_bound());
        Ok(HumanModel {
            net,
            dims,
            scales: Scales::of(env),
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn predict(&self, s: &State, x: &Signal) -> Result<Action> {
        check_width("state", self.dims.state, s.dim())?;
        check_width("signal", self.dims.signal, x.dim())?;
        let input: Vec<f64> = s
            .0
            .iter()
            .map(|v| v / self.scales.state)
            .chain(x.0.iter().copied())
            .collect();
        Ok(Action(self.net.predict(&input)?))
    }
}

/// `Δ_σ : τ ↦ θ̂`, reading `k + 1` flattened state-action pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decoder {
    pub net: Mlp,
    dims: Dims,
    k: usize,
    scales: Scales,
}

impl Decoder {
    pub fn new<R: Rng + ?Sized>(
        env: &Environment,
        k: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("rollout length k must be at least 1".into()));
        }
        let dims = env.dims();
        let net = Mlp::new(
            "decoder",
            &widths((k + 1) * (dims.state + dims.action), hidden, dims.theta),
            Activation::Tanh,
            Activation::Identity,
            rng,
        )?;
        Ok(Decoder {
            net,
            dims,
            k,
            scales: Scales::of(env),
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    /// Decodes a trajectory into a raw `θ` estimate.
    pub fn decode(&self, traj: &crate::domain::Trajectory) -> Result<HiddenInfo> {
        if traj.k() != self.k {
            return Err(Error::Usage(format!(
                "decoder reads k = {} steps, trajectory has {}",
                self.k,
                traj.k()
            )));
        }
        let mut input = Vec::with_capacity(self.net.inputs());
        for (s, a) in traj.pairs() {
            input.extend(s.0.iter().map(|v| v / self.scales.state));
            input.extend(a.0.iter().map(|v| v / self.scales.action));
        }
        let out = self.net.predict(&input)?;
        Ok(HiddenInfo(out.iter().map(|v| v * self.scales.theta).collect()))
    }
}
