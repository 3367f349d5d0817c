//! Task environments: hidden-information sampling, dynamics, robot policy,
//! performance metrics and the optimal-action oracle.

mod highway;
mod treasure;

pub use highway::{HighwayEnv, HighwayPolicy};
pub use treasure::TreasureEnv;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::domain::{Action, Dims, HiddenInfo, Signal, State};
use crate::error::{Error, Result};

/// Interaction length shared by both tasks.
pub const HORIZON: usize = 10;

/// Serializable environment selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EnvKind {
    Treasure { n: usize },
    Highway,
}

impl EnvKind {
    pub fn build(self) -> Result<Environment> {
        match self {
            EnvKind::Treasure { n } => Ok(Environment::Treasure(TreasureEnv::new(n)?)),
            EnvKind::Highway => Ok(Environment::Highway(HighwayEnv::new())),
        }
    }

    /// Short label used in file names, e.g. `treasure3` or `highway`.
    pub fn label(self) -> String {
        match self {
            EnvKind::Treasure { n } => format!("treasure{n}"),
            EnvKind::Highway => "highway".into(),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if s == "highway" {
            return Ok(EnvKind::Highway);
        }
        if let Some(rest) = s.strip_prefix("treasure") {
            let n = if rest.is_empty() {
                2
            } else {
                rest.trim_start_matches(['-', ':'])
                    .parse()
                    .map_err(|_| Error::Config(format!("bad treasure dimension in `{s}`")))?
            };
            return Ok(EnvKind::Treasure { n });
        }
        Err(Error::Config(format!("unknown environment `{s}`")))
    }
}

/// A finished (or in-progress) interaction: `states[t]` is `s^t`, `actions[t]`
/// and `signals[t]` are `a^t` and `x^t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub theta: HiddenInfo,
    pub states: Vec<State>,
    pub actions: Vec<Action>,
    pub signals: Vec<Signal>,
}

impl Episode {
    pub fn new(s0: State, theta: HiddenInfo) -> Self {
        Episode {
            theta,
            states: vec![s0],
            actions: Vec::new(),
            signals: Vec::new(),
        }
    }

    pub fn steps(&self) -> usize {
        self.actions.len()
    }

    pub fn current_state(&self) -> &State {
        self.states.last().expect("episode always holds s^0")
    }
}

/// Result of applying the dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub next: State,
    /// The action was outside the action bounds and got clamped.
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Environment {
    Treasure(TreasureEnv),
    Highway(HighwayEnv),
}

impl Environment {
    pub fn kind(&self) -> EnvKind {
        match self {
            Environment::Treasure(e) => EnvKind::Treasure { n: e.n() },
            Environment::Highway(_) => EnvKind::Highway,
        }
    }

    pub fn dims(&self) -> Dims {
        match self {
            Environment::Treasure(e) => e.dims(),
            Environment::Highway(e) => e.dims(),
        }
    }

    pub fn horizon(&self) -> usize {
        HORIZON
    }

    /// Largest admissible `|a_i|`.
    pub fn action_bound(&self) -> f64 {
        match self {
            Environment::Treasure(_) => treasure::ACTION_BOUND,
            Environment::Highway(_) => 1.0,
        }
    }

    /// Half-width of the hidden-information box.
    pub fn theta_radius(&self) -> f64 {
        match self {
            Environment::Treasure(_) => treasure::BOUND,
            Environment::Highway(_) => 1.0,
        }
    }

    pub fn sample_theta<R: Rng + ?Sized>(&self, rng: &mut R) -> HiddenInfo {
        match self {
            Environment::Treasure(e) => e.sample_theta(rng),
            Environment::Highway(e) => e.sample_theta(rng),
        }
    }

    /// State drawn from the reset distribution, without a `θ`.
    pub fn sample_state<R: Rng + ?Sized>(&self, rng: &mut R) -> State {
        match self {
            Environment::Treasure(e) => e.sample_state(rng),
            Environment::Highway(e) => e.sample_state(rng),
        }
    }

    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> (State, HiddenInfo) {
        let s = self.sample_state(rng);
        let theta = self.sample_theta(rng);
        (s, theta)
    }

    /// Robot action `u`: the next robot lane on Highway, `0` on Treasure.
    pub fn robot_action(&self, theta: &HiddenInfo, s: &State) -> Result<f64> {
        match self {
            Environment::Treasure(_) => Ok(0.0),
            Environment::Highway(e) => e.robot_action(theta, s),
        }
    }

    pub fn transition(&self, s: &State, a: &Action, u: f64) -> Result<Transition> {
        match self {
            Environment::Treasure(e) => e.transition(s, a),
            Environment::Highway(e) => e.transition(s, a, u),
        }
    }

    /// Robot policy followed by the dynamics.
    pub fn step(&self, s: &State, a: &Action, theta: &HiddenInfo) -> Result<Transition> {
        let u = self.robot_action(theta, s)?;
        self.transition(s, a, u)
    }

    /// Treasure: squared final-state error. Highway: collision rate.
    pub fn metric(&self, episode: &Episode) -> Result<f64> {
        if episode.states.len() != HORIZON + 1 {
            return Err(Error::Usage(format!(
                "metric needs a completed episode of {HORIZON} steps, got {}",
                episode.states.len().saturating_sub(1)
            )));
        }
        match self {
            Environment::Treasure(_) => Ok(TreasureEnv::final_error(episode)),
            Environment::Highway(_) => Ok(HighwayEnv::collision_rate(episode)),
        }
    }

    /// The action an agent who knew `θ` would take.
    pub fn optimal_action(&self, s: &State, theta: &HiddenInfo) -> Result<Action> {
        match self {
            Environment::Treasure(e) => Ok(e.optimal_action(s, theta)),
            Environment::Highway(e) => e.optimal_action(s, theta),
        }
    }

    pub fn validate_theta(&self, theta: &HiddenInfo) -> Result<()> {
        match self {
            Environment::Treasure(e) => e.validate_theta(theta),
            Environment::Highway(_) => HighwayPolicy::from_theta(theta).map(|_| ()),
        }
    }

    /// State as fed to networks, scaled to roughly `[-1, 1]`.
    pub fn state_features(&self, s: &[f64]) -> Vec<f64> {
        let k = 1.0 / self.state_scale();
        s.iter().map(|v| v * k).collect()
    }

    pub fn theta_features(&self, theta: &[f64]) -> Vec<f64> {
        let k = 1.0 / self.theta_radius();
        theta.iter().map(|v| v * k).collect()
    }

    pub fn theta_from_features(&self, f: &[f64]) -> Vec<f64> {
        let k = self.theta_radius();
        f.iter().map(|v| v * k).collect()
    }

    pub fn state_scale(&self) -> f64 {
        match self {
            Environment::Treasure(_) => treasure::BOUND,
            Environment::Highway(_) => 1.0,
        }
    }

    /// Differentiable dynamics used inside counterfactual rollouts.
    /// `states` and `actions` are raw (unscaled) batches; `theta` holds the raw
    /// hidden information of each row.
    pub fn relaxed_step(
        &self,
        tape: &mut Tape,
        states: Var,
        actions: Var,
        theta: &Array2<f64>,
    ) -> Result<Var> {
        match self {
            Environment::Treasure(_) => treasure::relaxed_step(tape, states, actions),
            Environment::Highway(_) => highway::relaxed_step(tape, states, actions, theta),
        }
    }

    /// Whether `θ ↦ -θ` maps the hidden-information space onto itself.
    pub fn theta_closed_under_negation(&self) -> bool {
        true
    }
}
