//! Loss terms built on a [`Tape`]: the three prior losses, the policy loss,
//! the counterfactual rollout and the decoder loss.
//!
//! Every loss is a sum over the batch rows. Which network receives which
//! gradient is decided by how the caller binds it: the policy loss sees the
//! interface signals as constants, and the rollout binds the human model as
//! constants so the decoder loss only reaches `ψ` and `σ`.

use ndarray::{Array2, Axis};

use super::nets::Scales;
use crate::autodiff::{BoundMlp, Tape, Var};
use crate::domain::InteractionTuple;
use crate::env::Environment;
use crate::error::{Error, Result};

/// Largest exponent allowed in the proportionality weight `e^{γ‖Δθ‖²}`.
pub const MAX_PROPORTIONALITY_EXPONENT: f64 = 30.0;

/// A minibatch in raw units.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub thetas: Array2<f64>,
    /// Signals the operator was shown.
    pub signals: Array2<f64>,
    /// Second hidden-information value per row, paired with the same state,
    /// for the proportionality prior.
    pub partner_thetas: Option<Array2<f64>>,
    /// Prior samples `x̂ ~ P0(· | s, θ)` for the generic prior.
    pub prior_targets: Option<Array2<f64>>,
}

fn stack<'a>(rows: impl Iterator<Item = &'a [f64]>, width: usize) -> Array2<f64> {
    let data: Vec<f64> = rows.flat_map(|r| r.iter().copied()).collect();
    let n = data.len() / width.max(1);
    Array2::from_shape_vec((n, width), data).expect("rows share a width")
}

impl Batch {
    pub fn from_tuples(tuples: &[&InteractionTuple]) -> Result<Self> {
        let first = tuples
            .first()
            .ok_or_else(|| Error::InsufficientData("empty batch".into()))?;
        let (ds, da, dt, dx) = (first.s.dim(), first.a.dim(), first.theta.dim(), first.x.dim());
        for t in tuples {
            if t.s.dim() != ds || t.a.dim() != da || t.theta.dim() != dt || t.x.dim() != dx {
                return Err(Error::Usage("batch tuples have mixed widths".into()));
            }
        }
        Ok(Batch {
            states: stack(tuples.iter().map(|t| t.s.as_slice()), ds),
            actions: stack(tuples.iter().map(|t| t.a.as_slice()), da),
            thetas: stack(tuples.iter().map(|t| t.theta.as_slice()), dt),
            signals: stack(tuples.iter().map(|t| t.x.as_slice()), dx),
            partner_thetas: None,
            prior_targets: None,
        })
    }

    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Differentiable interface signals for (possibly differentiable) raw states.
pub fn signal(
    tape: &mut Tape,
    policy: &BoundMlp,
    scales: &Scales,
    states: Var,
    thetas: &Array2<f64>,
) -> Result<Var> {
    let s = tape.scale(states, 1.0 / scales.state);
    let th = tape.constant(thetas / scales.theta);
    let input = tape.concat(&[s, th])?;
    policy.forward(tape, input)
}

/// Human-model actions for raw states and signals.
pub fn human_action(
    tape: &mut Tape,
    human: &BoundMlp,
    scales: &Scales,
    states: Var,
    signals: Var,
) -> Result<Var> {
    let s = tape.scale(states, 1.0 / scales.state);
    let input = tape.concat(&[s, signals])?;
    human.forward(tape, input)
}

/// `Σ ‖x̂ − R_ψ(s, θ)‖²`.
pub fn prior_generic(
    tape: &mut Tape,
    policy: &BoundMlp,
    scales: &Scales,
    states: &Array2<f64>,
    thetas: &Array2<f64>,
    targets: &Array2<f64>,
) -> Result<Var> {
    let s = tape.constant(states.clone());
    let x = signal(tape, policy, scales, s, thetas)?;
    let target = tape.constant(targets.clone());
    let diff = tape.sub(target, x)?;
    tape.sum_sq(diff)
}

/// Per-row weights `e^{γ‖θ1 − θ2‖²}` on feature-scaled `θ`, with the exponent
/// clamped to [`MAX_PROPORTIONALITY_EXPONENT`]. Returns the weights and how
/// many rows hit the clamp.
pub fn proportionality_weights(
    theta1: &Array2<f64>,
    theta2: &Array2<f64>,
    theta_scale: f64,
    gamma: f64,
) -> (Array2<f64>, usize) {
    let mut clamped = 0;
    let d = (theta1 - theta2) / theta_scale;
    let w = d
        .map_axis(Axis(1), |row| {
            let e = gamma * row.iter().map(|v| v * v).sum::<f64>();
            if e > MAX_PROPORTIONALITY_EXPONENT {
                clamped += 1;
                MAX_PROPORTIONALITY_EXPONENT.exp()
            } else {
                e.exp()
            }
        })
        .insert_axis(Axis(1));
    (w, clamped)
}

/// `Σ ‖R_ψ(s, θ1) − R_ψ(s, θ2)‖² e^{γ‖θ1 − θ2‖²}`; also returns the number
/// of clamped exponents.
pub fn prior_proportionality(
    tape: &mut Tape,
    policy: &BoundMlp,
    scales: &Scales,
    states: &Array2<f64>,
    theta1: &Array2<f64>,
    theta2: &Array2<f64>,
    gamma: f64,
) -> Result<(Var, usize)> {
    let s = tape.constant(states.clone());
    let x1 = signal(tape, policy, scales, s, theta1)?;
    let x2 = signal(tape, policy, scales, s, theta2)?;
    let diff = tape.sub(x1, x2)?;
    let sq = tape.row_sq_norm(diff)?;
    let (w, clamped) = proportionality_weights(theta1, theta2, scales.theta, gamma);
    let w = tape.constant(w);
    let weighted = tape.mul_col(sq, w)?;
    Ok((tape.sum(weighted), clamped))
}

/// `Σ ‖R_ψ(s, θ) + R_ψ(s, −θ)‖²`.
pub fn prior_convexity(
    tape: &mut Tape,
    policy: &BoundMlp,
    scales: &Scales,
    states: &Array2<f64>,
    thetas: &Array2<f64>,
) -> Result<Var> {
    let s = tape.constant(states.clone());
    let x = signal(tape, policy, scales, s, thetas)?;
    let neg = thetas.mapv(|v| -v);
    let x_neg = signal(tape, policy, scales, s, &neg)?;
    let sum = tape.add(x, x_neg)?;
    tape.sum_sq(sum)
}

/// `Σ ‖a − H_φ(s, x)‖²` with `x = R_ψ(s, θ)` supplied as precomputed constants.
pub fn policy_loss(
    tape: &mut Tape,
    human: &BoundMlp,
    scales: &Scales,
    states: &Array2<f64>,
    signals: &Array2<f64>,
    actions: &Array2<f64>,
) -> Result<Var> {
    let s = tape.constant(states.clone());
    let x = tape.constant(signals.clone());
    let pred = human_action(tape, human, scales, s, x)?;
    let a = tape.constant(actions.clone());
    let diff = tape.sub(a, pred)?;
    tape.sum_sq(diff)
}

/// Tape nodes of a batched counterfactual rollout: `states[t]`, `actions[t]`
/// for `t = 0..=k`.
#[derive(Debug, Clone)]
pub struct RolloutVars {
    pub states: Vec<Var>,
    pub actions: Vec<Var>,
}

/// `a^t = H_φ(s^t, R_ψ(s^t, θ))`, `s^{t+1} = f(s^t, a^t)` for `t = 0..=k`.
#[allow(clippy::too_many_arguments)]
pub fn rollout(
    tape: &mut Tape,
    policy: &BoundMlp,
    human: &BoundMlp,
    env: &Environment,
    scales: &Scales,
    start: &Array2<f64>,
    thetas: &Array2<f64>,
    k: usize,
) -> Result<RolloutVars> {
    if k == 0 {
        return Err(Error::Usage("rollout length k must be at least 1".into()));
    }
    let mut s = tape.constant(start.clone());
    let mut out = RolloutVars {
        states: Vec::with_capacity(k + 1),
        actions: Vec::with_capacity(k + 1),
    };
    for t in 0..=k {
        let x = signal(tape, policy, scales, s, thetas)?;
        let a = human_action(tape, human, scales, s, x)?;
        out.states.push(s);
        out.actions.push(a);
        if t < k {
            s = env.relaxed_step(tape, s, a, thetas)?;
            if tape.value(s).iter().any(|v| !v.is_finite()) {
                return Err(Error::Training {
                    param: "rollout".into(),
                    reason: format!("non-finite state at step {}", t + 1),
                });
            }
        }
    }
    Ok(out)
}

/// Flattened, feature-scaled decoder input `[s^0, a^0, …, s^k, a^k]`.
pub fn trajectory_features(tape: &mut Tape, scales: &Scales, rollout: &RolloutVars) -> Result<Var> {
    let mut parts = Vec::with_capacity(2 * rollout.states.len());
    for (s, a) in rollout.states.iter().zip(&rollout.actions) {
        parts.push(tape.scale(*s, 1.0 / scales.state));
        parts.push(tape.scale(*a, 1.0 / scales.action));
    }
    tape.concat(&parts)
}

/// `Σ ‖θ − Δ_σ(τ(s, θ))‖²` in feature-scaled `θ`.
pub fn decoder_loss(
    tape: &mut Tape,
    decoder: &BoundMlp,
    scales: &Scales,
    rollout: &RolloutVars,
    thetas: &Array2<f64>,
) -> Result<Var> {
    let input = trajectory_features(tape, scales, rollout)?;
    let pred = decoder.forward(tape, input)?;
    let target = tape.constant(thetas / scales.theta);
    let diff = tape.sub(target, pred)?;
    tape.sum_sq(diff)
}
