use rand::Rng;

use super::{Episode, Transition};
use crate::autodiff::{Tape, Var};
use crate::domain::{Action, Dims, HiddenInfo, State};
use crate::error::{Error, Result};

pub(crate) const BOUND: f64 = 10.0;
/// Per-axis step limit. Ten steps of this size span the whole box.
pub(crate) const ACTION_BOUND: f64 = 2.0;

/// Continuous navigation toward a hidden goal in `[-10, 10]^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct TreasureEnv {
    n: usize,
}

impl TreasureEnv {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("treasure dimension must be at least 1".into()));
        }
        Ok(TreasureEnv { n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dims(&self) -> Dims {
        Dims {
            state: self.n,
            action: self.n,
            signal: self.n,
            theta: self.n,
        }
    }

    pub fn sample_theta<R: Rng + ?Sized>(&self, rng: &mut R) -> HiddenInfo {
        HiddenInfo(self.uniform_point(rng))
    }

    pub fn sample_state<R: Rng + ?Sized>(&self, rng: &mut R) -> State {
        State(self.uniform_point(rng))
    }

    fn uniform_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.n).map(|_| rng.random_range(-BOUND..=BOUND)).collect()
    }

    pub fn validate_theta(&self, theta: &HiddenInfo) -> Result<()> {
        if theta.dim() != self.n || theta.0.iter().any(|v| !(v.abs() <= BOUND)) {
            return Err(Error::Usage(format!(
                "treasure θ must lie in [-{BOUND}, {BOUND}]^{}",
                self.n
            )));
        }
        Ok(())
    }

    pub fn transition(&self, s: &State, a: &Action) -> Result<Transition> {
        if s.dim() != self.n || a.dim() != self.n {
            return Err(Error::Usage(format!(
                "treasure expects state/action width {}, got {}/{}",
                self.n,
                s.dim(),
                a.dim()
            )));
        }
        let mut clamped = false;
        let next = s
            .0
            .iter()
            .zip(&a.0)
            .map(|(&p, &step)| {
                let bounded = step.clamp(-ACTION_BOUND, ACTION_BOUND);
                clamped |= bounded != step;
                (p + bounded).clamp(-BOUND, BOUND)
            })
            .collect();
        Ok(Transition {
            next: State(next),
            clamped,
        })
    }

    pub fn optimal_action(&self, s: &State, theta: &HiddenInfo) -> Action {
        Action(
            theta
                .0
                .iter()
                .zip(&s.0)
                .map(|(g, p)| (g - p).clamp(-ACTION_BOUND, ACTION_BOUND))
                .collect(),
        )
    }

    /// `‖s^T - θ‖²`.
    pub fn final_error(ep: &Episode) -> f64 {
        ep.current_state()
            .0
            .iter()
            .zip(&ep.theta.0)
            .map(|(s, g)| (s - g).powi(2))
            .sum()
    }
}

pub(crate) fn relaxed_step(tape: &mut Tape, states: Var, actions: Var) -> Result<Var> {
    let moved = tape.add(states, actions)?;
    Ok(tape.clamp(moved, -BOUND, BOUND))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn theta_and_reset_stay_in_bounds() {
        let env = TreasureEnv::new(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let theta = env.sample_theta(&mut rng);
            assert_eq!(theta.dim(), 3);
            assert!(theta.0.iter().all(|v| v.abs() <= BOUND));
            let s = env.sample_state(&mut rng);
            assert!(s.0.iter().all(|v| v.abs() <= BOUND));
        }
    }

    #[test]
    fn seeded_reset_is_reproducible() {
        let env = TreasureEnv::new(4).unwrap();
        let a = env.sample_state(&mut ChaCha8Rng::seed_from_u64(77));
        let b = env.sample_state(&mut ChaCha8Rng::seed_from_u64(77));
        assert_eq!(a, b);
    }

    #[test]
    fn additive_dynamics() {
        let env = TreasureEnv::new(3).unwrap();
        let t = env
            .transition(&State(vec![0.0, 0.0, 0.0]), &Action(vec![1.0, -1.0, 0.0]))
            .unwrap();
        assert_eq!(t.next, State(vec![1.0, -1.0, 0.0]));
        assert!(!t.clamped);
    }

    #[test]
    fn dynamics_clamp_at_boundary() {
        let env = TreasureEnv::new(3).unwrap();
        let t = env
            .transition(&State(vec![10.0, 10.0, 10.0]), &Action(vec![2.0, 2.0, 2.0]))
            .unwrap();
        assert_eq!(t.next, State(vec![10.0, 10.0, 10.0]));
    }

    #[test]
    fn oversized_action_is_clamped_and_flagged() {
        let env = TreasureEnv::new(2).unwrap();
        let t = env
            .transition(&State(vec![0.0, 0.0]), &Action(vec![5.0, -0.5]))
            .unwrap();
        assert_eq!(t.next, State(vec![2.0, -0.5]));
        assert!(t.clamped);
    }

    #[test]
    fn oracle_clamps_goal_direction() {
        let env = TreasureEnv::new(3).unwrap();
        let a = env.optimal_action(&State(vec![0.0, 0.0, 0.0]), &HiddenInfo(vec![5.0, -5.0, 1.0]));
        assert_eq!(a, Action(vec![2.0, -2.0, 1.0]));
    }

    #[test]
    fn final_error_is_zero_at_goal() {
        let mut ep = Episode::new(State(vec![1.0, 2.0]), HiddenInfo(vec![1.0, 2.0]));
        assert_eq!(TreasureEnv::final_error(&ep), 0.0);
        ep.states.push(State(vec![4.0, 6.0]));
        assert_eq!(TreasureEnv::final_error(&ep), 25.0);
    }
}
