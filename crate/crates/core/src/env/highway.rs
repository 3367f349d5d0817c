use ndarray::Array2;
use rand::Rng;

use super::{Episode, Transition};
use crate::autodiff::{Tape, Var};
use crate::domain::{Action, Dims, HiddenInfo, State};
use crate::error::{Error, Result};

const HUMAN: usize = 0;
const ROBOT: usize = 1;
const PREV_HUMAN: usize = 2;

/// The four robot driving styles. Lane 0 is the right lane, lane 1 the left.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HighwayPolicy {
    StayRight,
    StayLeft,
    MergeToward,
    MergeAway,
}

impl HighwayPolicy {
    pub const ALL: [HighwayPolicy; 4] = [
        HighwayPolicy::StayRight,
        HighwayPolicy::MergeToward,
        HighwayPolicy::MergeAway,
        HighwayPolicy::StayLeft,
    ];

    /// Sign-symmetric encoding: opposite styles get opposite codes.
    pub fn theta(self) -> f64 {
        match self {
            HighwayPolicy::StayRight => -1.0,
            HighwayPolicy::StayLeft => 1.0,
            HighwayPolicy::MergeToward => -1.0 / 3.0,
            HighwayPolicy::MergeAway => 1.0 / 3.0,
        }
    }

    pub fn from_code(code: f64) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| (p.theta() - code).abs() < 1e-9)
            .ok_or_else(|| Error::Usage(format!("{code} is not a highway policy code")))
    }

    pub fn from_theta(theta: &HiddenInfo) -> Result<Self> {
        match theta.as_slice() {
            [code] => Self::from_code(*code),
            other => Err(Error::Usage(format!(
                "highway θ is a scalar, got width {}",
                other.len()
            ))),
        }
    }

    /// Next robot lane given the human's lane at the previous timestep.
    pub fn robot_lane(self, prev_human_lane: u8) -> u8 {
        match self {
            HighwayPolicy::StayRight => 0,
            HighwayPolicy::StayLeft => 1,
            HighwayPolicy::MergeToward => prev_human_lane,
            HighwayPolicy::MergeAway => 1 - prev_human_lane,
        }
    }
}

/// Lane chosen by a continuous lane preference.
pub fn discretize(a: f64) -> u8 {
    u8::from(a > 0.0)
}

fn lane(v: f64) -> u8 {
    u8::from(v >= 0.5)
}

/// Two-lane highway where the human tries to avoid the robot's lane.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HighwayEnv;

impl HighwayEnv {
    pub fn new() -> Self {
        HighwayEnv
    }

    pub fn dims(&self) -> Dims {
        Dims {
            state: 3,
            action: 1,
            signal: 1,
            theta: 1,
        }
    }

    pub fn sample_theta<R: Rng + ?Sized>(&self, rng: &mut R) -> HiddenInfo {
        let p = HighwayPolicy::ALL[rng.random_range(0..4)];
        HiddenInfo(vec![p.theta()])
    }

    pub fn sample_state<R: Rng + ?Sized>(&self, rng: &mut R) -> State {
        let human = f64::from(rng.random_range(0..2u8));
        let robot = f64::from(rng.random_range(0..2u8));
        State(vec![human, robot, human])
    }

    fn check_state(s: &State) -> Result<()> {
        if s.dim() != 3 {
            return Err(Error::Usage(format!("highway state has width 3, got {}", s.dim())));
        }
        Ok(())
    }

    pub fn robot_action(&self, theta: &HiddenInfo, s: &State) -> Result<f64> {
        Self::check_state(s)?;
        let policy = HighwayPolicy::from_theta(theta)?;
        Ok(f64::from(policy.robot_lane(lane(s.0[PREV_HUMAN]))))
    }

    pub fn transition(&self, s: &State, a: &Action, u: f64) -> Result<Transition> {
        Self::check_state(s)?;
        let [pref] = a.as_slice() else {
            return Err(Error::Usage(format!("highway action is a scalar, got width {}", a.dim())));
        };
        let bounded = pref.clamp(-1.0, 1.0);
        let next = vec![f64::from(discretize(bounded)), f64::from(lane(u)), s.0[HUMAN]];
        Ok(Transition {
            next: State(next),
            clamped: bounded != *pref,
        })
    }

    pub fn optimal_action(&self, s: &State, theta: &HiddenInfo) -> Result<Action> {
        let u = self.robot_action(theta, s)?;
        Ok(Action(vec![if u == 0.0 { 1.0 } else { -1.0 }]))
    }

    /// Fraction of steps `1..=T` on which both cars share a lane.
    pub fn collision_rate(ep: &Episode) -> f64 {
        let steps = ep.states.len() - 1;
        let hits = ep.states[1..]
            .iter()
            .filter(|s| lane(s.0[HUMAN]) == lane(s.0[ROBOT]))
            .count();
        hits as f64 / steps as f64
    }
}

/// Continuous relaxation: the human lane becomes `sigmoid(a)`, the robot lane
/// is the exact policy table evaluated at the rounded previous human lane.
pub(crate) fn relaxed_step(
    tape: &mut Tape,
    states: Var,
    actions: Var,
    theta: &Array2<f64>,
) -> Result<Var> {
    let prev = tape.value(states).column(PREV_HUMAN).to_owned();
    let rows = prev.len();
    if theta.nrows() != rows {
        return Err(Error::shape("highway relaxed step θ rows", rows, theta.nrows()));
    }
    let mut robot = Array2::zeros((rows, 1));
    for i in 0..rows {
        let policy = HighwayPolicy::from_code(theta[[i, 0]])?;
        robot[[i, 0]] = f64::from(policy.robot_lane(lane(prev[i])));
    }
    let human_next = tape.sigmoid(actions);
    let robot_next = tape.constant(robot);
    let prev_human = tape.slice_cols(states, HUMAN, HUMAN + 1)?;
    tape.concat(&[human_next, robot_next, prev_human])
}
