//! Core interaction symbols: states, hidden information, signals, actions,
//! the tuples the interface collects, and the buffer that holds them.

use std::collections::VecDeque;
use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

macro_rules! real_vector {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub Vec<f64>);

        impl $name {
            pub fn dim(&self) -> usize {
                self.0.len()
            }

            pub fn as_slice(&self) -> &[f64] {
                &self.0
            }
        }

        impl From<Vec<f64>> for $name {
            fn from(v: Vec<f64>) -> Self {
                $name(v)
            }
        }
    };
}

real_vector!(
    /// System state `s`. Treasure: human position. Highway: `(human_lane,
    /// robot_lane, prev_human_lane)` encoded as reals.
    State
);
real_vector!(
    /// Hidden information `θ` known only to the robot.
    HiddenInfo
);
real_vector!(
    /// Interface signal `x`, every component in `(-1, 1)`.
    Signal
);
real_vector!(
    /// Human action `a`.
    Action
);

/// Anything that turns `(s, θ)` into a display signal.
pub trait SignalMap {
    fn signal(&self, s: &State, theta: &HiddenInfo) -> Result<Signal>;
}

/// Widths of the four components of an [`InteractionTuple`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub state: usize,
    pub action: usize,
    pub signal: usize,
    pub theta: usize,
}

/// One `(s, a, x, θ)` sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionTuple {
    pub s: State,
    pub a: Action,
    pub x: Signal,
    pub theta: HiddenInfo,
    pub interaction: usize,
    pub t: usize,
}

impl InteractionTuple {
    pub fn check_dims(&self, dims: &Dims) -> Result<()> {
        let checks = [
            ("state", dims.state, self.s.dim()),
            ("action", dims.action, self.a.dim()),
            ("signal", dims.signal, self.x.dim()),
            ("theta", dims.theta, self.theta.dim()),
        ];
        for (what, want, got) in checks {
            if want != got {
                return Err(Error::Usage(format!(
                    "tuple {what} has width {got}, environment expects {want}"
                )));
            }
        }
        Ok(())
    }
}

/// `k + 1` state-action pairs generated under one `θ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pairs: Vec<(State, Action)>,
    theta: HiddenInfo,
}

impl Trajectory {
    pub fn new(pairs: Vec<(State, Action)>, theta: HiddenInfo, k: usize) -> Result<Self> {
        if pairs.len() != k + 1 {
            return Err(Error::Usage(format!(
                "trajectory must hold k+1 = {} pairs, got {}",
                k + 1,
                pairs.len()
            )));
        }
        Ok(Trajectory { pairs, theta })
    }

    pub fn pairs(&self) -> &[(State, Action)] {
        &self.pairs
    }

    pub fn theta(&self) -> &HiddenInfo {
        &self.theta
    }

    pub fn k(&self) -> usize {
        self.pairs.len() - 1
    }
}

/// Fixed-capacity FIFO of interaction tuples with uniform sampling.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplayBuffer {
    items: VecDeque<InteractionTuple>,
    capacity: usize,
    dims: Dims,
    pushed: u64,
}

pub const DEFAULT_BUFFER_CAPACITY: usize = 5_000;

impl ReplayBuffer {
    pub fn new(capacity: usize, dims: Dims) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("buffer capacity must be positive".into()));
        }
        Ok(ReplayBuffer {
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            capacity,
            dims,
            pushed: 0,
        })
    }

    pub fn push(&mut self, tuple: InteractionTuple) -> Result<()> {
        tuple.check_dims(&self.dims)?;
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(tuple);
        self.pushed += 1;
        Ok(())
    }

    /// Draws `batch_size` tuples uniformly with replacement.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<Vec<&InteractionTuple>> {
        if self.items.is_empty() {
            return Err(Error::InsufficientData("replay buffer is empty".into()));
        }
        let n = self.items.len();
        Ok((0..batch_size)
            .map(|_| &self.items[rng.random_range(0..n)])
            .collect())
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    /// Total number of tuples ever pushed.
    pub fn total_pushed(&self) -> u64 {
        self.pushed
    }

    /// 1-based push ordinal of the oldest retained tuple.
    pub fn oldest_id(&self) -> Option<u64> {
        (!self.items.is_empty()).then(|| self.pushed - self.items.len() as u64 + 1)
    }

    /// Tuples in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = &InteractionTuple> {
        self.items.iter()
    }
}

/// Writes one JSON object per line.
pub fn write_jsonl<'a, W: Write>(
    out: &mut W,
    tuples: impl IntoIterator<Item = &'a InteractionTuple>,
) -> Result<()> {
    for t in tuples {
        serde_json::to_writer(&mut *out, t)?;
        out.write_all(b"\n").map_err(|e| Error::io("<jsonl writer>", e))?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<InteractionTuple>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line.map_err(|e| Error::io("<jsonl reader>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}
