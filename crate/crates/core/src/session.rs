//! One operator working with one interface algorithm over repeated
//! interactions. The harness and the HTTP service both drive this type.

use std::fmt;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{limit_config, BayesConfig, BayesOpt, LinearInterface};
use crate::domain::{
    Action, HiddenInfo, InteractionTuple, ReplayBuffer, Signal, SignalMap, State, DEFAULT_BUFFER_CAPACITY,
};
use crate::env::{EnvKind, Environment, Episode};
use crate::error::{Error, Result};
use crate::human::HumanStructure;
use crate::learning::{InterfaceLearner, LearnerConfig, LossStats, PriorKind, TrainOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Bayes,
    Prop,
    Conv,
    Limit,
    OursP,
    OursC,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::Bayes,
        Algorithm::Prop,
        Algorithm::Conv,
        Algorithm::Limit,
        Algorithm::OursP,
        Algorithm::OursC,
    ];

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown algorithm `{s}`")))
    }

    /// Interface structure the algorithm produces, if it matches one a
    /// simulated human can be pretrained with.
    pub fn structure(self) -> Option<HumanStructure> {
        match self {
            Algorithm::Bayes => Some(HumanStructure::BayesLinear),
            Algorithm::Prop | Algorithm::OursP => Some(HumanStructure::Proportional),
            Algorithm::Conv | Algorithm::OursC => Some(HumanStructure::Convex),
            Algorithm::Limit => None,
        }
    }

    /// Learner settings for the network-based algorithms.
    pub fn learner_config(self, base: &LearnerConfig) -> Option<LearnerConfig> {
        let mut cfg = base.clone();
        cfg.weights.prior_kind = match self {
            Algorithm::Bayes => return None,
            Algorithm::Limit => {
                let limit = limit_config();
                cfg.weights.lambda_prior = limit.lambda_prior;
                PriorKind::None
            }
            Algorithm::Prop | Algorithm::OursP => PriorKind::Proportionality,
            Algorithm::Conv | Algorithm::OursC => PriorKind::Convexity,
        };
        Some(cfg)
    }

    /// Whether the interface keeps learning after initialization.
    pub fn is_online(self) -> bool {
        !matches!(self, Algorithm::Prop | Algorithm::Conv)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Bayes => "bayes",
            Algorithm::Prop => "prop",
            Algorithm::Conv => "conv",
            Algorithm::Limit => "limit",
            Algorithm::OursP => "ours-p",
            Algorithm::OursC => "ours-c",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub env: EnvKind,
    pub algorithm: Algorithm,
    pub learner: LearnerConfig,
    pub bayes: BayesConfig,
    pub buffer_capacity: usize,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            env: EnvKind::Treasure { n: 2 },
            algorithm: Algorithm::OursC,
            learner: LearnerConfig::default(),
            bayes: BayesConfig::default(),
            buffer_capacity: DEFAULT_BUFFER_CAPACITY,
        }
    }
}

impl SessionConfig {
    /// sha256 of the canonical (key-sorted) JSON form.
    pub fn hash(&self) -> Result<String> {
        let value = serde_json::to_value(self)?;
        Ok(crate::learning::checkpoint::hex_digest(serde_json::to_string(&value)?.as_bytes()))
    }
}

/// Independent random stream `stream` of a run seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub const ENV_STREAM: u64 = 0;
pub const LEARNER_STREAM: u64 = 1;
pub const HUMAN_STREAM: u64 = 2;
pub const BAYES_STREAM: u64 = 3;

#[derive(Debug, Clone)]
enum Interface {
    Learned {
        learner: Box<InterfaceLearner>,
        online: bool,
    },
    Bayes {
        opt: BayesOpt,
        current: LinearInterface,
        rng: ChaCha8Rng,
    },
}

impl Interface {
    fn signal(&self, s: &State, theta: &HiddenInfo) -> Result<Signal> {
        match self {
            Interface::Learned { learner, .. } => learner.emit_signal(s, theta),
            Interface::Bayes { current, .. } => current.signal(s, theta),
        }
    }
}

/// What the operator sees: never includes `θ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub interaction: usize,
    pub t: usize,
    pub state: State,
    pub signal: Signal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub interaction: usize,
    pub t: usize,
    pub state: State,
    /// Signal for the next step; absent once the interaction is over.
    pub signal: Option<Signal>,
    pub done: bool,
    pub metric: Option<f64>,
    /// Revealed when the interaction ends.
    pub theta: Option<HiddenInfo>,
    /// The submitted action was outside the action bounds.
    pub clamped: bool,
    pub training: Option<LossStats>,
}

#[derive(Debug, Clone)]
pub struct Session {
    env: Environment,
    config: SessionConfig,
    interface: Interface,
    buffer: ReplayBuffer,
    env_rng: ChaCha8Rng,
    episode: Option<Episode>,
    finished: bool,
    interaction: usize,
    metrics: Vec<f64>,
    losses: Vec<Option<LossStats>>,
    log: Vec<InteractionTuple>,
    clamped_actions: u64,
}

impl Session {
    pub fn new(config: SessionConfig, seed: u64) -> Result<Self> {
        let env = config.env.build()?;
        let interface = match config.algorithm.learner_config(&config.learner) {
            Some(lc) => {
                let mut learner =
                    InterfaceLearner::new(env.clone(), lc, stream_rng(seed, LEARNER_STREAM).next_u64())?;
                if learner.weights().uses_prior() {
                    let report = learner.initialize_with_prior()?;
                    log::debug!("prior initialization: {report:?}");
                }
                Interface::Learned {
                    learner: Box::new(learner),
                    online: config.algorithm.is_online(),
                }
            }
            None => {
                let mut rng = stream_rng(seed, BAYES_STREAM);
                let mut opt = BayesOpt::new(LinearInterface::num_entries(&env), config.bayes.clone())?;
                let current = LinearInterface::from_flat(&env, &opt.propose(&mut rng))?;
                Interface::Bayes { opt, current, rng }
            }
        };
        let buffer = ReplayBuffer::new(config.buffer_capacity, env.dims())?;
        Ok(Session {
            env,
            interface,
            buffer,
            env_rng: stream_rng(seed, ENV_STREAM),
            episode: None,
            finished: false,
            interaction: 0,
            metrics: Vec::new(),
            losses: Vec::new(),
            log: Vec::new(),
            clamped_actions: 0,
            config,
        })
    }

    pub fn env(&self) -> &Environment {
        &self.env
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn algorithm(&self) -> Algorithm {
        self.config.algorithm
    }

    /// Index of the current (or last finished) interaction.
    pub fn interaction(&self) -> usize {
        self.interaction
    }

    pub fn metrics(&self) -> &[f64] {
        &self.metrics
    }

    pub fn losses(&self) -> &[Option<LossStats>] {
        &self.losses
    }

    /// Every tuple recorded so far, oldest first.
    pub fn log(&self) -> &[InteractionTuple] {
        &self.log
    }

    pub fn clamped_actions(&self) -> u64 {
        self.clamped_actions
    }

    pub fn learner(&self) -> Option<&InterfaceLearner> {
        match &self.interface {
            Interface::Learned { learner, .. } => Some(learner),
            Interface::Bayes { .. } => None,
        }
    }

    pub fn bayes(&self) -> Option<&BayesOpt> {
        match &self.interface {
            Interface::Bayes { opt, .. } => Some(opt),
            Interface::Learned { .. } => None,
        }
    }

    /// Whether an interaction is under way.
    pub fn in_flight(&self) -> bool {
        self.episode.is_some() && !self.finished
    }

    /// Hidden information of the current interaction. Only oracle test
    /// fixtures and server internals may read this while in flight.
    pub fn current_theta(&self) -> Option<&HiddenInfo> {
        self.episode.as_ref().map(|e| &e.theta)
    }

    /// sha256 over the interface parameters: network weights, or the linear
    /// map currently shown plus the Bayes observations.
    pub fn weights_digest(&self) -> Result<String> {
        match &self.interface {
            Interface::Learned { learner, .. } => learner.checkpoint().digest(),
            Interface::Bayes { opt, current, .. } => {
                let mut buf = Vec::new();
                opt.write_log(&mut buf)?;
                buf.extend(serde_json::to_vec(&current.flat())?);
                Ok(crate::learning::checkpoint::hex_digest(&buf))
            }
        }
    }

    /// Starts the next interaction: fresh `θ` and initial state.
    pub fn begin(&mut self) -> Result<Observation> {
        if self.in_flight() {
            return Err(Error::Usage("an interaction is already in progress".into()));
        }
        if self.episode.is_some() {
            self.interaction += 1;
        }
        let (s0, theta) = self.env.reset(&mut self.env_rng);
        self.episode = Some(Episode::new(s0, theta));
        self.finished = false;
        self.observation()
    }

    /// State and signal for the current step.
    pub fn observation(&self) -> Result<Observation> {
        let ep = self
            .episode
            .as_ref()
            .ok_or_else(|| Error::Usage("no interaction has been started".into()))?;
        if self.finished {
            return Err(Error::Usage("interaction finished; reset to continue".into()));
        }
        let s = ep.current_state().clone();
        Ok(Observation {
            interaction: self.interaction,
            t: ep.steps(),
            signal: self.interface.signal(&s, &ep.theta)?,
            state: s,
        })
    }

    /// Applies the operator's action. At the last step the interface
    /// updates and `θ` is revealed.
    pub fn step(&mut self, action: &Action) -> Result<StepResult> {
        if !self.in_flight() {
            return Err(Error::Usage("interaction finished; reset to continue".into()));
        }
        let dims = self.env.dims();
        if action.dim() != dims.action {
            return Err(Error::Usage(format!(
                "action has width {}, expected {}",
                action.dim(),
                dims.action
            )));
        }
        if action.0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Usage("action must be finite".into()));
        }
        let ep = self.episode.as_mut().expect("in flight");
        let s = ep.current_state().clone();
        let x = self.interface.signal(&s, &ep.theta)?;
        let tr = self.env.step(&s, action, &ep.theta)?;
        if tr.clamped {
            self.clamped_actions += 1;
        }
        let bound = self.env.action_bound();
        let applied = Action(action.0.iter().map(|v| v.clamp(-bound, bound)).collect());
        let tuple = InteractionTuple {
            s,
            a: applied.clone(),
            x: x.clone(),
            theta: ep.theta.clone(),
            interaction: self.interaction,
            t: ep.steps(),
        };
        ep.signals.push(x);
        ep.actions.push(applied);
        ep.states.push(tr.next.clone());
        self.buffer.push(tuple.clone())?;
        self.log.push(tuple);

        let t = ep.steps();
        if t < self.env.horizon() {
            let signal = self.interface.signal(&tr.next, &ep.theta)?;
            return Ok(StepResult {
                interaction: self.interaction,
                t,
                state: tr.next,
                signal: Some(signal),
                done: false,
                metric: None,
                theta: None,
                clamped: tr.clamped,
                training: None,
            });
        }

        let metric = self.env.metric(ep)?;
        let theta = ep.theta.clone();
        self.finished = true;
        self.metrics.push(metric);
        let training = self.update_interface(metric)?;
        self.losses.push(training);
        Ok(StepResult {
            interaction: self.interaction,
            t,
            state: tr.next,
            signal: None,
            done: true,
            metric: Some(metric),
            theta: Some(theta),
            clamped: tr.clamped,
            training,
        })
    }

    fn update_interface(&mut self, metric: f64) -> Result<Option<LossStats>> {
        match &mut self.interface {
            Interface::Learned { learner, online } => {
                if !*online {
                    return Ok(None);
                }
                match learner.train_step(&self.buffer)? {
                    TrainOutcome::Trained(stats) => Ok(Some(stats)),
                    TrainOutcome::Skipped => Ok(None),
                }
            }
            Interface::Bayes { opt, current, rng } => {
                opt.observe(&current.flat(), -metric)?;
                *current = LinearInterface::from_flat(&self.env, &opt.propose(rng))?;
                Ok(None)
            }
        }
    }

    /// The episode most recently started, finished or not.
    pub fn episode(&self) -> Option<&Episode> {
        self.episode.as_ref()
    }
}
