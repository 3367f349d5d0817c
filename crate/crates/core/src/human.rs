//! Simulated operators: small networks mapping `(x, s)` to actions that are
//! pretrained against one interface structure and keep adapting afterwards.

use std::fmt;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Mlp, Optimizer, Tape};
use crate::baselines::LinearInterface;
use crate::domain::{Action, Dims, HiddenInfo, Signal, SignalMap, State};
use crate::env::{Episode, Environment};
use crate::error::{Error, Result};
use crate::learning::{initialize_with_prior, InterfacePolicy, NetSizes, PretrainConfig, PriorKind};

/// Interface structure a simulated human was pretrained with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HumanStructure {
    BayesLinear,
    Proportional,
    Convex,
    Random,
}

impl HumanStructure {
    pub const ALL: [HumanStructure; 4] = [
        HumanStructure::BayesLinear,
        HumanStructure::Proportional,
        HumanStructure::Convex,
        HumanStructure::Random,
    ];

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|h| h.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown human structure `{s}`")))
    }
}

impl fmt::Display for HumanStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HumanStructure::BayesLinear => "bayes-linear",
            HumanStructure::Proportional => "proportional",
            HumanStructure::Convex => "convex",
            HumanStructure::Random => "random",
        })
    }
}

/// Anyone who can operate the interface.
pub trait HumanAgent {
    /// Called at the start of every interaction. Only test fixtures that
    /// stand in for an all-knowing operator may look at `theta`.
    fn begin_interaction(&mut self, _theta: &HiddenInfo) {}

    fn act(&mut self, s: &State, x: &Signal) -> Result<Action>;

    /// Called once the interaction is over and `θ` is revealed.
    fn end_interaction(&mut self, _episode: &Episode) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HumanConfig {
    pub hidden: Vec<usize>,
    pub pretrain_episodes: usize,
    /// Optimizer steps after each pretraining episode.
    pub pretrain_steps_per_episode: usize,
    pub pretrain_batch: usize,
    pub pretrain_lr: f64,
    /// Distinct teachers of the structure, cycled through episode by episode.
    pub teacher_pool: usize,
    pub adapt_steps: usize,
    pub adapt_lr: f64,
}

impl Default for HumanConfig {
    fn default() -> Self {
        HumanConfig {
            hidden: vec![32, 32],
            pretrain_episodes: 300,
            pretrain_steps_per_episode: 10,
            pretrain_batch: 32,
            pretrain_lr: 3e-3,
            teacher_pool: 1,
            adapt_steps: 5,
            adapt_lr: 1e-3,
        }
    }
}

/// Output range of the human network relative to the action bound. Oracle
/// actions often sit on the bound; headroom keeps them off the flat tails of
/// tanh so the human stays trainable.
pub const OUTPUT_HEADROOM: f64 = 1.25;

/// The frozen interface a human of the given structure is pretrained with.
pub fn teacher<R: Rng + ?Sized>(
    structure: HumanStructure,
    env: &Environment,
    rng: &mut R,
) -> Result<Box<dyn SignalMap>> {
    let hidden = NetSizes::default().policy;
    let prior = match structure {
        HumanStructure::BayesLinear => return Ok(Box::new(LinearInterface::random(env, rng)?)),
        HumanStructure::Random => return Ok(Box::new(InterfacePolicy::new(env, &hidden, rng)?)),
        HumanStructure::Proportional => PriorKind::Proportionality,
        HumanStructure::Convex => PriorKind::Convexity,
    };
    let mut policy = InterfacePolicy::new(env, &hidden, rng)?;
    initialize_with_prior(&mut policy, env, prior, -0.5, None, &PretrainConfig::default(), rng)?;
    Ok(Box::new(policy))
}

/// A perceptron operator. It never sees `θ` while acting; `θ` only enters
/// through the post-interaction reveal in [`HumanAgent::end_interaction`].
#[derive(Debug, Clone)]
pub struct SimulatedHuman {
    pub net: Mlp,
    env: Environment,
    dims: Dims,
    structure: Option<HumanStructure>,
    config: HumanConfig,
    opt: Option<Optimizer>,
}

impl SimulatedHuman {
    pub fn new<R: Rng + ?Sized>(env: &Environment, config: HumanConfig, rng: &mut R) -> Result<Self> {
        let dims = env.dims();
        let mut widths = vec![dims.signal + dims.state];
        widths.extend_from_slice(&config.hidden);
        widths.push(dims.action);
        let net = Mlp::new("human", &widths, Activation::Tanh, Activation::Tanh, rng)?
            .with_output_scale(OUTPUT_HEADROOM * env.action_bound());
        let opt = if config.adapt_lr > 0.0 {
            Some(Optimizer::adam(config.adapt_lr)?)
        } else {
            None
        };
        Ok(SimulatedHuman {
            net,
            env: env.clone(),
            dims,
            structure: None,
            config,
            opt,
        })
    }

    /// Fresh human pretrained against a teacher of `structure`.
    pub fn pretrained<R: Rng + ?Sized>(
        env: &Environment,
        structure: HumanStructure,
        config: HumanConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let mut human = Self::new(env, config, rng)?;
        let teachers = (0..human.config.teacher_pool.max(1))
            .map(|_| teacher(structure, env, rng))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&dyn SignalMap> = teachers.iter().map(|t| t.as_ref()).collect();
        human.pretrain_pool(&refs, rng)?;
        human.structure = Some(structure);
        Ok(human)
    }

    pub fn structure(&self) -> Option<HumanStructure> {
        self.structure
    }

    fn features(&self, s: &State, x: &Signal) -> Vec<f64> {
        let k = 1.0 / self.env.state_scale();
        x.0.iter().copied().chain(s.0.iter().map(|v| v * k)).collect()
    }

    /// Supervised training toward the oracle action on signals from
    /// `teacher`, visiting the states the human itself reaches.
    pub fn pretrain<R: Rng + ?Sized>(&mut self, teacher: &dyn SignalMap, rng: &mut R) -> Result<()> {
        self.pretrain_pool(&[teacher], rng)
    }

    /// Like [`Self::pretrain`], cycling through several teachers.
    pub fn pretrain_pool<R: Rng + ?Sized>(
        &mut self,
        teachers: &[&dyn SignalMap],
        rng: &mut R,
    ) -> Result<()> {
        if self.config.pretrain_episodes == 0 || teachers.is_empty() {
            return Ok(());
        }
        let mut opt = Optimizer::adam(self.config.pretrain_lr)?;
        let mut inputs: Vec<Vec<f64>> = Vec::new();
        let mut targets: Vec<Vec<f64>> = Vec::new();
        for ep in 0..self.config.pretrain_episodes {
            let teacher = teachers[ep % teachers.len()];
            let (mut s, theta) = self.env.reset(rng);
            for _ in 0..self.env.horizon() {
                let x = teacher.signal(&s, &theta)?;
                inputs.push(self.features(&s, &x));
                targets.push(self.env.optimal_action(&s, &theta)?.0);
                let a = self.act(&s, &x)?;
                s = self.env.step(&s, &a, &theta)?.next;
            }
            for _ in 0..self.config.pretrain_steps_per_episode {
                let idx: Vec<usize> = (0..self.config.pretrain_batch)
                    .map(|_| rng.random_range(0..inputs.len()))
                    .collect();
                let x: Vec<Vec<f64>> = idx.iter().map(|&i| inputs[i].clone()).collect();
                let y: Vec<Vec<f64>> = idx.iter().map(|&i| targets[i].clone()).collect();
                self.fit_step(&x, &y, &mut opt)?;
            }
        }
        Ok(())
    }

    fn fit_step(&mut self, inputs: &[Vec<f64>], targets: &[Vec<f64>], opt: &mut Optimizer) -> Result<f64> {
        let x = crate::autodiff::rows_to_array(inputs)?;
        let y: Array2<f64> = crate::autodiff::rows_to_array(targets)?;
        let mut tape = Tape::new();
        let bound = self.net.bind(&mut tape, true);
        let input = tape.constant(x);
        let pred = bound.forward(&mut tape, input)?;
        let target = tape.constant(y);
        let diff = tape.sub(target, pred)?;
        let loss = tape.sum_sq(diff)?;
        let n = inputs.len() as f64;
        let loss = tape.scale(loss, 1.0 / n);
        let value = tape.scalar(loss);
        tape.backward(loss)?;
        self.net.accumulate_grads(&tape, &bound);
        opt.step(&mut self.net)?;
        Ok(value)
    }

    /// Mean squared action error against the oracle over one episode.
    pub fn episode_error(&self, episode: &Episode) -> Result<f64> {
        let mut total = 0.0;
        for (s, x) in episode.states.iter().zip(&episode.signals) {
            let a = self.predict(s, x)?;
            let want = self.env.optimal_action(s, &episode.theta)?;
            total += a.0.iter().zip(&want.0).map(|(p, q)| (p - q).powi(2)).sum::<f64>();
        }
        Ok(total / episode.signals.len().max(1) as f64)
    }

    pub fn predict(&self, s: &State, x: &Signal) -> Result<Action> {
        if s.dim() != self.dims.state || x.dim() != self.dims.signal {
            return Err(Error::Usage(format!(
                "simulated human expects state/signal widths {}/{}, got {}/{}",
                self.dims.state,
                self.dims.signal,
                s.dim(),
                x.dim()
            )));
        }
        let bound = self.env.action_bound();
        let a = self.net.predict(&self.features(s, x))?;
        Ok(Action(a.into_iter().map(|v| v.clamp(-bound, bound)).collect()))
    }

    /// Gradient steps on `(x^t, s^t) ↦ optimal_action(s^t, θ)` for the
    /// episode just played.
    pub fn adapt(&mut self, episode: &Episode) -> Result<()> {
        let Some(mut opt) = self.opt.take() else {
            return Ok(());
        };
        let mut inputs = Vec::with_capacity(episode.signals.len());
        let mut targets = Vec::with_capacity(episode.signals.len());
        for (s, x) in episode.states.iter().zip(&episode.signals) {
            inputs.push(self.features(s, x));
            targets.push(self.env.optimal_action(s, &episode.theta)?.0);
        }
        let mut result = Ok(());
        if !inputs.is_empty() {
            for _ in 0..self.config.adapt_steps {
                if let Err(e) = self.fit_step(&inputs, &targets, &mut opt) {
                    result = Err(e);
                    break;
                }
            }
        }
        self.opt = Some(opt);
        result
    }
}

impl HumanAgent for SimulatedHuman {
    fn act(&mut self, s: &State, x: &Signal) -> Result<Action> {
        self.predict(s, x)
    }

    fn end_interaction(&mut self, episode: &Episode) -> Result<()> {
        self.adapt(episode)
    }
}

/// Test fixture: an operator who already knows `θ` and ignores the signal.
#[derive(Debug, Clone)]
pub struct OracleHuman {
    env: Environment,
    theta: Option<HiddenInfo>,
}

impl OracleHuman {
    pub fn new(env: &Environment) -> Self {
        OracleHuman {
            env: env.clone(),
            theta: None,
        }
    }
}

impl HumanAgent for OracleHuman {
    fn begin_interaction(&mut self, theta: &HiddenInfo) {
        self.theta = Some(theta.clone());
    }

    fn act(&mut self, s: &State, _x: &Signal) -> Result<Action> {
        let theta = self
            .theta
            .as_ref()
            .ok_or_else(|| Error::Usage("oracle human acts before an interaction began".into()))?;
        self.env.optimal_action(s, theta)
    }
}

/// Plays one interaction of `interface` with `human`, without adaptation.
pub fn play_episode<R: Rng + ?Sized>(
    env: &Environment,
    interface: &dyn SignalMap,
    human: &mut dyn HumanAgent,
    rng: &mut R,
) -> Result<Episode> {
    let (s0, theta) = env.reset(rng);
    human.begin_interaction(&theta);
    let mut ep = Episode::new(s0, theta);
    for _ in 0..env.horizon() {
        let s = ep.current_state().clone();
        let x = interface.signal(&s, &ep.theta)?;
        let a = human.act(&s, &x)?;
        let next = env.step(&s, &a, &ep.theta)?.next;
        ep.signals.push(x);
        ep.actions.push(a);
        ep.states.push(next);
    }
    Ok(ep)
}
