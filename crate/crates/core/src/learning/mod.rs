//! Online interface learning: the three networks, their losses and the
//! training loop that updates them between interactions.

pub mod checkpoint;
pub mod losses;
pub mod mi;
pub mod nets;
pub mod prior;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Mlp, Optimizer, Tape};
use crate::domain::{Action, HiddenInfo, ReplayBuffer, Signal, State, Trajectory};
use crate::env::Environment;
use crate::error::{Error, Result};

pub use checkpoint::Checkpoint;
pub use losses::{Batch, MAX_PROPORTIONALITY_EXPONENT};
pub use nets::{Decoder, HumanModel, InterfacePolicy, NetSizes, Scales};
pub use prior::{
    antisymmetry_residual, initialize_with_prior, linear_prior, local_signal_slope, PretrainConfig,
    PretrainReport, PriorKind, PriorSampler, SharedPrior,
};

/// Weights of the combined loss and the settings of its terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_prior: f64,
    pub lambda_policy: f64,
    pub lambda_decoder: f64,
    /// Proportionality sensitivity. Negative values make distant `θ` pairs
    /// cheap to separate.
    pub gamma: f64,
    /// Counterfactual rollout length.
    pub k: usize,
    pub prior_kind: PriorKind,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_prior: 1.0,
            lambda_policy: 1.0,
            lambda_decoder: 1.0,
            gamma: -0.5,
            k: 10,
            prior_kind: PriorKind::None,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_prior", self.lambda_prior),
            ("lambda_policy", self.lambda_policy),
            ("lambda_decoder", self.lambda_decoder),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        if !self.gamma.is_finite() {
            return Err(Error::Config("gamma must be finite".into()));
        }
        if self.k == 0 {
            return Err(Error::Config("rollout length k must be at least 1".into()));
        }
        Ok(())
    }

    /// Whether the prior term contributes at all.
    pub fn uses_prior(&self) -> bool {
        self.lambda_prior > 0.0 && self.prior_kind != PriorKind::None
    }
}

/// Signals the human model is fit against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicySignals {
    /// `R_ψ(s, θ)` under the current interface weights.
    Current,
    /// The signal stored with each tuple, i.e. what the operator saw.
    #[default]
    Recorded,
}

/// Everything needed to build an [`InterfaceLearner`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerConfig {
    pub weights: LossWeights,
    pub sizes: NetSizes,
    pub lr: f64,
    /// Minibatch steps per training call.
    pub minibatch_steps: usize,
    pub batch_size: usize,
    pub pretrain: PretrainConfig,
    pub policy_signals: PolicySignals,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            weights: LossWeights::default(),
            sizes: NetSizes::default(),
            lr: 1e-3,
            minibatch_steps: 32,
            batch_size: 64,
            pretrain: PretrainConfig::default(),
            policy_signals: PolicySignals::default(),
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Which loss terms to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Terms {
    pub prior: bool,
    pub policy: bool,
    pub decoder: bool,
}

impl Terms {
    pub const ALL: Terms = Terms {
        prior: true,
        policy: true,
        decoder: true,
    };
    pub const PRIOR: Terms = Terms {
        prior: true,
        policy: false,
        decoder: false,
    };
    pub const POLICY: Terms = Terms {
        prior: false,
        policy: true,
        decoder: false,
    };
    pub const DECODER: Terms = Terms {
        prior: false,
        policy: false,
        decoder: true,
    };
}

/// Value of a weighted loss and its gradient for each network's flat
/// parameters, in [`Mlp::flat_params`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub total: f64,
    pub prior: f64,
    pub policy: f64,
    pub decoder: f64,
    pub prior_clamps: usize,
    pub policy_grad: Vec<f64>,
    pub human_grad: Vec<f64>,
    pub decoder_grad: Vec<f64>,
}

/// Per-sample loss means over one training call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossStats {
    pub prior: f64,
    pub policy: f64,
    pub decoder: f64,
    pub total: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrainOutcome {
    /// The buffer was empty.
    Skipped,
    Trained(LossStats),
}

fn flat_grads(net: &Mlp) -> Vec<f64> {
    net.params()
        .flat_map(|p| match &p.grad {
            Some(g) => g.iter().copied().collect::<Vec<_>>(),
            None => vec![0.0; p.value.len()],
        })
        .collect()
}

/// The interface policy, human model and decoder together with their
/// optimizers and the learner's own random stream.
#[derive(Clone)]
pub struct InterfaceLearner {
    env: Environment,
    pub policy: InterfacePolicy,
    pub human_model: HumanModel,
    pub decoder: Decoder,
    config: LearnerConfig,
    opt_policy: Optimizer,
    opt_human: Optimizer,
    opt_decoder: Optimizer,
    prior_sampler: Option<SharedPrior>,
    rng: ChaCha8Rng,
    prior_clamps: u64,
    updates: u64,
}

impl std::fmt::Debug for InterfaceLearner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("InterfaceLearner")
            .field("env", &self.env.kind())
            .field("config", &self.config)
            .field("updates", &self.updates)
            .finish_non_exhaustive()
    }
}

impl InterfaceLearner {
    pub fn new(env: Environment, config: LearnerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let policy = InterfacePolicy::new(&env, &config.sizes.policy, &mut rng)?;
        let human_model = HumanModel::new(&env, &config.sizes.human_model, &mut rng)?;
        let decoder = Decoder::new(&env, config.weights.k, &config.sizes.decoder, &mut rng)?;
        Ok(InterfaceLearner {
            env,
            policy,
            human_model,
            decoder,
            opt_policy: Optimizer::adam(config.lr)?,
            opt_human: Optimizer::adam(config.lr)?,
            opt_decoder: Optimizer::adam(config.lr)?,
            config,
            prior_sampler: None,
            rng,
            prior_clamps: 0,
            updates: 0,
        })
    }

    /// Installs the sampler used by [`PriorKind::Generic`].
    pub fn with_prior_sampler(mut self, sampler: SharedPrior) -> Self {
        self.prior_sampler = Some(sampler);
        self
    }

    pub fn env(&self) -> &Environment {
        &self.env
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.config
    }

    pub fn weights(&self) -> &LossWeights {
        &self.config.weights
    }

    /// Exponent clamps hit by the proportionality prior so far.
    pub fn prior_clamps(&self) -> u64 {
        self.prior_clamps
    }

    /// Optimizer steps taken by [`Self::train_step`].
    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn emit_signal(&self, s: &State, theta: &HiddenInfo) -> Result<Signal> {
        self.policy.emit_signal(s, theta)
    }

    /// Pretrains the interface policy on its configured prior.
    pub fn initialize_with_prior(&mut self) -> Result<PretrainReport> {
        let w = self.config.weights;
        initialize_with_prior(
            &mut self.policy,
            &self.env,
            w.prior_kind,
            w.gamma,
            self.prior_sampler.as_deref(),
            &self.config.pretrain,
            &mut self.rng,
        )
    }

    /// Draws a minibatch of `size` tuples with the extras the prior needs.
    pub fn sample_batch(&mut self, buffer: &ReplayBuffer, size: usize) -> Result<Batch> {
        let tuples = buffer.sample(size, &mut self.rng)?;
        let mut batch = Batch::from_tuples(&tuples)?;
        self.fill_prior_extras(&mut batch)?;
        Ok(batch)
    }

    fn fill_prior_extras(&mut self, batch: &mut Batch) -> Result<()> {
        let w = self.config.weights;
        if !w.uses_prior() {
            return Ok(());
        }
        match w.prior_kind {
            PriorKind::Proportionality => {
                let dims = self.env.dims();
                let mut partner = Array2::zeros((batch.len(), dims.theta));
                for mut row in partner.rows_mut() {
                    let t = self.env.sample_theta(&mut self.rng);
                    row.assign(&ndarray::Array1::from(t.0));
                }
                batch.partner_thetas = Some(partner);
            }
            PriorKind::Generic => {
                let sampler = self
                    .prior_sampler
                    .clone()
                    .ok_or_else(|| Error::Config("generic prior requires a sampler".into()))?;
                batch.prior_targets = Some(prior::sample_targets(
                    sampler.as_ref(),
                    &batch.states,
                    &batch.thetas,
                    self.env.dims().signal,
                    &mut self.rng,
                )?);
            }
            PriorKind::Convexity | PriorKind::None => {}
        }
        Ok(())
    }

    /// Weighted loss over `batch` and its gradients; the networks are left
    /// untouched. Terms with a zero weight are not built at all.
    pub fn evaluate(&self, batch: &Batch, terms: Terms) -> Result<Evaluation> {
        let mut policy = self.policy.net.clone();
        let mut human = self.human_model.net.clone();
        let mut decoder = self.decoder.net.clone();
        let (total, parts, clamps) =
            self.accumulate(batch, terms, &mut policy, &mut human, &mut decoder)?;
        Ok(Evaluation {
            total,
            prior: parts[0],
            policy: parts[1],
            decoder: parts[2],
            prior_clamps: clamps,
            policy_grad: flat_grads(&policy),
            human_grad: flat_grads(&human),
            decoder_grad: flat_grads(&decoder),
        })
    }

    /// Builds the selected terms on a fresh tape, backpropagates and adds
    /// the gradients to the given networks. Returns the weighted total, the
    /// unweighted term values and the clamp count.
    fn accumulate(
        &self,
        batch: &Batch,
        terms: Terms,
        policy_net: &mut Mlp,
        human_net: &mut Mlp,
        decoder_net: &mut Mlp,
    ) -> Result<(f64, [f64; 3], usize)> {
        let w = &self.config.weights;
        let scales = self.policy.scales();
        let mut tape = Tape::new();
        let policy = policy_net.bind(&mut tape, true);
        let mut weighted = Vec::new();
        let mut parts = [0.0; 3];
        let mut clamps = 0;

        if terms.prior && w.uses_prior() {
            let term = match w.prior_kind {
                PriorKind::Convexity => {
                    losses::prior_convexity(&mut tape, &policy, &scales, &batch.states, &batch.thetas)?
                }
                PriorKind::Proportionality => {
                    let partner = batch.partner_thetas.as_ref().ok_or_else(|| {
                        Error::Usage("proportionality prior needs partner θ in the batch".into())
                    })?;
                    let (v, c) = losses::prior_proportionality(
                        &mut tape,
                        &policy,
                        &scales,
                        &batch.states,
                        &batch.thetas,
                        partner,
                        w.gamma,
                    )?;
                    clamps = c;
                    v
                }
                PriorKind::Generic => {
                    let targets = batch.prior_targets.as_ref().ok_or_else(|| {
                        Error::Usage("generic prior needs sampled targets in the batch".into())
                    })?;
                    losses::prior_generic(
                        &mut tape,
                        &policy,
                        &scales,
                        &batch.states,
                        &batch.thetas,
                        targets,
                    )?
                }
                PriorKind::None => unreachable!("uses_prior excludes none"),
            };
            parts[0] = tape.scalar(term);
            weighted.push(tape.scale(term, w.lambda_prior));
        }

        let human_trainable = human_net.bind(&mut tape, true);
        if terms.policy && w.lambda_policy > 0.0 {
            let signals = match self.config.policy_signals {
                PolicySignals::Current => self.signals_for(policy_net, batch)?,
                PolicySignals::Recorded => batch.signals.clone(),
            };
            let term = losses::policy_loss(
                &mut tape,
                &human_trainable,
                &scales,
                &batch.states,
                &signals,
                &batch.actions,
            )?;
            parts[1] = tape.scalar(term);
            weighted.push(tape.scale(term, w.lambda_policy));
        }

        let decoder = decoder_net.bind(&mut tape, true);
        if terms.decoder && w.lambda_decoder > 0.0 {
            let human_frozen = human_net.bind(&mut tape, false);
            let roll = losses::rollout(
                &mut tape,
                &policy,
                &human_frozen,
                &self.env,
                &scales,
                &batch.states,
                &batch.thetas,
                w.k,
            )?;
            let term = losses::decoder_loss(&mut tape, &decoder, &scales, &roll, &batch.thetas)?;
            parts[2] = tape.scalar(term);
            weighted.push(tape.scale(term, w.lambda_decoder));
        }

        let Some((&first, rest)) = weighted.split_first() else {
            return Ok((0.0, parts, clamps));
        };
        let mut root = first;
        for &v in rest {
            root = tape.add(root, v)?;
        }
        let total = tape.scalar(root);
        tape.backward(root)?;
        policy_net.accumulate_grads(&tape, &policy);
        human_net.accumulate_grads(&tape, &human_trainable);
        decoder_net.accumulate_grads(&tape, &decoder);
        Ok((total, parts, clamps))
    }

    fn signals_for(&self, policy_net: &Mlp, batch: &Batch) -> Result<Array2<f64>> {
        let scales = self.policy.scales();
        let input = ndarray::concatenate(
            ndarray::Axis(1),
            &[
                (&batch.states / scales.state).view(),
                (&batch.thetas / scales.theta).view(),
            ],
        )
        .map_err(|e| Error::Usage(e.to_string()))?;
        policy_net.forward_batch(&input)
    }

    /// Applies the gradients of the combined loss on `batch` once.
    pub fn update_on_batch(&mut self, batch: &Batch) -> Result<Evaluation> {
        let mut policy = self.policy.net.clone();
        let mut human = self.human_model.net.clone();
        let mut decoder = self.decoder.net.clone();
        let result = self.accumulate(batch, Terms::ALL, &mut policy, &mut human, &mut decoder);
        let eval = result.map(|(total, parts, clamps)| Evaluation {
            total,
            prior: parts[0],
            policy: parts[1],
            decoder: parts[2],
            prior_clamps: clamps,
            policy_grad: Vec::new(),
            human_grad: Vec::new(),
            decoder_grad: Vec::new(),
        });
        let stepped = eval.as_ref().ok().map(|_| {
            self.opt_policy
                .step(&mut policy)
                .and_then(|_| self.opt_human.step(&mut human))
                .and_then(|_| self.opt_decoder.step(&mut decoder))
        });
        self.policy.net = policy;
        self.human_model.net = human;
        self.decoder.net = decoder;
        let eval = eval?;
        if let Some(step) = stepped {
            step?;
        }
        self.prior_clamps += eval.prior_clamps as u64;
        self.updates += 1;
        Ok(eval)
    }

    /// `minibatch_steps` updates on minibatches of `batch_size` drawn from
    /// `buffer`. Skipped when the buffer is empty.
    pub fn train_step(&mut self, buffer: &ReplayBuffer) -> Result<TrainOutcome> {
        self.train_step_with(buffer, self.config.minibatch_steps, self.config.batch_size)
    }

    pub fn train_step_with(
        &mut self,
        buffer: &ReplayBuffer,
        steps: usize,
        batch_size: usize,
    ) -> Result<TrainOutcome> {
        if buffer.is_empty() {
            return Ok(TrainOutcome::Skipped);
        }
        let mut stats = LossStats::default();
        for _ in 0..steps {
            let batch = self.sample_batch(buffer, batch_size)?;
            let eval = self.update_on_batch(&batch)?;
            let n = batch.len() as f64;
            stats.prior += eval.prior / n;
            stats.policy += eval.policy / n;
            stats.decoder += eval.decoder / n;
            stats.total += eval.total / n;
            stats.steps += 1;
        }
        if stats.steps > 0 {
            let g = stats.steps as f64;
            stats.prior /= g;
            stats.policy /= g;
            stats.decoder /= g;
            stats.total /= g;
        }
        Ok(TrainOutcome::Trained(stats))
    }

    /// Rolls the learner's own human model forward from `s0` under `θ` with
    /// the relaxed dynamics, returning a `k`-step trajectory.
    pub fn rollout_trajectory(&self, s0: &State, theta: &HiddenInfo) -> Result<Trajectory> {
        let k = self.config.weights.k;
        let mut tape = Tape::new();
        let policy = self.policy.net.bind(&mut tape, false);
        let human = self.human_model.net.bind(&mut tape, false);
        let start = Array2::from_shape_vec((1, s0.dim()), s0.0.clone())
            .map_err(|e| Error::Usage(e.to_string()))?;
        let th = Array2::from_shape_vec((1, theta.dim()), theta.0.clone())
            .map_err(|e| Error::Usage(e.to_string()))?;
        let roll = losses::rollout(
            &mut tape,
            &policy,
            &human,
            &self.env,
            &self.policy.scales(),
            &start,
            &th,
            k,
        )?;
        let pairs = roll
            .states
            .iter()
            .zip(&roll.actions)
            .map(|(s, a)| {
                (
                    State(tape.value(*s).row(0).to_vec()),
                    Action(tape.value(*a).row(0).to_vec()),
                )
            })
            .collect();
        Trajectory::new(pairs, theta.clone(), k)
    }

    /// Mean `‖θ − Δ(τ)‖` over `samples` fresh `(s⁰, θ)` rollouts of the
    /// learner's own models.
    pub fn decode_error<R: Rng + ?Sized>(&self, samples: usize, rng: &mut R) -> Result<f64> {
        let mut total = 0.0;
        for _ in 0..samples {
            let (s0, theta) = self.env.reset(rng);
            let traj = self.rollout_trajectory(&s0, &theta)?;
            let est = self.decoder.decode(&traj)?;
            total += theta
                .0
                .iter()
                .zip(&est.0)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
        }
        Ok(total / samples.max(1) as f64)
    }

    pub fn antisymmetry_residual<R: Rng + ?Sized>(&self, samples: usize, rng: &mut R) -> Result<f64> {
        antisymmetry_residual(&self.policy, &self.env, samples, rng)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(&self.policy.net, &self.human_model.net, &self.decoder.net)
    }
}
