//! Comparison interfaces: a linear map tuned by Bayesian optimization,
//! frozen prior-only networks, and the no-prior end-to-end learner.

pub mod bayes;
pub mod gp;
mod linear;

pub use bayes::{BayesConfig, BayesOpt};
pub use gp::Gp;
pub use linear::LinearInterface;

use rand::Rng;

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::learning::{initialize_with_prior, InterfacePolicy, LossWeights, PretrainConfig, PriorKind};

/// A policy trained on `kind` alone, never updated afterwards.
pub fn prior_only_interface<R: Rng + ?Sized>(
    env: &Environment,
    kind: PriorKind,
    hidden: &[usize],
    gamma: f64,
    pretrain: &PretrainConfig,
    rng: &mut R,
) -> Result<InterfacePolicy> {
    if !matches!(kind, PriorKind::Proportionality | PriorKind::Convexity) {
        return Err(Error::Config(format!("prior-only interface needs proportionality or convexity, got {kind}")));
    }
    let mut policy = InterfacePolicy::new(env, hidden, rng)?;
    initialize_with_prior(&mut policy, env, kind, gamma, None, pretrain, rng)?;
    Ok(policy)
}

/// Loss weights of the end-to-end baseline: no prior term.
pub fn limit_config() -> LossWeights {
    LossWeights {
        lambda_prior: 0.0,
        lambda_policy: 1.0,
        lambda_decoder: 1.0,
        prior_kind: PriorKind::None,
        ..LossWeights::default()
    }
}
