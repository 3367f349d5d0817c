//! Grids of (algorithm × seed) runs against simulated humans, with
//! aggregation, rank-sum comparison and file outputs.

pub mod output;
pub mod stats;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baselines::BayesConfig;
use crate::domain::DEFAULT_BUFFER_CAPACITY;
use crate::env::EnvKind;
use crate::error::{Error, Result};
use crate::human::{HumanAgent, HumanConfig, HumanStructure, SimulatedHuman};
use crate::learning::checkpoint::hex_digest;
use crate::learning::{LearnerConfig, LossStats};
use crate::session::{stream_rng, Algorithm, Session, SessionConfig, HUMAN_STREAM};

pub use output::{emit_outputs, write_record, read_records, OutputFiles};
pub use stats::{aggregate, compare, mann_whitney_less, moving_average, CellSummary, Comparison, Summary};

/// Overrides the output root of every run.
pub const OUT_ENV_VAR: &str = "ATTUNE_OUT";

/// Which pretrained operator each run is paired with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pairing {
    /// Cycle by seed through all structures, so algorithms share a seed's
    /// human; an algorithm's own structure is replaced by the next one.
    Rotate,
    /// Always this structure. Runs whose algorithm shares it are rejected.
    Fixed(HumanStructure),
    /// An operator that was never pretrained.
    Untrained,
}

impl Pairing {
    pub fn structure_for(self, algorithm: Algorithm, seed: u64) -> Result<Option<HumanStructure>> {
        let own = algorithm.structure();
        match self {
            Pairing::Untrained => Ok(None),
            Pairing::Fixed(s) if Some(s) == own => Err(Error::Config(format!(
                "{algorithm} cannot be evaluated with a human pretrained on its own structure ({s})"
            ))),
            Pairing::Fixed(s) => Ok(Some(s)),
            Pairing::Rotate => {
                let all = HumanStructure::ALL;
                let i = (seed % all.len() as u64) as usize;
                let pick = if Some(all[i]) == own { all[(i + 1) % all.len()] } else { all[i] };
                Ok(Some(pick))
            }
        }
    }
}

/// Learner settings for experiment grids: fewer, smaller minibatches per
/// interaction than [`LearnerConfig::default`], so a grid fits on one core.
pub fn desk_schedule() -> LearnerConfig {
    LearnerConfig {
        minibatch_steps: 8,
        batch_size: 32,
        ..LearnerConfig::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuickProfile {
    pub seeds: usize,
    pub interactions: usize,
}

impl Default for QuickProfile {
    fn default() -> Self {
        QuickProfile {
            seeds: 3,
            interactions: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub env: EnvKind,
    pub algorithms: Vec<Algorithm>,
    pub interactions: usize,
    pub seeds: Vec<u64>,
    pub learner: LearnerConfig,
    pub human: HumanConfig,
    pub pairing: Pairing,
    pub bayes: BayesConfig,
    pub buffer_capacity: usize,
    /// Interactions at the end of each run that enter comparisons.
    pub last_window: usize,
    /// Trailing moving-average width for plotted curves.
    pub smoothing_window: usize,
    pub quick: QuickProfile,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            env: EnvKind::Treasure { n: 3 },
            algorithms: Algorithm::ALL.to_vec(),
            interactions: 1000,
            seeds: (0..5).collect(),
            learner: desk_schedule(),
            human: HumanConfig::default(),
            pairing: Pairing::Rotate,
            bayes: BayesConfig::default(),
            buffer_capacity: DEFAULT_BUFFER_CAPACITY,
            last_window: 100,
            smoothing_window: 25,
            quick: QuickProfile::default(),
            out_dir: PathBuf::from("results"),
        }
    }
}

impl ExperimentConfig {
    /// Defaults for the Highway grid: 10 seeds × 350 interactions.
    pub fn highway() -> Self {
        ExperimentConfig {
            env: EnvKind::Highway,
            interactions: 350,
            seeds: (0..10).collect(),
            last_window: 50,
            ..Self::default()
        }
    }

    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        if path.extension().is_some_and(|e| e == "json") {
            Self::from_json(&text)
        } else {
            Self::from_toml(&text)
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.env.build()?;
        self.learner.validate()?;
        if self.algorithms.is_empty() {
            return Err(Error::Config("no algorithms selected".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("no seeds selected".into()));
        }
        if self.last_window == 0 || self.smoothing_window == 0 {
            return Err(Error::Config("windows must be positive".into()));
        }
        for &a in &self.algorithms {
            self.pairing.structure_for(a, 0)?;
        }
        Ok(())
    }

    /// Applies the quick profile: the first seeds and a shorter run.
    pub fn quick(mut self) -> Self {
        self.seeds.truncate(self.quick.seeds.max(1));
        while self.seeds.len() < self.quick.seeds {
            self.seeds.push(self.seeds.last().map_or(0, |s| s + 1));
        }
        self.interactions = self.quick.interactions;
        self.last_window = self.last_window.min(self.interactions.max(1));
        self
    }

    /// sha256 of the canonical (key-sorted) JSON form. The output directory
    /// does not enter the hash.
    pub fn hash(&self) -> Result<String> {
        let mut value = serde_json::to_value(self)?;
        if let Some(map) = value.as_object_mut() {
            map.remove("out_dir");
        }
        Ok(hex_digest(serde_json::to_string(&value)?.as_bytes()))
    }

    /// `out_dir`, unless the environment variable overrides it.
    pub fn output_root(&self) -> PathBuf {
        std::env::var_os(OUT_ENV_VAR).map_or_else(|| self.out_dir.clone(), PathBuf::from)
    }

    pub fn session_config(&self, algorithm: Algorithm) -> SessionConfig {
        SessionConfig {
            env: self.env,
            algorithm,
            learner: self.learner.clone(),
            bayes: self.bayes.clone(),
            buffer_capacity: self.buffer_capacity,
        }
    }
}

/// Everything one (algorithm, seed) run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub env: String,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub config_hash: String,
    pub human: Option<HumanStructure>,
    pub metrics: Vec<f64>,
    pub losses: Vec<Option<LossStats>>,
    pub wall_clock_secs: f64,
    /// Set when the run aborted; `metrics` then holds the completed prefix.
    pub failure: Option<String>,
}

impl RunRecord {
    pub fn is_complete(&self, interactions: usize) -> bool {
        self.failure.is_none() && self.metrics.len() == interactions
    }
}

/// Plays `config.interactions` interactions of `algorithm` with a fresh
/// simulated human. Non-finite training aborts the run with a failure
/// marker; other errors propagate.
pub fn run_session(config: &ExperimentConfig, algorithm: Algorithm, seed: u64) -> Result<RunRecord> {
    let started = Instant::now();
    let mut record = RunRecord {
        env: config.env.label(),
        algorithm,
        seed,
        config_hash: config.hash()?,
        human: config.pairing.structure_for(algorithm, seed)?,
        metrics: Vec::with_capacity(config.interactions),
        losses: Vec::with_capacity(config.interactions),
        wall_clock_secs: 0.0,
        failure: None,
    };
    if config.interactions > 0 {
        let mut session = Session::new(config.session_config(algorithm), seed)?;
        let env = session.env().clone();
        let mut rng = stream_rng(seed, HUMAN_STREAM);
        let mut human = match record.human {
            Some(structure) => SimulatedHuman::pretrained(&env, structure, config.human.clone(), &mut rng)?,
            None => SimulatedHuman::new(&env, config.human.clone(), &mut rng)?,
        };
        if let Err(e) = play(&mut session, &mut human, config.interactions, &mut record) {
            match e {
                Error::Training { .. } => {
                    log::error!("{algorithm} seed {seed} aborted: {e}");
                    record.failure = Some(e.to_string());
                }
                other => return Err(other),
            }
        }
    }
    record.wall_clock_secs = started.elapsed().as_secs_f64();
    Ok(record)
}

/// Every (algorithm, seed) cell of the grid, algorithm-major.
pub fn grid_cells(config: &ExperimentConfig) -> Vec<(Algorithm, u64)> {
    config
        .algorithms
        .iter()
        .flat_map(|&a| config.seeds.iter().map(move |&s| (a, s)))
        .collect()
}

/// Runs `cells` on up to `jobs` threads. Runs share nothing, so the records
/// do not depend on `jobs` or on completion order; they come back in the
/// order of `cells`. `on_done` sees each record as soon as it finishes.
pub fn run_grid(
    config: &ExperimentConfig,
    cells: &[(Algorithm, u64)],
    jobs: usize,
    on_done: &(dyn Fn(&RunRecord) -> Result<()> + Sync),
) -> Result<Vec<RunRecord>> {
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<RunRecord>>>> = cells.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, cells.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(alg, seed)) = cells.get(i) else { break };
                let out = run_session(config, alg, seed).and_then(|r| on_done(&r).map(|()| r));
                *slots[i].lock().unwrap_or_else(|p| p.into_inner()) = Some(out);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().unwrap_or_else(|p| p.into_inner()).expect("every cell ran"))
        .collect()
}

/// Drives `interactions` interactions of `session` with `human`.
pub fn play(
    session: &mut Session,
    human: &mut dyn HumanAgent,
    interactions: usize,
    record: &mut RunRecord,
) -> Result<()> {
    for _ in 0..interactions {
        let mut obs = session.begin()?;
        human.begin_interaction(session.current_theta().expect("interaction started"));
        let result = loop {
            let a = human.act(&obs.state, &obs.signal)?;
            let r = session.step(&a)?;
            match r.signal.clone() {
                Some(signal) if !r.done => {
                    obs.state = r.state;
                    obs.signal = signal;
                }
                _ => break r,
            }
        };
        let metric = result.metric.expect("finished interaction has a metric");
        if !metric.is_finite() {
            return Err(Error::Training {
                param: "metric".into(),
                reason: format!("non-finite metric {metric}"),
            });
        }
        record.metrics.push(metric);
        record.losses.push(result.training);
        human.end_interaction(session.episode().expect("interaction started"))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotation_skips_the_algorithms_own_structure() {
        for alg in Algorithm::ALL {
            for seed in 0..12 {
                let s = Pairing::Rotate.structure_for(alg, seed).unwrap();
                assert!(s.is_some());
                assert_ne!(s, alg.structure());
            }
        }
        let seen: std::collections::BTreeSet<_> = (0..4)
            .map(|seed| Pairing::Rotate.structure_for(Algorithm::Limit, seed).unwrap().unwrap().to_string())
            .collect();
        assert_eq!(seen.len(), 4);
    }

    #[test]
    fn fixed_pairing_rejects_the_diagonal() {
        let p = Pairing::Fixed(HumanStructure::Convex);
        assert!(p.structure_for(Algorithm::OursC, 0).is_err());
        assert!(p.structure_for(Algorithm::Conv, 0).is_err());
        assert!(p.structure_for(Algorithm::Limit, 0).is_ok());
        let cfg = ExperimentConfig {
            pairing: p,
            ..ExperimentConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn defaults_round_trip_through_both_formats() {
        for cfg in [ExperimentConfig::default(), ExperimentConfig::highway()] {
            assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
            assert_eq!(ExperimentConfig::from_json(&cfg.to_json().unwrap()).unwrap(), cfg);
        }
        let fixed = ExperimentConfig {
            pairing: Pairing::Fixed(HumanStructure::Random),
            ..ExperimentConfig::default()
        };
        assert_eq!(ExperimentConfig::from_toml(&fixed.to_toml().unwrap()).unwrap(), fixed);
    }

    #[test]
    fn empty_file_means_all_defaults() {
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::default());
        assert_eq!(ExperimentConfig::from_json("{}").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn hash_ignores_output_directory_only() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig {
            out_dir: "elsewhere".into(),
            ..a.clone()
        };
        let c = ExperimentConfig {
            interactions: 999,
            ..a.clone()
        };
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        assert_ne!(a.hash().unwrap(), c.hash().unwrap());
        assert_eq!(a.hash().unwrap().len(), 64);
    }

    #[test]
    fn quick_profile_shrinks_the_grid() {
        let q = ExperimentConfig::default().quick();
        assert_eq!(q.seeds, vec![0, 1, 2]);
        assert_eq!(q.interactions, 300);
    }

    #[test]
    fn zero_interactions_give_an_empty_record() {
        let cfg = ExperimentConfig {
            interactions: 0,
            ..ExperimentConfig::default()
        };
        let r = run_session(&cfg, Algorithm::OursC, 3).unwrap();
        assert!(r.metrics.is_empty() && r.losses.is_empty());
        assert!(r.is_complete(0));
    }

    #[test]
    fn grid_cells_cover_the_product() {
        let cfg = ExperimentConfig {
            algorithms: vec![Algorithm::Limit, Algorithm::OursC],
            seeds: vec![4, 7],
            ..ExperimentConfig::default()
        };
        let cells = grid_cells(&cfg);
        assert_eq!(cells.len(), 4);
        assert_eq!(cells[1], (Algorithm::Limit, 7));
    }

    #[test]
    fn grid_reports_callback_errors() {
        let cfg = ExperimentConfig {
            interactions: 0,
            ..ExperimentConfig::default()
        };
        let cells = [(Algorithm::Bayes, 0), (Algorithm::Limit, 1)];
        let out = run_grid(&cfg, &cells, 2, &|r| {
            if r.algorithm == Algorithm::Limit {
                Err(Error::Usage("disk full".into()))
            } else {
                Ok(())
            }
        });
        assert!(out.is_err());
    }
}
