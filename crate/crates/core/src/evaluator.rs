//! Closed-loop rollouts and run summaries.

use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envgym::{self, EnvError, Env, GridObservation, TaskKind, TaskParams};
use crate::model::{Model, ModelError, Policy};
use crate::stats::{self, StatsError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("horizon {horizon} exceeds the model context of {max_steps} steps")]
    ContextOverflow { horizon: usize, max_steps: usize },
    #[error("no trials requested")]
    NoTrials,
}

/// Anything that picks an action each step of an episode.
pub trait Agent {
    fn begin_episode(&mut self);
    fn act(&mut self, env: &Env, obs: &GridObservation) -> Result<usize, EvalError>;
}

/// Plays the scripted expert.
#[derive(Clone, Copy, Debug, Default)]
pub struct ExpertAgent;

impl Agent for ExpertAgent {
    fn begin_episode(&mut self) {}

    fn act(&mut self, env: &Env, _obs: &GridObservation) -> Result<usize, EvalError> {
        Ok(env.expert_action()?.id())
    }
}

/// Uniformly random actions.
#[derive(Clone, Debug)]
pub struct RandomAgent(pub ChaCha8Rng);

impl RandomAgent {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }
}

impl Agent for RandomAgent {
    fn begin_episode(&mut self) {}

    fn act(&mut self, _env: &Env, _obs: &GridObservation) -> Result<usize, EvalError> {
        Ok(self.0.gen_range(0..envgym::NUM_ACTIONS))
    }
}

impl Agent for Policy<'_> {
    fn begin_episode(&mut self) {
        self.reset();
    }

    fn act(&mut self, _env: &Env, obs: &GridObservation) -> Result<usize, EvalError> {
        Ok(Policy::act(self, obs)?)
    }
}

/// Episode seeds for evaluation; disjoint streams from dataset generation
/// only if `seed` differs from the generation seed.
pub fn trial_seeds(seed: u64, n: usize) -> Vec<u64> {
    crate::dataset::episode_seeds(seed, n)
}

/// Runs one episode to completion and reports success.
pub fn run_episode(agent: &mut dyn Agent, params: &TaskParams, seed: u64) -> Result<bool, EvalError> {
    let (mut env, mut obs) = envgym::reset(params, seed)?;
    agent.begin_episode();
    loop {
        let a = agent.act(&env, &obs)?;
        let out = env.step_id(a)?;
        if let Some(result) = out.result {
            return Ok(result.success);
        }
        obs = out.observation.ok_or(EnvError::EpisodeDone)?;
    }
}

/// Fraction of `trials` episodes the agent solves.
pub fn rollout_agent(agent: &mut dyn Agent, params: &TaskParams, trials: usize, seed: u64) -> Result<f64, EvalError> {
    if trials == 0 {
        return Err(EvalError::NoTrials);
    }
    let mut wins = 0usize;
    for s in trial_seeds(seed, trials) {
        wins += usize::from(run_episode(agent, params, s)?);
    }
    Ok(wins as f64 / trials as f64)
}

/// Greedy closed-loop success rate of `model`.
pub fn rollout(model: &Model, params: &TaskParams, trials: usize, seed: u64) -> Result<f64, EvalError> {
    let (horizon, max_steps) = (params.horizon(), model.config().max_steps);
    if horizon > max_steps {
        return Err(EvalError::ContextOverflow { horizon, max_steps });
    }
    rollout_agent(&mut Policy::new(model), params, trials, seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub task: TaskKind,
    pub label: String,
    pub seeds: Vec<u64>,
    pub rates: Vec<f64>,
    pub trials: usize,
    pub mean: f64,
    pub median: f64,
    /// 90% Student-t half-width; 0 with fewer than two seeds.
    pub half_width: f64,
    /// Welch two-sided p against a baseline, when given.
    pub p_value: Option<f64>,
}

impl RunReport {
    pub fn new(task: TaskKind, label: String, seeds: Vec<u64>, rates: Vec<f64>, trials: usize) -> Self {
        let half_width = stats::aggregate(&rates).map_or(0.0, |i| i.half_width);
        Self {
            task,
            label,
            seeds,
            mean: stats::mean(&rates),
            median: stats::median(&rates),
            rates,
            trials,
            half_width,
            p_value: None,
        }
    }

    pub fn with_baseline(mut self, baseline: &RunReport) -> Result<Self, EvalError> {
        self.p_value = Some(stats::welch_t_test(&self.rates, &baseline.rates)?.p);
        Ok(self)
    }
}

/// Mean supervised-head attention at annotated token coordinates and over
/// the remaining causal coordinates, pooled across `data`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionMass {
    pub annotated: f64,
    pub other: f64,
}

impl AttentionMass {
    pub fn ratio(&self) -> f64 {
        self.annotated / self.other
    }
}

pub fn attention_mass(model: &Model, data: &[crate::dataset::Trajectory]) -> Result<AttentionMass, EvalError> {
    let layer = model.config().supervised_layer();
    let heads = model.config().supervised_heads();
    let (mut on, mut n_on, mut off, mut n_off) = (0.0, 0usize, 0.0, 0usize);
    for t in data.iter().filter(|t| !t.pairs.is_empty()) {
        let out = model.infer(&t.observations, &t.actions)?;
        let marked: alloc::collections::BTreeSet<(usize, usize)> =
            t.pairs.iter().map(|&(p, q)| (2 * q, 2 * p)).collect();
        for &h in &heads {
            let a = &out.attn[layer][h];
            let n = a.shape()[0];
            for r in 0..n {
                for c in 0..=r {
                    if marked.contains(&(r, c)) {
                        on += a.at2(r, c);
                        n_on += 1;
                    } else {
                        off += a.at2(r, c);
                        n_off += 1;
                    }
                }
            }
        }
    }
    Ok(AttentionMass { annotated: on / n_on.max(1) as f64, other: off / n_off.max(1) as f64 })
}
