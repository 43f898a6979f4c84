//! Procedurally generated partially observable gridworlds with scripted
//! experts and automatic memory dependency annotations.
//!
//! Every task exposes the same 7×7×3 egocentric observation and the same
//! 7-way action space. An episode is fully determined by its parameters, its
//! seed and the actions taken.

pub mod command_recall;
pub mod counting;
pub mod grid;
pub mod hallway;
pub mod ordering;

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use command_recall::{CommandRecall, CommandRecallParams};
pub use counting::{Counting, CountingParams};
pub use grid::{Cell, Dir, GridObservation, Object, OBS_LEN};
pub use hallway::{Hallway, HallwayParams};
pub use ordering::{Ordering, OrderingParams};

pub const NUM_ACTIONS: usize = 7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum Action {
    TurnLeft = 0,
    TurnRight = 1,
    Forward = 2,
    SelectLeftDoor = 3,
    SelectRightDoor = 4,
    Interact = 5,
    Nop = 6,
}

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [
        Action::TurnLeft,
        Action::TurnRight,
        Action::Forward,
        Action::SelectLeftDoor,
        Action::SelectRightDoor,
        Action::Interact,
        Action::Nop,
    ];

    pub fn from_id(id: usize) -> Option<Action> {
        Self::ALL.get(id).copied()
    }

    pub fn id(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum EnvError {
    #[error("invalid task parameters: {0}")]
    InvalidParams(&'static str),
    #[error("action id {0} out of range")]
    InvalidAction(usize),
    #[error("step called after the episode ended")]
    EpisodeDone,
    #[error("unknown task `{0}`")]
    UnknownTask(alloc::string::String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Hallway,
    Ordering,
    Counting,
    CommandRecall,
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] =
        [TaskKind::Hallway, TaskKind::Ordering, TaskKind::Counting, TaskKind::CommandRecall];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Hallway => "hallway",
            TaskKind::Ordering => "ordering",
            TaskKind::Counting => "counting",
            TaskKind::CommandRecall => "command_recall",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| EnvError::UnknownTask(s.into()))
    }
}

/// Task choice plus its parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum TaskParams {
    Hallway(HallwayParams),
    Ordering(OrderingParams),
    Counting(CountingParams),
    CommandRecall(CommandRecallParams),
}

impl TaskParams {
    pub fn kind(&self) -> TaskKind {
        match self {
            TaskParams::Hallway(_) => TaskKind::Hallway,
            TaskParams::Ordering(_) => TaskKind::Ordering,
            TaskParams::Counting(_) => TaskKind::Counting,
            TaskParams::CommandRecall(_) => TaskKind::CommandRecall,
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        match self {
            TaskParams::Hallway(p) => p.validate(),
            TaskParams::Ordering(p) => p.validate(),
            TaskParams::Counting(p) => p.validate(),
            TaskParams::CommandRecall(p) => p.validate(),
        }
    }

    /// Maximum episode length.
    pub fn horizon(&self) -> usize {
        match self {
            TaskParams::Hallway(p) => p.horizon(),
            TaskParams::Ordering(p) => p.horizon(),
            TaskParams::Counting(p) => p.horizon(),
            TaskParams::CommandRecall(p) => p.horizon(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalReason {
    Success,
    WrongChoice,
    Timeout,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub success: bool,
    /// Actions taken.
    pub length: usize,
    pub reason: TerminalReason,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    /// Next observation; `None` once the episode is over.
    pub observation: Option<GridObservation>,
    pub done: bool,
    pub result: Option<EpisodeResult>,
}

#[derive(Clone, Debug, PartialEq)]
enum Task {
    Hallway(Hallway),
    Ordering(Ordering),
    Counting(Counting),
    CommandRecall(CommandRecall),
}

macro_rules! dispatch {
    ($task:expr, $t:ident => $e:expr) => {
        match $task {
            Task::Hallway($t) => $e,
            Task::Ordering($t) => $e,
            Task::Counting($t) => $e,
            Task::CommandRecall($t) => $e,
        }
    };
}

/// A running episode.
#[derive(Clone, Debug, PartialEq)]
pub struct Env {
    params: TaskParams,
    seed: u64,
    task: Task,
    t: usize,
    horizon: usize,
    result: Option<EpisodeResult>,
}

/// Starts an episode; the first observation is at step 0.
pub fn reset(params: &TaskParams, seed: u64) -> Result<(Env, GridObservation), EnvError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let task = match params {
        TaskParams::Hallway(p) => Task::Hallway(Hallway::sample(p, &mut rng)),
        TaskParams::Ordering(p) => Task::Ordering(Ordering::sample(p, &mut rng)),
        TaskParams::Counting(p) => Task::Counting(Counting::sample(p, &mut rng)),
        TaskParams::CommandRecall(p) => Task::CommandRecall(CommandRecall::sample(p, &mut rng)),
    };
    let mut env = Env { params: *params, seed, task, t: 0, horizon: params.horizon(), result: None };
    let obs = dispatch!(&mut env.task, x => x.observe(0));
    Ok((env, obs))
}

impl Env {
    pub fn params(&self) -> &TaskParams {
        &self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Actions taken so far.
    pub fn steps(&self) -> usize {
        self.t
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn is_done(&self) -> bool {
        self.result.is_some()
    }

    pub fn result(&self) -> Option<EpisodeResult> {
        self.result
    }

    pub fn hallway(&self) -> Option<&Hallway> {
        match &self.task {
            Task::Hallway(h) => Some(h),
            _ => None,
        }
    }

    pub fn ordering(&self) -> Option<&Ordering> {
        match &self.task {
            Task::Ordering(o) => Some(o),
            _ => None,
        }
    }

    pub fn counting(&self) -> Option<&Counting> {
        match &self.task {
            Task::Counting(c) => Some(c),
            _ => None,
        }
    }

    pub fn command_recall(&self) -> Option<&CommandRecall> {
        match &self.task {
            Task::CommandRecall(c) => Some(c),
            _ => None,
        }
    }

    pub fn step_id(&mut self, id: usize) -> Result<StepOutcome, EnvError> {
        let action = Action::from_id(id).ok_or(EnvError::InvalidAction(id))?;
        self.step(action)
    }

    pub fn step(&mut self, action: Action) -> Result<StepOutcome, EnvError> {
        if self.result.is_some() {
            return Err(EnvError::EpisodeDone);
        }
        let t = self.t;
        let terminal = dispatch!(&mut self.task, x => x.apply(action, t));
        self.t += 1;
        let reason = terminal.or((self.t >= self.horizon).then_some(TerminalReason::Timeout));
        if let Some(reason) = reason {
            let result = EpisodeResult { success: reason == TerminalReason::Success, length: self.t, reason };
            self.result = Some(result);
            return Ok(StepOutcome { observation: None, done: true, result: Some(result) });
        }
        let t = self.t;
        let obs = dispatch!(&mut self.task, x => x.observe(t));
        Ok(StepOutcome { observation: Some(obs), done: false, result: None })
    }

    /// The scripted expert's choice at the current step.
    pub fn expert_action(&self) -> Result<Action, EnvError> {
        if self.result.is_some() {
            return Err(EnvError::EpisodeDone);
        }
        Ok(dispatch!(&self.task, x => x.expert(self.t)))
    }

    /// Earlier steps whose observations the current decision depends on.
    pub fn recall(&self) -> Vec<usize> {
        if self.result.is_some() {
            return Vec::new();
        }
        dispatch!(&self.task, x => x.recall(self.t))
    }
}

/// One complete scripted-expert episode.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpertRollout {
    pub observations: Vec<GridObservation>,
    pub actions: Vec<Action>,
    /// Memory dependency pairs `(p, q)`, sorted.
    pub pairs: Vec<(usize, usize)>,
    pub result: EpisodeResult,
}

pub fn expert_rollout(params: &TaskParams, seed: u64) -> Result<ExpertRollout, EnvError> {
    let (mut env, obs) = reset(params, seed)?;
    let mut observations = alloc::vec![obs];
    let mut actions = Vec::new();
    let mut pairs = Vec::new();
    loop {
        let q = env.steps();
        pairs.extend(env.recall().into_iter().map(|p| (p, q)));
        let action = env.expert_action()?;
        actions.push(action);
        let out = env.step(action)?;
        match out.observation {
            Some(o) => observations.push(o),
            None => {
                pairs.sort_unstable();
                pairs.dedup();
                let result = out.result.expect("finished episodes carry a result");
                return Ok(ExpertRollout { observations, actions, pairs, result });
            }
        }
    }
}

/// Replays `actions` from `(params, seed)` and collects the annotations the
/// expert rule assigns to that action sequence.
pub fn expert_pairs(
    params: &TaskParams,
    seed: u64,
    actions: &[Action],
) -> Result<Vec<(usize, usize)>, EnvError> {
    let (mut env, _) = reset(params, seed)?;
    let mut pairs = Vec::new();
    for &a in actions {
        let q = env.steps();
        pairs.extend(env.recall().into_iter().map(|p| (p, q)));
        env.step(a)?;
    }
    pairs.sort_unstable();
    pairs.dedup();
    Ok(pairs)
}

/// Replays `actions` and returns the observation seen before each one.
pub fn replay(
    params: &TaskParams,
    seed: u64,
    actions: &[Action],
) -> Result<(Vec<GridObservation>, Option<EpisodeResult>), EnvError> {
    let (mut env, obs) = reset(params, seed)?;
    let mut observations = alloc::vec![obs];
    for &a in actions {
        if let Some(o) = env.step(a)?.observation {
            observations.push(o);
        }
    }
    observations.truncate(actions.len().max(1));
    Ok((observations, env.result()))
}
