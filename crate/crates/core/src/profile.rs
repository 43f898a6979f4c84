//! The two experiment scales. `Full` is the large-scale configuration;
//! `Desk` shrinks environments, model and data so that a complete train and
//! evaluate cycle fits in minutes on one CPU core.
//!
//! | setting                         | full                 | desk                |
//! |---------------------------------|----------------------|---------------------|
//! | Hallway length                  | 30                   | 6                   |
//! | Ordering length / S / Q         | 50 / 18 / 9          | 12 / 6 / 3          |
//! | Counting rooms, gallery         | 20 rooms, 6 steps    | 8 rooms, 3 steps    |
//! | Counting object pool            | 18                   | 6                   |
//! | CommandRecall C/show/delay/hold | 10 / 4 / 18 / 4      | 5 / 2 / 8 / 2       |
//! | d_model, layers, heads          | 512, 4, 2            | 64, 2, 2            |
//! | batch, learning rate            | 64, 1e-4             | 16, 1e-3            |
//! | epochs (tuner/vanilla)          | per task, 120 to 600 | 30 / 30             |
//! | demonstrations                  | 4000 to 10000        | 500 to 1000         |
//! | evaluation                      | 1000 trials          | 200 trials, 3 seeds |

use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::AdamConfig;
use crate::envgym::{
    CommandRecallParams, CountingParams, HallwayParams, OrderingParams, TaskKind, TaskParams,
};
use crate::model::ModelConfig;
use crate::trainer::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Full,
    Desk,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    AttentionTuner,
    Vanilla,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::AttentionTuner => "attentiontuner",
            Method::Vanilla => "vanilla",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = &'static str;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "attentiontuner" | "attention_tuner" | "attention-tuner" => Ok(Method::AttentionTuner),
            "vanilla" => Ok(Method::Vanilla),
            _ => Err("method must be attentiontuner or vanilla"),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Full => "full",
            Profile::Desk => "desk",
        })
    }
}

impl FromStr for Profile {
    type Err = &'static str;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Profile::Full),
            "desk" => Ok(Profile::Desk),
            _ => Err("profile must be full or desk"),
        }
    }
}

/// Memory loss weight used by AttentionTuner.
pub const LAMBDA: f64 = 10.0;

impl Profile {
    pub fn task_params(self, task: TaskKind) -> TaskParams {
        match (self, task) {
            (Profile::Full, TaskKind::Hallway) => TaskParams::Hallway(HallwayParams { length: 30, object_pool: 18 }),
            (Profile::Desk, TaskKind::Hallway) => TaskParams::Hallway(HallwayParams { length: 6, object_pool: 4 }),
            (Profile::Full, TaskKind::Ordering) => {
                TaskParams::Ordering(OrderingParams { length: 50, sequence_len: 18, queries: 9 })
            }
            (Profile::Desk, TaskKind::Ordering) => {
                TaskParams::Ordering(OrderingParams { length: 12, sequence_len: 6, queries: 3 })
            }
            (Profile::Full, TaskKind::Counting) => TaskParams::Counting(CountingParams {
                length: 20,
                test_freq: 0.3,
                empty_freq: 0.1,
                gallery_steps: 6,
                object_pool: 18,
            }),
            (Profile::Desk, TaskKind::Counting) => TaskParams::Counting(CountingParams {
                length: 8,
                test_freq: 0.3,
                empty_freq: 0.1,
                gallery_steps: 3,
                object_pool: 6,
            }),
            (Profile::Full, TaskKind::CommandRecall) => {
                TaskParams::CommandRecall(CommandRecallParams { commands: 10, show: 4, delay: 18, hold: 4 })
            }
            (Profile::Desk, TaskKind::CommandRecall) => {
                TaskParams::CommandRecall(CommandRecallParams { commands: 5, show: 2, delay: 8, hold: 2 })
            }
        }
    }

    pub fn model_config(self) -> ModelConfig {
        match self {
            Profile::Full => ModelConfig::full(),
            Profile::Desk => ModelConfig::desk(),
        }
    }

    pub fn train_config(self, task: TaskKind, method: Method, seed: u64) -> TrainConfig {
        let lambda = match method {
            Method::AttentionTuner => LAMBDA,
            Method::Vanilla => 0.0,
        };
        match self {
            Profile::Full => TrainConfig {
                lambda,
                batch_size: 64,
                adam: AdamConfig::default(),
                epochs: full_epochs(task, method),
                seed,
            },
            Profile::Desk => TrainConfig {
                lambda,
                batch_size: 16,
                adam: AdamConfig { learning_rate: 1e-3, ..AdamConfig::default() },
                epochs: 30,
                seed,
            },
        }
    }

    pub fn demonstrations(self, task: TaskKind) -> usize {
        match (self, task) {
            (Profile::Full, TaskKind::CommandRecall) => 4000,
            (Profile::Full, TaskKind::Counting) => 10_000,
            (Profile::Full, _) => 5000,
            (Profile::Desk, TaskKind::Hallway) => 500,
            (Profile::Desk, _) => 1000,
        }
    }

    pub fn eval_trials(self) -> usize {
        match self {
            Profile::Full => 1000,
            Profile::Desk => 200,
        }
    }

    pub fn seeds(self) -> usize {
        match self {
            Profile::Full => 5,
            Profile::Desk => 3,
        }
    }
}

/// Full-scale epoch budgets; CommandRecall shares the non-Counting budget.
pub fn full_epochs(task: TaskKind, method: Method) -> usize {
    match (task, method) {
        (TaskKind::Counting, _) => 600,
        (_, Method::AttentionTuner) => 300,
        (_, Method::Vanilla) => 600,
    }
}
