//! Demonstration trajectories, their validation, and the annotation
//! manipulations used by the ablations.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::envgym::{self, Action, EnvError, GridObservation, TaskKind, TaskParams, NUM_ACTIONS};

pub const FORMAT_NAME: &str = "memdep-trajectories";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DatasetError {
    #[error("trajectory {id}: {field}: {reason}")]
    Invalid { id: u64, field: &'static str, reason: String },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("fraction {0} outside [0, 1]")]
    Fraction(f64),
    #[error("standard deviation {0} must be finite and non-negative")]
    Sigma(f64),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Step<'a> {
    pub observation: &'a GridObservation,
    pub action: Action,
}

/// One demonstration: observations and actions in lockstep, plus memory
/// dependency pairs `(p, q)` meaning the decision at `q` depends on what was
/// seen at `p`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub id: u64,
    pub task: TaskKind,
    pub seed: u64,
    pub observations: Vec<GridObservation>,
    pub actions: Vec<usize>,
    /// Sorted, without duplicates.
    pub pairs: Vec<(usize, usize)>,
    pub annotated: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn step(&self, t: usize) -> Step<'_> {
        Step {
            observation: &self.observations[t],
            action: Action::from_id(self.actions[t]).expect("validated action"),
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |field, reason: &str| DatasetError::Invalid { id: self.id, field, reason: reason.into() };
        if self.actions.is_empty() {
            return Err(bad("actions", "trajectory has no steps"));
        }
        if self.observations.len() != self.actions.len() {
            return Err(bad("obs", "observation count differs from action count"));
        }
        if self.actions.iter().any(|&a| a >= NUM_ACTIONS) {
            return Err(bad("actions", "action id out of range"));
        }
        if self.observations.iter().any(|o| !o.is_valid()) {
            return Err(bad("obs", "observation id out of range"));
        }
        let t = self.len();
        if let Some(&(p, q)) = self.pairs.iter().find(|&&(p, q)| !(p < q && q < t)) {
            return Err(DatasetError::Invalid {
                id: self.id,
                field: "pairs",
                reason: alloc::format!("pair ({p},{q}) violates 0 <= p < q < {t}"),
            });
        }
        if self.pairs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(bad("pairs", "pairs must be sorted and unique"));
        }
        if !self.annotated && !self.pairs.is_empty() {
            return Err(bad("annotated", "unannotated trajectory carries pairs"));
        }
        Ok(())
    }

    /// Inserts a pair, keeping order; returns false when already present.
    pub fn insert_pair(&mut self, p: usize, q: usize) -> Result<bool, DatasetError> {
        if !(p < q && q < self.len()) {
            return Err(DatasetError::Invalid {
                id: self.id,
                field: "pairs",
                reason: alloc::format!("pair ({p},{q}) violates 0 <= p < q < {}", self.len()),
            });
        }
        match self.pairs.binary_search(&(p, q)) {
            Ok(_) => Ok(false),
            Err(at) => {
                self.pairs.insert(at, (p, q));
                self.annotated = true;
                Ok(true)
            }
        }
    }

    /// Removes a pair; returns false when absent.
    pub fn remove_pair(&mut self, p: usize, q: usize) -> bool {
        match self.pairs.binary_search(&(p, q)) {
            Ok(at) => {
                self.pairs.remove(at);
                true
            }
            Err(_) => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub params: TaskParams,
    pub count: usize,
    /// Generation seed.
    pub seed: u64,
}

impl DatasetManifest {
    pub fn new(params: TaskParams, count: usize, seed: u64) -> Self {
        Self { format: FORMAT_NAME.into(), version: FORMAT_VERSION, params, count, seed }
    }

    pub fn task(&self) -> TaskKind {
        self.params.kind()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub trajectories: Vec<Trajectory>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&Trajectory> {
        self.trajectories.iter().find(|t| t.id == id)
    }

    pub fn get_mut(&mut self, id: u64) -> Option<&mut Trajectory> {
        self.trajectories.iter_mut().find(|t| t.id == id)
    }

    pub fn annotated_count(&self) -> usize {
        self.trajectories.iter().filter(|t| t.annotated).count()
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let m = &self.manifest;
        if m.format != FORMAT_NAME {
            return Err(DatasetError::Manifest(alloc::format!("unknown format `{}`", m.format)));
        }
        if m.version != FORMAT_VERSION {
            return Err(DatasetError::Manifest(alloc::format!("unsupported version {}", m.version)));
        }
        if m.count != self.trajectories.len() {
            return Err(DatasetError::Manifest(alloc::format!(
                "count {} but {} trajectories",
                m.count,
                self.trajectories.len()
            )));
        }
        let task = m.task();
        let mut last = None;
        for t in &self.trajectories {
            t.validate()?;
            if t.task != task {
                return Err(DatasetError::Invalid { id: t.id, field: "task", reason: "differs from manifest".into() });
            }
            if last.is_some_and(|l| t.id <= l) {
                return Err(DatasetError::Invalid { id: t.id, field: "id", reason: "ids must increase".into() });
            }
            last = Some(t.id);
        }
        Ok(())
    }
}

/// Derives the per-episode seeds of a generated dataset.
pub fn episode_seeds(seed: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen()).collect()
}

/// Scripted-expert trajectory for one episode seed, fully annotated.
pub fn expert_trajectory(params: &TaskParams, id: u64, seed: u64) -> Result<Trajectory, DatasetError> {
    let r = envgym::expert_rollout(params, seed)?;
    Ok(Trajectory {
        id,
        task: params.kind(),
        seed,
        observations: r.observations,
        actions: r.actions.iter().map(|a| a.id()).collect(),
        pairs: r.pairs,
        annotated: true,
    })
}

/// `n` expert demonstrations; deterministic in `seed`.
pub fn generate(params: &TaskParams, n: usize, seed: u64) -> Result<Dataset, DatasetError> {
    params.validate()?;
    let trajectories = episode_seeds(seed, n)
        .into_iter()
        .enumerate()
        .map(|(i, s)| expert_trajectory(params, i as u64, s))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset { manifest: DatasetManifest::new(*params, n, seed), trajectories })
}

/// Number of annotated trajectories kept for `fraction` of `n`, rounding
/// half up.
pub fn annotated_target(fraction: f64, n: usize) -> usize {
    (libm::floor(fraction * n as f64 + 0.5) as usize).min(n)
}

/// Keeps annotations on a uniformly chosen `round(fraction · n)` subset and
/// clears the rest. Observations and actions are untouched.
pub fn subsample_annotations(ds: &Dataset, fraction: f64, seed: u64) -> Result<Dataset, DatasetError> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(DatasetError::Fraction(fraction));
    }
    let n = ds.len();
    let k = annotated_target(fraction, n);
    let mut keep = alloc::vec![false; n];
    if k == n {
        keep.iter_mut().for_each(|x| *x = true);
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in index::sample(&mut rng, n, k) {
            keep[i] = true;
        }
    }
    let mut out = ds.clone();
    for (t, keep) in out.trajectories.iter_mut().zip(keep) {
        if !keep {
            t.pairs.clear();
            t.annotated = false;
        }
    }
    Ok(out)
}

/// Moves each pair endpoint by `round(N(0, σ))`, clamps to the trajectory,
/// and drops pairs that no longer satisfy `p < q`.
pub fn perturb_pairs(ds: &Dataset, sigma_p: f64, sigma_q: f64, seed: u64) -> Result<Dataset, DatasetError> {
    for s in [sigma_p, sigma_q] {
        if !(s.is_finite() && s >= 0.0) {
            return Err(DatasetError::Sigma(s));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = ds.clone();
    for t in &mut out.trajectories {
        let last = t.len() as i64 - 1;
        let mut moved: Vec<(usize, usize)> = t
            .pairs
            .iter()
            .filter_map(|&(p, q)| {
                let zp: f64 = StandardNormal.sample(&mut rng);
                let zq: f64 = StandardNormal.sample(&mut rng);
                let p = (p as i64 + libm::round(sigma_p * zp) as i64).clamp(0, last) as usize;
                let q = (q as i64 + libm::round(sigma_q * zq) as i64).clamp(0, last) as usize;
                (p < q).then_some((p, q))
            })
            .collect();
        moved.sort_unstable();
        moved.dedup();
        t.pairs = moved;
    }
    Ok(out)
}

/// Disjoint seeded split into `(train, test)`; `round(test_fraction · n)`
/// trajectories go to the test side. Both keep the original order.
pub fn split(
    trajectories: &[Trajectory],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<Trajectory>, Vec<Trajectory>), DatasetError> {
    if !(0.0..=1.0).contains(&test_fraction) {
        return Err(DatasetError::Fraction(test_fraction));
    }
    let n = trajectories.len();
    let k = annotated_target(test_fraction, n);
    let mut is_test = alloc::vec![false; n];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in index::sample(&mut rng, n, k) {
        is_test[i] = true;
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (t, flag) in trajectories.iter().zip(is_test) {
        if flag { test.push(t.clone()) } else { train.push(t.clone()) }
    }
    Ok((train, test))
}
