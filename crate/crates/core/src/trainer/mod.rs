//! Attention-supervised behavioral cloning.
//!
//! Each trajectory contributes its mean action negative log-likelihood plus,
//! when annotated, `λ` times the memory loss: the binary cross-entropy
//! between `σ(attention logits)` of the supervised heads and the expert
//! matrix `E`. `E` lives in token space: a pair `(p, q)` of 0-based
//! timesteps marks row `2q`, column `2p`, i.e. the observation token at `q`
//! attending to the observation token at `p`. The BCE averages over the
//! causal triangle, diagonal included.

mod expert;

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, AdamConfig, Tape, Tensor, TensorError, Var};
use crate::dataset::Trajectory;
use crate::envgym::GridObservation;
use crate::model::{argmax, Forward, Model, ModelConfig, ModelError};

pub use expert::{build_expert_matrix, ExpertAttentionMatrix};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite value in epoch {epoch}, batch {batch}: {source}")]
    NonFinite { epoch: usize, batch: usize, source: TensorError },
    #[error("training set is empty")]
    EmptyDataset,
    #[error("invalid training configuration: {0}")]
    Config(&'static str),
}

fn tensor_err(e: ModelError, epoch: usize, batch: usize) -> TrainError {
    match e {
        ModelError::Tensor(source @ (TensorError::NonFinite { .. } | TensorError::NonFiniteGradient { .. })) => {
            TrainError::NonFinite { epoch, batch, source }
        }
        other => TrainError::Model(other),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Memory loss weight; 0 is plain behavioral cloning.
    pub lambda: f64,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub epochs: usize,
    /// Seeds initialization (stream 0), shuffling (stream 1) and dropout
    /// (stream 2).
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { lambda: 10.0, batch_size: 64, adam: AdamConfig::default(), epochs: 300, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(TrainError::Config("lambda must be finite and non-negative"));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch size must be positive"));
        }
        Ok(())
    }

    /// The three independent random streams used by [`train`].
    pub fn rngs(&self) -> [ChaCha8Rng; 3] {
        [0, 1, 2].map(|stream| {
            let mut r = ChaCha8Rng::seed_from_u64(self.seed);
            r.set_stream(stream);
            r
        })
    }
}

/// Mean negative log-likelihood of `targets` under row-softmax of `logits`.
pub fn il_loss(tape: &mut Tape, logits: Var, targets: &[usize]) -> Result<Var, TensorError> {
    let w = alloc::vec![1.0 / targets.len() as f64; targets.len()];
    tape.cross_entropy(logits, targets, &w)
}

/// Memory loss averaged over the given heads' attention logits.
pub fn memory_loss(tape: &mut Tape, head_logits: &[Var], e: &Tensor) -> Result<Var, TensorError> {
    let mut total: Option<Var> = None;
    for &l in head_logits {
        let a = tape.sigmoid(l)?;
        let bce = tape.bce_causal(a, e)?;
        total = Some(match total {
            Some(t) => tape.add(t, bce)?,
            None => bce,
        });
    }
    let total = total.ok_or(TensorError::OutOfRange { op: "memory_loss" })?;
    tape.scale(total, 1.0 / head_logits.len() as f64)
}

/// `il + λ·mem` for annotated trajectories, `il` otherwise.
pub fn combined_loss(il: f64, mem: f64, lambda: f64, annotated: bool) -> f64 {
    if annotated && lambda != 0.0 {
        il + lambda * mem
    } else {
        il
    }
}

/// Loss pieces of one batch; `total = il + λ·mem` (batch means).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchLoss {
    pub il: f64,
    pub mem: f64,
    pub total: f64,
}

/// Builds the batch objective `(1/B) Σ_i (IL_i + λ·[annotated_i]·mem_i)` on
/// `tape` and returns `(total, il, mem)` handles. `mem` is `None` when no
/// memory term was added.
pub fn batch_objective(
    tape: &mut Tape,
    model: &Model,
    forward: &Forward,
    batch: &[&Trajectory],
    lambda: f64,
) -> Result<(Var, Var, Option<Var>), TensorError> {
    let b = batch.len() as f64;
    let mut targets = Vec::new();
    let mut weights = Vec::new();
    for t in batch {
        targets.extend_from_slice(&t.actions);
        weights.extend(core::iter::repeat(1.0 / (b * t.len() as f64)).take(t.len()));
    }
    let il = tape.cross_entropy(forward.logits, &targets, &weights)?;
    if lambda == 0.0 {
        return Ok((il, il, None));
    }
    let layer = model.config().supervised_layer();
    let heads = model.config().supervised_heads();
    let mut mem: Option<Var> = None;
    for (t, s) in batch.iter().zip(&forward.seqs) {
        if !t.annotated {
            continue;
        }
        let e = build_expert_matrix(&t.pairs, t.len())?.token_space(s.tokens)?;
        let logits: Vec<Var> = heads.iter().map(|&h| s.attn_logits[layer][h]).collect();
        let m = memory_loss(tape, &logits, &e)?;
        mem = Some(match mem {
            Some(acc) => tape.add(acc, m)?,
            None => m,
        });
    }
    let Some(mem) = mem else { return Ok((il, il, None)) };
    let mem = tape.scale(mem, 1.0 / b)?;
    let weighted = tape.scale(mem, lambda)?;
    let total = tape.add(il, weighted)?;
    Ok((total, il, Some(mem)))
}

/// Observations and actions of each trajectory, in the form the model takes.
pub fn batch_view<'a>(batch: &[&'a Trajectory]) -> Vec<(&'a [GridObservation], &'a [usize])> {
    batch.iter().map(|t| (t.observations.as_slice(), t.actions.as_slice())).collect()
}

/// Per-timestep greedy accuracy of `model` on `data` (evaluation mode).
pub fn action_accuracy(model: &Model, data: &[Trajectory], batch_size: usize) -> Result<f64, ModelError> {
    let (mut hit, mut total) = (0usize, 0usize);
    let mut rng = rand::rngs::mock::StepRng::new(0, 0);
    for chunk in data.chunks(batch_size.max(1)) {
        let refs: Vec<&Trajectory> = chunk.iter().collect();
        let mut tape = Tape::new();
        let f = model.forward_batch(&mut tape, &batch_view(&refs), false, &mut rng)?;
        let logits = tape.value(f.logits);
        let mut row = 0;
        for t in chunk {
            for &a in &t.actions {
                hit += usize::from(argmax(logits.row(row)) == a);
                row += 1;
            }
            total += t.len();
        }
    }
    Ok(if total == 0 { 0.0 } else { hit as f64 / total as f64 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub il_loss: f64,
    pub mem_loss: f64,
    pub total_loss: f64,
    /// `None` without a held-out set.
    pub test_action_accuracy: Option<f64>,
    pub wall_seconds: f64,
}

/// Hooks for timing and progress; the default does nothing.
pub trait TrainObserver {
    fn elapsed_seconds(&self) -> f64 {
        0.0
    }

    fn on_epoch(&mut self, _record: &EpochRecord) {}
}

impl TrainObserver for () {}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    /// Per optimizer step.
    pub steps: Vec<BatchLoss>,
    pub epochs: Vec<EpochRecord>,
}

/// Trains a fresh model. Batches are drawn by reshuffling the training set
/// every epoch; the last batch may be smaller.
pub fn train(
    data: &[Trajectory],
    test: &[Trajectory],
    model_config: &ModelConfig,
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let [mut init_rng, mut shuffle_rng, mut dropout_rng] = config.rngs();
    let mut model = Model::new(model_config.clone(), &mut init_rng)?;
    let mut adam = Adam::new(config.adam, model.params());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut steps = Vec::new();
    let mut epochs = Vec::new();
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut il_sum, mut mem_sum, mut tot_sum, mut n) = (0.0, 0.0, 0.0, 0usize);
        for (bi, idx) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Trajectory> = idx.iter().map(|&i| &data[i]).collect();
            let mut tape = Tape::new();
            let run = |tape: &mut Tape, rng: &mut ChaCha8Rng| -> Result<_, ModelError> {
                let f = model.forward_batch(tape, &batch_view(&batch), true, rng)?;
                Ok(batch_objective(tape, &model, &f, &batch, config.lambda)?)
            };
            let (total, il, mem) = run(&mut tape, &mut dropout_rng).map_err(|e| tensor_err(e, epoch, bi))?;
            let loss = BatchLoss {
                il: tape.value(il).data()[0],
                mem: mem.map_or(0.0, |m| tape.value(m).data()[0]),
                total: tape.value(total).data()[0],
            };
            tape.backward(total).map_err(|e| tensor_err(e.into(), epoch, bi))?;
            model.params_mut().zero_grad();
            tape.accumulate_param_grads(model.params_mut());
            drop(tape);
            adam.step(model.params_mut()).map_err(|e| tensor_err(e.into(), epoch, bi))?;
            il_sum += loss.il;
            mem_sum += loss.mem;
            tot_sum += loss.total;
            n += 1;
            steps.push(loss);
        }
        let test_action_accuracy =
            if test.is_empty() { None } else { Some(action_accuracy(&model, test, config.batch_size)?) };
        let record = EpochRecord {
            epoch: epoch + 1,
            il_loss: il_sum / n as f64,
            mem_loss: mem_sum / n as f64,
            total_loss: tot_sum / n as f64,
            test_action_accuracy,
            wall_seconds: observer.elapsed_seconds(),
        };
        observer.on_epoch(&record);
        epochs.push(record);
    }
    Ok(TrainOutcome { model, steps, epochs })
}
