use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Tensor, TensorError};

/// Binary matrix with `E[q][p] = 1` for every memory dependency pair, in
/// timestep space (`T × T`, 0-based).
#[derive(Clone, Debug, PartialEq)]
pub struct ExpertAttentionMatrix {
    steps: usize,
    pairs: Vec<(usize, usize)>,
}

/// Checks `0 ≤ p < q < T` for every pair.
pub fn build_expert_matrix(pairs: &[(usize, usize)], steps: usize) -> Result<ExpertAttentionMatrix, TensorError> {
    if pairs.iter().any(|&(p, q)| !(p < q && q < steps)) {
        return Err(TensorError::OutOfRange { op: "build_expert_matrix" });
    }
    Ok(ExpertAttentionMatrix { steps, pairs: pairs.to_vec() })
}

impl ExpertAttentionMatrix {
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn get(&self, q: usize, p: usize) -> bool {
        self.pairs.contains(&(p, q))
    }

    pub fn timestep_space(&self) -> Tensor {
        let t = self.steps;
        let mut data = vec![0.0; t * t];
        for &(p, q) in &self.pairs {
            data[q * t + p] = 1.0;
        }
        Tensor::new(&[t, t], data).expect("positive extents")
    }

    /// Token-space matrix for a context of `tokens` interleaved tokens:
    /// row `2q`, column `2p` (observation tokens).
    pub fn token_space(&self, tokens: usize) -> Result<Tensor, TensorError> {
        if tokens + 1 < 2 * self.steps {
            return Err(TensorError::OutOfRange { op: "token_space" });
        }
        let mut data = vec![0.0; tokens * tokens];
        for &(p, q) in &self.pairs {
            data[2 * q * tokens + 2 * p] = 1.0;
        }
        Tensor::new(&[tokens, tokens], data)
    }
}
