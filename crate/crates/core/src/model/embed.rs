//! Input encodings for the observation embedders.

use alloc::vec;

use crate::autodiff::{Tensor, TensorError};
use crate::envgym::grid::{NUM_COLORS, NUM_OBJECT_TYPES, NUM_STATES, VIEW_SIZE};
use crate::envgym::GridObservation;

/// One-hot channels: object type, then color, then state.
pub const GRID_CHANNELS: usize = NUM_OBJECT_TYPES + NUM_COLORS + NUM_STATES;
/// Flattened width after the grid convolutions (80 × 7 × 7).
pub const GRID_FLAT: usize = 80 * VIEW_SIZE * VIEW_SIZE;
pub const PIXEL_SIDE: usize = 84;
/// Flattened width after the pixel convolutions (64 × 7 × 7).
pub const PIXEL_FLAT: usize = 64 * 7 * 7;

/// `[N, 20, 7, 7]` one-hot encoding of a batch of grids.
pub fn grid_one_hot(obs: &[&GridObservation]) -> Result<Tensor, TensorError> {
    let plane = VIEW_SIZE * VIEW_SIZE;
    let mut data = vec![0.0; obs.len() * GRID_CHANNELS * plane];
    for (n, o) in obs.iter().enumerate() {
        let base = n * GRID_CHANNELS * plane;
        for r in 0..VIEW_SIZE {
            for c in 0..VIEW_SIZE {
                let cell = o.cell(r, c);
                let px = r * VIEW_SIZE + c;
                let channels = [
                    cell.kind as usize,
                    NUM_OBJECT_TYPES + cell.color as usize,
                    NUM_OBJECT_TYPES + NUM_COLORS + cell.state as usize,
                ];
                for ch in channels {
                    data[base + ch * plane + px] = 1.0;
                }
            }
        }
    }
    Tensor::new(&[obs.len(), GRID_CHANNELS, VIEW_SIZE, VIEW_SIZE], data)
}
