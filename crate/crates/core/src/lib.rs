//! Learning memory mechanisms from demonstrations.
//!
//! This crate holds everything that is pure computation: a small
//! reverse-mode autodiff engine, procedurally generated gridworld tasks with
//! scripted experts that annotate memory dependency pairs, a causal decision
//! Transformer, the attention-supervised imitation trainer, policy rollouts
//! and the statistics used to compare runs. It builds without `std`
//! (disable the default `std` feature); file formats, the CLI and the
//! annotation service live in the companion `memdep` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod dataset;
pub mod envgym;
pub mod evaluator;
pub mod model;
pub mod profile;
pub mod stats;
pub mod trainer;
