//! Masked bidirectional projected-LSTM language model pretraining.
//!
//! The crate is organized bottom-up:
//!
//! - [`numkernel`]: tensors, a reverse-mode tape, finite-difference checks.
//! - [`wordpiece`]: vocabulary files and greedy longest-match tokenization.
//! - [`corpus`]: document loading, shuffling, segmentation, and the
//!   per-row stream schedule used for (bidirectional) truncated BPTT.
//! - [`masking`]: masked-LM corruption and disjoint mask sets for
//!   mask accumulation.
//! - [`model`]: the stacked biLSTM with state projection, layer norm,
//!   residual connections, and the softmax head.
//! - [`trainer`]: loss, Adam, mask accumulation, epochs, evaluation,
//!   checkpoints, and the cell throughput benchmark.
//! - [`cli`]: the `melmo` command line.

pub mod cli;
pub mod corpus;
pub mod masking;
pub mod model;
pub mod numkernel;
pub mod rng;
pub mod synth;
pub mod trainer;
pub mod wordpiece;
