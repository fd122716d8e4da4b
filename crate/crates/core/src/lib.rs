//! Shapley neuron valuation for buffer-free continual learning.
//!
//! Hidden units of a dense network are treated as players of a cooperative
//! game whose payoff is validation accuracy under mean-ablation. After each
//! task the highest-valued units are selected under a capacity budget and
//! their incoming parameters are frozen for the rest of the sequence.
//!
//! - [`game`]: coalitions, games and the exact Shapley oracle
//! - [`valuation`]: truncated Monte Carlo estimation with top-k racing
//! - [`network`]: dense network, backpropagation and mean-ablation
//! - [`continual`]: masks, freezing, the task loop and inference
//! - [`metrics`]: ACC, BWT, CAP, Jaccard overlap, pruning curves
//! - [`tasks`]: synthetic task streams and their CSV form

pub mod continual;
pub mod error;
pub mod game;
pub mod metrics;
pub mod network;
pub mod seed;
pub mod tasks;
pub mod valuation;

pub use error::{Error, Result};
