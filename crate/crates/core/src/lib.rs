//! Desk-scale federated class-incremental learning.
//!
//! Clients learn a sequence of tasks with disjoint classes. After each task
//! the server picks a class-balanced replay buffer from leverage scores of
//! the (privacy-masked) global feature matrix, and later tasks train with a
//! temperature-scaled, group-weighted cross-entropy. Finetune and a
//! local-random-replay baseline run on the same engine.

pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod federation;
pub mod gdr;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod rng;

pub use config::{DatasetSpec, ExperimentConfig, Method};
pub use error::{Error, Result};
