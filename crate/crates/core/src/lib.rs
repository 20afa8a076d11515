//! Gradient-based batch-size scheduling with a hyper-learning agent.
//!
//! An agent network proposes batch-size samples around the current batch
//! size, mixes them with softmax weights, and gates the high-level features of
//! an inner MLP. The agent is trained from a validation loss in lock-step with
//! the inner network, and at epoch boundaries the highest-weighted sample
//! becomes the next batch size.

pub mod agent;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod optim;
pub mod rng;
pub mod schedule;

pub use error::{Error, ErrorClass, Result};
