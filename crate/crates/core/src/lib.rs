//! Optimal equilibrium selection for monotone generalized Nash games.

pub mod agentnet;
pub mod error;
pub mod game;
pub mod hsdm;
pub mod linalg;
pub mod market;
pub mod online;
pub mod operators;
pub mod oracle;

pub use error::{GneError, Result};
