//! Minimum-dependency policy synthesis for cooperative Markov games whose
//! agents share their states through a word differentially private channel.

pub mod analysis;
pub mod environments;
pub mod error;
pub mod execution;
pub mod game_model;
mod linalg;
pub mod occupancy;
pub mod privacy;
pub mod synthesis;

pub use error::{Error, Result};
