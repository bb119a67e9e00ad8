//! Simulation and learning pipeline for diagnosing piezoresistive bone
//! cement from 16-electrode EIT boundary voltages.

pub mod cli;
pub mod config;
pub mod error;
pub mod experiments;
pub mod features;
pub mod forward;
pub mod learners;
pub mod linalg;
pub mod mesh;
pub mod phantom;
pub mod recon;
pub mod rng;

pub use error::{Error, Result};
