//! Key-budgeted risk minimization for QKD-secured virtual power plant
//! messaging: cost and risk models, key-network accounting, an offline
//! planner, an online price-threshold controller, and a seeded simulator.

pub mod controller;
pub mod crypto;
pub mod env;
pub mod error;
pub mod keynet;
pub mod model;
pub mod objective;
pub mod planner;
pub mod queueing;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
