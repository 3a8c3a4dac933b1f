//! Karma economies for repeated resource-allocation games: game model and
//! rule templates, a stationary Nash equilibrium solver, a multi-agent
//! simulator, and a two-route congestion-pricing case study.

pub mod equilibrium;
pub mod error;
pub mod markets;
pub mod model;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
