//! Length-controllable rationale extraction.

pub mod cli;
pub mod corpus;
pub mod diff;
pub mod error;
pub mod io;
pub mod method;
pub mod metrics;
pub mod model;
pub mod objectives;
pub mod rationale;
pub mod rng;
pub mod server;
pub mod study;
pub mod trainer;

pub use error::{Error, Result};
