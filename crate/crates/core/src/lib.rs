//! Physics-structured networks for learning continuous-time dynamics of
//! rigid-body systems.

pub mod control;
pub mod diffnet;
pub mod dynamics;
pub mod energy_models;
pub mod integrators;
pub mod plants;
pub mod sysid;
pub mod training;
pub mod error;
pub mod evaluation;
mod textio;

pub use error::{Error, Result};
