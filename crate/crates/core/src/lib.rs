//! Structural model of a cartelized liner-shipping industry.

pub mod cli_io;
pub mod dynamic_game;
pub mod error;
pub mod estimation;
pub mod simulation;
pub mod state_space;
pub mod static_market;
pub mod units;

pub use error::{Error, Result};
