//! Rare-event meta-analysis under generalized linear mixed models, with
//! sample-size based selection models for publication bias.

pub mod data;
pub mod distributions;
pub mod effects;
pub mod error;
pub mod estimation;
pub mod io;
pub mod models;
pub mod optimize;
pub mod quadrature;
pub mod selection;
pub mod simulation;

pub use error::{Error, Result};
