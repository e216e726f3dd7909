//! Identification, LPV realization, feedforward control synthesis and stability
//! certification for NARX local model networks.

pub mod controller;
pub mod error;
pub mod experiment;
pub mod io;
pub mod lmn;
pub mod narx;
pub mod plant;
pub mod stability;
pub mod state_space;
pub mod training;

pub use error::{Error, Result};
