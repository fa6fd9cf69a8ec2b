//! Surrogate models for uncertainty quantification of dynamical systems.

pub mod csvio;
pub mod dynmodels;
pub mod error;
pub mod lars;
pub mod mnarx;
pub mod narx;
pub mod numerics;
pub mod pcnarx;
pub mod pce;
pub mod randvars;
pub mod timewarp;
pub mod trajpce;

pub use error::{Error, Result};
