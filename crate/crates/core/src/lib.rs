//! Singular Yamabe scattering on separable model geometries.

pub mod cli;
pub mod constants;
pub mod error;
pub mod indicial;
pub mod model;
pub mod normalform;
pub mod numerics;
pub mod scalar;
pub mod scattering;
pub mod series;
pub mod verify;
pub mod yamabe;

pub use error::{Error, Result};
