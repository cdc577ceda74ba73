//! Numerical lab for the relativistic Schrodinger operator sqrt(-Delta) + V on R^3:
//! polyhomogeneous potentials, free fields, scattering amplitudes and layer
//! recovery from amplitude data.

pub mod error;
pub mod freefield;
pub mod inverse;
pub mod quad;
pub mod scatter;
pub mod special;
pub mod potential;
pub mod sphere;
pub mod verify;
pub mod xray;

pub use error::{Error, ErrorKind, Result};
