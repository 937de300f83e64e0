//! BFOR q-space signal representation, diffeomorphic registration of
//! coefficient volumes with explicit reorientation, and EM atlas estimation.

pub mod atlas;
pub mod bfor;
pub mod error;
pub mod evalx;
pub mod field;
pub mod io;
pub mod lddmm;
pub mod phantom;
pub mod quadrature;
pub mod sphharm;
pub mod wigner;

pub use error::{Error, Result};
