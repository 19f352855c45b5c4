//! Numerical engine for elliptic weight functions, dynamical R-matrices and the
//! hypergeometric solutions of the qKZB difference equations.

pub mod conditions;
pub mod contour;
pub mod elliptic;
pub mod error;
pub mod hypergeometric;
pub mod linalg;
pub mod operators;
pub mod params;
pub mod rmatrix;
pub mod weights;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
pub use params::{ModularParams, SeriesConfig, SystemParams};
