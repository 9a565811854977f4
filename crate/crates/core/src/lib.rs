//! Numerical verification of the subexponential large deviations of
//! `L_T^p = (1/T) int_0^T sign(X_t)|X_t|^p dt` for the Ornstein-Uhlenbeck
//! process `dX = -gamma X dt + dW`, `X_0 = 0`.

pub mod error;
pub mod excursion;
pub mod instanton;
pub mod mc;
pub mod oracle;
pub mod ou;
pub mod rng;
pub mod stats;
pub mod validation;

pub use error::{Error, Result};
pub use ou::{ActionValue, ModelParams, PathSample, Quadrature, Scheme, TimeGrid};
