//! Smooth Brownian functionals and their conditional expectations.
//!
//! Functionals of the form polynomial × exponential-of-quadratic in Gaussian
//! integrals `∫ f dW` are represented symbolically ([`functional`]) and
//! differentiated in the Malliavin sense in closed form. Conditional
//! expectations `E[F | F_t]` are then computed three ways:
//!
//! * [`bte`]: the discrete backward Taylor expansion, with universal
//!   polynomial coefficients in the step and the path increment;
//! * [`dyson`]: the time-ordered exponential of `½ D_s²` applied to the
//!   frozen functional, with exact time integrals;
//! * [`oracle`]: seeded Monte Carlo and exact Gaussian moments, as references.
//!
//! [`harness`] drives experiments and writes reports for the `malliavin` CLI.

pub mod bte;
pub mod builtin;
pub mod dyson;
pub mod error;
pub mod exact;
pub mod functional;
pub mod harness;
pub mod kernel;
pub mod oracle;

pub use error::{Error, Result};
pub use exact::Rational;
pub use functional::{GaussianIntegral, QuadraticForm, WienerFunctional};
pub use kernel::{PathPrefix, PiecewisePolynomial};
