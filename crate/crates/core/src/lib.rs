//! Interest-rate markets generated by a square-integrable Wiener functional.
//!
//! A random variable `X = int_0^inf sigma_s dW_s` determines the pricing kernel
//! `pi_t = E_t[(X - X_t)^2] = E_t[int_t^inf sigma_s^2 ds]`, and from it every
//! other object: short rate `r = sigma^2 / pi`, discount bonds
//! `P(t,T) = E_t[int_T^inf sigma^2] / pi_t`, forward rates, the money-market
//! account, and the deflated values of notes and options. The crate simulates
//! these objects on Brownian paths and checks their martingale properties
//! statistically.
//!
//! ```
//! use std::sync::Arc;
//! use chaos_rates::{ChaosModel, ChaosSpec, TimeGrid, BrownianPath};
//!
//! let grid = Arc::new(TimeGrid::new(10.0, 100, 2.0).unwrap());
//! let model = ChaosModel::new(ChaosSpec::gbm(0.05, 0.2), grid.clone()).unwrap();
//! let path = BrownianPath::zero(grid);
//! let p = chaos_rates::term_structure::bond_price(&model, &path, 0.0, 10.0).unwrap();
//! assert!((p.mean - (-0.5f64).exp()).abs() < 1e-12);
//! ```

pub mod chaos;
pub mod error;
pub mod instruments;
pub mod kernel;
pub mod paths;
pub mod stats;
pub mod term_structure;
pub mod validation;

pub use chaos::{
    validate_spec, ChaosModel, ChaosSpec, CustomIntegrand, DetFn, ExpTail, PathFunctional, Rotation, SigmaSample,
    SpecCheck, SpecConfig,
};
pub use error::{Error, Result};
pub use kernel::KernelPath;
pub use paths::{BrownianPath, PathEnsemble, PathId, TimeGrid};
pub use stats::{Estimate, Moments};
pub use term_structure::DiscountCurve;
pub use validation::ValidationReport;

/// Engine version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
