//! Estimation, factor-number selection and forecasting for high-dimensional
//! functional factor models.
//!
//! A panel holds `N` time series of length `T`. Each series lives in its own
//! Hilbert space, either the real line or a finite-dimensional function space
//! given by a basis and its Gram matrix. Observations are stored as basis
//! coefficients, so every inner product reduces to `aᵀ G b`.
//!
//! The main entry points are [`estimate::fit_factors`] (principal-component
//! estimation of factors and loadings), [`select::abc_select_r`]
//! (tuned information-criterion selection of the number of factors) and
//! [`forecast::tnh_forecast`] (h-step-ahead forecasting of the panel).

pub mod bench;
pub mod error;
pub mod estimate;
pub mod fbasis;
pub mod forecast;
pub mod io;
pub mod metrics;
pub mod panel;
pub mod select;
pub mod simulate;

pub use error::{Error, Result};
pub use estimate::{common_component, fit_factors, goodness_of_fit, FactorFit};
pub use panel::{MeanVector, Panel, SpaceKind, SpaceSpec};
pub use select::{abc_select_r, select_r_fixed, AbcConfig, PenaltyKind, SelectionTrace};
