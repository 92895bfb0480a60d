//! Robust factor analysis for large-dimensional, heavy-tailed panels.
//!
//! The crate estimates approximate factor models `Y = L Fᵀ + E` with three
//! estimators:
//!
//! * [`estimators::fit_pca`]: conventional principal components;
//! * [`estimators::fit_hpca`]: Huber PCA, an eigendecomposition of a
//!   per-period reweighted second-moment matrix whose weights come from the
//!   KKT conditions of the ℓ₂-norm Huber objective;
//! * [`estimators::fit_ihr`]: iterative Huber regression, alternating
//!   per-series and per-period Huber M-regressions for the element-wise
//!   Huber objective.
//!
//! Around them sit a rank-minimization factor-number selector
//! ([`rank`]), synthetic data generators ([`synth`]), accuracy metrics and a
//! Monte Carlo harness ([`metrics`]), and a minimum-variance portfolio
//! backtester ([`portfolio`]).

pub mod error;
pub mod estimators;
pub mod huber;
pub mod io;
pub mod metrics;
pub mod panel;
pub mod portfolio;
pub mod rank;
pub mod synth;

pub use error::{Error, Result};
pub use estimators::{Estimator, HpcaConfig, IhrConfig, TauRule};
pub use huber::{HuberConfig, TauPolicy};
pub use panel::{EigenPair, FactorFit, FitInfo, Panel, SignMatrix};
