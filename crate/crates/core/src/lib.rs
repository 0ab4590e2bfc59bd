//! Exact limiting risks of spectral shrinkage estimators in spiked
//! covariance regression, the risk-optimal shrinkage rules, and the
//! self-distillation parameters that realise them.
//!
//! Modules, bottom up:
//! - [`spectra`]: Marchenko–Pastur law, one-spike measures, quadrature.
//! - [`measures`]: mixture measure, Radon–Nikodym factors, weighted inner product.
//! - [`shrinkage`]: shrinkage rules and their limiting risks.
//! - [`optimal`]: optimal rules and self-distillation synthesis.
//! - [`federated`]: multi-client optimum and risk.
//! - [`montecarlo`]: finite-sample simulator.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod federated;
pub mod measures;
pub mod montecarlo;
pub mod optimal;
pub mod poly;
pub mod shrinkage;
pub mod spectra;

pub use error::{Error, Result};
pub use measures::ModelContext;
pub use optimal::RationalRule;
pub use shrinkage::{RiskBreakdown, SdParams, ShrinkageFn};
pub use spectra::{Spike, SpikedModel};
