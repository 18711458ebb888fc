//! Synthetic matching control (SMC) for single-treated-unit panels, with
//! synthetic control, demeaned synthetic control and OLS comparators.
//!
//! Each control is first matched to the treated unit by a univariate
//! regression on centered pre-period outcomes. The matched series are then
//! averaged with weights in `[0, 1]` chosen by a Mallows-type criterion.

pub mod baselines;
pub mod error;
pub mod experiments;
pub mod matching;
pub mod optim;
pub mod panel;
pub mod screening;
pub mod smc;

pub use baselines::{fit_dsc, fit_method, fit_ols, fit_sc};
pub use error::{Result, SmcError};
pub use panel::{EstimatorOutput, Method, PanelData};
pub use smc::{fit_smc, fit_smc_detailed, SmcOptions};
