//! Simulation designs, Monte Carlo and placebo harnesses, and diagnostics
//! that check the estimator's risk identities on simulated data.
//!
//! # Reproducibility
//!
//! Replication `rep` of a configuration with seed `s` draws from
//! [`substream`]`(s, rep)`: a ChaCha20 generator seeded with
//! `seed_from_u64(s)` and switched to stream number `rep`. Normal variates
//! come from `rand_distr::StandardNormal` (ziggurat). Replications are
//! independent work items; results are merged in replication order, so
//! tables do not depend on the number of worker threads.

mod dgp;
mod diagnostics;
mod harness;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SmcError};
use crate::panel::Method;
use crate::smc::SmcOptions;

pub use dgp::{gen_factor_dgp, gen_working_dgp, generate};
pub use diagnostics::{
    decompose_error, optimality_ratio, oracle_risk_check, ErrorDecomposition, RatioSummary,
    RiskCheckReport,
};
pub use harness::{mspe, run_monte_carlo, run_placebo, MethodSummary, MonteCarloTable, PlaceboTable};

/// Generator for replication `rep` of a run seeded with `seed`.
pub fn substream(seed: u64, rep: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DgpKind {
    /// `Y_jt = α_t + λ_j F_t + ε_jt`.
    Factor,
    /// `y₁ = Y₀θ + ε` with AR(1)-correlated controls.
    Working,
}

impl fmt::Display for DgpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DgpKind::Factor => "factor",
            DgpKind::Working => "working",
        })
    }
}

impl FromStr for DgpKind {
    type Err = SmcError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "factor" => Ok(Self::Factor),
            "working" => Ok(Self::Working),
            other => Err(SmcError::InvalidConfig(format!("unknown dgp `{other}`"))),
        }
    }
}

/// Factor-loading designs for the factor model. Unit 1 is treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoadingPattern {
    /// `λ_j = 1` for units 1..=7, 0 afterwards.
    L1,
    /// `λ₁ = 3`, `λ_j = 1` for units 2..=7, 0 afterwards.
    L2,
    /// `λ₁ = 3`, `λ_j = 1` for every control.
    L3,
}

impl LoadingPattern {
    pub fn loadings(self, units: usize) -> Vec<f64> {
        (0..units)
            .map(|j| match (self, j) {
                (LoadingPattern::L1, j) if j < 7 => 1.0,
                (LoadingPattern::L1, _) => 0.0,
                (_, 0) => 3.0,
                (LoadingPattern::L2, j) if j < 7 => 1.0,
                (LoadingPattern::L2, _) => 0.0,
                (LoadingPattern::L3, _) => 1.0,
            })
            .collect()
    }
}

impl fmt::Display for LoadingPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LoadingPattern::L1 => "l1",
            LoadingPattern::L2 => "l2",
            LoadingPattern::L3 => "l3",
        })
    }
}

impl FromStr for LoadingPattern {
    type Err = SmcError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" | "1" => Ok(Self::L1),
            "l2" | "2" => Ok(Self::L2),
            "l3" | "3" => Ok(Self::L3),
            other => Err(SmcError::InvalidConfig(format!("unknown loading pattern `{other}`"))),
        }
    }
}

/// One simulation design plus the estimators to run on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dgp: DgpKind,
    /// Total periods `T`.
    pub periods: usize,
    pub t0: usize,
    /// Number of controls `J`.
    pub controls: usize,
    pub lambda: LoadingPattern,
    /// Idiosyncratic noise s.d. (factor model).
    pub sigma: f64,
    /// Sum of the non-zero coefficients (working model).
    pub c: f64,
    /// Target coefficient of determination (working model).
    pub r2: f64,
    /// AR(1) correlation between adjacent controls (working model).
    pub rho: f64,
    pub reps: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub smc: SmcOptions,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dgp: DgpKind::Factor,
            periods: 50,
            t0: 40,
            controls: 20,
            lambda: LoadingPattern::L1,
            sigma: 1.0,
            c: 1.0,
            r2: 0.8,
            rho: 0.8,
            reps: 500,
            seed: 0,
            methods: Method::ALL.to_vec(),
            smc: SmcOptions::default(),
        }
    }
}

impl SimConfig {
    pub fn factor(lambda: LoadingPattern, sigma: f64) -> Self {
        Self {
            lambda,
            sigma,
            ..Self::default()
        }
    }

    pub fn working(c: f64, r2: f64) -> Self {
        Self {
            dgp: DgpKind::Working,
            c,
            r2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(SmcError::InvalidConfig(msg));
        if self.t0 < 1 || self.t0 >= self.periods {
            return bad(format!("need 1 <= T0 < T (T0={}, T={})", self.t0, self.periods));
        }
        if self.reps < 1 {
            return bad("reps must be at least 1".into());
        }
        if self.controls < 1 {
            return bad("need at least one control".into());
        }
        if self.methods.is_empty() {
            return bad("no methods requested".into());
        }
        match self.dgp {
            DgpKind::Factor => {
                if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
                    return bad(format!("sigma must be finite and >= 0 (got {})", self.sigma));
                }
            }
            DgpKind::Working => {
                if self.controls < 7 {
                    return bad("working model needs J >= 7".into());
                }
                if !(self.r2 > 0.0 && self.r2 < 1.0) {
                    return bad(format!("r2 must lie in (0,1) (got {})", self.r2));
                }
                if !(self.rho > -1.0 && self.rho < 1.0) {
                    return bad(format!("rho must lie in (-1,1) (got {})", self.rho));
                }
                if !self.c.is_finite() {
                    return bad("c must be finite".into());
                }
            }
        }
        self.smc.validate()
    }
}

/// Ground truth retained alongside a simulated panel.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTruth {
    /// `μ₁ₜ = E[Y₁ₜ(0)]` for every period.
    pub mu1: Vec<f64>,
    /// Noise s.d. of the treated unit in every period.
    pub sigma_t: Vec<f64>,
    /// Factor loadings `λ_j` (factor model, length `J+1`) or coefficients
    /// `θ` (working model, length `J`).
    pub coefficients: Vec<f64>,
    /// Realized common time effects `α_t` (factor model).
    pub alpha: Option<Vec<f64>>,
    /// Realized factor `F_t` (factor model).
    pub factors: Option<Vec<f64>>,
    /// Calibrated `σ₀²` (working model).
    pub sigma0_sq: Option<f64>,
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mean and standard error of the mean (0 when fewer than two values).
pub(crate) fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let m = mean(xs);
    if n < 2 {
        return (m, 0.0);
    }
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    (m, (var / n as f64).sqrt())
}

/// Linear-interpolation quantile of sorted data.
pub(crate) fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}
