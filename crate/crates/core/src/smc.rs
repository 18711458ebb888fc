//! The synthetic matching control estimator.
//!
//! Each control is first matched to the treated unit by a univariate
//! regression (`θ̂_j`). The matched controls `θ̂_j·y_j` are then averaged with
//! weights `w ∈ [0,1]^J` chosen by minimizing the Cp-type criterion
//!
//! ```text
//! C(w) = ‖y₁ − Σ w_j θ̂_j y_j‖² + 2σ̂² Σ w_j
//! ```
//!
//! on centered pre-period data. The weights need not sum to one; the
//! penalty controls how much total mass the synthesis uses.

use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SmcError};
use crate::matching::{match_all, MatchedControl};
use crate::optim::{solve_box_qp, Constraint, QpSettings, QpSolution, QuadraticProgram};
use crate::panel::{
    center_pretreatment, stack_covariates, CenteredPanel, CovariateScaling, EstimatorOutput, Method,
    PanelData,
};
use crate::screening::{screen_units, KeepCount, ScreeningReport, SirsVariant};

/// Noise-variance estimator plugged into the criterion penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceVariant {
    /// `‖y₁ − Y₀(Y₀ᵀY₀)⁻¹Y₀ᵀy₁‖² / (T₀ − J)`.
    #[default]
    ResidualDof,
    /// `‖y₁ − Y₀ diag(Y₀ᵀY₀)⁻¹ Y₀ᵀy₁‖²`, unnormalized.
    DiagonalResidual,
}

impl FromStr for VarianceVariant {
    type Err = SmcError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "appendix" | "residual_dof" => Ok(Self::ResidualDof),
            "maintext" | "diagonal_residual" => Ok(Self::DiagonalResidual),
            other => Err(SmcError::InvalidConfig(format!("unknown variance variant `{other}`"))),
        }
    }
}

/// When to screen the donor pool before matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScreenMode {
    /// Screen with the automatic keep count once `J ≥ T₀ − 1`.
    #[default]
    Auto,
    Off,
    /// Always screen, keeping this many controls.
    Keep(usize),
}

impl FromStr for ScreenMode {
    type Err = SmcError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Self::Auto),
            "off" => Ok(Self::Off),
            n => match n.parse::<usize>() {
                Ok(0) => Err(SmcError::InvalidKeepCount(0)),
                Ok(d) => Ok(Self::Keep(d)),
                Err(_) => Err(SmcError::InvalidConfig(format!("unknown screen mode `{n}`"))),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmcOptions {
    pub variance_variant: VarianceVariant,
    pub screen: ScreenMode,
    pub sirs_variant: SirsVariant,
    pub qp_tol: f64,
    pub qp_max_iter: usize,
    pub covariate_scaling: CovariateScaling,
}

impl Default for SmcOptions {
    fn default() -> Self {
        let qp = QpSettings::default();
        Self {
            variance_variant: VarianceVariant::default(),
            screen: ScreenMode::default(),
            sirs_variant: SirsVariant::default(),
            qp_tol: qp.tol,
            qp_max_iter: qp.max_iter,
            covariate_scaling: CovariateScaling::default(),
        }
    }
}

impl SmcOptions {
    pub fn qp_settings(&self) -> QpSettings {
        QpSettings {
            tol: self.qp_tol,
            max_iter: self.qp_max_iter,
            record_trace: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.qp_tol > 0.0) || self.qp_max_iter == 0 {
            return Err(SmcError::InvalidConfig("solver tolerance and iteration cap must be positive".into()));
        }
        if self.screen == ScreenMode::Keep(0) {
            return Err(SmcError::InvalidKeepCount(0));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightSolution {
    /// One weight per control in the centered panel; 0 for excluded units.
    pub w: DVector<f64>,
    pub sigma2_hat: f64,
    /// `C(ŵ)` evaluated directly.
    pub criterion: f64,
    /// Variant actually used (after any fallback).
    pub variance_variant: VarianceVariant,
    pub solver: QpSolution,
}

fn active_block(cp: &CenteredPanel) -> (Vec<usize>, DMatrix<f64>) {
    let active: Vec<usize> = cp.active_controls().collect();
    let block = cp.y0c.select_columns(active.iter());
    (active, block)
}

pub fn estimate_noise_variance(cp: &CenteredPanel, variant: VarianceVariant) -> Result<f64> {
    let (active, y0) = active_block(cp);
    let y1 = &cp.y1c;
    match variant {
        VarianceVariant::ResidualDof => {
            let rows = cp.n_rows();
            let j = active.len();
            if rows <= j {
                return Err(SmcError::InsufficientPeriods { t0: rows, controls: j });
            }
            if j == 0 {
                return Ok(y1.norm_squared() / rows as f64);
            }
            let qr = y0.qr();
            let r = qr.r();
            let diag: Vec<f64> = (0..j).map(|k| r[(k, k)].abs()).collect();
            let largest = diag.iter().cloned().fold(0.0, f64::max);
            if diag.iter().any(|&d| d <= 1e-10 * largest) {
                return Err(SmcError::RankDeficient);
            }
            let q = qr.q();
            let residual = y1 - &q * (q.transpose() * y1);
            Ok(residual.norm_squared() / (rows - j) as f64)
        }
        VarianceVariant::DiagonalResidual => {
            let mut residual = y1.clone();
            for col in y0.column_iter() {
                residual -= col * (col.dot(y1) / col.norm_squared());
            }
            Ok(residual.norm_squared())
        }
    }
}

fn check_lengths(w: &DVector<f64>, matched: &[MatchedControl], cp: &CenteredPanel) -> Result<()> {
    if w.len() != matched.len() {
        return Err(SmcError::LengthMismatch {
            what: "weights vs matched controls",
            expected: matched.len(),
            got: w.len(),
        });
    }
    if matched.len() != cp.n_controls() {
        return Err(SmcError::LengthMismatch {
            what: "matched controls vs panel controls",
            expected: cp.n_controls(),
            got: matched.len(),
        });
    }
    Ok(())
}

/// `Σ w_j θ̂_j y_jc` on the centered scale.
pub fn synthesize(w: &DVector<f64>, matched: &[MatchedControl], rows: usize) -> DVector<f64> {
    let mut fit = DVector::zeros(rows);
    for (wj, m) in w.iter().zip(matched) {
        if !m.excluded {
            fit.axpy(*wj, &m.fitted_pre, 1.0);
        }
    }
    fit
}

pub fn cp_criterion(
    w: &DVector<f64>,
    matched: &[MatchedControl],
    cp: &CenteredPanel,
    sigma2: f64,
) -> Result<f64> {
    check_lengths(w, matched, cp)?;
    let fit = synthesize(w, matched, cp.n_rows());
    Ok((fit - &cp.y1c).norm_squared() + 2.0 * sigma2 * w.sum())
}

/// The criterion as a box-constrained QP over the non-excluded controls.
/// Returns the program and the control positions of its coordinates.
pub fn criterion_qp(
    matched: &[MatchedControl],
    cp: &CenteredPanel,
    sigma2: f64,
) -> (QuadraticProgram, Vec<usize>) {
    let active: Vec<usize> = matched.iter().filter(|m| !m.excluded).map(|m| m.unit).collect();
    let mut design = DMatrix::zeros(cp.n_rows(), active.len());
    for (k, &j) in active.iter().enumerate() {
        design.set_column(k, &matched[j].fitted_pre);
    }
    let mut qp = QuadraticProgram::least_squares(&design, &cp.y1c, Constraint::Box01);
    qp.lin.add_scalar_mut(-sigma2);
    (qp, active)
}

/// Minimizes the criterion at a given `σ̂²`.
pub fn solve_weights_at(
    cp: &CenteredPanel,
    matched: &[MatchedControl],
    sigma2: f64,
    variant: VarianceVariant,
    settings: &QpSettings,
) -> Result<WeightSolution> {
    let (qp, active) = criterion_qp(matched, cp, sigma2);
    let solver = solve_box_qp(&qp, settings)?;
    let mut w = DVector::zeros(matched.len());
    for (k, &j) in active.iter().enumerate() {
        w[j] = solver.w[k];
    }
    let criterion = cp_criterion(&w, matched, cp, sigma2)?;
    Ok(WeightSolution {
        w,
        sigma2_hat: sigma2,
        criterion,
        variance_variant: variant,
        solver,
    })
}

/// Estimates `σ̂²` (falling back to the diagonal form when the full Gram
/// matrix is unusable) and solves for the weights.
pub fn solve_weights(
    cp: &CenteredPanel,
    matched: &[MatchedControl],
    options: &SmcOptions,
) -> Result<WeightSolution> {
    let (sigma2, variant) = match estimate_noise_variance(cp, options.variance_variant) {
        Ok(s) => (s, options.variance_variant),
        Err(e @ (SmcError::RankDeficient | SmcError::InsufficientPeriods { .. })) => {
            log::warn!("{e}; falling back to the diagonal noise-variance estimate");
            (
                estimate_noise_variance(cp, VarianceVariant::DiagonalResidual)?,
                VarianceVariant::DiagonalResidual,
            )
        }
        Err(e) => return Err(e),
    };
    solve_weights_at(cp, matched, sigma2, variant, &options.qp_settings())
}

/// `Ŷ₁ₜ(0) = ȳ₁ + Σ ŵ_j θ̂_j (Y_jt − ȳ_j)` for every period of `panel`.
pub fn predict_counterfactual(
    weights: &WeightSolution,
    matched: &[MatchedControl],
    panel: &PanelData,
) -> Result<DVector<f64>> {
    let controls = panel.controls();
    if matched.len() != controls.len() || weights.w.len() != matched.len() {
        return Err(SmcError::LengthMismatch {
            what: "matched controls vs panel controls",
            expected: controls.len(),
            got: matched.len(),
        });
    }
    let Some(first) = matched.first() else {
        return Err(SmcError::EmptyDonorPool);
    };
    let y1_mean = first.intercept + first.theta * first.unit_mean;
    let y = panel.outcomes();
    let mut path = DVector::from_element(panel.n_periods(), y1_mean);
    for ((m, &wj), &col) in matched.iter().zip(weights.w.iter()).zip(&controls) {
        let coef = wj * m.theta;
        if coef != 0.0 {
            for t in 0..panel.n_periods() {
                path[t] += coef * (y[(t, col)] - m.unit_mean);
            }
        }
    }
    Ok(path)
}

/// Every intermediate of an SMC fit.
#[derive(Debug, Clone)]
pub struct SmcFit {
    pub output: EstimatorOutput,
    /// Panel the weights were fitted on (after stacking and screening).
    pub fitted_panel: PanelData,
    pub centered: CenteredPanel,
    pub matched: Vec<MatchedControl>,
    pub weights: WeightSolution,
    pub screening: Option<ScreeningReport>,
}

pub fn fit_smc(panel: &PanelData, options: &SmcOptions) -> Result<EstimatorOutput> {
    fit_smc_detailed(panel, options).map(|f| f.output)
}

pub fn fit_smc_detailed(panel: &PanelData, options: &SmcOptions) -> Result<SmcFit> {
    options.validate()?;
    let working = if panel.covariates().is_some() {
        stack_covariates(panel, options.covariate_scaling)?
    } else {
        panel.clone()
    };
    let j = working.n_controls();
    if j == 0 {
        return Err(SmcError::EmptyDonorPool);
    }

    let keep = match options.screen {
        ScreenMode::Off => None,
        ScreenMode::Auto if j + 1 >= working.t0() => Some(KeepCount::Auto),
        ScreenMode::Auto => None,
        ScreenMode::Keep(d) => Some(KeepCount::Fixed(d)),
    };
    let controls = working.controls();
    let (fitted_panel, kept, screening) = match keep {
        Some(d) => {
            let report = screen_units(&working, d, options.sirs_variant)?;
            let mut kept = report.kept.clone();
            kept.sort_unstable();
            let cols: Vec<usize> = kept.iter().map(|&k| controls[k]).collect();
            let sub = working.select_units(working.treated(), &cols)?;
            (sub, kept, Some(report))
        }
        None => (working, (0..j).collect::<Vec<_>>(), None),
    };

    let centered = center_pretreatment(&fitted_panel)?;
    let matched = match match_all(&centered) {
        Err(SmcError::AllUnitsDegenerate) => return Err(SmcError::EmptyDonorPool),
        other => other?,
    };
    let weights = solve_weights(&centered, &matched, options)?;
    let path = predict_counterfactual(&weights, &matched, &fitted_panel)?;

    let mut unit_weights = vec![0.0; j];
    let mut thetas = vec![0.0; j];
    let mut comprehensive = vec![0.0; j];
    let mut intercept = matched[0].intercept + matched[0].theta * matched[0].unit_mean;
    for ((m, &wj), &pos) in matched.iter().zip(weights.w.iter()).zip(&kept) {
        unit_weights[pos] = wj;
        thetas[pos] = m.theta;
        comprehensive[pos] = wj * m.theta;
        intercept -= wj * m.theta * m.unit_mean;
    }
    let mut output =
        EstimatorOutput::from_path(Method::Smc, panel, path, unit_weights, comprehensive, intercept);
    output.thetas = Some(thetas);
    output.sigma2_hat = Some(weights.sigma2_hat);
    output.screened_units = screening.as_ref().map(|_| kept.clone());
    Ok(SmcFit {
        output,
        fitted_panel,
        centered,
        matched,
        weights,
        screening,
    })
}
