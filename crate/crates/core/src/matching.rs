//! Per-unit matching: regress the centered treated characteristics on each
//! centered control, one control at a time.

use nalgebra::DVector;

use crate::error::{Result, SmcError};
use crate::panel::CenteredPanel;

/// Univariate least-squares fit of the treated unit on one control.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchedControl {
    /// Position of the control within the centered panel.
    pub unit: usize,
    pub theta: f64,
    /// `ȳ₁ − θ·ȳ_j` on the raw scale.
    pub intercept: f64,
    /// Pre-period mean of the control, `ȳ_j`.
    pub unit_mean: f64,
    /// `θ·y_jc`.
    pub fitted_pre: DVector<f64>,
    /// `y1c − θ·y_jc`.
    pub residual_pre: DVector<f64>,
    pub excluded: bool,
}

pub fn match_unit(cp: &CenteredPanel, j: usize) -> MatchedControl {
    let yj = cp.y0c.column(j);
    let mean = cp.control_means[j];
    if cp.degenerate[j] {
        return MatchedControl {
            unit: j,
            theta: 0.0,
            intercept: cp.y1_mean,
            unit_mean: mean,
            fitted_pre: DVector::zeros(cp.n_rows()),
            residual_pre: cp.y1c.clone(),
            excluded: true,
        };
    }
    let theta = yj.dot(&cp.y1c) / yj.norm_squared();
    let fitted_pre = yj * theta;
    let residual_pre = &cp.y1c - &fitted_pre;
    MatchedControl {
        unit: j,
        theta,
        intercept: cp.y1_mean - theta * mean,
        unit_mean: mean,
        fitted_pre,
        residual_pre,
        excluded: false,
    }
}

/// Matches every control in order. Fails only when no control is usable.
pub fn match_all(cp: &CenteredPanel) -> Result<Vec<MatchedControl>> {
    let matched: Vec<MatchedControl> = (0..cp.n_controls()).map(|j| match_unit(cp, j)).collect();
    if matched.iter().all(|m| m.excluded) {
        return Err(SmcError::AllUnitsDegenerate);
    }
    Ok(matched)
}
