//! Comparator estimators: synthetic control (SC), demeaned SC (dSC) and
//! unrestricted least squares with an intercept (OLS).

use nalgebra::{DMatrix, DVector, SVD};

use crate::error::{Result, SmcError};
use crate::optim::{solve_simplex_qp, Constraint, QpSettings, QuadraticProgram};
use crate::panel::{center_pretreatment, stack_covariates, EstimatorOutput, Method, PanelData};
use crate::smc::{fit_smc, SmcOptions};

fn with_stacked_covariates(panel: &PanelData, options: &SmcOptions) -> Result<PanelData> {
    if panel.covariates().is_some() {
        stack_covariates(panel, options.covariate_scaling)
    } else {
        Ok(panel.clone())
    }
}

/// `intercept + Σ c_j Y_jt` over every period.
fn linear_path(panel: &PanelData, intercept: f64, coefs: &[f64]) -> DVector<f64> {
    let y = panel.outcomes();
    let mut path = DVector::from_element(panel.n_periods(), intercept);
    for (&c, col) in coefs.iter().zip(panel.controls()) {
        path.axpy(c, &y.column(col), 1.0);
    }
    path
}

pub fn fit_sc(panel: &PanelData) -> Result<EstimatorOutput> {
    fit_sc_with(panel, &QpSettings::default())
}

/// Simplex-weighted average of the controls matching the pre-period block
/// with no intercept.
pub fn fit_sc_with(panel: &PanelData, settings: &QpSettings) -> Result<EstimatorOutput> {
    let controls = panel.controls();
    if controls.is_empty() {
        return Err(SmcError::EmptyDonorPool);
    }
    let block = panel.matching_block();
    let y1 = block.column(panel.treated()).into_owned();
    let y0 = block.select_columns(controls.iter());
    let qp = QuadraticProgram::least_squares(&y0, &y1, Constraint::Simplex);
    let sol = solve_simplex_qp(&qp, settings)?;
    let w: Vec<f64> = sol.w.iter().copied().collect();
    let path = linear_path(panel, 0.0, &w);
    Ok(EstimatorOutput::from_path(Method::Sc, panel, path, w.clone(), w, 0.0))
}

pub fn fit_dsc(panel: &PanelData) -> Result<EstimatorOutput> {
    fit_dsc_with(panel, &QpSettings::default())
}

/// SC on per-unit demeaned pre-period data, with intercept
/// `ȳ₁ − Σ w_j ȳ_j`.
pub fn fit_dsc_with(panel: &PanelData, settings: &QpSettings) -> Result<EstimatorOutput> {
    if panel.n_controls() == 0 {
        return Err(SmcError::EmptyDonorPool);
    }
    let cp = center_pretreatment(panel)?;
    let qp = QuadraticProgram::least_squares(&cp.y0c, &cp.y1c, Constraint::Simplex);
    let sol = solve_simplex_qp(&qp, settings)?;
    let w: Vec<f64> = sol.w.iter().copied().collect();
    let intercept = cp.y1_mean - sol.w.dot(&cp.control_means);
    let path = linear_path(panel, intercept, &w);
    Ok(EstimatorOutput::from_path(Method::Dsc, panel, path, w.clone(), w, intercept))
}

/// Minimum-norm least-squares coefficients of `y` on the columns of `x`.
pub(crate) fn min_norm_lstsq(x: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    if x.ncols() == 0 {
        return DVector::zeros(0);
    }
    let svd = SVD::new(x.clone(), true, true);
    let smax = svd.singular_values.max();
    let eps = 1e-12 * smax.max(f64::MIN_POSITIVE) * (x.nrows().max(x.ncols()) as f64);
    svd.solve(y, eps).expect("SVD computed with both factors")
}

/// Regression of the treated characteristics on an intercept and every
/// control over the pre-period, minimum-norm under rank deficiency.
pub fn fit_ols(panel: &PanelData) -> Result<EstimatorOutput> {
    let cp = center_pretreatment(panel)?;
    let beta = min_norm_lstsq(&cp.y0c, &cp.y1c);
    let intercept = cp.y1_mean - beta.dot(&cp.control_means);
    let b: Vec<f64> = beta.iter().copied().collect();
    let path = linear_path(panel, intercept, &b);
    Ok(EstimatorOutput::from_path(Method::Ols, panel, path, b.clone(), b, intercept))
}

/// Fits any estimator. Covariates, when present, are stacked under the
/// pre-period for every method.
pub fn fit_method(panel: &PanelData, method: Method, options: &SmcOptions) -> Result<EstimatorOutput> {
    match method {
        Method::Smc => fit_smc(panel, options),
        Method::Sc => fit_sc_with(&with_stacked_covariates(panel, options)?, &options.qp_settings()),
        Method::Dsc => fit_dsc_with(&with_stacked_covariates(panel, options)?, &options.qp_settings()),
        Method::Ols => fit_ols(&with_stacked_covariates(panel, options)?),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn panel(cols: &[Vec<f64>], t0: usize) -> PanelData {
        let rows = cols[0].len();
        let m = DMatrix::from_fn(rows, cols.len(), |t, j| cols[j][t]);
        let units = (0..cols.len()).map(|j| format!("u{j}")).collect();
        let time = (0..rows).map(|t| t.to_string()).collect();
        PanelData::new(m, units, time, 0, t0).unwrap()
    }

    #[test]
    fn sc_single_control() {
        let p = panel(&[vec![1., 2., 3., 4.], vec![0., 5., 1., 7.]], 3);
        let out = fit_sc(&p).unwrap();
        assert_eq!(out.unit_weights, vec![1.0]);
        assert_eq!(out.counterfactual, vec![0., 5., 1., 7.]);
        assert_eq!(out.intercept, 0.0);
        assert_eq!(out.att[3], -3.0);
    }

    #[test]
    fn dsc_shifted_match() {
        let a = vec![1., 3., 2., 6., 4.];
        let b = vec![2., 0., 1., 1., 3.];
        let y1: Vec<f64> = a.iter().map(|x| x + 5.0).collect();
        let p = panel(&[y1, a, b], 4);
        let out = fit_dsc(&p).unwrap();
        assert!((out.unit_weights[0] - 1.0).abs() < 1e-10);
        assert!((out.intercept - 5.0).abs() < 1e-9);
        assert!(out.pre_rss < 1e-16);
    }

    #[test]
    fn ols_exact_linear_relation() {
        let a = vec![1., 3., 2., 6., 4., 0., 2.];
        let b = vec![2., 0., 1., 1., 3., 5., 1.];
        let y1: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 2.0 * x - y + 1.0).collect();
        let p = panel(&[y1, a, b], 6);
        let out = fit_ols(&p).unwrap();
        assert!((out.unit_weights[0] - 2.0).abs() < 1e-8);
        assert!((out.unit_weights[1] + 1.0).abs() < 1e-8);
        assert!((out.intercept - 1.0).abs() < 1e-8);
        assert!(out.att.iter().all(|r| r.abs() < 1e-8));
    }

    #[test]
    fn empty_donor_pool() {
        let p = panel(&[vec![1., 2., 3.]], 2);
        assert!(matches!(fit_sc(&p), Err(SmcError::EmptyDonorPool)));
        assert!(matches!(fit_dsc(&p), Err(SmcError::EmptyDonorPool)));
        let out = fit_ols(&p).unwrap();
        assert_eq!(out.counterfactual, vec![1.5; 3]);
    }
}
