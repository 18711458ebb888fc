use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use super::{generate, mean_se, quantile_sorted, SimConfig, SimTruth};
use crate::error::{Result, SmcError};
use crate::matching::MatchedControl;
use crate::optim::{solve_box_qp, Constraint, QuadraticProgram};
use crate::panel::CenteredPanel;
use crate::smc::{fit_smc_detailed, synthesize};

/// Split of the pre-period error of `Σ w_j θ̂_j y_jc` into an interpolation
/// and an extrapolation part. All vectors are on the treated-mean-centered
/// scale, so the target is `μ₁ − ȳ₁`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorDecomposition {
    /// `Σ w_j (θ̂_j y_jc − y₁c)`.
    pub interp: DVector<f64>,
    /// `(Σ w_j − 1)(μ₁ − ȳ₁) + Σ w_j ε₁`.
    pub extrap: DVector<f64>,
    /// `Σ w_j θ̂_j y_jc − (μ₁ − ȳ₁)`, evaluated directly.
    pub total: DVector<f64>,
}

pub fn decompose_error(
    w: &DVector<f64>,
    matched: &[MatchedControl],
    cp: &CenteredPanel,
    truth: Option<&SimTruth>,
) -> Result<ErrorDecomposition> {
    let truth = truth.ok_or(SmcError::TruthUnavailable)?;
    if w.len() != matched.len() {
        return Err(SmcError::LengthMismatch {
            what: "weights",
            expected: matched.len(),
            got: w.len(),
        });
    }
    let rows = cp.n_rows();
    if rows != cp.t0 || truth.mu1.len() < rows {
        return Err(SmcError::InvalidConfig(
            "error decomposition needs an outcome-only panel with matching truth".into(),
        ));
    }
    let mu = DVector::from_fn(rows, |t, _| truth.mu1[t] - cp.y1_mean);
    let eps = &cp.y1c - &mu;
    let wsum = w.sum();

    let mut interp = DVector::zeros(rows);
    for (wj, m) in w.iter().zip(matched) {
        let theta_y = if m.excluded { DVector::zeros(rows) } else { m.fitted_pre.clone() };
        interp.axpy(*wj, &(theta_y - &cp.y1c), 1.0);
    }
    let extrap = &mu * (wsum - 1.0) + &eps * wsum;
    let total = synthesize(w, matched, rows) - &mu;
    Ok(ErrorDecomposition { interp, extrap, total })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskCheckReport {
    pub gap_mean: f64,
    pub gap_se: f64,
    pub gaps: Vec<f64>,
    /// `Σ_t ℓ_jt` for every control, for the first replication.
    pub leverage_sums: Vec<f64>,
    /// Largest `|Σ_t ℓ_jt − 1|` over all controls and replications.
    pub max_leverage_error: f64,
}

/// One replication of the risk identity on raw pre-period vectors, using
/// rank-one projections `H_j = y_j (y_jᵀ y_j)⁻¹ y_jᵀ`.
fn risk_gap(w: &DVector<f64>, panel_y: &DMatrix<f64>, t0: usize, truth: &SimTruth) -> (f64, Vec<f64>) {
    let units = panel_y.ncols();
    let y1 = panel_y.view((0, 0), (t0, 1)).column(0).into_owned();
    let mu1 = DVector::from_fn(t0, |t, _| truth.mu1[t]);
    let var_t: Vec<f64> = truth.sigma_t[..t0].iter().map(|s| s * s).collect();

    let mut fit = DVector::zeros(t0);
    let mut penalty = 0.0;
    let mut sums = Vec::with_capacity(units - 1);
    for j in 1..units {
        let yj = panel_y.view((0, j), (t0, 1)).column(0).into_owned();
        let n2 = yj.norm_squared();
        if n2 == 0.0 {
            sums.push(0.0);
            continue;
        }
        fit.axpy(w[j - 1] * yj.dot(&y1) / n2, &yj, 1.0);
        let lev: Vec<f64> = yj.iter().map(|v| v * v / n2).collect();
        sums.push(lev.iter().sum());
        penalty += w[j - 1] * lev.iter().zip(&var_t).map(|(l, s)| l * s).sum::<f64>();
    }
    let estimate = (&fit - &y1).norm_squared() + 2.0 * penalty - var_t.iter().sum::<f64>();
    let loss = (&fit - &mu1).norm_squared();
    (estimate - loss, sums)
}

/// Checks that the oracle penalized criterion is an unbiased estimate of
/// the pre-period loss `‖ŷ₁(w) − μ₁‖²` at a fixed `w`.
pub fn oracle_risk_check(w: &DVector<f64>, cfg: &SimConfig, reps: usize) -> Result<RiskCheckReport> {
    cfg.validate()?;
    if w.len() != cfg.controls {
        return Err(SmcError::LengthMismatch {
            what: "weights",
            expected: cfg.controls,
            got: w.len(),
        });
    }
    if reps == 0 {
        return Err(SmcError::InvalidConfig("reps must be at least 1".into()));
    }
    let per_rep: Vec<(f64, Vec<f64>)> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let (panel, truth) = generate(cfg, rep)?;
            Ok(risk_gap(w, panel.outcomes(), cfg.t0, &truth))
        })
        .collect::<Result<_>>()?;
    let gaps: Vec<f64> = per_rep.iter().map(|(g, _)| *g).collect();
    let max_leverage_error = per_rep
        .iter()
        .flat_map(|(_, s)| s.iter())
        .map(|s| (s - 1.0).abs())
        .fold(0.0, f64::max);
    let (gap_mean, gap_se) = mean_se(&gaps);
    Ok(RiskCheckReport {
        gap_mean,
        gap_se,
        leverage_sums: per_rep[0].1.clone(),
        max_leverage_error,
        gaps,
    })
}

/// Loss ratio statistics at one pre-period length.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioSummary {
    pub t0: usize,
    pub median: f64,
    pub p90: f64,
    pub min: f64,
    pub max: f64,
    /// Replications whose fit failed or whose oracle loss was zero.
    pub failures: usize,
    pub ratios: Vec<f64>,
}

/// `‖Σ w_j θ̂_j y_jc − μ₁c‖²` where `μ₁c` is `μ₁` centered on its own
/// pre-period mean.
fn ratio_for_rep(cfg: &SimConfig, rep: usize) -> Result<Option<f64>> {
    let (panel, truth) = generate(cfg, rep)?;
    let fit = fit_smc_detailed(&panel, &cfg.smc)?;
    let cp = &fit.centered;
    let rows = cp.n_rows();
    let mu_mean = truth.mu1[..rows].iter().sum::<f64>() / rows as f64;
    let mu_c = DVector::from_fn(rows, |t, _| truth.mu1[t] - mu_mean);
    let loss = |w: &DVector<f64>| (synthesize(w, &fit.matched, rows) - &mu_c).norm_squared();

    let active: Vec<usize> = fit.matched.iter().filter(|m| !m.excluded).map(|m| m.unit).collect();
    let mut design = DMatrix::zeros(rows, active.len());
    for (k, &j) in active.iter().enumerate() {
        design.set_column(k, &fit.matched[j].fitted_pre);
    }
    let qp = QuadraticProgram::least_squares(&design, &mu_c, Constraint::Box01);
    let sol = solve_box_qp(&qp, &cfg.smc.qp_settings())?;
    let mut oracle_w = DVector::zeros(fit.matched.len());
    for (k, &j) in active.iter().enumerate() {
        oracle_w[j] = sol.w[k];
    }
    let best = loss(&oracle_w);
    if best <= 0.0 {
        return Ok(None);
    }
    Ok(Some(loss(&fit.weights.w) / best))
}

/// Ratio of the SMC pre-period loss to the infeasible best loss over the
/// same box, for each `T₀` in the grid. The post-period length is kept at
/// `base.periods − base.t0`; grid entry `k` uses seed
/// `base.seed + k · 0x9E3779B97F4A7C15` (wrapping).
pub fn optimality_ratio(t0_grid: &[usize], base: &SimConfig) -> Result<Vec<RatioSummary>> {
    let reps = base.reps;
    let post = base.periods.saturating_sub(base.t0).max(1);
    t0_grid
        .iter()
        .enumerate()
        .map(|(k, &t0)| {
            let cfg = SimConfig {
                t0,
                periods: t0 + post,
                seed: base.seed.wrapping_add((k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
                ..base.clone()
            };
            cfg.validate()?;
            let results: Vec<Option<f64>> = (0..reps)
                .into_par_iter()
                .map(|rep| match ratio_for_rep(&cfg, rep) {
                    Ok(r) => r,
                    Err(e) => {
                        log::debug!("ratio rep {rep} at T0={t0}: {e}");
                        None
                    }
                })
                .collect();
            let ratios: Vec<f64> = results.iter().flatten().copied().collect();
            let mut sorted = ratios.clone();
            sorted.sort_by(f64::total_cmp);
            Ok(RatioSummary {
                t0,
                median: quantile_sorted(&sorted, 0.5),
                p90: quantile_sorted(&sorted, 0.9),
                min: sorted.first().copied().unwrap_or(f64::NAN),
                max: sorted.last().copied().unwrap_or(f64::NAN),
                failures: reps - ratios.len(),
                ratios,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::{gen_factor_dgp, LoadingPattern};
    use crate::matching::match_all;
    use crate::panel::center_pretreatment;

    fn instance() -> (CenteredPanel, Vec<MatchedControl>, SimTruth) {
        let cfg = SimConfig {
            controls: 5,
            ..SimConfig::factor(LoadingPattern::L2, 1.0)
        };
        let (p, truth) = gen_factor_dgp(&cfg, 1).unwrap();
        let cp = center_pretreatment(&p).unwrap();
        let m = match_all(&cp).unwrap();
        (cp, m, truth)
    }

    #[test]
    fn zero_weights_total_is_minus_target() {
        let (cp, m, truth) = instance();
        let d = decompose_error(&DVector::zeros(5), &m, &cp, Some(&truth)).unwrap();
        assert!(d.interp.iter().all(|&v| v == 0.0));
        for t in 0..cp.t0 {
            let target = truth.mu1[t] - cp.y1_mean;
            assert!((d.total[t] + target).abs() < 1e-12);
            assert!((d.extrap[t] + target).abs() < 1e-12);
        }
    }

    #[test]
    fn unit_sum_removes_target_term() {
        let (cp, m, truth) = instance();
        let w = DVector::from_element(5, 0.2);
        let d = decompose_error(&w, &m, &cp, Some(&truth)).unwrap();
        for t in 0..cp.t0 {
            let eps = cp.y1c[t] - (truth.mu1[t] - cp.y1_mean);
            assert!((d.extrap[t] - eps).abs() < 1e-12);
        }
    }

    #[test]
    fn truth_required() {
        let (cp, m, _) = instance();
        assert!(matches!(
            decompose_error(&DVector::zeros(5), &m, &cp, None),
            Err(SmcError::TruthUnavailable)
        ));
    }

    #[test]
    fn noiseless_risk_gap_is_zero() {
        let cfg = SimConfig {
            controls: 10,
            ..SimConfig::factor(LoadingPattern::L2, 0.0)
        };
        let w = DVector::from_fn(10, |j, _| (j as f64 + 1.0) / 11.0);
        let r = oracle_risk_check(&w, &cfg, 5).unwrap();
        assert!(r.gaps.iter().all(|g| g.abs() < 1e-9), "{:?}", r.gaps);
        assert!(r.max_leverage_error < 1e-12);
    }
}
