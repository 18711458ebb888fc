use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{mean, substream, DgpKind, SimConfig, SimTruth};
use crate::error::{Result, SmcError};
use crate::panel::PanelData;

fn labels(units: usize, periods: usize) -> (Vec<String>, Vec<String>) {
    (
        (1..=units).map(|j| format!("unit{j}")).collect(),
        (1..=periods).map(|t| t.to_string()).collect(),
    )
}

fn normals(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Draws from the configured design.
pub fn generate(cfg: &SimConfig, rep: usize) -> Result<(PanelData, SimTruth)> {
    match cfg.dgp {
        DgpKind::Factor => gen_factor_dgp(cfg, rep),
        DgpKind::Working => gen_working_dgp(cfg, rep),
    }
}

/// `Y_jt(0) = α_t + λ_j F_t + ε_jt` with `α_t, F_t ~ N(0,1)` shared by all
/// units and `ε_jt ~ N(0, σ²)`. Unit 1 is treated.
///
/// Draw order: `α_1..α_T`, `F_1..F_T`, then `ε` period by period.
pub fn gen_factor_dgp(cfg: &SimConfig, rep: usize) -> Result<(PanelData, SimTruth)> {
    if cfg.dgp != DgpKind::Factor {
        return Err(SmcError::InvalidConfig("expected a factor design".into()));
    }
    let (t_len, units) = (cfg.periods, cfg.controls + 1);
    let mut rng = substream(cfg.seed, rep as u64);
    let alpha = normals(&mut rng, t_len);
    let factors = normals(&mut rng, t_len);
    let noise = normals(&mut rng, t_len * units);
    let lambda = cfg.lambda.loadings(units);
    let y = DMatrix::from_fn(t_len, units, |t, j| {
        alpha[t] + lambda[j] * factors[t] + cfg.sigma * noise[t * units + j]
    });
    let mu1 = (0..t_len).map(|t| alpha[t] + lambda[0] * factors[t]).collect();
    let (unit_labels, time_labels) = labels(units, t_len);
    let panel = PanelData::new(y, unit_labels, time_labels, 0, cfg.t0)?;
    Ok((
        panel,
        SimTruth {
            mu1,
            sigma_t: vec![cfg.sigma; t_len],
            coefficients: lambda,
            alpha: Some(alpha),
            factors: Some(factors),
            sigma0_sq: None,
        },
    ))
}

/// `Y₁ₜ = yᵗθ + εₜ` where control rows `yᵗ ~ N(0, Σ)`, `Σ_ij = ρ^|i−j|`,
/// `θ = (c/7, …, c/7, 0, …)` and `εₜ ~ N(0, σ₀²‖yᵗ‖²/(J + ‖yᵗ‖²))`.
///
/// `σ₀²` is set so that signal variance over total variance matches the
/// target `R²`: `σ₀² = Var̂(yᵗθ)(1 − R²) / (R² · mean_t h_t)` with
/// `h_t = ‖yᵗ‖²/(J + ‖yᵗ‖²)`. The same noise law applies in every period.
///
/// Draw order: control rows period by period, then `ε`.
pub fn gen_working_dgp(cfg: &SimConfig, rep: usize) -> Result<(PanelData, SimTruth)> {
    if cfg.dgp != DgpKind::Working {
        return Err(SmcError::InvalidConfig("expected a working-model design".into()));
    }
    if cfg.controls < 7 {
        return Err(SmcError::InvalidConfig("working model needs J >= 7".into()));
    }
    let (t_len, j) = (cfg.periods, cfg.controls);
    let sigma = DMatrix::from_fn(j, j, |a, b| cfg.rho.powi((a as i32 - b as i32).abs()));
    let chol = sigma
        .cholesky()
        .ok_or_else(|| SmcError::InvalidConfig("control covariance is not positive definite".into()))?;
    let l = chol.l();
    let mut rng = substream(cfg.seed, rep as u64);
    let mut controls = DMatrix::zeros(t_len, j);
    for t in 0..t_len {
        let z = DVector::from_vec(normals(&mut rng, j));
        controls.set_row(t, &(&l * z).transpose());
    }
    let theta: Vec<f64> = (0..j).map(|k| if k < 7 { cfg.c / 7.0 } else { 0.0 }).collect();
    let theta_v = DVector::from_column_slice(&theta);
    let mu1: Vec<f64> = (&controls * &theta_v).iter().copied().collect();
    let h: Vec<f64> = (0..t_len)
        .map(|t| {
            let n2 = controls.row(t).norm_squared();
            n2 / (j as f64 + n2)
        })
        .collect();
    let m = mean(&mu1);
    let var_mu = mu1.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (t_len as f64 - 1.0).max(1.0);
    let sigma0_sq = var_mu * (1.0 - cfg.r2) / (cfg.r2 * mean(&h));
    let sigma_t: Vec<f64> = h.iter().map(|ht| (sigma0_sq * ht).sqrt()).collect();
    let eps = normals(&mut rng, t_len);

    let mut y = DMatrix::zeros(t_len, j + 1);
    for t in 0..t_len {
        y[(t, 0)] = mu1[t] + sigma_t[t] * eps[t];
    }
    y.columns_mut(1, j).copy_from(&controls);
    let (unit_labels, time_labels) = labels(j + 1, t_len);
    let panel = PanelData::new(y, unit_labels, time_labels, 0, cfg.t0)?;
    Ok((
        panel,
        SimTruth {
            mu1,
            sigma_t,
            coefficients: theta,
            alpha: None,
            factors: None,
            sigma0_sq: Some(sigma0_sq),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::LoadingPattern;

    #[test]
    fn noiseless_l1_structure() {
        let cfg = SimConfig {
            sigma: 0.0,
            ..SimConfig::factor(LoadingPattern::L1, 0.0)
        };
        let (p, truth) = gen_factor_dgp(&cfg, 3).unwrap();
        let y = p.outcomes();
        let alpha = truth.alpha.unwrap();
        for t in 0..cfg.periods {
            for j in 1..7 {
                assert_eq!(y[(t, j)], y[(t, 0)]);
            }
            for j in 7..=cfg.controls {
                assert_eq!(y[(t, j)], alpha[t]);
            }
        }
    }

    #[test]
    fn noiseless_l2_gap_is_twice_factor() {
        let cfg = SimConfig::factor(LoadingPattern::L2, 0.0);
        let (p, truth) = gen_factor_dgp(&cfg, 0).unwrap();
        let f = truth.factors.unwrap();
        let y = p.outcomes();
        for t in 0..cfg.periods {
            for j in 1..7 {
                assert!((y[(t, 0)] - y[(t, j)] - 2.0 * f[t]).abs() < 1e-14);
            }
        }
        assert_eq!(truth.mu1, p.series(0).iter().copied().collect::<Vec<_>>());
    }

    #[test]
    fn same_seed_same_draws() {
        let cfg = SimConfig::factor(LoadingPattern::L3, 0.5);
        let (a, _) = gen_factor_dgp(&cfg, 7).unwrap();
        let (b, _) = gen_factor_dgp(&cfg, 7).unwrap();
        assert_eq!(a, b);
        let (c, _) = gen_factor_dgp(&cfg, 8).unwrap();
        assert_ne!(a, c);
        let w = SimConfig::working(1.0, 0.6);
        assert_eq!(gen_working_dgp(&w, 2).unwrap().0, gen_working_dgp(&w, 2).unwrap().0);
    }

    #[test]
    fn working_coefficients() {
        let cfg = SimConfig::working(1.0, 0.8);
        let (p, truth) = gen_working_dgp(&cfg, 0).unwrap();
        assert_eq!(p.n_controls(), 20);
        assert!((truth.coefficients.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(truth.coefficients.iter().filter(|&&c| c != 0.0).count(), 7);
        assert!(truth.sigma0_sq.unwrap() > 0.0);
    }
}
