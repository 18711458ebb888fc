use rayon::prelude::*;
use serde::Serialize;

use super::{generate, mean_se, SimConfig};
use crate::baselines::fit_method;
use crate::error::{Result, SmcError};
use crate::panel::{EstimatorOutput, Method, PanelData};
use crate::smc::SmcOptions;

/// Post-period mean squared gap between `truth_path` and the fitted
/// counterfactual.
pub fn mspe(output: &EstimatorOutput, truth_path: &[f64], t0: usize) -> Result<f64> {
    let n = output.counterfactual.len();
    if truth_path.len() != n {
        return Err(SmcError::LengthMismatch {
            what: "truth path",
            expected: n,
            got: truth_path.len(),
        });
    }
    if t0 >= n {
        return Err(SmcError::InvalidSplit { t0, periods: n });
    }
    let sum: f64 = output.counterfactual[t0..]
        .iter()
        .zip(&truth_path[t0..])
        .map(|(c, y)| (c - y).powi(2))
        .sum();
    Ok(sum / (n - t0) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: Method,
    pub mean_mspe: f64,
    pub se: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloTable {
    pub config: SimConfig,
    pub rows: Vec<MethodSummary>,
    /// `per_rep[r][m]`: MSPE of method `m` in replication `r`, `None` on failure.
    pub per_rep: Vec<Vec<Option<f64>>>,
}

impl MonteCarloTable {
    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn csv_header() -> &'static str {
        "dgp,T,T0,J,lambda,sigma,c,r2,rho,reps,seed,method,mean_mspe,se,failures"
    }

    /// One line per method, no header.
    pub fn csv_rows(&self) -> String {
        let c = &self.config;
        let mut out = String::new();
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                c.dgp,
                c.periods,
                c.t0,
                c.controls,
                c.lambda,
                c.sigma,
                c.c,
                c.r2,
                c.rho,
                c.reps,
                c.seed,
                r.method,
                r.mean_mspe,
                r.se,
                r.failures
            ));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{}", Self::csv_header(), self.csv_rows())
    }
}

fn one_rep(cfg: &SimConfig, rep: usize) -> Result<Vec<Option<f64>>> {
    let (panel, _truth) = generate(cfg, rep)?;
    // no treatment is applied in simulation, so the observed path is Y₁ₜ(0)
    let observed: Vec<f64> = panel.series(panel.treated()).iter().copied().collect();
    Ok(cfg
        .methods
        .iter()
        .map(|&m| {
            let out = fit_method(&panel, m, &cfg.smc);
            match out.and_then(|o| mspe(&o, &observed, cfg.t0)) {
                Ok(v) if v.is_finite() => Some(v),
                Ok(_) => None,
                Err(e) => {
                    log::debug!("rep {rep} {m}: {e}");
                    None
                }
            }
        })
        .collect())
}

/// Runs every replication in parallel and summarizes each method over the
/// replications where it succeeded.
pub fn run_monte_carlo(cfg: &SimConfig) -> Result<MonteCarloTable> {
    cfg.validate()?;
    let per_rep: Vec<Vec<Option<f64>>> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| one_rep(cfg, rep))
        .collect::<Result<_>>()?;
    let rows = cfg
        .methods
        .iter()
        .enumerate()
        .map(|(k, &method)| {
            let ok: Vec<f64> = per_rep.iter().filter_map(|r| r[k]).collect();
            let (mean_mspe, se) = mean_se(&ok);
            MethodSummary {
                method,
                mean_mspe,
                se,
                failures: cfg.reps - ok.len(),
            }
        })
        .collect();
    Ok(MonteCarloTable {
        config: cfg.clone(),
        rows,
        per_rep,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlaceboTable {
    pub methods: Vec<Method>,
    /// Label of each pseudo-treated control.
    pub regions: Vec<String>,
    /// `mspe[r][m]` over the post-period.
    pub mspe: Vec<Vec<f64>>,
    /// Mean over regions, per method.
    pub average: Vec<f64>,
}

impl PlaceboTable {
    pub fn to_csv(&self) -> String {
        let fmt_row = |label: &str, vals: &[f64]| {
            let mut line = label.to_string();
            for v in vals {
                line.push_str(&format!(",{v}"));
            }
            line.push('\n');
            line
        };
        let mut out = String::from("region");
        for m in &self.methods {
            out.push_str(&format!(",{m}"));
        }
        out.push('\n');
        for (r, vals) in self.regions.iter().zip(&self.mspe) {
            out.push_str(&fmt_row(r, vals));
        }
        out.push_str(&fmt_row("average", &self.average));
        out
    }
}

/// Treats each control in turn as the treated unit. The genuinely treated
/// unit is dropped from every donor pool, so each pseudo-treated unit has
/// `J − 1` donors and no true effect.
pub fn run_placebo(panel: &PanelData, methods: &[Method], options: &SmcOptions) -> Result<PlaceboTable> {
    if methods.is_empty() {
        return Err(SmcError::InvalidConfig("no methods requested".into()));
    }
    let controls = panel.controls();
    if controls.len() < 2 {
        return Err(SmcError::EmptyDonorPool);
    }
    let t0 = panel.t0();
    let mspe: Vec<Vec<f64>> = controls
        .par_iter()
        .map(|&r| {
            let pool: Vec<usize> = controls.iter().copied().filter(|&c| c != r).collect();
            let sub = panel.select_units(r, &pool)?;
            methods
                .iter()
                .map(|&m| {
                    let out = fit_method(&sub, m, options)?;
                    let post = &out.att[t0..];
                    Ok(post.iter().map(|a| a * a).sum::<f64>() / post.len() as f64)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let average = (0..methods.len())
        .map(|k| mspe.iter().map(|row| row[k]).sum::<f64>() / mspe.len() as f64)
        .collect();
    Ok(PlaceboTable {
        methods: methods.to_vec(),
        regions: controls.iter().map(|&c| panel.unit_labels()[c].clone()).collect(),
        mspe,
        average,
    })
}
