use serde::Serialize;
use smc_core::{EstimatorOutput, Method, PanelData, SmcOptions};

#[derive(Debug, Serialize)]
pub struct WeightEntry {
    pub unit: String,
    pub w: f64,
    pub theta: Option<f64>,
    pub comprehensive: f64,
}

/// Every input that determined the fit.
#[derive(Debug, Serialize)]
pub struct FitConfig {
    pub data: String,
    pub covariates: Option<String>,
    pub v_weights: Option<String>,
    pub method: Method,
    pub treated: String,
    pub t0: usize,
    pub options: SmcOptions,
}

#[derive(Debug, Serialize)]
pub struct FitReport {
    pub method: Method,
    pub treated: String,
    pub t0: usize,
    pub weights: Vec<WeightEntry>,
    pub intercept: f64,
    pub sigma2_hat: Option<f64>,
    pub pre_rss: f64,
    pub post_mspe: Option<f64>,
    pub screened_units: Option<Vec<String>>,
    pub config: FitConfig,
}

impl FitReport {
    pub fn new(panel: &PanelData, out: &EstimatorOutput, config: FitConfig) -> Self {
        let labels = panel.unit_labels();
        let weights = out
            .controls
            .iter()
            .enumerate()
            .map(|(k, &col)| WeightEntry {
                unit: labels[col].clone(),
                w: out.unit_weights[k],
                theta: out.thetas.as_ref().map(|t| t[k]),
                comprehensive: out.comprehensive_weights[k],
            })
            .collect();
        let screened_units = out
            .screened_units
            .as_ref()
            .map(|kept| kept.iter().map(|&k| labels[out.controls[k]].clone()).collect());
        Self {
            method: out.method,
            treated: panel.treated_label().to_string(),
            t0: panel.t0(),
            weights,
            intercept: out.intercept,
            sigma2_hat: out.sigma2_hat,
            pre_rss: out.pre_rss,
            post_mspe: out.post_mspe,
            screened_units,
            config,
        }
    }
}
