//! Panel data model shared by every estimator.
//!
//! A [`PanelData`] holds outcomes for `J + 1` units over `T` periods in a
//! `T × (J+1)` matrix, one column per unit. Periods `0..t0` are
//! pre-treatment. Estimators never read the raw pre-period rows directly;
//! they read the *matching block* ([`PanelData::matching_block`]), which is
//! the pre-period outcomes scaled by `sqrt(v_t)` when diagonal weights are
//! attached, followed by any stacked covariate rows. Prediction always uses
//! the raw outcome rows.

use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SmcError};

/// Outcomes, labels and the treatment split for a single treated unit.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelData {
    outcomes: DMatrix<f64>,
    unit_labels: Vec<String>,
    time_labels: Vec<String>,
    treated: usize,
    t0: usize,
    covariates: Option<DMatrix<f64>>,
    augmented: Option<DMatrix<f64>>,
    pre_weights: Option<DVector<f64>>,
}

impl PanelData {
    /// Builds a validated panel. `outcomes` is `T × (J+1)`.
    pub fn new(
        outcomes: DMatrix<f64>,
        unit_labels: Vec<String>,
        time_labels: Vec<String>,
        treated: usize,
        t0: usize,
    ) -> Result<Self> {
        let (periods, units) = outcomes.shape();
        if unit_labels.len() != units {
            return Err(SmcError::LengthMismatch {
                what: "unit labels",
                expected: units,
                got: unit_labels.len(),
            });
        }
        if time_labels.len() != periods {
            return Err(SmcError::LengthMismatch {
                what: "time labels",
                expected: periods,
                got: time_labels.len(),
            });
        }
        check_unique(&unit_labels)?;
        if treated >= units {
            return Err(SmcError::UnknownUnit(format!("treated index {treated}")));
        }
        if t0 < 1 || t0 >= periods {
            return Err(SmcError::InvalidSplit { t0, periods });
        }
        if let Some((t, j)) = first_non_finite(&outcomes) {
            return Err(SmcError::NonFinite(format!(
                "outcome at period {t}, unit {}",
                unit_labels[j]
            )));
        }
        Ok(Self {
            outcomes,
            unit_labels,
            time_labels,
            treated,
            t0,
            covariates: None,
            augmented: None,
            pre_weights: None,
        })
    }

    /// Attaches a `p × (J+1)` covariate matrix (one row per covariate).
    pub fn with_covariates(mut self, covariates: DMatrix<f64>) -> Result<Self> {
        if covariates.ncols() != self.n_units() {
            return Err(SmcError::LengthMismatch {
                what: "covariate columns",
                expected: self.n_units(),
                got: covariates.ncols(),
            });
        }
        if let Some((k, j)) = first_non_finite(&covariates) {
            return Err(SmcError::NonFinite(format!(
                "covariate {k}, unit {}",
                self.unit_labels[j]
            )));
        }
        self.covariates = Some(covariates);
        Ok(self)
    }

    pub fn outcomes(&self) -> &DMatrix<f64> {
        &self.outcomes
    }

    pub fn unit_labels(&self) -> &[String] {
        &self.unit_labels
    }

    pub fn time_labels(&self) -> &[String] {
        &self.time_labels
    }

    pub fn treated(&self) -> usize {
        self.treated
    }

    pub fn treated_label(&self) -> &str {
        &self.unit_labels[self.treated]
    }

    pub fn t0(&self) -> usize {
        self.t0
    }

    pub fn n_periods(&self) -> usize {
        self.outcomes.nrows()
    }

    pub fn n_units(&self) -> usize {
        self.outcomes.ncols()
    }

    /// Number of control units `J`.
    pub fn n_controls(&self) -> usize {
        self.n_units() - 1
    }

    /// Column indices of the control units, in panel order.
    pub fn controls(&self) -> Vec<usize> {
        (0..self.n_units()).filter(|&j| j != self.treated).collect()
    }

    pub fn covariates(&self) -> Option<&DMatrix<f64>> {
        self.covariates.as_ref()
    }

    /// Covariate rows already stacked under the pre-period block.
    pub fn augmented_rows(&self) -> Option<&DMatrix<f64>> {
        self.augmented.as_ref()
    }

    /// Diagonal pre-period weights `v`, if any were applied.
    pub fn pre_weights(&self) -> Option<&DVector<f64>> {
        self.pre_weights.as_ref()
    }

    pub fn series(&self, unit: usize) -> DVector<f64> {
        self.outcomes.column(unit).into_owned()
    }

    /// Number of rows in the matching block: `t0 + p`.
    pub fn matching_rows(&self) -> usize {
        self.t0 + self.augmented.as_ref().map_or(0, |a| a.nrows())
    }

    /// Per-row weights of the matching block: `v_t` on outcome rows, 1 on
    /// stacked covariate rows.
    pub fn row_weights(&self) -> DVector<f64> {
        let mut w = DVector::from_element(self.matching_rows(), 1.0);
        if let Some(v) = &self.pre_weights {
            w.rows_mut(0, self.t0).copy_from(v);
        }
        w
    }

    /// The pre-treatment characteristics every estimator matches on:
    /// `sqrt(v_t)`-scaled pre-period outcomes followed by stacked covariates.
    pub fn matching_block(&self) -> DMatrix<f64> {
        let rows = self.matching_rows();
        let mut block = DMatrix::zeros(rows, self.n_units());
        block
            .rows_mut(0, self.t0)
            .copy_from(&self.outcomes.rows(0, self.t0));
        if let Some(v) = &self.pre_weights {
            for t in 0..self.t0 {
                let s = v[t].sqrt();
                block.row_mut(t).scale_mut(s);
            }
        }
        if let Some(a) = &self.augmented {
            block.rows_mut(self.t0, a.nrows()).copy_from(a);
        }
        block
    }

    /// Sub-panel with `treated` as the treated unit (column 0) followed by
    /// `controls` in the given order. Covariates, stacked rows and weights
    /// are carried along.
    pub fn select_units(&self, treated: usize, controls: &[usize]) -> Result<PanelData> {
        let mut cols = Vec::with_capacity(controls.len() + 1);
        cols.push(treated);
        cols.extend_from_slice(controls);
        for &c in &cols {
            if c >= self.n_units() {
                return Err(SmcError::UnknownUnit(format!("unit index {c}")));
            }
        }
        let pick = |m: &DMatrix<f64>| m.select_columns(cols.iter());
        let labels: Vec<String> = cols.iter().map(|&c| self.unit_labels[c].clone()).collect();
        check_unique(&labels)?;
        Ok(PanelData {
            outcomes: pick(&self.outcomes),
            unit_labels: labels,
            time_labels: self.time_labels.clone(),
            treated: 0,
            t0: self.t0,
            covariates: self.covariates.as_ref().map(pick),
            augmented: self.augmented.as_ref().map(pick),
            pre_weights: self.pre_weights.clone(),
        })
    }

    /// Same panel with every outcome and covariate multiplied by `c`.
    pub fn scaled(&self, c: f64) -> PanelData {
        let mut out = self.clone();
        out.outcomes *= c;
        if let Some(x) = out.covariates.as_mut() {
            *x *= c;
        }
        if let Some(x) = out.augmented.as_mut() {
            *x *= c;
        }
        out
    }
}

fn check_unique(labels: &[String]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for l in labels {
        if !seen.insert(l.as_str()) {
            return Err(SmcError::DuplicateUnit(l.clone()));
        }
    }
    Ok(())
}

fn first_non_finite(m: &DMatrix<f64>) -> Option<(usize, usize)> {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if !m[(i, j)].is_finite() {
                return Some((i, j));
            }
        }
    }
    None
}

fn io_err(path: &Path, source: std::io::Error) -> SmcError {
    SmcError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(e: csv::Error) -> SmcError {
    SmcError::Parse(e.to_string())
}

fn parse_cell(raw: &str, row: usize, column: &str) -> Result<f64> {
    let s = raw.trim();
    let value: f64 = s.parse().map_err(|_| SmcError::MissingValue {
        row,
        column: column.to_string(),
    })?;
    if !value.is_finite() {
        return Err(SmcError::NonFinite(format!("row {row}, column {column}")));
    }
    Ok(value)
}

/// Reads a wide panel: header `time,<unit1>,<unit2>,...`, one row per period.
pub fn load_panel_csv(path: impl AsRef<Path>, treated_label: &str, t0: usize) -> Result<PanelData> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    parse_panel_csv(file, treated_label, t0)
}

/// [`load_panel_csv`] over any reader.
pub fn parse_panel_csv<R: Read>(reader: R, treated_label: &str, t0: usize) -> Result<PanelData> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers().map_err(csv_err)?.clone();
    if header.len() < 2 {
        return Err(SmcError::Parse(
            "panel header needs a time column and at least one unit".into(),
        ));
    }
    let unit_labels: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    check_unique(&unit_labels)?;
    let treated = unit_labels
        .iter()
        .position(|l| l == treated_label)
        .ok_or_else(|| SmcError::UnknownUnit(treated_label.to_string()))?;

    let mut time_labels = Vec::new();
    let mut values = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(csv_err)?;
        time_labels.push(record[0].to_string());
        for (cell, label) in record.iter().skip(1).zip(&unit_labels) {
            values.push(parse_cell(cell, row + 1, label)?);
        }
    }
    let periods = time_labels.len();
    if t0 < 1 || t0 >= periods {
        return Err(SmcError::InvalidSplit { t0, periods });
    }
    let outcomes = DMatrix::from_row_slice(periods, unit_labels.len(), &values);
    PanelData::new(outcomes, unit_labels, time_labels, treated, t0)
}

/// Writes the raw outcomes back in the wide format read by [`load_panel_csv`].
/// Values use the shortest decimal rendering that parses back to the same
/// bits.
pub fn write_panel_csv(panel: &PanelData, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    write_panel_csv_to(panel, file)
}

pub fn write_panel_csv_to<W: Write>(panel: &PanelData, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["time".to_string()];
    header.extend(panel.unit_labels.iter().cloned());
    wtr.write_record(&header).map_err(csv_err)?;
    for t in 0..panel.n_periods() {
        let mut rec = vec![panel.time_labels[t].clone()];
        rec.extend(panel.outcomes.row(t).iter().map(|v| v.to_string()));
        wtr.write_record(&rec).map_err(csv_err)?;
    }
    wtr.flush().map_err(|e| SmcError::Parse(e.to_string()))?;
    Ok(())
}

/// Reads a covariate table (`covariate,<unit1>,...`, one row per covariate)
/// and attaches it to `panel`. Unit columns are matched by label.
pub fn load_covariates_csv(path: impl AsRef<Path>, panel: PanelData) -> Result<PanelData> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    parse_covariates_csv(file, panel)
}

pub fn parse_covariates_csv<R: Read>(reader: R, panel: PanelData) -> Result<PanelData> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers().map_err(csv_err)?.clone();
    let labels: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    check_unique(&labels)?;
    let mut column_of = Vec::with_capacity(panel.n_units());
    for unit in panel.unit_labels() {
        let pos = labels
            .iter()
            .position(|l| l == unit)
            .ok_or_else(|| SmcError::UnknownUnit(format!("{unit} missing from covariates")))?;
        column_of.push(pos);
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let parsed: Vec<f64> = record
            .iter()
            .skip(1)
            .zip(&labels)
            .map(|(c, l)| parse_cell(c, row + 1, l))
            .collect::<Result<_>>()?;
        rows.push(column_of.iter().map(|&p| parsed[p]).collect());
    }
    if rows.is_empty() {
        return Err(SmcError::NoCovariates);
    }
    let p = rows.len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    panel.with_covariates(DMatrix::from_row_slice(p, column_of.len(), &flat))
}

/// Reads diagonal pre-period weights: a single column headed `v`.
pub fn load_v_weights_csv(path: impl AsRef<Path>) -> Result<DVector<f64>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    parse_v_weights_csv(file)
}

pub fn parse_v_weights_csv<R: Read>(reader: R) -> Result<DVector<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers().map_err(csv_err)?.clone();
    if header.len() != 1 || &header[0] != "v" {
        return Err(SmcError::Parse("V-weights file must have a single `v` column".into()));
    }
    let mut v = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(csv_err)?;
        v.push(parse_cell(&record[0], row + 1, "v")?);
    }
    Ok(DVector::from_vec(v))
}

/// Pre-period matching block after (weighted) per-unit centering.
#[derive(Debug, Clone)]
pub struct CenteredPanel {
    /// Centered treated characteristics, length `t0 + p`.
    pub y1c: DVector<f64>,
    /// Centered control characteristics, `(t0 + p) × J`.
    pub y0c: DMatrix<f64>,
    pub y1_mean: f64,
    pub control_means: DVector<f64>,
    /// Panel column index of each control column in `y0c`.
    pub controls: Vec<usize>,
    /// Controls with no pre-period variation; they are excluded from matching.
    pub degenerate: Vec<bool>,
    pub treated: usize,
    pub t0: usize,
}

impl CenteredPanel {
    pub fn n_controls(&self) -> usize {
        self.controls.len()
    }

    pub fn n_rows(&self) -> usize {
        self.y1c.len()
    }

    pub fn active_controls(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_controls()).filter(|&j| !self.degenerate[j])
    }
}

/// Centers the matching block of every unit on its (weighted) pre-period
/// mean. With weights `ω_t` the centered row is `sqrt(ω_t)·(x_t − x̄_ω)`, so
/// least squares on the centered data is weighted least squares with an
/// intercept on the raw data.
pub fn center_pretreatment(panel: &PanelData) -> Result<CenteredPanel> {
    let raw = {
        let mut b = panel.outcomes.rows(0, panel.t0).into_owned();
        if let Some(a) = &panel.augmented {
            b = b.insert_rows(panel.t0, a.nrows(), 0.0);
            b.rows_mut(panel.t0, a.nrows()).copy_from(a);
        }
        b
    };
    let omega = panel.row_weights();
    let total: f64 = omega.sum();
    if total <= 0.0 {
        return Err(SmcError::InvalidConfig("pre-period weights sum to zero".into()));
    }
    let root: DVector<f64> = omega.map(f64::sqrt);
    let center = |col: DVector<f64>| -> (DVector<f64>, f64) {
        let mean = col.dot(&omega) / total;
        let c = (col.add_scalar(-mean)).component_mul(&root);
        (c, mean)
    };

    let (y1c, y1_mean) = center(raw.column(panel.treated).into_owned());
    let controls = panel.controls();
    let rows = raw.nrows();
    let mut y0c = DMatrix::zeros(rows, controls.len());
    let mut control_means = DVector::zeros(controls.len());
    let mut degenerate = vec![false; controls.len()];
    for (k, &j) in controls.iter().enumerate() {
        let col = raw.column(j).into_owned();
        let scale = col.component_mul(&root).norm();
        let (c, mean) = center(col);
        degenerate[k] = c.norm() <= 1e-12 * scale;
        if degenerate[k] {
            log::warn!(
                "control {} is constant over the pre-period and is excluded",
                panel.unit_labels[j]
            );
        }
        y0c.set_column(k, &c);
        control_means[k] = mean;
    }
    Ok(CenteredPanel {
        y1c,
        y0c,
        y1_mean,
        control_means,
        controls,
        degenerate,
        treated: panel.treated,
        t0: panel.t0,
    })
}

/// How covariate rows are rescaled before stacking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateScaling {
    /// Multiply covariate `k` by `s_y / s_k` (cross-unit standard deviations).
    #[default]
    MatchOutcomeVariance,
    None,
}

impl FromStr for CovariateScaling {
    type Err = SmcError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "match_outcome_variance" | "match" => Ok(Self::MatchOutcomeVariance),
            "none" => Ok(Self::None),
            other => Err(SmcError::InvalidConfig(format!("unknown covariate scaling `{other}`"))),
        }
    }
}

fn cross_unit_sd(row: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = row.clone().count() as f64;
    if n < 2.0 {
        return 0.0;
    }
    let mean = row.clone().sum::<f64>() / n;
    (row.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Moves the panel's covariates under its pre-period block. The result
/// matches on `t0 + p` rows and still predicts from outcome rows only.
pub fn stack_covariates(panel: &PanelData, scaling: CovariateScaling) -> Result<PanelData> {
    let cov = match &panel.covariates {
        Some(c) if c.nrows() > 0 => c,
        _ => return Err(SmcError::NoCovariates),
    };
    let mut rows = cov.clone();
    if scaling == CovariateScaling::MatchOutcomeVariance {
        let s_y = (0..panel.t0)
            .map(|t| cross_unit_sd(panel.outcomes.row(t).iter().copied()))
            .sum::<f64>()
            / panel.t0 as f64;
        for k in 0..rows.nrows() {
            let s_k = cross_unit_sd(cov.row(k).iter().copied());
            if s_k == 0.0 {
                return Err(SmcError::ZeroVarianceCovariate(k));
            }
            rows.row_mut(k).scale_mut(s_y / s_k);
        }
    }
    let mut out = panel.clone();
    out.covariates = None;
    out.augmented = Some(match &panel.augmented {
        Some(prev) => {
            let mut both = prev.clone().insert_rows(prev.nrows(), rows.nrows(), 0.0);
            both.rows_mut(prev.nrows(), rows.nrows()).copy_from(&rows);
            both
        }
        None => rows,
    });
    Ok(out)
}

/// Attaches diagonal weights `v` (length `t0`) to the pre-period. The
/// matching block then carries pre-period row `t` multiplied by
/// `sqrt(v_t)`; raw outcomes are kept for prediction. Weights compose
/// multiplicatively, and all-ones weights leave the panel unchanged.
pub fn apply_diag_weights(panel: &PanelData, v: &DVector<f64>) -> Result<PanelData> {
    if v.len() != panel.t0 {
        return Err(SmcError::LengthMismatch {
            what: "V weights",
            expected: panel.t0,
            got: v.len(),
        });
    }
    if let Some((index, &value)) = v
        .iter()
        .enumerate()
        .find(|(_, x)| !x.is_finite() || **x < 0.0)
    {
        return Err(SmcError::NegativeWeight { index, value });
    }
    let mut out = panel.clone();
    if v.iter().all(|&x| x == 1.0) {
        return Ok(out);
    }
    out.pre_weights = Some(match &panel.pre_weights {
        Some(prev) => prev.component_mul(v),
        None => v.clone(),
    });
    Ok(out)
}

/// Estimator tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Smc,
    Sc,
    Dsc,
    Ols,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Smc, Method::Sc, Method::Dsc, Method::Ols];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Smc => "smc",
            Method::Sc => "sc",
            Method::Dsc => "dsc",
            Method::Ols => "ols",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = SmcError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "smc" => Ok(Method::Smc),
            "sc" => Ok(Method::Sc),
            "dsc" => Ok(Method::Dsc),
            "ols" => Ok(Method::Ols),
            other => Err(SmcError::InvalidConfig(format!("unknown method `{other}`"))),
        }
    }
}

/// Parses a comma-separated method list such as `smc,sc`.
pub fn parse_methods(list: &str) -> Result<Vec<Method>> {
    let methods: Vec<Method> = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect::<Result<_>>()?;
    if methods.is_empty() {
        return Err(SmcError::InvalidConfig("empty method list".into()));
    }
    Ok(methods)
}

/// A fitted counterfactual path and the weights that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorOutput {
    pub method: Method,
    /// `Ŷ₁ₜ(0)` for every period.
    pub counterfactual: Vec<f64>,
    /// Observed minus counterfactual for every period.
    pub att: Vec<f64>,
    /// Panel column index of each donor, aligned with the weight vectors.
    pub controls: Vec<usize>,
    /// `w_j` for smc/sc/dsc, regression coefficients for ols.
    pub unit_weights: Vec<f64>,
    /// Matching slopes (smc only).
    pub thetas: Option<Vec<f64>>,
    /// Effective linear coefficient on each donor's outcome.
    pub comprehensive_weights: Vec<f64>,
    pub intercept: f64,
    pub sigma2_hat: Option<f64>,
    pub pre_rss: f64,
    pub post_mspe: Option<f64>,
    /// Control positions retained by screening, when it ran.
    pub screened_units: Option<Vec<usize>>,
}

impl EstimatorOutput {
    /// Fills `att` and `pre_rss` from a counterfactual path.
    pub(crate) fn from_path(
        method: Method,
        panel: &PanelData,
        counterfactual: DVector<f64>,
        unit_weights: Vec<f64>,
        comprehensive_weights: Vec<f64>,
        intercept: f64,
    ) -> Self {
        let observed = panel.outcomes.column(panel.treated);
        let att: Vec<f64> = observed
            .iter()
            .zip(counterfactual.iter())
            .map(|(y, c)| y - c)
            .collect();
        let pre_rss = att[..panel.t0].iter().map(|a| a * a).sum();
        Self {
            method,
            counterfactual: counterfactual.iter().copied().collect(),
            att,
            controls: panel.controls(),
            unit_weights,
            thetas: None,
            comprehensive_weights,
            intercept,
            sigma2_hat: None,
            pre_rss,
            post_mspe: None,
            screened_units: None,
        }
    }

    /// `year,actual,counterfactual,att` for every period.
    pub fn path_csv(&self, panel: &PanelData) -> String {
        let mut out = String::from("year,actual,counterfactual,att\n");
        let observed = panel.outcomes.column(panel.treated);
        for (t, label) in panel.time_labels.iter().enumerate() {
            out.push_str(&format!(
                "{label},{},{},{}\n",
                observed[t], self.counterfactual[t], self.att[t]
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOY: &str = "time,A,B,C\n1,1,2,5\n2,2,4,5\n3,3,6,5\n4,4,8,5\n";

    #[test]
    fn loads_toy_panel_shape() {
        let p = parse_panel_csv(TOY.as_bytes(), "A", 3).unwrap();
        assert_eq!(p.n_periods(), 4);
        assert_eq!(p.n_controls(), 2);
        assert_eq!(p.treated(), 0);
        assert_eq!(p.controls(), vec![1, 2]);
        assert_eq!(p.outcomes()[(3, 1)], 8.0);
    }

    #[test]
    fn blank_cell_is_missing_value() {
        let bad = "time,A,B,C\n1,1,2,5\n2,,4,5\n3,3,6,5\n4,4,8,5\n";
        let err = parse_panel_csv(bad.as_bytes(), "A", 3).unwrap_err();
        assert!(matches!(err, SmcError::MissingValue { row: 2, .. }), "{err}");
        let text = "time,A,B\n1,1,x\n2,2,3\n";
        let err = parse_panel_csv(text.as_bytes(), "A", 1).unwrap_err();
        assert!(matches!(err, SmcError::MissingValue { .. }));
    }

    #[test]
    fn split_and_label_errors() {
        let err = parse_panel_csv(TOY.as_bytes(), "A", 4).unwrap_err();
        assert!(matches!(err, SmcError::InvalidSplit { t0: 4, periods: 4 }));
        assert!(matches!(
            parse_panel_csv(TOY.as_bytes(), "A", 0).unwrap_err(),
            SmcError::InvalidSplit { .. }
        ));
        assert!(matches!(
            parse_panel_csv(TOY.as_bytes(), "Z", 2).unwrap_err(),
            SmcError::UnknownUnit(_)
        ));
        let dup = "time,A,B,A\n1,1,2,3\n2,1,2,3\n";
        assert!(matches!(
            parse_panel_csv(dup.as_bytes(), "A", 1).unwrap_err(),
            SmcError::DuplicateUnit(_)
        ));
    }

    #[test]
    fn centering_examples() {
        let p = parse_panel_csv(TOY.as_bytes(), "A", 3).unwrap();
        let cp = center_pretreatment(&p).unwrap();
        assert_eq!(cp.y1c.as_slice(), &[-1.0, 0.0, 1.0]);
        assert_eq!(cp.y1_mean, 2.0);
        assert_eq!(cp.degenerate, vec![false, true]);

        let centered = "time,A,B\n1,-1,0\n2,0,1\n3,1,-1\n4,9,9\n";
        let p = parse_panel_csv(centered.as_bytes(), "A", 3).unwrap();
        let cp = center_pretreatment(&p).unwrap();
        assert_eq!(cp.y1c.as_slice(), &[-1.0, 0.0, 1.0]);
        assert_eq!(cp.y1_mean, 0.0);
    }

    #[test]
    fn stack_covariates_contract() {
        let p = parse_panel_csv(TOY.as_bytes(), "A", 3).unwrap();
        assert!(matches!(
            stack_covariates(&p, CovariateScaling::None).unwrap_err(),
            SmcError::NoCovariates
        ));

        // Pre-period cross-unit sd is 2 in every row; covariate sd is 1.
        let y = DMatrix::from_row_slice(3, 3, &[0., 2., 4., 1., 3., 5., 2., 4., 6.]);
        let labels: Vec<String> = ["A", "B", "C"].iter().map(|s| s.to_string()).collect();
        let time: Vec<String> = ["1", "2", "3"].iter().map(|s| s.to_string()).collect();
        let panel = PanelData::new(y, labels, time, 0, 2)
            .unwrap()
            .with_covariates(DMatrix::from_row_slice(2, 3, &[1., 2., 3., 0., 4., 8.]))
            .unwrap();
        let stacked = stack_covariates(&panel, CovariateScaling::MatchOutcomeVariance).unwrap();
        let aug = stacked.augmented_rows().unwrap();
        assert_eq!(aug.row(0).iter().copied().collect::<Vec<_>>(), vec![2., 4., 6.]);
        // second covariate has sd 4 = 2·s_y, so it is halved
        assert_eq!(aug.row(1).iter().copied().collect::<Vec<_>>(), vec![0., 2., 4.]);
        assert_eq!(stacked.matching_rows(), 4);
        assert!(stacked.covariates().is_none());

        let flat = panel
            .clone()
            .with_covariates(DMatrix::from_row_slice(1, 3, &[1., 1., 1.]))
            .unwrap();
        assert!(matches!(
            stack_covariates(&flat, CovariateScaling::MatchOutcomeVariance).unwrap_err(),
            SmcError::ZeroVarianceCovariate(0)
        ));
    }

    #[test]
    fn covariate_row_at_outcome_scale_is_unchanged() {
        let y = DMatrix::from_row_slice(3, 3, &[0., 2., 4., 1., 3., 5., 2., 4., 6.]);
        let labels: Vec<String> = ["A", "B", "C"].iter().map(|s| s.to_string()).collect();
        let time: Vec<String> = ["1", "2", "3"].iter().map(|s| s.to_string()).collect();
        let panel = PanelData::new(y, labels, time, 0, 2)
            .unwrap()
            .with_covariates(DMatrix::from_row_slice(1, 3, &[10., 12., 14.]))
            .unwrap();
        let stacked = stack_covariates(&panel, CovariateScaling::MatchOutcomeVariance).unwrap();
        let row: Vec<f64> = stacked.augmented_rows().unwrap().row(0).iter().copied().collect();
        assert_eq!(row, vec![10., 12., 14.]);
    }

    #[test]
    fn diag_weights_contract() {
        let p = parse_panel_csv(TOY.as_bytes(), "A", 3).unwrap();
        let same = apply_diag_weights(&p, &DVector::from_element(3, 1.0)).unwrap();
        assert_eq!(same, p);

        let w = apply_diag_weights(&p, &DVector::from_vec(vec![1.0, 0.0, 4.0])).unwrap();
        let block = w.matching_block();
        assert_eq!(block.row(1).iter().copied().collect::<Vec<_>>(), vec![0.0; 3]);
        assert_eq!(block[(2, 1)], 12.0);
        assert_eq!(w.outcomes(), p.outcomes());

        assert!(matches!(
            apply_diag_weights(&p, &DVector::from_vec(vec![1.0, -1.0, 1.0])).unwrap_err(),
            SmcError::NegativeWeight { index: 1, .. }
        ));
        assert!(matches!(
            apply_diag_weights(&p, &DVector::from_vec(vec![1.0])).unwrap_err(),
            SmcError::LengthMismatch { .. }
        ));
    }

    #[test]
    fn covariate_and_weight_files() {
        let p = parse_panel_csv(TOY.as_bytes(), "A", 3).unwrap();
        let cov = "covariate,C,A,B\nx,3,1,2\n";
        let p = parse_covariates_csv(cov.as_bytes(), p).unwrap();
        let c = p.covariates().unwrap();
        assert_eq!(c.row(0).iter().copied().collect::<Vec<_>>(), vec![1., 2., 3.]);

        let v = parse_v_weights_csv("v\n1\n0.5\n2\n".as_bytes()).unwrap();
        assert_eq!(v.as_slice(), &[1.0, 0.5, 2.0]);
        assert!(parse_v_weights_csv("w\n1\n".as_bytes()).is_err());
    }

    #[test]
    fn method_parsing() {
        assert_eq!(parse_methods("smc, SC,dsc").unwrap(), vec![Method::Smc, Method::Sc, Method::Dsc]);
        assert!(parse_methods("smc,asc").is_err());
        assert!(parse_methods("").is_err());
    }
}
