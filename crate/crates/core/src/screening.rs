//! Rank-indicator screening of control units for panels with more controls
//! than the pre-period can support.
//!
//! Statistics are computed on raw pre-period outcomes: no centering, no
//! diagonal weights, no covariate rows.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SmcError};
use crate::panel::PanelData;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SirsVariant {
    /// `η_j = mean_t { Y_jt · #{l : Y₁ₗ < Y₁ₜ} / T₀ }²`.
    #[default]
    RankCount,
    /// `η_j = mean_t { (1/T₀) Σ_l Y_jl · 1[Y₁ₗ < Y₁ₜ] }²`.
    StandardSirs,
}

impl FromStr for SirsVariant {
    type Err = SmcError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rank_count" | "rank" => Ok(Self::RankCount),
            "standard_sirs" | "standard" => Ok(Self::StandardSirs),
            other => Err(SmcError::InvalidConfig(format!("unknown screening variant `{other}`"))),
        }
    }
}

/// Number of controls to keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeepCount {
    /// `min(J, ⌊T₀/ln T₀⌋, T₀ − 2)`, at least 1.
    Auto,
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScreeningReport {
    /// One statistic per control, in panel control order.
    pub eta: Vec<f64>,
    /// Kept control positions, by decreasing statistic.
    pub kept: Vec<usize>,
    pub d: usize,
    pub variant: SirsVariant,
}

pub fn auto_keep_count(controls: usize, t0: usize) -> usize {
    let t = t0 as f64;
    let by_log = if t0 > 1 { (t / t.ln()).floor() as usize } else { 1 };
    controls.min(by_log).min(t0.saturating_sub(2)).max(1)
}

pub fn sirs_statistics(panel: &PanelData, variant: SirsVariant) -> Vec<f64> {
    let t0 = panel.t0();
    let y = panel.outcomes();
    let treated: Vec<f64> = (0..t0).map(|t| y[(t, panel.treated())]).collect();
    // below[t][l] = 1[Y₁ₗ < Y₁ₜ]
    let below: Vec<Vec<bool>> = treated
        .iter()
        .map(|&yt| treated.iter().map(|&yl| yl < yt).collect())
        .collect();
    let n = t0 as f64;
    panel
        .controls()
        .into_iter()
        .map(|j| {
            let total: f64 = (0..t0)
                .map(|t| {
                    let inner = match variant {
                        SirsVariant::RankCount => {
                            let count = below[t].iter().filter(|&&b| b).count() as f64;
                            y[(t, j)] * count / n
                        }
                        SirsVariant::StandardSirs => {
                            (0..t0).filter(|&l| below[t][l]).map(|l| y[(l, j)]).sum::<f64>() / n
                        }
                    };
                    inner * inner
                })
                .sum();
            total / n
        })
        .collect()
}

pub fn screen_units(panel: &PanelData, d: KeepCount, variant: SirsVariant) -> Result<ScreeningReport> {
    let eta = sirs_statistics(panel, variant);
    let j = eta.len();
    let d = match d {
        KeepCount::Fixed(0) => return Err(SmcError::InvalidKeepCount(0)),
        KeepCount::Fixed(d) => d,
        KeepCount::Auto => auto_keep_count(j, panel.t0()),
    };
    let mut order: Vec<usize> = (0..j).collect();
    // stable sort keeps lower index first on ties
    order.sort_by(|&a, &b| eta[b].total_cmp(&eta[a]));
    order.truncate(d.min(j));
    Ok(ScreeningReport {
        eta,
        kept: order,
        d,
        variant,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn panel(cols: &[&[f64]], t0: usize) -> PanelData {
        let rows = cols[0].len();
        let m = DMatrix::from_fn(rows, cols.len(), |t, j| cols[j][t]);
        let units = (0..cols.len()).map(|j| format!("u{j}")).collect();
        let time = (0..rows).map(|t| t.to_string()).collect();
        PanelData::new(m, units, time, 0, t0).unwrap()
    }

    #[test]
    fn two_period_hand_value() {
        let p = panel(&[&[0., 1., 5.], &[3., 4., 0.]], 2);
        let eta = sirs_statistics(&p, SirsVariant::RankCount);
        assert_eq!(eta, vec![2.0]);
        // standard form: t=2 inner = Y_j1 / 2 = 1.5
        let eta = sirs_statistics(&p, SirsVariant::StandardSirs);
        assert_eq!(eta, vec![1.125]);
    }

    #[test]
    fn constant_treated_gives_zero() {
        let p = panel(&[&[2., 2., 2., 0.], &[1., 5., 3., 1.], &[7., -1., 2., 0.]], 3);
        for v in [SirsVariant::RankCount, SirsVariant::StandardSirs] {
            assert!(sirs_statistics(&p, v).iter().all(|&e| e == 0.0));
        }
    }

    #[test]
    fn keep_rules() {
        let p = panel(&[&[0., 1., 2., 0.], &[1., 1., 1., 0.], &[2., 2., 2., 0.], &[1., 1., 1., 0.]], 3);
        let r = screen_units(&p, KeepCount::Fixed(10), SirsVariant::RankCount).unwrap();
        assert_eq!(r.kept.len(), 3);
        let r = screen_units(&p, KeepCount::Fixed(1), SirsVariant::RankCount).unwrap();
        assert_eq!(r.kept, vec![1]);
        // units 0 and 2 tie
        let r = screen_units(&p, KeepCount::Fixed(2), SirsVariant::RankCount).unwrap();
        assert_eq!(r.kept, vec![1, 0]);
        assert!(matches!(
            screen_units(&p, KeepCount::Fixed(0), SirsVariant::RankCount),
            Err(SmcError::InvalidKeepCount(0))
        ));
    }

    #[test]
    fn auto_count() {
        assert_eq!(auto_keep_count(50, 40), 10);
        assert_eq!(auto_keep_count(3, 40), 3);
        assert_eq!(auto_keep_count(50, 5), 3);
        assert_eq!(auto_keep_count(50, 2), 1);
    }
}
