use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use smc_core::experiments::{gen_factor_dgp, gen_working_dgp, mspe, LoadingPattern, SimConfig};
use smc_core::matching::match_all;
use smc_core::optim::{
    project_to_box, project_to_simplex, solve_box_qp, solve_simplex_qp, Constraint, QpSettings,
    QuadraticProgram,
};
use smc_core::panel::{apply_diag_weights, center_pretreatment, parse_panel_csv, write_panel_csv_to};
use smc_core::screening::{screen_units, KeepCount, SirsVariant};
use smc_core::smc::ScreenMode;
use smc_core::{fit_dsc, fit_sc, fit_smc, fit_smc_detailed, PanelData, SmcOptions};

fn panel_from(values: &[f64], periods: usize, units: usize, t0: usize) -> PanelData {
    let y = DMatrix::from_fn(periods, units, |t, j| values[t * units + j]);
    let labels = (0..units).map(|j| format!("u{j}")).collect();
    let time = (0..periods).map(|t| (2000 + t).to_string()).collect();
    PanelData::new(y, labels, time, 0, t0).unwrap()
}

/// (panel, T0) with 1..=6 controls, 4..=20 pre-periods and 1..=5 post-periods.
fn arb_panel() -> impl Strategy<Value = PanelData> {
    (1usize..=6, 4usize..=20, 1usize..=5).prop_flat_map(|(j, t0, post)| {
        let units = j + 1;
        let periods = t0 + post;
        prop::collection::vec(-10.0f64..10.0, periods * units)
            .prop_map(move |v| panel_from(&v, periods, units, t0))
    })
}

fn arb_design(max_dim: usize) -> impl Strategy<Value = (DMatrix<f64>, DVector<f64>)> {
    (1usize..=max_dim, 3usize..=12).prop_flat_map(|(dim, rows)| {
        (
            prop::collection::vec(-3.0f64..3.0, rows * dim),
            prop::collection::vec(-3.0f64..3.0, rows),
        )
            .prop_map(move |(x, y)| (DMatrix::from_vec(rows, dim, x), DVector::from_vec(y)))
    })
}

/// Exact box-QP minimum by enumerating which coordinates sit at 0, at 1 or
/// strictly inside, and solving the stationarity system on the free set.
fn box_kkt_oracle(qp: &QuadraticProgram) -> f64 {
    let n = qp.dim();
    let mut best = f64::INFINITY;
    for code in 0..3usize.pow(n as u32) {
        let mut state = Vec::with_capacity(n);
        let mut c = code;
        for _ in 0..n {
            state.push(c % 3);
            c /= 3;
        }
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == 2).collect();
        let mut w = DVector::from_fn(n, |i, _| if state[i] == 1 { 1.0 } else { 0.0 });
        if !free.is_empty() {
            let k = free.len();
            let a = DMatrix::from_fn(k, k, |r, s| qp.q[(free[r], free[s])]);
            let fixed = &qp.q * &w;
            let b = DVector::from_fn(k, |r, _| qp.lin[free[r]] - fixed[free[r]]);
            let sol = a.svd(true, true).solve(&b, 1e-12).unwrap();
            for (r, &i) in free.iter().enumerate() {
                w[i] = sol[r];
            }
        }
        if w.iter().all(|&x| (-1e-12..=1.0 + 1e-12).contains(&x)) {
            best = best.min(qp.objective(&project_to_box(&w)));
        }
    }
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn simplex_projection_is_feasible_idempotent_nonexpansive(
        a in prop::collection::vec(-5.0f64..5.0, 1..8),
        shift in prop::collection::vec(-5.0f64..5.0, 8),
    ) {
        let a = DVector::from_vec(a);
        let b = DVector::from_fn(a.len(), |i, _| a[i] + shift[i]);
        let pa = project_to_simplex(&a);
        let pb = project_to_simplex(&b);
        prop_assert!((pa.sum() - 1.0).abs() < 1e-12);
        prop_assert!(pa.iter().all(|&x| x >= 0.0));
        prop_assert!((project_to_simplex(&pa) - &pa).amax() < 1e-12);
        prop_assert!((&pa - &pb).norm() <= (&a - &b).norm() + 1e-12);
    }

    #[test]
    fn box_projection_is_feasible_idempotent_nonexpansive(
        a in prop::collection::vec(-5.0f64..5.0, 1..8),
        b in prop::collection::vec(-5.0f64..5.0, 8),
    ) {
        let a = DVector::from_vec(a);
        let b = DVector::from_fn(a.len(), |i, _| b[i]);
        let pa = project_to_box(&a);
        prop_assert!(pa.iter().all(|&x| (0.0..=1.0).contains(&x)));
        prop_assert_eq!(project_to_box(&pa), pa.clone());
        prop_assert!((&pa - project_to_box(&b)).norm() <= (&a - &b).norm() + 1e-12);
    }

    #[test]
    fn box_qp_matches_kkt_enumeration((x, y) in arb_design(3), sigma2 in 0.0f64..2.0) {
        let mut qp = QuadraticProgram::least_squares(&x, &y, Constraint::Box01);
        qp.lin.add_scalar_mut(-sigma2);
        let sol = solve_box_qp(&qp, &QpSettings::default()).unwrap();
        let oracle = box_kkt_oracle(&qp);
        prop_assert!(sol.converged);
        prop_assert!(qp.is_feasible(&sol.w));
        prop_assert!(qp.objective(&sol.w) <= oracle + 1e-9 * (1.0 + oracle.abs()),
            "solver {} oracle {}", qp.objective(&sol.w), oracle);
    }

    #[test]
    fn qp_minimizer_is_scale_invariant((x, y) in arb_design(4), c in 0.01f64..100.0) {
        for constraint in [Constraint::Box01, Constraint::Simplex] {
            let qp = QuadraticProgram::least_squares(&x, &y, constraint);
            let base = if constraint == Constraint::Box01 {
                solve_box_qp(&qp, &QpSettings::default())
            } else {
                solve_simplex_qp(&qp, &QpSettings::default())
            }.unwrap();
            let scaled = qp.scaled(c);
            let other = if constraint == Constraint::Box01 {
                solve_box_qp(&scaled, &QpSettings::default())
            } else {
                solve_simplex_qp(&scaled, &QpSettings::default())
            }.unwrap();
            let f = qp.objective(&base.w);
            prop_assert!((scaled.objective(&other.w) / c - f).abs() <= 1e-8 * (1.0 + f.abs()));
        }
    }

    #[test]
    fn accepted_iterates_never_increase((x, y) in arb_design(6)) {
        let settings = QpSettings { record_trace: true, ..QpSettings::default() };
        for constraint in [Constraint::Box01, Constraint::Simplex] {
            let qp = QuadraticProgram::least_squares(&x, &y, constraint);
            let sol = if constraint == Constraint::Box01 {
                solve_box_qp(&qp, &settings)
            } else {
                solve_simplex_qp(&qp, &settings)
            }.unwrap();
            for w in sol.trace.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-12 * (1.0 + w[0].abs()));
            }
        }
    }

    #[test]
    fn matching_residuals_are_orthogonal(panel in arb_panel()) {
        let cp = center_pretreatment(&panel).unwrap();
        if let Ok(matched) = match_all(&cp) {
            for m in matched.iter().filter(|m| !m.excluded) {
                let yj = cp.y0c.column(m.unit);
                let scale = yj.norm() * cp.y1c.norm();
                prop_assert!(m.residual_pre.dot(&yj).abs() <= 1e-10 * (1.0 + scale));
                prop_assert!((&m.fitted_pre + &m.residual_pre - &cp.y1c).amax() <= 1e-10 * (1.0 + cp.y1c.amax()));
            }
        }
    }

    #[test]
    fn matching_is_affine_invariant_in_controls(panel in arb_panel(), a in 0.1f64..5.0, b in -5.0f64..5.0) {
        let mut y = panel.outcomes().clone();
        for j in panel.controls() {
            for t in 0..y.nrows() {
                y[(t, j)] = a * y[(t, j)] + b;
            }
        }
        let moved = PanelData::new(y, panel.unit_labels().to_vec(), panel.time_labels().to_vec(), 0, panel.t0()).unwrap();
        let (Ok(m0), Ok(m1)) = (
            match_all(&center_pretreatment(&panel).unwrap()),
            match_all(&center_pretreatment(&moved).unwrap()),
        ) else { return Ok(()) };
        for (p, q) in m0.iter().zip(&m1) {
            prop_assert_eq!(p.excluded, q.excluded);
            if !p.excluded {
                prop_assert!((p.theta - a * q.theta).abs() <= 1e-8 * (1.0 + p.theta.abs()));
                prop_assert!((&p.fitted_pre - &q.fitted_pre).amax() <= 1e-8 * (1.0 + p.fitted_pre.amax()));
            }
        }
    }

    #[test]
    fn smc_weights_in_box_and_consistent(panel in arb_panel()) {
        let Ok(fit) = fit_smc_detailed(&panel, &SmcOptions::default()) else { return Ok(()) };
        let out = &fit.output;
        prop_assert!(out.unit_weights.iter().all(|&w| (0.0..=1.0).contains(&w)));
        let thetas = out.thetas.as_ref().unwrap();
        for k in 0..out.unit_weights.len() {
            prop_assert!((out.comprehensive_weights[k] - out.unit_weights[k] * thetas[k]).abs() < 1e-12);
        }
        let consistent = out.att.iter().zip(&out.counterfactual).enumerate().all(|(t, (a, c))| {
            (a + c - panel.outcomes()[(t, 0)]).abs() < 1e-9 * (1.0 + c.abs())
        });
        prop_assert!(consistent);
    }

    #[test]
    fn smc_equivariant_under_translation_and_scale(panel in arb_panel(), d in -20.0f64..20.0, c in 0.1f64..10.0) {
        // screening ranks raw levels, so it is only scale-equivariant
        let opts = SmcOptions { screen: ScreenMode::Off, ..SmcOptions::default() };
        let Ok(base) = fit_smc(&panel, &opts) else { return Ok(()) };
        let shifted = PanelData::new(
            panel.outcomes().add_scalar(d),
            panel.unit_labels().to_vec(),
            panel.time_labels().to_vec(),
            0,
            panel.t0(),
        ).unwrap();
        let s = fit_smc(&shifted, &opts).unwrap();
        let scale = 1.0 + base.counterfactual.iter().fold(0.0f64, |m, v| m.max(v.abs())) + d.abs();
        for (a, b) in base.counterfactual.iter().zip(&s.counterfactual) {
            prop_assert!((a + d - b).abs() <= 1e-6 * scale);
        }
        let scaled = fit_smc(&panel.scaled(c), &opts).unwrap();
        for (a, b) in base.counterfactual.iter().zip(&scaled.counterfactual) {
            prop_assert!((c * a - b).abs() <= 1e-6 * c * scale);
        }
    }

    #[test]
    fn unit_v_weights_change_nothing(panel in arb_panel()) {
        let v = DVector::from_element(panel.t0(), 1.0);
        let weighted = apply_diag_weights(&panel, &v).unwrap();
        let a = fit_smc(&panel, &SmcOptions::default());
        let b = fit_smc(&weighted, &SmcOptions::default());
        match (a, b) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
            (Err(a), Err(b)) => prop_assert_eq!(a.to_string(), b.to_string()),
            _ => prop_assert!(false, "outcome differs"),
        }
    }

    #[test]
    fn screening_keeps_top_d(panel in arb_panel(), d in 1usize..8) {
        let r = screen_units(&panel, KeepCount::Fixed(d), SirsVariant::RankCount).unwrap();
        prop_assert_eq!(r.kept.len(), d.min(panel.n_controls()));
        for w in r.kept.windows(2) {
            prop_assert!(r.eta[w[0]] >= r.eta[w[1]]);
        }
        let floor = r.kept.iter().map(|&k| r.eta[k]).fold(f64::INFINITY, f64::min);
        for k in (0..r.eta.len()).filter(|k| !r.kept.contains(k)) {
            prop_assert!(r.eta[k] <= floor);
        }
    }

    #[test]
    fn sc_weights_on_simplex_and_dsc_tracks_shift(panel in arb_panel(), d in -20.0f64..20.0) {
        let sc = fit_sc(&panel).unwrap();
        prop_assert!((sc.unit_weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(sc.unit_weights.iter().all(|&w| w >= 0.0));
        let base = fit_dsc(&panel).unwrap();
        let mut y = panel.outcomes().clone();
        y.column_mut(0).add_scalar_mut(d);
        let moved = PanelData::new(y, panel.unit_labels().to_vec(), panel.time_labels().to_vec(), 0, panel.t0()).unwrap();
        let shifted = fit_dsc(&moved).unwrap();
        prop_assert!((shifted.intercept - base.intercept - d).abs() <= 1e-6 * (1.0 + base.intercept.abs() + d.abs()));
    }

    #[test]
    fn csv_round_trip(panel in arb_panel()) {
        let mut buf = Vec::new();
        write_panel_csv_to(&panel, &mut buf).unwrap();
        let back = parse_panel_csv(buf.as_slice(), "u0", panel.t0()).unwrap();
        prop_assert_eq!(back, panel);
    }

    #[test]
    fn mspe_detects_translation(panel in arb_panel(), d in -5.0f64..5.0) {
        let out = fit_sc(&panel).unwrap();
        let exact = out.counterfactual.clone();
        let t0 = panel.t0();
        prop_assert_eq!(mspe(&out, &exact, t0).unwrap(), 0.0);
        let mut moved = out.clone();
        for v in moved.counterfactual[t0..].iter_mut() {
            *v += d;
        }
        prop_assert!((mspe(&moved, &exact, t0).unwrap() - d * d).abs() <= 1e-9 * (1.0 + d * d));
    }
}

#[test]
fn factor_dgp_common_draws_have_unit_variance() {
    let cfg = SimConfig {
        periods: 10_001,
        t0: 10_000,
        controls: 1,
        ..SimConfig::factor(LoadingPattern::L1, 1.0)
    };
    let (_, truth) = gen_factor_dgp(&cfg, 0).unwrap();
    for draws in [truth.alpha.unwrap(), truth.factors.unwrap()] {
        let n = draws.len() as f64;
        let m = draws.iter().sum::<f64>() / n;
        let v = draws.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((v - 1.0).abs() < 0.05, "variance {v}");
    }
}

#[test]
fn working_dgp_rows_have_ar1_covariance() {
    let cfg = SimConfig {
        periods: 10_000,
        t0: 9_990,
        controls: 8,
        ..SimConfig::working(1.0, 0.8)
    };
    let (panel, _) = gen_working_dgp(&cfg, 0).unwrap();
    let y = panel.outcomes().columns(1, 8).into_owned();
    let n = y.nrows() as f64;
    for a in 0..8 {
        for b in 0..8 {
            let cov = y.column(a).dot(&y.column(b)) / n;
            let target = cfg.rho.powi((a as i32 - b as i32).abs());
            assert!((cov - target).abs() < 0.05, "({a},{b}) {cov} vs {target}");
        }
    }
}

#[test]
fn smc_recovers_shifted_control() {
    let t0 = 12;
    let a: Vec<f64> = (0..t0 + 3).map(|t| ((t * 7) % 5) as f64).collect();
    let b: Vec<f64> = (0..t0 + 3).map(|t| ((t * 3) % 4) as f64 - 1.0).collect();
    let mut vals = Vec::new();
    for t in 0..t0 + 3 {
        vals.extend([a[t] + 2.0, a[t], b[t]]);
    }
    let panel = panel_from(&vals, t0 + 3, 3, t0);
    let out = fit_smc(&panel, &SmcOptions::default()).unwrap();
    assert!(out.sigma2_hat.unwrap() < 1e-20);
    assert!((out.unit_weights[0] - 1.0).abs() < 1e-9);
    assert!(out.unit_weights[1].abs() < 1e-9);
    for t in 0..t0 + 3 {
        assert!((out.counterfactual[t] - a[t] - 2.0).abs() < 1e-9);
    }
}
