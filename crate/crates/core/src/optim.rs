//! Convex quadratic programming over the unit box `[0,1]^J` and the unit
//! simplex.
//!
//! Objective convention: `f(w) = wᵀQw − 2·linᵀw + const`.
//!
//! The solver is accelerated projected gradient (FISTA) with step `1/L`,
//! `L = 2·λ_max(Q)`, restarting the momentum whenever an accelerated step
//! fails to decrease `f`. Accepted iterates therefore have non-increasing
//! objective values. Once the active set has settled, a primal active-set
//! refinement solves the reduced KKT system directly, which recovers the
//! minimizer to rounding precision on small problems.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};

use crate::error::{Result, SmcError};

/// Feasible set of a [`QuadraticProgram`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constraint {
    /// `0 ≤ w_j ≤ 1`.
    Box01,
    /// `w_j ≥ 0, Σ w_j = 1`.
    Simplex,
}

#[derive(Debug, Clone)]
pub struct QuadraticProgram {
    pub q: DMatrix<f64>,
    pub lin: DVector<f64>,
    pub constraint: Constraint,
    pub const_term: f64,
}

impl QuadraticProgram {
    pub fn new(
        q: DMatrix<f64>,
        lin: DVector<f64>,
        constraint: Constraint,
        const_term: f64,
    ) -> Result<Self> {
        let n = lin.len();
        if q.nrows() != n || q.ncols() != n {
            return Err(SmcError::LengthMismatch {
                what: "quadratic term",
                expected: n,
                got: q.nrows().max(q.ncols()),
            });
        }
        if q.iter().chain(lin.iter()).any(|x| !x.is_finite()) || !const_term.is_finite() {
            return Err(SmcError::InvalidProblem("non-finite coefficients".into()));
        }
        let scale = q.amax().max(f64::MIN_POSITIVE);
        let asym = (&q - q.transpose()).amax();
        if asym > 1e-10 * scale {
            return Err(SmcError::InvalidProblem(format!(
                "quadratic term is not symmetric (max asymmetry {asym:e})"
            )));
        }
        Ok(Self {
            q,
            lin,
            constraint,
            const_term,
        })
    }

    /// `‖target − design·w‖²` as a quadratic program.
    pub fn least_squares(design: &DMatrix<f64>, target: &DVector<f64>, constraint: Constraint) -> Self {
        let q = design.transpose() * design;
        let q = (&q + q.transpose()) * 0.5;
        Self {
            q,
            lin: design.transpose() * target,
            constraint,
            const_term: target.norm_squared(),
        }
    }

    pub fn dim(&self) -> usize {
        self.lin.len()
    }

    pub fn objective(&self, w: &DVector<f64>) -> f64 {
        (&self.q * w).dot(w) - 2.0 * self.lin.dot(w) + self.const_term
    }

    pub fn gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        (&self.q * w - &self.lin) * 2.0
    }

    pub fn project(&self, w: &DVector<f64>) -> DVector<f64> {
        match self.constraint {
            Constraint::Box01 => project_to_box(w),
            Constraint::Simplex => project_to_simplex(w),
        }
    }

    pub fn is_feasible(&self, w: &DVector<f64>) -> bool {
        match self.constraint {
            Constraint::Box01 => w.iter().all(|&x| (0.0..=1.0).contains(&x)),
            Constraint::Simplex => {
                w.iter().all(|&x| x >= 0.0) && (w.sum() - 1.0).abs() <= 1e-10
            }
        }
    }

    /// Same program with `q`, `lin` and the constant multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            q: &self.q * factor,
            lin: &self.lin * factor,
            constraint: self.constraint,
            const_term: self.const_term * factor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    /// Bound on the step-scaled projected-gradient residual.
    pub tol: f64,
    pub max_iter: usize,
    /// Keep the objective value of every accepted iterate.
    pub record_trace: bool,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 100_000,
            record_trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub w: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `‖w − P(w − ∇f(w)/L)‖_∞`.
    pub kkt_residual: f64,
    /// Objective of each accepted iterate when tracing is enabled.
    pub trace: Vec<f64>,
}

pub fn project_to_box(v: &DVector<f64>) -> DVector<f64> {
    v.map(|x| x.clamp(0.0, 1.0))
}

/// Euclidean projection onto `{w : w_j ≥ 0, Σ w_j = 1}` (sort-based).
pub fn project_to_simplex(v: &DVector<f64>) -> DVector<f64> {
    let n = v.len();
    if n == 0 {
        return v.clone();
    }
    let mut sorted: Vec<f64> = v.iter().copied().collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut shift = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let candidate = (cumsum - 1.0) / (k + 1) as f64;
        if u - candidate > 0.0 {
            shift = candidate;
        }
    }
    let mut w = v.map(|x| (x - shift).max(0.0));
    let total = w.sum();
    if total > 0.0 {
        w /= total;
    } else {
        // all mass on the largest coordinate
        let (imax, _) = v.argmax();
        w.fill(0.0);
        w[imax] = 1.0;
    }
    w
}

pub fn solve_box_qp(qp: &QuadraticProgram, settings: &QpSettings) -> Result<QpSolution> {
    if qp.constraint != Constraint::Box01 {
        return Err(SmcError::InvalidProblem("expected a box-constrained program".into()));
    }
    solve_qp(qp, settings, None)
}

pub fn solve_simplex_qp(qp: &QuadraticProgram, settings: &QpSettings) -> Result<QpSolution> {
    if qp.constraint != Constraint::Simplex {
        return Err(SmcError::InvalidProblem("expected a simplex-constrained program".into()));
    }
    solve_qp(qp, settings, None)
}

/// Solves `qp` from an optional starting point (projected onto the
/// feasible set first).
pub fn solve_qp(
    qp: &QuadraticProgram,
    settings: &QpSettings,
    init: Option<&DVector<f64>>,
) -> Result<QpSolution> {
    if !(settings.tol > 0.0) {
        return Err(SmcError::InvalidConfig("solver tolerance must be positive".into()));
    }
    let n = qp.dim();
    if n == 0 {
        if qp.constraint == Constraint::Simplex {
            return Err(SmcError::EmptyDonorPool);
        }
        return Ok(QpSolution {
            w: DVector::zeros(0),
            objective: qp.const_term,
            iterations: 0,
            converged: true,
            kkt_residual: 0.0,
            trace: Vec::new(),
        });
    }

    let eig = SymmetricEigen::new(qp.q.clone());
    let lmax = eig.eigenvalues.max();
    let lmin = eig.eigenvalues.min();
    let qnorm = eig.eigenvalues.amax();
    if lmin < -1e-8 * qnorm {
        return Err(SmcError::NotPsd { min_eigenvalue: lmin });
    }
    let lip0 = (2.0 * lmax).max(1e-12 * (1.0 + 2.0 * qp.lin.amax()));
    let mut lip = lip0;

    let residual = |x: &DVector<f64>| -> f64 {
        let g = qp.gradient(x);
        (x - qp.project(&(x - g / lip0))).amax()
    };

    let mut x = match init {
        Some(w0) if w0.len() == n => qp.project(w0),
        Some(w0) => {
            return Err(SmcError::LengthMismatch {
                what: "initial point",
                expected: n,
                got: w0.len(),
            })
        }
        None => match qp.constraint {
            Constraint::Box01 => DVector::zeros(n),
            Constraint::Simplex => DVector::from_element(n, 1.0 / n as f64),
        },
    };
    let mut f = qp.objective(&x);
    let mut trace = Vec::new();
    if settings.record_trace {
        trace.push(f);
    }
    let mut y = x.clone();
    let mut momentum = 1.0_f64;
    let mut iterations = 0;
    let mut converged = residual(&x) <= settings.tol;
    let polish_every = 200;

    while !converged && iterations < settings.max_iter {
        iterations += 1;
        let g = qp.gradient(&y);
        let x_new = qp.project(&(&y - g / lip));
        let f_new = qp.objective(&x_new);
        if !f_new.is_finite() {
            return Err(SmcError::Diverged { iterations });
        }
        if f_new > f {
            let plain = momentum == 1.0 && y == x;
            if plain {
                if (&x_new - &x).amax() <= settings.tol {
                    converged = true;
                    break;
                }
                lip *= 2.0;
            }
            y = x.clone();
            momentum = 1.0;
            continue;
        }
        let next = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
        y = &x_new + (&x_new - &x) * ((momentum - 1.0) / next);
        momentum = next;
        x = x_new;
        f = f_new;
        if settings.record_trace {
            trace.push(f);
        }
        converged = residual(&x) <= settings.tol;

        if !converged && iterations % polish_every == 0 {
            let (xp, fp) = polish(qp, &x, f);
            if fp <= f && residual(&xp) <= settings.tol {
                x = xp;
                f = fp;
                if settings.record_trace {
                    trace.push(f);
                }
                converged = true;
            }
        }
    }

    let (xp, fp) = polish(qp, &x, f);
    if fp <= f {
        x = xp;
        if settings.record_trace && fp < f {
            trace.push(fp);
        }
    }
    let kkt_residual = residual(&x);
    let objective = qp.objective(&x);
    Ok(QpSolution {
        w: x,
        objective,
        iterations,
        converged: converged || kkt_residual <= settings.tol,
        kkt_residual,
        trace,
    })
}

/// Solves `a·x = b`, falling back to the pseudo-inverse for singular `a`.
fn solve_linear(a: DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(x) = a.clone().lu().solve(b) {
        if x.iter().all(|v| v.is_finite()) && (&a * &x - b).amax() <= 1e-9 * (1.0 + b.amax()) {
            return Some(x);
        }
    }
    let svd = SVD::new(a, true, true);
    let eps = 1e-12 * svd.singular_values.max();
    svd.solve(b, eps).ok().filter(|x| x.iter().all(|v| v.is_finite()))
}

/// Primal active-set refinement from a feasible point. Returns the best
/// point found and its objective; never returns a worse point than `x0`.
fn polish(qp: &QuadraticProgram, x0: &DVector<f64>, f0: f64) -> (DVector<f64>, f64) {
    let n = qp.dim();
    let mut x = x0.clone();
    let mut f = f0;
    for _ in 0..(2 * n + 10) {
        let step = match qp.constraint {
            Constraint::Box01 => box_step(qp, &x),
            Constraint::Simplex => simplex_step(qp, &x),
        };
        let Some((cand, moved)) = step else { break };
        let fc = qp.objective(&cand);
        if !(fc <= f) {
            break;
        }
        x = cand;
        f = fc;
        if moved <= 1e-15 {
            break;
        }
    }
    (x, f)
}

/// One active-set step on the box. Returns the candidate and the size of
/// the move.
fn box_step(qp: &QuadraticProgram, x: &DVector<f64>) -> Option<(DVector<f64>, f64)> {
    let g = qp.gradient(x);
    let mut free = Vec::new();
    let mut upper = Vec::new();
    for j in 0..qp.dim() {
        if x[j] <= 1e-12 && g[j] >= 0.0 {
            continue;
        } else if x[j] >= 1.0 - 1e-12 && g[j] <= 0.0 {
            upper.push(j);
        } else {
            free.push(j);
        }
    }
    let mut base = x.clone();
    for j in 0..qp.dim() {
        if !free.contains(&j) {
            base[j] = if upper.contains(&j) { 1.0 } else { 0.0 };
        }
    }
    if free.is_empty() {
        let moved = (&base - x).amax();
        return Some((base, moved));
    }
    let qff = qp.q.select_rows(free.iter()).select_columns(free.iter());
    let mut rhs = DVector::from_iterator(free.len(), free.iter().map(|&j| qp.lin[j]));
    for (k, &j) in free.iter().enumerate() {
        for &u in &upper {
            rhs[k] -= qp.q[(j, u)];
        }
    }
    let z = solve_linear(qff, &rhs)?;
    let mut alpha: f64 = 1.0;
    let mut hit = None;
    for (k, &j) in free.iter().enumerate() {
        let d = z[k] - x[j];
        let limit = if d < 0.0 {
            -x[j] / d
        } else if d > 0.0 {
            (1.0 - x[j]) / d
        } else {
            continue;
        };
        if limit < alpha {
            alpha = limit.max(0.0);
            hit = Some((j, d < 0.0));
        }
    }
    let mut cand = base;
    for (k, &j) in free.iter().enumerate() {
        cand[j] = (x[j] + alpha * (z[k] - x[j])).clamp(0.0, 1.0);
    }
    if let Some((j, to_zero)) = hit {
        cand[j] = if to_zero { 0.0 } else { 1.0 };
    }
    let moved = (&cand - x).amax();
    Some((cand, moved))
}

/// One active-set step on the simplex.
fn simplex_step(qp: &QuadraticProgram, x: &DVector<f64>) -> Option<(DVector<f64>, f64)> {
    let n = qp.dim();
    let g = qp.gradient(x);
    let support: Vec<usize> = (0..n).filter(|&j| x[j] > 1e-12).collect();
    if support.is_empty() {
        return None;
    }
    let nu = support.iter().map(|&j| g[j]).sum::<f64>() / support.len() as f64;
    let free: Vec<usize> = (0..n).filter(|&j| x[j] > 1e-12 || g[j] < nu).collect();
    let m = free.len();
    let mut kkt = DMatrix::zeros(m + 1, m + 1);
    let mut rhs = DVector::zeros(m + 1);
    for (a, &i) in free.iter().enumerate() {
        for (b, &j) in free.iter().enumerate() {
            kkt[(a, b)] = 2.0 * qp.q[(i, j)];
        }
        kkt[(a, m)] = 1.0;
        kkt[(m, a)] = 1.0;
        rhs[a] = 2.0 * qp.lin[i];
    }
    rhs[m] = 1.0;
    let sol = solve_linear(kkt, &rhs)?;
    let z = sol.rows(0, m);
    let mut alpha: f64 = 1.0;
    let mut hit = None;
    for (k, &j) in free.iter().enumerate() {
        let d = z[k] - x[j];
        if d < 0.0 {
            let limit = -x[j] / d;
            if limit < alpha {
                alpha = limit.max(0.0);
                hit = Some(j);
            }
        }
    }
    let mut cand = DVector::zeros(n);
    for (k, &j) in free.iter().enumerate() {
        cand[j] = (x[j] + alpha * (z[k] - x[j])).max(0.0);
    }
    if let Some(j) = hit {
        cand[j] = 0.0;
    }
    let total = cand.sum();
    if !(total > 0.0) {
        return None;
    }
    cand /= total;
    let moved = (&cand - x).amax();
    Some((cand, moved))
}
