//! Convex-program kernel: separable quadratic / piecewise-linear
//! objectives over linear constraints, solved by a primal-dual
//! interior-point method that reports a dual multiplier for every
//! constraint row.
//!
//! Dual sign convention (stationarity of the reported multipliers):
//!
//! ```text
//!   grad f(x) - A_eq' * eq_duals + A_in' * ineq_duals = 0,
//!   ineq_duals >= 0
//! ```
//!
//! so an equality dual is the marginal objective decrease per unit of
//! right-hand side, and inequality duals are the usual nonnegative
//! shadow prices. Piecewise-linear objective terms are epigraph-
//! reformulated internally (one auxiliary variable and one row per
//! piece); auxiliary rows never surface in the reported duals.
//!
//! Infeasible programs are classified by an elastic feasibility solve
//! whose dual yields a Farkas ray `(y, z)`: `A_eq' y + A_in' z = 0`,
//! `z >= 0`, `b_eq' y + b_in' z < 0`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Sparse constraint row: (column, coefficient) pairs.
pub type SparseRow = Vec<(usize, f64)>;

/// Piecewise-linear objective term `max_s (slope_s * x_var + intercept_s)`.
#[derive(Debug, Clone)]
pub struct PwlTerm {
    pub var: usize,
    /// (slope, intercept) per piece; the term is their pointwise max.
    pub pieces: Vec<(f64, f64)>,
}

/// A convex separable program over linear constraints.
#[derive(Debug, Clone)]
pub struct ConvexProgram {
    num_vars: usize,
    /// Per-variable coefficient of x^2 (must be >= 0).
    quad: Vec<f64>,
    /// Per-variable linear coefficient.
    lin: Vec<f64>,
    pwl: Vec<PwlTerm>,
    eq_rows: Vec<SparseRow>,
    eq_rhs: Vec<f64>,
    ineq_rows: Vec<SparseRow>,
    ineq_rhs: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Debug, Error)]
pub enum ProgramError {
    #[error("variable index {0} out of range for {1} variables")]
    VariableOutOfRange(usize, usize),
    #[error("quadratic coefficient {0} on variable {1} is negative")]
    NonConvexQuadratic(f64, usize),
    #[error("piecewise term on variable {0} has no pieces")]
    EmptyPwl(usize),
    #[error("variable {0} has empty bound interval [{1}, {2}]")]
    EmptyBounds(usize, f64, f64),
}

impl ConvexProgram {
    pub fn new(num_vars: usize) -> Self {
        Self {
            num_vars,
            quad: vec![0.0; num_vars],
            lin: vec![0.0; num_vars],
            pwl: Vec::new(),
            eq_rows: Vec::new(),
            eq_rhs: Vec::new(),
            ineq_rows: Vec::new(),
            ineq_rhs: Vec::new(),
            lower: vec![f64::NEG_INFINITY; num_vars],
            upper: vec![f64::INFINITY; num_vars],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn num_eq_rows(&self) -> usize {
        self.eq_rows.len()
    }

    pub fn num_ineq_rows(&self) -> usize {
        self.ineq_rows.len()
    }

    /// Adds `a x^2 + b x` to the objective.
    pub fn add_quadratic_cost(&mut self, var: usize, a: f64, b: f64) -> Result<(), ProgramError> {
        if var >= self.num_vars {
            return Err(ProgramError::VariableOutOfRange(var, self.num_vars));
        }
        if a < 0.0 {
            return Err(ProgramError::NonConvexQuadratic(a, var));
        }
        self.quad[var] += a;
        self.lin[var] += b;
        Ok(())
    }

    pub fn add_linear_cost(&mut self, var: usize, b: f64) -> Result<(), ProgramError> {
        if var >= self.num_vars {
            return Err(ProgramError::VariableOutOfRange(var, self.num_vars));
        }
        self.lin[var] += b;
        Ok(())
    }

    /// Adds `max_s (slope_s x + intercept_s)` to the objective.
    pub fn add_pwl_cost(&mut self, var: usize, pieces: Vec<(f64, f64)>) -> Result<(), ProgramError> {
        if var >= self.num_vars {
            return Err(ProgramError::VariableOutOfRange(var, self.num_vars));
        }
        if pieces.is_empty() {
            return Err(ProgramError::EmptyPwl(var));
        }
        self.pwl.push(PwlTerm { var, pieces });
        Ok(())
    }

    pub fn add_eq_row(&mut self, row: SparseRow, rhs: f64) {
        self.eq_rows.push(row);
        self.eq_rhs.push(rhs);
    }

    pub fn add_ineq_row(&mut self, row: SparseRow, rhs: f64) {
        self.ineq_rows.push(row);
        self.ineq_rhs.push(rhs);
    }

    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) -> Result<(), ProgramError> {
        if var >= self.num_vars {
            return Err(ProgramError::VariableOutOfRange(var, self.num_vars));
        }
        if lower > upper {
            return Err(ProgramError::EmptyBounds(var, lower, upper));
        }
        self.lower[var] = lower;
        self.upper[var] = upper;
        Ok(())
    }

    /// Objective value at `x` (piecewise terms evaluated exactly).
    pub fn objective_value(&self, x: &DVector<f64>) -> f64 {
        let mut total = 0.0;
        for j in 0..self.num_vars {
            total += self.quad[j] * x[j] * x[j] + self.lin[j] * x[j];
        }
        for term in &self.pwl {
            total += term
                .pieces
                .iter()
                .map(|&(m, c)| m * x[term.var] + c)
                .fold(f64::NEG_INFINITY, f64::max);
        }
        total
    }
}

/// Farkas ray certifying primal infeasibility.
#[derive(Debug, Clone)]
pub struct FarkasCertificate {
    /// Weights on equality rows (free sign).
    pub eq_weights: DVector<f64>,
    /// Weights on user inequality rows (nonnegative).
    pub ineq_weights: DVector<f64>,
    /// Weights on finite lower/upper variable bounds.
    pub lower_weights: DVector<f64>,
    pub upper_weights: DVector<f64>,
    /// `b_eq'y + rhs'z`, strictly negative for a valid ray.
    pub gap: f64,
    /// Max-norm of `A_eq'y + A_in'z` (should be ~0).
    pub combination_residual: f64,
}

#[derive(Debug, Clone)]
pub enum SolveStatus {
    Optimal,
    Infeasible(FarkasCertificate),
    Unbounded,
    NumericalFailure,
}

impl SolveStatus {
    pub fn is_optimal(&self) -> bool {
        matches!(self, SolveStatus::Optimal)
    }
}

/// Primal-dual solution of a [`ConvexProgram`].
#[derive(Debug, Clone)]
pub struct SolveResult {
    pub status: SolveStatus,
    /// Primal values of the caller's variables (auxiliaries stripped).
    pub x: DVector<f64>,
    pub objective: f64,
    /// One dual per equality row (see module docs for the convention).
    pub eq_duals: DVector<f64>,
    /// One nonnegative dual per user inequality row.
    pub ineq_duals: DVector<f64>,
    /// Multipliers on finite lower/upper variable bounds.
    pub lower_duals: DVector<f64>,
    pub upper_duals: DVector<f64>,
    /// Max violation across stationarity, feasibility, and
    /// complementarity at the returned point.
    pub kkt_residual: f64,
}

const MAX_ITERATIONS: usize = 200;
const STAGNATION_WINDOW: usize = 30;
const STEP_FRACTION: f64 = 0.995;
const KKT_REGULARIZATION: f64 = 1e-11;
const PHASE1_REGULARIZATION: f64 = 1e-10;

/// Internal standard form: min 1/2 x'Qx + c'x s.t. Ax = b, Gx <= h,
/// with Q diagonal and epigraph auxiliaries appended after the user
/// variables.
struct StandardForm {
    nv: usize,
    q_diag: DVector<f64>,
    c: DVector<f64>,
    a_rows: Vec<SparseRow>,
    b: DVector<f64>,
    g_rows: Vec<SparseRow>,
    h: DVector<f64>,
}

/// Where each standard-form inequality row came from.
#[derive(Debug, Clone, Copy)]
enum RowOrigin {
    UserIneq(usize),
    UpperBound(usize),
    LowerBound(usize),
    Epigraph,
}

struct IpmIterate {
    x: DVector<f64>,
    y: DVector<f64>,
    z: DVector<f64>,
    s: DVector<f64>,
    /// Max of scaled stationarity, feasibility, and gap residuals.
    residual: f64,
    converged: bool,
    objective_diverged: bool,
}

fn spmv(rows: &[SparseRow], x: &DVector<f64>, out: &mut DVector<f64>) {
    for (i, row) in rows.iter().enumerate() {
        let mut acc = 0.0;
        for &(j, v) in row {
            acc += v * x[j];
        }
        out[i] = acc;
    }
}

fn spmv_transpose(rows: &[SparseRow], w: &DVector<f64>, out: &mut DVector<f64>) {
    out.fill(0.0);
    for (i, row) in rows.iter().enumerate() {
        let wi = w[i];
        if wi != 0.0 {
            for &(j, v) in row {
                out[j] += v * wi;
            }
        }
    }
}

impl StandardForm {
    fn data_scale(&self) -> f64 {
        let mut scale: f64 = 1.0;
        for v in self.b.iter().chain(self.h.iter()).chain(self.c.iter()) {
            scale = scale.max(v.abs());
        }
        scale
    }

    fn objective(&self, x: &DVector<f64>) -> f64 {
        let mut total = 0.0;
        for j in 0..self.nv {
            total += 0.5 * self.q_diag[j] * x[j] * x[j] + self.c[j] * x[j];
        }
        total
    }
}

/// One Mehrotra predictor-corrector run on a standard form.
fn run_ipm(form: &StandardForm, tol: f64) -> IpmIterate {
    let nv = form.nv;
    let p = form.a_rows.len();
    let m = form.g_rows.len();
    let scale = form.data_scale();

    // No inequalities: the KKT system is linear, one solve suffices.
    if m == 0 {
        return solve_equality_kkt(form, tol);
    }

    // Starting point: regularized equality-constrained least squares
    // for x, unit slacks floored at 1.
    let mut x = initial_point(form);
    let mut y = DVector::zeros(p);
    let mut gx = DVector::zeros(m);
    spmv(&form.g_rows, &x, &mut gx);
    let mut s = DVector::from_fn(m, |i, _| (form.h[i] - gx[i]).max(1.0));
    let mut z = DVector::from_element(m, 1.0);

    let mut best_residual = f64::INFINITY;
    let mut best: Option<(DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>)> = None;
    let mut last_improvement = 0usize;
    let mut objective_diverged = false;

    let mut ax = DVector::zeros(p);
    let mut at_y = DVector::zeros(nv);
    let mut gtZ = DVector::zeros(nv);

    for iter in 0..MAX_ITERATIONS {
        spmv(&form.a_rows, &x, &mut ax);
        spmv(&form.g_rows, &x, &mut gx);
        spmv_transpose(&form.a_rows, &y, &mut at_y);
        spmv_transpose(&form.g_rows, &z, &mut gtZ);

        // Residuals of the perturbed KKT system.
        let mut r_d = DVector::zeros(nv);
        for j in 0..nv {
            r_d[j] = form.q_diag[j] * x[j] + form.c[j] + at_y[j] + gtZ[j];
        }
        let r_p = &ax - &form.b;
        let r_g = &gx + &s - &form.h;
        let mu = s.dot(&z) / m as f64;

        let residual = (r_d.amax() / (1.0 + scale))
            .max(r_p.amax() / (1.0 + scale))
            .max(r_g.amax() / (1.0 + scale))
            .max(mu / (1.0 + scale));

        // f64::max drops NaN operands, so divergence must be caught
        // explicitly before the residual bookkeeping trusts it.
        let finite = residual.is_finite()
            && mu.is_finite()
            && x.iter().all(|v| v.is_finite())
            && y.iter().all(|v| v.is_finite())
            && z.iter().all(|v| v.is_finite())
            && s.iter().all(|v| v.is_finite());
        if !finite || mu <= f64::MIN_POSITIVE {
            break;
        }

        if residual < best_residual * 0.9 {
            best_residual = best_residual.min(residual);
            best = Some((x.clone(), y.clone(), z.clone(), s.clone()));
            last_improvement = iter;
        } else if residual < best_residual {
            best_residual = residual;
            best = Some((x.clone(), y.clone(), z.clone(), s.clone()));
        }

        if residual <= tol * 0.01 {
            break;
        }
        if iter - last_improvement > STAGNATION_WINDOW {
            break;
        }
        if form.objective(&x) < -1e13 * scale && r_p.amax() < 1e-6 * scale {
            objective_diverged = true;
            break;
        }

        // Normal-equations matrix H = Q + G' diag(z/s) G + delta I.
        let delta = KKT_REGULARIZATION * (1.0 + scale);
        let dim = nv + p;
        let mut kkt = DMatrix::<f64>::zeros(dim, dim);
        for j in 0..nv {
            kkt[(j, j)] = form.q_diag[j] + delta;
        }
        for (i, row) in form.g_rows.iter().enumerate() {
            let d = z[i] / s[i];
            for &(j1, v1) in row {
                for &(j2, v2) in row {
                    kkt[(j1, j2)] += d * v1 * v2;
                }
            }
        }
        for (i, row) in form.a_rows.iter().enumerate() {
            for &(j, v) in row {
                kkt[(j, nv + i)] = v;
                kkt[(nv + i, j)] = v;
            }
        }
        for i in 0..p {
            kkt[(nv + i, nv + i)] = -delta;
        }
        let lu = kkt.clone().lu();

        let assemble_rhs = |r_sz: &DVector<f64>| -> DVector<f64> {
            // rhs_x = -r_d - G' S^{-1} (Z r_g - r_sz)
            let mut w = DVector::zeros(m);
            for i in 0..m {
                w[i] = (z[i] * r_g[i] - r_sz[i]) / s[i];
            }
            let mut gtw = DVector::zeros(nv);
            spmv_transpose(&form.g_rows, &w, &mut gtw);
            let mut rhs = DVector::zeros(dim);
            for j in 0..nv {
                rhs[j] = -r_d[j] - gtw[j];
            }
            for i in 0..p {
                rhs[nv + i] = -r_p[i];
            }
            rhs
        };

        let solve_refined = |rhs: &DVector<f64>| -> DVector<f64> {
            let mut sol = lu.solve(rhs).unwrap_or_else(|| DVector::zeros(dim));
            // One refinement pass against the regularized matrix keeps
            // the direction accurate once z/s spreads many orders.
            let resid = rhs - &kkt * &sol;
            if let Some(corr) = lu.solve(&resid) {
                sol += corr;
            }
            sol
        };

        let recover = |sol: &DVector<f64>, r_sz: &DVector<f64>| {
            let dx = sol.rows(0, nv).into_owned();
            let dy = sol.rows(nv, p).into_owned();
            let mut gdx = DVector::zeros(m);
            spmv(&form.g_rows, &dx, &mut gdx);
            let mut ds = DVector::zeros(m);
            let mut dz = DVector::zeros(m);
            for i in 0..m {
                ds[i] = -r_g[i] - gdx[i];
                dz[i] = -(r_sz[i] + z[i] * ds[i]) / s[i];
            }
            (dx, dy, ds, dz)
        };

        // Predictor (affine scaling) direction.
        let r_sz_aff = DVector::from_fn(m, |i, _| s[i] * z[i]);
        let sol_aff = solve_refined(&assemble_rhs(&r_sz_aff));
        let (_dx_a, _dy_a, ds_a, dz_a) = recover(&sol_aff, &r_sz_aff);

        let alpha_aff = max_step(&s, &ds_a).min(max_step(&z, &dz_a)).min(1.0);
        let mu_aff = (0..m)
            .map(|i| (s[i] + alpha_aff * ds_a[i]) * (z[i] + alpha_aff * dz_a[i]))
            .sum::<f64>()
            / m as f64;
        let sigma = (mu_aff / mu).powi(3).clamp(0.0, 1.0);

        // Corrector with centering.
        let r_sz = DVector::from_fn(m, |i, _| s[i] * z[i] + ds_a[i] * dz_a[i] - sigma * mu);
        let sol = solve_refined(&assemble_rhs(&r_sz));
        let (dx, dy, ds, dz) = recover(&sol, &r_sz);

        let alpha = STEP_FRACTION * max_step(&s, &ds).min(max_step(&z, &dz));
        let alpha = alpha.min(1.0);

        x += alpha * &dx;
        y += alpha * &dy;
        s += alpha * &ds;
        z += alpha * &dz;
    }

    let (bx, by, bz, bs) = best.unwrap_or((x, y, z, s));
    let mut iterate = IpmIterate {
        converged: best_residual <= tol,
        residual: best_residual,
        x: bx,
        y: by,
        z: bz,
        s: bs,
        objective_diverged,
    };
    // Weakly active constraints leave the barrier path only O(sqrt(mu))
    // accurate; re-solving on the identified active set recovers full
    // precision whenever the classification checks out.
    if let Some(polished) = polish(form, &iterate) {
        if polished.residual < iterate.residual {
            iterate = polished;
        }
    }
    iterate.converged = iterate.residual <= tol;
    iterate
}

/// Active-set refinement of a converged interior-point iterate.
///
/// Starting from the barrier iterate's activity guess, solves the
/// equality-constrained problem on the working set, then repairs the
/// set: rows with negative multipliers leave, violated rows enter.
/// A handful of rounds settles every weakly active row exactly.
fn polish(form: &StandardForm, iterate: &IpmIterate) -> Option<IpmIterate> {
    let m = form.g_rows.len();
    let scale = form.data_scale();
    let edge_tol = 1e-9 * (1.0 + scale);

    let mut active: Vec<bool> = (0..m).map(|i| iterate.z[i] >= iterate.s[i]).collect();
    for _ in 0..5 {
        let candidate = solve_working_set(form, &active)?;
        let mut clean = true;
        for i in 0..m {
            if active[i] && candidate.z[i] < -edge_tol {
                active[i] = false;
                clean = false;
            } else if !active[i] && candidate.s[i] < -edge_tol {
                active[i] = true;
                clean = false;
            }
        }
        if clean {
            return finish_polish(form, candidate);
        }
    }
    None
}

struct WorkingSetSolution {
    x: DVector<f64>,
    y: DVector<f64>,
    z: DVector<f64>,
    /// Signed slack `h - Gx` on every row (negative = violated).
    s: DVector<f64>,
}

/// Solves the KKT system with the working-set rows held at equality.
/// The LU is taken on a regularized copy, but refinement targets the
/// exact system so accuracy is not limited by the regularization.
fn solve_working_set(form: &StandardForm, active: &[bool]) -> Option<WorkingSetSolution> {
    let nv = form.nv;
    let p = form.a_rows.len();
    let m = form.g_rows.len();
    let scale = form.data_scale();
    let delta = KKT_REGULARIZATION * (1.0 + scale);
    let rows: Vec<usize> = (0..m).filter(|&i| active[i]).collect();
    let dim = nv + p + rows.len();

    let mut kkt_exact = DMatrix::<f64>::zeros(dim, dim);
    for j in 0..nv {
        kkt_exact[(j, j)] = form.q_diag[j];
    }
    for (i, row) in form.a_rows.iter().enumerate() {
        for &(j, v) in row {
            kkt_exact[(j, nv + i)] = v;
            kkt_exact[(nv + i, j)] = v;
        }
    }
    for (pos, &i) in rows.iter().enumerate() {
        for &(j, v) in &form.g_rows[i] {
            kkt_exact[(j, nv + p + pos)] = v;
            kkt_exact[(nv + p + pos, j)] = v;
        }
    }
    let mut kkt = kkt_exact.clone();
    for j in 0..nv {
        kkt[(j, j)] += delta;
    }
    for i in nv..dim {
        kkt[(i, i)] = -delta;
    }
    let mut rhs = DVector::zeros(dim);
    for j in 0..nv {
        rhs[j] = -form.c[j];
    }
    for i in 0..p {
        rhs[nv + i] = form.b[i];
    }
    for (pos, &i) in rows.iter().enumerate() {
        rhs[nv + p + pos] = form.h[i];
    }

    let lu = kkt.lu();
    let mut sol = lu.solve(&rhs)?;
    for _ in 0..4 {
        let resid = &rhs - &kkt_exact * &sol;
        let corr = lu.solve(&resid)?;
        sol += corr;
    }
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }

    let x = sol.rows(0, nv).into_owned();
    let y = sol.rows(nv, p).into_owned();
    let mut z = DVector::zeros(m);
    for (pos, &i) in rows.iter().enumerate() {
        z[i] = sol[nv + p + pos];
    }
    let mut gx = DVector::zeros(m);
    spmv(&form.g_rows, &x, &mut gx);
    let s = DVector::from_fn(m, |i, _| form.h[i] - gx[i]);
    Some(WorkingSetSolution { x, y, z, s })
}

/// Clamps edge noise and scores the polished point.
fn finish_polish(form: &StandardForm, candidate: WorkingSetSolution) -> Option<IpmIterate> {
    let nv = form.nv;
    let p = form.a_rows.len();
    let m = form.g_rows.len();
    let scale = form.data_scale();
    let WorkingSetSolution { x, y, mut z, s } = candidate;
    for zi in z.iter_mut() {
        *zi = zi.max(0.0);
    }

    let mut ax = DVector::zeros(p);
    spmv(&form.a_rows, &x, &mut ax);
    let mut gx = DVector::zeros(m);
    spmv(&form.g_rows, &x, &mut gx);
    let mut at_y = DVector::zeros(nv);
    spmv_transpose(&form.a_rows, &y, &mut at_y);
    let mut gt_z = DVector::zeros(nv);
    spmv_transpose(&form.g_rows, &z, &mut gt_z);
    let mut stat: f64 = 0.0;
    for j in 0..nv {
        stat = stat.max((form.q_diag[j] * x[j] + form.c[j] + at_y[j] + gt_z[j]).abs());
    }
    let mut comp: f64 = 0.0;
    let mut violation: f64 = 0.0;
    for i in 0..m {
        comp = comp.max((z[i] * (gx[i] - form.h[i])).abs());
        violation = violation.max(gx[i] - form.h[i]);
    }
    let residual = (stat / (1.0 + scale))
        .max((&ax - &form.b).amax() / (1.0 + scale))
        .max(violation / (1.0 + scale))
        .max(comp / (1.0 + scale));
    if !residual.is_finite() {
        return None;
    }

    let slacks = DVector::from_fn(m, |i, _| s[i].max(0.0));
    Some(IpmIterate {
        x,
        y,
        z,
        s: slacks,
        residual,
        converged: false,
        objective_diverged: false,
    })
}

/// Largest alpha in (0, inf) with v + alpha dv >= 0.
fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    let mut alpha = f64::INFINITY;
    for i in 0..v.len() {
        if dv[i] < 0.0 {
            alpha = alpha.min(-v[i] / dv[i]);
        }
    }
    alpha
}

fn initial_point(form: &StandardForm) -> DVector<f64> {
    let nv = form.nv;
    let p = form.a_rows.len();
    let dim = nv + p;
    let mut kkt = DMatrix::<f64>::zeros(dim, dim);
    for j in 0..nv {
        kkt[(j, j)] = form.q_diag[j] + 1.0;
    }
    for (i, row) in form.a_rows.iter().enumerate() {
        for &(j, v) in row {
            kkt[(j, nv + i)] = v;
            kkt[(nv + i, j)] = v;
        }
    }
    for i in 0..p {
        kkt[(nv + i, nv + i)] = -1e-9;
    }
    let mut rhs = DVector::zeros(dim);
    for j in 0..nv {
        rhs[j] = -form.c[j];
    }
    for i in 0..p {
        rhs[nv + i] = form.b[i];
    }
    match kkt.lu().solve(&rhs) {
        Some(sol) => sol.rows(0, nv).into_owned(),
        None => DVector::zeros(nv),
    }
}

/// Direct solve when the program has equality constraints only.
fn solve_equality_kkt(form: &StandardForm, tol: f64) -> IpmIterate {
    let nv = form.nv;
    let p = form.a_rows.len();
    let scale = form.data_scale();
    let dim = nv + p;
    let mut kkt = DMatrix::<f64>::zeros(dim, dim);
    let delta = KKT_REGULARIZATION * (1.0 + scale);
    for j in 0..nv {
        kkt[(j, j)] = form.q_diag[j] + delta;
    }
    for (i, row) in form.a_rows.iter().enumerate() {
        for &(j, v) in row {
            kkt[(j, nv + i)] = v;
            kkt[(nv + i, j)] = v;
        }
    }
    for i in 0..p {
        kkt[(nv + i, nv + i)] = -delta;
    }
    let mut rhs = DVector::zeros(dim);
    for j in 0..nv {
        rhs[j] = -form.c[j];
    }
    for i in 0..p {
        rhs[nv + i] = form.b[i];
    }
    let lu = kkt.clone().lu();
    let mut sol = lu.solve(&rhs).unwrap_or_else(|| DVector::zeros(dim));
    for _ in 0..2 {
        let resid = &rhs - &kkt * &sol;
        if let Some(corr) = lu.solve(&resid) {
            sol += corr;
        }
    }
    let x = sol.rows(0, nv).into_owned();
    let y = sol.rows(nv, p).into_owned();

    let mut ax = DVector::zeros(p);
    spmv(&form.a_rows, &x, &mut ax);
    let mut at_y = DVector::zeros(nv);
    spmv_transpose(&form.a_rows, &y, &mut at_y);
    let mut stat: f64 = 0.0;
    for j in 0..nv {
        stat = stat.max((form.q_diag[j] * x[j] + form.c[j] + at_y[j]).abs());
    }
    let residual = (stat.max((&ax - &form.b).amax())) / (1.0 + scale);
    // An unconstrained direction with nonzero gradient means the
    // objective is unbounded below.
    let diverged = residual > 1e-4 && p == 0;
    IpmIterate {
        converged: residual <= tol,
        residual,
        x,
        y,
        z: DVector::zeros(0),
        s: DVector::zeros(0),
        objective_diverged: diverged,
    }
}

struct BuiltForm {
    form: StandardForm,
    origins: Vec<RowOrigin>,
}

fn build_standard_form(p: &ConvexProgram) -> BuiltForm {
    let n_aux = p.pwl.len();
    let nv = p.num_vars + n_aux;

    let mut q_diag = DVector::zeros(nv);
    let mut c = DVector::zeros(nv);
    for j in 0..p.num_vars {
        q_diag[j] = 2.0 * p.quad[j];
        c[j] = p.lin[j];
    }
    for (t, _) in p.pwl.iter().enumerate() {
        c[p.num_vars + t] = 1.0;
    }

    let a_rows = p.eq_rows.clone();
    let b = DVector::from_vec(p.eq_rhs.clone());

    let mut g_rows: Vec<SparseRow> = Vec::new();
    let mut h: Vec<f64> = Vec::new();
    let mut origins: Vec<RowOrigin> = Vec::new();

    for (i, row) in p.ineq_rows.iter().enumerate() {
        g_rows.push(row.clone());
        h.push(p.ineq_rhs[i]);
        origins.push(RowOrigin::UserIneq(i));
    }
    for j in 0..p.num_vars {
        if p.upper[j].is_finite() {
            g_rows.push(vec![(j, 1.0)]);
            h.push(p.upper[j]);
            origins.push(RowOrigin::UpperBound(j));
        }
    }
    for j in 0..p.num_vars {
        if p.lower[j].is_finite() {
            g_rows.push(vec![(j, -1.0)]);
            h.push(-p.lower[j]);
            origins.push(RowOrigin::LowerBound(j));
        }
    }
    for (t, term) in p.pwl.iter().enumerate() {
        let aux = p.num_vars + t;
        for &(slope, intercept) in &term.pieces {
            // slope * x - t <= -intercept
            g_rows.push(vec![(term.var, slope), (aux, -1.0)]);
            h.push(-intercept);
            origins.push(RowOrigin::Epigraph);
        }
    }

    BuiltForm {
        form: StandardForm {
            nv,
            q_diag,
            c,
            a_rows,
            b,
            g_rows,
            h: DVector::from_vec(h),
        },
        origins,
    }
}

/// Elastic feasibility program: violation variables on every row,
/// a tiny quadratic pull on x for uniqueness.
fn build_phase1(form: &StandardForm) -> StandardForm {
    let nv = form.nv;
    let p = form.a_rows.len();
    let m = form.g_rows.len();
    // Layout: [x (nv), t (m), wp (p), wm (p)].
    let n_all = nv + m + 2 * p;
    let mut q_diag = DVector::zeros(n_all);
    let mut c = DVector::zeros(n_all);
    for j in 0..nv {
        q_diag[j] = PHASE1_REGULARIZATION;
    }
    for j in nv..n_all {
        c[j] = 1.0;
    }

    let mut a_rows: Vec<SparseRow> = Vec::with_capacity(p);
    for (i, row) in form.a_rows.iter().enumerate() {
        let mut r = row.clone();
        r.push((nv + m + i, 1.0));
        r.push((nv + m + p + i, -1.0));
        a_rows.push(r);
    }

    let mut g_rows: Vec<SparseRow> = Vec::with_capacity(2 * m + 2 * p);
    let mut h = Vec::with_capacity(2 * m + 2 * p);
    for (i, row) in form.g_rows.iter().enumerate() {
        let mut r = row.clone();
        r.push((nv + i, -1.0));
        g_rows.push(r);
        h.push(form.h[i]);
    }
    for j in nv..n_all {
        g_rows.push(vec![(j, -1.0)]);
        h.push(0.0);
    }

    StandardForm {
        nv: n_all,
        q_diag,
        c,
        a_rows,
        b: form.b.clone(),
        g_rows,
        h: DVector::from_vec(h),
    }
}

impl ConvexProgram {
    /// Solves the program to the given KKT tolerance.
    pub fn solve(&self, tol: f64) -> SolveResult {
        let built = build_standard_form(self);
        let form = &built.form;

        let outcome = run_ipm(form, tol);
        if outcome.converged {
            return self.extract(&built, outcome);
        }
        if outcome.objective_diverged {
            return self.failure_result(SolveStatus::Unbounded, &outcome, &built);
        }

        // Classify: elastic feasibility solve. Its optimum is the
        // least total violation; a positive value plus a valid dual
        // ray certifies infeasibility.
        let phase1 = build_phase1(form);
        let p1 = run_ipm(&phase1, tol.max(1e-9));
        let nv = form.nv;
        let m = form.g_rows.len();
        let p = form.a_rows.len();
        let violation: f64 =
            p1.x.rows(nv, m + 2 * p).iter().map(|v| v.max(0.0)).sum::<f64>();
        let scale = form.data_scale();
        // The infeasibility cut must nest inside the optimality gate:
        // a violation below it leaves the main solve able to reach the
        // requested residual, one above it gets a certificate.
        if p1.converged && violation > 0.5 * tol * (1.0 + scale) {
            // Farkas weights: equality duals and the inequality-row
            // block of the phase-1 multipliers.
            let y = -&p1.y; // internal -> public sign
            let z = p1.z.rows(0, m).into_owned();
            let mut combo = DVector::zeros(nv);
            let mut aty = DVector::zeros(nv);
            // public convention: A'y + G'z = 0 with internal y flipped
            spmv_transpose(&form.a_rows, &y, &mut aty);
            let mut gtz = DVector::zeros(nv);
            let g_user: Vec<SparseRow> = form.g_rows.clone();
            spmv_transpose(&g_user, &z, &mut gtz);
            for j in 0..nv {
                combo[j] = -aty[j] + gtz[j];
            }
            let gap = form.b.dot(&(-&y)) + form.h.dot(&z);
            let cert = self.map_certificate(&built, -&y, z, gap, combo.amax());
            return SolveResult {
                status: SolveStatus::Infeasible(cert),
                x: DVector::zeros(self.num_vars),
                objective: f64::NAN,
                eq_duals: DVector::zeros(self.eq_rows.len()),
                ineq_duals: DVector::zeros(self.ineq_rows.len()),
                lower_duals: DVector::zeros(self.num_vars),
                upper_duals: DVector::zeros(self.num_vars),
                kkt_residual: outcome.residual,
            };
        }

        self.failure_result(SolveStatus::NumericalFailure, &outcome, &built)
    }

    fn failure_result(
        &self,
        status: SolveStatus,
        outcome: &IpmIterate,
        built: &BuiltForm,
    ) -> SolveResult {
        let x = outcome.x.rows(0, self.num_vars).into_owned();
        let objective = self.objective_value(&x);
        let mut result = SolveResult {
            status,
            x,
            objective,
            eq_duals: DVector::zeros(self.eq_rows.len()),
            ineq_duals: DVector::zeros(self.ineq_rows.len()),
            lower_duals: DVector::zeros(self.num_vars),
            upper_duals: DVector::zeros(self.num_vars),
            kkt_residual: outcome.residual,
        };
        let _ = built;
        result.kkt_residual = outcome.residual;
        result
    }

    fn map_certificate(
        &self,
        built: &BuiltForm,
        y: DVector<f64>,
        z: DVector<f64>,
        gap: f64,
        combination_residual: f64,
    ) -> FarkasCertificate {
        let mut ineq_weights = DVector::zeros(self.ineq_rows.len());
        let mut lower_weights = DVector::zeros(self.num_vars);
        let mut upper_weights = DVector::zeros(self.num_vars);
        for (row, origin) in built.origins.iter().enumerate() {
            match *origin {
                RowOrigin::UserIneq(i) => ineq_weights[i] = z[row],
                RowOrigin::UpperBound(j) => upper_weights[j] = z[row],
                RowOrigin::LowerBound(j) => lower_weights[j] = z[row],
                RowOrigin::Epigraph => {}
            }
        }
        FarkasCertificate {
            eq_weights: y,
            ineq_weights,
            lower_weights,
            upper_weights,
            gap,
            combination_residual,
        }
    }

    fn extract(&self, built: &BuiltForm, outcome: IpmIterate) -> SolveResult {
        let form = &built.form;
        let x = outcome.x.rows(0, self.num_vars).into_owned();
        // Public equality duals flip the internal sign so that a dual
        // prices the marginal relaxation of its row.
        let eq_duals = -outcome.y.clone();

        let mut ineq_duals = DVector::zeros(self.ineq_rows.len());
        let mut lower_duals = DVector::zeros(self.num_vars);
        let mut upper_duals = DVector::zeros(self.num_vars);
        for (row, origin) in built.origins.iter().enumerate() {
            let zi = outcome.z[row].max(0.0);
            match *origin {
                RowOrigin::UserIneq(i) => ineq_duals[i] = zi,
                RowOrigin::UpperBound(j) => upper_duals[j] = zi,
                RowOrigin::LowerBound(j) => lower_duals[j] = zi,
                RowOrigin::Epigraph => {}
            }
        }

        // Unscaled KKT residual at the returned point.
        let m = form.g_rows.len();
        let p = form.a_rows.len();
        let nv = form.nv;
        let mut ax = DVector::zeros(p);
        spmv(&form.a_rows, &outcome.x, &mut ax);
        let mut gx = DVector::zeros(m);
        spmv(&form.g_rows, &outcome.x, &mut gx);
        let mut aty = DVector::zeros(nv);
        spmv_transpose(&form.a_rows, &outcome.y, &mut aty);
        let mut gtz = DVector::zeros(nv);
        spmv_transpose(&form.g_rows, &outcome.z, &mut gtz);
        let mut kkt_residual: f64 = 0.0;
        for j in 0..nv {
            kkt_residual = kkt_residual
                .max((form.q_diag[j] * outcome.x[j] + form.c[j] + aty[j] + gtz[j]).abs());
        }
        for i in 0..p {
            kkt_residual = kkt_residual.max((ax[i] - form.b[i]).abs());
        }
        for i in 0..m {
            kkt_residual = kkt_residual.max(gx[i] - form.h[i]);
            kkt_residual = kkt_residual.max((outcome.z[i] * (gx[i] - form.h[i])).abs());
        }

        SolveResult {
            status: SolveStatus::Optimal,
            objective: self.objective_value(&x),
            x,
            eq_duals,
            ineq_duals,
            lower_duals,
            upper_duals,
            kkt_residual,
        }
    }
}
