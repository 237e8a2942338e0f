//! The FHBVM(k, s) stepping engine.
//!
//! Each step advances a piecewise representation
//! sigma_n(c h_n) = phi_{n-1}(c) + h_n^alpha sum_j I^alpha P_j(c) gamma_j^n
//! where phi_{n-1} collects the initial polynomial and the whole past through
//! precomputed lag tables, and the discrete Fourier coefficients gamma_j^n
//! solve a fixed-point system closed by the Gauss-Jacobi rule. The stage
//! system is solved by simplified Newton with one frozen Jacobian per step
//! (a plain fixed-point mode is available); the endpoint update uses
//! I^alpha P_j(1) = delta_j0 / Gamma(alpha + 1).
//!
//! `f` and the Jacobian are required to be pure functions: a solve is a
//! strictly sequential recurrence over steps, but distinct solves over the
//! same immutable problem may run concurrently.

use crate::basis::{gauss_jacobi_rule, JacobiRule};
use crate::error::{Error, Result};
use crate::fracint::{self, StageTables};
use crate::mesh::{self, Mesh, MeshKind};
use crate::specfun::lgamma;
use nalgebra::{DMatrix, DVector};
use std::time::{Duration, Instant};

pub type RhsFn = dyn Fn(f64, &DVector<f64>, &mut DVector<f64>) + Send + Sync;
pub type JacFn = dyn Fn(f64, &DVector<f64>, &mut DMatrix<f64>) + Send + Sync;
pub type ExactFn = dyn Fn(f64) -> DVector<f64> + Send + Sync;

/// An initial-value problem y^(alpha) = f(t, y) on [0, T] with Caputo
/// derivative of non-integer order alpha in (ell-1, ell) and classical
/// initial data y^(i)(0) for i < ell.
pub struct FdeProblem {
    alpha: f64,
    ell: usize,
    dim: usize,
    y0: Vec<DVector<f64>>,
    horizon: f64,
    rhs: Box<RhsFn>,
    jac: Option<Box<JacFn>>,
    exact: Option<Box<ExactFn>>,
}

impl FdeProblem {
    /// `y0` holds one row per initial derivative order: y0[i] = y^(i)(0),
    /// so its length fixes ell = ceil(alpha).
    pub fn new(
        alpha: f64,
        y0: Vec<DVector<f64>>,
        horizon: f64,
        rhs: Box<RhsFn>,
    ) -> Result<Self> {
        if !alpha.is_finite() || alpha <= 0.0 || alpha == alpha.round() {
            return Err(Error::Domain(format!(
                "alpha must be positive and non-integer, got {alpha}"
            )));
        }
        let ell = alpha.ceil() as usize;
        if y0.len() != ell {
            return Err(Error::Domain(format!(
                "y0 must have ell = ceil(alpha) = {ell} rows, got {}",
                y0.len()
            )));
        }
        let dim = y0[0].len();
        if dim == 0 || y0.iter().any(|r| r.len() != dim) {
            return Err(Error::Domain("y0 rows must be non-empty and equally sized".into()));
        }
        if !horizon.is_finite() || horizon <= 0.0 {
            return Err(Error::Domain(format!("horizon must be positive, got {horizon}")));
        }
        Ok(Self {
            alpha,
            ell,
            dim,
            y0,
            horizon,
            rhs,
            jac: None,
            exact: None,
        })
    }

    pub fn with_jacobian(mut self, jac: Box<JacFn>) -> Self {
        self.jac = Some(jac);
        self
    }

    pub fn with_exact(mut self, exact: Box<ExactFn>) -> Self {
        self.exact = Some(exact);
        self
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn ell(&self) -> usize {
        self.ell
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Initial rows y^(0)(0), ..., y^(ell-1)(0).
    pub fn initial_values(&self) -> &[DVector<f64>] {
        &self.y0
    }

    pub fn eval_rhs(&self, t: f64, y: &DVector<f64>, out: &mut DVector<f64>) {
        (self.rhs)(t, y, out);
    }

    pub fn has_jacobian(&self) -> bool {
        self.jac.is_some()
    }

    /// Writes df/dy into `out`; returns false when no Jacobian was supplied.
    pub fn eval_jacobian(&self, t: f64, y: &DVector<f64>, out: &mut DMatrix<f64>) -> bool {
        match &self.jac {
            Some(j) => {
                j(t, y, out);
                true
            }
            None => false,
        }
    }

    pub fn has_exact(&self) -> bool {
        self.exact.is_some()
    }

    pub fn eval_exact(&self, t: f64) -> Option<DVector<f64>> {
        self.exact.as_ref().map(|e| e(t))
    }
}

impl std::fmt::Debug for FdeProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FdeProblem")
            .field("alpha", &self.alpha)
            .field("ell", &self.ell)
            .field("dim", &self.dim)
            .field("horizon", &self.horizon)
            .field("has_jacobian", &self.jac.is_some())
            .field("has_exact", &self.exact.is_some())
            .finish()
    }
}

/// Mesh-kind request. `Auto` probes both candidates with the doubled-mesh
/// estimator and keeps the better one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MeshSelect {
    #[default]
    Auto,
    Graded,
    Uniform,
}

/// Nonlinear iteration for the stage system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StageIteration {
    /// One frozen Jacobian per step; the Newton matrix has Kronecker blocks
    /// delta_jl I - h^alpha C(j,l) J and is factored once per step.
    #[default]
    SimplifiedNewton,
    /// Plain fixed-point sweeps; adequate for non-stiff problems.
    FixedPoint,
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Quadrature nodes (paper default 22).
    pub k: usize,
    /// Retained Fourier modes, s <= k (paper default 20).
    pub s: usize,
    pub mesh: MeshSelect,
    /// Grading ratio override for the graded kind.
    pub r: Option<f64>,
    /// Attach a per-node absolute error estimate from a doubled-M solve.
    pub error_estimate: bool,
    pub iteration: StageIteration,
    /// Relative tolerance on the iteration increment.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            k: 22,
            s: 20,
            mesh: MeshSelect::Auto,
            r: None,
            error_estimate: false,
            iteration: StageIteration::SimplifiedNewton,
            tol: 1e-14,
            max_iters: 50,
        }
    }
}

/// Work counters for one solve.
#[derive(Debug, Clone, Default)]
pub struct SolveStats {
    pub rhs_evals: usize,
    pub jac_evals: usize,
    pub factorizations: usize,
    /// Nonlinear iterations taken by each step.
    pub newton_iters: Vec<usize>,
    pub wall_time: Duration,
}

/// Discrete Fourier coefficients gamma_j^nu of every completed step; the
/// memory term and dense output are linear in these.
#[derive(Debug, Clone, Default)]
pub struct FourierHistory {
    gammas: Vec<DMatrix<f64>>,
    steps: Vec<f64>,
}

impl FourierHistory {
    pub fn len(&self) -> usize {
        self.gammas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gammas.is_empty()
    }

    /// Coefficients of step nu (1-based), an s x m matrix.
    pub fn gamma(&self, nu: usize) -> &DMatrix<f64> {
        &self.gammas[nu - 1]
    }

    pub fn step(&self, nu: usize) -> f64 {
        self.steps[nu - 1]
    }

    fn push(&mut self, gamma: DMatrix<f64>, h: f64) {
        self.gammas.push(gamma);
        self.steps.push(h);
    }
}

/// Everything a solve produces: the mesh, endpoint approximations, the
/// Fourier history enabling dense output, an optional error estimate, and
/// work counters.
#[derive(Debug, Clone)]
pub struct SolveResult {
    pub mesh: Mesh,
    /// (N+1) x m; row n approximates y(t_n), row 0 is the initial value.
    pub endpoints: DMatrix<f64>,
    pub history: FourierHistory,
    /// (N+1) x m absolute error estimates from the doubled mesh, when requested.
    pub err_estimate: Option<DMatrix<f64>>,
    pub stats: SolveStats,
}

impl SolveResult {
    /// Largest componentwise estimated error, if an estimate was attached.
    pub fn max_estimated_error(&self) -> Option<f64> {
        self.err_estimate
            .as_ref()
            .map(|e| e.iter().fold(0.0f64, |a, &v| a.max(v.abs())))
    }

    /// Largest componentwise |y(t_n) - ybar_n| against the problem's exact
    /// solution, if one is attached.
    pub fn max_abs_error(&self, problem: &FdeProblem) -> Option<f64> {
        if !problem.has_exact() {
            return None;
        }
        let mut worst = 0.0f64;
        for (n, &t) in self.mesh.nodes().iter().enumerate() {
            let y = problem.eval_exact(t)?;
            for j in 0..y.len() {
                worst = worst.max((y[j] - self.endpoints[(n, j)]).abs());
            }
        }
        Some(worst)
    }
}

/// Sum_{i < ell} t^i / i! y_0^i, the polynomial carrying the initial data.
pub fn initial_polynomial(problem: &FdeProblem, t: f64) -> DVector<f64> {
    let mut acc = problem.y0[0].clone();
    let mut factor = 1.0;
    for (i, row) in problem.y0.iter().enumerate().skip(1) {
        factor *= t / i as f64;
        acc.axpy(factor, row, 1.0);
    }
    acc
}

/// Endpoint update ybar_n = phi_{n-1}(1) + h^alpha gamma_0 / Gamma(alpha+1).
pub fn step_endpoint(phi_one: &DVector<f64>, h: f64, gamma0: &DVector<f64>, alpha: f64) -> DVector<f64> {
    let scale = h.powf(alpha) * (-lgamma(alpha + 1.0)).exp();
    phi_one + gamma0 * scale
}

/// One configured solve: the problem bound to a mesh, rule, and tables.
/// Construction precomputes everything reused across steps; `solve` runs the
/// recurrence and `dense_eval` evaluates the piecewise representation
/// anywhere in [0, T].
pub struct Solver<'p> {
    problem: &'p FdeProblem,
    mesh: Mesh,
    opts: SolverOptions,
    rule: JacobiRule,
    tables: StageTables,
    /// s x k, B(j, i) = b_i P_j(c_i)
    b_mat: DMatrix<f64>,
    /// s x s, C = B A
    c_mat: DMatrix<f64>,
    inv_gamma_alpha: f64,
}

impl<'p> Solver<'p> {
    pub fn new(problem: &'p FdeProblem, mesh: Mesh, opts: SolverOptions) -> Result<Self> {
        if (mesh.horizon() - problem.horizon()).abs() > 1e-12 * problem.horizon() {
            return Err(Error::Domain(format!(
                "mesh horizon {} does not match problem horizon {}",
                mesh.horizon(),
                problem.horizon()
            )));
        }
        if opts.tol <= 0.0 || opts.max_iters == 0 {
            return Err(Error::Domain("tol must be positive and max_iters >= 1".into()));
        }
        let rule = gauss_jacobi_rule(problem.alpha(), opts.k)?;
        let tables = fracint::build_stage_tables(&rule, opts.s, &mesh)?;
        let s = opts.s;
        let k = opts.k;
        let mut b_mat = DMatrix::zeros(s, k);
        for i in 0..k {
            let b = rule.weights()[i];
            for j in 0..s {
                b_mat[(j, i)] = b * tables.p_at_nodes()[(i, j)];
            }
        }
        let c_mat = &b_mat * tables.frac_int_matrix();
        let alpha = problem.alpha();
        Ok(Self {
            problem,
            mesh,
            opts,
            rule,
            tables,
            b_mat,
            c_mat,
            inv_gamma_alpha: (-lgamma(alpha)).exp(),
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn rule(&self) -> &JacobiRule {
        &self.rule
    }

    pub fn tables(&self) -> &StageTables {
        &self.tables
    }

    /// Memory term phi_{n-1} at the quadrature abscissae of step n (k x m):
    /// the initial polynomial plus the lag-table contraction of the history.
    pub fn memory_term_at_nodes(&self, history: &FourierHistory, n: usize) -> DMatrix<f64> {
        let k = self.rule.k();
        let m = self.problem.dim();
        let t_base = self.mesh.nodes()[n - 1];
        let h = self.mesh.step(n);
        let mut phi = DMatrix::zeros(k, m);
        for (i, &c) in self.rule.nodes().iter().enumerate() {
            let p = initial_polynomial(self.problem, t_base + c * h);
            phi.row_mut(i).copy_from(&p.transpose());
        }
        let alpha = self.problem.alpha();
        for nu in 1..n {
            let lag = &self.tables.memory_mats()[n - nu - 1];
            let w = history.steps[nu - 1].powf(alpha) * self.inv_gamma_alpha;
            phi.gemm(w, lag.at_nodes(), &history.gammas[nu - 1], 1.0);
        }
        phi
    }

    /// Memory term phi_{n-1}(1) at the right endpoint of step n.
    pub fn memory_term_at_one(&self, history: &FourierHistory, n: usize) -> DVector<f64> {
        let t_n = self.mesh.nodes()[n];
        let mut phi = initial_polynomial(self.problem, t_n);
        let alpha = self.problem.alpha();
        for nu in 1..n {
            let lag = &self.tables.memory_mats()[n - nu - 1];
            let w = history.steps[nu - 1].powf(alpha) * self.inv_gamma_alpha;
            phi.gemm_tr(w, &history.gammas[nu - 1], lag.at_one(), 1.0);
        }
        phi
    }

    /// Memory term at an arbitrary local coordinate c of step n; rebuilds the
    /// kernel rows at a = xi_q + c rho_q. Used by dense output.
    fn memory_term_at_c(&self, history: &FourierHistory, n: usize, c: f64) -> Result<DVector<f64>> {
        let t = self.mesh.nodes()[n - 1] + c * self.mesh.step(n);
        let mut phi = initial_polynomial(self.problem, t);
        let alpha = self.problem.alpha();
        let s = self.tables.s();
        for nu in 1..n {
            let lag = &self.tables.memory_mats()[n - nu - 1];
            let (xi, rho) = lag.argument_map();
            let row = fracint::memory_kernel_row(&self.rule, xi + c * rho, s)?;
            let w = history.steps[nu - 1].powf(alpha) * self.inv_gamma_alpha;
            phi.gemm_tr(w, &history.gammas[nu - 1], &DVector::from_vec(row), 1.0);
        }
        Ok(phi)
    }

    /// Solve the discrete stage system of one step for the s x m coefficient
    /// matrix, warm-started from `guess`. Returns the coefficients and the
    /// number of iterations spent.
    pub fn solve_stage_system(
        &self,
        phi_nodes: &DMatrix<f64>,
        t_base: f64,
        h: f64,
        guess: &DMatrix<f64>,
        stats: &mut SolveStats,
        step: usize,
    ) -> Result<(DMatrix<f64>, usize)> {
        let k = self.rule.k();
        let s = self.tables.s();
        let m = self.problem.dim();
        let alpha = self.problem.alpha();
        let ha = h.powf(alpha);
        let times: Vec<f64> = self.rule.nodes().iter().map(|&c| t_base + c * h).collect();

        let mut gamma = guess.clone();
        let mut stages = DMatrix::zeros(k, m);
        let mut f_mat = DMatrix::zeros(k, m);
        let mut ybuf = DVector::zeros(m);
        let mut fbuf = DVector::zeros(m);

        let newton = self.opts.iteration == StageIteration::SimplifiedNewton;
        let mut lu = if newton {
            self.compute_stages(&gamma, phi_nodes, ha, &mut stages)?;
            Some(self.factor_newton_matrix(&stages, &times, ha, stats))
        } else {
            None
        };

        let mut prev_inc = f64::INFINITY;
        let mut slow_run = 0usize;
        let mut refreshed = false;
        let mut delta = DVector::zeros(s * m);

        for iter in 1..=self.opts.max_iters {
            self.compute_stages(&gamma, phi_nodes, ha, &mut stages)?;
            for i in 0..k {
                for j in 0..m {
                    ybuf[j] = stages[(i, j)];
                }
                self.problem.eval_rhs(times[i], &ybuf, &mut fbuf);
                stats.rhs_evals += 1;
                if fbuf.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteRhs {
                        step,
                        t: times[i],
                    });
                }
                f_mat.row_mut(i).copy_from(&fbuf.transpose());
            }
            // residual G = gamma - B F; a guess that already satisfies the
            // fixed point costs no further increment
            let mut g = gamma.clone();
            g.gemm(-1.0, &self.b_mat, &f_mat, 1.0);
            let scale = self.opts.tol * (1.0 + gamma.amax());
            if g.amax() <= scale {
                return Ok((gamma, iter - 1));
            }

            let inc = match &lu {
                Some(fact) => {
                    for r in 0..s {
                        for cc in 0..m {
                            delta[r * m + cc] = -g[(r, cc)];
                        }
                    }
                    let sol = fact.solve(&delta).ok_or(Error::StepFailure {
                        step,
                        t: t_base + h,
                        iters: iter,
                    })?;
                    for r in 0..s {
                        for cc in 0..m {
                            gamma[(r, cc)] += sol[r * m + cc];
                        }
                    }
                    sol.amax()
                }
                None => {
                    gamma -= &g;
                    g.amax()
                }
            };

            if !inc.is_finite() {
                return Err(Error::StepFailure {
                    step,
                    t: t_base + h,
                    iters: iter,
                });
            }
            if inc <= self.opts.tol * (1.0 + gamma.amax()) {
                return Ok((gamma, iter));
            }
            if inc > 0.9 * prev_inc {
                slow_run += 1;
            } else {
                slow_run = 0;
            }
            prev_inc = inc;
            if newton && slow_run >= 3 && !refreshed {
                self.compute_stages(&gamma, phi_nodes, ha, &mut stages)?;
                lu = Some(self.factor_newton_matrix(&stages, &times, ha, stats));
                refreshed = true;
                slow_run = 0;
                prev_inc = f64::INFINITY;
            }
        }
        Err(Error::StepFailure {
            step,
            t: t_base + h,
            iters: self.opts.max_iters,
        })
    }

    /// stages = phi + h^alpha A gamma
    fn compute_stages(
        &self,
        gamma: &DMatrix<f64>,
        phi_nodes: &DMatrix<f64>,
        ha: f64,
        stages: &mut DMatrix<f64>,
    ) -> Result<()> {
        stages.copy_from(phi_nodes);
        stages.gemm(ha, self.tables.frac_int_matrix(), gamma, 1.0);
        Ok(())
    }

    /// Newton matrix I - h^alpha C (x) Jbar with Jbar frozen at the first
    /// stage of the current predictor, factored once.
    fn factor_newton_matrix(
        &self,
        stages: &DMatrix<f64>,
        times: &[f64],
        ha: f64,
        stats: &mut SolveStats,
    ) -> nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn> {
        let s = self.tables.s();
        let m = self.problem.dim();
        let y1 = stages.row(0).transpose();
        let jbar = self.eval_jacobian(times[0], &y1, stats);
        let mut w = DMatrix::identity(s * m, s * m);
        for j in 0..s {
            for l in 0..s {
                let scale = ha * self.c_mat[(j, l)];
                if scale != 0.0 {
                    for a in 0..m {
                        for b in 0..m {
                            w[(j * m + a, l * m + b)] -= scale * jbar[(a, b)];
                        }
                    }
                }
            }
        }
        stats.factorizations += 1;
        w.lu()
    }

    /// Analytic Jacobian when supplied, forward differences otherwise.
    fn eval_jacobian(&self, t: f64, y: &DVector<f64>, stats: &mut SolveStats) -> DMatrix<f64> {
        let m = self.problem.dim();
        let mut jac = DMatrix::zeros(m, m);
        stats.jac_evals += 1;
        if self.problem.eval_jacobian(t, y, &mut jac) {
            return jac;
        }
        let mut f0 = DVector::zeros(m);
        self.problem.eval_rhs(t, y, &mut f0);
        let mut yp = y.clone();
        let mut fp = DVector::zeros(m);
        stats.rhs_evals += 1 + m;
        for col in 0..m {
            let d = f64::EPSILON.sqrt() * (1.0 + y[col].abs());
            yp[col] = y[col] + d;
            self.problem.eval_rhs(t, &yp, &mut fp);
            for row in 0..m {
                jac[(row, col)] = (fp[row] - f0[row]) / d;
            }
            yp[col] = y[col];
        }
        jac
    }

    /// Run the step recurrence over the whole mesh.
    pub fn solve(&self) -> Result<SolveResult> {
        let start = Instant::now();
        let n_steps = self.mesh.n_steps();
        let m = self.problem.dim();
        let s = self.tables.s();
        let alpha = self.problem.alpha();

        let mut endpoints = DMatrix::zeros(n_steps + 1, m);
        endpoints
            .row_mut(0)
            .copy_from(&self.problem.y0[0].transpose());
        let mut history = FourierHistory::default();
        let mut stats = SolveStats::default();
        let mut gamma_prev = DMatrix::zeros(s, m);

        for n in 1..=n_steps {
            let t_base = self.mesh.nodes()[n - 1];
            let h = self.mesh.step(n);
            let phi_nodes = self.memory_term_at_nodes(&history, n);
            let (gamma, iters) =
                self.solve_stage_system(&phi_nodes, t_base, h, &gamma_prev, &mut stats, n)?;
            stats.newton_iters.push(iters);

            let phi_one = self.memory_term_at_one(&history, n);
            let ybar = step_endpoint(&phi_one, h, &gamma.row(0).transpose(), alpha);
            if ybar.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteRhs {
                    step: n,
                    t: self.mesh.nodes()[n],
                });
            }
            endpoints.row_mut(n).copy_from(&ybar.transpose());
            history.push(gamma.clone(), h);
            gamma_prev = gamma;
        }

        stats.wall_time = start.elapsed();
        Ok(SolveResult {
            mesh: self.mesh.clone(),
            endpoints,
            history,
            err_estimate: None,
            stats,
        })
    }

    /// Evaluate the piecewise representation sigma at any t in [0, T].
    pub fn dense_eval(&self, result: &SolveResult, t: f64) -> Result<DVector<f64>> {
        let (n, c) = self.mesh.locate(t)?;
        if result.history.len() < n {
            return Err(Error::Domain(
                "dense_eval: result history does not cover the requested time".into(),
            ));
        }
        let mut sigma = self.memory_term_at_c(&result.history, n, c)?;
        let rl = fracint::rl_basis_row(&self.rule, c, self.tables.s())?;
        let ha = self.mesh.step(n).powf(self.problem.alpha());
        sigma.gemm_tr(ha, &result.history.gammas[n - 1], &DVector::from_vec(rl), 1.0);
        Ok(sigma)
    }
}

/// Solve `problem` with largest step near T / m: builds the mesh (probing
/// both kinds unless one is forced), runs the recurrence, and optionally
/// attaches the doubled-mesh error estimate.
pub fn solve(problem: &FdeProblem, m: usize, opts: &SolverOptions) -> Result<SolveResult> {
    if m < 1 {
        return Err(Error::Domain("M must be at least 1".into()));
    }
    let mesh = mesh::select_mesh(problem, m, opts)?;
    let solver = Solver::new(problem, mesh, opts.clone())?;
    let mut result = solver.solve()?;

    if opts.error_estimate {
        // halved largest step on the same kind: double the count for the
        // uniform kind, extend a graded mesh at its own ratio
        let fine_mesh = match result.mesh.kind() {
            MeshKind::Uniform => mesh::build_uniform(problem.horizon(), 2 * m)?,
            MeshKind::Graded => {
                let r = result.mesh.ratio();
                mesh::build_graded_with(
                    problem.horizon(),
                    m,
                    r,
                    result.mesh.n_steps() + mesh::doubling_steps(r),
                )?
            }
        };
        let fine_opts = SolverOptions {
            error_estimate: false,
            mesh: opts.mesh,
            ..opts.clone()
        };
        let fine_solver = Solver::new(problem, fine_mesh, fine_opts)?;
        let fine_result = fine_solver.solve()?;

        let dim = problem.dim();
        let n_steps = result.mesh.n_steps();
        let mut err = DMatrix::zeros(n_steps + 1, dim);
        for (n, &t) in result.mesh.nodes().iter().enumerate().skip(1) {
            let fine_val = fine_solver.dense_eval(&fine_result, t)?;
            for j in 0..dim {
                err[(n, j)] = (result.endpoints[(n, j)] - fine_val[j]).abs();
            }
        }
        result.err_estimate = Some(err);
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_graded, build_uniform};

    fn dvec(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    /// y^(alpha) = 1, y(0) = 0, exact solution t^alpha / Gamma(alpha+1).
    fn constant_rhs_problem(alpha: f64, horizon: f64) -> FdeProblem {
        FdeProblem::new(
            alpha,
            vec![dvec(&[0.0])],
            horizon,
            Box::new(|_t, _y, f| f[0] = 1.0),
        )
        .unwrap()
        .with_jacobian(Box::new(|_t, _y, j| j[(0, 0)] = 0.0))
    }

    fn scalar_linear_problem(alpha: f64, lambda: f64, y0: f64, horizon: f64) -> FdeProblem {
        FdeProblem::new(
            alpha,
            vec![dvec(&[y0])],
            horizon,
            Box::new(move |_t, y, f| f[0] = lambda * y[0]),
        )
        .unwrap()
        .with_jacobian(Box::new(move |_t, _y, j| j[(0, 0)] = lambda))
    }

    /// The stiff 2x2 system of the fourth benchmark: y' = [[-100,0],[-99,-1]] y.
    fn stiff_linear_problem(alpha: f64, horizon: f64) -> FdeProblem {
        FdeProblem::new(
            alpha,
            vec![dvec(&[2.0, 3.0])],
            horizon,
            Box::new(|_t, y, f| {
                f[0] = -100.0 * y[0];
                f[1] = -99.0 * y[0] - y[1];
            }),
        )
        .unwrap()
        .with_jacobian(Box::new(|_t, _y, j| {
            j[(0, 0)] = -100.0;
            j[(0, 1)] = 0.0;
            j[(1, 0)] = -99.0;
            j[(1, 1)] = -1.0;
        }))
    }

    #[test]
    fn problem_validation() {
        assert!(FdeProblem::new(1.0, vec![dvec(&[0.0])], 1.0, Box::new(|_, _, _| {})).is_err());
        assert!(FdeProblem::new(-0.5, vec![dvec(&[0.0])], 1.0, Box::new(|_, _, _| {})).is_err());
        // ell mismatch: alpha in (1,2) needs two rows
        assert!(FdeProblem::new(1.5, vec![dvec(&[0.0])], 1.0, Box::new(|_, _, _| {})).is_err());
        assert!(FdeProblem::new(0.5, vec![dvec(&[0.0])], 0.0, Box::new(|_, _, _| {})).is_err());
    }

    #[test]
    fn initial_polynomial_examples() {
        let p = constant_rhs_problem(0.5, 1.0);
        for t in [0.0, 0.4, 1.0] {
            assert_eq!(initial_polynomial(&p, t)[0], 0.0);
        }
        // ell = 2, y(0) = -1, y'(0) = 0: constant -1
        let p2 = FdeProblem::new(
            1.5,
            vec![dvec(&[-1.0]), dvec(&[0.0])],
            1.0,
            Box::new(|_, _, f| f[0] = 0.0),
        )
        .unwrap();
        for t in [0.0, 0.3, 1.0] {
            assert_eq!(initial_polynomial(&p2, t)[0], -1.0);
        }
        // ell = 2, linear part: y(0) = 0, y'(0) = 1 at t = 2
        let p3 = FdeProblem::new(
            1.5,
            vec![dvec(&[0.0]), dvec(&[1.0])],
            4.0,
            Box::new(|_, _, f| f[0] = 0.0),
        )
        .unwrap();
        assert_eq!(initial_polynomial(&p3, 2.0)[0], 2.0);
    }

    #[test]
    fn step_endpoint_examples() {
        let phi = dvec(&[0.7]);
        assert_eq!(step_endpoint(&phi, 0.5, &dvec(&[0.0]), 0.5)[0], 0.7);
        // alpha = 0.5, h = 1, phi = 0, gamma0 = 1: 1/Gamma(1.5) = 2/sqrt(pi)
        let v = step_endpoint(&dvec(&[0.0]), 1.0, &dvec(&[1.0]), 0.5)[0];
        assert!((v - 2.0 / std::f64::consts::PI.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn memory_term_reduces_to_initial_polynomial() {
        let p = constant_rhs_problem(0.5, 1.0);
        let mesh = build_uniform(1.0, 4).unwrap();
        let solver = Solver::new(&p, mesh, SolverOptions::default()).unwrap();
        // n = 1: empty history
        let phi = solver.memory_term_at_nodes(&FourierHistory::default(), 1);
        assert!(phi.iter().all(|&v| v == 0.0));
        // one past step with zero coefficients contributes nothing
        let mut hist = FourierHistory::default();
        hist.push(DMatrix::zeros(20, 1), 0.25);
        let phi = solver.memory_term_at_nodes(&hist, 2);
        assert!(phi.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn memory_term_matches_closed_form_for_unit_rhs() {
        // gamma^1 = e_0 after one step of y^(alpha) = 1; at c = 1 the memory
        // term is (h^alpha / Gamma(alpha)) ((1+1)^alpha - 1^alpha)/alpha
        let alpha = 0.5;
        let p = constant_rhs_problem(alpha, 1.0);
        let mesh = build_uniform(1.0, 2).unwrap();
        let solver = Solver::new(&p, mesh, SolverOptions::default()).unwrap();
        let h = 0.5;
        let mut hist = FourierHistory::default();
        let mut gamma = DMatrix::zeros(20, 1);
        gamma[(0, 0)] = 1.0;
        hist.push(gamma, h);
        let phi = solver.memory_term_at_one(&hist, 2);
        let want = h.powf(alpha) / crate::specfun::gamma(alpha).unwrap()
            * (2.0f64.powf(alpha) - 1.0)
            / alpha;
        assert!((phi[0] - want).abs() < 1e-15, "{} vs {want}", phi[0]);
    }

    #[test]
    fn constant_rhs_converges_in_one_iteration() {
        let p = FdeProblem::new(
            0.5,
            vec![dvec(&[0.0, 0.0])],
            1.0,
            Box::new(|_t, _y, f| {
                f[0] = 3.0;
                f[1] = -1.5;
            }),
        )
        .unwrap();
        let mesh = build_uniform(1.0, 1).unwrap();
        let solver = Solver::new(&p, mesh, SolverOptions::default()).unwrap();
        let phi = DMatrix::zeros(22, 2);
        let guess = DMatrix::zeros(20, 2);
        let mut stats = SolveStats::default();
        let (gamma, iters) = solver
            .solve_stage_system(&phi, 0.0, 1.0, &guess, &mut stats, 1)
            .unwrap();
        assert_eq!(iters, 1);
        assert!((gamma[(0, 0)] - 3.0).abs() < 1e-14);
        assert!((gamma[(0, 1)] + 1.5).abs() < 1e-14);
        for j in 1..20 {
            assert!(gamma[(j, 0)].abs() < 1e-13 && gamma[(j, 1)].abs() < 1e-13);
        }
    }

    #[test]
    fn linear_stage_solve_matches_direct_solve() {
        // f(y) = lambda y: gamma solves (I - h^a C lambda) gamma = lambda B phi
        let alpha = 0.5;
        let lambda = -3.0;
        let p = scalar_linear_problem(alpha, lambda, 1.0, 1.0);
        let mesh = build_uniform(1.0, 2).unwrap();
        let solver = Solver::new(&p, mesh, SolverOptions::default()).unwrap();
        let h = 0.5;
        let phi = DMatrix::from_element(22, 1, 1.0);
        let guess = DMatrix::zeros(20, 1);
        let mut stats = SolveStats::default();
        let (gamma, _) = solver
            .solve_stage_system(&phi, 0.0, h, &guess, &mut stats, 1)
            .unwrap();

        let ha = h.powf(alpha);
        let w = DMatrix::identity(20, 20) - &solver.c_mat * (ha * lambda);
        let rhs = &solver.b_mat * &phi * lambda;
        let direct = w.lu().solve(&rhs).unwrap();
        for j in 0..20 {
            assert!(
                (gamma[(j, 0)] - direct[(j, 0)]).abs() < 1e-13,
                "j={j}: {} vs {}",
                gamma[(j, 0)],
                direct[(j, 0)]
            );
        }
    }

    #[test]
    fn stiff_first_step_needs_newton() {
        // T/M = 10 puts h^alpha |lambda| far beyond the contraction regime
        let p = stiff_linear_problem(0.25, 20.0);
        let mut opts = SolverOptions {
            mesh: MeshSelect::Uniform,
            iteration: StageIteration::FixedPoint,
            ..Default::default()
        };
        let fixed = solve(&p, 2, &opts);
        assert!(
            matches!(fixed, Err(Error::StepFailure { .. }) | Err(Error::NonFiniteRhs { .. })),
            "fixed-point mode unexpectedly converged: {fixed:?}"
        );
        opts.iteration = StageIteration::SimplifiedNewton;
        let newton = solve(&p, 2, &opts).unwrap();
        assert!(newton.stats.newton_iters.iter().all(|&i| i <= 50));
    }

    #[test]
    fn unit_rhs_solution_is_power_function() {
        // y^(alpha) = 1 => y = t^alpha / Gamma(alpha+1), reproduced to roundoff
        for alpha in [0.25, 0.5, 1.3] {
            let y0 = if alpha > 1.0 {
                vec![dvec(&[0.0]), dvec(&[0.0])]
            } else {
                vec![dvec(&[0.0])]
            };
            let p = FdeProblem::new(alpha, y0, 1.0, Box::new(|_, _, f| f[0] = 1.0)).unwrap();
            let opts = SolverOptions {
                mesh: MeshSelect::Uniform,
                ..Default::default()
            };
            let res = solve(&p, 4, &opts).unwrap();
            let ig = crate::specfun::gamma(alpha + 1.0).unwrap().recip();
            for (n, &t) in res.mesh.nodes().iter().enumerate() {
                let want = t.powf(alpha) * ig;
                assert!(
                    (res.endpoints[(n, 0)] - want).abs() < 1e-13,
                    "alpha={alpha} t={t}"
                );
            }
        }
    }

    #[test]
    fn dense_output_consistency() {
        let alpha = 0.5;
        let p = constant_rhs_problem(alpha, 1.0);
        let mesh = build_graded(1.0, 3, None).unwrap();
        let solver = Solver::new(&p, mesh, SolverOptions::default()).unwrap();
        let res = solver.solve().unwrap();
        // endpoints reproduced at the nodes
        for (n, &t) in res.mesh.nodes().iter().enumerate().skip(1) {
            let v = solver.dense_eval(&res, t).unwrap();
            assert!((v[0] - res.endpoints[(n, 0)]).abs() < 1e-13, "node {n}");
        }
        // t = 0 returns the initial value exactly
        assert_eq!(solver.dense_eval(&res, 0.0).unwrap()[0], 0.0);
        // interior points against the analytic solution t^alpha/Gamma(1.5)
        let ig = crate::specfun::gamma(alpha + 1.0).unwrap().recip();
        for i in 0..20 {
            let t = (i as f64 + 0.5) / 20.5;
            let v = solver.dense_eval(&res, t).unwrap();
            let want = t.powf(alpha) * ig;
            assert!((v[0] - want).abs() < 1e-11, "t={t}: {} vs {want}", v[0]);
        }
        assert!(solver.dense_eval(&res, 1.5).is_err());
    }

    #[test]
    fn fourier_coefficients_satisfy_quadrature_identity() {
        // recomputing gamma_j = sum_i b_i P_j(c_i) f(sigma(c_i h)) from the
        // converged stages reproduces the stored coefficients
        let p = scalar_linear_problem(0.75, -1.0, 1.0, 1.0);
        let mesh = build_uniform(1.0, 3).unwrap();
        let solver = Solver::new(&p, mesh, SolverOptions::default()).unwrap();
        let res = solver.solve().unwrap();
        let mut prefix = FourierHistory::default();
        for n in 1..=3 {
            let phi = solver.memory_term_at_nodes(&prefix, n);
            let gamma = &res.history.gammas[n - 1];
            let h = res.history.steps[n - 1];
            let mut stages = DMatrix::zeros(22, 1);
            solver
                .compute_stages(gamma, &phi, h.powf(0.75), &mut stages)
                .unwrap();
            let mut f_mat = DMatrix::zeros(22, 1);
            for i in 0..22 {
                f_mat[(i, 0)] = -stages[(i, 0)];
            }
            let back = &solver.b_mat * f_mat;
            let scale = 1.0 + gamma.amax();
            for j in 0..20 {
                assert!(
                    (back[(j, 0)] - gamma[(j, 0)]).abs() <= 2e-13 * scale,
                    "n={n} j={j}: {} vs {}",
                    back[(j, 0)],
                    gamma[(j, 0)]
                );
            }
            prefix.push(gamma.clone(), h);
        }
    }

    #[test]
    fn finite_difference_jacobian_fallback() {
        let alpha = 0.25;
        let p = FdeProblem::new(
            alpha,
            vec![dvec(&[1.0])],
            1.0,
            Box::new(|_t, y, f| f[0] = -4.0 * y[0]),
        )
        .unwrap(); // no Jacobian supplied
        let opts = SolverOptions {
            mesh: MeshSelect::Uniform,
            ..Default::default()
        };
        let res = solve(&p, 3, &opts).unwrap();
        assert!(res.stats.jac_evals > 0);
        assert!(res.endpoints.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn error_estimate_tracks_true_error() {
        // smooth forcing: y^(alpha) = t => y = t^(1+alpha)/Gamma(2+alpha)
        let alpha = 0.5;
        let p = FdeProblem::new(
            alpha,
            vec![dvec(&[0.0])],
            1.0,
            Box::new(|t, _y, f| f[0] = t),
        )
        .unwrap();
        let opts = SolverOptions {
            mesh: MeshSelect::Uniform,
            error_estimate: true,
            ..Default::default()
        };
        let res = solve(&p, 3, &opts).unwrap();
        let est = res.err_estimate.as_ref().unwrap();
        assert_eq!(est.nrows(), res.mesh.n_steps() + 1);
        let ig = crate::specfun::gamma(2.0 + alpha).unwrap().recip();
        for (n, &t) in res.mesh.nodes().iter().enumerate() {
            let truth = (res.endpoints[(n, 0)] - t.powf(1.0 + alpha) * ig).abs();
            // both are at roundoff level here; the estimate must not be wild
            assert!(est[(n, 0)] < 1e-10, "estimate {} truth {truth}", est[(n, 0)]);
        }
    }

    #[test]
    fn stats_are_populated() {
        let p = constant_rhs_problem(0.5, 1.0);
        let opts = SolverOptions {
            mesh: MeshSelect::Graded,
            ..Default::default()
        };
        let res = solve(&p, 2, &opts).unwrap();
        assert_eq!(res.stats.newton_iters.len(), res.mesh.n_steps());
        assert!(res.stats.rhs_evals > 0);
        assert!(res.stats.wall_time.as_nanos() > 0);
    }
}
