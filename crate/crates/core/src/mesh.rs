//! Partitions of [0, T]: geometric (graded) meshes that cluster steps near
//! t = 0 where Caputo solutions behave like t^alpha, and uniform meshes for
//! smooth problems. Also hosts the automatic kind selection used when the
//! caller does not force one.

use crate::error::{Error, Result};
use crate::solver::{self, FdeProblem, MeshSelect, SolverOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshKind {
    Graded,
    Uniform,
}

impl std::fmt::Display for MeshKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MeshKind::Graded => write!(f, "graded"),
            MeshKind::Uniform => write!(f, "uniform"),
        }
    }
}

/// A partition t_0 = 0 < t_1 < ... < t_N = T. For the graded kind the steps
/// grow geometrically, h_n = r^(n-1) h_1; the last node is pinned to T
/// exactly, absorbing rounding into h_N.
#[derive(Debug, Clone)]
pub struct Mesh {
    kind: MeshKind,
    horizon: f64,
    ratio: f64, // 1.0 for uniform
    h1: f64,
    nodes: Vec<f64>,
}

impl Mesh {
    pub fn kind(&self) -> MeshKind {
        self.kind
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Step ratio r (1 for the uniform kind).
    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    pub fn first_step(&self) -> f64 {
        self.h1
    }

    /// Number of steps N.
    pub fn n_steps(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Nodes t_0, ..., t_N.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Step h_n = t_n - t_{n-1}, 1-based.
    pub fn step(&self, n: usize) -> f64 {
        self.nodes[n] - self.nodes[n - 1]
    }

    /// Interval index n (1-based) and local coordinate c in [0, 1] with
    /// t = t_{n-1} + c h_n. Interior nodes resolve to c = 1 of the interval
    /// on their left.
    pub fn locate(&self, t: f64) -> Result<(usize, f64)> {
        if !t.is_finite() || t < 0.0 || t > self.horizon {
            return Err(Error::Domain(format!(
                "t = {t} outside [0, {}]",
                self.horizon
            )));
        }
        if t == 0.0 {
            return Ok((1, 0.0));
        }
        let n = self.nodes.partition_point(|&x| x < t).max(1);
        let c = (t - self.nodes[n - 1]) / self.step(n);
        Ok((n, c.clamp(0.0, 1.0)))
    }
}

/// Uniform mesh with N = M equal steps.
pub fn build_uniform(horizon: f64, m: usize) -> Result<Mesh> {
    if !horizon.is_finite() || horizon <= 0.0 {
        return Err(Error::Domain(format!("horizon must be positive, got {horizon}")));
    }
    if m < 1 {
        return Err(Error::Domain("uniform mesh requires M >= 1".into()));
    }
    let h = horizon / m as f64;
    let mut nodes: Vec<f64> = (0..=m).map(|i| i as f64 * h).collect();
    nodes[m] = horizon;
    Ok(Mesh {
        kind: MeshKind::Uniform,
        horizon,
        ratio: 1.0,
        h1: h,
        nodes,
    })
}

/// Graded mesh with ratio r and the smallest N such that the largest step
/// h_N = r^(N-1) h_1 stays at or below T / M. The default ratio is
/// (M/(M-1))^(1/2), safely inside the feasibility bound r < M/(M-1).
pub fn build_graded(horizon: f64, m: usize, r_override: Option<f64>) -> Result<Mesh> {
    if !horizon.is_finite() || horizon <= 0.0 {
        return Err(Error::Domain(format!("horizon must be positive, got {horizon}")));
    }
    if m < 2 {
        return Err(Error::Domain("graded mesh requires M >= 2".into()));
    }
    let bound = m as f64 / (m as f64 - 1.0);
    let r = match r_override {
        Some(r) => {
            if !r.is_finite() || r <= 1.0 {
                return Err(Error::Domain(format!("grading ratio must exceed 1, got {r}")));
            }
            if r >= bound {
                return Err(Error::Domain(format!(
                    "grading ratio {r} is infeasible for M = {m}: with r >= M/(M-1) = {bound:.6} \
                     the largest step cannot reach T/M"
                )));
            }
            r
        }
        None => bound.sqrt(),
    };

    // smallest N with sum_{i<N} r^{-i} >= M, i.e. h_N <= T/M
    let n = minimal_steps(r, m)?;
    Ok(assemble_graded(horizon, r, n))
}

fn minimal_steps(r: f64, m: usize) -> Result<usize> {
    let mut n = 1usize;
    let mut term = 1.0;
    let mut sum = 1.0;
    while sum < m as f64 {
        term /= r;
        sum += term;
        n += 1;
        if n > 100_000_000 {
            return Err(Error::Domain(format!(
                "graded mesh with r = {r} and M = {m} needs more than 1e8 steps"
            )));
        }
    }
    Ok(n)
}

/// Graded mesh with an explicit ratio and step count. The largest step
/// h_N = T (r-1) / (r - r^(1-N)) shrinks as N grows at fixed r, so any
/// N at or above the minimal count of [`build_graded`] keeps h_N <= T/M;
/// deeper meshes trade a few extra steps for an exponentially smaller h_1,
/// which is what resolves t^alpha-type layers at the origin.
pub fn build_graded_with(horizon: f64, m: usize, r: f64, n: usize) -> Result<Mesh> {
    if !horizon.is_finite() || horizon <= 0.0 {
        return Err(Error::Domain(format!("horizon must be positive, got {horizon}")));
    }
    if m < 2 {
        return Err(Error::Domain("graded mesh requires M >= 2".into()));
    }
    if !r.is_finite() || r <= 1.0 {
        return Err(Error::Domain(format!("grading ratio must exceed 1, got {r}")));
    }
    let n_min = minimal_steps(r, m)?;
    if n < n_min {
        return Err(Error::Domain(format!(
            "graded mesh with r = {r} needs at least {n_min} steps to keep the \
             largest step at or below T/M, got {n}"
        )));
    }
    Ok(assemble_graded(horizon, r, n))
}

fn assemble_graded(horizon: f64, r: f64, n: usize) -> Mesh {
    // h_1 (r^N - 1)/(r - 1) = T, in logs when r^N overflows
    let rn = r.powi(n as i32);
    let h1 = if rn.is_finite() {
        horizon * (r - 1.0) / (rn - 1.0)
    } else {
        horizon * (r - 1.0) * (-(n as f64) * r.ln()).exp()
    };
    let mut nodes = Vec::with_capacity(n + 1);
    nodes.push(0.0);
    let mut h = h1;
    let mut t = 0.0;
    for _ in 0..n {
        t += h;
        nodes.push(t);
        h *= r;
    }
    nodes[n] = horizon;
    Mesh {
        kind: MeshKind::Graded,
        horizon,
        ratio: r,
        h1,
        nodes,
    }
}

/// Extra steps that halve the largest step of a graded mesh at fixed ratio.
pub(crate) fn doubling_steps(r: f64) -> usize {
    (std::f64::consts::LN_2 / r.ln()).ceil() as usize
}

/// Pick the mesh for a problem by probing with the doubled-mesh error
/// estimator: the uniform candidate against a ladder of graded candidates of
/// increasing depth (all sharing the ratio and largest-step bound, each rung
/// pushing h_1 four decades further down). The ladder stops ascending once
/// the estimate hits the roundoff floor or stops improving, and the winner is
/// the mesh with the smallest estimate; estimates within a factor 2 prefer
/// the uniform kind (cheaper memory tables). A candidate that fails to
/// converge cedes to the others.
pub fn select_mesh(problem: &FdeProblem, m: usize, opts: &SolverOptions) -> Result<Mesh> {
    match opts.mesh {
        MeshSelect::Uniform => return build_uniform(problem.horizon(), m),
        MeshSelect::Graded => return build_graded(problem.horizon(), m, opts.r),
        MeshSelect::Auto => {}
    }
    if m < 2 {
        return build_uniform(problem.horizon(), m);
    }

    let probe_opts = SolverOptions {
        error_estimate: false,
        ..opts.clone()
    };
    // (max estimated error, solution scale) of a candidate against its
    // half-step partner
    let probe = |mesh: &Mesh, fine: &Mesh| -> Result<(f64, f64)> {
        let coarse = solver::Solver::new(problem, mesh.clone(), probe_opts.clone())?.solve()?;
        let fine_solver = solver::Solver::new(problem, fine.clone(), probe_opts.clone())?;
        let fine_res = fine_solver.solve()?;
        let mut est = 0.0f64;
        let mut scale = 0.0f64;
        for (n, &t) in coarse.mesh.nodes().iter().enumerate().skip(1) {
            let fv = fine_solver.dense_eval(&fine_res, t)?;
            for j in 0..problem.dim() {
                est = est.max((coarse.endpoints[(n, j)] - fv[j]).abs());
                scale = scale.max(fv[j].abs());
            }
        }
        if est.is_nan() {
            return Err(Error::Domain("probe produced a NaN error estimate".into()));
        }
        Ok((est, scale))
    };

    let horizon = problem.horizon();
    let uniform = build_uniform(horizon, m)?;
    let uniform_est = probe(&uniform, &build_uniform(horizon, 2 * m)?);

    let bound = m as f64 / (m as f64 - 1.0);
    let r = match opts.r {
        Some(r) if r > 1.0 && r < bound => r,
        _ => bound.sqrt(),
    };
    let n_min = minimal_steps(r, m)?;
    // one rung = four decades of h_1
    let rung = ((4.0 * std::f64::consts::LN_10) / r.ln()).ceil() as usize;
    let halver = doubling_steps(r);

    let mut best_graded: Option<(f64, Mesh)> = None;
    let mut graded_err: Option<Error> = None;
    for j in 0..=7usize {
        let n = n_min + j * rung;
        let mesh = assemble_graded(horizon, r, n);
        let fine = assemble_graded(horizon, r, n + halver);
        match probe(&mesh, &fine) {
            Ok((est, scale)) => {
                // keep climbing while depth buys a real improvement; smooth
                // problems exit immediately through the roundoff floor
                let improved = match &best_graded {
                    Some((best, _)) => est < 0.7 * best,
                    None => true,
                };
                if best_graded.as_ref().map_or(true, |(b, _)| est < *b) {
                    best_graded = Some((est, mesh));
                }
                if est <= 1e-13 * (1.0 + scale) || !improved {
                    break;
                }
            }
            Err(e) => {
                if graded_err.is_none() {
                    graded_err = Some(e);
                }
                break;
            }
        }
    }

    match (best_graded, uniform_est) {
        (Some((eg, mesh)), Ok((eu, _))) => {
            if eu <= 2.0 * eg {
                Ok(uniform)
            } else {
                Ok(mesh)
            }
        }
        (Some((_, mesh)), Err(_)) => Ok(mesh),
        (None, Ok(_)) => Ok(uniform),
        (None, Err(e)) => Err(graded_err.unwrap_or(e)),
    }
}
