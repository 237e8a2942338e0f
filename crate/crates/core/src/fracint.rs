//! Riemann-Liouville integrals of the basis polynomials and the lag-dependent
//! memory-kernel integrals that couple a step to its past.
//!
//! Local integrals I^a P_j(c) reduce, via the substitution tau = c x, to the
//! Gauss-Jacobi rule itself and are therefore exact up to roundoff. The memory
//! integrals Int_0^1 (a - tau)^(alpha-1) P_j(tau) dtau carry a kernel
//! singularity at tau = a outside the interval; they are evaluated by
//! Gauss-Legendre panels sized so every panel keeps an analyticity margin of
//! at least its own length: a single panel once a >= 2, and panels doubling
//! away from the right endpoint for 1 < a < 2. All evaluation points stay
//! inside [0, 1], where the basis polynomials are well scaled.

use crate::basis::{self, JacobiRule};
use crate::error::{Error, Result};
use crate::mesh::{Mesh, MeshKind};
use nalgebra::{DMatrix, DVector};

/// Strategy for the memory-kernel quadrature, exposed so the two panel
/// layouts can be compared directly on the overlap near a = 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelPath {
    /// Panels doubling away from the right endpoint; valid for any a > 1.
    Clustered,
    /// One Gauss-Legendre panel on [0, 1]; spectrally converged for a >= ~1.5.
    SinglePanel,
}

/// I^a P_j(c) = (1/Gamma(a)) Int_0^c (c - tau)^(a-1) P_j(tau) dtau
/// for c in [0, 1], exact up to roundoff for j <= 2k - 1.
pub fn rl_basis_integral(rule: &JacobiRule, j: usize, c: f64) -> Result<f64> {
    let row = rl_basis_row(rule, c, j + 1)?;
    Ok(row[j])
}

/// `[I^a P_0(c), ..., I^a P_{s-1}(c)]` in one pass:
/// (c^a / Gamma(a+1)) sum_i b_i P_j(c c_i).
pub fn rl_basis_row(rule: &JacobiRule, c: f64, s: usize) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&c) {
        return Err(Error::Domain(format!(
            "rl_basis_row requires c in [0, 1], got {c} (use the memory kernel for shifted arguments)"
        )));
    }
    check_degree(rule, s)?;
    let mut acc = vec![0.0; s];
    if c == 0.0 {
        return Ok(acc);
    }
    let mut buf = vec![0.0; s];
    for (&ci, &bi) in rule.nodes().iter().zip(rule.weights()) {
        rule.eval_into(c * ci, &mut buf);
        for (a, p) in acc.iter_mut().zip(&buf) {
            *a += bi * p;
        }
    }
    let scale = c.powf(rule.alpha()) * (-crate::specfun::lgamma(rule.alpha() + 1.0)).exp();
    for a in acc.iter_mut() {
        *a *= scale;
    }
    Ok(acc)
}

/// Int_0^1 (a - tau)^(alpha-1) P_j(tau) dtau for a >= 1.
pub fn memory_kernel_integral(rule: &JacobiRule, a: f64, j: usize) -> Result<f64> {
    let row = memory_kernel_row(rule, a, j + 1)?;
    Ok(row[j])
}

/// All degrees below `s` of the memory-kernel integral in one pass.
pub fn memory_kernel_row(rule: &JacobiRule, a: f64, s: usize) -> Result<Vec<f64>> {
    let path = if a < 2.0 {
        KernelPath::Clustered
    } else {
        KernelPath::SinglePanel
    };
    memory_kernel_row_with(rule, a, s, path)
}

/// Memory-kernel row with an explicit panel layout.
pub fn memory_kernel_row_with(
    rule: &JacobiRule,
    a: f64,
    s: usize,
    path: KernelPath,
) -> Result<Vec<f64>> {
    if !a.is_finite() || a < 1.0 {
        return Err(Error::Domain(format!(
            "memory kernel requires a >= 1, got {a}"
        )));
    }
    check_degree(rule, s)?;
    if a == 1.0 {
        // Int_0^1 (1-tau)^(alpha-1) P_j = <P_j, P_0> / alpha = delta_j0 / alpha
        let mut row = vec![0.0; s];
        row[0] = 1.0 / rule.alpha();
        return Ok(row);
    }
    match path {
        KernelPath::Clustered => Ok(kernel_clustered(rule, a, s)),
        KernelPath::SinglePanel => Ok(kernel_panel(rule, a, s, 0.0, 1.0)),
    }
}

/// Panels in the distance variable delta = 1 - tau: [0, d], [d, 3d],
/// [3d, 7d], ... with d = a - 1, so the kernel singularity at delta = -d is
/// never closer than one panel length. Working in delta keeps a - tau = d +
/// delta additive, free of cancellation even for a barely above 1.
fn kernel_clustered(rule: &JacobiRule, a: f64, s: usize) -> Vec<f64> {
    let d = a - 1.0;
    let em1 = rule.alpha() - 1.0;
    let (gx, gw) = basis::legendre_24();
    let mut acc = vec![0.0; s];
    let mut buf = vec![0.0; s];
    let mut lo = 0.0f64;
    let mut hi = d.min(1.0);
    loop {
        let len = hi - lo;
        for (&x, &w) in gx.iter().zip(gw) {
            let delta = lo + len * x;
            let f = w * len * (d + delta).powf(em1);
            rule.eval_into(1.0 - delta, &mut buf);
            for (aj, p) in acc.iter_mut().zip(&buf) {
                *aj += f * p;
            }
        }
        if hi >= 1.0 {
            return acc;
        }
        lo = hi;
        hi = (2.0 * hi + d).min(1.0);
    }
}

fn kernel_panel(rule: &JacobiRule, a: f64, s: usize, lo: f64, hi: f64) -> Vec<f64> {
    let em1 = rule.alpha() - 1.0;
    let (gx, gw) = basis::legendre_24();
    let mut acc = vec![0.0; s];
    let mut buf = vec![0.0; s];
    let len = hi - lo;
    for (&x, &w) in gx.iter().zip(gw) {
        let tau = lo + len * x;
        let f = w * len * (a - tau).powf(em1);
        rule.eval_into(tau, &mut buf);
        for (aj, p) in acc.iter_mut().zip(&buf) {
            *aj += f * p;
        }
    }
    acc
}

fn check_degree(rule: &JacobiRule, s: usize) -> Result<()> {
    if s == 0 || s > rule.max_degree() + 1 {
        return Err(Error::Domain(format!(
            "degree count s = {s} outside 1..={}",
            rule.max_degree() + 1
        )));
    }
    Ok(())
}

/// Memory tables for one lag q = n - nu: the kernel rows at the quadrature
/// nodes and at c = 1, plus the kernel-argument map a = xi + c rho.
#[derive(Debug, Clone)]
pub struct LagTables {
    pub(crate) xi: f64,
    pub(crate) rho: f64,
    /// k x s, entry (i, j) = Int_0^1 (xi + c_i rho - tau)^(alpha-1) P_j(tau) dtau
    pub(crate) at_nodes: DMatrix<f64>,
    /// length s, same integral at c = 1
    pub(crate) at_one: DVector<f64>,
}

impl LagTables {
    pub fn at_nodes(&self) -> &DMatrix<f64> {
        &self.at_nodes
    }

    pub fn at_one(&self) -> &DVector<f64> {
        &self.at_one
    }

    /// Kernel-argument offset and slope: a(c) = xi + c rho.
    pub fn argument_map(&self) -> (f64, f64) {
        (self.xi, self.rho)
    }
}

/// Per-solve tensors shared by every step: basis values and fractional
/// integrals at the quadrature nodes, and the memory coefficient matrices for
/// every lag occurring in the mesh. Depend only on (alpha, k, s, mesh kind,
/// ratio, N) -- never on the horizon or the first step.
#[derive(Debug, Clone)]
pub struct StageTables {
    alpha: f64,
    s: usize,
    k: usize,
    mesh_kind: MeshKind,
    /// k x s, entry (i, j) = P_j(c_i)
    pub(crate) p_at_nodes: DMatrix<f64>,
    /// k x s, entry (i, j) = I^alpha P_j(c_i)
    pub(crate) frac_int_matrix: DMatrix<f64>,
    /// length s, I^alpha P_j(1) = delta_j0 / Gamma(alpha+1)
    pub(crate) frac_int_at_one: DVector<f64>,
    /// index q-1 holds the tables for lag q
    pub(crate) memory: Vec<LagTables>,
}

impl StageTables {
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn s(&self) -> usize {
        self.s
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn mesh_kind(&self) -> MeshKind {
        self.mesh_kind
    }

    pub fn p_at_nodes(&self) -> &DMatrix<f64> {
        &self.p_at_nodes
    }

    pub fn frac_int_matrix(&self) -> &DMatrix<f64> {
        &self.frac_int_matrix
    }

    pub fn frac_int_at_one(&self) -> &DVector<f64> {
        &self.frac_int_at_one
    }

    pub fn memory_mats(&self) -> &[LagTables] {
        &self.memory
    }
}

/// Build every table a solve on `mesh` will touch. Lag arguments follow the
/// mesh kind: graded uses xi_q = (r^q - 1)/(r - 1), rho_q = r^q; uniform uses
/// xi_q = q, rho_q = 1.
pub fn build_stage_tables(rule: &JacobiRule, s: usize, mesh: &Mesh) -> Result<StageTables> {
    let k = rule.k();
    if s < 1 || s > k {
        return Err(Error::Domain(format!(
            "truncation index s = {s} must satisfy 1 <= s <= k = {k}"
        )));
    }
    let nodes = rule.nodes();
    let mut p_at_nodes = DMatrix::zeros(k, s);
    let mut frac_int_matrix = DMatrix::zeros(k, s);
    let mut buf = vec![0.0; s];
    for (i, &c) in nodes.iter().enumerate() {
        rule.eval_into(c, &mut buf);
        for (j, &p) in buf.iter().enumerate() {
            p_at_nodes[(i, j)] = p;
        }
        let row = rl_basis_row(rule, c, s)?;
        for (j, &v) in row.iter().enumerate() {
            frac_int_matrix[(i, j)] = v;
        }
    }
    let frac_int_at_one = DVector::from_vec(rl_basis_row(rule, 1.0, s)?);

    let n_steps = mesh.n_steps();
    let r = mesh.ratio();
    let mut memory = Vec::with_capacity(n_steps.saturating_sub(1));
    let mut xi = 0.0;
    let mut rho = 1.0;
    for _q in 1..n_steps {
        match mesh.kind() {
            MeshKind::Graded => {
                // xi_q = xi_{q-1} + r^(q-1), rho_q = r^q
                xi += rho;
                rho *= r;
            }
            MeshKind::Uniform => {
                xi += 1.0;
                rho = 1.0;
            }
        }
        let mut at_nodes = DMatrix::zeros(k, s);
        for (i, &c) in nodes.iter().enumerate() {
            let row = memory_kernel_row(rule, xi + c * rho, s)?;
            for (j, &v) in row.iter().enumerate() {
                at_nodes[(i, j)] = v;
            }
        }
        let at_one = DVector::from_vec(memory_kernel_row(rule, xi + rho, s)?);
        memory.push(LagTables {
            xi,
            rho,
            at_nodes,
            at_one,
        });
    }

    Ok(StageTables {
        alpha: rule.alpha(),
        s,
        k,
        mesh_kind: mesh.kind(),
        p_at_nodes,
        frac_int_matrix,
        frac_int_at_one,
        memory,
    })
}
