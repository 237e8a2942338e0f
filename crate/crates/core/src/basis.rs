//! Orthonormal Jacobi polynomial basis for the weight
//! w(c) = alpha (1-c)^(alpha-1) on [0, 1], and Gauss quadrature on it.
//!
//! The weight has unit mass for every alpha > 0, so the orthonormal family
//! starts with P_0 = 1. Recurrence coefficients come from the closed-form
//! Jacobi(alpha-1, 0) recurrence mapped from [-1, 1] to [0, 1]; nodes are the
//! eigenvalues of the symmetric tridiagonal recurrence matrix (polished by two
//! Newton steps on P_k), and weights are the Christoffel numbers
//! 1 / sum_j P_j(c_i)^2. The same machinery with alpha = 1 yields the
//! Gauss-Legendre rule on [0, 1].

use crate::error::{Error, Result};
use nalgebra::DMatrix;
use std::sync::OnceLock;

/// Orthonormal Jacobi basis data for one (alpha, k) pair: recurrence
/// coefficients plus the k-point Gauss rule. Immutable once built; shared by
/// every step of a solve.
#[derive(Debug, Clone)]
pub struct JacobiRule {
    alpha: f64,
    k: usize,
    rec_a: Vec<f64>,
    rec_b: Vec<f64>,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl JacobiRule {
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Number of quadrature nodes.
    pub fn k(&self) -> usize {
        self.k
    }

    /// Nodes c_1 < ... < c_k, all inside (0, 1).
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Weights b_i > 0 with sum 1.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Diagonal recurrence coefficients (monic form).
    pub fn rec_a(&self) -> &[f64] {
        &self.rec_a
    }

    /// Off-diagonal recurrence coefficients (orthonormal form),
    /// `rec_b[0]` holds the square root of the weight's total mass (= 1).
    pub fn rec_b(&self) -> &[f64] {
        &self.rec_b
    }

    /// Highest degree the stored recurrence can evaluate.
    pub fn max_degree(&self) -> usize {
        self.rec_b.len() - 1
    }

    /// `[P_0(c), ..., P_{s-1}(c)]` by the forward three-term recurrence.
    /// Valid for any real c; memory integrals evaluate slightly beyond [0, 1].
    pub fn eval_sequence(&self, c: f64, s: usize) -> Result<Vec<f64>> {
        if s > self.max_degree() + 1 {
            return Err(Error::Domain(format!(
                "eval_sequence: s = {s} exceeds stored recurrence length {}",
                self.max_degree() + 1
            )));
        }
        let mut out = vec![0.0; s];
        self.eval_into(c, &mut out);
        Ok(out)
    }

    pub(crate) fn eval_into(&self, c: f64, out: &mut [f64]) {
        eval_seq_into(&self.rec_a, &self.rec_b, c, out);
    }
}

/// Recurrence coefficients of the orthonormal basis, valid up to degree
/// `n_max`. Returns `(rec_a, rec_b)`, both of length `n_max + 1`:
/// `b_{n+1} P_{n+1}(c) = (c - a_n) P_n(c) - b_n P_{n-1}(c)`, with
/// `rec_b[0] = 1` (square root of the unit total mass).
pub fn jacobi_recurrence(alpha: f64, n_max: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if !alpha.is_finite() || alpha <= 0.0 {
        return Err(Error::Domain(format!(
            "jacobi_recurrence requires alpha > 0, got {alpha}"
        )));
    }
    if n_max < 1 {
        return Err(Error::Domain("jacobi_recurrence requires n_max >= 1".into()));
    }
    // Jacobi(a, 0) with a = alpha - 1 on [-1, 1], shifted to [0, 1]:
    // diagonal (1 + nu_n) / 2, off-diagonal sqrt(beta_n) / 2.
    let a = alpha - 1.0;
    let mut rec_a = Vec::with_capacity(n_max + 1);
    let mut rec_b = Vec::with_capacity(n_max + 1);
    rec_a.push((1.0 - a / (a + 2.0)) / 2.0);
    rec_b.push(1.0);
    for n in 1..=n_max {
        let nf = n as f64;
        let nab = 2.0 * nf + a;
        rec_a.push((1.0 - a * a / (nab * (nab + 2.0))) / 2.0);
        let beta = if n == 1 {
            4.0 * (a + 1.0) / ((a + 2.0) * (a + 2.0) * (a + 3.0))
        } else {
            4.0 * (nf + a) * (nf + a) * nf * nf / (nab * nab * (nab + 1.0) * (nab - 1.0))
        };
        rec_b.push(beta.sqrt() / 2.0);
    }
    Ok((rec_a, rec_b))
}

fn eval_seq_into(rec_a: &[f64], rec_b: &[f64], c: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    out[0] = 1.0;
    let mut pm1 = 0.0;
    let mut p = 1.0;
    for n in 0..out.len() - 1 {
        let pp1 = ((c - rec_a[n]) * p - rec_b[n] * pm1) / rec_b[n + 1];
        pm1 = p;
        p = pp1;
        out[n + 1] = p;
    }
}

/// P_j(c) and its derivative, for Newton polishing of the nodes.
fn eval_with_deriv(rec_a: &[f64], rec_b: &[f64], c: f64, j: usize) -> (f64, f64) {
    let mut pm1 = 0.0;
    let mut p = 1.0;
    let mut dm1 = 0.0;
    let mut d = 0.0;
    for n in 0..j {
        let pp1 = ((c - rec_a[n]) * p - rec_b[n] * pm1) / rec_b[n + 1];
        let dp1 = (p + (c - rec_a[n]) * d - rec_b[n] * dm1) / rec_b[n + 1];
        pm1 = p;
        p = pp1;
        dm1 = d;
        d = dp1;
    }
    (p, d)
}

/// `[P_0(c), ..., P_{s-1}(c)]` for a constructed rule (free-function form of
/// [`JacobiRule::eval_sequence`]).
pub fn eval_poly_sequence(rule: &JacobiRule, c: f64, s: usize) -> Result<Vec<f64>> {
    rule.eval_sequence(c, s)
}

/// k-point Gauss-Jacobi rule for w(c) = alpha (1-c)^(alpha-1) on [0, 1]:
/// exact for polynomial degree <= 2k - 1 against the weight.
pub fn gauss_jacobi_rule(alpha: f64, k: usize) -> Result<JacobiRule> {
    if k < 1 {
        return Err(Error::Domain("gauss_jacobi_rule requires k >= 1".into()));
    }
    // +2 degrees of headroom so callers may evaluate P_{k+1}
    let (rec_a, rec_b) = jacobi_recurrence(alpha, k + 2)?;

    let mut nodes: Vec<f64> = if k == 1 {
        vec![rec_a[0]]
    } else {
        let tri = DMatrix::from_fn(k, k, |i, j| {
            if i == j {
                rec_a[i]
            } else if i + 1 == j || j + 1 == i {
                rec_b[i.max(j)]
            } else {
                0.0
            }
        });
        tri.symmetric_eigenvalues().iter().copied().collect()
    };
    nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());

    // two Newton steps on P_k sharpen the eigenvalues to full precision
    for c in nodes.iter_mut() {
        for _ in 0..2 {
            let (p, d) = eval_with_deriv(&rec_a, &rec_b, *c, k);
            if d != 0.0 && p.is_finite() {
                *c -= p / d;
            }
        }
        if !c.is_finite() {
            return Err(Error::Quadrature {
                k,
                reason: "node iteration produced a non-finite value".into(),
            });
        }
    }
    nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());

    // Christoffel numbers: b_i = 1 / sum_{j<k} P_j(c_i)^2 (total mass is 1)
    let mut weights = Vec::with_capacity(k);
    let mut buf = vec![0.0; k];
    for &c in &nodes {
        eval_seq_into(&rec_a, &rec_b, c, &mut buf);
        let s: f64 = buf.iter().map(|p| p * p).sum();
        weights.push(1.0 / s);
    }

    let rule = JacobiRule {
        alpha,
        k,
        rec_a,
        rec_b,
        nodes,
        weights,
    };
    validate_rule(&rule)?;
    Ok(rule)
}

fn validate_rule(rule: &JacobiRule) -> Result<()> {
    let bad = |reason: String| Error::Quadrature {
        k: rule.k,
        reason,
    };
    for w in rule.nodes.windows(2) {
        if !(w[0] < w[1]) {
            return Err(bad("nodes not strictly increasing".into()));
        }
    }
    if rule.nodes[0] <= 0.0 || *rule.nodes.last().unwrap() >= 1.0 {
        return Err(bad("nodes escaped the open interval (0, 1)".into()));
    }
    let mut sum = 0.0;
    for &w in &rule.weights {
        if !(w > 0.0) {
            return Err(bad("non-positive weight".into()));
        }
        sum += w;
    }
    if (sum - 1.0).abs() > 1e-13 {
        return Err(bad(format!("weights sum to {sum}, expected 1")));
    }
    Ok(())
}

/// k-point Gauss-Legendre rule on [0, 1]: exact for degree <= 2k - 1,
/// weights sum to 1. This is the alpha = 1 case of the Jacobi machinery.
pub fn gauss_legendre_rule(k: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let rule = gauss_jacobi_rule(1.0, k)?;
    Ok((rule.nodes, rule.weights))
}

/// Shared 24-point Legendre rule on [0, 1] used by the smooth-panel
/// quadratures in `fracint` and `specfun`.
pub(crate) fn legendre_24() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre_rule(24).expect("24-point Legendre rule"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::specfun;

    const ALPHAS: [f64; 5] = [0.25, 0.5, 1.25, 1.3, 1.5];

    /// Exact moment of the weight: Int_0^1 w(c) c^d dc
    /// = Gamma(d+1) Gamma(alpha+1) / Gamma(d+1+alpha).
    fn moment(alpha: f64, d: usize) -> f64 {
        (specfun::lgamma(d as f64 + 1.0) + specfun::lgamma(alpha + 1.0)
            - specfun::lgamma(d as f64 + 1.0 + alpha))
        .exp()
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(jacobi_recurrence(0.0, 5).is_err());
        assert!(jacobi_recurrence(-1.0, 5).is_err());
        assert!(jacobi_recurrence(1.0, 0).is_err());
        assert!(gauss_jacobi_rule(1.3, 0).is_err());
    }

    #[test]
    fn alpha_one_reproduces_shifted_legendre() {
        // shifted-Legendre closed form: a_n = 1/2, b_n = n / (2 sqrt(4n^2 - 1))
        let (rec_a, rec_b) = jacobi_recurrence(1.0, 24).unwrap();
        for n in 0..=24 {
            assert!((rec_a[n] - 0.5).abs() < 1e-15, "a_{n} = {}", rec_a[n]);
        }
        for n in 1..=24 {
            let nf = n as f64;
            let want = nf / (2.0 * (4.0 * nf * nf - 1.0).sqrt());
            assert!(
                (rec_b[n] - want).abs() < 1e-15,
                "b_{n} = {} want {want}",
                rec_b[n]
            );
        }
    }

    #[test]
    fn p0_is_one_everywhere() {
        for &alpha in &ALPHAS {
            let rule = gauss_jacobi_rule(alpha, 6).unwrap();
            for c in [-1.0, 0.0, 0.37, 1.0, 2.5] {
                assert_eq!(rule.eval_sequence(c, 1).unwrap()[0], 1.0);
            }
        }
    }

    #[test]
    fn degree_one_root_at_first_moment() {
        // alpha = 1/2: mean of the weight is 2/3, so P_1(2/3) = 0
        let rule = gauss_jacobi_rule(0.5, 4).unwrap();
        let p = rule.eval_sequence(2.0 / 3.0, 2).unwrap();
        assert!(p[1].abs() < 1e-14, "P_1(2/3) = {}", p[1]);
    }

    #[test]
    fn single_node_rule_is_the_mean() {
        for &alpha in &ALPHAS {
            let rule = gauss_jacobi_rule(alpha, 1).unwrap();
            assert!((rule.nodes()[0] - 1.0 / (alpha + 1.0)).abs() < 1e-15);
            assert!((rule.weights()[0] - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn weights_sum_to_one() {
        for &alpha in &ALPHAS {
            for k in [1, 2, 5, 13, 22] {
                let rule = gauss_jacobi_rule(alpha, k).unwrap();
                let s: f64 = rule.weights().iter().sum();
                assert!((s - 1.0).abs() < 1e-14, "alpha={alpha} k={k}: sum={s}");
            }
        }
    }

    #[test]
    fn moment_exactness_to_degree_2k_minus_1() {
        for &alpha in &ALPHAS {
            let rule = gauss_jacobi_rule(alpha, 22).unwrap();
            for d in 0..=43 {
                let q: f64 = rule
                    .nodes()
                    .iter()
                    .zip(rule.weights())
                    .map(|(&c, &b)| b * c.powi(d as i32))
                    .sum();
                let m = moment(alpha, d);
                assert!(
                    ((q - m) / m).abs() < 1e-12,
                    "alpha={alpha} d={d}: quad={q:e} moment={m:e}"
                );
            }
        }
    }

    #[test]
    fn high_degree_moment_frozen_value() {
        // alpha = 1.3, d = 43: Gamma(44) Gamma(2.3) / Gamma(45.3), 20-digit oracle
        let want = 0.0084832455167448952113;
        let rule = gauss_jacobi_rule(1.3, 22).unwrap();
        let q: f64 = rule
            .nodes()
            .iter()
            .zip(rule.weights())
            .map(|(&c, &b)| b * c.powi(43))
            .sum();
        assert!(((q - want) / want).abs() < 1e-12, "q = {q:e}");
    }

    #[test]
    fn orthonormality_under_quadrature() {
        for &alpha in &ALPHAS {
            let rule = gauss_jacobi_rule(alpha, 22).unwrap();
            let k = rule.k();
            let table: Vec<Vec<f64>> = rule
                .nodes()
                .iter()
                .map(|&c| rule.eval_sequence(c, k + 1).unwrap())
                .collect();
            for i in 0..=k {
                for j in 0..=k {
                    if i + j > 2 * k - 1 {
                        continue;
                    }
                    let mut v = 0.0;
                    for (q, &b) in rule.weights().iter().enumerate() {
                        v += b * table[q][i] * table[q][j];
                    }
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!(
                        (v - want).abs() < 1e-12,
                        "alpha={alpha} <P{i},P{j}> = {v}"
                    );
                }
            }
        }
    }

    #[test]
    fn roots_interlace() {
        for &alpha in &ALPHAS {
            let fine = gauss_jacobi_rule(alpha, 22).unwrap();
            let coarse = gauss_jacobi_rule(alpha, 21).unwrap();
            for (i, &x) in coarse.nodes().iter().enumerate() {
                assert!(
                    fine.nodes()[i] < x && x < fine.nodes()[i + 1],
                    "alpha={alpha}: root {i} fails to interlace"
                );
            }
        }
    }

    #[test]
    fn evaluation_stays_finite_on_extended_range() {
        for &alpha in &ALPHAS {
            let rule = gauss_jacobi_rule(alpha, 22).unwrap();
            let mut c = 0.0;
            while c <= 3.0 {
                let p = rule.eval_sequence(c, 23).unwrap();
                assert!(p.iter().all(|v| v.is_finite()), "alpha={alpha} c={c}");
                c += 0.25;
            }
        }
    }

    #[test]
    fn eval_sequence_rejects_excess_degree() {
        let rule = gauss_jacobi_rule(1.3, 4).unwrap();
        assert!(rule.eval_sequence(0.5, rule.max_degree() + 2).is_err());
    }

    #[test]
    fn legendre_small_rules_closed_form() {
        let (x, w) = gauss_legendre_rule(1).unwrap();
        assert!((x[0] - 0.5).abs() < 1e-15 && (w[0] - 1.0).abs() < 1e-15);

        let (x, w) = gauss_legendre_rule(2).unwrap();
        let d = 1.0 / (2.0 * 3.0f64.sqrt());
        assert!((x[0] - (0.5 - d)).abs() < 1e-15);
        assert!((x[1] - (0.5 + d)).abs() < 1e-15);
        assert!((w[0] - 0.5).abs() < 1e-15 && (w[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn legendre_moment_exactness() {
        for k in [3, 8, 16, 24] {
            let (x, w) = gauss_legendre_rule(k).unwrap();
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            for d in 0..2 * k {
                let q: f64 = x.iter().zip(&w).map(|(&c, &b)| b * c.powi(d as i32)).sum();
                let m = 1.0 / (d as f64 + 1.0);
                assert!(((q - m) / m).abs() < 1e-13, "k={k} d={d}");
            }
        }
    }
}
