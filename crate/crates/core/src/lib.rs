//! Spectral solver for initial-value problems of fractional differential
//! equations with Caputo derivative of order alpha in (ell-1, ell):
//!
//! y^(alpha)(t) = f(t, y(t)),  t in [0, T],  y^(i)(0) = y_0^i,  i < ell.
//!
//! The method is FHBVM(k, s): on each interval of a graded or uniform
//! partition the vector field is expanded in s orthonormal Jacobi polynomials
//! under the weight alpha (1-c)^(alpha-1), the Fourier coefficients are
//! closed by a k-point Gauss-Jacobi rule, and the fractional memory term is
//! carried exactly through precomputed lag integrals. With the default
//! (k, s) = (22, 20) the method reaches spectral accuracy: machine precision
//! on smooth benchmark problems within a handful of steps.
//!
//! ```no_run
//! use fhbvm::{solve, FdeProblem, SolverOptions};
//! use nalgebra::DVector;
//!
//! // y^(0.5) = -y, y(0) = 1 on [0, 2]
//! let problem = FdeProblem::new(
//!     0.5,
//!     vec![DVector::from_element(1, 1.0)],
//!     2.0,
//!     Box::new(|_t, y, f| f[0] = -y[0]),
//! )
//! .unwrap()
//! .with_jacobian(Box::new(|_t, _y, j| j[(0, 0)] = -1.0));
//!
//! let result = solve(&problem, 4, &SolverOptions::default()).unwrap();
//! println!("y(2) ~ {}", result.endpoints[(result.mesh.n_steps(), 0)]);
//! ```

pub mod basis;
pub mod error;
pub mod fracint;
pub mod mesh;
pub mod problems;
pub mod solver;
pub mod specfun;

pub use basis::{eval_poly_sequence, gauss_jacobi_rule, gauss_legendre_rule, jacobi_recurrence, JacobiRule};
pub use error::{Error, Result};
pub use fracint::{
    build_stage_tables, memory_kernel_integral, memory_kernel_row, rl_basis_integral, KernelPath,
    StageTables,
};
pub use mesh::{build_graded, build_uniform, select_mesh, Mesh, MeshKind};
pub use problems::{catalog, get_problem, mescd, residual_check, BenchmarkProblem, ProblemInfo};
pub use solver::{
    initial_polynomial, solve, step_endpoint, FdeProblem, FourierHistory, MeshSelect,
    SolveResult, SolveStats, Solver, SolverOptions, StageIteration,
};
pub use specfun::{gamma, gamma_ratio, log_gamma, mittag_leffler};

pub use nalgebra;
