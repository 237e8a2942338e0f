// temporary end-to-end check of the four benchmarks (removed before release)
use fhbvm::{get_problem, mescd, solve, MeshSelect, SolverOptions};
use nalgebra::DMatrix;

fn main() {
    for id in ["ex1", "ex2", "ex3", "ex4"] {
        for m in [2usize, 3, 4, 5] {
            let bp = get_problem(id, None).unwrap();
            let opts = SolverOptions {
                mesh: MeshSelect::Auto,
                error_estimate: true,
                ..Default::default()
            };
            let t0 = std::time::Instant::now();
            match solve(&bp.problem, m, &opts) {
                Ok(res) => {
                    let wall = t0.elapsed();
                    let nodes = res.mesh.nodes();
                    let mut reference = DMatrix::zeros(nodes.len(), bp.problem.dim());
                    for (n, &t) in nodes.iter().enumerate() {
                        reference
                            .row_mut(n)
                            .copy_from(&bp.problem.eval_exact(t).unwrap().transpose());
                    }
                    let score = mescd(&reference, &res.endpoints);
                    let max_err = res.max_abs_error(&bp.problem).unwrap();
                    let max_est = res.max_estimated_error().unwrap();
                    println!(
                        "{id} M={m}: mesh={:7} N={:3} mescd={score:6.2} max_err={max_err:9.2e} est={max_est:9.2e} est/err={:8.2} time={wall:?}",
                        res.mesh.kind().to_string(),
                        res.mesh.n_steps(),
                        max_est / max_err.max(1e-300),
                    );
                }
                Err(e) => println!("{id} M={m}: FAILED: {e}"),
            }
        }
    }
}
