//! Backend on the Clarabel interior-point solver.
//!
//! Rows become `A x + s = b` with `s` in the zero cone for equalities and
//! the nonnegative cone otherwise; lower bounds become extra rows.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};

use super::{LpBackend, LpError, LpProblem, LpSolution, LpStatus, Relation};

#[derive(Debug, Clone)]
pub struct Clarabel {
    pub max_iterations: u32,
    pub tol: f64,
}

impl Default for Clarabel {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            tol: 1e-9,
        }
    }
}

impl LpBackend for Clarabel {
    fn name(&self) -> &str {
        "clarabel"
    }

    fn solve(&self, problem: &LpProblem) -> Result<LpSolution, LpError> {
        let n = problem.num_vars();
        let rows = problem.constraints();
        // equalities first, as the cones are laid out in blocks
        let order: Vec<usize> = (0..rows.len())
            .filter(|&r| rows[r].relation == Relation::Eq)
            .chain((0..rows.len()).filter(|&r| rows[r].relation != Relation::Eq))
            .collect();
        let n_eq = order.iter().take_while(|&&r| rows[r].relation == Relation::Eq).count();

        let (mut ri, mut ci, mut vals, mut b) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (k, &r) in order.iter().enumerate() {
            // `>=` rows are negated into `<=` form
            let sign = if rows[r].relation == Relation::Ge { -1.0 } else { 1.0 };
            for &(v, c) in &rows[r].terms {
                ri.push(k);
                ci.push(v.0);
                vals.push(sign * c);
            }
            b.push(sign * rows[r].rhs);
        }
        for (j, var) in problem.variables().iter().enumerate() {
            if let Some(l) = var.lower {
                ri.push(b.len());
                ci.push(j);
                vals.push(-1.0);
                b.push(-l);
            }
        }
        let m = b.len();
        let a = CscMatrix::new_from_triplets(m, n, ri, ci, vals);
        let p = CscMatrix::zeros((n, n));
        let q: Vec<f64> = (0..n).map(|k| problem.objective_coef(super::VarId(k))).collect();
        let mut cones = Vec::new();
        if n_eq > 0 {
            cones.push(SupportedConeT::ZeroConeT(n_eq));
        }
        if m > n_eq {
            cones.push(SupportedConeT::NonnegativeConeT(m - n_eq));
        }
        let settings = DefaultSettingsBuilder::default()
            .verbose(false)
            .max_iter(self.max_iterations)
            .tol_gap_abs(self.tol)
            .tol_gap_rel(self.tol)
            .tol_feas(self.tol)
            .build()
            .map_err(|e| LpError::SolverFailure(format!("solver settings: {e}")))?;
        let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, settings)
            .map_err(|e| LpError::SolverFailure(format!("solver setup: {e}")))?;
        solver.solve();
        let sol = &solver.solution;
        let status = match sol.status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => LpStatus::Optimal,
            SolverStatus::PrimalInfeasible => LpStatus::Infeasible,
            SolverStatus::DualInfeasible => LpStatus::Unbounded,
            other => {
                return Err(LpError::SolverFailure(format!("clarabel stopped: {other:?}")));
            }
        };
        if status != LpStatus::Optimal {
            return Ok(LpSolution {
                status,
                x: Vec::new(),
                duals: Vec::new(),
                objective_value: f64::NAN,
            });
        }
        if sol.status == SolverStatus::AlmostSolved {
            log::debug!("clarabel reached reduced accuracy");
        }
        // sensitivity of the optimum to each original rhs
        let mut duals = vec![0.0; rows.len()];
        for (k, &r) in order.iter().enumerate() {
            duals[r] = if rows[r].relation == Relation::Ge { sol.z[k] } else { -sol.z[k] };
        }
        let x = sol.x.clone();
        Ok(LpSolution {
            status,
            objective_value: problem.objective_value(&x),
            x,
            duals,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_mixed_problem() {
        // min x + 2y  s.t.  x + y >= 1, x - y = 0.5, y >= 0
        let mut p = LpProblem::new();
        let x = p.add_free("x");
        let y = p.add_slack("y");
        p.set_objective(x, 1.0);
        p.set_objective(y, 2.0);
        p.add_constraint(vec![(x, 1.0), (y, 1.0)], Relation::Ge, 1.0);
        p.add_constraint(vec![(x, 1.0), (y, -1.0)], Relation::Eq, 0.5);
        let s = Clarabel::default().solve(&p).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.value(x) - 0.75).abs() < 1e-7);
        assert!((s.value(y) - 0.25).abs() < 1e-7);
        assert!((s.duals[0] - 1.5).abs() < 1e-6);
        assert!((s.duals[1] + 0.5).abs() < 1e-6);
    }

    #[test]
    fn infeasible_rows() {
        let mut p = LpProblem::new();
        let x = p.add_free("x");
        p.add_constraint(vec![(x, 1.0)], Relation::Ge, 1.0);
        p.add_constraint(vec![(x, 1.0)], Relation::Le, 0.0);
        assert_eq!(Clarabel::default().solve(&p).unwrap().status, LpStatus::Infeasible);
    }
}
