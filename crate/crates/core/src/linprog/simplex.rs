//! Two-phase revised simplex applied to the dual of an inequality-form LP.
//!
//! A problem `min c'x  s.t.  G'x >= h`, `x` free, has the dual
//! `min -h'y  s.t.  G y = c, y >= 0`, whose row count equals the number of
//! primal variables. The basis inverse is kept dense with product-form
//! updates and periodic refactorization or iterative refinement. The primal
//! solution is read back from the simplex multipliers.

use nalgebra::DMatrix;

use super::{LpBackend, LpError, LpProblem, LpSolution, LpStatus, Relation, VarId};

const NONE: usize = usize::MAX;
const PIVOT_TOL: f64 = 1e-9;
const OPT_TOL: f64 = 1e-9;
const HARRIS_TOL: f64 = 1e-9;

/// Built-in LP backend.
#[derive(Debug, Clone)]
pub struct RevisedSimplex {
    /// Iteration cap; `None` picks one from the problem size.
    pub max_iterations: Option<usize>,
    /// Minimum pivots between refactorizations of the basis inverse; large
    /// bases wait at least `m / 2` pivots.
    pub refresh_every: usize,
    /// Accepted constraint violation relative to `1 + max |rhs|`.
    pub violation_tol: f64,
}

impl Default for RevisedSimplex {
    fn default() -> Self {
        Self {
            max_iterations: None,
            refresh_every: 100,
            violation_tol: 1e-7,
        }
    }
}

#[derive(Debug, Clone)]
struct SparseCol {
    idx: Vec<usize>,
    val: Vec<f64>,
}

enum StdOutcome {
    /// Multipliers of the standard-form rows and the objective value.
    Optimal {
        pi: Vec<f64>,
        y: Vec<f64>,
        objective: f64,
    },
    Infeasible,
    Unbounded,
}

impl RevisedSimplex {
    fn iteration_cap(&self, m: usize, n: usize) -> usize {
        self.max_iterations.unwrap_or(50 * (m + n) + 10_000)
    }

    /// Solve `min cost'y  s.t.  sum_j y_j cols_j = b, y >= 0`.
    fn solve_standard(
        &self,
        m: usize,
        cols: &[SparseCol],
        b: &[f64],
        cost: &[f64],
    ) -> Result<StdOutcome, LpError> {
        let mut s = Solver::new(m, cols, b, self.refresh_every.max(m / 2));
        let cap = self.iteration_cap(m, cols.len());

        let phase1: Vec<f64> = vec![0.0; cols.len()];
        match s.run(&phase1, true, cap)? {
            PhaseEnd::Optimal => {}
            PhaseEnd::Unbounded => {
                return Err(LpError::SolverFailure(
                    "phase one reported an unbounded ray".into(),
                ))
            }
        }
        let infeas: f64 = (0..m)
            .filter(|&k| s.basis[k] >= s.n)
            .map(|k| s.xb[k].max(0.0))
            .sum();
        let bscale = 1.0 + b.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if infeas > 1e-8 * bscale {
            return Ok(StdOutcome::Infeasible);
        }

        match s.run(cost, false, cap)? {
            PhaseEnd::Unbounded => Ok(StdOutcome::Unbounded),
            PhaseEnd::Optimal => {
                let objective = (0..m)
                    .filter(|&k| s.basis[k] < s.n)
                    .map(|k| cost[s.basis[k]] * s.xb[k])
                    .sum();
                let pi = (0..m).map(|k| s.flip[k] * s.pi[k]).collect();
                let y = (0..s.n)
                    .map(|j| if s.pos[j] == NONE { 0.0 } else { s.xb[s.pos[j]].max(0.0) })
                    .collect();
                Ok(StdOutcome::Optimal { pi, y, objective })
            }
        }
    }

    /// Decide whether `{x : G'x >= h}` is empty by searching for a Farkas
    /// certificate `y >= 0, G y = 0, h'y > 0`.
    fn primal_is_infeasible(
        &self,
        n: usize,
        cols: &[SparseCol],
        h: &[f64],
    ) -> Result<bool, LpError> {
        let mut aug = Vec::with_capacity(cols.len());
        for c in cols {
            let mut c = c.clone();
            c.idx.push(n);
            c.val.push(1.0);
            aug.push(c);
        }
        let mut b = vec![0.0; n + 1];
        b[n] = 1.0;
        let cost: Vec<f64> = h.iter().map(|v| -v).collect();
        match self.solve_standard(n + 1, &aug, &b, &cost)? {
            StdOutcome::Infeasible => Ok(false),
            StdOutcome::Optimal { objective, .. } => {
                let hscale = 1.0 + h.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                Ok(-objective > 1e-9 * hscale)
            }
            StdOutcome::Unbounded => Err(LpError::SolverFailure(
                "Farkas subproblem is unbounded".into(),
            )),
        }
    }
}

impl LpBackend for RevisedSimplex {
    fn name(&self) -> &str {
        "builtin"
    }

    fn solve(&self, problem: &LpProblem) -> Result<LpSolution, LpError> {
        let n = problem.num_vars();
        let mut cols = Vec::new();
        let mut h = Vec::new();
        // constraint each column came from, with its sign
        let mut origin: Vec<Option<(usize, f64)>> = Vec::new();
        let mut push = |terms: &[(VarId, f64)], sign: f64, rhs: f64, from| {
            cols.push(SparseCol {
                idx: terms.iter().map(|t| t.0 .0).collect(),
                val: terms.iter().map(|t| sign * t.1).collect(),
            });
            h.push(sign * rhs);
            origin.push(from);
        };
        for (r, c) in problem.constraints().iter().enumerate() {
            match c.relation {
                Relation::Ge => push(&c.terms, 1.0, c.rhs, Some((r, 1.0))),
                Relation::Le => push(&c.terms, -1.0, c.rhs, Some((r, -1.0))),
                Relation::Eq => {
                    push(&c.terms, 1.0, c.rhs, Some((r, 1.0)));
                    push(&c.terms, -1.0, c.rhs, Some((r, -1.0)));
                }
            }
        }
        for (k, v) in problem.variables().iter().enumerate() {
            if let Some(l) = v.lower {
                push(&[(VarId(k), 1.0)], 1.0, l, None);
            }
        }

        if n == 0 {
            let feasible = h.iter().all(|&v| v <= 0.0);
            return Ok(LpSolution {
                status: if feasible {
                    LpStatus::Optimal
                } else {
                    LpStatus::Infeasible
                },
                x: Vec::new(),
                duals: vec![0.0; problem.num_constraints()],
                objective_value: 0.0,
            });
        }

        let c: Vec<f64> = (0..n).map(|k| problem.objective_coef(VarId(k))).collect();
        let cost: Vec<f64> = h.iter().map(|v| -v).collect();
        let status_only = |status| LpSolution {
            status,
            x: Vec::new(),
            duals: Vec::new(),
            objective_value: f64::NAN,
        };
        match self.solve_standard(n, &cols, &c, &cost)? {
            StdOutcome::Unbounded => Ok(status_only(LpStatus::Infeasible)),
            StdOutcome::Infeasible => {
                if self.primal_is_infeasible(n, &cols, &h)? {
                    Ok(status_only(LpStatus::Infeasible))
                } else {
                    Ok(status_only(LpStatus::Unbounded))
                }
            }
            StdOutcome::Optimal { pi, y, .. } => {
                let x: Vec<f64> = pi.iter().map(|v| -v).collect();
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(LpError::SolverFailure("non-finite solution".into()));
                }
                let scale = 1.0
                    + problem
                        .constraints()
                        .iter()
                        .fold(0.0f64, |a, r| a.max(r.rhs.abs()));
                let viol = problem.max_violation(&x);
                if !(viol <= self.violation_tol * scale) {
                    return Err(LpError::SolverFailure(format!(
                        "solution violates constraints by {viol:.3e}"
                    )));
                }
                let mut duals = vec![0.0; problem.num_constraints()];
                for (yj, o) in y.iter().zip(&origin) {
                    if let Some((r, sign)) = *o {
                        duals[r] += sign * yj;
                    }
                }
                Ok(LpSolution {
                    status: LpStatus::Optimal,
                    objective_value: problem.objective_value(&x),
                    x,
                    duals,
                })
            }
        }
    }
}

enum PhaseEnd {
    Optimal,
    Unbounded,
}

/// Working state over `n` structural columns and `m` artificial columns.
struct Solver {
    m: usize,
    n: usize,
    cols: Vec<SparseCol>,
    flip: Vec<f64>,
    b: Vec<f64>,
    cost: Vec<f64>,
    /// Basis inverse, column-major: entry (row k, col i) at `i * m + k`.
    binv: Vec<f64>,
    basis: Vec<usize>,
    pos: Vec<usize>,
    xb: Vec<f64>,
    pi: Vec<f64>,
    refresh_every: usize,
    iters: usize,
}

impl Solver {
    fn new(m: usize, cols: &[SparseCol], b: &[f64], refresh_every: usize) -> Self {
        let n = cols.len();
        let flip: Vec<f64> = b
            .iter()
            .map(|&v| if v < 0.0 { -1.0 } else { 1.0 })
            .collect();
        let cols = cols
            .iter()
            .map(|c| SparseCol {
                idx: c.idx.clone(),
                val: c.idx.iter().zip(&c.val).map(|(&i, &v)| flip[i] * v).collect(),
            })
            .collect();
        let b: Vec<f64> = b.iter().map(|v| v.abs()).collect();
        let mut binv = vec![0.0; m * m];
        for k in 0..m {
            binv[k * m + k] = 1.0;
        }
        let mut pos = vec![NONE; n + m];
        for k in 0..m {
            pos[n + k] = k;
        }
        Self {
            m,
            n,
            cols,
            flip,
            xb: b.clone(),
            b,
            cost: vec![0.0; n + m],
            binv,
            basis: (n..n + m).collect(),
            pos,
            pi: vec![0.0; m],
            refresh_every: refresh_every.max(1),
            iters: 0,
        }
    }

    fn for_col(&self, j: usize, mut f: impl FnMut(usize, f64)) {
        if j < self.n {
            let c = &self.cols[j];
            for (&i, &v) in c.idx.iter().zip(&c.val) {
                f(i, v);
            }
        } else {
            f(j - self.n, 1.0);
        }
    }

    fn dot_pi(&self, j: usize) -> f64 {
        let mut s = 0.0;
        self.for_col(j, |i, v| s += self.pi[i] * v);
        s
    }

    fn ftran(&self, j: usize, d: &mut [f64]) {
        d.fill(0.0);
        let m = self.m;
        self.for_col(j, |i, v| {
            let col = &self.binv[i * m..(i + 1) * m];
            for (dk, bk) in d.iter_mut().zip(col) {
                *dk += v * bk;
            }
        });
    }

    fn compute_pi(&mut self) {
        let m = self.m;
        for i in 0..m {
            let col = &self.binv[i * m..(i + 1) * m];
            self.pi[i] = (0..m).map(|k| self.cost[self.basis[k]] * col[k]).sum();
        }
    }

    fn compute_xb(&mut self) {
        let m = self.m;
        self.xb.fill(0.0);
        for i in 0..m {
            let bi = self.b[i];
            if bi != 0.0 {
                let col = &self.binv[i * m..(i + 1) * m];
                for (x, c) in self.xb.iter_mut().zip(col) {
                    *x += bi * c;
                }
            }
        }
    }

    fn refactor(&mut self) -> Result<(), LpError> {
        let m = self.m;
        let mut bmat = DMatrix::<f64>::zeros(m, m);
        for k in 0..m {
            self.for_col(self.basis[k], |i, v| bmat[(i, k)] = v);
        }
        let inv = bmat
            .lu()
            .try_inverse()
            .filter(|m| m.iter().all(|v| v.is_finite()))
            .ok_or_else(|| LpError::SolverFailure("basis matrix became singular".into()))?;
        self.binv.copy_from_slice(inv.as_slice());
        self.compute_xb();
        self.compute_pi();
        Ok(())
    }

    fn refresh(&mut self) -> Result<(), LpError> {
        self.refactor()
    }

    /// Entering column, or `None` at optimality.
    fn price(&self, bland: bool) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for j in 0..self.n {
            if self.pos[j] != NONE {
                continue;
            }
            let rc = self.cost[j] - self.dot_pi(j);
            if rc < -OPT_TOL {
                if bland {
                    return Some((j, rc));
                }
                if best.map_or(true, |(_, b)| rc < b) {
                    best = Some((j, rc));
                }
            }
        }
        best
    }

    /// Leaving row and whether it is a forced artificial exit.
    fn ratio(&self, d: &[f64], phase1: bool, bland: bool) -> Option<(usize, bool)> {
        if !phase1 {
            let mut best: Option<(usize, f64)> = None;
            for k in 0..self.m {
                if self.basis[k] >= self.n
                    && d[k].abs() > PIVOT_TOL
                    && best.map_or(true, |(_, v)| d[k].abs() > v)
                {
                    best = Some((k, d[k].abs()));
                }
            }
            if let Some((k, _)) = best {
                return Some((k, true));
            }
        }
        if bland {
            let mut best: Option<(usize, f64)> = None;
            for k in 0..self.m {
                if d[k] > PIVOT_TOL {
                    let t = self.xb[k].max(0.0) / d[k];
                    let better = match best {
                        None => true,
                        Some((bk, bt)) => {
                            t < bt - 1e-12 || (t <= bt + 1e-12 && self.basis[k] < self.basis[bk])
                        }
                    };
                    if better {
                        best = Some((k, t));
                    }
                }
            }
            return best.map(|(k, _)| (k, false));
        }
        let mut theta_max = f64::INFINITY;
        for k in 0..self.m {
            if d[k] > PIVOT_TOL {
                theta_max = theta_max.min((self.xb[k].max(0.0) + HARRIS_TOL) / d[k]);
            }
        }
        if theta_max.is_infinite() {
            return None;
        }
        let mut best: Option<(usize, f64)> = None;
        for k in 0..self.m {
            if d[k] > PIVOT_TOL
                && self.xb[k].max(0.0) / d[k] <= theta_max
                && best.map_or(true, |(_, v)| d[k] > v)
            {
                best = Some((k, d[k]));
            }
        }
        best.map(|(k, _)| (k, false))
    }

    fn pivot(&mut self, q: usize, r: usize, d: &[f64], rc: f64, forced: bool) -> f64 {
        let m = self.m;
        let theta = if forced {
            0.0
        } else {
            self.xb[r].max(0.0) / d[r]
        };
        for k in 0..m {
            if k != r {
                self.xb[k] -= theta * d[k];
            }
        }
        self.xb[r] = theta;

        let nz: Vec<usize> = (0..m).filter(|&k| k != r && d[k] != 0.0).collect();
        let dr = d[r];
        for i in 0..m {
            let col = &mut self.binv[i * m..(i + 1) * m];
            let t = col[r] / dr;
            col[r] = t;
            if t != 0.0 {
                for &k in &nz {
                    col[k] -= d[k] * t;
                }
            }
            self.pi[i] += rc * t;
        }

        let out = self.basis[r];
        self.pos[out] = NONE;
        self.basis[r] = q;
        self.pos[q] = r;
        theta
    }

    fn run(&mut self, cost: &[f64], phase1: bool, cap: usize) -> Result<PhaseEnd, LpError> {
        for j in 0..self.n {
            self.cost[j] = cost[j];
        }
        for j in self.n..self.n + self.m {
            self.cost[j] = if phase1 { 1.0 } else { 0.0 };
        }
        self.compute_pi();

        let mut d = vec![0.0; self.m];
        let mut since_refresh = 0usize;
        let mut fresh = false;
        let mut degenerate_run = 0usize;
        let bland_after = self.m.max(100);
        loop {
            if self.iters >= cap {
                return Err(LpError::SolverFailure(format!(
                    "iteration limit {cap} reached"
                )));
            }
            if since_refresh >= self.refresh_every {
                self.refresh()?;
                since_refresh = 0;
                fresh = true;
            }
            let bland = degenerate_run > bland_after;
            let Some((q, rc)) = self.price(bland) else {
                if fresh {
                    return Ok(PhaseEnd::Optimal);
                }
                self.refresh()?;
                since_refresh = 0;
                fresh = true;
                continue;
            };
            self.ftran(q, &mut d);
            let Some((r, forced)) = self.ratio(&d, phase1, bland) else {
                if phase1 || !fresh {
                    if !fresh {
                        self.refresh()?;
                        since_refresh = 0;
                        fresh = true;
                        continue;
                    }
                    return Ok(PhaseEnd::Unbounded);
                }
                return Ok(PhaseEnd::Unbounded);
            };
            let theta = self.pivot(q, r, &d, rc, forced);
            self.iters += 1;
            since_refresh += 1;
            fresh = false;
            if theta <= 1e-12 {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solve(p: &LpProblem) -> LpSolution {
        RevisedSimplex::default().solve(p).unwrap()
    }

    #[test]
    fn textbook_maximization() {
        // max 3x + 5y s.t. x <= 4, 2y <= 12, 3x + 2y <= 18, x,y >= 0
        let mut p = LpProblem::new();
        let x = p.add_var("x", Some(0.0));
        let y = p.add_var("y", Some(0.0));
        p.set_objective(x, -3.0);
        p.set_objective(y, -5.0);
        p.add_constraint(vec![(x, 1.0)], Relation::Le, 4.0);
        p.add_constraint(vec![(y, 2.0)], Relation::Le, 12.0);
        p.add_constraint(vec![(x, 3.0), (y, 2.0)], Relation::Le, 18.0);
        let s = solve(&p);
        assert!(s.is_optimal());
        assert!((s.objective_value + 36.0).abs() < 1e-9);
        assert!((s.value(x) - 2.0).abs() < 1e-9);
        assert!((s.value(y) - 6.0).abs() < 1e-9);
    }

    #[test]
    fn empty_row_with_positive_rhs_is_infeasible() {
        let mut p = LpProblem::new();
        let x = p.add_free("x");
        p.add_constraint(vec![(x, 0.0)], Relation::Ge, 1.0);
        assert_eq!(solve(&p).status, LpStatus::Infeasible);
    }

    #[test]
    fn feasibility_problem_without_objective() {
        let mut p = LpProblem::new();
        let x = p.add_free("x");
        let y = p.add_free("y");
        p.add_constraint(vec![(x, 1.0), (y, 1.0)], Relation::Ge, 1.0);
        p.add_constraint(vec![(x, 1.0), (y, -1.0)], Relation::Eq, 0.5);
        let s = solve(&p);
        assert!(s.is_optimal());
        assert!(p.max_violation(&s.x) < 1e-9);
    }

    #[test]
    fn infeasible_and_unbounded_distinguished() {
        // x >= 1, x <= 0 and an unrelated unbounded direction in y
        let mut p = LpProblem::new();
        let x = p.add_free("x");
        let y = p.add_free("y");
        p.set_objective(y, 1.0);
        p.add_constraint(vec![(x, 1.0)], Relation::Ge, 1.0);
        p.add_constraint(vec![(x, 1.0)], Relation::Le, 0.0);
        assert_eq!(solve(&p).status, LpStatus::Infeasible);
    }

    #[test]
    fn degenerate_vertex() {
        // many rows through the optimum at the origin
        let mut p = LpProblem::new();
        let x = p.add_free("x");
        let y = p.add_free("y");
        p.set_objective(x, 1.0);
        p.set_objective(y, 1.0);
        for k in 0..20 {
            let a = (k as f64) * 0.05;
            p.add_constraint(vec![(x, a), (y, 1.0 - a)], Relation::Ge, 0.0);
        }
        p.add_constraint(vec![(x, 1.0)], Relation::Ge, 0.0);
        p.add_constraint(vec![(y, 1.0)], Relation::Ge, 0.0);
        let s = solve(&p);
        assert!(s.is_optimal());
        assert!(s.objective_value.abs() < 1e-9);
    }

    #[test]
    fn no_variables() {
        let mut p = LpProblem::new();
        p.add_constraint(vec![], Relation::Ge, -1.0);
        assert!(solve(&p).is_optimal());
        p.add_constraint(vec![], Relation::Ge, 1.0);
        assert_eq!(solve(&p).status, LpStatus::Infeasible);
    }
}
