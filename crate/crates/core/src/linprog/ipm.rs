//! Primal-dual interior-point method with Mehrotra's predictor-corrector.
//!
//! Works on `min c'x` over free `x` with rows `a'x >= b` or `a'x = b`.
//! Each Newton step solves the augmented system
//! `[-D⁻¹, A; A', 0] [-dy; dx] = r` with `D⁻¹ = s / y` on inequality rows and
//! zero on equalities. Small static regularization makes the matrix
//! quasidefinite, so a sparse LDLᵀ with a fill-reducing ordering factors it
//! without pivoting, linearly dependent equalities included. Iterative
//! refinement against the unregularized matrix recovers the accuracy.
//!
//! The method does not classify infeasible or unbounded problems; it reports
//! non-convergence instead.

use super::sparse::{Ldl, SymPattern};
use super::{LpBackend, LpError, LpProblem, LpSolution, LpStatus, Relation};

const REG_PRIMAL: f64 = 1e-8;
const REG_DUAL: f64 = 1e-8;
/// Pivots with the wrong sign or below `PIVOT_EPS` are replaced by `±PIVOT_REG`.
const PIVOT_EPS: f64 = 1e-13;
const PIVOT_REG: f64 = 1e-7;
const STEP_FRACTION: f64 = 0.995;
const DIVERGENCE: f64 = 1e14;
const REFINE_STEPS: usize = 8;
const REFINE_TOL: f64 = 1e-14;
const SHORT_STEP: f64 = 0.1;
const CENTERING: f64 = 0.3;

/// Sparse interior-point backend for large problems.
#[derive(Debug, Clone)]
pub struct InteriorPoint {
    pub max_iterations: usize,
    /// Relative primal, dual and gap tolerance.
    pub tol: f64,
    /// Looser tolerance for the best iterate when progress stalls.
    pub accept_tol: f64,
}

impl Default for InteriorPoint {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            tol: 1e-9,
            accept_tol: 1e-6,
        }
    }
}

/// Rows in compressed form.
#[derive(Debug, Default, Clone)]
struct RowSet {
    ptr: Vec<usize>,
    idx: Vec<usize>,
    val: Vec<f64>,
    rhs: Vec<f64>,
}

impl RowSet {
    fn new() -> Self {
        Self {
            ptr: vec![0],
            ..Self::default()
        }
    }

    fn len(&self) -> usize {
        self.rhs.len()
    }

    fn push(&mut self, terms: impl Iterator<Item = (usize, f64)>, rhs: f64) {
        for (j, v) in terms {
            self.idx.push(j);
            self.val.push(v);
        }
        self.ptr.push(self.idx.len());
        self.rhs.push(rhs);
    }

    fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.ptr[r]..self.ptr[r + 1];
        self.idx[span.clone()]
            .iter()
            .copied()
            .zip(self.val[span].iter().copied())
    }

    fn mul(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            *o = self.row(r).map(|(j, v)| v * x[j]).sum();
        }
    }

    /// `out += A' y`
    fn mul_t_add(&self, y: &[f64], out: &mut [f64]) {
        for (r, &yr) in y.iter().enumerate() {
            if yr != 0.0 {
                for (j, v) in self.row(r) {
                    out[j] += v * yr;
                }
            }
        }
    }
}

/// Where a scaled row came from; `sign` is -1 for `<=` rows.
#[derive(Debug, Clone, Copy)]
enum Origin {
    Row { index: usize, sign: f64, scale: f64 },
    Bound,
}

struct Prepared {
    n: usize,
    c: Vec<f64>,
    rows: RowSet,
    /// Equality rows carry no slack and a free multiplier.
    eq: Vec<bool>,
    origin: Vec<Origin>,
}

enum Prep {
    Ready(Prepared),
    TriviallyInfeasible,
}

fn prepare(problem: &LpProblem) -> Prep {
    let n = problem.num_vars();
    let c: Vec<f64> = (0..n)
        .map(|k| problem.objective_coef(super::VarId(k)))
        .collect();
    let mut rows = RowSet::new();
    let mut eq = Vec::new();
    let mut origin = Vec::new();
    for (index, row) in problem.constraints().iter().enumerate() {
        let scale = row.terms.iter().fold(0.0f64, |a, t| a.max(t.1.abs()));
        if scale == 0.0 {
            let ok = match row.relation {
                Relation::Ge => row.rhs <= 0.0,
                Relation::Le => row.rhs >= 0.0,
                Relation::Eq => row.rhs == 0.0,
            };
            if !ok {
                return Prep::TriviallyInfeasible;
            }
            continue;
        }
        let sign = if row.relation == Relation::Le { -1.0 } else { 1.0 };
        rows.push(
            row.terms.iter().map(|t| (t.0 .0, sign * t.1 / scale)),
            sign * row.rhs / scale,
        );
        eq.push(row.relation == Relation::Eq);
        origin.push(Origin::Row { index, sign, scale });
    }
    for (j, v) in problem.variables().iter().enumerate() {
        if let Some(l) = v.lower {
            rows.push(std::iter::once((j, 1.0)), l);
            eq.push(false);
            origin.push(Origin::Bound);
        }
    }
    Prep::Ready(Prepared {
        n,
        c,
        rows,
        eq,
        origin,
    })
}

/// Augmented Newton matrix `[-D⁻¹ - ρI, A; A', δI]`: pattern, value layout
/// and factorization. Row unknowns come first.
struct Newton {
    ldl: Ldl,
    m: usize,
    values: Vec<f64>,
    diag_pos: Vec<usize>,
    /// Pivots replaced during the last factorization.
    fixed: usize,
}

impl Newton {
    fn new(p: &Prepared) -> Self {
        let m = p.rows.len();
        let pairs = (0..m).flat_map(|r| p.rows.row(r).map(move |(j, _)| (r, m + j)));
        let pattern = SymPattern::from_pairs(m + p.n, pairs);
        let mut values = vec![0.0; pattern.nnz()];
        for r in 0..m {
            for (j, v) in p.rows.row(r) {
                values[pattern.position(r, m + j).expect("entry in pattern")] += v;
                values[pattern.position(m + j, r).expect("entry in pattern")] += v;
            }
        }
        let diag_pos = (0..m + p.n)
            .map(|k| pattern.position(k, k).expect("diagonal in pattern"))
            .collect();
        Self {
            ldl: Ldl::analyse(pattern),
            m,
            values,
            diag_pos,
            fixed: 0,
        }
    }

    fn factor(&mut self, dinv: &[f64]) -> Result<(), LpError> {
        let m = self.m;
        for (k, &pos) in self.diag_pos.iter().enumerate() {
            self.values[pos] = if k < m { -dinv[k] - REG_DUAL } else { REG_PRIMAL };
        }
        let mut fixed = 0;
        let r = self.ldl.factor(&self.values, |k, dk| {
            let sign = if k < m { -1.0 } else { 1.0 };
            if sign * dk > PIVOT_EPS {
                dk
            } else {
                fixed += 1;
                sign * PIVOT_REG
            }
        });
        self.fixed = fixed;
        r.map_err(|e| LpError::SolverFailure(format!("zero pivot in column {}", e.0)))
    }

    /// Solve `[-D⁻¹, A; A', 0] [u; v] = [r1; r2]`, refining against the
    /// unregularized matrix.
    fn solve(&self, p: &Prepared, dinv: &[f64], r1: &[f64], r2: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let m = self.m;
        let rhs: Vec<f64> = r1.iter().chain(r2).copied().collect();
        let mut sol = rhs.clone();
        self.ldl.solve(&mut sol);
        let target = REFINE_TOL * (1.0 + inf_norm(&rhs));
        let mut last = f64::INFINITY;
        let mut top = vec![0.0; m];
        for _ in 0..REFINE_STEPS {
            let (u, v) = sol.split_at(m);
            p.rows.mul(v, &mut top);
            let mut bottom = vec![0.0; p.n];
            p.rows.mul_t_add(u, &mut bottom);
            let mut corr: Vec<f64> = (0..m)
                .map(|r| rhs[r] - (top[r] - dinv[r] * u[r]))
                .chain((0..p.n).map(|j| rhs[m + j] - bottom[j]))
                .collect();
            let err = inf_norm(&corr);
            if err <= target || err >= 0.5 * last {
                break;
            }
            last = err;
            self.ldl.solve(&mut corr);
            for (a, c) in sol.iter_mut().zip(&corr) {
                *a += c;
            }
        }
        let v = sol.split_off(m);
        (sol, v)
    }
}

#[derive(Clone)]
struct Iterate {
    x: Vec<f64>,
    /// Row slacks; zero on equality rows.
    s: Vec<f64>,
    y: Vec<f64>,
}

/// Max norm; infinite if any entry is NaN.
fn inf_norm(v: &[f64]) -> f64 {
    v.iter()
        .fold(0.0, |a, x| if x.is_nan() { f64::INFINITY } else { a.max(x.abs()) })
}

/// Largest step in `[0, 1]` keeping `v + t dv > 0` on the listed rows.
fn max_step(rows: &[usize], v: &[f64], dv: &[f64]) -> f64 {
    rows.iter()
        .filter(|&&r| dv[r] < 0.0)
        .fold(1.0f64, |a, &r| a.min(-v[r] / dv[r]))
}

/// Least-squares primal and dual points shifted into the positive orthant.
fn starting_point(p: &Prepared, ineq: &[usize], newton: &mut Newton) -> Result<Iterate, LpError> {
    let m = p.rows.len();
    let dinv: Vec<f64> = p.eq.iter().map(|&e| if e { 0.0 } else { 1.0 }).collect();
    newton.factor(&dinv)?;

    // least-squares x for A x = b, then a least-norm y with A'y = c
    let (u, x) = newton.solve(p, &dinv, &p.rows.rhs, &vec![0.0; p.n]);
    let mut s: Vec<f64> = (0..m).map(|r| if p.eq[r] { 0.0 } else { u[r] }).collect();
    let (mut y, _) = newton.solve(p, &dinv, &vec![0.0; m], &p.c);

    let shift = |v: &mut [f64]| {
        let lo = ineq.iter().fold(f64::INFINITY, |a, &r| a.min(v[r]));
        let d = (-1.5 * lo).max(0.0);
        ineq.iter().for_each(|&r| v[r] += d);
    };
    shift(&mut s);
    shift(&mut y);
    let sy: f64 = ineq.iter().map(|&r| s[r] * y[r]).sum();
    if sy > 0.0 {
        let ds = 0.5 * sy / ineq.iter().map(|&r| y[r]).sum::<f64>();
        let dy = 0.5 * sy / ineq.iter().map(|&r| s[r]).sum::<f64>();
        for &r in ineq {
            s[r] += ds;
            y[r] += dy;
        }
    } else {
        for &r in ineq {
            s[r] = s[r].max(1.0);
            y[r] = y[r].max(1.0);
        }
    }
    Ok(Iterate { x, s, y })
}

/// Residual measures of an iterate.
struct Residuals {
    r_p: Vec<f64>,
    r_d: Vec<f64>,
    mu: f64,
    /// Worst of the relative primal, dual and gap measures.
    error: f64,
}

fn residuals(p: &Prepared, ineq: &[usize], it: &Iterate, bscale: f64, cscale: f64) -> Residuals {
    let m = p.rows.len();
    let mut r_p = vec![0.0; m];
    p.rows.mul(&it.x, &mut r_p);
    for r in 0..m {
        r_p[r] = p.rows.rhs[r] - r_p[r] + it.s[r];
    }
    let mut aty = vec![0.0; p.n];
    p.rows.mul_t_add(&it.y, &mut aty);
    let r_d: Vec<f64> = p.c.iter().zip(&aty).map(|(c, a)| c - a).collect();
    let sy: f64 = ineq.iter().map(|&r| it.s[r] * it.y[r]).sum();
    let mu = if ineq.is_empty() { 0.0 } else { sy / ineq.len() as f64 };
    let pobj: f64 = p.c.iter().zip(&it.x).map(|(c, x)| c * x).sum();
    let pinf = inf_norm(&r_p) / bscale;
    let dinf = inf_norm(&r_d) / cscale;
    // complementarity gap; with small residuals it bounds the duality gap
    let gap = sy / (1.0 + pobj.abs());
    log::trace!("ipm pinf {pinf:.2e} dinf {dinf:.2e} gap {gap:.2e} obj {pobj:.9e}");
    Residuals {
        r_p,
        r_d,
        mu,
        error: pinf.max(dinf).max(gap),
    }
}

struct Direction {
    dx: Vec<f64>,
    ds: Vec<f64>,
    dy: Vec<f64>,
}

impl InteriorPoint {
    fn run(&self, p: &Prepared) -> Result<Iterate, LpError> {
        let m = p.rows.len();
        let ineq: Vec<usize> = (0..m).filter(|&r| !p.eq[r]).collect();
        let mut newton = Newton::new(p);
        log::trace!(
            "interior point: {} vars, {m} rows, factor nnz {}",
            p.n,
            newton.ldl.factor_nnz()
        );

        let bscale = 1.0 + inf_norm(&p.rows.rhs);
        let cscale = 1.0 + inf_norm(&p.c);
        let mut it = starting_point(p, &ineq, &mut newton)?;
        let mut best: Option<(f64, Iterate)> = None;

        for _ in 0..self.max_iterations {
            let res = residuals(p, &ineq, &it, bscale, cscale);
            if res.error <= self.tol {
                return Ok(it);
            }
            if best.as_ref().map_or(true, |(e, _)| res.error < *e) {
                best = Some((res.error, it.clone()));
            }
            let size = inf_norm(&it.x).max(inf_norm(&it.y));
            let collapsed = !ineq.is_empty() && res.mu < f64::MIN_POSITIVE;
            if !size.is_finite() || size > DIVERGENCE || collapsed {
                break;
            }

            let dinv: Vec<f64> = (0..m)
                .map(|r| if p.eq[r] { 0.0 } else { it.s[r] / it.y[r] })
                .collect();
            if newton.factor(&dinv).is_err() {
                break;
            }
            // Newton step for complementarity target `r_c` on inequality rows
            let direction = |r_c: &[f64]| -> Direction {
                let r1: Vec<f64> = (0..m)
                    .map(|r| {
                        if p.eq[r] {
                            res.r_p[r]
                        } else {
                            r_c[r] / it.y[r] + res.r_p[r]
                        }
                    })
                    .collect();
                let r2: Vec<f64> = res.r_d.iter().map(|v| -v).collect();
                let (u, dx) = newton.solve(p, &dinv, &r1, &r2);
                let mut ds = vec![0.0; m];
                p.rows.mul(&dx, &mut ds);
                let mut dy = vec![0.0; m];
                // take the smaller of s and y from complementarity, where
                // it keeps relative accuracy
                for r in 0..m {
                    if p.eq[r] {
                        dy[r] = -u[r];
                        ds[r] = 0.0;
                    } else if it.s[r] < it.y[r] {
                        dy[r] = -u[r];
                        ds[r] = (r_c[r] - it.s[r] * dy[r]) / it.y[r];
                    } else {
                        ds[r] -= res.r_p[r];
                        dy[r] = (r_c[r] - it.y[r] * ds[r]) / it.s[r];
                    }
                }
                Direction { dx, ds, dy }
            };

            let r_c: Vec<f64> = it.s.iter().zip(&it.y).map(|(s, y)| -s * y).collect();
            let aff = direction(&r_c);
            let ap = max_step(&ineq, &it.s, &aff.ds);
            let ad = max_step(&ineq, &it.y, &aff.dy);
            let sigma = if res.mu > 0.0 {
                let mu_aff = ineq
                    .iter()
                    .map(|&r| (it.s[r] + ap * aff.ds[r]) * (it.y[r] + ad * aff.dy[r]))
                    .sum::<f64>()
                    / ineq.len() as f64;
                (mu_aff / res.mu).powi(3).min(1.0)
            } else {
                0.0
            };
            let r_c: Vec<f64> = (0..m)
                .map(|r| sigma * res.mu - it.s[r] * it.y[r] - aff.ds[r] * aff.dy[r])
                .collect();
            let mut dir = direction(&r_c);
            let mut ap = max_step(&ineq, &it.s, &dir.ds);
            let mut ad = max_step(&ineq, &it.y, &dir.dy);
            if ap.min(ad) < SHORT_STEP {
                // the second-order term can wreck the step far from the path
                let r_c: Vec<f64> = (0..m)
                    .map(|r| CENTERING * res.mu - it.s[r] * it.y[r])
                    .collect();
                dir = direction(&r_c);
                ap = max_step(&ineq, &it.s, &dir.ds);
                ad = max_step(&ineq, &it.y, &dir.dy);
            }
            let ap = (STEP_FRACTION * ap).min(1.0);
            let ad = (STEP_FRACTION * ad).min(1.0);
            log::trace!("steps {ap:.3e} {ad:.3e} sigma {sigma:.2e} fixed {}", newton.fixed);
            for j in 0..p.n {
                it.x[j] += ap * dir.dx[j];
            }
            for r in 0..m {
                it.s[r] += ap * dir.ds[r];
                it.y[r] += ad * dir.dy[r];
            }
        }
        match best {
            Some((e, it)) if e <= self.accept_tol => {
                log::debug!("interior point stalled; accepting iterate with error {e:.2e}");
                Ok(it)
            }
            Some((e, _)) => Err(LpError::SolverFailure(format!(
                "interior point stalled with error {e:.2e}"
            ))),
            None => Err(LpError::SolverFailure(
                "interior point made no progress".into(),
            )),
        }
    }
}

impl LpBackend for InteriorPoint {
    fn name(&self) -> &str {
        "ipm"
    }

    fn solve(&self, problem: &LpProblem) -> Result<LpSolution, LpError> {
        let p = match prepare(problem) {
            Prep::Ready(p) => p,
            Prep::TriviallyInfeasible => {
                return Ok(LpSolution {
                    status: LpStatus::Infeasible,
                    x: Vec::new(),
                    duals: Vec::new(),
                    objective_value: f64::NAN,
                })
            }
        };
        let it = self.run(&p)?;
        let mut duals = vec![0.0; problem.num_constraints()];
        for (r, o) in p.origin.iter().enumerate() {
            if let Origin::Row { index, sign, scale } = *o {
                duals[index] += sign * it.y[r] / scale;
            }
        }
        Ok(LpSolution {
            status: LpStatus::Optimal,
            objective_value: problem.objective_value(&it.x),
            x: it.x,
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
        let s = InteriorPoint::default().solve(&p).unwrap();
        assert!((s.value(x) - 0.75).abs() < 1e-8);
        assert!((s.value(y) - 0.25).abs() < 1e-8);
        // objective rises by 1.5 per unit of the first rhs
        assert!((s.duals[0] - 1.5).abs() < 1e-6);
        assert!((s.duals[1] + 0.5).abs() < 1e-6);
    }

    #[test]
    fn unconstrained_direction_with_zero_cost() {
        let mut p = LpProblem::new();
        let x = p.add_free("x");
        let _free = p.add_free("unused");
        p.set_objective(x, 1.0);
        p.add_constraint(vec![(x, 2.0)], Relation::Ge, 3.0);
        let s = InteriorPoint::default().solve(&p).unwrap();
        assert!((s.value(x) - 1.5).abs() < 1e-8);
    }

    #[test]
    fn dependent_equalities() {
        // the third difference follows from the first two
        let mut p = LpProblem::new();
        let v: Vec<_> = (0..3).map(|k| p.add_free(format!("v{k}"))).collect();
        p.add_constraint(vec![(v[0], 1.0), (v[1], -1.0)], Relation::Eq, 0.0);
        p.add_constraint(vec![(v[1], 1.0), (v[2], -1.0)], Relation::Eq, 0.0);
        p.add_constraint(vec![(v[0], 1.0), (v[2], -1.0)], Relation::Eq, 0.0);
        p.add_constraint(vec![(v[0], 1.0)], Relation::Ge, 2.0);
        p.set_objective(v[2], 1.0);
        let s = InteriorPoint::default().solve(&p).unwrap();
        for &x in &v {
            assert!((s.value(x) - 2.0).abs() < 1e-8);
        }
    }
}
