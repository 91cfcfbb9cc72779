//! Lyapunov-like functions over a certified invariant set, and the region of
//! attraction certificate that combines both.
//!
//! The partition is cut down to the cells where the barrier is nonnegative,
//! the origin is made a vertex of every cell containing it, and a continuous
//! PWA function `V` with `V(0) = 0` that decreases along the flow at every
//! other vertex is found by linear programming.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use web_time::Instant;

use crate::config::RunConfig;
use crate::field::{AffinePiece, PwaField};
use crate::geometry::{fan, refine_cell, GeometryError, Partition, RefineRule, MERGE_TOL};
use crate::iise::{add_continuity_rows, add_magnitude_rows, refine_boundary, run_iise, IiseError, IiseRun, InvariantSetCertificate, Termination, Tolerances};
use crate::linprog::{self, LpError, LpProblem, LpSolution, Relation, VarId};
use crate::vecops::norm;

/// Barrier values at or above `-RESTRICT_TOL` count as inside the set.
pub const RESTRICT_TOL: f64 = 1e-6;
/// Containment tolerance for deciding which cells hold the origin.
pub const ORIGIN_TOL: f64 = 1e-9;
/// Largest `‖A_i 0 + a_i‖` accepted on origin cells.
pub const EQUILIBRIUM_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum RoaError {
    #[error("no cell of the invariant set qualifies for the restriction")]
    EmptyRestriction,
    #[error("no cell contains the origin in its interior neighbourhood")]
    OriginNotCovered,
    #[error("origin is not an equilibrium: |A 0 + a| = {0:.3e}")]
    NotEquilibrium(f64),
    #[error("refinement stalled: {0}")]
    RefinementStalled(String),
    #[error(transparent)]
    Iise(#[from] IiseError),
    #[error(transparent)]
    Solver(#[from] LpError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// A PWA Lyapunov-like function `V_i(x) = p_i · x + q_i` on its own partition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LyapunovFunction {
    pub partition: Partition,
    pub field: PwaField,
    /// Cells containing the origin; their constant term is zero.
    pub origin_cells: Vec<usize>,
    /// Sum of decrease slacks at the accepted solution.
    pub tau_sum: f64,
}

impl LyapunovFunction {
    pub fn value_at(&self, x: &[f64]) -> Option<f64> {
        self.field.value_at(&self.partition, x)
    }

    /// `p_i · (A_i v + a_i)` at every pair except the origin, as
    /// `(cell, vertex, value)`.
    pub fn vertex_derivatives(&self) -> Vec<(usize, usize, f64)> {
        let p = &self.partition;
        p.incidence_pairs()
            .filter(|&(_, k)| norm(p.vertex(k)) > MERGE_TOL)
            .map(|(i, k)| (i, k, self.field.piece(i).derivative(p.cell(i), p.vertex(k))))
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LyapunovStats {
    pub rounds: usize,
    pub cells_initial: usize,
    pub cells_final: usize,
    pub lp_rows: usize,
    pub lp_vars: usize,
    pub seconds: f64,
}

/// Everything that went into a certificate besides its coefficients.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub config: RunConfig,
    pub tolerances: Tolerances,
    pub restrict_tol: f64,
    pub iterations: usize,
    pub termination: Termination,
    pub lyapunov: LyapunovStats,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoaCertificate {
    pub invariant: InvariantSetCertificate,
    pub lyapunov: LyapunovFunction,
    pub provenance: Provenance,
}

/// Cells of a boundary-aligned partition on which `h ≥ 0`.
pub fn restrict_partition(refined: &Partition, barrier: &PwaField) -> Result<Partition, RoaError> {
    let keep: Vec<usize> = (0..refined.num_cells())
        .filter(|&i| {
            refined
                .cell(i)
                .region
                .vertices()
                .iter()
                .all(|v| barrier.value(i, v) >= -RESTRICT_TOL)
        })
        .collect();
    if keep.is_empty() {
        return Err(RoaError::EmptyRestriction);
    }
    Ok(refined.subset(&keep)?)
}

pub fn origin_cells(p: &Partition) -> Vec<usize> {
    let zero = vec![0.0; p.dim()];
    (0..p.num_cells())
        .filter(|&i| p.cell(i).region.contains(&zero, ORIGIN_TOL))
        .collect()
}

/// Fan every cell containing the origin from it, so the origin is a vertex
/// of all of them.
pub fn fan_at_origin(p: &Partition) -> Result<Partition, RoaError> {
    let zero = vec![0.0; p.dim()];
    let (q, _) = p.map_cells(|_, c| -> Result<_, GeometryError> {
        let r = &c.region;
        let is_vertex = r.vertices().iter().any(|v| norm(v) <= MERGE_TOL);
        if is_vertex || !r.contains(&zero, ORIGIN_TOL) {
            return Ok(vec![r.clone()]);
        }
        Ok(fan(r, &zero))
    })?;
    Ok(q)
}

/// Reject partitions where the origin is uncovered, on the edge of the
/// covered region, or not an equilibrium.
fn check_origin(p: &Partition) -> Result<Vec<usize>, RoaError> {
    let cells = origin_cells(p);
    if cells.is_empty() {
        return Err(RoaError::OriginNotCovered);
    }
    let zero = vec![0.0; p.dim()];
    let worst = cells
        .iter()
        .map(|&i| norm(&p.cell(i).flow(&zero)))
        .fold(0.0, f64::max);
    if worst > EQUILIBRIUM_TOL {
        return Err(RoaError::NotEquilibrium(worst));
    }
    // a small sphere of directions around the origin must stay covered
    let r = 1e-7 * p.domain_diameter();
    for d in 0..p.dim() {
        for sign in [-1.0, 1.0] {
            let mut x = zero.clone();
            x[d] = sign * r;
            if p.locate(&x).is_empty() {
                return Err(RoaError::OriginNotCovered);
            }
        }
    }
    Ok(cells)
}

/// Variables of an assembled Lyapunov LP.
#[derive(Debug, Clone)]
pub struct LyapunovLp {
    pub problem: LpProblem,
    pub p: Vec<Vec<VarId>>,
    /// Constant terms; origin cells get a variable fixed at zero.
    pub q: Vec<VarId>,
    pub tau: Vec<VarId>,
    pub origin_cells: Vec<usize>,
}

impl LyapunovLp {
    pub fn field(&self, sol: &LpSolution) -> PwaField {
        let mut pieces: Vec<AffinePiece> = self
            .p
            .iter()
            .zip(&self.q)
            .map(|(p, &q)| AffinePiece {
                s: p.iter().map(|&v| sol.value(v)).collect(),
                t: sol.value(q),
            })
            .collect();
        for &i in &self.origin_cells {
            pieces[i].t = 0.0;
        }
        PwaField::new(pieces)
    }

    pub fn taus(&self, sol: &LpSolution) -> Vec<f64> {
        self.tau.iter().map(|&v| sol.value(v).max(0.0)).collect()
    }
}

/// Decrease rows `V̇_i(v) - τ_i ≤ -eps1` at every non-origin vertex pair,
/// `V_i(0) = 0` on origin cells, continuity at shared vertices, `τ_i ≥ 0`,
/// minimizing `Σ τ_i`.
pub fn build_lyapunov_lp(p: &Partition, eps1: f64) -> Result<LyapunovLp, RoaError> {
    let origin = check_origin(p)?;
    let n = p.dim();
    let mut problem = LpProblem::new();
    let mut is_origin = vec![false; p.num_cells()];
    for &i in &origin {
        is_origin[i] = true;
    }
    let mut pv = Vec::with_capacity(p.num_cells());
    let mut q = Vec::with_capacity(p.num_cells());
    let mut tau = Vec::with_capacity(p.num_cells());
    for i in 0..p.num_cells() {
        pv.push((0..n).map(|d| problem.add_free(format!("p{i}_{d}"))).collect::<Vec<_>>());
        // the continuity rows need a column for every cell; on origin cells
        // it is pinned at zero by its bounds
        q.push(if is_origin[i] {
            let v = problem.add_var(format!("q{i}"), Some(0.0));
            problem.add_constraint(vec![(v, 1.0)], Relation::Le, 0.0);
            v
        } else {
            problem.add_free(format!("q{i}"))
        });
        let t = problem.add_slack(format!("tau{i}"));
        problem.set_objective(t, 1.0);
        tau.push(t);
    }
    for (i, k) in p.incidence_pairs() {
        let v = p.vertex(k);
        if norm(v) <= MERGE_TOL {
            continue;
        }
        let f = p.cell(i).flow(v);
        let mut row: Vec<(VarId, f64)> = pv[i].iter().zip(&f).map(|(&x, &fd)| (x, fd)).collect();
        row.push((tau[i], -1.0));
        problem.add_constraint(row, Relation::Le, -eps1);
    }
    add_continuity_rows(p, &mut problem, &pv, &q);
    add_magnitude_rows(p, &mut problem, &pv, &q);
    Ok(LyapunovLp {
        problem,
        p: pv,
        q,
        tau,
        origin_cells: origin,
    })
}

/// Solve the Lyapunov LP on `p`, refining cells with positive slack.
pub fn synthesize_lyapunov(
    p: Partition,
    cfg: &RunConfig,
) -> Result<(LyapunovFunction, LyapunovStats), RoaError> {
    let backend = linprog::backend_from_env()?;
    let start = Instant::now();
    let floor = cfg.floor_ratio * p.domain_diameter();
    let mut p = fan_at_origin(&p)?;
    let cells_initial = p.num_cells();
    let mut best = f64::INFINITY;
    let mut flat = 0usize;
    for round in 1.. {
        let lp = build_lyapunov_lp(&p, cfg.eps1)?;
        let sol = backend.solve(&lp.problem)?;
        if !sol.is_optimal() {
            return Err(LpError::SolverFailure(format!("Lyapunov LP reported {:?}", sol.status)).into());
        }
        let taus = lp.taus(&sol);
        let total: f64 = taus.iter().sum();
        log::debug!("lyapunov round {round}: {} cells, slack {total:.3e}", p.num_cells());
        if total <= cfg.certify_tol {
            let stats = LyapunovStats {
                rounds: round,
                cells_initial,
                cells_final: p.num_cells(),
                lp_rows: lp.problem.num_constraints(),
                lp_vars: lp.problem.num_vars(),
                seconds: start.elapsed().as_secs_f64(),
            };
            let v = LyapunovFunction {
                field: lp.field(&sol),
                origin_cells: lp.origin_cells.clone(),
                partition: p,
                tau_sum: total,
            };
            return Ok((v, stats));
        }
        if total < 0.9 * best {
            best = total;
            flat = 0;
        } else {
            flat += 1;
        }
        let blocked: Vec<usize> = (0..p.num_cells()).filter(|&i| taus[i] > 1e-9).collect();
        if flat >= cfg.stall_rounds || round >= cfg.max_refine_rounds {
            return Err(RoaError::RefinementStalled(format!(
                "decrease slack {total:.3e} after {round} rounds, {} blocking cells",
                blocked.len()
            )));
        }
        let rules: BTreeMap<usize, RefineRule> = blocked
            .iter()
            .map(|&i| {
                let rule = if lp.origin_cells.contains(&i) {
                    RefineRule::OriginBisect
                } else {
                    RefineRule::vector_field(&p, i)
                };
                (i, rule)
            })
            .collect();
        let mut refined = 0usize;
        let (np, _) = p.map_cells(|i, c| -> Result<_, GeometryError> {
            let Some(rule) = rules.get(&i) else {
                return Ok(vec![c.region.clone()]);
            };
            match refine_cell(c, rule, floor) {
                Ok(children) => {
                    refined += 1;
                    Ok(children.into_iter().map(|ch| ch.region).collect())
                }
                Err(GeometryError::TooSmall { .. }) => Ok(vec![c.region.clone()]),
                Err(e) => Err(e),
            }
        })?;
        if refined == 0 {
            return Err(RoaError::RefinementStalled(format!(
                "cells {blocked:?} block the decrease condition and are at the diameter floor"
            )));
        }
        if np.num_cells() > cfg.max_cells {
            return Err(RoaError::RefinementStalled(format!(
                "cell budget of {} exceeded with decrease slack {total:.3e}",
                cfg.max_cells
            )));
        }
        p = np;
    }
    unreachable!("refinement loop exits by return")
}

/// Lyapunov stage on the last set of an IISE run.
pub fn roa_certificate(run: &IiseRun, cfg: &RunConfig) -> Result<RoaCertificate, RoaError> {
    let last = run.last();
    let (aligned, parent) = refine_boundary(&last.partition, &last.barrier.field, cfg.nonzero_tol)?;
    let h = last.barrier.field.inherit(&parent);
    let restricted = restrict_partition(&aligned, &h)?;
    let (lyapunov, stats) = synthesize_lyapunov(restricted, cfg)?;
    Ok(RoaCertificate {
        invariant: last.clone(),
        lyapunov,
        provenance: Provenance {
            config: cfg.clone(),
            tolerances: Tolerances::from(cfg),
            restrict_tol: RESTRICT_TOL,
            iterations: run.certificates.len() - 1,
            termination: run.termination,
            lyapunov: stats,
        },
    })
}

/// Invariant-set growth followed by the Lyapunov stage.
pub fn run_seroaise(dynamics: &Partition, cfg: &RunConfig) -> Result<RoaCertificate, RoaError> {
    let run = run_iise(dynamics, cfg)?;
    roa_certificate(&run, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Cell, Polytope};
    use crate::matrix::Matrix;

    fn linear_box(k: f64, lo: [f64; 2], hi: [f64; 2]) -> Partition {
        let domain = Polytope::from_box(&lo, &hi).unwrap();
        let cell = Cell::new(0, domain.clone(), Matrix::scaled_identity(2, k), vec![0.0, 0.0]);
        Partition::single(domain, cell).unwrap()
    }

    #[test]
    fn whole_set_restriction_is_identity() {
        let p = linear_box(-1.0, [-1.0, -1.0], [1.0, 1.0]);
        let h = PwaField::new(vec![AffinePiece { s: vec![0.0, 0.0], t: 1.0 }]);
        let q = restrict_partition(&p, &h).unwrap();
        assert_eq!(q.num_cells(), 1);
    }

    #[test]
    fn half_box_restriction_keeps_right_cell() {
        let p = linear_box(-1.0, [-1.0, -1.0], [1.0, 1.0]);
        let (p, _) = p
            .map_cells(|_, c| -> Result<_, GeometryError> {
                let (a, b) = c.region.split_or_keep(&[1.0, 0.0], 0.0, 1e-9).unwrap();
                Ok(vec![a, b])
            })
            .unwrap();
        let h = PwaField::new(vec![AffinePiece { s: vec![1.0, 0.0], t: 0.0 }; 2]);
        let q = restrict_partition(&p, &h).unwrap();
        assert_eq!(q.num_cells(), 1);
        assert!(q.cell(0).region.centroid()[0] > 0.0);
    }

    #[test]
    fn negative_barrier_is_empty_restriction() {
        let p = linear_box(-1.0, [-1.0, -1.0], [1.0, 1.0]);
        let h = PwaField::new(vec![AffinePiece { s: vec![0.0, 0.0], t: -1.0 }]);
        assert!(matches!(restrict_partition(&p, &h), Err(RoaError::EmptyRestriction)));
    }

    #[test]
    fn origin_fan_of_square() {
        let p = fan_at_origin(&linear_box(-1.0, [-1.0, -1.0], [1.0, 1.0])).unwrap();
        assert_eq!(p.num_cells(), 4);
        assert_eq!(origin_cells(&p).len(), 4);
    }

    #[test]
    fn origin_cells_drop_the_constant() {
        let p = fan_at_origin(&linear_box(-1.0, [-1.0, -1.0], [1.0, 1.0])).unwrap();
        let lp = build_lyapunov_lp(&p, 1e-4).unwrap();
        for &i in &lp.origin_cells {
            let v = lp.problem.variables()[lp.q[i].0].clone();
            assert_eq!(v.lower, Some(0.0));
        }
    }

    #[test]
    fn uncovered_origin_is_refused() {
        let p = linear_box(-1.0, [0.5, 0.5], [1.0, 1.0]);
        assert!(matches!(build_lyapunov_lp(&p, 1e-4), Err(RoaError::OriginNotCovered)));
        // origin on the edge of the covered region
        let p = linear_box(-1.0, [0.0, -1.0], [1.0, 1.0]);
        assert!(matches!(build_lyapunov_lp(&fan_at_origin(&p).unwrap(), 1e-4), Err(RoaError::OriginNotCovered)));
    }

    #[test]
    fn shifted_equilibrium_is_refused() {
        let domain = Polytope::from_box(&[-1.0, -1.0], &[1.0, 1.0]).unwrap();
        let cell = Cell::new(0, domain.clone(), Matrix::scaled_identity(2, -1.0), vec![0.1, 0.0]);
        let p = fan_at_origin(&Partition::single(domain, cell).unwrap()).unwrap();
        assert!(matches!(build_lyapunov_lp(&p, 1e-4), Err(RoaError::NotEquilibrium(_))));
    }

    #[test]
    fn stable_fan_decreases_everywhere() {
        let p = linear_box(-1.0, [-1.0, -1.0], [1.0, 1.0]);
        let (v, stats) = synthesize_lyapunov(p, &RunConfig::default()).unwrap();
        assert_eq!(stats.rounds, 1);
        assert!(v.tau_sum <= 1e-9);
        for (_, _, d) in v.vertex_derivatives() {
            assert!(d <= -1e-4 + 1e-9, "{d}");
        }
        assert!(v.value_at(&[0.0, 0.0]).unwrap().abs() < 1e-12);
    }
}
