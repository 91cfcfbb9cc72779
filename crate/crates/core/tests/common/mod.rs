//! Oracles and generators shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roa_core::field::{AffinePiece, PwaField};
use roa_core::geometry::{Cell, Partition, Polytope};
use roa_core::iise::{categorize, refine_boundary, seed_categories, simplicial, split_domain_outflow, VertexCategorization};
use roa_core::linprog::{LpProblem, Relation};
use roa_core::matrix::Matrix;
use roa_core::relu::{enumerate_regions, ReluNetwork, DEFAULT_REGION_CAP};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Outcome {
    Optimal(f64),
    Infeasible,
    Unbounded,
}

/// Textbook two-phase tableau simplex with Bland's rule. Slow and dense;
/// only meant as a reference for small problems.
pub fn dense_reference(p: &LpProblem) -> Outcome {
    const EPS: f64 = 1e-9;
    // Columns: one per bounded variable (shifted to x' = x - l), two per
    // free variable (x = x+ - x-).
    let mut col_of: Vec<(usize, Option<usize>)> = Vec::new();
    let mut ncols = 0;
    let mut shift = vec![0.0; p.num_vars()];
    for (j, v) in p.variables().iter().enumerate() {
        match v.lower {
            Some(l) => {
                shift[j] = l;
                col_of.push((ncols, None));
                ncols += 1;
            }
            None => {
                col_of.push((ncols, Some(ncols + 1)));
                ncols += 2;
            }
        }
    }
    let mut rows: Vec<(Vec<f64>, Relation, f64)> = Vec::new();
    for c in p.constraints() {
        let mut a = vec![0.0; ncols];
        let mut b = c.rhs;
        for &(v, coef) in &c.terms {
            let (pos, neg) = col_of[v.0];
            a[pos] += coef;
            if let Some(neg) = neg {
                a[neg] -= coef;
            }
            b -= coef * shift[v.0];
        }
        let mut rel = c.relation;
        if b < 0.0 {
            a.iter_mut().for_each(|x| *x = -*x);
            b = -b;
            rel = match rel {
                Relation::Le => Relation::Ge,
                Relation::Ge => Relation::Le,
                Relation::Eq => Relation::Eq,
            };
        }
        rows.push((a, rel, b));
    }
    let mut cost = vec![0.0; ncols];
    let mut constant = 0.0;
    for (&v, &coef) in p.objective() {
        let (pos, neg) = col_of[v.0];
        cost[pos] += coef;
        if let Some(neg) = neg {
            cost[neg] -= coef;
        }
        constant += coef * shift[v.0];
    }

    let m = rows.len();
    let n_slack = rows.iter().filter(|r| r.1 != Relation::Eq).count();
    let n_art = rows.iter().filter(|r| r.1 != Relation::Le).count();
    let total = ncols + n_slack + n_art;
    let rhs = total;
    let mut t = vec![vec![0.0; total + 1]; m];
    let mut basis = vec![0; m];
    let mut artificial = vec![false; total];
    let (mut s, mut a) = (ncols, ncols + n_slack);
    for (i, (row, rel, b)) in rows.iter().enumerate() {
        t[i][..ncols].copy_from_slice(row);
        t[i][rhs] = *b;
        match rel {
            Relation::Le => {
                t[i][s] = 1.0;
                basis[i] = s;
                s += 1;
            }
            Relation::Ge => {
                t[i][s] = -1.0;
                s += 1;
                t[i][a] = 1.0;
                artificial[a] = true;
                basis[i] = a;
                a += 1;
            }
            Relation::Eq => {
                t[i][a] = 1.0;
                artificial[a] = true;
                basis[i] = a;
                a += 1;
            }
        }
    }

    fn pivot(t: &mut [Vec<f64>], basis: &mut [usize], r: usize, c: usize) {
        let p = t[r][c];
        t[r].iter_mut().for_each(|x| *x /= p);
        let prow = t[r].clone();
        for (i, row) in t.iter_mut().enumerate() {
            if i != r && row[c] != 0.0 {
                let f = row[c];
                row.iter_mut().zip(&prow).for_each(|(x, y)| *x -= f * y);
            }
        }
        basis[r] = c;
    }

    // Returns false when unbounded.
    let run = |t: &mut Vec<Vec<f64>>, basis: &mut Vec<usize>, c: &[f64], allowed: &dyn Fn(usize) -> bool| -> bool {
        loop {
            let entering = (0..total).find(|&j| {
                allowed(j) && !basis.contains(&j) && {
                    let r: f64 = c[j] - (0..m).map(|i| c[basis[i]] * t[i][j]).sum::<f64>();
                    r < -EPS
                }
            });
            let Some(j) = entering else { return true };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..m {
                if t[i][j] > EPS {
                    let ratio = t[i][rhs] / t[i][j];
                    let better = match leave {
                        None => true,
                        Some((l, best)) => ratio < best - EPS || (ratio <= best + EPS && basis[i] < basis[l]),
                    };
                    if better {
                        leave = Some((i, ratio));
                    }
                }
            }
            let Some((r, _)) = leave else { return false };
            pivot(t, basis, r, j);
        }
    };

    let phase1: Vec<f64> = (0..total).map(|j| if artificial[j] { 1.0 } else { 0.0 }).collect();
    run(&mut t, &mut basis, &phase1, &|_| true);
    let infeas: f64 = (0..m).filter(|&i| artificial[basis[i]]).map(|i| t[i][rhs]).sum();
    if infeas > 1e-7 {
        return Outcome::Infeasible;
    }
    for i in 0..m {
        if artificial[basis[i]] {
            if let Some(j) = (0..total).find(|&j| !artificial[j] && t[i][j].abs() > EPS) {
                pivot(&mut t, &mut basis, i, j);
            }
        }
    }
    let mut phase2 = cost.clone();
    phase2.resize(total, 0.0);
    if !run(&mut t, &mut basis, &phase2, &|j| !artificial[j]) {
        return Outcome::Unbounded;
    }
    let value: f64 = (0..m).map(|i| phase2[basis[i]] * t[i][rhs]).sum();
    Outcome::Optimal(value + constant)
}

/// A random LP that is feasible and bounded by construction: rows are built
/// around a known feasible point and every variable is boxed.
pub fn random_feasible_lp(rng: &mut impl Rng, nvars: usize, nrows: usize) -> LpProblem {
    let mut p = LpProblem::new();
    let mut x0 = Vec::with_capacity(nvars);
    let mut vars = Vec::with_capacity(nvars);
    for j in 0..nvars {
        let kind = rng.random_range(0..3);
        let (v, x) = match kind {
            0 => (p.add_var(format!("x{j}"), Some(0.0)), rng.random_range(0.0..2.0)),
            1 => {
                let l = rng.random_range(-2.0..0.0);
                (p.add_var(format!("x{j}"), Some(l)), l + rng.random_range(0.0..2.0))
            }
            _ => (p.add_free(format!("x{j}")), rng.random_range(-2.0..2.0)),
        };
        vars.push(v);
        x0.push(x);
        p.set_objective(v, rng.random_range(-1.0..1.0));
        p.add_constraint(vec![(v, 1.0)], Relation::Le, 5.0);
        p.add_constraint(vec![(v, 1.0)], Relation::Ge, -5.0);
    }
    for _ in 0..nrows {
        let terms: Vec<_> = vars
            .iter()
            .filter_map(|&v| rng.random_bool(0.5).then_some(v))
            .collect::<Vec<_>>()
            .into_iter()
            .map(|v| (v, rng.random_range(-1.0..1.0)))
            .collect();
        let act: f64 = terms.iter().map(|&(v, c)| c * x0[v.0]).sum();
        match rng.random_range(0..10) {
            0 => p.add_constraint(terms, Relation::Eq, act),
            1..=4 => p.add_constraint(terms, Relation::Ge, act - rng.random_range(0.0..1.0)),
            _ => p.add_constraint(terms, Relation::Le, act + rng.random_range(0.0..1.0)),
        }
    }
    p
}

pub fn random_network(rng: &mut impl Rng, hidden: usize, scale: f64) -> ReluNetwork {
    let mut u = |k: usize| -> Vec<f64> { (0..k).map(|_| rng.random_range(-scale..scale)).collect() };
    ReluNetwork::new(
        Matrix::new(hidden, 2, u(2 * hidden)),
        u(hidden),
        Matrix::new(2, hidden, u(2 * hidden)),
        u(2),
    )
    .unwrap()
}

/// Continuous 2-D PWA dynamics on `[-1, 1]²`: a contracting linear part
/// plus a small random ReLU network with its value at the origin removed,
/// so the origin stays an equilibrium.
pub fn random_pwa(seed: u64, hidden: usize, strength: f64) -> Partition {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = random_network(&mut rng, hidden, 1.0);
    let at0 = net.eval(&[0.0, 0.0]);
    let theta: f64 = rng.random_range(-1.5..1.5);
    let (c, s) = (theta.cos(), theta.sin());
    let lin = [[-1.0 * c, -s], [s, -1.0 * c]];
    let domain = Polytope::from_box(&[-1.0, -1.0], &[1.0, 1.0]).unwrap();
    let regions = enumerate_regions(&net, &domain, DEFAULT_REGION_CAP).unwrap();
    let cells = regions
        .cells()
        .iter()
        .map(|cell| {
            let mut a = Matrix::zeros(2, 2);
            let mut off = vec![0.0; 2];
            for r in 0..2 {
                for k in 0..2 {
                    a.set(r, k, lin[r][k] + strength * cell.flow_matrix.get(r, k));
                }
                off[r] = strength * (cell.flow_offset[r] - at0[r]);
            }
            Cell::new(cell.id, cell.region.clone(), a, off)
        })
        .collect();
    Partition::new(domain, cells).unwrap()
}

/// Refined, triangulated dynamics with either seed categories or categories
/// from a random affine barrier.
pub fn random_instance(seed: u64) -> (Partition, VertexCategorization, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let strength = rng.random_range(0.0..2.5);
    let dynamics = random_pwa(seed, rng.random_range(1..5), strength);
    let p = simplicial(&split_domain_outflow(&dynamics).unwrap()).unwrap();
    let alpha_m = rng.random_range(0.05..1.0);
    if rng.random_bool(0.5) {
        let cats = seed_categories(&p);
        return (p, cats, alpha_m);
    }
    let piece = AffinePiece {
        s: vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
        t: rng.random_range(-0.2..0.6),
    };
    let h = PwaField::new(vec![piece; p.num_cells()]);
    let (q, parent) = refine_boundary(&p, &h, 1e-6).unwrap();
    let cats = categorize(&q, &h.inherit(&parent), 1e-3, 1e-6);
    (q, cats, alpha_m)
}
