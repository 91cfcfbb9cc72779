use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::polytope::{FACET_TOL, MERGE_TOL};
use super::{Cell, GeometryError, Halfspace, Partition, Polytope};
use crate::matrix::Matrix;
use crate::vecops::{dot, norm, scale, sub};

/// Cells longer than this multiple of their inradius are bisected across
/// their longest direction instead of along the vector-field direction.
const MAX_ASPECT: f64 = 6.0;

/// How a cell is subdivided.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RefineRule {
    /// Cut through the Chebyshev center with normal along the direction in
    /// which the dynamics change most across the listed neighbour jumps
    /// `A_j - A_i`. Elongated cells and cells without a usable direction are
    /// bisected across their diameter instead.
    VectorField { jumps: Vec<Matrix> },
    /// Pyramids from the vertex centroid over every facet.
    Barycentric,
    /// Cut through the midpoint of the longest edge and the vertex centroid.
    LongestEdge,
    /// Cut perpendicular to the diameter at its midpoint.
    Bisect,
    /// Cut through the origin and the midpoint of the longest edge not
    /// touching the origin, keeping the origin a vertex of both halves.
    OriginBisect,
}

impl RefineRule {
    /// The vector-field rule for cell `i` of a partition.
    pub fn vector_field(partition: &Partition, i: usize) -> RefineRule {
        let a = &partition.cell(i).flow_matrix;
        let jumps = partition
            .neighbors(i)
            .into_iter()
            .map(|j| partition.cell(j).flow_matrix.sub(a))
            .filter(|m| m.max_abs() > 1e-12)
            .collect();
        RefineRule::VectorField { jumps }
    }
}

/// Subdivide `cell`; children inherit its dynamics.
pub fn refine_cell(cell: &Cell, rule: &RefineRule, floor: f64) -> Result<Vec<Cell>, GeometryError> {
    let regions = refine_region(&cell.region, rule, floor)?;
    Ok(regions.into_iter().map(|r| cell.with_region(r)).collect())
}

pub(crate) fn refine_region(p: &Polytope, rule: &RefineRule, floor: f64) -> Result<Vec<Polytope>, GeometryError> {
    let diameter = p.diameter();
    if diameter < floor {
        return Err(GeometryError::TooSmall { diameter, floor });
    }
    let tol = 1e-9 * diameter.max(1e-300);
    match rule {
        RefineRule::VectorField { jumps } => {
            let (c, r) = p.chebyshev_center();
            if diameter <= MAX_ASPECT * r {
                if let Some(dir) = dominant_direction(jumps, p.dim()) {
                    if let Some(pair) = p.split_or_keep(&dir, -dot(&dir, &c), tol) {
                        return Ok(vec![pair.0, pair.1]);
                    }
                }
            }
            bisect(p, tol)
        }
        RefineRule::Barycentric => barycentric(p),
        RefineRule::LongestEdge => longest_edge(p, tol),
        RefineRule::Bisect => bisect(p, tol),
        RefineRule::OriginBisect => origin_bisect(p, tol),
    }
}

/// Top right-singular vector of the stacked jump matrices.
fn dominant_direction(jumps: &[Matrix], n: usize) -> Option<Vec<f64>> {
    if jumps.is_empty() {
        return None;
    }
    let rows = jumps.len() * n;
    let m = DMatrix::from_fn(rows, n, |r, c| jumps[r / n].get(r % n, c));
    let svd = m.svd(false, true);
    let vt = svd.v_t?;
    let (imax, smax) = svd
        .singular_values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))?;
    if *smax <= 1e-12 {
        return None;
    }
    Some(vt.row(imax).iter().copied().collect())
}

fn bisect(p: &Polytope, tol: f64) -> Result<Vec<Polytope>, GeometryError> {
    let (i, j) = p.diameter_pair();
    let (a, b) = (&p.vertices()[i], &p.vertices()[j]);
    let dir = sub(b, a);
    let mid: Vec<f64> = a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect();
    p.split_or_keep(&dir, -dot(&dir, &mid), tol)
        .map(|(l, r)| vec![l, r])
        .ok_or_else(|| GeometryError::Numerical("diameter bisection failed".into()))
}

fn longest_edge(p: &Polytope, tol: f64) -> Result<Vec<Polytope>, GeometryError> {
    let v = p.vertices();
    let (i, j) = p
        .edges()
        .into_iter()
        .max_by(|&(a, b), &(c, d)| {
            let la = norm(&sub(&v[a], &v[b]));
            let lc = norm(&sub(&v[c], &v[d]));
            la.total_cmp(&lc)
        })
        .ok_or_else(|| GeometryError::Numerical("cell has no edges".into()))?;
    let e = sub(&v[j], &v[i]);
    let mid: Vec<f64> = v[i].iter().zip(&v[j]).map(|(a, b)| 0.5 * (a + b)).collect();
    let to_c = sub(&p.centroid(), &mid);
    let normal = orthogonalize(&e, &to_c);
    if let Some(pair) = p.split_or_keep(&normal, -dot(&normal, &mid), tol) {
        return Ok(vec![pair.0, pair.1]);
    }
    bisect(p, tol)
}

fn origin_bisect(p: &Polytope, tol: f64) -> Result<Vec<Polytope>, GeometryError> {
    let n = p.dim();
    let zero = vec![0.0; n];
    if !p.contains(&zero, FACET_TOL) {
        return bisect(p, tol);
    }
    let v = p.vertices();
    let far = |k: usize| norm(&v[k]) > MERGE_TOL;
    let best = p
        .edges()
        .into_iter()
        .filter(|&(a, b)| far(a) && far(b))
        .max_by(|&(a, b), &(c, d)| {
            norm(&sub(&v[a], &v[b])).total_cmp(&norm(&sub(&v[c], &v[d])))
        });
    if let Some((i, j)) = best {
        let e = sub(&v[j], &v[i]);
        let mid: Vec<f64> = v[i].iter().zip(&v[j]).map(|(a, b)| 0.5 * (a + b)).collect();
        let normal = orthogonalize(&e, &mid);
        if let Some(pair) = p.split_or_keep(&normal, 0.0, tol) {
            return Ok(vec![pair.0, pair.1]);
        }
    }
    for k in 0..n {
        let mut e = vec![0.0; n];
        e[k] = 1.0;
        if let Some(pair) = p.split_or_keep(&e, 0.0, tol) {
            return Ok(vec![pair.0, pair.1]);
        }
    }
    bisect(p, tol)
}

/// Component of `e` orthogonal to `u` (falls back to `e` when `u` is tiny).
fn orthogonalize(e: &[f64], u: &[f64]) -> Vec<f64> {
    let nu = norm(u);
    if nu < 1e-12 {
        return e.to_vec();
    }
    let uh = scale(u, 1.0 / nu);
    let proj = dot(e, &uh);
    let out = sub(e, &scale(&uh, proj));
    if norm(&out) < 1e-12 * norm(e).max(1e-300) {
        e.to_vec()
    } else {
        out
    }
}

fn barycentric(p: &Polytope) -> Result<Vec<Polytope>, GeometryError> {
    Ok(fan(p, &p.centroid()))
}

/// Pyramids from `apex` over every facet of `p` that does not contain it.
///
/// Pyramid `j` is `h_j ≥ 0` together with
/// `h_j(c) h_k(x) - h_k(c) h_j(x) ≥ 0` for the other facets `k`.
/// `apex` must lie in `p`.
pub fn fan(p: &Polytope, apex: &[f64]) -> Vec<Polytope> {
    let c = apex;
    let hs = p.halfspaces();
    let mut out = Vec::with_capacity(hs.len());
    for (j, hj) in hs.iter().enumerate() {
        let hjc = hj.eval(c);
        if hjc <= FACET_TOL {
            continue;
        }
        let mut rows = vec![hj.clone()];
        for (k, hk) in hs.iter().enumerate() {
            if k == j {
                continue;
            }
            let hkc = hk.eval(c);
            let normal: Vec<f64> = hk
                .normal
                .iter()
                .zip(&hj.normal)
                .map(|(a, b)| hjc * a - hkc * b)
                .collect();
            let offset = hjc * hk.offset - hkc * hj.offset;
            if let Some(h) = Halfspace::new(normal, offset).normalized() {
                rows.push(h);
            }
        }
        let mut verts: Vec<Vec<f64>> = p
            .facet_vertices(j)
            .into_iter()
            .map(|k| p.vertices()[k].clone())
            .collect();
        verts.push(c.to_vec());
        out.push(Polytope::assemble(p.dim(), rows, verts));
    }
    out
}
