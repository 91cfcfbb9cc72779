use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::GeometryError;
use crate::linprog::{LpBackend, LpProblem, LpStatus, Relation, RevisedSimplex};
use crate::vecops::{axpy, dist, dot, mean, norm};

/// Feasibility tolerance for vertices against their halfspaces.
pub const FEAS_TOL: f64 = 1e-7;
/// Two vertices closer than this are the same vertex.
pub const MERGE_TOL: f64 = 1e-7;
/// A vertex is on a facet when its halfspace value is within this bound.
/// Looser than `FEAS_TOL` so that vertices kept on a cut plane by a
/// split tolerance still count as incident to the new facet.
pub const FACET_TOL: f64 = 1e-6;

/// `normal · x + offset ≥ 0`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Halfspace {
    pub normal: Vec<f64>,
    pub offset: f64,
}

impl Halfspace {
    pub fn new(normal: Vec<f64>, offset: f64) -> Self {
        Self { normal, offset }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        dot(&self.normal, x) + self.offset
    }

    /// Unit-normal copy, or `None` for a zero normal.
    pub fn normalized(&self) -> Option<Halfspace> {
        let n = norm(&self.normal);
        if n < 1e-300 || !n.is_finite() {
            return None;
        }
        Some(Halfspace {
            normal: self.normal.iter().map(|v| v / n).collect(),
            offset: self.offset / n,
        })
    }

    pub fn flipped(&self) -> Halfspace {
        Halfspace {
            normal: self.normal.iter().map(|v| -v).collect(),
            offset: -self.offset,
        }
    }
}

/// A bounded, full-dimensional convex polytope kept in both halfspace and
/// vertex form. In two dimensions vertices are stored counterclockwise.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Polytope {
    dim: usize,
    halfspaces: Vec<Halfspace>,
    vertices: Vec<Vec<f64>>,
}

/// Result of cutting a polytope with a hyperplane.
#[derive(Debug, Clone)]
pub enum SplitOutcome {
    /// `below` is where `normal · x + offset ≤ 0`.
    Cut { below: Polytope, above: Polytope },
    Untouched,
}

impl Polytope {
    /// Build from halfspaces, enumerating vertices and dropping redundant rows.
    pub fn from_halfspaces(dim: usize, halfspaces: &[Halfspace]) -> Result<Self, GeometryError> {
        let hs = normalize_all(dim, halfspaces)?;
        let vertices = enumerate_normalized(dim, &hs)?;
        Ok(Self::assemble(dim, hs, vertices))
    }

    /// Axis-aligned box `lower ≤ x ≤ upper`.
    pub fn from_box(lower: &[f64], upper: &[f64]) -> Result<Self, GeometryError> {
        let n = lower.len();
        if upper.len() != n || n == 0 {
            return Err(GeometryError::DimensionMismatch);
        }
        if lower.iter().zip(upper).any(|(l, u)| !(l < u)) {
            return Err(GeometryError::EmptyRegion);
        }
        let mut hs = Vec::with_capacity(2 * n);
        for i in 0..n {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            hs.push(Halfspace::new(e.clone(), -lower[i]));
            e[i] = -1.0;
            hs.push(Halfspace::new(e, upper[i]));
        }
        let mut vertices = Vec::with_capacity(1 << n);
        for mask in 0..(1usize << n) {
            vertices.push(
                (0..n)
                    .map(|i| if mask >> i & 1 == 1 { upper[i] } else { lower[i] })
                    .collect(),
            );
        }
        Ok(Self::assemble(n, hs, vertices))
    }

    /// Build from already-consistent data: dedupes vertices, keeps only
    /// halfspaces that support a facet, and orders planar vertices.
    pub(crate) fn assemble(dim: usize, halfspaces: Vec<Halfspace>, vertices: Vec<Vec<f64>>) -> Self {
        let vertices = dedupe(vertices);
        let mut kept: Vec<Halfspace> = Vec::new();
        for h in halfspaces {
            let on: Vec<&Vec<f64>> = vertices
                .iter()
                .filter(|v| h.eval(v).abs() <= FACET_TOL)
                .collect();
            if affine_rank(&on) + 1 < dim || on.len() < dim {
                continue;
            }
            let dup = kept.iter().any(|k| {
                (k.offset - h.offset).abs() <= FEAS_TOL
                    && k.normal
                        .iter()
                        .zip(&h.normal)
                        .all(|(a, b)| (a - b).abs() <= 1e-9)
            });
            if !dup {
                kept.push(h);
            }
        }
        let mut p = Self {
            dim,
            halfspaces: kept,
            vertices,
        };
        if dim == 2 {
            p.order_ccw();
        }
        p
    }

    fn order_ccw(&mut self) {
        let c = mean(&self.vertices);
        self.vertices.sort_by(|a, b| {
            let ta = (a[1] - c[1]).atan2(a[0] - c[0]);
            let tb = (b[1] - c[1]).atan2(b[0] - c[0]);
            ta.total_cmp(&tb)
        });
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn halfspaces(&self) -> &[Halfspace] {
        &self.halfspaces
    }

    pub fn vertices(&self) -> &[Vec<f64>] {
        &self.vertices
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        self.halfspaces.iter().all(|h| h.eval(x) >= -tol)
    }

    /// Smallest halfspace value at `x`; positive inside.
    pub fn depth(&self, x: &[f64]) -> f64 {
        self.halfspaces
            .iter()
            .map(|h| h.eval(x))
            .fold(f64::INFINITY, f64::min)
    }

    /// Mean of the vertices (an interior point, not the center of mass).
    pub fn centroid(&self) -> Vec<f64> {
        mean(&self.vertices)
    }

    pub fn diameter(&self) -> f64 {
        let mut d: f64 = 0.0;
        for (i, a) in self.vertices.iter().enumerate() {
            for b in &self.vertices[i + 1..] {
                d = d.max(dist(a, b));
            }
        }
        d
    }

    /// Pair of vertices realizing the diameter.
    pub fn diameter_pair(&self) -> (usize, usize) {
        let mut best = (0, 0, -1.0);
        for i in 0..self.vertices.len() {
            for j in i + 1..self.vertices.len() {
                let d = dist(&self.vertices[i], &self.vertices[j]);
                if d > best.2 {
                    best = (i, j, d);
                }
            }
        }
        (best.0, best.1)
    }

    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![f64::INFINITY; self.dim];
        let mut hi = vec![f64::NEG_INFINITY; self.dim];
        for v in &self.vertices {
            for i in 0..self.dim {
                lo[i] = lo[i].min(v[i]);
                hi[i] = hi[i].max(v[i]);
            }
        }
        (lo, hi)
    }

    /// Center and radius of the largest inscribed ball.
    pub fn chebyshev_center(&self) -> (Vec<f64>, f64) {
        let mut lp = LpProblem::new();
        let xs: Vec<_> = (0..self.dim).map(|i| lp.add_free(format!("x{i}"))).collect();
        let r = lp.add_var("r", Some(0.0));
        lp.set_objective(r, -1.0);
        for h in &self.halfspaces {
            let mut terms: Vec<_> = xs.iter().zip(&h.normal).map(|(&x, &c)| (x, c)).collect();
            terms.push((r, -norm(&h.normal)));
            lp.add_constraint(terms, Relation::Ge, -h.offset);
        }
        match RevisedSimplex::default().solve(&lp) {
            Ok(sol) if sol.is_optimal() => {
                let c: Vec<f64> = xs.iter().map(|&x| sol.value(x)).collect();
                let rad = sol.value(r);
                (c, rad)
            }
            _ => {
                let c = self.centroid();
                let rad = self.depth(&c).max(0.0);
                (c, rad)
            }
        }
    }

    /// Exact area of a planar polygon.
    pub fn area(&self) -> Option<f64> {
        if self.dim != 2 {
            return None;
        }
        let v = &self.vertices;
        let k = v.len();
        let mut s = 0.0;
        for i in 0..k {
            let (a, b) = (&v[i], &v[(i + 1) % k]);
            s += a[0] * b[1] - a[1] * b[0];
        }
        Some(0.5 * s.abs())
    }

    /// Indices of halfspaces tight at `x`.
    pub fn active_set(&self, x: &[f64]) -> Vec<usize> {
        self.halfspaces
            .iter()
            .enumerate()
            .filter(|(_, h)| h.eval(x).abs() <= FACET_TOL)
            .map(|(j, _)| j)
            .collect()
    }

    /// Vertex indices lying on halfspace `j`.
    pub fn facet_vertices(&self, j: usize) -> Vec<usize> {
        let h = &self.halfspaces[j];
        (0..self.vertices.len())
            .filter(|&k| h.eval(&self.vertices[k]).abs() <= FACET_TOL)
            .collect()
    }

    /// Vertex index pairs joined by an edge.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let k = self.vertices.len();
        if self.dim == 1 {
            return if k == 2 { vec![(0, 1)] } else { Vec::new() };
        }
        if self.dim == 2 {
            return (0..k).map(|i| (i, (i + 1) % k)).collect();
        }
        let active: Vec<Vec<usize>> = self.vertices.iter().map(|v| self.active_set(v)).collect();
        let mut out = Vec::new();
        for i in 0..k {
            for j in i + 1..k {
                let common: Vec<usize> = active[i]
                    .iter()
                    .copied()
                    .filter(|a| active[j].contains(a))
                    .collect();
                if common.len() + 1 < self.dim {
                    continue;
                }
                let rows: Vec<&Vec<f64>> = common.iter().map(|&c| &self.halfspaces[c].normal).collect();
                if rank(&rows) + 1 != self.dim {
                    continue;
                }
                let blocked = (0..k).any(|l| {
                    l != i && l != j && common.iter().all(|c| active[l].contains(c))
                });
                if !blocked {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Cut by `{x : normal · x + offset = 0}`. Vertices within `tol` of the
    /// plane (after normalization) are treated as lying on it.
    pub fn split(&self, normal: &[f64], offset: f64, tol: f64) -> Result<SplitOutcome, GeometryError> {
        let plane = Halfspace::new(normal.to_vec(), offset)
            .normalized()
            .ok_or(GeometryError::DegenerateCut)?;
        let sigma: Vec<f64> = self.vertices.iter().map(|v| plane.eval(v)).collect();
        let lo = sigma.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = sigma.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(lo < -tol && hi > tol) {
            let touches = sigma.iter().any(|s| s.abs() <= tol);
            return if touches {
                Err(GeometryError::DegenerateCut)
            } else {
                Ok(SplitOutcome::Untouched)
            };
        }
        let mut below = Vec::new();
        let mut above = Vec::new();
        for (v, &s) in self.vertices.iter().zip(&sigma) {
            if s <= tol {
                below.push(v.clone());
            }
            if s >= -tol {
                above.push(v.clone());
            }
        }
        for (i, j) in self.edges() {
            let (si, sj) = (sigma[i], sigma[j]);
            if (si < -tol && sj > tol) || (si > tol && sj < -tol) {
                let t = si / (si - sj);
                let diff: Vec<f64> = self.vertices[j]
                    .iter()
                    .zip(&self.vertices[i])
                    .map(|(a, b)| a - b)
                    .collect();
                let p = axpy(&self.vertices[i], t, &diff);
                below.push(p.clone());
                above.push(p);
            }
        }
        let mut hs_below = self.halfspaces.clone();
        hs_below.push(plane.flipped());
        let mut hs_above = self.halfspaces.clone();
        hs_above.push(plane);
        Ok(SplitOutcome::Cut {
            below: Polytope::assemble(self.dim, hs_below, below),
            above: Polytope::assemble(self.dim, hs_above, above),
        })
    }

    /// Like [`split`](Self::split) but degenerate cuts count as no cut.
    pub fn split_or_keep(&self, normal: &[f64], offset: f64, tol: f64) -> Option<(Polytope, Polytope)> {
        match self.split(normal, offset, tol) {
            Ok(SplitOutcome::Cut { below, above }) => Some((below, above)),
            _ => None,
        }
    }

    /// Check the structural invariants; returns a description of the first
    /// violation found.
    pub fn validate(&self) -> Result<(), String> {
        if self.vertices.len() < self.dim + 1 {
            return Err(format!("only {} vertices", self.vertices.len()));
        }
        for v in &self.vertices {
            if v.len() != self.dim || v.iter().any(|x| !x.is_finite()) {
                return Err("malformed vertex".into());
            }
            for h in &self.halfspaces {
                if h.eval(v) < -FACET_TOL {
                    return Err(format!("vertex {v:?} violates halfspace by {}", -h.eval(v)));
                }
            }
            let act = self.active_set(v);
            let rows: Vec<&Vec<f64>> = act.iter().map(|&a| &self.halfspaces[a].normal).collect();
            if rank(&rows) < self.dim {
                return Err(format!("vertex {v:?} is not a corner"));
            }
        }
        Ok(())
    }
}

pub(crate) fn dedupe(points: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(points.len());
    for p in points {
        if !out.iter().any(|q| dist(q, &p) <= MERGE_TOL) {
            out.push(p);
        }
    }
    out
}

/// Numerical rank of a set of row vectors.
pub(crate) fn rank(rows: &[&Vec<f64>]) -> usize {
    if rows.is_empty() {
        return 0;
    }
    let n = rows[0].len();
    let m = DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]);
    m.rank(1e-9)
}

/// Dimension of the affine hull of a point set.
pub(crate) fn affine_rank(points: &[&Vec<f64>]) -> usize {
    if points.len() < 2 {
        return 0;
    }
    let base = points[0];
    let n = base.len();
    let m = DMatrix::from_fn(points.len() - 1, n, |i, j| points[i + 1][j] - base[j]);
    m.rank(1e-9)
}

fn normalize_all(dim: usize, halfspaces: &[Halfspace]) -> Result<Vec<Halfspace>, GeometryError> {
    let mut out = Vec::with_capacity(halfspaces.len());
    for h in halfspaces {
        if h.normal.len() != dim {
            return Err(GeometryError::DimensionMismatch);
        }
        if !h.offset.is_finite() || h.normal.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        match h.normalized() {
            Some(u) => out.push(u),
            None if h.offset >= 0.0 => {}
            None => return Err(GeometryError::EmptyRegion),
        }
    }
    Ok(out)
}

/// All vertices of `{x : normal_j · x + offset_j ≥ 0}`.
pub fn enumerate_vertices(dim: usize, halfspaces: &[Halfspace]) -> Result<Vec<Vec<f64>>, GeometryError> {
    let hs = normalize_all(dim, halfspaces)?;
    enumerate_normalized(dim, &hs)
}

fn enumerate_normalized(dim: usize, hs: &[Halfspace]) -> Result<Vec<Vec<f64>>, GeometryError> {
    if dim == 0 {
        return Err(GeometryError::DimensionMismatch);
    }
    check_bounded(dim, hs)?;
    let verts = if dim <= 3 {
        enumerate_by_tuples(dim, hs)
    } else {
        enumerate_by_pivoting(dim, hs)?
    };
    if verts.is_empty() {
        return Err(GeometryError::EmptyRegion);
    }
    Ok(verts)
}

/// A recession direction exists iff the normals are rank deficient or some
/// `d` has `E d ≥ 0` with `1ᵀ E d ≥ 1`.
fn check_bounded(dim: usize, hs: &[Halfspace]) -> Result<(), GeometryError> {
    let rows: Vec<&Vec<f64>> = hs.iter().map(|h| &h.normal).collect();
    if rank(&rows) < dim {
        return Err(GeometryError::UnboundedRegion);
    }
    let mut lp = LpProblem::new();
    let d: Vec<_> = (0..dim).map(|i| lp.add_free(format!("d{i}"))).collect();
    let mut total = vec![0.0; dim];
    for h in hs {
        lp.add_constraint(
            d.iter().zip(&h.normal).map(|(&v, &c)| (v, c)).collect(),
            Relation::Ge,
            0.0,
        );
        for (t, c) in total.iter_mut().zip(&h.normal) {
            *t += c;
        }
    }
    lp.add_constraint(d.iter().zip(&total).map(|(&v, &c)| (v, c)).collect(), Relation::Ge, 1.0);
    match RevisedSimplex::default().solve(&lp) {
        Ok(sol) if sol.status == LpStatus::Infeasible => Ok(()),
        Ok(_) => Err(GeometryError::UnboundedRegion),
        Err(e) => Err(GeometryError::Numerical(e.to_string())),
    }
}

fn solve_square(rows: &[&Halfspace]) -> Option<Vec<f64>> {
    let n = rows.len();
    let a = DMatrix::from_fn(n, n, |i, j| rows[i].normal[j]);
    let b = DVector::from_fn(n, |i, _| -rows[i].offset);
    if a.clone().svd(false, false).singular_values.min() < 1e-10 {
        return None;
    }
    let x = a.lu().solve(&b)?;
    let x: Vec<f64> = x.iter().copied().collect();
    x.iter().all(|v| v.is_finite()).then_some(x)
}

pub(crate) fn for_each_combination(m: usize, k: usize, mut f: impl FnMut(&[usize])) {
    if k > m {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        let mut i = k;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if idx[i] < i + m - k {
                break;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

fn enumerate_by_tuples(dim: usize, hs: &[Halfspace]) -> Vec<Vec<f64>> {
    let mut found = Vec::new();
    for_each_combination(hs.len(), dim, |combo| {
        let rows: Vec<&Halfspace> = combo.iter().map(|&i| &hs[i]).collect();
        if let Some(x) = solve_square(&rows) {
            if hs.iter().all(|h| h.eval(&x) >= -FEAS_TOL) {
                found.push(x);
            }
        }
    });
    dedupe(found)
}

/// Unit vector minimizing `|rows · d|`, i.e. a null direction when the
/// rows are rank deficient.
fn null_direction(rows: &[&Vec<f64>], dim: usize) -> Option<Vec<f64>> {
    let r = rows.len().max(dim);
    let m = DMatrix::from_fn(r, dim, |i, j| if i < rows.len() { rows[i][j] } else { 0.0 });
    let svd = m.svd(false, true);
    let vt = svd.v_t?;
    let (imin, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))?;
    Some(vt.row(imin).iter().copied().collect())
}

/// Step from `x` along `d` until a non-active halfspace blocks.
fn step_to_block(hs: &[Halfspace], x: &[f64], d: &[f64]) -> Result<Option<Vec<f64>>, GeometryError> {
    let mut t_best = f64::INFINITY;
    for h in hs {
        let rate = dot(&h.normal, d);
        let val = h.eval(x);
        if rate < -1e-12 {
            if val.abs() <= FEAS_TOL {
                return Ok(None);
            }
            t_best = t_best.min(val / -rate);
        }
    }
    if !t_best.is_finite() {
        return Err(GeometryError::UnboundedRegion);
    }
    Ok(Some(axpy(x, t_best, d)))
}

fn first_vertex(dim: usize, hs: &[Halfspace]) -> Result<Vec<f64>, GeometryError> {
    let mut lp = LpProblem::new();
    let xs: Vec<_> = (0..dim).map(|i| lp.add_free(format!("x{i}"))).collect();
    for (i, &x) in xs.iter().enumerate() {
        // generic weights avoid ties along faces
        lp.set_objective(x, 1.0 + (i as f64 + 1.0).sqrt() * 0.1173);
    }
    for h in hs {
        lp.add_constraint(
            xs.iter().zip(&h.normal).map(|(&v, &c)| (v, c)).collect(),
            Relation::Ge,
            -h.offset,
        );
    }
    let sol = RevisedSimplex::default()
        .solve(&lp)
        .map_err(|e| GeometryError::Numerical(e.to_string()))?;
    match sol.status {
        LpStatus::Infeasible => return Err(GeometryError::EmptyRegion),
        LpStatus::Unbounded => return Err(GeometryError::UnboundedRegion),
        LpStatus::Optimal => {}
    }
    let mut x: Vec<f64> = xs.iter().map(|&v| sol.value(v)).collect();
    // push onto a vertex if the optimum sits on a higher-dimensional face
    for _ in 0..dim {
        let act: Vec<&Vec<f64>> = hs
            .iter()
            .filter(|h| h.eval(&x).abs() <= FEAS_TOL)
            .map(|h| &h.normal)
            .collect();
        if rank(&act) >= dim {
            break;
        }
        let d = null_direction(&act, dim)
            .ok_or_else(|| GeometryError::Numerical("svd failed".into()))?;
        let neg: Vec<f64> = d.iter().map(|v| -v).collect();
        x = match step_to_block(hs, &x, &d)? {
            Some(y) => y,
            None => step_to_block(hs, &x, &neg)?.unwrap_or(x),
        };
    }
    Ok(x)
}

/// Adjacency walk over the vertex graph starting from an LP vertex.
fn enumerate_by_pivoting(dim: usize, hs: &[Halfspace]) -> Result<Vec<Vec<f64>>, GeometryError> {
    let start = first_vertex(dim, hs)?;
    let mut found: Vec<Vec<f64>> = vec![start.clone()];
    let mut queue = vec![start];
    while let Some(v) = queue.pop() {
        let act: Vec<usize> = (0..hs.len())
            .filter(|&j| hs[j].eval(&v).abs() <= FEAS_TOL)
            .collect();
        let mut next = Vec::new();
        let mut err = None;
        for_each_combination(act.len(), dim - 1, |combo| {
            if err.is_some() {
                return;
            }
            let rows: Vec<&Vec<f64>> = combo.iter().map(|&c| &hs[act[c]].normal).collect();
            if rank(&rows) + 1 != dim {
                return;
            }
            let Some(d) = null_direction(&rows, dim) else { return };
            for sign in [1.0, -1.0] {
                let dd: Vec<f64> = d.iter().map(|x| sign * x).collect();
                if act.iter().any(|&j| dot(&hs[j].normal, &dd) < -1e-9) {
                    continue;
                }
                match step_to_block(hs, &v, &dd) {
                    Ok(Some(w)) => next.push(w),
                    Ok(None) => {}
                    Err(e) => err = Some(e),
                }
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        for w in next {
            if !found.iter().any(|f| dist(f, &w) <= MERGE_TOL) {
                found.push(w.clone());
                queue.push(w);
            }
        }
    }
    Ok(found)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_box(n: usize) -> Polytope {
        Polytope::from_box(&vec![-1.0; n], &vec![1.0; n]).unwrap()
    }

    #[test]
    fn box_vertices_from_halfspaces() {
        let b = unit_box(2);
        let v = enumerate_vertices(2, b.halfspaces()).unwrap();
        assert_eq!(v.len(), 4);
        for p in v {
            assert!((p[0].abs() - 1.0).abs() < 1e-12 && (p[1].abs() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_halfspace_is_unbounded() {
        let r = enumerate_vertices(2, &[Halfspace::new(vec![1.0, 0.0], 0.0)]);
        assert!(matches!(r, Err(GeometryError::UnboundedRegion)));
    }

    #[test]
    fn wedge_is_unbounded() {
        let hs = [
            Halfspace::new(vec![1.0, 0.0], 0.0),
            Halfspace::new(vec![0.0, 1.0], 0.0),
            Halfspace::new(vec![-1.0, 1.0], 1.0),
        ];
        assert!(matches!(enumerate_vertices(2, &hs), Err(GeometryError::UnboundedRegion)));
    }

    #[test]
    fn contradictory_is_empty() {
        let hs = [
            Halfspace::new(vec![1.0, 0.0], -2.0),
            Halfspace::new(vec![-1.0, 0.0], 1.0),
            Halfspace::new(vec![0.0, 1.0], 1.0),
            Halfspace::new(vec![0.0, -1.0], 1.0),
        ];
        assert!(matches!(enumerate_vertices(2, &hs), Err(GeometryError::EmptyRegion)));
    }

    #[test]
    fn hypercube_by_pivoting() {
        for n in 4..=6 {
            let b = unit_box(n);
            let v = enumerate_vertices(n, b.halfspaces()).unwrap();
            assert_eq!(v.len(), 1 << n, "dimension {n}");
        }
    }

    #[test]
    fn simplex_4d_by_pivoting() {
        let mut hs: Vec<Halfspace> = (0..4)
            .map(|i| {
                let mut e = vec![0.0; 4];
                e[i] = 1.0;
                Halfspace::new(e, 0.0)
            })
            .collect();
        hs.push(Halfspace::new(vec![-1.0; 4], 1.0));
        let v = enumerate_vertices(4, &hs).unwrap();
        assert_eq!(v.len(), 5);
    }

    #[test]
    fn redundant_halfspace_dropped() {
        let mut hs = unit_box(2).halfspaces().to_vec();
        hs.push(Halfspace::new(vec![1.0, 1.0], 5.0));
        let p = Polytope::from_halfspaces(2, &hs).unwrap();
        assert_eq!(p.halfspaces().len(), 4);
        p.validate().unwrap();
    }

    #[test]
    fn box_split_at_zero() {
        let b = unit_box(2);
        let SplitOutcome::Cut { below, above } = b.split(&[1.0, 0.0], 0.0, 1e-9).unwrap() else {
            panic!("expected a cut");
        };
        assert_eq!(below.vertices().len(), 4);
        assert_eq!(above.vertices().len(), 4);
        let shared = below
            .vertices()
            .iter()
            .filter(|v| above.vertices().iter().any(|w| dist(v, w) < 1e-12))
            .count();
        assert_eq!(shared, 2);
        assert!((below.area().unwrap() - 2.0).abs() < 1e-12);
        below.validate().unwrap();
        above.validate().unwrap();
    }

    #[test]
    fn far_plane_leaves_box_alone() {
        let b = unit_box(2);
        assert!(matches!(b.split(&[1.0, 0.0], -5.0, 1e-9), Ok(SplitOutcome::Untouched)));
    }

    #[test]
    fn grazing_plane_is_degenerate() {
        let b = unit_box(2);
        assert!(matches!(b.split(&[1.0, 0.0], -1.0, 1e-9), Err(GeometryError::DegenerateCut)));
        assert!(matches!(b.split(&[1.0, 1.0], -2.0, 1e-9), Err(GeometryError::DegenerateCut)));
    }

    #[test]
    fn cube_split_diagonally() {
        let b = unit_box(3);
        let (lo, hi) = b.split_or_keep(&[1.0, 1.0, 1.0], 0.0, 1e-9).unwrap();
        lo.validate().unwrap();
        hi.validate().unwrap();
        // the cut through the center is a hexagon
        let on_cut = |p: &Polytope| {
            p.vertices()
                .iter()
                .filter(|v| (v[0] + v[1] + v[2]).abs() < 1e-12)
                .count()
        };
        assert_eq!(on_cut(&lo), 6);
        assert_eq!(on_cut(&hi), 6);
        assert_eq!(lo.vertices().len(), 10);
    }

    #[test]
    fn chebyshev_center_of_box() {
        let b = Polytope::from_box(&[0.0, 0.0], &[4.0, 2.0]).unwrap();
        let (c, r) = b.chebyshev_center();
        assert!((r - 1.0).abs() < 1e-9);
        assert!((c[1] - 1.0).abs() < 1e-9);
        assert!(c[0] >= 1.0 - 1e-9 && c[0] <= 3.0 + 1e-9);
    }

    #[test]
    fn planar_vertices_ccw() {
        let b = unit_box(2);
        let v = b.vertices();
        let mut s = 0.0;
        for i in 0..v.len() {
            let (a, c) = (&v[i], &v[(i + 1) % v.len()]);
            s += a[0] * c[1] - a[1] * c[0];
        }
        assert!(s > 0.0);
    }

    #[test]
    fn cube_edges() {
        assert_eq!(unit_box(3).edges().len(), 12);
    }

    #[test]
    fn combinations_count() {
        let mut k = 0;
        for_each_combination(6, 2, |_| k += 1);
        assert_eq!(k, 15);
        let mut k = 0;
        for_each_combination(3, 3, |_| k += 1);
        assert_eq!(k, 1);
        let mut k = 0;
        for_each_combination(5, 0, |_| k += 1);
        assert_eq!(k, 1);
    }
}
