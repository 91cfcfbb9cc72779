use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::polytope::{affine_rank, FACET_TOL, MERGE_TOL};
use super::{Cell, GeometryError, Polytope};
use crate::vecops::{dist, max_abs_diff};

/// Containment tolerance used by [`Partition::locate`].
pub const LOCATE_TOL: f64 = 1e-9;

/// Cells covering a domain, with a shared vertex pool.
///
/// The incidence of a cell lists every pool vertex in its closure, which
/// includes vertices of neighbouring cells that lie on one of its facets
/// (hanging vertices). Continuity constraints are stated on these pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(into = "PartitionDoc", try_from = "PartitionDoc")]
pub struct Partition {
    domain: Polytope,
    cells: Vec<Cell>,
    pool: Vec<Vec<f64>>,
    incidence: Vec<Vec<usize>>,
    vertex_cells: Vec<Vec<usize>>,
    grid: Grid,
}

#[derive(Serialize, Deserialize)]
struct PartitionDoc {
    domain: Polytope,
    cells: Vec<Cell>,
}

impl From<Partition> for PartitionDoc {
    fn from(p: Partition) -> Self {
        PartitionDoc {
            domain: p.domain,
            cells: p.cells,
        }
    }
}

impl TryFrom<PartitionDoc> for Partition {
    type Error = GeometryError;

    fn try_from(doc: PartitionDoc) -> Result<Self, Self::Error> {
        Partition::new(doc.domain, doc.cells)
    }
}

impl Partition {
    /// Build from cells; ids are reassigned to positions.
    pub fn new(domain: Polytope, mut cells: Vec<Cell>) -> Result<Self, GeometryError> {
        let n = domain.dim();
        if cells.is_empty() {
            return Err(GeometryError::EmptyRegion);
        }
        for (i, c) in cells.iter_mut().enumerate() {
            if c.dim() != n || c.flow_matrix.rows() != n || c.flow_offset.len() != n {
                return Err(GeometryError::DimensionMismatch);
            }
            c.id = i;
        }

        let mut merger = VertexMerger::new(n);
        for c in &cells {
            for v in c.region.vertices() {
                merger.insert(v);
            }
        }
        let pool = merger.points;
        let grid = Grid::build(&domain, &cells);

        let mut incidence = vec![Vec::new(); cells.len()];
        let mut vertex_cells = vec![Vec::new(); pool.len()];
        for (k, v) in pool.iter().enumerate() {
            for &i in grid.candidates(v) {
                if cells[i].region.contains(v, FACET_TOL) {
                    incidence[i].push(k);
                    vertex_cells[k].push(i);
                }
            }
        }
        for inc in &mut incidence {
            inc.sort_unstable();
        }
        for vc in &mut vertex_cells {
            vc.sort_unstable();
        }
        Ok(Self {
            domain,
            cells,
            pool,
            incidence,
            vertex_cells,
            grid,
        })
    }

    /// The domain as a single cell with the given dynamics.
    pub fn single(domain: Polytope, cell: Cell) -> Result<Self, GeometryError> {
        let c = cell.with_region(domain.clone());
        Self::new(domain, vec![c])
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn domain(&self) -> &Polytope {
        &self.domain
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn cell(&self, i: usize) -> &Cell {
        &self.cells[i]
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn pool(&self) -> &[Vec<f64>] {
        &self.pool
    }

    pub fn vertex(&self, k: usize) -> &[f64] {
        &self.pool[k]
    }

    /// Pool vertex ids in the closure of cell `i`.
    pub fn incidence(&self, i: usize) -> &[usize] {
        &self.incidence[i]
    }

    /// Cells whose closure contains pool vertex `k`.
    pub fn vertex_cells(&self, k: usize) -> &[usize] {
        &self.vertex_cells[k]
    }

    /// All (cell, vertex) incidence pairs.
    pub fn incidence_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.incidence
            .iter()
            .enumerate()
            .flat_map(|(i, ks)| ks.iter().map(move |&k| (i, k)))
    }

    pub fn num_incidence_pairs(&self) -> usize {
        self.incidence.iter().map(Vec::len).sum()
    }

    /// Pool ids shared by at least two cells.
    pub fn shared_vertices(&self) -> Vec<usize> {
        (0..self.pool.len())
            .filter(|&k| self.vertex_cells[k].len() > 1)
            .collect()
    }

    /// Pool id of the vertex at `x`, if any.
    pub fn find_vertex(&self, x: &[f64]) -> Option<usize> {
        self.grid
            .candidates(x)
            .iter()
            .flat_map(|&i| self.incidence[i].iter())
            .copied()
            .find(|&k| dist(&self.pool[k], x) <= MERGE_TOL)
    }

    /// Cells containing `x` within `tol`.
    pub fn locate_with_tol(&self, x: &[f64], tol: f64) -> Vec<usize> {
        if x.len() != self.dim() || !self.domain.contains(x, tol) {
            return Vec::new();
        }
        let mut out: Vec<usize> = self
            .grid
            .candidates(x)
            .iter()
            .copied()
            .filter(|&i| self.cells[i].region.contains(x, tol))
            .collect();
        out.sort_unstable();
        out
    }

    /// Cells containing `x`; more than one exactly on shared boundaries.
    pub fn locate(&self, x: &[f64]) -> Vec<usize> {
        self.locate_with_tol(x, LOCATE_TOL)
    }

    /// A single containing cell, preferring the one with the deepest interior.
    pub fn locate_one(&self, x: &[f64]) -> Option<usize> {
        let cands = self.grid.candidates(x);
        let mut best: Option<(usize, f64)> = None;
        for &i in cands {
            let d = self.cells[i].region.depth(x);
            if d >= -LOCATE_TOL && best.map_or(true, |(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        best.map(|(i, _)| i)
    }

    /// Vector field value; on shared boundaries the first located cell wins.
    pub fn flow(&self, x: &[f64]) -> Option<Vec<f64>> {
        self.locate(x).first().map(|&i| self.cells[i].flow(x))
    }

    /// Cells sharing a facet (an `n-1` dimensional piece of boundary) with `i`.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        let mut counts: HashMap<usize, Vec<usize>> = HashMap::new();
        for &k in &self.incidence[i] {
            for &j in &self.vertex_cells[k] {
                if j != i {
                    counts.entry(j).or_default().push(k);
                }
            }
        }
        let n = self.dim();
        let mut out: Vec<usize> = counts
            .into_iter()
            .filter(|(_, ks)| {
                ks.len() >= n && {
                    let pts: Vec<&Vec<f64>> = ks.iter().map(|&k| &self.pool[k]).collect();
                    affine_rank(&pts) + 1 >= n
                }
            })
            .map(|(j, _)| j)
            .collect();
        out.sort_unstable();
        out
    }

    /// Largest disagreement of `A x + a` between cells sharing a vertex.
    pub fn dynamics_discontinuity(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (k, cs) in self.vertex_cells.iter().enumerate() {
            if cs.len() < 2 {
                continue;
            }
            let v = &self.pool[k];
            let f0 = self.cells[cs[0]].flow(v);
            for &j in &cs[1..] {
                worst = worst.max(max_abs_diff(&f0, &self.cells[j].flow(v)));
            }
        }
        worst
    }

    pub fn domain_diameter(&self) -> f64 {
        self.domain.diameter()
    }

    /// Whether pool vertex `k` lies on the domain boundary.
    pub fn on_domain_boundary(&self, k: usize) -> bool {
        let v = &self.pool[k];
        self.domain
            .halfspaces()
            .iter()
            .any(|h| h.eval(v).abs() <= FACET_TOL)
    }

    /// Replace every cell by the regions returned from `f`, which inherit
    /// that cell's dynamics. Returns the new partition and the parent index
    /// of every new cell.
    pub fn map_cells<E: From<GeometryError>>(
        &self,
        mut f: impl FnMut(usize, &Cell) -> Result<Vec<Polytope>, E>,
    ) -> Result<(Partition, Vec<usize>), E> {
        let mut cells = Vec::with_capacity(self.cells.len());
        let mut parent = Vec::with_capacity(self.cells.len());
        for (i, c) in self.cells.iter().enumerate() {
            for region in f(i, c)? {
                cells.push(c.with_region(region));
                parent.push(i);
            }
        }
        Ok((Partition::new(self.domain.clone(), cells)?, parent))
    }

    /// Same partition restricted to a subset of cells, in the given order.
    pub fn subset(&self, keep: &[usize]) -> Result<Partition, GeometryError> {
        let cells = keep.iter().map(|&i| self.cells[i].clone()).collect();
        Partition::new(self.domain.clone(), cells)
    }

    /// Sum of exact cell areas (planar partitions only).
    pub fn area(&self) -> Option<f64> {
        self.cells.iter().map(|c| c.region.area()).sum()
    }
}

/// Hash-grid deduplication of points within `MERGE_TOL`.
struct VertexMerger {
    dim: usize,
    cell: f64,
    buckets: HashMap<Vec<i64>, Vec<usize>>,
    points: Vec<Vec<f64>>,
}

impl VertexMerger {
    fn new(dim: usize) -> Self {
        Self {
            dim,
            cell: 1e-5,
            buckets: HashMap::new(),
            points: Vec::new(),
        }
    }

    fn key(&self, x: &[f64]) -> Vec<i64> {
        x.iter().map(|v| (v / self.cell).floor() as i64).collect()
    }

    fn insert(&mut self, x: &[f64]) -> usize {
        let key = self.key(x);
        let mut offsets = vec![-1i64; self.dim];
        loop {
            let probe: Vec<i64> = key.iter().zip(&offsets).map(|(k, o)| k + o).collect();
            if let Some(ids) = self.buckets.get(&probe) {
                for &id in ids {
                    if dist(&self.points[id], x) <= MERGE_TOL {
                        return id;
                    }
                }
            }
            // odometer over {-1, 0, 1}^dim
            let mut i = 0;
            loop {
                if i == self.dim {
                    let id = self.points.len();
                    self.points.push(x.to_vec());
                    self.buckets.entry(key).or_default().push(id);
                    return id;
                }
                offsets[i] += 1;
                if offsets[i] <= 1 {
                    break;
                }
                offsets[i] = -1;
                i += 1;
            }
        }
    }
}

/// Uniform grid over the domain's bounding box listing overlapping cells.
#[derive(Debug, Clone)]
struct Grid {
    lo: Vec<f64>,
    step: Vec<f64>,
    res: usize,
    buckets: Vec<Vec<usize>>,
}

impl Grid {
    fn build(domain: &Polytope, cells: &[Cell]) -> Grid {
        let n = domain.dim();
        let (lo, hi) = domain.bounding_box();
        let target = (cells.len() as f64 * 2.0).max(1.0);
        let res = (target.powf(1.0 / n as f64).ceil() as usize).clamp(1, 256);
        let res = if res.pow(n as u32) > 1 << 20 { 1 } else { res };
        let step: Vec<f64> = lo
            .iter()
            .zip(&hi)
            .map(|(l, h)| ((h - l) / res as f64).max(1e-300))
            .collect();
        let mut grid = Grid {
            lo,
            step,
            res,
            buckets: vec![Vec::new(); res.pow(n as u32)],
        };
        for (i, c) in cells.iter().enumerate() {
            let (clo, chi) = c.region.bounding_box();
            let a: Vec<usize> = (0..n).map(|d| grid.index(d, clo[d] - 1e-6)).collect();
            let b: Vec<usize> = (0..n).map(|d| grid.index(d, chi[d] + 1e-6)).collect();
            let mut cur = a.clone();
            loop {
                let flat = grid.flatten(&cur);
                grid.buckets[flat].push(i);
                let mut d = 0;
                loop {
                    if d == n {
                        break;
                    }
                    cur[d] += 1;
                    if cur[d] <= b[d] {
                        break;
                    }
                    cur[d] = a[d];
                    d += 1;
                }
                if d == n {
                    break;
                }
            }
        }
        grid
    }

    fn index(&self, d: usize, x: f64) -> usize {
        let t = ((x - self.lo[d]) / self.step[d]).floor();
        if t.is_nan() || t < 0.0 {
            0
        } else {
            (t as usize).min(self.res - 1)
        }
    }

    fn flatten(&self, idx: &[usize]) -> usize {
        idx.iter().rev().fold(0, |acc, &i| acc * self.res + i)
    }

    fn candidates(&self, x: &[f64]) -> &[usize] {
        let idx: Vec<usize> = x.iter().enumerate().map(|(d, &v)| self.index(d, v)).collect();
        &self.buckets[self.flatten(&idx)]
    }
}
