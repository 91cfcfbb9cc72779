//! Piecewise-affine scalar functions over a partition.

use serde::{Deserialize, Serialize};

use crate::geometry::{Cell, Partition};
use crate::vecops::{dot, norm};

/// `x ↦ s · x + t` on one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffinePiece {
    pub s: Vec<f64>,
    pub t: f64,
}

impl AffinePiece {
    pub fn zero(n: usize) -> Self {
        Self {
            s: vec![0.0; n],
            t: 0.0,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        dot(&self.s, x) + self.t
    }

    /// Derivative along the cell's flow: `s · (A x + a)`.
    pub fn derivative(&self, cell: &Cell, x: &[f64]) -> f64 {
        dot(&self.s, &cell.flow(x))
    }

    pub fn gradient_norm(&self) -> f64 {
        norm(&self.s)
    }

    pub fn scaled(&self, k: f64) -> AffinePiece {
        AffinePiece {
            s: self.s.iter().map(|v| v * k).collect(),
            t: self.t * k,
        }
    }
}

/// One affine piece per cell of a partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PwaField {
    pub pieces: Vec<AffinePiece>,
}

impl PwaField {
    pub fn new(pieces: Vec<AffinePiece>) -> Self {
        Self { pieces }
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn piece(&self, i: usize) -> &AffinePiece {
        &self.pieces[i]
    }

    /// Value of cell `i`'s piece at `x`.
    pub fn value(&self, i: usize, x: &[f64]) -> f64 {
        self.pieces[i].eval(x)
    }

    /// Value at `x` through whichever cell contains it.
    pub fn value_at(&self, partition: &Partition, x: &[f64]) -> Option<f64> {
        partition.locate_one(x).map(|i| self.value(i, x))
    }

    /// Value at pool vertex `k` through cell `i`.
    pub fn vertex_value(&self, partition: &Partition, i: usize, k: usize) -> f64 {
        self.value(i, partition.vertex(k))
    }

    /// Largest mismatch between incident cells at shared vertices.
    pub fn continuity_gap(&self, partition: &Partition) -> f64 {
        let mut worst: f64 = 0.0;
        for k in partition.shared_vertices() {
            let cs = partition.vertex_cells(k);
            let v = partition.vertex(k);
            let h0 = self.value(cs[0], v);
            for &j in &cs[1..] {
                worst = worst.max((self.value(j, v) - h0).abs());
            }
        }
        worst
    }

    pub fn scaled(&self, k: f64) -> PwaField {
        PwaField {
            pieces: self.pieces.iter().map(|p| p.scaled(k)).collect(),
        }
    }

    /// Pieces for a refined partition, copying each parent's piece.
    pub fn inherit(&self, parent: &[usize]) -> PwaField {
        PwaField {
            pieces: parent.iter().map(|&p| self.pieces[p].clone()).collect(),
        }
    }
}
