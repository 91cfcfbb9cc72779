//! Polytopes, polytopic partitions with affine dynamics, and refinement.

mod partition;
mod polytope;
mod refine;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;

pub use partition::{Partition, LOCATE_TOL};
pub use polytope::{enumerate_vertices, Halfspace, Polytope, SplitOutcome, FACET_TOL, FEAS_TOL, MERGE_TOL};
pub use refine::{fan, refine_cell, RefineRule};

pub(crate) use polytope::affine_rank;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GeometryError {
    #[error("region is unbounded")]
    UnboundedRegion,
    #[error("region is empty")]
    EmptyRegion,
    #[error("hyperplane only grazes the cell")]
    DegenerateCut,
    #[error("cell diameter {diameter:.3e} is below the refinement floor {floor:.3e}")]
    TooSmall { diameter: f64, floor: f64 },
    #[error("dimension mismatch")]
    DimensionMismatch,
    #[error("non-finite input")]
    NonFinite,
    #[error("numerical failure: {0}")]
    Numerical(String),
}

/// A polytope carrying affine dynamics `ẋ = A x + a`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Cell {
    pub id: usize,
    pub region: Polytope,
    #[serde(rename = "A")]
    pub flow_matrix: Matrix,
    #[serde(rename = "a")]
    pub flow_offset: Vec<f64>,
}

impl Cell {
    pub fn new(id: usize, region: Polytope, flow_matrix: Matrix, flow_offset: Vec<f64>) -> Self {
        let n = region.dim();
        assert_eq!(flow_matrix.rows(), n, "flow matrix rows");
        assert_eq!(flow_matrix.cols(), n, "flow matrix cols");
        assert_eq!(flow_offset.len(), n, "flow offset length");
        Self {
            id,
            region,
            flow_matrix,
            flow_offset,
        }
    }

    pub fn dim(&self) -> usize {
        self.region.dim()
    }

    /// `A x + a`
    pub fn flow(&self, x: &[f64]) -> Vec<f64> {
        let mut f = vec![0.0; x.len()];
        self.flow_into(x, &mut f);
        f
    }

    /// [`Cell::flow`] without allocating.
    pub fn flow_into(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            *o = self.flow_offset[r] + self.flow_matrix.row(r).iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// A cell over `region` with the same dynamics.
    pub fn with_region(&self, region: Polytope) -> Cell {
        Cell {
            id: self.id,
            region,
            flow_matrix: self.flow_matrix.clone(),
            flow_offset: self.flow_offset.clone(),
        }
    }
}
