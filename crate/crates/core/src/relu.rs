//! Single-hidden-layer ReLU networks and their exact piecewise-affine form.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Cell, GeometryError, Partition, Polytope};
use crate::matrix::Matrix;

/// Default cap on the number of activation regions.
pub const DEFAULT_REGION_CAP: usize = 100_000;

#[derive(Debug, Error)]
pub enum ReluError {
    #[error("network dimensions are inconsistent: {0}")]
    DimensionMismatch(String),
    #[error("network weights must be finite")]
    NonFinite,
    #[error("region count exceeds the cap of {cap}")]
    RegionBudgetExceeded { cap: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// `x ↦ W2 · max(0, W1 x + b1) + b2`
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "RawNetwork")]
pub struct ReluNetwork {
    #[serde(rename = "W1")]
    w1: Matrix,
    b1: Vec<f64>,
    #[serde(rename = "W2")]
    w2: Matrix,
    b2: Vec<f64>,
}

#[derive(Deserialize)]
struct RawNetwork {
    #[serde(rename = "W1")]
    w1: Matrix,
    b1: Vec<f64>,
    #[serde(rename = "W2")]
    w2: Matrix,
    b2: Vec<f64>,
}

impl TryFrom<RawNetwork> for ReluNetwork {
    type Error = ReluError;

    fn try_from(r: RawNetwork) -> Result<Self, Self::Error> {
        ReluNetwork::new(r.w1, r.b1, r.w2, r.b2)
    }
}

impl ReluNetwork {
    pub fn new(w1: Matrix, b1: Vec<f64>, w2: Matrix, b2: Vec<f64>) -> Result<Self, ReluError> {
        let (h, n) = (w1.rows(), w1.cols());
        if b1.len() != h {
            return Err(ReluError::DimensionMismatch(format!("b1 has {} entries, expected {h}", b1.len())));
        }
        if w2.rows() != n || w2.cols() != h {
            return Err(ReluError::DimensionMismatch(format!(
                "W2 is {}x{}, expected {n}x{h}",
                w2.rows(),
                w2.cols()
            )));
        }
        if b2.len() != n {
            return Err(ReluError::DimensionMismatch(format!("b2 has {} entries, expected {n}", b2.len())));
        }
        let finite = w1.is_finite() && w2.is_finite() && b1.iter().chain(&b2).all(|v| v.is_finite());
        if !finite {
            return Err(ReluError::NonFinite);
        }
        Ok(Self { w1, b1, w2, b2 })
    }

    pub fn hidden(&self) -> usize {
        self.w1.rows()
    }

    pub fn states(&self) -> usize {
        self.w1.cols()
    }

    pub fn w1(&self) -> &Matrix {
        &self.w1
    }

    pub fn b1(&self) -> &[f64] {
        &self.b1
    }

    pub fn w2(&self) -> &Matrix {
        &self.w2
    }

    pub fn b2(&self) -> &[f64] {
        &self.b2
    }

    fn preactivation(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.w1.mul_vec(x);
        for (zi, bi) in z.iter_mut().zip(&self.b1) {
            *zi += bi;
        }
        z
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let z: Vec<f64> = self.preactivation(x).into_iter().map(|v| v.max(0.0)).collect();
        let mut y = self.w2.mul_vec(&z);
        for (yi, bi) in y.iter_mut().zip(&self.b2) {
            *yi += bi;
        }
        y
    }

    /// Unit `j` is active when `W1_j · x + b1_j ≥ 0`.
    pub fn activation_pattern(&self, x: &[f64]) -> Vec<bool> {
        self.preactivation(x).into_iter().map(|v| v >= 0.0).collect()
    }

    /// `(W2 diag(bits) W1, W2 diag(bits) b1 + b2)`
    pub fn affine_for_pattern(&self, bits: &[bool]) -> (Matrix, Vec<f64>) {
        let (h, n) = (self.hidden(), self.states());
        let mut masked = Matrix::zeros(h, n);
        let mut mb = vec![0.0; h];
        for j in 0..h {
            if bits[j] {
                for k in 0..n {
                    masked.set(j, k, self.w1.get(j, k));
                }
                mb[j] = self.b1[j];
            }
        }
        let a = self.w2.mul(&masked);
        let mut off = self.w2.mul_vec(&mb);
        for (o, b) in off.iter_mut().zip(&self.b2) {
            *o += b;
        }
        (a, off)
    }
}

/// Split `domain` by every neuron hyperplane and attach the exact affine
/// dynamics of each activation region.
pub fn enumerate_regions(net: &ReluNetwork, domain: &Polytope, cap: usize) -> Result<Partition, ReluError> {
    let n = net.states();
    if domain.dim() != n {
        return Err(ReluError::DimensionMismatch(format!(
            "domain is {}-dimensional, network has {n} states",
            domain.dim()
        )));
    }
    let tol = 1e-9 * domain.diameter().max(1.0);
    let mut regions: Vec<(Polytope, Vec<bool>)> = vec![(domain.clone(), Vec::new())];
    for j in 0..net.hidden() {
        let normal = net.w1.row(j).to_vec();
        let offset = net.b1[j];
        let mut next = Vec::with_capacity(regions.len() * 2);
        let mut cuts = 0usize;
        for (poly, mut bits) in regions {
            match poly.split_or_keep(&normal, offset, tol) {
                Some((below, above)) => {
                    cuts += 1;
                    let mut on = bits.clone();
                    on.push(true);
                    bits.push(false);
                    next.push((below, bits));
                    next.push((above, on));
                }
                None => {
                    let c = poly.centroid();
                    let z: f64 = normal.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>() + offset;
                    bits.push(z >= 0.0);
                    next.push((poly, bits));
                }
            }
            if next.len() > cap {
                return Err(ReluError::RegionBudgetExceeded { cap });
            }
        }
        if cuts == 0 {
            log::debug!("neuron {j} does not cut the domain");
        }
        regions = next;
    }
    let cells = regions
        .into_iter()
        .enumerate()
        .map(|(i, (poly, bits))| {
            let (a, off) = net.affine_for_pattern(&bits);
            Cell::new(i, poly, a, off)
        })
        .collect();
    Ok(Partition::new(domain.clone(), cells)?)
}
