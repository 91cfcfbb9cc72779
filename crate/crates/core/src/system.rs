//! System descriptions on disk and the built-in fixtures.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Cell, GeometryError, Halfspace, Partition, Polytope};
use crate::iise::CONTINUITY_TOL;
use crate::matrix::Matrix;
use crate::relu::{enumerate_regions, ReluError, ReluNetwork, DEFAULT_REGION_CAP};

pub const SPEC_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("unsupported schema version {0}")]
    SchemaVersion(u32),
    #[error("invalid domain: {0}")]
    Domain(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("cells do not cover the domain near {0:?}")]
    Coverage(Vec<f64>),
    #[error("dynamics are discontinuous (gap {0:.3e})")]
    Discontinuous(f64),
    #[error("unknown fixture '{0}'")]
    UnknownFixture(String),
    #[error(transparent)]
    Relu(#[from] ReluError),
    #[error("cell {cell}: {source}")]
    Cell { cell: usize, source: GeometryError },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// One cell `{x : E x + e ≥ 0}` with dynamics `A x + a`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PwaCellSpec {
    #[serde(rename = "E")]
    pub e_mat: Matrix,
    pub e: Vec<f64>,
    #[serde(rename = "A")]
    pub a_mat: Matrix,
    pub a: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dynamics {
    Pwa { cells: Vec<PwaCellSpec> },
    Relu(ReluNetwork),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemSpec {
    pub schema_version: u32,
    pub name: String,
    pub domain: BoxDomain,
    pub dynamics: Dynamics,
}

impl SystemSpec {
    pub fn dim(&self) -> usize {
        self.domain.lower.len()
    }

    pub fn domain_polytope(&self) -> Result<Polytope, SpecError> {
        let d = &self.domain;
        if d.lower.is_empty() || d.lower.len() != d.upper.len() {
            return Err(SpecError::Domain("lower and upper must have equal nonzero length".into()));
        }
        if d.lower.iter().zip(&d.upper).any(|(l, u)| !(l < u) || !l.is_finite() || !u.is_finite()) {
            return Err(SpecError::Domain("bounds must be finite with lower < upper".into()));
        }
        Ok(Polytope::from_box(&d.lower, &d.upper)?)
    }

    /// Validate and build the dynamics partition.
    pub fn partition(&self) -> Result<Partition, SpecError> {
        if self.schema_version != SPEC_SCHEMA_VERSION {
            return Err(SpecError::SchemaVersion(self.schema_version));
        }
        let domain = self.domain_polytope()?;
        let n = domain.dim();
        let p = match &self.dynamics {
            Dynamics::Relu(net) => {
                if net.states() != n {
                    return Err(SpecError::Dimension(format!(
                        "network has {} states, domain has {n}",
                        net.states()
                    )));
                }
                enumerate_regions(net, &domain, DEFAULT_REGION_CAP)?
            }
            Dynamics::Pwa { cells } => {
                let mut out = Vec::with_capacity(cells.len());
                for (i, c) in cells.iter().enumerate() {
                    out.push(c.to_cell(i, n)?);
                }
                let p = Partition::new(domain, out)?;
                check_coverage(&p)?;
                p
            }
        };
        let gap = p.dynamics_discontinuity();
        if gap > CONTINUITY_TOL {
            return Err(SpecError::Discontinuous(gap));
        }
        Ok(p)
    }

    /// Spec with explicit cells taken from a partition.
    pub fn from_partition(name: &str, p: &Partition) -> SystemSpec {
        let (lower, upper) = p.domain().bounding_box();
        let cells = p
            .cells()
            .iter()
            .map(|c| {
                let hs = c.region.halfspaces();
                PwaCellSpec {
                    e_mat: Matrix::from_rows(&hs.iter().map(|h| h.normal.clone()).collect::<Vec<_>>()),
                    e: hs.iter().map(|h| h.offset).collect(),
                    a_mat: c.flow_matrix.clone(),
                    a: c.flow_offset.clone(),
                }
            })
            .collect();
        SystemSpec {
            schema_version: SPEC_SCHEMA_VERSION,
            name: name.to_string(),
            domain: BoxDomain { lower, upper },
            dynamics: Dynamics::Pwa { cells },
        }
    }
}

impl PwaCellSpec {
    fn to_cell(&self, i: usize, n: usize) -> Result<Cell, SpecError> {
        let m = self.e_mat.rows();
        if self.e_mat.cols() != n || self.e.len() != m {
            return Err(SpecError::Dimension(format!("cell {i}: E is {m}x{}, e has {}", self.e_mat.cols(), self.e.len())));
        }
        if self.a_mat.rows() != n || self.a_mat.cols() != n || self.a.len() != n {
            return Err(SpecError::Dimension(format!("cell {i}: A must be {n}x{n} and a length {n}")));
        }
        let hs: Vec<Halfspace> = (0..m)
            .map(|r| Halfspace::new(self.e_mat.row(r).to_vec(), self.e[r]))
            .collect();
        let region = Polytope::from_halfspaces(n, &hs).map_err(|source| SpecError::Cell { cell: i, source })?;
        Ok(Cell::new(i, region, self.a_mat.clone(), self.a.clone()))
    }
}

/// Planar partitions compare areas; others are probed at random points.
fn check_coverage(p: &Partition) -> Result<(), SpecError> {
    let domain = p.domain();
    if let (Some(total), Some(dom)) = (p.area(), domain.area()) {
        if (total - dom).abs() > 1e-6 * dom {
            let witness = sample_box(domain, 0, 4000).into_iter().find(|x| p.locate(x).is_empty());
            return Err(SpecError::Coverage(witness.unwrap_or_else(|| domain.centroid())));
        }
        return Ok(());
    }
    match sample_box(domain, 0, 4000).into_iter().find(|x| p.locate(x).is_empty()) {
        Some(x) => Err(SpecError::Coverage(x)),
        None => Ok(()),
    }
}

fn sample_box(domain: &Polytope, seed: u64, count: usize) -> Vec<Vec<f64>> {
    let (lo, hi) = domain.bounding_box();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| lo.iter().zip(&hi).map(|(l, h)| rng.random_range(*l..*h)).collect())
        .collect()
}

pub const FIXTURES: [&str; 3] = ["stable-linear", "unstable-linear", "pendulum"];

pub fn fixture(name: &str) -> Result<SystemSpec, SpecError> {
    match name {
        "stable-linear" => Ok(linear_fixture(name, -1.0)),
        "unstable-linear" => Ok(linear_fixture(name, 1.0)),
        "pendulum" => Ok(pendulum()),
        _ => Err(SpecError::UnknownFixture(name.to_string())),
    }
}

/// `ẋ = k x` on `[-1, 1]²`.
fn linear_fixture(name: &str, k: f64) -> SystemSpec {
    let domain = Polytope::from_box(&[-1.0, -1.0], &[1.0, 1.0]).unwrap();
    let cell = Cell::new(0, domain.clone(), Matrix::scaled_identity(2, k), vec![0.0, 0.0]);
    SystemSpec::from_partition(name, &Partition::single(domain, cell).unwrap())
}

/// Three-piece interpolant of `sin` on `[-π, π]` through `(±π/2, ±1)`.
pub fn sin_pwa(x: f64) -> f64 {
    let k = 2.0 / PI;
    if x < -FRAC_PI_2 {
        -k * x - 2.0
    } else if x > FRAC_PI_2 {
        -k * x + 2.0
    } else {
        k * x
    }
}

pub const PENDULUM_SAT: f64 = 1.5;

/// `u = sat(-3 x1 - 3 x2, ±1.5)`
pub fn pendulum_control(x: &[f64]) -> f64 {
    (-3.0 * x[0] - 3.0 * x[1]).clamp(-PENDULUM_SAT, PENDULUM_SAT)
}

/// `ẋ1 = x2`, `ẋ2 = sin_pwa(x1) + u`
pub fn pendulum_rhs(x: &[f64]) -> Vec<f64> {
    vec![x[1], sin_pwa(x[0]) + pendulum_control(x)]
}

/// Saturated inverted pendulum on `[-π, π]²`, split where the sine
/// interpolant or the saturation changes piece.
pub fn pendulum() -> SystemSpec {
    let domain = Polytope::from_box(&[-PI, -PI], &[PI, PI]).unwrap();
    let cuts: [([f64; 2], f64); 4] = [
        ([1.0, 0.0], FRAC_PI_2),
        ([1.0, 0.0], -FRAC_PI_2),
        ([1.0, 1.0], 0.5),
        ([1.0, 1.0], -0.5),
    ];
    let mut regions = vec![domain.clone()];
    for (normal, offset) in cuts {
        let mut next = Vec::new();
        for r in regions {
            match r.split_or_keep(&normal, offset, 1e-9) {
                Some((a, b)) => next.extend([a, b]),
                None => next.push(r),
            }
        }
        regions = next;
    }
    let k = 2.0 / PI;
    let cells = regions
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let c = r.centroid();
            let (ks, cs) = if c[0] < -FRAC_PI_2 {
                (-k, -2.0)
            } else if c[0] > FRAC_PI_2 {
                (-k, 2.0)
            } else {
                (k, 0.0)
            };
            let z = c[0] + c[1];
            let (ku, cu) = if z < -0.5 {
                ([0.0, 0.0], PENDULUM_SAT)
            } else if z > 0.5 {
                ([0.0, 0.0], -PENDULUM_SAT)
            } else {
                ([-3.0, -3.0], 0.0)
            };
            let a = Matrix::from_rows(&[vec![0.0, 1.0], vec![ks + ku[0], ku[1]]]);
            Cell::new(i, r, a, vec![0.0, cs + cu])
        })
        .collect();
    let p = Partition::new(domain, cells).unwrap();
    SystemSpec::from_partition("pendulum", &p)
}
