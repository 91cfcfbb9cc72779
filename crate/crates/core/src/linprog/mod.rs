//! Linear-program assembly and solving.
//!
//! Problems are built from named variables and sparse constraint rows, then
//! handed to an [`LpBackend`]. Three backends are available: a dense revised
//! simplex, exact about infeasible and unbounded problems but slow beyond a
//! few hundred variables, a sparse interior-point method of our own, and the
//! Clarabel conic solver. The default [`Builtin`] backend uses the simplex
//! for small problems and Clarabel for large ones.

mod conic;
mod ipm;
mod simplex;
mod sparse;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use conic::Clarabel;
pub use ipm::InteriorPoint;
pub use simplex::RevisedSimplex;

/// Environment variable consulted by [`solve`] to pick a backend.
pub const BACKEND_ENV: &str = "ROA_LP_BACKEND";

/// Maximum constraint violation accepted on an optimal solution.
pub const FEASIBILITY_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum LpError {
    #[error("solver failure: {0}")]
    SolverFailure(String),
    #[error("unknown LP backend `{0}`")]
    UnknownBackend(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VarId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Relation::Le => "<=",
            Relation::Eq => "=",
            Relation::Ge => ">=",
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub lower: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Constraint {
    pub terms: Vec<(VarId, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

impl Constraint {
    pub fn activity(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(v, c)| c * x[v.0]).sum()
    }

    /// Amount by which `x` violates this row (zero when satisfied).
    pub fn violation(&self, x: &[f64]) -> f64 {
        let lhs = self.activity(x);
        match self.relation {
            Relation::Le => (lhs - self.rhs).max(0.0),
            Relation::Ge => (self.rhs - lhs).max(0.0),
            Relation::Eq => (lhs - self.rhs).abs(),
        }
    }
}

/// A minimization problem over named variables.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LpProblem {
    variables: Vec<Variable>,
    objective: BTreeMap<VarId, f64>,
    constraints: Vec<Constraint>,
}

impl LpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declare a variable, free unless `lower` is given.
    pub fn add_var(&mut self, name: impl Into<String>, lower: Option<f64>) -> VarId {
        self.variables.push(Variable {
            name: name.into(),
            lower,
        });
        VarId(self.variables.len() - 1)
    }

    pub fn add_free(&mut self, name: impl Into<String>) -> VarId {
        self.add_var(name, None)
    }

    /// Slack variables are always bounded below by zero.
    pub fn add_slack(&mut self, name: impl Into<String>) -> VarId {
        self.add_var(name, Some(0.0))
    }

    pub fn set_objective(&mut self, var: VarId, coef: f64) {
        assert!(coef.is_finite(), "objective coefficient must be finite");
        self.check_var(var);
        if coef == 0.0 {
            self.objective.remove(&var);
        } else {
            self.objective.insert(var, coef);
        }
    }

    pub fn add_constraint(&mut self, terms: Vec<(VarId, f64)>, relation: Relation, rhs: f64) {
        for &(v, c) in &terms {
            self.check_var(v);
            assert!(c.is_finite(), "constraint coefficient must be finite");
        }
        assert!(rhs.is_finite(), "constraint rhs must be finite");
        // merge duplicate references to the same variable
        let mut merged: BTreeMap<VarId, f64> = BTreeMap::new();
        for (v, c) in terms {
            *merged.entry(v).or_insert(0.0) += c;
        }
        let terms = merged.into_iter().filter(|&(_, c)| c != 0.0).collect();
        self.constraints.push(Constraint {
            terms,
            relation,
            rhs,
        });
    }

    fn check_var(&self, var: VarId) {
        assert!(
            var.0 < self.variables.len(),
            "variable {} was not declared",
            var.0
        );
    }

    pub fn num_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn objective(&self) -> &BTreeMap<VarId, f64> {
        &self.objective
    }

    pub fn objective_coef(&self, var: VarId) -> f64 {
        self.objective.get(&var).copied().unwrap_or(0.0)
    }

    pub fn var_by_name(&self, name: &str) -> Option<VarId> {
        self.variables
            .iter()
            .position(|v| v.name == name)
            .map(VarId)
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().map(|(v, c)| c * x[v.0]).sum()
    }

    /// Largest violation over all rows and variable bounds.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let rows = self
            .constraints
            .iter()
            .map(|c| c.violation(x))
            .fold(0.0, f64::max);
        let bounds = self
            .variables
            .iter()
            .zip(x)
            .filter_map(|(v, &xi)| v.lower.map(|l| (l - xi).max(0.0)))
            .fold(0.0, f64::max);
        rows.max(bounds)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Primal values indexed by [`VarId`]; empty unless optimal.
    pub x: Vec<f64>,
    /// Sensitivity of the optimal objective to each constraint's rhs, in
    /// constraint order; empty unless optimal.
    pub duals: Vec<f64>,
    pub objective_value: f64,
}

impl LpSolution {
    pub fn value(&self, var: VarId) -> f64 {
        self.x[var.0]
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }

    /// Values keyed by variable name.
    pub fn named_values(&self, problem: &LpProblem) -> BTreeMap<String, f64> {
        problem
            .variables()
            .iter()
            .zip(&self.x)
            .map(|(v, &x)| (v.name.clone(), x))
            .collect()
    }
}

/// Anything that can solve an [`LpProblem`].
pub trait LpBackend: Send + Sync {
    fn name(&self) -> &str;
    fn solve(&self, problem: &LpProblem) -> Result<LpSolution, LpError>;
}

/// Simplex for small problems, Clarabel for large ones, with our own
/// interior point as the fallback.
#[derive(Debug, Clone, Default)]
pub struct Builtin {
    pub simplex: RevisedSimplex,
    pub conic: Clarabel,
    pub ipm: InteriorPoint,
}

/// Problems with more variables than this go to an interior-point method.
pub const SIMPLEX_VAR_LIMIT: usize = 120;

impl LpBackend for Builtin {
    fn name(&self) -> &str {
        "builtin"
    }

    fn solve(&self, problem: &LpProblem) -> Result<LpSolution, LpError> {
        if problem.num_vars() <= SIMPLEX_VAR_LIMIT {
            return self.simplex.solve(problem);
        }
        match self.conic.solve(problem) {
            Ok(s) => Ok(s),
            Err(e) => {
                log::debug!("{e}; retrying with the sparse interior point");
                self.ipm.solve(problem)
            }
        }
    }
}

/// Backend named by `ROA_LP_BACKEND`, defaulting to [`Builtin`].
pub fn backend_from_env() -> Result<Box<dyn LpBackend>, LpError> {
    match std::env::var(BACKEND_ENV) {
        Ok(name) => backend_by_name(&name),
        Err(_) => Ok(Box::new(Builtin::default())),
    }
}

/// `builtin`, `simplex`, `ipm` or `clarabel`.
pub fn backend_by_name(name: &str) -> Result<Box<dyn LpBackend>, LpError> {
    match name.trim() {
        "" | "builtin" => Ok(Box::new(Builtin::default())),
        "simplex" => Ok(Box::new(RevisedSimplex::default())),
        "ipm" => Ok(Box::new(InteriorPoint::default())),
        "clarabel" => Ok(Box::new(Clarabel::default())),
        other => Err(LpError::UnknownBackend(other.to_string())),
    }
}

/// Solve with the backend selected by the environment.
pub fn solve(problem: &LpProblem) -> Result<LpSolution, LpError> {
    backend_from_env()?.solve(problem)
}
