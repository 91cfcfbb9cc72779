use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
#[error("invalid configuration: {0}")]
pub struct ConfigError(pub String);

/// Parameters of a full analysis run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Barrier slope inside the invariant set.
    pub alpha0: f64,
    /// Decay rate of the outer slope per iteration, in (0, 1).
    pub gamma: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub eps3: f64,
    /// Minimum barrier derivative for a boundary vertex to be grown.
    pub eps_nugis: f64,
    /// Weight on the blocking slacks, greater than 1.
    pub penalty: f64,
    pub max_iter: usize,
    pub dt: f64,
    pub horizon: f64,
    pub samples: usize,
    pub seed: u64,
    /// Values with magnitude at most this count as zero.
    pub nonzero_tol: f64,
    /// A barrier is certified when its blocking slacks sum to at most this.
    pub certify_tol: f64,
    /// Minimum cell diameter as a fraction of the domain diameter.
    pub floor_ratio: f64,
    /// Refine-and-resolve rounds allowed per LP stage.
    pub max_refine_rounds: usize,
    /// Cell budget per LP stage; also caps the seed grid.
    pub max_cells: usize,
    /// Rounds without a 10% drop in blocking slack before giving up.
    pub stall_rounds: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            alpha0: 1.0,
            gamma: 0.1,
            eps1: 1e-4,
            eps2: 1e-4,
            eps3: 1e-4,
            eps_nugis: 1e-3,
            penalty: 1e4,
            max_iter: 10,
            dt: 1e-3,
            horizon: 20.0,
            samples: 1000,
            seed: 0,
            nonzero_tol: 1e-6,
            certify_tol: 1e-6,
            floor_ratio: 1e-4,
            max_refine_rounds: 40,
            max_cells: 4000,
            stall_rounds: 8,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |m: &str| Err(ConfigError(m.to_string()));
        let finite = [
            self.alpha0,
            self.gamma,
            self.eps1,
            self.eps2,
            self.eps3,
            self.eps_nugis,
            self.penalty,
            self.dt,
            self.horizon,
            self.nonzero_tol,
            self.certify_tol,
            self.floor_ratio,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return err("all parameters must be finite");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return err("gamma must lie in (0, 1)");
        }
        if self.alpha0 <= 0.0 {
            return err("alpha0 must be positive");
        }
        if [self.eps1, self.eps2, self.eps3, self.eps_nugis].iter().any(|&e| e <= 0.0) {
            return err("eps values must be positive");
        }
        if self.penalty <= 1.0 {
            return err("penalty must exceed 1");
        }
        if self.dt <= 0.0 || self.horizon <= 0.0 {
            return err("dt and horizon must be positive");
        }
        if self.nonzero_tol <= 0.0 || self.certify_tol <= 0.0 || self.floor_ratio <= 0.0 {
            return err("tolerances must be positive");
        }
        Ok(())
    }

    /// Outer barrier slope after `m` iterations.
    pub fn alpha_at(&self, m: usize) -> f64 {
        self.alpha0 * (1.0 - self.gamma).powi(m as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(c.eps1, 1e-4);
        assert_eq!(c.nonzero_tol, 1e-6);
    }

    #[test]
    fn rejects_bad_gamma_and_penalty() {
        let c = RunConfig {
            gamma: 1.0,
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
        let c = RunConfig {
            penalty: 1.0,
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn alpha_schedule() {
        let c = RunConfig {
            alpha0: 10.0,
            ..RunConfig::default()
        };
        assert!((c.alpha_at(3) - 10.0 * 0.9f64.powi(3)).abs() < 1e-12);
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"alpha0": 5.0}"#).unwrap();
        assert_eq!(c.alpha0, 5.0);
        assert_eq!(c.gamma, 0.1);
    }
}
