//! End-to-end analysis and the self-contained result document.

use serde::{Deserialize, Serialize};
use web_time::Instant;

use crate::certify::{
    monte_carlo_invariance, replay_barrier, replay_roa, check_nagumo_boundary, Check, MonteCarloSummary, ReplayReport,
    OVERSHOOT_TOL, REPLAY_TOL,
};
use crate::config::RunConfig;
use crate::iise::{run_iise, CategoryCounts, IiseError, InvariantSetCertificate, SlackSummary, StageStats, Termination, Tolerances};
use crate::linprog::{LpError, BACKEND_ENV};
use crate::lyapunov::{roa_certificate, LyapunovFunction, LyapunovStats, Provenance, RoaCertificate, RoaError, RESTRICT_TOL};
use crate::system::SystemSpec;

pub const RESULT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProvenanceBlock {
    pub config: RunConfig,
    pub tolerances: Tolerances,
    pub replay_tol: f64,
    pub overshoot_tol: f64,
    pub restrict_tol: f64,
    pub lp_backend: String,
    pub tool_version: String,
}

impl ProvenanceBlock {
    pub fn new(cfg: &RunConfig) -> Self {
        Self {
            config: cfg.clone(),
            tolerances: Tolerances::from(cfg),
            replay_tol: REPLAY_TOL,
            overshoot_tol: OVERSHOOT_TOL,
            restrict_tol: RESTRICT_TOL,
            lp_backend: std::env::var(BACKEND_ENV).unwrap_or_else(|_| "builtin".into()),
            tool_version: env!("CARGO_PKG_VERSION").into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub alpha_m: f64,
    pub cells: usize,
    pub categories: CategoryCounts,
    pub slacks: SlackSummary,
    pub stats: StageStats,
    pub replay: ReplayReport,
    pub certificate: InvariantSetCertificate,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LyapunovRecord {
    pub function: LyapunovFunction,
    pub stats: LyapunovStats,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Timings {
    pub iise_seconds: f64,
    pub lyapunov_seconds: f64,
    pub replay_seconds: f64,
    pub monte_carlo_seconds: f64,
    pub total_seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultDocument {
    pub schema_version: u32,
    pub system: SystemSpec,
    pub provenance: ProvenanceBlock,
    /// Cells of the input dynamics partition.
    pub cells_initial: usize,
    /// Cells of the final Lyapunov partition, or of the last invariant set.
    pub cells_final: usize,
    pub iterations: Vec<IterationRecord>,
    pub termination: Option<Termination>,
    pub termination_detail: Option<String>,
    pub lyapunov: Option<LyapunovRecord>,
    pub roa_replay: Option<ReplayReport>,
    pub monte_carlo: Option<MonteCarloSummary>,
    pub error: Option<String>,
    pub timings: Timings,
}

impl ResultDocument {
    /// The final RoA certificate, when one was produced.
    pub fn roa_certificate(&self) -> Option<RoaCertificate> {
        let lyap = self.lyapunov.as_ref()?;
        let last = self.iterations.last()?;
        Some(RoaCertificate {
            invariant: last.certificate.clone(),
            lyapunov: lyap.function.clone(),
            provenance: Provenance {
                config: self.provenance.config.clone(),
                tolerances: self.provenance.tolerances,
                restrict_tol: self.provenance.restrict_tol,
                iterations: self.iterations.len() - 1,
                termination: self.termination.unwrap_or(Termination::MaxIter),
                lyapunov: lyap.stats.clone(),
            },
        })
    }

    pub fn certificate(&self, iteration: usize) -> Option<&InvariantSetCertificate> {
        self.iterations.get(iteration).map(|r| &r.certificate)
    }
}

/// Why an analysis did not produce a clean certificate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureKind {
    /// Bad input: unreadable spec, invalid configuration, origin not an
    /// equilibrium.
    Input,
    /// No invariant set, or none containing the origin.
    NoCertificate,
    RefinementStalled,
    Solver,
    /// A certificate was produced but an independent check rejected it.
    Replay,
}

#[derive(Debug)]
pub struct AnalysisFailure {
    pub kind: FailureKind,
    pub message: String,
    /// Whatever was computed before the failure.
    pub document: Option<Box<ResultDocument>>,
}

impl std::fmt::Display for AnalysisFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for AnalysisFailure {}

fn iise_kind(e: &IiseError) -> FailureKind {
    match e {
        IiseError::NoInvariantSet(_) => FailureKind::NoCertificate,
        IiseError::RefinementStalled(_) => FailureKind::RefinementStalled,
        IiseError::Config(_) | IiseError::Discontinuous(_) => FailureKind::Input,
        IiseError::Solver(LpError::UnknownBackend(_)) => FailureKind::Input,
        IiseError::Solver(_) | IiseError::Geometry(_) => FailureKind::Solver,
    }
}

fn roa_kind(e: &RoaError) -> FailureKind {
    match e {
        RoaError::EmptyRestriction | RoaError::OriginNotCovered => FailureKind::NoCertificate,
        RoaError::NotEquilibrium(_) => FailureKind::Input,
        RoaError::RefinementStalled(_) => FailureKind::RefinementStalled,
        RoaError::Iise(e) => iise_kind(e),
        RoaError::Solver(_) | RoaError::Geometry(_) => FailureKind::Solver,
    }
}

/// Barrier replay plus the boundary flow check of one certificate.
pub fn replay_invariant(cert: &InvariantSetCertificate) -> ReplayReport {
    replay_barrier(cert).merge(check_nagumo_boundary(cert))
}

/// Grow an invariant set, synthesize the Lyapunov-like function, replay
/// everything and run the Monte-Carlo invariance check.
pub fn analyze(spec: &SystemSpec, cfg: &RunConfig) -> Result<ResultDocument, AnalysisFailure> {
    let start = Instant::now();
    let fail = |kind, message: String, document: Option<ResultDocument>| AnalysisFailure {
        kind,
        message,
        document: document.map(Box::new),
    };
    cfg.validate().map_err(|e| fail(FailureKind::Input, e.to_string(), None))?;
    let dynamics = spec
        .partition()
        .map_err(|e| fail(FailureKind::Input, e.to_string(), None))?;

    let t = Instant::now();
    let run = run_iise(&dynamics, cfg).map_err(|e| fail(iise_kind(&e), e.to_string(), None))?;
    let mut timings = Timings {
        iise_seconds: t.elapsed().as_secs_f64(),
        ..Timings::default()
    };

    let t = Instant::now();
    let iterations: Vec<IterationRecord> = run
        .certificates
        .iter()
        .map(|c| IterationRecord {
            iteration: c.barrier.iteration,
            alpha_m: c.barrier.alpha_m,
            cells: c.partition.num_cells(),
            categories: c.categories.counts(),
            slacks: c.slacks,
            stats: c.stats.clone(),
            replay: replay_invariant(c),
            certificate: c.clone(),
        })
        .collect();
    timings.replay_seconds = t.elapsed().as_secs_f64();

    let mut doc = ResultDocument {
        schema_version: RESULT_SCHEMA_VERSION,
        system: spec.clone(),
        provenance: ProvenanceBlock::new(cfg),
        cells_initial: dynamics.num_cells(),
        cells_final: run.last().partition.num_cells(),
        iterations,
        termination: Some(run.termination),
        termination_detail: run.termination_detail.clone(),
        lyapunov: None,
        roa_replay: None,
        monte_carlo: None,
        error: None,
        timings,
    };

    let t = Instant::now();
    let roa = match roa_certificate(&run, cfg) {
        Ok(r) => r,
        Err(e) => {
            doc.error = Some(e.to_string());
            doc.timings.lyapunov_seconds = t.elapsed().as_secs_f64();
            doc.timings.total_seconds = start.elapsed().as_secs_f64();
            return Err(fail(roa_kind(&e), e.to_string(), Some(doc)));
        }
    };
    doc.timings.lyapunov_seconds = t.elapsed().as_secs_f64();
    doc.cells_final = roa.lyapunov.partition.num_cells();

    let t = Instant::now();
    let replay = replay_roa(&roa);
    doc.timings.replay_seconds += t.elapsed().as_secs_f64();

    let t = Instant::now();
    let mc = monte_carlo_invariance(&dynamics, &roa.invariant, cfg.samples, cfg.horizon, cfg.dt, cfg.seed);
    doc.timings.monte_carlo_seconds = t.elapsed().as_secs_f64();

    doc.lyapunov = Some(LyapunovRecord {
        function: roa.lyapunov,
        stats: roa.provenance.lyapunov,
    });
    let bad_iteration = doc.iterations.iter().find(|r| !r.replay.passed).map(|r| {
        let c = r.replay.first_failure().cloned();
        (r.iteration, c)
    });
    let replay_ok = replay.passed;
    let first = replay.first_failure().cloned();
    doc.roa_replay = Some(replay);
    doc.monte_carlo = Some(mc.clone());
    doc.timings.total_seconds = start.elapsed().as_secs_f64();

    if let Some((m, c)) = bad_iteration {
        let msg = format!("replay of iteration {m} failed: {}", describe(c.as_ref()));
        doc.error = Some(msg.clone());
        return Err(fail(FailureKind::Replay, msg, Some(doc)));
    }
    if !replay_ok {
        let msg = format!("replay of the RoA certificate failed: {}", describe(first.as_ref()));
        doc.error = Some(msg.clone());
        return Err(fail(FailureKind::Replay, msg, Some(doc)));
    }
    if !mc.passed() {
        let msg = format!(
            "Monte-Carlo check: {} of {} trajectories left the set, {} left the domain",
            mc.exits, mc.samples, mc.left_domain
        );
        doc.error = Some(msg.clone());
        return Err(fail(FailureKind::Replay, msg, Some(doc)));
    }
    Ok(doc)
}

pub fn describe(check: Option<&Check>) -> String {
    match check {
        Some(c) => format!("{} at {} (margin {:.3e})", c.name, c.location, c.margin),
        None => "no failing check recorded".into(),
    }
}

/// Output of re-checking a stored result.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertifyReport {
    pub schema_version: u32,
    pub iterations: Vec<ReplayReport>,
    pub roa: Option<ReplayReport>,
    pub monte_carlo: Option<MonteCarloSummary>,
    pub passed: bool,
    pub first_failure: Option<String>,
}

/// Replay every stored certificate and rerun the Monte-Carlo check, without
/// any synthesis.
pub fn certify_document(doc: &ResultDocument, samples: usize, seed: u64) -> Result<CertifyReport, String> {
    if doc.schema_version != RESULT_SCHEMA_VERSION {
        return Err(format!("unsupported result schema version {}", doc.schema_version));
    }
    let dynamics = doc.system.partition().map_err(|e| e.to_string())?;
    let iterations: Vec<ReplayReport> = doc.iterations.iter().map(|r| replay_invariant(&r.certificate)).collect();
    let mut first_failure = iterations
        .iter()
        .enumerate()
        .find(|(_, r)| !r.passed)
        .map(|(m, r)| format!("iteration {m}: {}", describe(r.first_failure())));
    let roa = doc.roa_certificate();
    let roa_report = roa.as_ref().map(replay_roa);
    if first_failure.is_none() {
        if let Some(r) = roa_report.as_ref().filter(|r| !r.passed) {
            first_failure = Some(format!("RoA certificate: {}", describe(r.first_failure())));
        }
    }
    if roa.is_none() && first_failure.is_none() {
        first_failure = Some("result holds no RoA certificate".into());
    }
    let cfg = &doc.provenance.config;
    let mc = roa
        .as_ref()
        .map(|r| monte_carlo_invariance(&dynamics, &r.invariant, samples, cfg.horizon, cfg.dt, seed));
    if first_failure.is_none() {
        if let Some(m) = mc.as_ref().filter(|m| !m.passed()) {
            first_failure = Some(format!(
                "Monte-Carlo check: {} exits, {} left the domain, first from {:?}",
                m.exits, m.left_domain, m.first_exit
            ));
        }
    }
    Ok(CertifyReport {
        schema_version: RESULT_SCHEMA_VERSION,
        iterations,
        roa: roa_report,
        monte_carlo: mc,
        passed: first_failure.is_none(),
        first_failure,
    })
}
