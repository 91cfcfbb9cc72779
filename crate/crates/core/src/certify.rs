//! Independent checks of emitted certificates.
//!
//! Everything here reads only partitions, coefficients and tolerances; no
//! LP artifacts are consulted. The trajectory simulator gives a physical
//! cross-check of forward invariance and convergence.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{Partition, FACET_TOL, LOCATE_TOL, MERGE_TOL};
use crate::iise::{InvariantSetCertificate, EXCL_TOL};
use crate::lyapunov::{RoaCertificate, RESTRICT_TOL};
use crate::vecops::{axpy, dot, norm};

/// A check passes when its margin is at least `-REPLAY_TOL`.
pub const REPLAY_TOL: f64 = 1e-6;
/// Distance outside the set (in `h / ‖s‖` units) still counted as grazing.
pub const OVERSHOOT_TOL: f64 = 1e-3;
/// Points this far outside the domain are still given the nearest cell's flow.
const DOMAIN_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub location: String,
    pub margin: f64,
    pub pass: bool,
}

/// Failing checks, the worst check of every family, and how many checks of
/// each family ran.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub checks: Vec<Check>,
    pub evaluated: BTreeMap<String, usize>,
    pub worst_margin: f64,
    pub passed: bool,
}

impl ReplayReport {
    pub fn merge(mut self, other: ReplayReport) -> ReplayReport {
        self.checks.extend(other.checks);
        for (k, v) in other.evaluated {
            *self.evaluated.entry(k).or_default() += v;
        }
        self.worst_margin = self.worst_margin.min(other.worst_margin);
        self.passed &= other.passed;
        self
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.pass)
    }

    /// The first failing check, for error messages.
    pub fn first_failure(&self) -> Option<&Check> {
        self.failures().next()
    }
}

#[derive(Default)]
struct Recorder {
    failing: Vec<Check>,
    worst: BTreeMap<String, Check>,
    evaluated: BTreeMap<String, usize>,
}

impl Recorder {
    fn record(&mut self, name: &str, margin: f64, location: impl FnOnce() -> String) {
        *self.evaluated.entry(name.to_string()).or_default() += 1;
        let pass = margin >= -REPLAY_TOL;
        let worse = self.worst.get(name).is_none_or(|c| margin < c.margin);
        if pass && !worse {
            return;
        }
        let check = Check {
            name: name.to_string(),
            location: location(),
            margin,
            pass,
        };
        if !pass {
            self.failing.push(check.clone());
        }
        if worse {
            self.worst.insert(name.to_string(), check);
        }
    }

    fn finish(self) -> ReplayReport {
        let worst_margin = self.worst.values().map(|c| c.margin).fold(f64::INFINITY, f64::min);
        let passed = self.failing.is_empty();
        let mut checks = self.failing;
        for c in self.worst.into_values() {
            if c.pass {
                checks.push(c);
            }
        }
        ReplayReport {
            checks,
            evaluated: self.evaluated,
            worst_margin,
            passed,
        }
    }
}

fn at(p: &Partition, i: usize, k: usize) -> String {
    format!("cell {i} vertex {k} {:?}", p.vertex(k))
}

/// Recheck the barrier inequalities of a certificate from its coefficients.
pub fn replay_barrier(cert: &InvariantSetCertificate) -> ReplayReport {
    let p = &cert.partition;
    let b = &cert.barrier;
    let tol = &cert.tolerances;
    let mut rec = Recorder::default();

    rec.record("certified-flag", if cert.certified { 0.0 } else { -1.0 }, || "certificate".into());
    if b.field.len() != p.num_cells() {
        rec.record("shape", -1.0, || {
            format!("{} pieces for {} cells", b.field.len(), p.num_cells())
        });
        return rec.finish();
    }
    if let Err(msg) = cert.categories.check_cover(p) {
        rec.record("category-cover", -1.0, || msg);
    }

    for k in p.shared_vertices() {
        let cs = p.vertex_cells(k);
        let v = p.vertex(k);
        let h0 = b.value(cs[0], v);
        for &j in &cs[1..] {
            let gap = (b.value(j, v) - h0).abs();
            rec.record("continuity", -gap, || format!("cells {} and {j} vertex {k} {v:?}", cs[0]));
        }
    }

    for (i, k) in p.incidence_pairs() {
        let v = p.vertex(k);
        let h = b.value(i, v);
        let hdot = b.derivative(p.cell(i), v);
        rec.record("barrier-derivative", hdot + b.alpha(h) - tol.eps3, || at(p, i, k));
    }

    let cats = &cert.categories;
    for &(i, k) in cats.int_set.iter().chain(&cats.nugis_set) {
        let h = b.value(i, p.vertex(k));
        rec.record("inside-vertex", h - tol.eps3, || at(p, i, k));
    }
    for &(i, k) in &cats.bis_set {
        rec.record("boundary-vertex", b.value(i, p.vertex(k)), || at(p, i, k));
    }
    for &(i, k) in &cats.excl_set {
        let h = b.value(i, p.vertex(k));
        let need = if exits_domain(p, i, k) { -tol.eps1 } else { 0.0 };
        rec.record("excluded-vertex", need - h, || at(p, i, k));
    }

    // every vertex where the flow leaves the domain, whatever its category
    for (i, k) in p.incidence_pairs() {
        if exits_domain(p, i, k) {
            let h = b.value(i, p.vertex(k));
            rec.record("domain-exit", -h, || at(p, i, k));
        }
    }
    rec.finish()
}

fn exits_domain(p: &Partition, i: usize, k: usize) -> bool {
    let v = p.vertex(k);
    let f = p.cell(i).flow(v);
    p.domain()
        .halfspaces()
        .iter()
        .any(|h| h.eval(v).abs() <= FACET_TOL && dot(&h.normal, &f) < -EXCL_TOL)
}

/// Points of cell `i` where its barrier piece vanishes: zero vertices and
/// edge crossings. Together they span the zero slice of the cell.
fn zero_slice(cert: &InvariantSetCertificate, i: usize, tol: f64) -> Vec<Vec<f64>> {
    let region = &cert.partition.cell(i).region;
    let piece = cert.barrier.field.piece(i);
    let vs = region.vertices();
    let hv: Vec<f64> = vs.iter().map(|v| piece.eval(v)).collect();
    let mut out: Vec<Vec<f64>> = vs
        .iter()
        .zip(&hv)
        .filter(|(_, h)| h.abs() <= tol)
        .map(|(v, _)| v.clone())
        .collect();
    for (a, c) in region.edges() {
        let (ha, hc) = (hv[a], hv[c]);
        if (ha < -tol && hc > tol) || (ha > tol && hc < -tol) {
            let w = ha / (ha - hc);
            let d: Vec<f64> = vs[c].iter().zip(&vs[a]).map(|(x, y)| x - y).collect();
            out.push(axpy(&vs[a], w, &d));
        }
    }
    out
}

/// Inward flow `s_i · (A_i x + a_i) ≥ 0` at every point of `{h = 0}`,
/// checked at the vertices of each cell's zero slice.
pub fn check_nagumo_boundary(cert: &InvariantSetCertificate) -> ReplayReport {
    let p = &cert.partition;
    let tol = cert.tolerances.nonzero_tol;
    let mut rec = Recorder::default();
    for i in 0..p.num_cells() {
        let piece = cert.barrier.field.piece(i);
        if piece.gradient_norm() == 0.0 {
            continue;
        }
        for w in zero_slice(cert, i, tol) {
            let m = piece.derivative(p.cell(i), &w);
            rec.record("nagumo", m, || format!("cell {i} point {w:?}"));
        }
    }
    rec.finish()
}

/// Recheck the Lyapunov-like function of an RoA certificate, and that its
/// cells lie inside the invariant set.
pub fn replay_lyapunov(roa: &RoaCertificate) -> ReplayReport {
    let lf = &roa.lyapunov;
    let p = &lf.partition;
    let eps1 = roa.provenance.tolerances.eps1;
    let mut rec = Recorder::default();
    if lf.field.len() != p.num_cells() {
        rec.record("lyapunov-shape", -1.0, || "piece count".into());
        return rec.finish();
    }
    let zero = vec![0.0; p.dim()];
    if p.locate(&zero).is_empty() {
        rec.record("lyapunov-origin", -1.0, || "origin not covered".into());
    }
    for &i in &lf.origin_cells {
        let v0 = lf.field.value(i, &zero);
        rec.record("lyapunov-origin", -v0.abs(), || format!("cell {i}"));
    }
    for k in p.shared_vertices() {
        let cs = p.vertex_cells(k);
        let v = p.vertex(k);
        let v0 = lf.field.value(cs[0], v);
        for &j in &cs[1..] {
            let gap = (lf.field.value(j, v) - v0).abs();
            rec.record("lyapunov-continuity", -gap, || format!("cells {} and {j} vertex {k}", cs[0]));
        }
    }
    for (i, k) in p.incidence_pairs() {
        let v = p.vertex(k);
        if norm(v) <= MERGE_TOL {
            continue;
        }
        let d = lf.field.piece(i).derivative(p.cell(i), v);
        rec.record("lyapunov-decrease", -eps1 - d, || at(p, i, k));
    }
    for (k, v) in p.pool().iter().enumerate() {
        let h = roa.invariant.value_at(v).unwrap_or(f64::NEG_INFINITY);
        rec.record("lyapunov-inside", h + RESTRICT_TOL - REPLAY_TOL, || format!("vertex {k} {v:?}"));
    }
    rec.finish()
}

/// All replay checks of an RoA certificate.
pub fn replay_roa(roa: &RoaCertificate) -> ReplayReport {
    replay_barrier(&roa.invariant)
        .merge(check_nagumo_boundary(&roa.invariant))
        .merge(replay_lyapunov(roa))
}

/// Pairs of neighbouring cells whose flows push into each other across a
/// shared facet touching `{h = 0}`, as `(cell, neighbour, point)`.
///
/// Continuous dynamics cannot do this, so any flag points at a
/// discontinuity the analysis assumes away.
pub fn sliding_mode_diagnostic(cert: &InvariantSetCertificate) -> Vec<(usize, usize, Vec<f64>)> {
    let p = &cert.partition;
    let tol = cert.tolerances.nonzero_tol;
    let mut out = Vec::new();
    for i in 0..p.num_cells() {
        for j in p.neighbors(i) {
            if j < i {
                continue;
            }
            let shared: Vec<usize> = p
                .incidence(i)
                .iter()
                .copied()
                .filter(|k| p.vertex_cells(*k).contains(&j))
                .collect();
            let near_boundary = shared
                .iter()
                .any(|&k| cert.barrier.value(i, p.vertex(k)).abs() <= tol);
            if !near_boundary {
                continue;
            }
            let Some(face) = p.cell(i).region.halfspaces().iter().find(|h| {
                shared.iter().all(|&k| h.eval(p.vertex(k)).abs() <= FACET_TOL)
            }) else {
                continue;
            };
            // face.normal points into cell i
            for &k in &shared {
                let v = p.vertex(k);
                let into_j = -dot(&face.normal, &p.cell(i).flow(v));
                let into_i = dot(&face.normal, &p.cell(j).flow(v));
                if into_j > EXCL_TOL && into_i > EXCL_TOL {
                    out.push((i, j, v.to_vec()));
                }
            }
        }
    }
    out
}

/// Point location that remembers the last cell found.
struct Tracker<'a> {
    p: &'a Partition,
    last: usize,
}

impl<'a> Tracker<'a> {
    fn new(p: &'a Partition) -> Self {
        Self { p, last: 0 }
    }

    fn cell(&mut self, x: &[f64]) -> Option<usize> {
        if self.p.cell(self.last).region.depth(x) >= -LOCATE_TOL {
            return Some(self.last);
        }
        let found = self.p.locate_one(x).or_else(|| {
            if self.p.domain().depth(x) < -DOMAIN_SLACK {
                return None;
            }
            (0..self.p.num_cells()).max_by(|&a, &b| {
                let da = self.p.cell(a).region.depth(x);
                let db = self.p.cell(b).region.depth(x);
                da.total_cmp(&db)
            })
        })?;
        self.last = found;
        Some(found)
    }

    fn flow_into(&mut self, x: &[f64], out: &mut [f64]) -> Option<()> {
        let i = self.cell(x)?;
        self.p.cell(i).flow_into(x, out);
        Some(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryResult {
    pub initial: Vec<f64>,
    /// Left the query set by more than [`OVERSHOOT_TOL`], or left the domain
    /// while a query set was given.
    pub exited: bool,
    pub exit_time: Option<f64>,
    /// Left the domain of the dynamics.
    pub left_domain: bool,
    pub final_state: Vec<f64>,
    pub final_distance_to_origin: f64,
    /// Largest distance outside the query set seen along the way.
    pub max_overshoot: f64,
    pub steps: usize,
}

/// Fixed-step RK4 integration of a PWA field from `x0`.
pub fn simulate(dynamics: &Partition, x0: &[f64], horizon: f64, dt: f64) -> TrajectoryResult {
    simulate_in(dynamics, x0, horizon, dt, None)
}

/// As [`simulate`], also tracking how far the state gets outside
/// `{h ≥ 0}` of `set`. The run stops at the first exit beyond
/// [`OVERSHOOT_TOL`].
pub fn simulate_in(
    dynamics: &Partition,
    x0: &[f64],
    horizon: f64,
    dt: f64,
    set: Option<&InvariantSetCertificate>,
) -> TrajectoryResult {
    let mut flow = Tracker::new(dynamics);
    let mut level = set.map(|c| (c, Tracker::new(&c.partition)));
    let mut overshoot_at = |x: &[f64]| -> f64 {
        let Some((c, tr)) = level.as_mut() else {
            return 0.0;
        };
        match tr.cell(x) {
            Some(i) => {
                let piece = c.barrier.field.piece(i);
                let h = piece.eval(x);
                if h >= 0.0 {
                    0.0
                } else if piece.gradient_norm() > 0.0 {
                    -h / piece.gradient_norm()
                } else {
                    f64::INFINITY
                }
            }
            None => f64::INFINITY,
        }
    };

    let total = (horizon / dt).ceil() as usize;
    let mut x = x0.to_vec();
    let mut out = TrajectoryResult {
        initial: x0.to_vec(),
        exited: false,
        exit_time: None,
        left_domain: false,
        final_state: Vec::new(),
        final_distance_to_origin: 0.0,
        max_overshoot: overshoot_at(&x),
        steps: 0,
    };
    let mut rk = Rk4::new(x.len());
    let mut next = x.clone();
    for step in 1..=total {
        let Some(()) = rk.step(&mut flow, &x, dt, &mut next) else {
            out.left_domain = true;
            // the query set lies inside the domain
            if set.is_some() {
                out.exited = true;
                out.exit_time = Some(step as f64 * dt);
            }
            break;
        };
        std::mem::swap(&mut x, &mut next);
        out.steps = step;
        let o = overshoot_at(&x);
        out.max_overshoot = out.max_overshoot.max(o);
        if o > OVERSHOOT_TOL {
            out.exited = true;
            out.exit_time = Some(step as f64 * dt);
            break;
        }
    }
    out.final_distance_to_origin = norm(&x);
    out.final_state = x;
    out
}

/// States along a trajectory, every `every` steps, starting with `x0` and
/// ending at the horizon or the last state inside the domain.
pub fn simulate_path(dynamics: &Partition, x0: &[f64], horizon: f64, dt: f64, every: usize) -> Vec<Vec<f64>> {
    let every = every.max(1);
    let mut flow = Tracker::new(dynamics);
    let mut rk = Rk4::new(x0.len());
    let mut x = x0.to_vec();
    let mut next = x.clone();
    let mut path = vec![x.clone()];
    let total = (horizon / dt).ceil() as usize;
    for step in 1..=total {
        if rk.step(&mut flow, &x, dt, &mut next).is_none() {
            break;
        }
        std::mem::swap(&mut x, &mut next);
        if step % every == 0 {
            path.push(x.clone());
        }
    }
    if path.last() != Some(&x) {
        path.push(x);
    }
    path
}

/// Scratch space for one RK4 step.
struct Rk4 {
    k: [Vec<f64>; 4],
    probe: Vec<f64>,
}

impl Rk4 {
    fn new(n: usize) -> Self {
        Self {
            k: std::array::from_fn(|_| vec![0.0; n]),
            probe: vec![0.0; n],
        }
    }

    /// Write the state after one step from `x` into `next`; `None` if a
    /// stage falls outside the domain.
    fn step(&mut self, flow: &mut Tracker<'_>, x: &[f64], dt: f64, next: &mut [f64]) -> Option<()> {
        let [k1, k2, k3, k4] = &mut self.k;
        let probe = &mut self.probe;
        flow.flow_into(x, k1)?;
        for (d, p) in probe.iter_mut().enumerate() {
            *p = x[d] + 0.5 * dt * k1[d];
        }
        flow.flow_into(probe, k2)?;
        for (d, p) in probe.iter_mut().enumerate() {
            *p = x[d] + 0.5 * dt * k2[d];
        }
        flow.flow_into(probe, k3)?;
        for (d, p) in probe.iter_mut().enumerate() {
            *p = x[d] + dt * k3[d];
        }
        flow.flow_into(probe, k4)?;
        for (d, y) in next.iter_mut().enumerate() {
            *y = x[d] + dt / 6.0 * (k1[d] + 2.0 * k2[d] + 2.0 * k3[d] + k4[d]);
        }
        Some(())
    }
}

/// Up to `n` points drawn uniformly from `{h ≥ 0}` by rejection over the
/// domain's bounding box.
pub fn sample_in_set(cert: &InvariantSetCertificate, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let (lo, hi) = cert.partition.domain().bounding_box();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tracker = Tracker::new(&cert.partition);
    let mut out = Vec::with_capacity(n);
    let budget = n.saturating_mul(10_000).max(1);
    for _ in 0..budget {
        if out.len() == n {
            break;
        }
        let x: Vec<f64> = lo.iter().zip(&hi).map(|(&a, &b)| rng.random_range(a..=b)).collect();
        if let Some(i) = tracker.cell(&x) {
            if cert.barrier.value(i, &x) >= 0.0 {
                out.push(x);
            }
        }
    }
    out
}

/// Monte-Carlo estimate of the volume of `{h ≥ 0}`.
pub fn estimate_volume(cert: &InvariantSetCertificate, samples: usize, seed: u64) -> f64 {
    let (lo, hi) = cert.partition.domain().bounding_box();
    let box_volume: f64 = lo.iter().zip(&hi).map(|(a, b)| b - a).product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tracker = Tracker::new(&cert.partition);
    let mut inside = 0usize;
    for _ in 0..samples {
        let x: Vec<f64> = lo.iter().zip(&hi).map(|(&a, &b)| rng.random_range(a..=b)).collect();
        if tracker.cell(&x).is_some_and(|i| cert.barrier.value(i, &x) >= 0.0) {
            inside += 1;
        }
    }
    box_volume * inside as f64 / samples.max(1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub seed: u64,
    pub samples: usize,
    pub horizon: f64,
    pub dt: f64,
    pub overshoot_tol: f64,
    pub exits: usize,
    pub left_domain: usize,
    pub max_overshoot: f64,
    pub max_final_distance: f64,
    /// Start of the first trajectory that exited, if any.
    pub first_exit: Option<Vec<f64>>,
}

impl MonteCarloSummary {
    pub fn passed(&self) -> bool {
        self.exits == 0 && self.left_domain == 0
    }
}

/// Simulate trajectories from points sampled in the certified set and
/// count those that leave it.
pub fn monte_carlo_invariance(
    dynamics: &Partition,
    cert: &InvariantSetCertificate,
    samples: usize,
    horizon: f64,
    dt: f64,
    seed: u64,
) -> MonteCarloSummary {
    let starts = sample_in_set(cert, samples, seed);
    let runs = simulate_many(dynamics, &starts, horizon, dt, Some(cert));
    let mut s = MonteCarloSummary {
        seed,
        samples: starts.len(),
        horizon,
        dt,
        overshoot_tol: OVERSHOOT_TOL,
        exits: 0,
        left_domain: 0,
        max_overshoot: 0.0,
        max_final_distance: 0.0,
        first_exit: None,
    };
    for r in runs {
        s.max_overshoot = s.max_overshoot.max(r.max_overshoot);
        s.max_final_distance = s.max_final_distance.max(r.final_distance_to_origin);
        if r.left_domain {
            s.left_domain += 1;
        }
        if r.exited {
            s.exits += 1;
            if s.first_exit.is_none() {
                s.first_exit = Some(r.initial);
            }
        }
    }
    s
}

/// Simulate from every start point, in parallel when enabled. Results keep
/// the order of `starts`.
pub fn simulate_many(
    dynamics: &Partition,
    starts: &[Vec<f64>],
    horizon: f64,
    dt: f64,
    set: Option<&InvariantSetCertificate>,
) -> Vec<TrajectoryResult> {
    let one = |x: &Vec<f64>| simulate_in(dynamics, x, horizon, dt, set);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        starts.par_iter().map(one).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        starts.iter().map(one).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use crate::field::{AffinePiece, PwaField};
    use crate::geometry::{Cell, GeometryError, Polytope};
    use crate::iise::{categorize, refine_boundary, BarrierFunction, SlackSummary, StageStats, Tolerances};
    use crate::matrix::Matrix;

    fn linear_box(k: f64) -> Partition {
        let domain = Polytope::from_box(&[-1.0, -1.0], &[1.0, 1.0]).unwrap();
        let cell = Cell::new(0, domain.clone(), Matrix::scaled_identity(2, k), vec![0.0, 0.0]);
        Partition::single(domain, cell).unwrap()
    }

    /// `h = 0.5 - |x|_inf` for `ẋ = -x`, on the four-triangle fan.
    fn square_certificate() -> InvariantSetCertificate {
        let p = linear_box(-1.0);
        let (p, _) = p
            .map_cells(|_, c| -> Result<_, GeometryError> {
                let (a, b) = c.region.split_or_keep(&[1.0, -1.0], 0.0, 1e-9).unwrap();
                let mut out = Vec::new();
                for r in [a, b] {
                    let (c1, c2) = r.split_or_keep(&[1.0, 1.0], 0.0, 1e-9).unwrap();
                    out.push(c1);
                    out.push(c2);
                }
                Ok(out)
            })
            .unwrap();
        let pieces = p
            .cells()
            .iter()
            .map(|c| {
                let m = c.region.centroid();
                if m[0].abs() > m[1].abs() {
                    AffinePiece { s: vec![-m[0].signum(), 0.0], t: 0.5 }
                } else {
                    AffinePiece { s: vec![0.0, -m[1].signum()], t: 0.5 }
                }
            })
            .collect();
        let h = PwaField::new(pieces);
        let (p, parent) = refine_boundary(&p, &h, 1e-6).unwrap();
        let field = h.inherit(&parent);
        let cfg = RunConfig::default();
        // no growth claims: zero vertices stay on the boundary
        let categories = categorize(&p, &field, f64::INFINITY, cfg.nonzero_tol);
        InvariantSetCertificate {
            partition: p,
            barrier: BarrierFunction {
                field,
                alpha0: 1.0,
                alpha_m: 1.0,
                gamma: 0.1,
                iteration: 0,
            },
            categories,
            slacks: SlackSummary::default(),
            tolerances: Tolerances::from(&cfg),
            certified: true,
            stats: StageStats::default(),
        }
    }

    #[test]
    fn hand_certificate_passes() {
        let cert = square_certificate();
        let r = replay_barrier(&cert);
        assert!(r.passed, "{:?}", r.first_failure());
        assert!(r.worst_margin > 0.0 || r.worst_margin == 0.0);
        let n = check_nagumo_boundary(&cert);
        assert!(n.passed);
        // inward derivative at x1 = 0.5 equals 0.5
        assert!((n.worst_margin - 0.5).abs() < 1e-12, "{}", n.worst_margin);
    }

    #[test]
    fn negated_gradient_is_caught() {
        let mut cert = square_certificate();
        let i = 0;
        for s in cert.barrier.field.pieces[i].s.iter_mut() {
            *s = -*s;
        }
        let r = replay_barrier(&cert);
        assert!(!r.passed);
        assert!(r
            .failures()
            .any(|c| c.location.starts_with(&format!("cell {i} ")) || c.location.starts_with(&format!("cells {i} and"))));
    }

    #[test]
    fn shifted_dynamics_fail_nagumo() {
        let mut cert = square_certificate();
        let p = &cert.partition;
        // the cell holding the right half of the boundary x1 = 0.5
        let target = (0..p.num_cells())
            .find(|&i| {
                let c = p.cell(i).region.centroid();
                c[0] > 0.0 && c[0] < 0.5 && c[0].abs() > c[1].abs()
            })
            .unwrap();
        let mut cells: Vec<Cell> = p.cells().to_vec();
        cells[target].flow_offset = vec![1.0, 0.0];
        cert.partition = Partition::new(p.domain().clone(), cells).unwrap();
        let r = check_nagumo_boundary(&cert);
        assert!(!r.passed);
        assert!(r.failures().all(|c| c.location.starts_with(&format!("cell {target} "))));
    }

    #[test]
    fn stable_decay() {
        let r = simulate(&linear_box(-1.0), &[1.0, 1.0], 20.0, 1e-3);
        assert!(!r.left_domain);
        assert!(r.final_distance_to_origin <= 1e-8, "{}", r.final_distance_to_origin);
    }

    #[test]
    fn unstable_leaves_domain() {
        let r = simulate(&linear_box(1.0), &[0.1, 0.0], 20.0, 1e-3);
        assert!(r.left_domain);
        assert!((r.steps as f64) * 1e-3 < 20.0);
    }

    #[test]
    fn path_ends_where_simulation_ends() {
        let p = linear_box(-1.0);
        let path = simulate_path(&p, &[1.0, 0.5], 2.0, 1e-3, 100);
        assert_eq!(path.len(), 21);
        let r = simulate(&p, &[1.0, 0.5], 2.0, 1e-3);
        assert_eq!(path.last().unwrap(), &r.final_state);
        let escaping = simulate_path(&linear_box(1.0), &[0.1, 0.0], 20.0, 1e-3, 100);
        assert!(escaping.last().unwrap()[0] <= 1.0 + 1e-9);
    }

    #[test]
    fn rk4_is_fourth_order() {
        let p = linear_box(-1.0);
        let exact = (-1.0f64).exp();
        let err = |dt: f64| (simulate(&p, &[1.0, 0.0], 1.0, dt).final_state[0] - exact).abs();
        let ratio = err(0.1) / err(0.05);
        assert!((ratio - 16.0).abs() < 1.0, "{ratio}");
    }

    #[test]
    fn whole_domain_monte_carlo_has_no_exits() {
        let mut cert = square_certificate();
        for piece in cert.barrier.field.pieces.iter_mut() {
            *piece = AffinePiece { s: vec![0.0, 0.0], t: 1.0 };
        }
        let s = monte_carlo_invariance(&linear_box(-1.0), &cert, 1000, 20.0, 1e-2, 7);
        assert_eq!(s.samples, 1000);
        assert!(s.passed());
    }

    #[test]
    fn sampling_is_seeded() {
        let cert = square_certificate();
        assert_eq!(sample_in_set(&cert, 20, 3), sample_in_set(&cert, 20, 3));
        for x in sample_in_set(&cert, 200, 4) {
            assert!(x[0].abs() <= 0.5 && x[1].abs() <= 0.5);
        }
        let v = estimate_volume(&cert, 20_000, 1);
        assert!((v - 1.0).abs() < 0.05, "{v}");
    }

    #[test]
    fn continuous_dynamics_have_no_sliding_flags() {
        assert!(sliding_mode_diagnostic(&square_certificate()).is_empty());
    }
}
