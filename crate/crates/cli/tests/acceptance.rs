//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line for
//! each and exits nonzero if any failed.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use common::{dense_reference, random_feasible_lp, random_instance, random_network, Outcome};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roa_core::certify::{
    check_nagumo_boundary, estimate_volume, monte_carlo_invariance, replay_barrier, replay_roa, sample_in_set,
    simulate, OVERSHOOT_TOL,
};
use roa_core::config::RunConfig;
use roa_core::contour::{boundary_loops, point_in_region};
use roa_core::geometry::Polytope;
use roa_core::iise::{build_iise_lp, Tolerances};
use roa_core::linprog::{solve, LpBackend, LpStatus, RevisedSimplex};
use roa_core::relu::{enumerate_regions, DEFAULT_REGION_CAP};
use roa_core::report::ResultDocument;
use serde_json::Value;

type Verdict = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

/// One pendulum analysis through the command-line tool.
struct Run {
    doc: ResultDocument,
    raw: Value,
    elapsed: Duration,
}

fn roa(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_roa")).args(args).output().expect("roa runs")
}

fn analyze_fixture(name: &str, dir: &Path) -> Result<(Option<(ResultDocument, Value)>, i32, Duration), String> {
    let spec = dir.join(format!("{name}.json"));
    let out = dir.join(format!("{name}-result.json"));
    let s = roa(&["fixture", name, "--output", spec.to_str().unwrap()]);
    ensure!(s.status.success(), "fixture {name}: {}", String::from_utf8_lossy(&s.stderr));
    let t = Instant::now();
    let r = roa(&["analyze", spec.to_str().unwrap(), "--output", out.to_str().unwrap()]);
    let elapsed = t.elapsed();
    let code = r.status.code().unwrap_or(-1);
    if !out.exists() {
        return Ok((None, code, elapsed));
    }
    let text = std::fs::read_to_string(&out).map_err(|e| e.to_string())?;
    let doc = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let raw = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    Ok((Some((doc, raw)), code, elapsed))
}

fn barrier_lp_feasibility() -> Verdict {
    let t = Instant::now();
    let tol = Tolerances::from(&RunConfig::default());
    for seed in 0..200u64 {
        let (p, cats, alpha_m) = random_instance(seed);
        let lp = build_iise_lp(&p, &cats, 1.0, alpha_m, &tol);
        let sol = solve(&lp.problem).map_err(|e| format!("instance {seed}: {e}"))?;
        ensure!(sol.status == LpStatus::Optimal, "instance {seed}: {:?}", sol.status);
    }
    let secs = t.elapsed().as_secs_f64();
    ensure!(secs < 60.0, "200 instances took {secs:.1}s");
    Ok(format!("200/200 optimal in {secs:.1}s"))
}

fn nested_growth(run: &Run) -> Verdict {
    let certs: Vec<_> = run.doc.iterations.iter().map(|r| &r.certificate).collect();
    ensure!(certs.len() >= 2, "only {} certified sets", certs.len());
    for (m, pair) in certs.windows(2).enumerate() {
        let (prev, next) = (pair[0], pair[1]);
        let values = prev.vertex_values();
        for (k, v) in prev.partition.pool().iter().enumerate() {
            if values[k] >= 0.0 {
                let h = next.value_at(v).ok_or("vertex outside the domain")?;
                ensure!(h >= -1e-6, "S_{m} vertex {v:?} has h_{} = {h:e}", m + 1);
            }
        }
        let best = next
            .categories
            .nugis_vertices()
            .iter()
            .map(|&k| next.value_at(next.partition.vertex(k)).unwrap_or(f64::NEG_INFINITY))
            .fold(f64::NEG_INFINITY, f64::max);
        ensure!(best >= 1e-4, "step {m}: best grown vertex h = {best:e}");
        let inner = boundary_loops(prev).ok_or("not planar")?;
        let outer = boundary_loops(next).ok_or("not planar")?;
        // the 1e-6 barrier tolerance, as a distance
        for p in inner.iter().flatten() {
            let grad = next
                .partition
                .locate(p)
                .iter()
                .map(|&i| next.barrier.field.piece(i).gradient_norm())
                .fold(0.0, f64::max);
            let tol = if grad > 0.0 { 1e-6 / grad } else { 1e-6 };
            ensure!(point_in_region(&outer, *p, tol), "loop {m} point {p:?} outside loop {}", m + 1);
        }
    }
    Ok(format!("{} consecutive pairs nested", certs.len() - 1))
}

fn growth(run: &Run) -> Verdict {
    let n = run.doc.iterations.len() - 1;
    ensure!(n >= 2, "{n} growth iterations");
    let seed = estimate_volume(&run.doc.iterations[0].certificate, 100_000, 5);
    let last = estimate_volume(&run.doc.iterations[n].certificate, 100_000, 5);
    ensure!(last > 1.01 * seed, "area {seed:.4} -> {last:.4}");
    Ok(format!("{n} iterations, area {seed:.3} -> {last:.3} (+{:.1}%)", 100.0 * (last / seed - 1.0)))
}

fn soundness(run: &Run, stable: &ResultDocument) -> Verdict {
    let mut worst = f64::INFINITY;
    let mut count = 0;
    for doc in [&run.doc, stable] {
        for r in &doc.iterations {
            let c = &r.certificate;
            let rep = replay_barrier(c).merge(check_nagumo_boundary(c));
            ensure!(rep.worst_margin >= -1e-6, "{} iteration {}: {:?}", doc.system.name, r.iteration, rep.first_failure());
            worst = worst.min(rep.worst_margin);
            count += 1;
        }
        let roa = doc.roa_certificate().ok_or("no RoA certificate")?;
        let rep = replay_roa(&roa);
        ensure!(rep.passed, "{} RoA replay: {:?}", doc.system.name, rep.first_failure());
    }
    let dynamics = run.doc.system.partition().map_err(|e| e.to_string())?;
    let last = &run.doc.iterations.last().unwrap().certificate;
    let mc = monte_carlo_invariance(&dynamics, last, 1000, 20.0, 1e-3, 2);
    ensure!(mc.samples == 1000, "only {} samples drawn", mc.samples);
    ensure!(mc.exits == 0 && mc.left_domain == 0, "{} exits, first from {:?}", mc.exits, mc.first_exit);
    ensure!(mc.max_overshoot <= OVERSHOOT_TOL, "overshoot {:e}", mc.max_overshoot);
    Ok(format!("{count} certificates, worst margin {worst:.2e}; 1000 trajectories, 0 exits"))
}

fn roa_convergence(run: &Run) -> Verdict {
    let roa = run.doc.roa_certificate().ok_or("no RoA certificate")?;
    let dynamics = run.doc.system.partition().map_err(|e| e.to_string())?;
    let starts = sample_in_set(&roa.invariant, 1000, 3);
    ensure!(starts.len() == 1000, "only {} samples drawn", starts.len());
    let mut worst = 0.0f64;
    for x in &starts {
        let r = simulate(&dynamics, x, 40.0, 1e-3);
        ensure!(!r.left_domain, "{x:?} left the domain");
        worst = worst.max(r.final_distance_to_origin);
    }
    ensure!(worst <= 1e-2, "worst final distance {worst:e}");
    Ok(format!("1000 trajectories, worst final |x| = {worst:.2e}"))
}

fn trivial_completeness(stable: &(ResultDocument, Duration), unstable: (bool, i32)) -> Verdict {
    let (doc, elapsed) = stable;
    ensure!(elapsed.as_secs_f64() < 5.0, "stable run took {:.2}s", elapsed.as_secs_f64());
    let last = &doc.iterations.last().unwrap().certificate;
    for v in last.partition.domain().vertices() {
        ensure!(last.contains(v, 1e-9), "corner {v:?} outside S");
    }
    for r in &doc.iterations {
        ensure!(r.slacks.blocking <= 1e-9, "iteration {} barrier slack {:e}", r.iteration, r.slacks.blocking);
    }
    let tau = doc.lyapunov.as_ref().ok_or("no Lyapunov function")?.function.tau_sum;
    ensure!(tau <= 1e-9, "decrease slack {tau:e}");
    let (wrote, code) = unstable;
    ensure!(code == 3, "unstable system exited with {code}");
    ensure!(!wrote, "unstable system wrote a result");
    Ok(format!("whole box certified in {:.2}s; unstable exits 3", elapsed.as_secs_f64()))
}

fn relu_equivalence() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let net = random_network(&mut rng, 8, 1.0);
    let domain = Polytope::from_box(&[-2.0, -2.0], &[2.0, 2.0]).map_err(|e| e.to_string())?;
    let p = enumerate_regions(&net, &domain, DEFAULT_REGION_CAP).map_err(|e| e.to_string())?;
    ensure!(p.num_cells() <= 37, "{} regions", p.num_cells());
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let x = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let y = net.eval(&x);
        let f = p.flow(&x).ok_or("sample not located")?;
        worst = worst.max((y[0] - f[0]).abs()).max((y[1] - f[1]).abs());
    }
    ensure!(worst <= 1e-9, "deviation {worst:e}");
    Ok(format!("{} regions, max deviation {worst:.1e}", p.num_cells()))
}

fn tolerance_conformance(run: &Run) -> Verdict {
    let prov = &run.raw["provenance"];
    for key in ["eps1", "eps2", "eps3"] {
        for block in ["config", "tolerances"] {
            let v = prov[block][key].as_f64().ok_or(format!("{block}.{key} missing"))?;
            ensure!(v == 1e-4, "{block}.{key} = {v}");
        }
    }
    let nz = prov["config"]["nonzero_tol"].as_f64().ok_or("nonzero_tol missing")?;
    ensure!(nz == 1e-6, "nonzero_tol = {nz}");
    Ok("eps1 = eps2 = eps3 = 1e-4, nonzero 1e-6".into())
}

fn lp_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let mut worst = 0.0f64;
    for n in 0..100 {
        let p = random_feasible_lp(&mut rng, 20, 40);
        let Outcome::Optimal(reference) = dense_reference(&p) else {
            return Err(format!("problem {n}: reference not optimal"));
        };
        let sol = RevisedSimplex::default().solve(&p).map_err(|e| e.to_string())?;
        ensure!(sol.status == LpStatus::Optimal, "problem {n}: {:?}", sol.status);
        worst = worst.max((sol.objective_value - reference).abs());
    }
    ensure!(worst <= 1e-6, "objective error {worst:e}");
    Ok(format!("100 problems, max objective error {worst:.1e}"))
}

fn runtime(run: &Run) -> Verdict {
    let secs = run.elapsed.as_secs_f64();
    ensure!(secs < 600.0, "{secs:.1}s");
    Ok(format!("pendulum analysis {secs:.1}s"))
}

fn main() -> ExitCode {
    let dir = tempfile::tempdir().expect("temp dir");
    let pendulum = analyze_fixture("pendulum", dir.path());
    let stable = analyze_fixture("stable-linear", dir.path());
    let unstable = analyze_fixture("unstable-linear", dir.path());

    let run = match pendulum {
        Ok((Some((doc, raw)), 0, elapsed)) => Ok(Run { doc, raw, elapsed }),
        Ok((_, code, _)) => Err(format!("pendulum analysis exited with {code}")),
        Err(e) => Err(e),
    };
    let stable = match stable {
        Ok((Some((doc, _)), 0, elapsed)) => Ok((doc, elapsed)),
        Ok((_, code, _)) => Err(format!("stable analysis exited with {code}")),
        Err(e) => Err(e),
    };
    let unstable = unstable.map(|(doc, code, _)| (doc.is_some(), code));

    let with_run = |f: &dyn Fn(&Run) -> Verdict| run.as_ref().map_err(Clone::clone).and_then(f);
    let results: Vec<(&str, Verdict)> = vec![
        ("barrier lp feasibility", barrier_lp_feasibility()),
        ("nested growth", with_run(&nested_growth)),
        ("growth realized", with_run(&growth)),
        (
            "soundness replay",
            with_run(&|r| stable.as_ref().map_err(Clone::clone).and_then(|(s, _)| soundness(r, s))),
        ),
        ("roa convergence", with_run(&roa_convergence)),
        (
            "trivial completeness",
            stable
                .as_ref()
                .map_err(Clone::clone)
                .and_then(|s| unstable.clone().and_then(|u| trivial_completeness(s, u))),
        ),
        ("relu equivalence", relu_equivalence()),
        ("tolerance conformance", with_run(&tolerance_conformance)),
        ("lp oracle agreement", lp_oracle()),
        ("runtime envelope", with_run(&runtime)),
    ];

    let mut failed = 0;
    for (name, r) in &results {
        match r {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
