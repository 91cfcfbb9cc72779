//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Every entry point returns a JSON string; the page does the drawing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roa_core::certify::simulate_path;
use roa_core::config::RunConfig;
use roa_core::contour::{boundary_loops, loops_area};
use roa_core::geometry::{Partition, Polytope};
use roa_core::iise::run_iise;
use roa_core::lyapunov::roa_certificate;
use roa_core::matrix::Matrix;
use roa_core::relu::{enumerate_regions, ReluNetwork, DEFAULT_REGION_CAP};
use roa_core::system::fixture;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

const RELU_BOX: f64 = 2.0;

fn polygons(p: &Partition) -> Vec<Value> {
    p.cells()
        .iter()
        .map(|c| json!(c.region.vertices().iter().map(|v| [v[0], v[1]]).collect::<Vec<_>>()))
        .collect()
}

fn pendulum_dynamics() -> Result<Partition, String> {
    fixture("pendulum")
        .and_then(|s| s.partition())
        .map_err(|e| e.to_string())
}

/// Activation regions of a random one-hidden-layer network on `[-2, 2]²`.
pub fn relu_regions_value(seed: u64, hidden: usize) -> Result<Value, String> {
    if !(1..=16).contains(&hidden) {
        return Err(format!("hidden width {hidden} outside 1..=16"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = |k: usize| -> Vec<f64> { (0..k).map(|_| rng.random_range(-1.0..1.0)).collect() };
    let net = ReluNetwork::new(
        Matrix::new(hidden, 2, u(2 * hidden)),
        u(hidden),
        Matrix::new(2, hidden, u(2 * hidden)),
        u(2),
    )
    .map_err(|e| e.to_string())?;
    let domain = Polytope::from_box(&[-RELU_BOX; 2], &[RELU_BOX; 2]).map_err(|e| e.to_string())?;
    let p = enumerate_regions(&net, &domain, DEFAULT_REGION_CAP).map_err(|e| e.to_string())?;
    let regions: Vec<Value> = p
        .cells()
        .iter()
        .zip(polygons(&p))
        .map(|(c, poly)| {
            let (x, _) = c.region.chebyshev_center();
            let active = (0..hidden)
                .filter(|&j| net.w1().get(j, 0) * x[0] + net.w1().get(j, 1) * x[1] + net.b1()[j] > 0.0)
                .count();
            json!({ "polygon": poly, "active": active })
        })
        .collect();
    Ok(json!({
        "domain": [[-RELU_BOX, -RELU_BOX], [RELU_BOX, RELU_BOX]],
        "hidden": hidden,
        "bound": 1 + hidden + hidden * (hidden - 1) / 2,
        "regions": regions,
    }))
}

/// Grow invariant sets for the saturated pendulum and run the Lyapunov
/// stage on the last one.
pub fn pendulum_value(max_iter: usize) -> Result<Value, String> {
    let dynamics = pendulum_dynamics()?;
    let cfg = RunConfig {
        max_iter,
        ..RunConfig::default()
    };
    let run = run_iise(&dynamics, &cfg).map_err(|e| e.to_string())?;
    let iterations: Vec<Value> = run
        .certificates
        .iter()
        .enumerate()
        .map(|(m, c)| {
            let loops = boundary_loops(c).unwrap_or_default();
            json!({ "iteration": m, "area": loops_area(&loops), "cells": c.partition.num_cells(), "loops": loops })
        })
        .collect();
    let lyapunov = match roa_certificate(&run, &cfg) {
        Ok(roa) => json!({ "certified": true, "cells": roa.lyapunov.partition.num_cells() }),
        Err(e) => json!({ "certified": false, "error": e.to_string() }),
    };
    let (lo, hi) = dynamics.domain().bounding_box();
    Ok(json!({
        "domain": [lo, hi],
        "termination": run.termination.as_str(),
        "dynamics": polygons(&dynamics),
        "iterations": iterations,
        "lyapunov": lyapunov,
    }))
}

/// Pendulum trajectory from `(x, y)`, sampled every 0.05 s.
pub fn trajectory_value(x: f64, y: f64, horizon: f64) -> Result<Value, String> {
    let dynamics = pendulum_dynamics()?;
    if !dynamics.domain().contains(&[x, y], 0.0) {
        return Err(format!("({x}, {y}) is outside the domain"));
    }
    if !(horizon > 0.0 && horizon <= 100.0) {
        return Err(format!("horizon {horizon} outside (0, 100]"));
    }
    let path = simulate_path(&dynamics, &[x, y], horizon, 1e-3, 50);
    let last = path.last().cloned().unwrap_or_default();
    Ok(json!({
        "path": path,
        "final_distance": last.iter().map(|v| v * v).sum::<f64>().sqrt(),
    }))
}

fn to_js(v: Result<Value, String>) -> Result<String, JsValue> {
    v.map(|v| v.to_string()).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn relu_regions(seed: u64, hidden: usize) -> Result<String, JsValue> {
    to_js(relu_regions_value(seed, hidden))
}

#[wasm_bindgen]
pub fn pendulum(max_iter: usize) -> Result<String, JsValue> {
    to_js(pendulum_value(max_iter))
}

#[wasm_bindgen]
pub fn trajectory(x: f64, y: f64, horizon: f64) -> Result<String, JsValue> {
    to_js(trajectory_value(x, y, horizon))
}
