//! Browser bindings: series-based analysis, Monte-Carlo traces and gain
//! sweeps for a system description. Results are returned as JSON text.

use h2iid::analysis::h2_oracle;
use h2iid::model::{close_loop, load_system, ClosedLoopSystem, SystemModel};
use h2iid::moments::{expectation_matrix, ExpectationKind, MomentMap};
use h2iid::sim::impulse_trace_and_energy;
use nalgebra::DMatrix;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

const ORACLE_TOL: f64 = 1e-10;
const MAX_HORIZON: usize = 2000;
const MAX_PATHS: usize = 200_000;
const MAX_SWEEP_POINTS: usize = 400;

type Out = Result<Value, String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Comma-separated entries, rows separated by `;`. Empty text means no gain.
pub fn parse_gain(text: &str) -> Result<Option<DMatrix<f64>>, String> {
    let text = text.trim();
    if text.is_empty() {
        return Ok(None);
    }
    let rows: Vec<Vec<f64>> = text
        .split(';')
        .map(|r| {
            r.split(',')
                .map(|x| x.trim().parse::<f64>().map_err(|_| format!("bad gain entry `{}`", x.trim())))
                .collect()
        })
        .collect::<Result<_, _>>()?;
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err("gain rows have different lengths".into());
    }
    Ok(Some(DMatrix::from_row_iterator(rows.len(), cols, rows.into_iter().flatten())))
}

fn closed(system: &str, gain: Option<&DMatrix<f64>>) -> Result<ClosedLoopSystem, String> {
    match (load_system(system).map_err(err)?, gain) {
        (SystemModel::Closed(sys), None) => Ok(sys),
        (SystemModel::Closed(_), Some(_)) => Err("this system has no control input; clear the gain".into()),
        (SystemModel::Plant(p), Some(f)) => close_loop(&p, f).map_err(err),
        (SystemModel::Plant(p), None) => close_loop(&p, &DMatrix::zeros(p.pu(), p.n())).map_err(err),
    }
}

/// `E[|z_k|^2]` under impulse input for `k = 0..=horizon`.
pub fn exact_trace(sys: &ClosedLoopSystem, horizon: usize) -> Vec<f64> {
    let map = MomentMap::analytic(&sys.a, &sys.dist);
    let bbt = expectation_matrix(ExpectationKind::BBt, sys);
    let mut q = expectation_matrix(ExpectationKind::CtC, sys);
    let mut out = vec![expectation_matrix(ExpectationKind::DtD, sys).trace()];
    for k in 1..=horizon {
        out.push((&bbt * &q).trace());
        if k < horizon {
            q = map.apply(&q);
        }
    }
    out
}

fn norm_or_null(sys: &ClosedLoopSystem) -> Value {
    h2_oracle(sys, ORACLE_TOL).map_or(Value::Null, |o| json!(o.norm))
}

pub fn analyze_value(system: &str, gain: &str) -> Out {
    let gain = parse_gain(gain)?;
    let sys = closed(system, gain.as_ref())?;
    let rho = MomentMap::analytic(&sys.a, &sys.dist).spectral_radius(400, 0);
    let stable = rho < 1.0;
    let oracle = if stable { h2_oracle(&sys, ORACLE_TOL).ok() } else { None };
    Ok(json!({
        "n": sys.n(),
        "stable": stable,
        "moment_map_spectral_radius": rho,
        "decay_rate_estimate": rho.sqrt(),
        "h2_norm": oracle.as_ref().map(|o| o.norm),
        "terms": oracle.as_ref().map(|o| o.terms),
    }))
}

pub fn trace_value(system: &str, gain: &str, horizon: usize, paths: usize, seed: u64) -> Out {
    if horizon == 0 || horizon > MAX_HORIZON {
        return Err(format!("horizon must be in 1..={MAX_HORIZON}"));
    }
    if paths == 0 || paths > MAX_PATHS {
        return Err(format!("paths must be in 1..={MAX_PATHS}"));
    }
    let gain = parse_gain(gain)?;
    let sys = closed(system, gain.as_ref())?;
    let (trace, energy) = impulse_trace_and_energy(&sys, horizon, paths, seed).map_err(err)?;
    let exact = exact_trace(&sys, horizon);
    Ok(json!({
        "k": trace.iter().map(|t| t.k).collect::<Vec<_>>(),
        "mc_mean": trace.iter().map(|t| t.mean).collect::<Vec<_>>(),
        "mc_std_error": trace.iter().map(|t| t.std_error).collect::<Vec<_>>(),
        "exact": exact,
        "energy_mc": energy.mean,
        "energy_std_error": energy.std_error,
        "energy_exact": exact.iter().sum::<f64>(),
    }))
}

pub fn sweep_value(system: &str, gain: &str, index: usize, lo: f64, hi: f64, points: usize) -> Out {
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err("sweep range needs finite lo < hi".into());
    }
    if !(2..=MAX_SWEEP_POINTS).contains(&points) {
        return Err(format!("points must be in 2..={MAX_SWEEP_POINTS}"));
    }
    let base = parse_gain(gain)?.ok_or("sweep needs a gain to vary")?;
    if index >= base.len() {
        return Err(format!("gain has {} entries, index {index} is out of range", base.len()));
    }
    // row-major position, matching the order of the text
    let (r, c) = (index / base.ncols(), index % base.ncols());
    let (mut values, mut norms) = (Vec::new(), Vec::new());
    for i in 0..points {
        let v = lo + (hi - lo) * i as f64 / (points - 1) as f64;
        let mut f = base.clone();
        f[(r, c)] = v;
        let sys = closed(system, Some(&f))?;
        values.push(v);
        norms.push(norm_or_null(&sys));
    }
    Ok(json!({ "index": index, "values": values, "h2_norm": norms }))
}

fn to_js(v: Out) -> Result<String, JsValue> {
    v.map(|v| v.to_string()).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn benchmark_system() -> String {
    h2iid::BENCHMARK_PLANT.to_string()
}

#[wasm_bindgen]
pub fn analyze(system: &str, gain: &str) -> Result<String, JsValue> {
    to_js(analyze_value(system, gain))
}

#[wasm_bindgen]
pub fn energy_trace(system: &str, gain: &str, horizon: usize, paths: usize, seed: u32) -> Result<String, JsValue> {
    to_js(trace_value(system, gain, horizon, paths, seed as u64))
}

#[wasm_bindgen]
pub fn gain_sweep(system: &str, gain: &str, index: usize, lo: f64, hi: f64, points: usize) -> Result<String, JsValue> {
    to_js(sweep_value(system, gain, index, lo, hi, points))
}
