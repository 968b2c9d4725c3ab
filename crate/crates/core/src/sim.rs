//! Monte-Carlo sample paths and impulse-response energy estimates.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{sample_xi, ClosedLoopSystem, XiRng};

/// Paths beyond this state norm are reported as diverging.
pub const DIVERGENCE_LIMIT: f64 = 1e15;
const CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `x_0, ..., x_K`
    pub states: Vec<DVector<f64>>,
    /// `z_0, ..., z_K`
    pub outputs: Vec<DVector<f64>>,
    /// `ξ_0, ..., ξ_K`
    pub xi_draws: Vec<Vec<f64>>,
}

/// Forward recursion `x_{k+1} = A(ξ_k) x_k + B(ξ_k) w_k`, `z_k = C(ξ_k) x_k + D(ξ_k) w_k`.
///
/// `w` holds `w_0, ..., w_K`; an empty slice means zero input.
pub fn simulate_path(
    sys: &ClosedLoopSystem,
    x0: &DVector<f64>,
    w: &[DVector<f64>],
    horizon: usize,
    rng: &mut XiRng,
) -> Result<Trajectory> {
    let (n, pw) = (sys.n(), sys.pw());
    if x0.len() != n {
        return Err(Error::Dimension(format!("x0 has length {}, expected {n}", x0.len())));
    }
    if !w.is_empty() && w.len() != horizon + 1 {
        return Err(Error::Dimension(format!(
            "input sequence has {} samples, expected {}",
            w.len(),
            horizon + 1
        )));
    }
    if let Some(bad) = w.iter().find(|v| v.len() != pw) {
        return Err(Error::Dimension(format!("input sample has length {}, expected {pw}", bad.len())));
    }
    let zero = DVector::zeros(pw);
    let mut states = Vec::with_capacity(horizon + 1);
    let mut outputs = Vec::with_capacity(horizon + 1);
    let mut xi_draws = Vec::with_capacity(horizon + 1);
    let mut x = x0.clone();
    for k in 0..=horizon {
        let xi = sample_xi(&sys.dist, rng);
        let wk = w.get(k).unwrap_or(&zero);
        outputs.push(sys.c.eval_unchecked(&xi) * &x + sys.d.eval_unchecked(&xi) * wk);
        let next = if k < horizon {
            Some(sys.a.eval_unchecked(&xi) * &x + sys.b.eval_unchecked(&xi) * wk)
        } else {
            None
        };
        states.push(x.clone());
        xi_draws.push(xi);
        if let Some(nx) = next {
            if !nx.iter().all(|v| v.is_finite()) || nx.norm() > DIVERGENCE_LIMIT {
                return Err(Error::NonFinite { path: 0, step: k + 1 });
            }
            x = nx;
        }
    }
    Ok(Trajectory {
        states,
        outputs,
        xi_draws,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_paths: usize,
    #[serde(rename = "K")]
    pub horizon: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TracePoint {
    pub k: usize,
    pub mean: f64,
    pub std_error: f64,
}

/// Per-step `|z_k|^2` of one impulse path, channels summed (all channels
/// share the path's parameter draws).
fn impulse_path(sys: &ClosedLoopSystem, horizon: usize, path: usize, seed: u64, out: &mut [f64]) -> Result<()> {
    let mut rng = XiRng::new(seed, path as u64);
    let xi = sample_xi(&sys.dist, &mut rng);
    out[0] = sys.d.eval_unchecked(&xi).norm_squared();
    let mut x: DMatrix<f64> = sys.b.eval_unchecked(&xi);
    for (k, slot) in out.iter_mut().enumerate().skip(1) {
        if !x.iter().all(|v| v.is_finite()) || x.norm() > DIVERGENCE_LIMIT {
            return Err(Error::NonFinite { path, step: k });
        }
        let xi = sample_xi(&sys.dist, &mut rng);
        *slot = (sys.c.eval_unchecked(&xi) * &x).norm_squared();
        if k < horizon {
            x = sys.a.eval_unchecked(&xi) * x;
        }
    }
    Ok(())
}

/// Per-step `|x_k|^2` of one autonomous path from `x0`.
fn state_path(sys: &ClosedLoopSystem, x0: &DVector<f64>, path: usize, seed: u64, out: &mut [f64]) -> Result<()> {
    let mut rng = XiRng::new(seed, path as u64);
    let mut x = x0.clone();
    let last = out.len() - 1;
    for (k, slot) in out.iter_mut().enumerate() {
        if !x.iter().all(|v| v.is_finite()) || x.norm() > DIVERGENCE_LIMIT {
            return Err(Error::NonFinite { path, step: k });
        }
        *slot = x.norm_squared();
        if k < last {
            let xi = sample_xi(&sys.dist, &mut rng);
            x = sys.a.eval_unchecked(&xi) * x;
        }
    }
    Ok(())
}

/// Sums over one chunk of paths, in path order.
#[derive(Debug, Clone)]
struct ChunkStats {
    step_sum: Vec<f64>,
    step_sumsq: Vec<f64>,
    totals: Vec<f64>,
}

fn run_chunk(
    steps: usize,
    paths: std::ops::Range<usize>,
    path_fn: &(dyn Fn(usize, &mut [f64]) -> Result<()> + Sync),
) -> Result<ChunkStats> {
    let mut stats = ChunkStats {
        step_sum: vec![0.0; steps],
        step_sumsq: vec![0.0; steps],
        totals: Vec::with_capacity(paths.len()),
    };
    let mut buf = vec![0.0; steps];
    for p in paths {
        path_fn(p, &mut buf)?;
        let mut total = 0.0;
        for (k, &e) in buf.iter().enumerate() {
            stats.step_sum[k] += e;
            stats.step_sumsq[k] += e * e;
            total += e;
        }
        stats.totals.push(total);
    }
    Ok(stats)
}

/// Pairwise reduction in chunk order, independent of thread scheduling.
fn merge(mut chunks: Vec<ChunkStats>) -> ChunkStats {
    while chunks.len() > 1 {
        let mut next = Vec::with_capacity(chunks.len().div_ceil(2));
        let mut it = chunks.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                for (x, y) in a.step_sum.iter_mut().zip(&b.step_sum) {
                    *x += y;
                }
                for (x, y) in a.step_sumsq.iter_mut().zip(&b.step_sumsq) {
                    *x += y;
                }
                a.totals.extend(b.totals);
            }
            next.push(a);
        }
        chunks = next;
    }
    chunks.pop().expect("at least one chunk")
}

fn run_paths(
    steps: usize,
    n_paths: usize,
    path_fn: &(dyn Fn(usize, &mut [f64]) -> Result<()> + Sync),
) -> Result<ChunkStats> {
    if n_paths == 0 {
        return Err(Error::Schema("at least one sample path is required".into()));
    }
    let ranges: Vec<std::ops::Range<usize>> = (0..n_paths)
        .step_by(CHUNK)
        .map(|s| s..(s + CHUNK).min(n_paths))
        .collect();
    #[cfg(feature = "parallel")]
    let chunks: Result<Vec<ChunkStats>> = {
        use rayon::prelude::*;
        ranges.into_par_iter().map(|r| run_chunk(steps, r, path_fn)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let chunks: Result<Vec<ChunkStats>> = ranges.into_iter().map(|r| run_chunk(steps, r, path_fn)).collect();
    Ok(merge(chunks?))
}

fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let (a, b) = v.split_at(v.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

fn trace_points(stats: &ChunkStats, n_paths: usize) -> Vec<TracePoint> {
    let n = n_paths as f64;
    stats
        .step_sum
        .iter()
        .zip(&stats.step_sumsq)
        .enumerate()
        .map(|(k, (&s, &sq))| {
            let mean = s / n;
            let var = if n_paths > 1 {
                ((sq - n * mean * mean) / (n - 1.0)).max(0.0)
            } else {
                0.0
            };
            TracePoint {
                k,
                mean,
                std_error: (var / n).sqrt(),
            }
        })
        .collect()
}

fn energy_from(stats: &ChunkStats, trace: &[TracePoint], n_paths: usize, horizon: usize) -> EnergyEstimate {
    let mean: f64 = trace.iter().map(|p| p.mean).sum();
    let n = n_paths as f64;
    let std_error = if n_paths > 1 {
        // shifted by the first total so that identical paths give exactly zero
        let t0 = stats.totals[0];
        let dev: Vec<f64> = stats.totals.iter().map(|t| t - t0).collect();
        let sq: Vec<f64> = dev.iter().map(|d| d * d).collect();
        let s = pairwise_sum(&dev);
        let var = ((pairwise_sum(&sq) - s * s / n) / (n - 1.0)).max(0.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    EnergyEstimate {
        mean,
        std_error,
        n_paths,
        horizon,
    }
}

fn impulse_stats(sys: &ClosedLoopSystem, horizon: usize, n_paths: usize, seed: u64) -> Result<ChunkStats> {
    let f = |p: usize, out: &mut [f64]| impulse_path(sys, horizon, p, seed, out);
    run_paths(horizon + 1, n_paths, &f)
}

/// Estimate of `s_K`: the mean over paths of `sum_i sum_{k=0}^K |z_k^{(i)}|^2`
/// under unit impulses on each disturbance channel.
pub fn impulse_energy_mc(sys: &ClosedLoopSystem, horizon: usize, n_paths: usize, seed: u64) -> Result<EnergyEstimate> {
    let stats = impulse_stats(sys, horizon, n_paths, seed)?;
    let trace = trace_points(&stats, n_paths);
    Ok(energy_from(&stats, &trace, n_paths, horizon))
}

/// Per-step estimates of `E[|z_k|^2]` under impulse input.
pub fn second_moment_trace(sys: &ClosedLoopSystem, horizon: usize, n_paths: usize, seed: u64) -> Result<Vec<TracePoint>> {
    let stats = impulse_stats(sys, horizon, n_paths, seed)?;
    Ok(trace_points(&stats, n_paths))
}

/// Trace and energy estimate from one set of paths.
pub fn impulse_trace_and_energy(
    sys: &ClosedLoopSystem,
    horizon: usize,
    n_paths: usize,
    seed: u64,
) -> Result<(Vec<TracePoint>, EnergyEstimate)> {
    let stats = impulse_stats(sys, horizon, n_paths, seed)?;
    let trace = trace_points(&stats, n_paths);
    let energy = energy_from(&stats, &trace, n_paths, horizon);
    Ok((trace, energy))
}

/// Per-step estimates of `E[|x_k|^2]` for the autonomous system from `x0`.
pub fn state_second_moment_trace(
    sys: &ClosedLoopSystem,
    x0: &DVector<f64>,
    horizon: usize,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<TracePoint>> {
    if x0.len() != sys.n() {
        return Err(Error::Dimension(format!("x0 has length {}, expected {}", x0.len(), sys.n())));
    }
    let f = |p: usize, out: &mut [f64]| state_path(sys, x0, p, seed, out);
    let stats = run_paths(horizon + 1, n_paths, &f)?;
    Ok(trace_points(&stats, n_paths))
}

pub fn write_trace_csv(trace: &[TracePoint], out: &mut impl Write) -> Result<()> {
    writeln!(out, "k,mean,std_error")?;
    for p in trace {
        writeln!(out, "{},{:e},{:e}", p.k, p.mean, p.std_error)?;
    }
    Ok(())
}
