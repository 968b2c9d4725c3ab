//! Command-line front end: argument parsing, dispatch and result documents.

use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use nalgebra::DMatrix;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::analysis::{check_stability, h2_norm, h2_oracle, AnalysisOptions};
use crate::error::{Error, Result};
use crate::factorize::DEFAULT_RANK_TOL;
use crate::model::{close_loop, load_system, ClosedLoopSystem, SystemModel};
use crate::sdp::DEFAULT_EPS;
use crate::sim::{impulse_trace_and_energy, write_trace_csv};
use crate::synthesis::{h2_synthesize, stabilize_decay, DEFAULT_BISECT_TOL};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_VERDICT: i32 = 2;
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Analyze,
    Synthesize,
    Stabilize,
    Simulate,
    Oracle,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Analyze => "analyze",
            Command::Synthesize => "synthesize",
            Command::Stabilize => "stabilize",
            Command::Simulate => "simulate",
            Command::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone, Parser)]
#[command(name = "h2iid", version, about = "H2 analysis and state-feedback synthesis for systems with i.i.d. random coefficients")]
pub struct RunConfig {
    #[arg(value_enum)]
    pub command: Command,
    /// System description (JSON).
    #[arg(long)]
    pub input: PathBuf,
    /// Result document path; standard output when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Gain file (a result document or `{"F": [[...]]}`), or an inline
    /// matrix such as `1.67,0.10,-1.71` with rows separated by `;`.
    #[arg(long, allow_hyphen_values = true)]
    pub gain: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub paths: usize,
    #[arg(long, default_value_t = 100)]
    pub horizon: usize,
    #[arg(long, default_value_t = DEFAULT_EPS)]
    pub eps: f64,
    #[arg(long, default_value_t = DEFAULT_RANK_TOL)]
    pub rank_tol: f64,
    #[arg(long, default_value_t = DEFAULT_BISECT_TOL)]
    pub bisect_tol: f64,
    #[arg(long, default_value_t = 1e-12)]
    pub oracle_tol: f64,
    /// CSV file for the per-step trace of `simulate`.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(command: Command, input: impl Into<PathBuf>) -> Self {
        Self {
            command,
            input: input.into(),
            output: None,
            gain: None,
            seed: 0,
            paths: 1000,
            horizon: 100,
            eps: DEFAULT_EPS,
            rank_tol: DEFAULT_RANK_TOL,
            bisect_tol: DEFAULT_BISECT_TOL,
            oracle_tol: 1e-12,
            trace: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let tols = [
            ("eps", self.eps),
            ("rank-tol", self.rank_tol),
            ("bisect-tol", self.bisect_tol),
            ("oracle-tol", self.oracle_tol),
        ];
        for (name, v) in tols {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Schema(format!("--{name} must be positive, got {v}")));
            }
        }
        if self.paths == 0 {
            return Err(Error::Schema("--paths must be at least 1".into()));
        }
        if self.gain.is_some() && matches!(self.command, Command::Synthesize | Command::Stabilize) {
            return Err(Error::Schema(format!("--gain is not accepted by {}", self.command.as_str())));
        }
        Ok(())
    }

    fn analysis_options(&self) -> AnalysisOptions {
        AnalysisOptions {
            eps: self.eps,
            rank_tol: self.rank_tol,
            seed: self.seed,
            ..AnalysisOptions::default()
        }
    }
}

pub fn matrix_json(m: &DMatrix<f64>) -> Value {
    Value::Array(
        (0..m.nrows())
            .map(|i| Value::Array((0..m.ncols()).map(|j| json!(m[(i, j)])).collect()))
            .collect(),
    )
}

fn matrix_from_json(v: &Value) -> Result<DMatrix<f64>> {
    let rows = v
        .as_array()
        .ok_or_else(|| Error::Schema("gain must be an array of rows".into()))?;
    let parsed: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| {
            r.as_array()
                .ok_or_else(|| Error::Schema("gain rows must be arrays".into()))?
                .iter()
                .map(|x| x.as_f64().ok_or_else(|| Error::Schema("gain entries must be numbers".into())))
                .collect()
        })
        .collect::<Result<_>>()?;
    from_rows(parsed)
}

fn from_rows(rows: Vec<Vec<f64>>) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::Schema("gain must be a non-empty rectangular matrix".into()));
    }
    Ok(DMatrix::from_row_iterator(r, c, rows.into_iter().flatten()))
}

fn parse_inline_gain(text: &str) -> Option<DMatrix<f64>> {
    let rows: Option<Vec<Vec<f64>>> = text
        .split(';')
        .map(|r| r.split(',').map(|x| x.trim().parse::<f64>().ok()).collect())
        .collect();
    from_rows(rows?).ok()
}

/// Reads a gain from a file (top-level `F` or `results.F`) or inline text.
pub fn load_gain(spec: &str) -> Result<DMatrix<f64>> {
    let path = Path::new(spec);
    if !path.exists() {
        if let Some(m) = parse_inline_gain(spec) {
            return Ok(m);
        }
    }
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let f = doc
        .get("F")
        .or_else(|| doc.get("results").and_then(|r| r.get("F")))
        .ok_or_else(|| Error::Schema("gain document has no `F` or `results.F` field".into()))?;
    matrix_from_json(f)
}

fn closed_system(model: SystemModel, gain: Option<&DMatrix<f64>>) -> Result<ClosedLoopSystem> {
    match (model, gain) {
        (SystemModel::Closed(sys), None) => Ok(sys),
        (SystemModel::Closed(_), Some(_)) => Err(Error::Schema("--gain given for a system without control input".into())),
        (SystemModel::Plant(p), Some(f)) => close_loop(&p, f),
        (SystemModel::Plant(p), None) => close_loop(&p, &DMatrix::zeros(p.pu(), p.n())),
    }
}

fn plant_of(model: SystemModel) -> Result<crate::model::GeneralizedPlant> {
    match model {
        SystemModel::Plant(p) => Ok(p),
        SystemModel::Closed(_) => Err(Error::Schema("synthesis needs a plant with B_ou".into())),
    }
}

/// Outcome of one command: exit code and result document.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub document: Value,
}

fn versions() -> Value {
    json!({
        "h2iid": env!("CARGO_PKG_VERSION"),
        "format": FORMAT_VERSION,
        "sdp_backend": "clarabel",
    })
}

fn opt_matrix(m: Option<&DMatrix<f64>>) -> Value {
    m.map_or(Value::Null, matrix_json)
}

fn diag_json(d: &crate::analysis::SolverDiagnostics) -> Value {
    serde_json::to_value(d).unwrap_or(Value::Null)
}

/// `(verdict, results, diagnostics)`; `verdict` is true for unstable or infeasible answers.
type Body = (bool, Value, Value);

fn analyze(cfg: &RunConfig, sys: &ClosedLoopSystem, gain: Option<&DMatrix<f64>>) -> Result<Body> {
    let opts = cfg.analysis_options();
    let st = check_stability(sys, &opts)?;
    let h2 = if st.stable { Some(h2_norm(sys, &opts)?) } else { None };
    let results = json!({
        "stable": st.stable,
        "P": opt_matrix(st.p.as_ref()),
        "moment_map_spectral_radius": st.moment_map_spectral_radius,
        "decay_rate_estimate": st.decay_rate_estimate(),
        "h2_norm": h2.as_ref().map(|h| h.norm),
        "gamma_sq": h2.as_ref().map(|h| h.gamma_sq),
        "h2_P": opt_matrix(h2.as_ref().map(|h| &h.p)),
        "F": opt_matrix(gain),
    });
    let diagnostics = json!({
        "stability": diag_json(&st.diagnostics),
        "h2": h2.as_ref().map(|h| diag_json(&h.diagnostics)),
    });
    Ok((!st.stable, results, diagnostics))
}

fn synthesize(cfg: &RunConfig, model: SystemModel) -> Result<Body> {
    let plant = plant_of(model)?;
    let opts = cfg.analysis_options();
    match h2_synthesize(&plant, &opts) {
        Ok(r) => {
            let cl = close_loop(&plant, &r.f)?;
            let check = h2_norm(&cl, &opts)?;
            let results = json!({
                "feasible": true,
                "gamma": r.gamma,
                "F": matrix_json(&r.f),
                "X": matrix_json(&r.x),
                "Y": matrix_json(&r.y),
                "R": matrix_json(&r.r),
                "closed_loop_h2_norm": check.norm,
            });
            let diagnostics = json!({
                "solver": diag_json(&r.diagnostics),
                "lift_ranks": r.ranks,
                "round_trip": diag_json(&check.diagnostics),
            });
            Ok((false, results, diagnostics))
        }
        Err(e @ Error::Infeasible(_)) => Ok((
            true,
            json!({
                "feasible": false,
                "gamma": null, "F": null, "X": null, "Y": null, "R": null,
                "closed_loop_h2_norm": null,
            }),
            json!({ "solver": null, "lift_ranks": null, "round_trip": null, "verdict": e.to_string() }),
        )),
        Err(e) => Err(e),
    }
}

fn stabilize(cfg: &RunConfig, model: SystemModel) -> Result<Body> {
    let plant = plant_of(model)?;
    let opts = cfg.analysis_options();
    match stabilize_decay(&plant, cfg.bisect_tol, &opts) {
        Ok(d) => Ok((
            false,
            json!({
                "feasible": true,
                "lambda": d.lambda,
                "F": matrix_json(&d.f),
                "X": matrix_json(&d.x),
                "Y": matrix_json(&d.y),
            }),
            json!({ "solver": diag_json(&d.diagnostics), "bisections": d.iterations }),
        )),
        Err(e @ Error::Infeasible(_)) => Ok((
            true,
            json!({ "feasible": false, "lambda": null, "F": null, "X": null, "Y": null }),
            json!({ "solver": null, "bisections": null, "verdict": e.to_string() }),
        )),
        Err(e) => Err(e),
    }
}

fn simulate(cfg: &RunConfig, sys: &ClosedLoopSystem) -> Result<Body> {
    let (trace, energy) = impulse_trace_and_energy(sys, cfg.horizon, cfg.paths, cfg.seed)?;
    if let Some(path) = &cfg.trace {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        write_trace_csv(&trace, &mut f)?;
    }
    let results = json!({
        "mean": energy.mean,
        "std_error": energy.std_error,
        "n_paths": energy.n_paths,
        "K": energy.horizon,
        "trace": trace.iter().map(|p| json!([p.k, p.mean, p.std_error])).collect::<Vec<_>>(),
    });
    let diagnostics = json!({
        "trace_csv": cfg.trace.as_ref().map(|p| p.display().to_string()),
    });
    Ok((false, results, diagnostics))
}

fn oracle(cfg: &RunConfig, sys: &ClosedLoopSystem) -> Result<Body> {
    match h2_oracle(sys, cfg.oracle_tol) {
        Ok(o) => Ok((
            false,
            json!({
                "converged": true,
                "norm": o.norm,
                "s_inf": o.s,
                "terms": o.terms,
                "partial_sums": o.partial_sums,
            }),
            json!({ "rel_tol": cfg.oracle_tol, "verdict": null }),
        )),
        Err(e @ Error::Divergence { .. }) => Ok((
            true,
            json!({ "converged": false, "norm": null, "s_inf": null, "terms": null, "partial_sums": null }),
            json!({ "rel_tol": cfg.oracle_tol, "verdict": e.to_string() }),
        )),
        Err(e) => Err(e),
    }
}

fn dispatch(cfg: &RunConfig, text: &str) -> Result<Body> {
    cfg.validate()?;
    let model = load_system(text)?;
    let gain = cfg.gain.as_deref().map(load_gain).transpose()?;
    match cfg.command {
        Command::Analyze => {
            let sys = closed_system(model, gain.as_ref())?;
            analyze(cfg, &sys, gain.as_ref())
        }
        Command::Synthesize => synthesize(cfg, model),
        Command::Stabilize => stabilize(cfg, model),
        Command::Simulate => simulate(cfg, &closed_system(model, gain.as_ref())?),
        Command::Oracle => oracle(cfg, &closed_system(model, gain.as_ref())?),
    }
}

/// Runs one command; errors are folded into the document.
pub fn run(cfg: &RunConfig) -> RunOutcome {
    let text = std::fs::read(&cfg.input);
    let hash = text.as_ref().ok().map(|t| hex::encode(Sha256::digest(t)));
    let body = text
        .map_err(Error::from)
        .and_then(|t| String::from_utf8(t).map_err(|e| Error::Schema(e.to_string())))
        .and_then(|t| dispatch(cfg, &t));
    let mut doc = json!({
        "command": cfg.command.as_str(),
        "input": cfg.input.display().to_string(),
        "input_sha256": hash,
        "seed": cfg.seed,
        "versions": versions(),
    });
    let exit_code = match body {
        Ok((verdict, results, diagnostics)) => {
            doc["results"] = results;
            doc["diagnostics"] = diagnostics;
            doc["error"] = Value::Null;
            if verdict {
                EXIT_VERDICT
            } else {
                EXIT_OK
            }
        }
        Err(e) => {
            doc["results"] = Value::Null;
            doc["diagnostics"] = Value::Null;
            doc["error"] = json!({ "kind": e.kind(), "message": e.to_string() });
            if e.is_verdict() {
                EXIT_VERDICT
            } else {
                EXIT_ERROR
            }
        }
    };
    RunOutcome {
        exit_code,
        document: doc,
    }
}

/// Runs and writes the document to `--output` or standard output.
pub fn run_and_emit(cfg: &RunConfig) -> i32 {
    let outcome = run(cfg);
    let text = serde_json::to_string_pretty(&outcome.document).expect("documents serialize") + "\n";
    let written = match &cfg.output {
        Some(p) => std::fs::write(p, text),
        None => {
            use std::io::Write;
            std::io::stdout().write_all(text.as_bytes())
        }
    };
    match written {
        Ok(()) => outcome.exit_code,
        Err(e) => {
            eprintln!("h2iid: cannot write result document: {e}");
            EXIT_ERROR
        }
    }
}
