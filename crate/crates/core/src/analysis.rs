//! Second-moment stability, the H2 norm by LMI, and the moment-iteration
//! series used as an independent check.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::factorize::{tilde_of, TildeMatrix, DEFAULT_RANK_TOL};
use crate::model::ClosedLoopSystem;
use crate::moments::{expectation_matrix, ExpectationKind, MomentMap};
use crate::sdp::{check_solution, solve_sdp, SdpProblem, SdpSolution, SolveStatus, DEFAULT_EPS};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisOptions {
    pub eps: f64,
    pub rank_tol: f64,
    pub power_iterations: usize,
    pub seed: u64,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            eps: DEFAULT_EPS,
            rank_tol: DEFAULT_RANK_TOL,
            power_iterations: 200,
            seed: 0,
        }
    }
}

/// Solver-side facts attached to every LMI-based result.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverDiagnostics {
    pub status: &'static str,
    pub iterations: u32,
    pub objective: f64,
    pub worst_residual: f64,
    pub message: String,
    pub lift_rank: usize,
}

impl SolverDiagnostics {
    pub(crate) fn from_solution(s: &SdpSolution, lift_rank: usize) -> Self {
        Self {
            status: s.status.as_str(),
            iterations: s.iterations,
            objective: s.objective,
            worst_residual: s.worst_violation,
            message: s.message.clone(),
            lift_rank,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub stable: bool,
    /// Certificate; `None` when no certificate was found.
    pub p: Option<DMatrix<f64>>,
    pub moment_map_spectral_radius: f64,
    pub diagnostics: SolverDiagnostics,
}

impl StabilityReport {
    /// `sqrt(rho(T))`, a decay-rate estimate for `E[|x_k|^2]^{1/2}`.
    pub fn decay_rate_estimate(&self) -> f64 {
        self.moment_map_spectral_radius.sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct H2Result {
    pub norm: f64,
    pub gamma_sq: f64,
    pub p: DMatrix<f64>,
    pub diagnostics: SolverDiagnostics,
}

fn solver_error(s: &SdpSolution) -> Error {
    Error::Solver(format!("{} ({})", s.status.as_str(), s.message))
}

/// Adds `P - Ã^T (P ⊗ I) Ã - q ⪰ margin` to `sdp`, where `P` is variable `pv`.
fn lyapunov_lmi(sdp: &mut SdpProblem, pv: crate::sdp::VarId, tilde: &TildeMatrix, q: &DMatrix<f64>, name: &str) {
    let n = q.nrows();
    let lmi = sdp
        .lmi(name, &[n])
        .term(sdp, 0, 0, pv, |e| e - tilde.lift(e))
        .constant(0, 0, &-q);
    sdp.add_lmi(lmi);
}

fn positivity_lmi(sdp: &mut SdpProblem, pv: crate::sdp::VarId, n: usize, floor: f64, name: &str) {
    let lmi = sdp
        .lmi(name, &[n])
        .product(sdp, 0, 0, None, pv, None)
        .constant(0, 0, &(-DMatrix::identity(n, n) * floor));
    sdp.add_lmi(lmi);
}

/// Decides second-moment exponential stability through the lifted
/// Lyapunov inequality.
///
/// The inequality is homogeneous in `P`, so it is posed as
/// `P - Ã^T (P ⊗ I) Ã ⪰ I`, `P ⪰ eps I` while minimizing `tr P`.
pub fn check_stability(sys: &ClosedLoopSystem, opts: &AnalysisOptions) -> Result<StabilityReport> {
    let n = sys.n();
    let tilde = tilde_of(&sys.a, &sys.dist, opts.rank_tol)?;
    let rho = MomentMap::analytic(&sys.a, &sys.dist).spectral_radius(opts.power_iterations, opts.seed);

    let mut sdp = SdpProblem::new(opts.eps);
    let pv = sdp.symmetric("P", n);
    let t = sdp.scalar("t");
    sdp.minimize(t, 1.0);
    lyapunov_lmi(&mut sdp, pv, &tilde, &DMatrix::identity(n, n), "decrease");
    positivity_lmi(&mut sdp, pv, n, 0.0, "P>0");
    let tr = sdp
        .lmi("trace", &[1])
        .product(&sdp, 0, 0, None, t, None)
        .term(&sdp, 0, 0, pv, |e| DMatrix::from_element(1, 1, -e.trace()));
    sdp.add_lmi(tr);

    let sol = solve_sdp(&sdp)?;
    let diagnostics = SolverDiagnostics::from_solution(&sol, tilde.bar_rank);
    match sol.status {
        SolveStatus::Optimal => Ok(StabilityReport {
            stable: true,
            p: Some(sol.value(pv)),
            moment_map_spectral_radius: rho,
            diagnostics,
        }),
        SolveStatus::Infeasible => Ok(StabilityReport {
            stable: false,
            p: None,
            moment_map_spectral_radius: rho,
            diagnostics,
        }),
        SolveStatus::NumericalFailure => Err(solver_error(&sol)),
    }
}

/// H2 norm by minimizing `t = γ²` over the lifted LMI.
pub fn h2_norm(sys: &ClosedLoopSystem, opts: &AnalysisOptions) -> Result<H2Result> {
    if !check_stability(sys, opts)?.stable {
        return Err(Error::Unstable);
    }
    let n = sys.n();
    let tilde = tilde_of(&sys.a, &sys.dist, opts.rank_tol)?;
    let q = expectation_matrix(ExpectationKind::CtC, sys);
    let bbt = expectation_matrix(ExpectationKind::BBt, sys);
    let e_d = expectation_matrix(ExpectationKind::DtD, sys).trace();

    let mut sdp = SdpProblem::new(opts.eps);
    let pv = sdp.symmetric("P", n);
    let t = sdp.scalar("t");
    sdp.minimize(t, 1.0);
    lyapunov_lmi(&mut sdp, pv, &tilde, &q, "lyapunov");
    let perf = sdp
        .lmi("performance", &[1])
        .product(&sdp, 0, 0, None, t, None)
        .term(&sdp, 0, 0, pv, |e| DMatrix::from_element(1, 1, -(&bbt * e).trace()))
        .constant(0, 0, &DMatrix::from_element(1, 1, -e_d));
    sdp.add_lmi(perf);
    positivity_lmi(&mut sdp, pv, n, 0.0, "P>0");

    let sol = solve_sdp(&sdp)?;
    match sol.status {
        SolveStatus::Optimal => {}
        SolveStatus::Infeasible => return Err(Error::Unstable),
        SolveStatus::NumericalFailure => return Err(solver_error(&sol)),
    }
    debug_assert!(check_solution(&sdp, &sol).ok());
    let gamma_sq = sol.scalar(t).max(0.0);
    Ok(H2Result {
        norm: gamma_sq.sqrt(),
        gamma_sq,
        p: sol.value(pv),
        diagnostics: SolverDiagnostics::from_solution(&sol, tilde.bar_rank),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleResult {
    /// `sqrt(s_K)` at the stopping term.
    pub norm: f64,
    pub s: f64,
    /// `s_0, s_1, ..., s_K`.
    pub partial_sums: Vec<f64>,
    pub terms: usize,
}

pub const ORACLE_MAX_TERMS: usize = 1_000_000;
const ORACLE_MIN_TERMS: usize = 10;
const DIVERGENCE_RUN: usize = 10;

/// Exact partial sums `s_K = tr(E[D^T D]) + sum_{k=1}^K tr(E[B B^T] T^{k-1}(Q))`
/// with `Q = E[C^T C]`, iterated until the increment drops below
/// `rel_tol * s_K`.
pub fn h2_oracle(sys: &ClosedLoopSystem, rel_tol: f64) -> Result<OracleResult> {
    let map = MomentMap::analytic(&sys.a, &sys.dist);
    let mut q = expectation_matrix(ExpectationKind::CtC, sys);
    let bbt = expectation_matrix(ExpectationKind::BBt, sys);
    let mut sum = expectation_matrix(ExpectationKind::DtD, sys).trace();
    let mut partial_sums = vec![sum];
    let mut prev_inc = f64::NAN;
    let mut growing = 0;
    for k in 1..=ORACLE_MAX_TERMS {
        let inc = (&bbt * &q).trace();
        if !inc.is_finite() {
            return Err(Error::Divergence { terms: k });
        }
        // increments are traces of products of PSD matrices
        if inc < -1e-12 * sum.abs().max(1.0) {
            return Err(Error::NonMonotone { term: k });
        }
        let next = sum + inc.max(0.0);
        if next < sum {
            return Err(Error::NonMonotone { term: k });
        }
        sum = next;
        partial_sums.push(sum);
        if prev_inc > 0.0 && inc / prev_inc >= 1.0 {
            growing += 1;
            if growing >= DIVERGENCE_RUN {
                return Err(Error::Divergence { terms: k });
            }
        } else {
            growing = 0;
        }
        if k >= ORACLE_MIN_TERMS && inc <= rel_tol * sum {
            return Ok(OracleResult {
                norm: sum.sqrt(),
                s: sum,
                partial_sums,
                terms: k,
            });
        }
        prev_inc = inc;
        q = map.apply(&q);
    }
    Err(Error::Divergence {
        terms: ORACLE_MAX_TERMS,
    })
}

/// `s_K` for a fixed `K` (no stopping rule).
pub fn h2_partial_sum(sys: &ClosedLoopSystem, horizon: usize) -> f64 {
    let map = MomentMap::analytic(&sys.a, &sys.dist);
    let mut q = expectation_matrix(ExpectationKind::CtC, sys);
    let bbt = expectation_matrix(ExpectationKind::BBt, sys);
    let mut sum = expectation_matrix(ExpectationKind::DtD, sys).trace();
    for k in 1..=horizon {
        sum += (&bbt * &q).trace();
        if k < horizon {
            q = map.apply(&q);
        }
    }
    sum
}
