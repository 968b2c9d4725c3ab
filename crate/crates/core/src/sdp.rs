//! Solver-neutral semidefinite programs.
//!
//! A problem is a set of named scalar, symmetric and rectangular matrix
//! variables, a linear objective and LMI constraints `F(x) ⪰ margin * I`
//! where `F` is affine in the flattened variables. Strict inequalities are
//! encoded with `margin = eps * max(1, ||F_0||_2)`.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

pub const DEFAULT_EPS: f64 = 1e-8;
/// Post-solve tolerance on `lambda_min(F(x)) - margin`, relative to `max(1, ||F_0||_2)`.
pub const RESIDUAL_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Scalar,
    Symmetric(usize),
    Matrix(usize, usize),
}

impl VarKind {
    fn len(self) -> usize {
        match self {
            VarKind::Scalar => 1,
            VarKind::Symmetric(n) => n * (n + 1) / 2,
            VarKind::Matrix(r, c) => r * c,
        }
    }

    fn shape(self) -> (usize, usize) {
        match self {
            VarKind::Scalar => (1, 1),
            VarKind::Symmetric(n) => (n, n),
            VarKind::Matrix(r, c) => (r, c),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarDecl {
    pub name: String,
    pub kind: VarKind,
    offset: usize,
}

impl VarDecl {
    /// `(flat index, value of the variable when that scalar is 1 and all others 0)`.
    fn basis(&self) -> Vec<(usize, DMatrix<f64>)> {
        let (r, c) = self.kind.shape();
        let mut out = Vec::with_capacity(self.kind.len());
        match self.kind {
            VarKind::Scalar => out.push((self.offset, DMatrix::from_element(1, 1, 1.0))),
            VarKind::Symmetric(n) => {
                let mut k = self.offset;
                for a in 0..n {
                    for b in a..n {
                        let mut e = DMatrix::zeros(n, n);
                        e[(a, b)] = 1.0;
                        e[(b, a)] = 1.0;
                        out.push((k, e));
                        k += 1;
                    }
                }
            }
            VarKind::Matrix(..) => {
                let mut k = self.offset;
                for a in 0..r {
                    for b in 0..c {
                        let mut e = DMatrix::zeros(r, c);
                        e[(a, b)] = 1.0;
                        out.push((k, e));
                        k += 1;
                    }
                }
            }
        }
        out
    }

    fn value(&self, x: &[f64]) -> DMatrix<f64> {
        let (r, c) = self.kind.shape();
        let mut m = DMatrix::zeros(r, c);
        for (k, e) in self.basis() {
            m += e * x[k];
        }
        m
    }
}

/// `F(x) = constant + sum_k x_k * coeffs[k]`, all symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineSym {
    pub constant: DMatrix<f64>,
    pub coeffs: BTreeMap<usize, DMatrix<f64>>,
}

impl AffineSym {
    pub fn dim(&self) -> usize {
        self.constant.nrows()
    }

    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        let mut m = self.constant.clone();
        for (&k, f) in &self.coeffs {
            m += f * x[k];
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmiConstraint {
    pub name: String,
    pub expr: AffineSym,
    pub margin: f64,
}

impl LmiConstraint {
    fn scale(&self) -> f64 {
        spectral_norm(&self.expr.constant).max(1.0)
    }
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .fold(0.0f64, |a, &e| a.max(e.abs()))
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpProblem {
    vars: Vec<VarDecl>,
    n_scalars: usize,
    constraints: Vec<LmiConstraint>,
    objective: Vec<f64>,
    /// Relative strictness margin.
    pub eps: f64,
}

impl SdpProblem {
    pub fn new(eps: f64) -> Self {
        Self {
            vars: Vec::new(),
            n_scalars: 0,
            constraints: Vec::new(),
            objective: Vec::new(),
            eps,
        }
    }

    fn declare(&mut self, name: &str, kind: VarKind) -> VarId {
        let id = VarId(self.vars.len());
        self.vars.push(VarDecl {
            name: name.to_string(),
            kind,
            offset: self.n_scalars,
        });
        self.n_scalars += kind.len();
        self.objective.resize(self.n_scalars, 0.0);
        id
    }

    pub fn scalar(&mut self, name: &str) -> VarId {
        self.declare(name, VarKind::Scalar)
    }

    pub fn symmetric(&mut self, name: &str, n: usize) -> VarId {
        self.declare(name, VarKind::Symmetric(n))
    }

    pub fn matrix(&mut self, name: &str, rows: usize, cols: usize) -> VarId {
        self.declare(name, VarKind::Matrix(rows, cols))
    }

    pub fn decl(&self, var: VarId) -> &VarDecl {
        &self.vars[var.0]
    }

    pub fn vars(&self) -> &[VarDecl] {
        &self.vars
    }

    pub fn constraints(&self) -> &[LmiConstraint] {
        &self.constraints
    }

    pub fn num_scalars(&self) -> usize {
        self.n_scalars
    }

    /// Adds `coef * var` to the (minimized) objective. `var` must be scalar.
    pub fn minimize(&mut self, var: VarId, coef: f64) {
        let d = &self.vars[var.0];
        assert_eq!(d.kind, VarKind::Scalar, "objective terms must be scalar variables");
        self.objective[d.offset] += coef;
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn is_feasibility(&self) -> bool {
        self.objective.iter().all(|&c| c == 0.0)
    }

    /// Starts a block LMI with the given diagonal block sizes.
    pub fn lmi(&self, name: &str, sizes: &[usize]) -> BlockLmi {
        BlockLmi::new(name, sizes)
    }

    pub fn add_lmi(&mut self, lmi: BlockLmi) {
        let expr = AffineSym {
            constant: lmi.constant,
            coeffs: lmi.coeffs,
        };
        let margin = self.eps * spectral_norm(&expr.constant).max(1.0);
        self.constraints.push(LmiConstraint {
            name: lmi.name,
            expr,
            margin,
        });
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }
}

/// Builder for an LMI given as a symmetric block matrix. Terms are added to
/// lower blocks `(i, j)` with `i >= j`; the mirrored block is filled in.
#[derive(Debug, Clone)]
pub struct BlockLmi {
    name: String,
    offsets: Vec<usize>,
    sizes: Vec<usize>,
    constant: DMatrix<f64>,
    coeffs: BTreeMap<usize, DMatrix<f64>>,
}

impl BlockLmi {
    fn new(name: &str, sizes: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut total = 0;
        for &s in sizes {
            offsets.push(total);
            total += s;
        }
        Self {
            name: name.to_string(),
            offsets,
            sizes: sizes.to_vec(),
            constant: DMatrix::zeros(total, total),
            coeffs: BTreeMap::new(),
        }
    }

    fn place(target: &mut DMatrix<f64>, offsets: &[usize], sizes: &[usize], i: usize, j: usize, m: &DMatrix<f64>) {
        assert!(i >= j, "terms go in lower blocks");
        assert_eq!(m.shape(), (sizes[i], sizes[j]), "block ({i},{j}) has the wrong shape");
        let (oi, oj) = (offsets[i], offsets[j]);
        if i == j {
            // diagonal contributions are symmetrized
            let sym = (m + m.transpose()) * 0.5;
            let mut v = target.view_mut((oi, oi), (sizes[i], sizes[i]));
            v += sym;
        } else {
            let mut v = target.view_mut((oi, oj), m.shape());
            v += m;
            let mut w = target.view_mut((oj, oi), (m.ncols(), m.nrows()));
            w += m.transpose();
        }
    }

    pub fn constant(mut self, i: usize, j: usize, m: &DMatrix<f64>) -> Self {
        Self::place(&mut self.constant, &self.offsets, &self.sizes, i, j, m);
        self
    }

    /// Adds `map(V)` to block `(i, j)` for a linear `map` of variable `V`.
    pub fn term(mut self, p: &SdpProblem, i: usize, j: usize, var: VarId, map: impl Fn(&DMatrix<f64>) -> DMatrix<f64>) -> Self {
        let dim = self.constant.nrows();
        for (k, e) in p.decl(var).basis() {
            let contrib = map(&e);
            let target = self.coeffs.entry(k).or_insert_with(|| DMatrix::zeros(dim, dim));
            Self::place(target, &self.offsets, &self.sizes, i, j, &contrib);
        }
        self
    }

    /// Adds `left * V * right` to block `(i, j)`.
    pub fn product(self, p: &SdpProblem, i: usize, j: usize, left: Option<&DMatrix<f64>>, var: VarId, right: Option<&DMatrix<f64>>) -> Self {
        self.term(p, i, j, var, |e| {
            let lv = match left {
                Some(l) => l * e,
                None => e.clone(),
            };
            match right {
                Some(r) => lv * r,
                None => lv,
            }
        })
    }

    /// Adds `V ⊗ I_r` to diagonal block `i`.
    pub fn kron_identity(self, p: &SdpProblem, i: usize, var: VarId, r: usize) -> Self {
        self.term(p, i, i, var, |e| e.kronecker(&DMatrix::identity(r, r)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::NumericalFailure => "numerical-failure",
        }
    }
}

/// Raw result from a backend, before independent verification.
#[derive(Debug, Clone)]
pub struct BackendOutput {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub iterations: u32,
    pub message: String,
}

pub trait SdpBackend {
    fn solve(&self, problem: &SdpProblem) -> Result<BackendOutput>;
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    /// Most negative `lambda_min(F(x)) - margin`, relative to the constraint scale.
    pub worst_violation: f64,
    pub iterations: u32,
    pub message: String,
    layout: Vec<VarDecl>,
}

impl SdpSolution {
    pub fn value(&self, var: VarId) -> DMatrix<f64> {
        self.layout[var.0].value(&self.x)
    }

    pub fn scalar(&self, var: VarId) -> f64 {
        self.value(var)[(0, 0)]
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintResidual {
    pub name: String,
    /// `lambda_min(F(x)) - margin`
    pub residual: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    pub constraints: Vec<ConstraintResidual>,
    /// Minimum of `residual / scale` over all constraints.
    pub worst: f64,
    pub flagged: Vec<String>,
}

impl ResidualReport {
    pub fn ok(&self) -> bool {
        self.flagged.is_empty()
    }
}

/// Evaluates every constraint at `x`, independently of any backend.
pub fn check_point(p: &SdpProblem, x: &[f64]) -> ResidualReport {
    let mut constraints = Vec::with_capacity(p.constraints.len());
    let mut worst = f64::INFINITY;
    let mut flagged = Vec::new();
    for c in &p.constraints {
        let residual = min_eigenvalue(&c.expr.eval(x)) - c.margin;
        let scale = c.scale();
        worst = worst.min(residual / scale);
        if residual < -RESIDUAL_TOL * scale {
            flagged.push(c.name.clone());
        }
        constraints.push(ConstraintResidual {
            name: c.name.clone(),
            residual,
            scale,
        });
    }
    ResidualReport {
        constraints,
        worst,
        flagged,
    }
}

pub fn check_solution(p: &SdpProblem, s: &SdpSolution) -> ResidualReport {
    check_point(p, &s.x)
}

/// Violations up to this (relative) size are retried with tightened margins.
const TIGHTEN_LIMIT: f64 = 1e-5;

/// Solves, verifies the point independently, and on a small violation
/// re-solves once with every violated margin raised past the violation.
pub fn solve_with(p: &SdpProblem, backend: &dyn SdpBackend) -> Result<SdpSolution> {
    let mut raw = backend.solve(p)?;
    let mut status = raw.status;
    let mut message = raw.message;
    let mut worst_violation = f64::NAN;
    if status == SolveStatus::Optimal {
        let mut report = check_point(p, &raw.x);
        if !report.ok() && report.worst > -TIGHTEN_LIMIT {
            let mut tight = p.clone();
            for (c, r) in tight.constraints.iter_mut().zip(&report.constraints) {
                if r.residual < 0.0 {
                    c.margin += 2.0 * (-r.residual) + RESIDUAL_TOL * r.scale;
                }
            }
            let retry = backend.solve(&tight)?;
            if retry.status == SolveStatus::Optimal {
                message = format!("{message}; re-solved with tightened margins: {}", retry.message);
                raw = retry;
                report = check_point(p, &raw.x);
            }
        }
        worst_violation = report.worst;
        if !report.ok() {
            status = SolveStatus::NumericalFailure;
            message = format!("post-solve check failed on {:?} (worst {:e})", report.flagged, report.worst);
        }
    }
    Ok(SdpSolution {
        status,
        objective: p.objective_value(&raw.x),
        x: raw.x,
        worst_violation,
        iterations: raw.iterations,
        message,
        layout: p.vars.clone(),
    })
}

/// Solves with the default backend.
pub fn solve_sdp(p: &SdpProblem) -> Result<SdpSolution> {
    #[cfg(feature = "clarabel")]
    {
        solve_with(p, &ClarabelBackend::default())
    }
    #[cfg(not(feature = "clarabel"))]
    {
        let _ = p;
        Err(Error::Solver("no SDP backend compiled in (enable the `clarabel` feature)".into()))
    }
}

#[cfg(feature = "clarabel")]
pub use self::clarabel_backend::ClarabelBackend;

#[cfg(feature = "clarabel")]
mod clarabel_backend {
    use super::*;
    use clarabel::algebra::CscMatrix;
    use clarabel::solver::{
        DefaultSettings, DefaultSolver, IPSolver, NonnegativeConeT, PSDTriangleConeT, SolverStatus,
        SupportedConeT,
    };

    /// Interior-point backend (Clarabel) on the PSD-triangle cone.
    #[derive(Debug, Clone)]
    pub struct ClarabelBackend {
        pub tol: f64,
        pub max_iter: u32,
        pub verbose: bool,
    }

    impl Default for ClarabelBackend {
        fn default() -> Self {
            Self {
                tol: 1e-10,
                max_iter: 200,
                verbose: std::env::var_os("H2IID_SOLVER_VERBOSE").is_some(),
            }
        }
    }

    /// Index of `(i, j)`, `i <= j`, in the column-major upper-triangle vector.
    fn triu_index(i: usize, j: usize) -> usize {
        j * (j + 1) / 2 + i
    }

    fn svec_into(m: &DMatrix<f64>, sign: f64, row0: usize, col: usize, out: &mut Vec<(usize, usize, f64)>) {
        let d = m.nrows();
        for j in 0..d {
            for i in 0..=j {
                let v = m[(i, j)];
                if v != 0.0 {
                    let w = if i == j { v } else { v * std::f64::consts::SQRT_2 };
                    out.push((row0 + triu_index(i, j), col, sign * w));
                }
            }
        }
    }

    impl SdpBackend for ClarabelBackend {
        fn solve(&self, p: &SdpProblem) -> Result<BackendOutput> {
            let n = p.num_scalars();
            let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
            let mut b: Vec<f64> = Vec::new();
            let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
            for c in p.constraints() {
                let d = c.expr.dim();
                let shifted = &c.expr.constant - DMatrix::identity(d, d) * c.margin;
                let row0 = b.len();
                if d == 1 {
                    b.push(shifted[(0, 0)]);
                    for (&k, f) in &c.expr.coeffs {
                        if f[(0, 0)] != 0.0 {
                            triplets.push((row0, k, -f[(0, 0)]));
                        }
                    }
                    cones.push(NonnegativeConeT(1));
                } else {
                    let mut bv = Vec::new();
                    svec_into(&shifted, 1.0, 0, 0, &mut bv);
                    b.resize(row0 + d * (d + 1) / 2, 0.0);
                    for (r, _, v) in bv {
                        b[row0 + r] = v;
                    }
                    for (&k, f) in &c.expr.coeffs {
                        svec_into(f, -1.0, row0, k, &mut triplets);
                    }
                    cones.push(PSDTriangleConeT(d));
                }
            }
            let m = b.len();
            // scalars that appear nowhere are fixed at zero; empty columns stall the solver
            let mut used = vec![false; n];
            for &(_, c, _) in &triplets {
                used[c] = true;
            }
            for (k, &c) in p.objective().iter().enumerate() {
                used[k] |= c != 0.0;
            }
            let mut compact = vec![usize::MAX; n];
            let mut kept = Vec::new();
            for k in (0..n).filter(|&k| used[k]) {
                compact[k] = kept.len();
                kept.push(k);
            }
            let full_n = n;
            let n = kept.len();
            for t in triplets.iter_mut() {
                t.1 = compact[t.1];
            }
            triplets.sort_by_key(|t| (t.1, t.0));
            let mut colptr = vec![0usize; n + 1];
            let mut rowval = Vec::with_capacity(triplets.len());
            let mut nzval = Vec::with_capacity(triplets.len());
            for &(r, c, v) in &triplets {
                colptr[c + 1] += 1;
                rowval.push(r);
                nzval.push(v);
            }
            for c in 0..n {
                colptr[c + 1] += colptr[c];
            }
            let a = CscMatrix::new(m, n, colptr, rowval, nzval);
            let pmat = CscMatrix::zeros((n, n));
            let q: Vec<f64> = kept.iter().map(|&k| p.objective()[k]).collect();

            let run = |tol: Option<f64>| -> Result<(SolverStatus, Vec<f64>, u32)> {
                let mut settings = DefaultSettings {
                    verbose: self.verbose,
                    max_iter: self.max_iter,
                    ..DefaultSettings::default()
                };
                if let Some(tol) = tol {
                    settings.tol_gap_abs = tol;
                    settings.tol_gap_rel = tol;
                    settings.tol_feas = tol;
                }
                let mut solver = DefaultSolver::new(&pmat, &q, &a, &b, &cones, settings)
                    .map_err(|e| Error::Solver(format!("backend setup failed: {e:?}")))?;
                solver.solve();
                let sol = &solver.solution;
                let mut x = vec![0.0; full_n];
                for (i, &k) in kept.iter().enumerate() {
                    x[k] = sol.x[i];
                }
                Ok((sol.status, x, sol.iterations))
            };
            let (mut status, mut x, mut iterations) = run(Some(self.tol))?;
            let mut message = format!("{status:?}");
            if !matches!(
                status,
                SolverStatus::Solved
                    | SolverStatus::AlmostSolved
                    | SolverStatus::PrimalInfeasible
                    | SolverStatus::DualInfeasible
            ) {
                // stalled at the tight tolerance: retry at the backend defaults
                let (s2, x2, it2) = run(None)?;
                message = format!("{status:?}; retried at default tolerances: {s2:?}");
                status = s2;
                x = x2;
                iterations += it2;
            }
            let status = match status {
                SolverStatus::Solved | SolverStatus::AlmostSolved => SolveStatus::Optimal,
                SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => SolveStatus::Infeasible,
                _ => SolveStatus::NumericalFailure,
            };
            Ok(BackendOutput {
                status,
                x,
                iterations,
                message,
            })
        }
    }
}

/// Writes the problem in SDPA sparse format.
///
/// SDPA minimizes `c^T x` subject to `sum_k F_k x_k - F_0 ⪰ 0`; each LMI is
/// one block and the strictness margin is folded into `F_0`.
pub fn write_sdpa(p: &SdpProblem, out: &mut impl Write) -> Result<()> {
    writeln!(out, "\"h2iid LMI problem: {} variables, {} blocks", p.num_scalars(), p.constraints.len())?;
    writeln!(out, "{}", p.num_scalars())?;
    writeln!(out, "{}", p.constraints.len())?;
    let sizes: Vec<String> = p.constraints.iter().map(|c| c.expr.dim().to_string()).collect();
    writeln!(out, "{}", sizes.join(" "))?;
    let costs: Vec<String> = p.objective.iter().map(|c| format!("{c:e}")).collect();
    writeln!(out, "{}", costs.join(" "))?;
    for (blk, c) in p.constraints.iter().enumerate() {
        let d = c.expr.dim();
        let f0 = DMatrix::identity(d, d) * c.margin - &c.expr.constant;
        write_upper(out, 0, blk + 1, &f0)?;
        for (&k, f) in &c.expr.coeffs {
            write_upper(out, k + 1, blk + 1, f)?;
        }
    }
    Ok(())
}

fn write_upper(out: &mut impl Write, mat: usize, blk: usize, m: &DMatrix<f64>) -> Result<()> {
    for i in 0..m.nrows() {
        for j in i..m.ncols() {
            let v = m[(i, j)];
            if v != 0.0 {
                writeln!(out, "{mat} {blk} {} {} {v:e}", i + 1, j + 1)?;
            }
        }
    }
    Ok(())
}
