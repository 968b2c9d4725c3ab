//! The i.i.d. parameter process, stochastic coefficient matrices, the
//! generalized plant and its closed loop, and the system-description format.

use nalgebra::DMatrix;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{parse_expr, Polynomial};

/// Distribution of one component of the parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Distribution {
    Normal { mean: f64, stddev: f64 },
    Uniform { lo: f64, hi: f64 },
    Discrete { values: Vec<f64>, probabilities: Vec<f64> },
}

impl Distribution {
    pub fn point_mass(value: f64) -> Self {
        Distribution::Discrete {
            values: vec![value],
            probabilities: vec![1.0],
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Distribution::Normal { mean, stddev } => {
                if !mean.is_finite() || !(stddev.is_finite() && *stddev > 0.0) {
                    return Err(Error::Distribution(format!(
                        "normal needs finite mean and stddev > 0, got ({mean}, {stddev})"
                    )));
                }
            }
            Distribution::Uniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(Error::Distribution(format!(
                        "uniform needs finite lo < hi, got ({lo}, {hi})"
                    )));
                }
            }
            Distribution::Discrete {
                values,
                probabilities,
            } => {
                if values.is_empty() || values.len() != probabilities.len() {
                    return Err(Error::Distribution(
                        "discrete needs equally many values and probabilities (at least one)".into(),
                    ));
                }
                if values.iter().any(|v| !v.is_finite())
                    || probabilities.iter().any(|p| !(p.is_finite() && *p >= 0.0))
                {
                    return Err(Error::Distribution(
                        "discrete values must be finite and probabilities non-negative".into(),
                    ));
                }
                let total: f64 = probabilities.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::Distribution(format!(
                        "discrete probabilities sum to {total}, not 1"
                    )));
                }
            }
        }
        Ok(())
    }

    fn sample(&self, rng: &mut XiRng) -> f64 {
        match self {
            Distribution::Normal { mean, stddev } => mean + stddev * rng.standard_normal(),
            Distribution::Uniform { lo, hi } => lo + (hi - lo) * rng.unit_open(),
            Distribution::Discrete {
                values,
                probabilities,
            } => {
                if values.len() == 1 {
                    return values[0];
                }
                let u = rng.unit_open();
                let mut acc = 0.0;
                for (v, p) in values.iter().zip(probabilities) {
                    acc += p;
                    if u < acc {
                        return *v;
                    }
                }
                *values.last().expect("non-empty")
            }
        }
    }
}

/// Joint law of the parameter vector: independent components.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionSpec {
    components: Vec<Distribution>,
}

impl DistributionSpec {
    pub fn new(components: Vec<Distribution>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Distribution("at least one component is required".into()));
        }
        for c in &components {
            c.validate()?;
        }
        Ok(Self { components })
    }

    /// Degenerate law used for deterministic systems.
    pub fn deterministic() -> Self {
        Self {
            components: vec![Distribution::point_mass(0.0)],
        }
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Distribution] {
        &self.components
    }
}

/// Counter-based random stream: a ChaCha8 generator keyed by `(seed, stream)`.
#[derive(Debug, Clone)]
pub struct XiRng {
    inner: ChaCha8Rng,
}

impl XiRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { inner }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on the open interval (0, 1).
    pub fn unit_open(&mut self) -> f64 {
        ((self.inner.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Box-Muller; one of the pair is discarded so each call uses two uniforms.
    pub fn standard_normal(&mut self) -> f64 {
        let u1 = self.unit_open();
        let u2 = self.unit_open();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

pub fn sample_xi(dist: &DistributionSpec, rng: &mut XiRng) -> Vec<f64> {
    dist.components.iter().map(|c| c.sample(rng)).collect()
}

/// Matrix whose entries are polynomials in the parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticMatrix {
    rows: usize,
    cols: usize,
    num_vars: usize,
    entries: Vec<Polynomial>,
}

impl StochasticMatrix {
    pub fn new(rows: usize, cols: usize, num_vars: usize, entries: Vec<Polynomial>) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                entries.len()
            )));
        }
        if entries.iter().any(|p| p.num_vars() != num_vars) {
            return Err(Error::Dimension("entries disagree on the number of variables".into()));
        }
        Ok(Self {
            rows,
            cols,
            num_vars,
            entries,
        })
    }

    pub fn zeros(rows: usize, cols: usize, num_vars: usize) -> Self {
        Self {
            rows,
            cols,
            num_vars,
            entries: vec![Polynomial::zero(num_vars); rows * cols],
        }
    }

    pub fn from_constant(m: &DMatrix<f64>, num_vars: usize) -> Self {
        let mut entries = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                entries.push(Polynomial::constant(m[(i, j)], num_vars));
            }
        }
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            num_vars,
            entries,
        }
    }

    /// Parses a 2-D array of expression strings; `name` labels errors.
    pub fn parse(name: &str, rows: &[Vec<String>], cols: usize, num_vars: usize) -> Result<Self> {
        let mut entries = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::Dimension(format!(
                    "{name} row {i} has {} columns, expected {cols}",
                    row.len()
                )));
            }
            for (j, text) in row.iter().enumerate() {
                let p = parse_expr(text, num_vars).map_err(|source| Error::Entry {
                    matrix: name.to_string(),
                    index: i * cols + j,
                    source,
                })?;
                entries.push(p);
            }
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            num_vars,
            entries,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn entry(&self, i: usize, j: usize) -> &Polynomial {
        &self.entries[i * self.cols + j]
    }

    /// Entries in row-major order, i.e. `row(M)`.
    pub fn entries(&self) -> &[Polynomial] {
        &self.entries
    }

    pub fn is_deterministic(&self) -> bool {
        self.entries.iter().all(|p| p.as_constant().is_some())
    }

    pub fn transpose(&self) -> Self {
        let mut entries = Vec::with_capacity(self.entries.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                entries.push(self.entry(i, j).clone());
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            num_vars: self.num_vars,
            entries,
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols || self.num_vars != other.num_vars {
            return Err(Error::Dimension(format!(
                "cannot add {}x{} and {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let entries = self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            num_vars: self.num_vars,
            entries,
        })
    }

    /// `M * K` for a constant matrix `K`.
    pub fn mul_constant(&self, k: &DMatrix<f64>) -> Result<Self> {
        if self.cols != k.nrows() {
            return Err(Error::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows,
                self.cols,
                k.nrows(),
                k.ncols()
            )));
        }
        let mut entries = Vec::with_capacity(self.rows * k.ncols());
        for i in 0..self.rows {
            for j in 0..k.ncols() {
                let mut acc = Polynomial::zero(self.num_vars);
                for l in 0..self.cols {
                    if k[(l, j)] != 0.0 {
                        acc = &acc + &self.entry(i, l).scale(k[(l, j)]);
                    }
                }
                entries.push(acc);
            }
        }
        Ok(Self {
            rows: self.rows,
            cols: k.ncols(),
            num_vars: self.num_vars,
            entries,
        })
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            num_vars: self.num_vars,
            entries: self.entries.iter().map(|p| p.scale(factor)).collect(),
        }
    }

    pub fn eval(&self, xi: &[f64]) -> Result<DMatrix<f64>> {
        if xi.len() != self.num_vars {
            return Err(Error::Dimension(format!(
                "parameter vector has length {}, expected {}",
                xi.len(),
                self.num_vars
            )));
        }
        Ok(self.eval_unchecked(xi))
    }

    pub(crate) fn eval_unchecked(&self, xi: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_iterator(
            self.rows,
            self.cols,
            self.entries.iter().map(|p| p.eval_unchecked(xi)),
        )
    }

    pub fn to_strings(&self) -> Vec<Vec<String>> {
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self.entry(i, j).to_string()).collect())
            .collect()
    }
}

pub fn eval_matrix(m: &StochasticMatrix, xi: &[f64]) -> Result<DMatrix<f64>> {
    m.eval(xi)
}

/// Open-loop plant with disturbance input `w`, control input `u` and
/// performance output `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizedPlant {
    pub dist: DistributionSpec,
    pub a_o: StochasticMatrix,
    pub b_ow: StochasticMatrix,
    pub b_ou: StochasticMatrix,
    pub c_o: StochasticMatrix,
    pub d_ow: StochasticMatrix,
    pub d_ou: StochasticMatrix,
}

impl GeneralizedPlant {
    pub fn new(
        dist: DistributionSpec,
        a_o: StochasticMatrix,
        b_ow: StochasticMatrix,
        b_ou: StochasticMatrix,
        c_o: StochasticMatrix,
        d_ow: StochasticMatrix,
        d_ou: StochasticMatrix,
    ) -> Result<Self> {
        let n = a_o.rows();
        let (pw, pu, qz) = (b_ow.cols(), b_ou.cols(), c_o.rows());
        let checks = [
            ("A_o", &a_o, n, n),
            ("B_ow", &b_ow, n, pw),
            ("B_ou", &b_ou, n, pu),
            ("C_o", &c_o, qz, n),
            ("D_ow", &d_ow, qz, pw),
            ("D_ou", &d_ou, qz, pu),
        ];
        check_shapes(&checks, dist.dim())?;
        Ok(Self {
            dist,
            a_o,
            b_ow,
            b_ou,
            c_o,
            d_ow,
            d_ou,
        })
    }

    pub fn n(&self) -> usize {
        self.a_o.rows()
    }
    pub fn pw(&self) -> usize {
        self.b_ow.cols()
    }
    pub fn pu(&self) -> usize {
        self.b_ou.cols()
    }
    pub fn qz(&self) -> usize {
        self.c_o.rows()
    }
}

/// System driven by `w` only: `x+ = A x + B w`, `z = C x + D w`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopSystem {
    pub dist: DistributionSpec,
    pub a: StochasticMatrix,
    pub b: StochasticMatrix,
    pub c: StochasticMatrix,
    pub d: StochasticMatrix,
}

impl ClosedLoopSystem {
    pub fn new(
        dist: DistributionSpec,
        a: StochasticMatrix,
        b: StochasticMatrix,
        c: StochasticMatrix,
        d: StochasticMatrix,
    ) -> Result<Self> {
        let n = a.rows();
        let (pw, qz) = (b.cols(), c.rows());
        let checks = [
            ("A", &a, n, n),
            ("B", &b, n, pw),
            ("C", &c, qz, n),
            ("D", &d, qz, pw),
        ];
        check_shapes(&checks, dist.dim())?;
        Ok(Self { dist, a, b, c, d })
    }

    pub fn n(&self) -> usize {
        self.a.rows()
    }
    pub fn pw(&self) -> usize {
        self.b.cols()
    }
    pub fn qz(&self) -> usize {
        self.c.rows()
    }
}

fn check_shapes(checks: &[(&str, &StochasticMatrix, usize, usize)], z: usize) -> Result<()> {
    for &(name, m, rows, cols) in checks {
        if m.rows() != rows || m.cols() != cols {
            return Err(Error::Dimension(format!(
                "{name} is {}x{}, expected {rows}x{cols}",
                m.rows(),
                m.cols()
            )));
        }
        if m.num_vars() != z {
            return Err(Error::Dimension(format!(
                "{name} is over {} variables, distribution has {z}",
                m.num_vars()
            )));
        }
    }
    Ok(())
}

/// `A = A_o + B_ou F`, `B = B_ow`, `C = C_o + D_ou F`, `D = D_ow`.
pub fn close_loop(plant: &GeneralizedPlant, gain: &DMatrix<f64>) -> Result<ClosedLoopSystem> {
    if gain.nrows() != plant.pu() || gain.ncols() != plant.n() {
        return Err(Error::Dimension(format!(
            "gain is {}x{}, expected {}x{}",
            gain.nrows(),
            gain.ncols(),
            plant.pu(),
            plant.n()
        )));
    }
    let a = plant.a_o.add(&plant.b_ou.mul_constant(gain)?)?;
    let c = plant.c_o.add(&plant.d_ou.mul_constant(gain)?)?;
    ClosedLoopSystem::new(
        plant.dist.clone(),
        a,
        plant.b_ow.clone(),
        c,
        plant.d_ow.clone(),
    )
}

/// Either kind of model a system-description document can hold.
#[derive(Debug, Clone, PartialEq)]
pub enum SystemModel {
    Plant(GeneralizedPlant),
    Closed(ClosedLoopSystem),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dims {
    pub n: usize,
    pub pw: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pu: Option<usize>,
    pub qz: usize,
    #[serde(rename = "Z", default, skip_serializing_if = "Option::is_none")]
    pub z: Option<usize>,
}

/// Matrix entries may be written as expression strings or plain numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EntryText {
    Text(String),
    Number(f64),
}

impl EntryText {
    fn into_string(self) -> String {
        match self {
            EntryText::Text(s) => s,
            EntryText::Number(v) => format!("{v:?}"),
        }
    }
}

type MatrixText = Vec<Vec<EntryText>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatricesDoc {
    #[serde(rename = "A_o")]
    pub a_o: MatrixText,
    #[serde(rename = "B_ow")]
    pub b_ow: MatrixText,
    #[serde(rename = "B_ou", default, skip_serializing_if = "Option::is_none")]
    pub b_ou: Option<MatrixText>,
    #[serde(rename = "C_o")]
    pub c_o: MatrixText,
    #[serde(rename = "D_ow")]
    pub d_ow: MatrixText,
    #[serde(rename = "D_ou", default, skip_serializing_if = "Option::is_none")]
    pub d_ou: Option<MatrixText>,
}

/// Serialized form of a system description (JSON).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub dims: Dims,
    #[serde(default)]
    pub xi: Vec<Distribution>,
    pub matrices: MatricesDoc,
}

fn parse_matrix(name: &str, text: MatrixText, rows: usize, cols: usize, z: usize) -> Result<StochasticMatrix> {
    if text.len() != rows {
        return Err(Error::Dimension(format!(
            "{name} has {} rows, expected {rows}",
            text.len()
        )));
    }
    let rows_text: Vec<Vec<String>> = text
        .into_iter()
        .map(|r| r.into_iter().map(EntryText::into_string).collect())
        .collect();
    StochasticMatrix::parse(name, &rows_text, cols, z)
}

impl SystemDocument {
    pub fn into_model(self) -> Result<SystemModel> {
        let dims = self.dims;
        let (dist, z) = if self.xi.is_empty() {
            if matches!(dims.z, Some(z) if z > 1) {
                return Err(Error::Schema(format!(
                    "dims.Z = {} but no distributions are listed",
                    dims.z.unwrap_or(0)
                )));
            }
            (DistributionSpec::deterministic(), 1)
        } else {
            if let Some(z) = dims.z {
                if z != self.xi.len() {
                    return Err(Error::Schema(format!(
                        "dims.Z = {z} but {} distributions are listed",
                        self.xi.len()
                    )));
                }
            }
            let z = self.xi.len();
            (DistributionSpec::new(self.xi)?, z)
        };
        let m = self.matrices;
        let (n, pw, qz) = (dims.n, dims.pw, dims.qz);
        let a_o = parse_matrix("A_o", m.a_o, n, n, z)?;
        let b_ow = parse_matrix("B_ow", m.b_ow, n, pw, z)?;
        let c_o = parse_matrix("C_o", m.c_o, qz, n, z)?;
        let d_ow = parse_matrix("D_ow", m.d_ow, qz, pw, z)?;
        match (m.b_ou, m.d_ou) {
            (None, None) => {
                if dims.pu.is_some_and(|pu| pu > 0) {
                    return Err(Error::Schema("dims.pu given but B_ou is missing".into()));
                }
                Ok(SystemModel::Closed(ClosedLoopSystem::new(dist, a_o, b_ow, c_o, d_ow)?))
            }
            (Some(b_ou), d_ou) => {
                let pu = dims
                    .pu
                    .ok_or_else(|| Error::Schema("B_ou given but dims.pu is missing".into()))?;
                let b_ou = parse_matrix("B_ou", b_ou, n, pu, z)?;
                let d_ou = match d_ou {
                    Some(d) => parse_matrix("D_ou", d, qz, pu, z)?,
                    None => StochasticMatrix::zeros(qz, pu, z),
                };
                Ok(SystemModel::Plant(GeneralizedPlant::new(
                    dist, a_o, b_ow, b_ou, c_o, d_ow, d_ou,
                )?))
            }
            (None, Some(_)) => Err(Error::Schema("D_ou given without B_ou".into())),
        }
    }

    pub fn from_closed_loop(sys: &ClosedLoopSystem) -> Self {
        Self {
            description: None,
            dims: Dims {
                n: sys.n(),
                pw: sys.pw(),
                pu: None,
                qz: sys.qz(),
                z: Some(sys.dist.dim()),
            },
            xi: sys.dist.components().to_vec(),
            matrices: MatricesDoc {
                a_o: to_text(&sys.a),
                b_ow: to_text(&sys.b),
                b_ou: None,
                c_o: to_text(&sys.c),
                d_ow: to_text(&sys.d),
                d_ou: None,
            },
        }
    }
}

fn to_text(m: &StochasticMatrix) -> MatrixText {
    m.to_strings()
        .into_iter()
        .map(|r| r.into_iter().map(EntryText::Text).collect())
        .collect()
}

/// Parses a JSON system description.
pub fn load_system(document: &str) -> Result<SystemModel> {
    let doc: SystemDocument = serde_json::from_str(document)?;
    doc.into_model()
}
