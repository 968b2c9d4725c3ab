//! Exact expectations of products of polynomial entries.
//!
//! Everything downstream (Gram matrices, `E[C^T C]`, `E[B B^T]`, the moment
//! map `T(M) = E[A^T M A]`) reduces to cross moments `E[p(xi) q(xi)]`, which
//! factor over independent components into scalar moments `E[xi_i^d]`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::expr::Polynomial;
use crate::model::{sample_xi, ClosedLoopSystem, Distribution, DistributionSpec, StochasticMatrix, XiRng};

/// `E[xi^d]` for a single component.
pub fn component_moment(dist: &Distribution, d: u32) -> f64 {
    match dist {
        Distribution::Normal { mean, stddev } => {
            // E[(mu + sigma Z)^d] = sum_k C(d,k) mu^(d-k) sigma^k E[Z^k]
            let mut total = 0.0;
            let mut binom = 1.0;
            for k in 0..=d {
                if k % 2 == 0 {
                    total += binom * mean.powi((d - k) as i32) * stddev.powi(k as i32) * double_factorial(k);
                }
                binom = binom * (d - k) as f64 / (k + 1) as f64;
            }
            total
        }
        Distribution::Uniform { lo, hi } => {
            let e = d as i32 + 1;
            (hi.powi(e) - lo.powi(e)) / ((d + 1) as f64 * (hi - lo))
        }
        Distribution::Discrete {
            values,
            probabilities,
        } => values
            .iter()
            .zip(probabilities)
            .map(|(v, p)| p * v.powi(d as i32))
            .sum(),
    }
}

/// `(k-1)!!` for even `k`, the `k`-th moment of a standard normal.
fn double_factorial(k: u32) -> f64 {
    let mut out = 1.0;
    let mut j = k as i64 - 1;
    while j > 1 {
        out *= j as f64;
        j -= 2;
    }
    out
}

/// Scalar moments `E[xi_i^d]` for `d = 0..=max_degree[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentTable {
    moments: Vec<Vec<f64>>,
}

impl MomentTable {
    pub fn new(dist: &DistributionSpec, max_degree: &[u32]) -> Self {
        let moments = dist
            .components()
            .iter()
            .zip(max_degree)
            .map(|(c, &m)| (0..=m).map(|d| component_moment(c, d)).collect())
            .collect();
        Self { moments }
    }

    /// Table covering every product of two entries drawn from `polys`.
    pub fn for_products<'a>(dist: &DistributionSpec, polys: impl IntoIterator<Item = &'a Polynomial>) -> Self {
        let mut max = vec![0u32; dist.dim()];
        for p in polys {
            for (m, d) in max.iter_mut().zip(p.max_degrees()) {
                *m = (*m).max(2 * d);
            }
        }
        Self::new(dist, &max)
    }

    pub fn max_degree(&self, component: usize) -> u32 {
        self.moments[component].len() as u32 - 1
    }

    pub fn get(&self, component: usize, degree: u32) -> f64 {
        self.moments[component][degree as usize]
    }

    pub fn monomial(&self, degree: &[u32]) -> f64 {
        degree
            .iter()
            .enumerate()
            .map(|(i, &d)| self.get(i, d))
            .product()
    }

    pub fn expect(&self, p: &Polynomial) -> f64 {
        p.terms().iter().map(|t| t.coeff * self.monomial(&t.degree)).sum()
    }

    pub fn expect_product(&self, p: &Polynomial, q: &Polynomial) -> f64 {
        // sum over pairs of terms; no need to materialize the product
        let mut total = 0.0;
        let mut degree = vec![0u32; p.num_vars()];
        for a in p.terms() {
            for b in q.terms() {
                for (d, (x, y)) in degree.iter_mut().zip(a.degree.iter().zip(&b.degree)) {
                    *d = x + y;
                }
                total += a.coeff * b.coeff * self.monomial(&degree);
            }
        }
        total
    }
}

pub fn monomial_moment(dist: &DistributionSpec, degree: &[u32]) -> f64 {
    dist.components()
        .iter()
        .zip(degree)
        .map(|(c, &d)| component_moment(c, d))
        .product()
}

pub fn expect_product(p: &Polynomial, q: &Polynomial, dist: &DistributionSpec) -> f64 {
    MomentTable::for_products(dist, [p, q]).expect_product(p, q)
}

/// Source of cross moments `E[l_a(xi) r_b(xi)]`.
pub trait Expectation {
    fn cross_moments(&self, left: &[&Polynomial], right: &[&Polynomial]) -> DMatrix<f64>;

    /// `E[v v^T]` for the stacked entries `v`; symmetric by construction.
    fn second_moments(&self, entries: &[&Polynomial]) -> DMatrix<f64> {
        let g = self.cross_moments(entries, entries);
        let m = g.nrows();
        DMatrix::from_fn(m, m, |i, j| if i <= j { g[(i, j)] } else { g[(j, i)] })
    }
}

/// Closed-form moments of the independent component families.
#[derive(Debug, Clone, Copy)]
pub struct Analytic<'a> {
    pub dist: &'a DistributionSpec,
}

impl Expectation for Analytic<'_> {
    fn cross_moments(&self, left: &[&Polynomial], right: &[&Polynomial]) -> DMatrix<f64> {
        let table = MomentTable::for_products(self.dist, left.iter().chain(right).copied());
        DMatrix::from_fn(left.len(), right.len(), |a, b| {
            table.expect_product(left[a], right[b])
        })
    }
}

/// Sample-mean estimator of the same moments, for validation and for laws
/// that are only available through a sampler.
pub struct MonteCarlo<S> {
    sampler: S,
    pub samples: usize,
    pub seed: u64,
}

impl<S: Fn(&mut XiRng) -> Vec<f64>> MonteCarlo<S> {
    pub fn with_sampler(sampler: S, samples: usize, seed: u64) -> Self {
        Self {
            sampler,
            samples,
            seed,
        }
    }

    /// Sample means and their standard errors.
    pub fn cross_moments_with_stderr(
        &self,
        left: &[&Polynomial],
        right: &[&Polynomial],
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        let (m, k) = (left.len(), right.len());
        let mut sum = DMatrix::<f64>::zeros(m, k);
        let mut sum_sq = DMatrix::<f64>::zeros(m, k);
        let mut rng = XiRng::new(self.seed, 0);
        let mut lv = vec![0.0; m];
        let mut rv = vec![0.0; k];
        for _ in 0..self.samples {
            let xi = (self.sampler)(&mut rng);
            for (v, p) in lv.iter_mut().zip(left) {
                *v = p.eval_unchecked(&xi);
            }
            for (v, p) in rv.iter_mut().zip(right) {
                *v = p.eval_unchecked(&xi);
            }
            for a in 0..m {
                for b in 0..k {
                    let x = lv[a] * rv[b];
                    sum[(a, b)] += x;
                    sum_sq[(a, b)] += x * x;
                }
            }
        }
        let n = self.samples as f64;
        let mean = &sum / n;
        let stderr = DMatrix::from_fn(m, k, |a, b| {
            let var = (sum_sq[(a, b)] / n - mean[(a, b)].powi(2)).max(0.0) * n / (n - 1.0);
            (var / n).sqrt()
        });
        (mean, stderr)
    }
}

impl MonteCarlo<Box<dyn Fn(&mut XiRng) -> Vec<f64>>> {
    /// Estimator drawing from an (independent-component) distribution.
    pub fn new(dist: &DistributionSpec, samples: usize, seed: u64) -> Self {
        let dist = dist.clone();
        Self::with_sampler(Box::new(move |rng| sample_xi(&dist, rng)), samples, seed)
    }
}

impl<S: Fn(&mut XiRng) -> Vec<f64>> Expectation for MonteCarlo<S> {
    fn cross_moments(&self, left: &[&Polynomial], right: &[&Polynomial]) -> DMatrix<f64> {
        self.cross_moments_with_stderr(left, right).0
    }
}

/// `E[v^T v]` where `v` concatenates `row(M_1), row(M_2), ...`.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub g: DMatrix<f64>,
    /// Number of entries contributed by each stacked matrix.
    pub block_widths: Vec<usize>,
}

pub fn gram_matrix(mats: &[&StochasticMatrix], source: &impl Expectation) -> GramMatrix {
    let entries: Vec<&Polynomial> = mats.iter().flat_map(|m| m.entries().iter()).collect();
    GramMatrix {
        g: source.second_moments(&entries),
        block_widths: mats.iter().map(|m| m.rows() * m.cols()).collect(),
    }
}

/// `E[L^T R]` for stochastic matrices with equally many rows.
pub fn expect_transpose_product(
    left: &StochasticMatrix,
    right: &StochasticMatrix,
    source: &impl Expectation,
) -> Result<DMatrix<f64>> {
    if left.rows() != right.rows() {
        return Err(Error::Dimension(format!(
            "E[L^T R] needs equal row counts, got {} and {}",
            left.rows(),
            right.rows()
        )));
    }
    let mut out = DMatrix::zeros(left.cols(), right.cols());
    for i in 0..left.rows() {
        let l: Vec<&Polynomial> = (0..left.cols()).map(|k| left.entry(i, k)).collect();
        let r: Vec<&Polynomial> = (0..right.cols()).map(|k| right.entry(i, k)).collect();
        out += source.cross_moments(&l, &r);
    }
    Ok(out)
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpectationKind {
    /// `E[C^T C]` (n x n)
    CtC,
    /// `E[B B^T]` (n x n)
    BBt,
    /// `E[D^T D]` (p_w x p_w)
    DtD,
}

pub fn expectation_matrix(kind: ExpectationKind, sys: &ClosedLoopSystem) -> DMatrix<f64> {
    let src = Analytic { dist: &sys.dist };
    expectation_matrix_with(kind, sys, &src)
}

pub fn expectation_matrix_with(
    kind: ExpectationKind,
    sys: &ClosedLoopSystem,
    source: &impl Expectation,
) -> DMatrix<f64> {
    let m = match kind {
        ExpectationKind::CtC => expect_transpose_product(&sys.c, &sys.c, source),
        ExpectationKind::BBt => {
            let bt = sys.b.transpose();
            expect_transpose_product(&bt, &bt, source)
        }
        ExpectationKind::DtD => expect_transpose_product(&sys.d, &sys.d, source),
    };
    symmetrize(m.expect("shapes validated at construction"))
}

/// The linear map `T(M) = E[A^T M A]` on symmetric n x n matrices, stored
/// through the Gram matrix of `row(A)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentMap {
    n: usize,
    gram: DMatrix<f64>,
}

impl MomentMap {
    pub fn new(a: &StochasticMatrix, source: &impl Expectation) -> Self {
        let gram = gram_matrix(&[a], source).g;
        Self { n: a.rows(), gram }
    }

    pub fn analytic(a: &StochasticMatrix, dist: &DistributionSpec) -> Self {
        Self::new(a, &Analytic { dist })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn apply(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.n;
        assert_eq!(m.shape(), (n, n), "moment map argument has the wrong size");
        // T(M)_{kl} = sum_{ij} M_ij E[A_ik A_jl] = sum_{ij} M_ij G[(i,k),(j,l)]
        let mut out = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let w = m[(i, j)];
                if w == 0.0 {
                    continue;
                }
                for k in 0..n {
                    for l in 0..n {
                        out[(k, l)] += w * self.gram[(i * n + k, j * n + l)];
                    }
                }
            }
        }
        symmetrize(out)
    }

    /// Matrix of `T` acting on row-major `vec(M)`, size n^2 x n^2.
    pub fn operator_matrix(&self) -> DMatrix<f64> {
        let n = self.n;
        DMatrix::from_fn(n * n, n * n, |r, c| {
            let (k, l) = (r / n, r % n);
            let (i, j) = (c / n, c % n);
            self.gram[(i * n + k, j * n + l)]
        })
    }

    /// Spectral radius of `T`: dense eigenvalues for `n <= DENSE_RADIUS_MAX_N`,
    /// power iteration above that.
    pub fn spectral_radius(&self, iterations: usize, seed: u64) -> f64 {
        if self.n <= DENSE_RADIUS_MAX_N {
            self.operator_matrix()
                .complex_eigenvalues()
                .iter()
                .fold(0.0f64, |m, e| m.max(e.norm()))
        } else {
            self.power_radius(iterations, seed)
        }
    }

    /// Mean growth rate of power iteration from a PSD start, averaged over
    /// the second half of the iterations.
    pub fn power_radius(&self, iterations: usize, seed: u64) -> f64 {
        let n = self.n;
        let mut rng = XiRng::new(seed, u64::MAX);
        let g = DMatrix::from_fn(n, n, |_, _| rng.unit_open() - 0.5);
        let mut m = &g * g.transpose() + DMatrix::identity(n, n);
        m /= m.norm();
        let iterations = iterations.max(2);
        let mut log_growth = 0.0;
        for it in 0..iterations {
            let next = self.apply(&m);
            let norm = next.norm();
            if norm == 0.0 {
                return 0.0;
            }
            if it >= iterations / 2 {
                log_growth += norm.ln();
            }
            m = next / norm;
        }
        (log_growth / (iterations - iterations / 2) as f64).exp()
    }
}

/// Largest state dimension for which the spectral radius is computed from
/// the dense n^2 x n^2 operator.
pub const DENSE_RADIUS_MAX_N: usize = 24;

pub fn moment_map_apply(sys: &ClosedLoopSystem, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.shape() != (sys.n(), sys.n()) {
        return Err(Error::Dimension(format!(
            "moment map needs a {}x{} argument",
            sys.n(),
            sys.n()
        )));
    }
    Ok(MomentMap::analytic(&sys.a, &sys.dist).apply(m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expr;
    use crate::model::{load_system, SystemModel};
    use nalgebra::SymmetricEigen;
    use proptest::prelude::*;

    fn uniform(lo: f64, hi: f64) -> Distribution {
        Distribution::Uniform { lo, hi }
    }
    fn normal(mean: f64, stddev: f64) -> Distribution {
        Distribution::Normal { mean, stddev }
    }
    fn spec(c: Vec<Distribution>) -> DistributionSpec {
        DistributionSpec::new(c).unwrap()
    }

    fn benchmark_dist() -> DistributionSpec {
        spec(vec![normal(0.0, 0.2), uniform(-0.5, 0.5)])
    }

    fn benchmark() -> crate::model::GeneralizedPlant {
        match load_system(crate::BENCHMARK_PLANT).unwrap() {
            SystemModel::Plant(p) => p,
            _ => unreachable!(),
        }
    }

    #[test]
    fn scalar_moment_examples() {
        let d = spec(vec![uniform(-0.5, 0.5)]);
        assert!((monomial_moment(&d, &[2]) - 1.0 / 12.0).abs() < 1e-15);
        let d = spec(vec![normal(0.0, 0.2)]);
        assert!((monomial_moment(&d, &[4]) - 0.0048).abs() < 1e-15);
        assert_eq!(monomial_moment(&benchmark_dist(), &[1, 2]), 0.0);
    }

    #[test]
    fn odd_moments_of_symmetric_laws_are_exactly_zero() {
        for d in [1, 3, 5, 7] {
            assert_eq!(component_moment(&normal(0.0, 0.7), d), 0.0);
            assert_eq!(component_moment(&uniform(-1.3, 1.3), d), 0.0);
        }
        assert_eq!(component_moment(&normal(3.0, 2.0), 0), 1.0);
        assert_eq!(component_moment(&uniform(2.0, 5.0), 0), 1.0);
    }

    #[test]
    fn shifted_normal_moments() {
        // mean 1, sd 2: E[x]=1, E[x^2]=5, E[x^3]=mu^3+3 mu s^2=13, E[x^4]=mu^4+6mu^2s^2+3s^4=73
        let d = normal(1.0, 2.0);
        let want = [1.0, 1.0, 5.0, 13.0, 73.0];
        for (k, w) in want.iter().enumerate() {
            assert!((component_moment(&d, k as u32) - w).abs() < 1e-12);
        }
    }

    #[test]
    fn table_degree_zero_is_one() {
        let t = MomentTable::new(&benchmark_dist(), &[4, 4]);
        assert_eq!(t.get(0, 0), 1.0);
        assert_eq!(t.get(1, 0), 1.0);
        assert_eq!(t.max_degree(1), 4);
    }

    #[test]
    fn expect_product_examples() {
        let d = benchmark_dist();
        let p = parse_expr("1.3 + x2", 2).unwrap();
        assert!((expect_product(&p, &p, &d) - (1.69 + 1.0 / 12.0)).abs() < 1e-14);
        let x1 = parse_expr("x1", 2).unwrap();
        let x2 = parse_expr("x2", 2).unwrap();
        assert_eq!(expect_product(&x1, &x2, &d), 0.0);
        let sq = parse_expr("x1^2", 2).unwrap();
        assert!((expect_product(&sq, &sq, &d) - 0.0048).abs() < 1e-15);
    }

    #[test]
    fn deterministic_gram_is_rank_one() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -0.5, 3.0]);
        let sm = StochasticMatrix::from_constant(&a, 1);
        let dist = DistributionSpec::deterministic();
        let g = gram_matrix(&[&sm], &Analytic { dist: &dist }).g;
        let row = DMatrix::from_row_slice(1, 4, &[1.0, 2.0, -0.5, 3.0]);
        assert!((&g - row.transpose() * &row).norm() < 1e-15);
        let eig = SymmetricEigen::new(g).eigenvalues;
        assert_eq!(eig.iter().filter(|&&e| e.abs() > 1e-12).count(), 1);
    }

    #[test]
    fn scalar_uniform_gram() {
        let dist = spec(vec![uniform(-1.0, 1.0)]);
        let a = StochasticMatrix::new(1, 1, 1, vec![parse_expr("x1", 1).unwrap()]).unwrap();
        let g = gram_matrix(&[&a], &Analytic { dist: &dist }).g;
        assert!((g[(0, 0)] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn benchmark_joint_gram_is_psd_and_matches_sampling() {
        let p = benchmark();
        let exact = gram_matrix(&[&p.a_o, &p.b_ou], &Analytic { dist: &p.dist });
        assert_eq!(exact.g.shape(), (12, 12));
        assert_eq!(exact.block_widths, vec![9, 3]);
        assert!((exact.g[(0, 0)] - 1.773_333_333_333_333).abs() < 1e-12);
        assert!((&exact.g - exact.g.transpose()).amax() <= 1e-12);
        let eig = SymmetricEigen::new(exact.g.clone()).eigenvalues;
        let norm = eig.iter().fold(0.0f64, |a, &e| a.max(e.abs()));
        assert!(eig.min() >= -1e-10 * norm);

        let entries: Vec<&Polynomial> = p.a_o.entries().iter().chain(p.b_ou.entries()).collect();
        let mc = MonteCarlo::new(&p.dist, 1_000_000, 11);
        let (mean, se) = mc.cross_moments_with_stderr(&entries, &entries);
        for i in 0..12 {
            for j in 0..12 {
                let diff = (mean[(i, j)] - exact.g[(i, j)]).abs();
                assert!(
                    diff <= 4.0 * se[(i, j)] + 1e-9 * exact.g[(i, j)].abs().max(1e-3),
                    "({i},{j}): {diff} vs {}",
                    se[(i, j)]
                );
            }
        }
        // the (1,1) entry specifically within 3 standard errors
        assert!((mean[(0, 0)] - 1.773_333_333_333_333).abs() <= 3.0 * se[(0, 0)]);
    }

    #[test]
    fn benchmark_expectation_matrices() {
        let p = benchmark();
        let cl = crate::model::close_loop(&p, &DMatrix::zeros(1, 3)).unwrap();
        let ed = expectation_matrix(ExpectationKind::DtD, &cl);
        assert_eq!(ed, DMatrix::zeros(1, 1));
        let q = expectation_matrix(ExpectationKind::CtC, &cl);
        let want_q = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.0, 0.04, 1.0 / 12.0]));
        assert!((&q - &want_q).amax() < 1e-15);
        let bb = expectation_matrix(ExpectationKind::BBt, &cl);
        let want_b = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.0, 0.0, 1.0]));
        assert_eq!(bb, want_b);

        let mc = MonteCarlo::new(&p.dist, 1_000_000, 5);
        let c_entries: Vec<&Polynomial> = cl.c.entries().iter().collect();
        let (mean, se) = mc.cross_moments_with_stderr(&c_entries, &c_entries);
        for i in 0..3 {
            for j in 0..3 {
                assert!((mean[(i, j)] - q[(i, j)]).abs() <= 4.0 * se[(i, j)] + 1e-15);
            }
        }
    }

    #[test]
    fn dense_radius_matches_apply_and_power() {
        let dist = spec(vec![uniform(-1.0, 1.0), normal(0.2, 0.3)]);
        let text = [["0.4 + 0.3*x1", "0.2*x2^2"], ["-0.5*x1*x2", "0.1 - 0.6*x2"]];
        let rows: Vec<Vec<String>> = text.iter().map(|r| r.iter().map(|s| s.to_string()).collect()).collect();
        let a = StochasticMatrix::parse("A", &rows, 2, 2).unwrap();
        let map = MomentMap::analytic(&a, &dist);
        let k = map.operator_matrix();
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]);
        let via_k = &k * DMatrix::from_row_slice(4, 1, &[m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]]);
        let t = map.apply(&m);
        for r in 0..4 {
            assert!((via_k[r] - t[(r / 2, r % 2)]).abs() < 1e-14);
        }
        let dense = map.spectral_radius(0, 0);
        let power = map.power_radius(2000, 3);
        assert!((dense - power).abs() < 1e-6 * dense, "{dense} vs {power}");
    }

    #[test]
    fn dense_radius_of_rotation_is_exact() {
        // Power iteration oscillates here; the dense path does not.
        let (c, s) = (0.9 * 0.3f64.cos(), 0.9 * 0.3f64.sin());
        let a = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        let map = MomentMap::analytic(&StochasticMatrix::from_constant(&a, 1), &DistributionSpec::deterministic());
        assert!((map.spectral_radius(10, 0) - 0.81).abs() < 1e-12);
    }

    #[test]
    fn moment_map_examples() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 1.0, -0.3, 0.2]);
        let map = MomentMap::analytic(&StochasticMatrix::from_constant(&a, 1), &DistributionSpec::deterministic());
        let t = map.apply(&DMatrix::identity(2, 2));
        assert!((&t - a.transpose() * &a).amax() < 1e-15);

        let dist = spec(vec![uniform(-1.0, 1.0)]);
        let x = StochasticMatrix::new(1, 1, 1, vec![parse_expr("x1", 1).unwrap()]).unwrap();
        let t = MomentMap::analytic(&x, &dist).apply(&DMatrix::from_element(1, 1, 3.0));
        assert!((t[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn spectral_radius_of_scalar_map() {
        let dist = spec(vec![uniform(-1.0, 1.0)]);
        let x = StochasticMatrix::new(1, 1, 1, vec![parse_expr("x1", 1).unwrap()]).unwrap();
        let rho = MomentMap::analytic(&x, &dist).spectral_radius(200, 0);
        assert!((rho - 1.0 / 3.0).abs() < 1e-12);
    }

    fn random_sym(vals: &[f64], n: usize) -> DMatrix<f64> {
        let m = DMatrix::from_row_slice(n, n, &vals[..n * n]);
        &m + m.transpose()
    }

    proptest! {
        #[test]
        fn moment_map_is_linear_and_positive(
            v1 in proptest::collection::vec(-1.0f64..1.0, 9),
            v2 in proptest::collection::vec(-1.0f64..1.0, 9),
            alpha in -2.0f64..2.0,
        ) {
            let p = benchmark();
            let map = MomentMap::analytic(&p.a_o, &p.dist);
            let m1 = random_sym(&v1, 3);
            let m2 = random_sym(&v2, 3);
            let lhs = map.apply(&(&m1 * alpha + &m2));
            let rhs = map.apply(&m1) * alpha + map.apply(&m2);
            prop_assert!((&lhs - &rhs).amax() <= 1e-12 * rhs.amax().max(1.0));

            let psd = &m1 * m1.transpose();
            let t = map.apply(&psd);
            let min = SymmetricEigen::new(t).eigenvalues.min();
            prop_assert!(min >= -1e-10 * psd.norm().max(1e-300));
        }
    }
}
