//! Random system generators and independent oracles shared by the
//! integration and acceptance tests.
#![allow(dead_code)]

use h2iid::model::{
    close_loop, load_system, ClosedLoopSystem, Distribution, DistributionSpec, GeneralizedPlant, StochasticMatrix,
    SystemModel, XiRng,
};
use h2iid::moments::MomentMap;
use h2iid::sdp::{solve_sdp, SdpProblem, DEFAULT_EPS};
use nalgebra::DMatrix;

pub const REFERENCE_GAIN: [f64; 3] = [1.6739, 0.1027, -1.7100];

pub fn benchmark() -> GeneralizedPlant {
    match load_system(h2iid::BENCHMARK_PLANT).unwrap() {
        SystemModel::Plant(p) => p,
        SystemModel::Closed(_) => unreachable!(),
    }
}

pub fn benchmark_closed(f: &[f64]) -> ClosedLoopSystem {
    close_loop(&benchmark(), &DMatrix::from_row_slice(1, 3, f)).unwrap()
}

pub fn data_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

pub struct Rand(XiRng);

impl Rand {
    pub fn new(seed: u64) -> Self {
        Self(XiRng::new(seed, 7))
    }
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.0.unit_open()
    }
    pub fn index(&mut self, n: usize) -> usize {
        (self.0.next_u64() % n as u64) as usize
    }
    pub fn coin(&mut self) -> bool {
        self.0.next_u64() & 1 == 1
    }
    pub fn matrix(&mut self, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| self.uniform(-scale, scale))
    }
}

pub fn random_distribution(rng: &mut Rand, z: usize) -> DistributionSpec {
    let comps = (0..z)
        .map(|_| match rng.index(3) {
            0 => Distribution::Normal {
                mean: rng.uniform(-0.3, 0.3),
                stddev: rng.uniform(0.05, 0.5),
            },
            1 => {
                let lo = rng.uniform(-0.8, 0.0);
                Distribution::Uniform {
                    lo,
                    hi: lo + rng.uniform(0.2, 1.2),
                }
            }
            _ => {
                let w = [rng.uniform(0.1, 1.0), rng.uniform(0.1, 1.0), rng.uniform(0.1, 1.0)];
                let s: f64 = w.iter().sum();
                Distribution::Discrete {
                    values: (0..3).map(|_| rng.uniform(-1.0, 1.0)).collect(),
                    probabilities: vec![w[0] / s, w[1] / s, 1.0 - w[0] / s - w[1] / s],
                }
            }
        })
        .collect();
    DistributionSpec::new(comps).unwrap()
}

/// Polynomial text of total degree at most 2 in `x1..xz`.
pub fn random_entry(rng: &mut Rand, z: usize, scale: f64) -> String {
    let mut terms = vec![format!("{:.6}", rng.uniform(-scale, scale))];
    for i in 1..=z {
        if rng.coin() {
            terms.push(format!("{:.6}*x{i}", rng.uniform(-scale, scale)));
        }
        if rng.coin() {
            terms.push(format!("{:.6}*x{i}^2", rng.uniform(-scale, scale)));
        }
    }
    if z >= 2 && rng.coin() {
        terms.push(format!("{:.6}*x1*x2", rng.uniform(-scale, scale)));
    }
    terms.join(" + ")
}

pub fn random_matrix(rng: &mut Rand, rows: usize, cols: usize, z: usize, scale: f64) -> StochasticMatrix {
    let text: Vec<Vec<String>> = (0..rows)
        .map(|_| (0..cols).map(|_| random_entry(rng, z, scale)).collect())
        .collect();
    StochasticMatrix::parse("M", &text, cols, z).unwrap()
}

/// Random system with `n <= 4`, `Z <= 2`, degree-2 entries, scaled so the
/// moment map has spectral radius in `[0.3, 0.9]`.
pub fn random_stable_system(rng: &mut Rand) -> ClosedLoopSystem {
    let n = 1 + rng.index(4);
    let z = 1 + rng.index(2);
    let pw = 1 + rng.index(2);
    let qz = 1 + rng.index(2);
    let dist = random_distribution(rng, z);
    let a = random_matrix(rng, n, n, z, 0.6);
    let rho = MomentMap::analytic(&a, &dist).spectral_radius(500, 1);
    let target = rng.uniform(0.3, 0.9);
    let a = a.scale((target / rho.max(1e-6)).sqrt());
    let b = random_matrix(rng, n, pw, z, 1.0);
    let c = random_matrix(rng, qz, n, z, 1.0);
    let d = random_matrix(rng, qz, pw, z, 0.5);
    ClosedLoopSystem::new(dist, a, b, c, d).unwrap()
}

/// Constant matrices of a point-mass system.
pub struct Deterministic {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues().iter().fold(0.0f64, |m, e| m.max(e.norm()))
}

pub fn random_deterministic_system(rng: &mut Rand) -> (ClosedLoopSystem, Deterministic) {
    let n = 1 + rng.index(4);
    let pw = 1 + rng.index(2);
    let qz = 1 + rng.index(2);
    let a = rng.matrix(n, n, 1.0);
    let a = &a * (rng.uniform(0.2, 0.95) / spectral_radius(&a).max(1e-6));
    let m = Deterministic {
        a,
        b: rng.matrix(n, pw, 1.0),
        c: rng.matrix(qz, n, 1.0),
        d: rng.matrix(qz, pw, 0.5),
    };
    let k = |x: &DMatrix<f64>| StochasticMatrix::from_constant(x, 1);
    let sys = ClosedLoopSystem::new(DistributionSpec::deterministic(), k(&m.a), k(&m.b), k(&m.c), k(&m.d)).unwrap();
    (sys, m)
}

/// Classical H2 norm from the observability Lyapunov equation
/// `W = A^T W A + C^T C`, solved as a dense linear system.
pub fn lyapunov_h2(m: &Deterministic) -> f64 {
    let n = m.a.nrows();
    let at = m.a.transpose();
    let lhs = DMatrix::identity(n * n, n * n) - at.kronecker(&at);
    let q = m.c.transpose() * &m.c;
    let rhs = DMatrix::from_column_slice(n * n, 1, q.as_slice());
    let w = lhs.lu().solve(&rhs).unwrap();
    let w = DMatrix::from_column_slice(n, n, w.as_slice());
    ((m.b.transpose() * w * &m.b).trace() + (m.d.transpose() * &m.d).trace()).sqrt()
}

/// Point-mass plant whose output penalizes every state and input direction.
pub struct DeterministicPlant {
    pub plant: GeneralizedPlant,
    pub a: DMatrix<f64>,
    pub bw: DMatrix<f64>,
    pub bu: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub dw: DMatrix<f64>,
    pub du: DMatrix<f64>,
}

pub fn random_deterministic_plant(rng: &mut Rand) -> DeterministicPlant {
    let n = 1 + rng.index(4);
    let pw = 1 + rng.index(2);
    let pu = 1 + rng.index(2);
    // [C D] of full column rank keeps the optimal certificate bounded
    let qz = n + pu;
    let a = rng.matrix(n, n, 1.0);
    let a = &a * (rng.uniform(0.2, 0.95) / spectral_radius(&a).max(1e-6));
    let mut du = rng.matrix(qz, pu, 0.5);
    for i in 0..pu {
        du[(i, i)] += 1.0;
    }
    let (bw, bu, c, dw) = (
        rng.matrix(n, pw, 1.0),
        rng.matrix(n, pu, 1.0),
        rng.matrix(qz, n, 1.0),
        rng.matrix(qz, pw, 0.3),
    );
    let k = |x: &DMatrix<f64>| StochasticMatrix::from_constant(x, 1);
    let plant = GeneralizedPlant::new(DistributionSpec::deterministic(), k(&a), k(&bw), k(&bu), k(&c), k(&dw), k(&du))
        .unwrap();
    DeterministicPlant {
        plant,
        a,
        bw,
        bu,
        c,
        dw,
        du,
    }
}

/// Optimal state-feedback H2 norm from the stabilizing solution of the
/// Riccati equation, by value iteration from zero.
pub fn riccati_h2(p: &DeterministicPlant) -> f64 {
    let n = p.a.nrows();
    let (a, b, c, d) = (&p.a, &p.bu, &p.c, &p.du);
    let mut x = DMatrix::<f64>::zeros(n, n);
    for _ in 0..100_000 {
        let s = d.transpose() * d + b.transpose() * &x * b;
        let l = a.transpose() * &x * b + c.transpose() * d;
        let next = a.transpose() * &x * a + c.transpose() * c - &l * s.lu().solve(&l.transpose()).unwrap();
        let next = (&next + next.transpose()) * 0.5;
        let delta = (&next - &x).amax();
        x = next;
        if delta <= 1e-15 * x.amax().max(1.0) {
            break;
        }
    }
    ((p.bw.transpose() * x * &p.bw).trace() + (p.dw.transpose() * &p.dw).trace()).sqrt()
}

/// Classical deterministic state-feedback H2 LMI on plain matrices:
/// minimize tr(R) over X, Y, R.
pub fn classical_synthesis_lmi(p: &DeterministicPlant) -> f64 {
    let (n, pw, pu, qz) = (p.a.nrows(), p.bw.ncols(), p.bu.ncols(), p.c.nrows());
    let mut sdp = SdpProblem::new(DEFAULT_EPS);
    let xv = sdp.symmetric("X", n);
    let yv = sdp.matrix("Y", pu, n);
    let rv = sdp.symmetric("R", pw);
    let t = sdp.scalar("t");
    sdp.minimize(t, 1.0);
    let main = sdp
        .lmi("closed-loop", &[n, n, qz])
        .product(&sdp, 0, 0, None, xv, None)
        .product(&sdp, 1, 1, None, xv, None)
        .constant(2, 2, &DMatrix::identity(qz, qz))
        .product(&sdp, 1, 0, Some(&p.a), xv, None)
        .product(&sdp, 1, 0, Some(&p.bu), yv, None)
        .product(&sdp, 2, 0, Some(&p.c), xv, None)
        .product(&sdp, 2, 0, Some(&p.du), yv, None);
    sdp.add_lmi(main);
    let perf = sdp
        .lmi("disturbance", &[pw, n])
        .product(&sdp, 0, 0, None, rv, None)
        .constant(0, 0, &-(p.dw.transpose() * &p.dw))
        .constant(1, 0, &p.bw)
        .product(&sdp, 1, 1, None, xv, None);
    sdp.add_lmi(perf);
    let tr = sdp
        .lmi("trace", &[1])
        .product(&sdp, 0, 0, None, t, None)
        .term(&sdp, 0, 0, rv, |e| DMatrix::from_element(1, 1, -e.trace()));
    sdp.add_lmi(tr);
    let sol = solve_sdp(&sdp).unwrap();
    assert!(sol.is_optimal(), "{}", sol.message);
    sol.scalar(t).sqrt()
}

/// `E[A^T M A]` entry by entry from polynomial product moments.
pub fn expected_quadratic(a: &StochasticMatrix, m: &DMatrix<f64>, dist: &DistributionSpec) -> DMatrix<f64> {
    let n = a.rows();
    let c = a.cols();
    DMatrix::from_fn(c, c, |k, l| {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if m[(i, j)] != 0.0 {
                    s += m[(i, j)] * h2iid::moments::expect_product(a.entry(i, k), a.entry(j, l), dist);
                }
            }
        }
        s
    })
}

pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}
