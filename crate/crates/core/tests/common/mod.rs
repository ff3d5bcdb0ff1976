//! Random system generators and brute-force oracles shared by the
//! integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use stoch_lyap::dist::{DistributionSpec, ScalarDistribution};
use stoch_lyap::linalg::Mat;
use stoch_lyap::sampled::{ContinuousPlant, IntervalLaw};
use stoch_lyap::sysmodel::{PolyEntry, SystemModel};

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha20Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

pub fn rand_mat(rng: &mut ChaCha20Rng, r: usize, c: usize, scale: f64) -> Mat {
    Mat::from_fn(r, c, |_, _| uniform(rng, -scale, scale))
}

pub fn rand_sym(rng: &mut ChaCha20Rng, n: usize, scale: f64) -> Mat {
    let a = rand_mat(rng, n, n, scale);
    (&a + a.transpose()) * 0.5
}

/// `L Lᵀ + floor I` with `L` uniform in `[-1, 1]`.
pub fn rand_spd(rng: &mut ChaCha20Rng, n: usize, floor: f64) -> Mat {
    let l = rand_mat(rng, n, n, 1.0);
    &l * l.transpose() + Mat::identity(n, n) * floor
}

/// Rank-deficient PSD matrix when `rank < n`.
pub fn rand_psd(rng: &mut ChaCha20Rng, n: usize, rank: usize) -> Mat {
    let l = rand_mat(rng, n, rank, 1.0);
    &l * l.transpose()
}

fn rand_discrete(rng: &mut ChaCha20Rng, symmetric: bool) -> ScalarDistribution {
    if symmetric {
        let a = uniform(rng, 0.1, 1.0);
        let b = uniform(rng, 0.1, 1.0);
        let p = uniform(rng, 0.1, 0.4);
        let q = 0.5 - p;
        return ScalarDistribution::Discrete {
            values: vec![-a, a, -b, b],
            probs: vec![p, p, q, q],
        };
    }
    let k = rng.random_range(2..5usize);
    let values: Vec<f64> = (0..k).map(|_| uniform(rng, -1.0, 1.0)).collect();
    let raw: Vec<f64> = (0..k).map(|_| uniform(rng, 0.1, 1.0)).collect();
    let s: f64 = raw.iter().sum();
    ScalarDistribution::Discrete {
        values,
        probs: raw.iter().map(|p| p / s).collect(),
    }
}

/// Any supported coordinate law.
pub fn rand_coord(rng: &mut ChaCha20Rng) -> ScalarDistribution {
    match rng.random_range(0..5u32) {
        0 => ScalarDistribution::Normal {
            mean: uniform(rng, -0.5, 0.5),
            stddev: uniform(rng, 0.05, 0.6),
        },
        1 => {
            let lo = uniform(rng, -1.0, 0.5);
            ScalarDistribution::Uniform {
                lo,
                hi: lo + uniform(rng, 0.1, 1.0),
            }
        }
        2 => ScalarDistribution::Exponential {
            rate: uniform(rng, 1.0, 10.0),
        },
        3 => rand_discrete(rng, false),
        _ => ScalarDistribution::Constant {
            value: uniform(rng, -1.0, 1.0),
        },
    }
}

/// Zero-mean law symmetric about the origin.
pub fn rand_symmetric_coord(rng: &mut ChaCha20Rng) -> ScalarDistribution {
    match rng.random_range(0..3u32) {
        0 => ScalarDistribution::Normal {
            mean: 0.0,
            stddev: uniform(rng, 0.05, 0.6),
        },
        1 => {
            let a = uniform(rng, 0.1, 1.0);
            ScalarDistribution::Uniform { lo: -a, hi: a }
        }
        _ => rand_discrete(rng, true),
    }
}

pub fn rand_dist(rng: &mut ChaCha20Rng, z: usize) -> DistributionSpec {
    DistributionSpec::new((0..z).map(|_| rand_coord(rng)).collect()).unwrap()
}

fn rand_entry(rng: &mut ChaCha20Rng, z: usize, scale: f64) -> PolyEntry {
    let mut terms = vec![(uniform(rng, -scale, scale), vec![0; z])];
    let mut monomials = Vec::new();
    for i in 0..z {
        let mut e = vec![0; z];
        e[i] = 1;
        monomials.push(e.clone());
        e[i] = 2;
        monomials.push(e);
        for j in i + 1..z {
            let mut e = vec![0; z];
            e[i] = 1;
            e[j] = 1;
            monomials.push(e);
        }
    }
    for e in monomials {
        if rng.random_bool(0.3) {
            terms.push((uniform(rng, -scale, scale), e));
        }
    }
    PolyEntry::new(terms, z).unwrap()
}

fn rand_grid(rng: &mut ChaCha20Rng, r: usize, c: usize, z: usize, scale: f64) -> Vec<Vec<PolyEntry>> {
    (0..r).map(|_| (0..c).map(|_| rand_entry(rng, z, scale)).collect()).collect()
}

/// Polynomial-entry model of degree at most two in `z` coordinates.
pub fn rand_poly(rng: &mut ChaCha20Rng, n: usize, m: usize, z: usize) -> SystemModel {
    let a = rand_grid(rng, n, n, z, 0.6);
    let b = (m > 0).then(|| rand_grid(rng, n, m, z, 0.6));
    SystemModel::poly(a, b, rand_dist(rng, z)).unwrap()
}

/// `A0 + sum A_i xi_i`; zero-mean symmetric noise when `zero_mean`.
pub fn rand_affine(rng: &mut ChaCha20Rng, n: usize, m: usize, z: usize, zero_mean: bool) -> SystemModel {
    let a = (0..=z).map(|i| rand_mat(rng, n, n, if i == 0 { 0.8 } else { 0.4 })).collect();
    let b = (m > 0).then(|| (0..=z).map(|_| rand_mat(rng, n, m, 0.5)).collect());
    let coords = (0..z)
        .map(|_| if zero_mean { rand_symmetric_coord(rng) } else { rand_coord(rng) })
        .collect();
    SystemModel::affine(a, b, DistributionSpec::new(coords).unwrap()).unwrap()
}

/// i.i.d. switching among `s` modes with random probabilities.
pub fn rand_switched(rng: &mut ChaCha20Rng, n: usize, m: usize, s: usize) -> SystemModel {
    let modes = (0..s).map(|_| rand_mat(rng, n, n, 0.9)).collect();
    let b_modes = (m > 0).then(|| (0..s).map(|_| rand_mat(rng, n, m, 0.5)).collect());
    let raw: Vec<f64> = (0..s).map(|_| uniform(rng, 0.1, 1.0)).collect();
    let total: f64 = raw.iter().sum();
    let dist = DistributionSpec::new(vec![ScalarDistribution::Discrete {
        values: (1..=s).map(|v| v as f64).collect(),
        probs: raw.iter().map(|p| p / total).collect(),
    }])
    .unwrap();
    SystemModel::switched(modes, b_modes, dist).unwrap()
}

/// Affine model that a known gain renders mean-square stable: the nominal
/// closed loop `A0 + B0 F0` has spectral radius 0.6 and the noise is small
/// enough that the oracle certifies `F0` below 0.95. The open loop is
/// typically unstable.
pub fn rand_stabilizable(rng: &mut ChaCha20Rng, n: usize, m: usize) -> SystemModel {
    loop {
        let target = rand_mat(rng, n, n, 1.0);
        let r = spectral_radius(&target).max(1e-3);
        let acl = target * (0.6 / r);
        let b0 = rand_mat(rng, n, m, 1.0);
        let f0 = rand_mat(rng, m, n, 1.5);
        let a0 = &acl - &b0 * &f0;
        let a1 = rand_mat(rng, n, n, 0.15);
        let b1 = rand_mat(rng, n, m, 0.15);
        let dist = DistributionSpec::new(vec![rand_symmetric_coord(rng)]).unwrap();
        let model = SystemModel::affine(vec![a0, a1], Some(vec![b0, b1]), dist).unwrap();
        if oracle_lambda(&model, Some(&f0)) < 0.95 {
            return model;
        }
    }
}

pub fn rand_sampled(rng: &mut ChaCha20Rng, n: usize, m: usize) -> SystemModel {
    let plant = ContinuousPlant::new(rand_mat(rng, n, n, 3.0), rand_mat(rng, n, m, 1.0)).unwrap();
    let dist = DistributionSpec::new(vec![ScalarDistribution::Exponential {
        rate: uniform(rng, 5.0, 30.0),
    }])
    .unwrap();
    let law = IntervalLaw {
        offset: uniform(rng, 0.005, 0.05),
        scale: 1.0,
        coord: 0,
    };
    SystemModel::sampled(plant, law, dist).unwrap()
}

// ---------------------------------------------------------------------------
// Oracles

/// Gauss rule from the symmetric Jacobi matrix (diagonal `a`, off-diagonal
/// `b`) of a probability measure: nodes are eigenvalues, weights the squared
/// first eigenvector components.
fn golub_welsch(a: &[f64], b: &[f64]) -> Vec<(f64, f64)> {
    let k = a.len();
    let j = DMatrix::from_fn(k, k, |r, c| {
        if r == c {
            a[r]
        } else if r + 1 == c {
            b[r]
        } else if c + 1 == r {
            b[c]
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(j);
    (0..k)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect()
}

/// Three-point rule (exact through degree five), `(node, weight)` pairs.
pub fn coord_rule(c: &ScalarDistribution) -> Vec<(f64, f64)> {
    match c {
        ScalarDistribution::Normal { mean, stddev } => golub_welsch(&[0.0; 3], &[1.0, 2f64.sqrt()])
            .into_iter()
            .map(|(x, w)| (mean + stddev * x, w))
            .collect(),
        ScalarDistribution::Uniform { lo, hi } => {
            let b: Vec<f64> = (1..3).map(|k| k as f64 / ((4 * k * k - 1) as f64).sqrt()).collect();
            let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
            golub_welsch(&[0.0; 3], &b).into_iter().map(|(x, w)| (mid + half * x, w)).collect()
        }
        ScalarDistribution::Exponential { rate } => golub_welsch(&[1.0, 3.0, 5.0], &[1.0, 2.0])
            .into_iter()
            .map(|(x, w)| (x / rate, w))
            .collect(),
        ScalarDistribution::Discrete { values, probs } => values.iter().copied().zip(probs.iter().copied()).collect(),
        ScalarDistribution::Constant { value } => vec![(*value, 1.0)],
    }
}

/// Tensor-product rule over all coordinates: `(weight, xi)`.
pub fn quadrature(dist: &DistributionSpec) -> Vec<(f64, Vec<f64>)> {
    let mut out = vec![(1.0, Vec::new())];
    for c in dist.coords() {
        let rule = coord_rule(c);
        out = out
            .into_iter()
            .flat_map(|(w, xi)| {
                rule.iter().map(move |(x, v)| {
                    let mut xi = xi.clone();
                    xi.push(*x);
                    (w * v, xi)
                })
            })
            .collect();
    }
    out
}

/// `(A, B)` at each quadrature point, with `B` folded into `A` by `gain`.
pub fn quad_matrices(model: &SystemModel, gain: Option<&Mat>) -> Vec<(f64, Mat)> {
    quadrature(model.dist())
        .into_iter()
        .map(|(w, xi)| {
            let (a, b) = model.evaluate(&xi).unwrap();
            let a = match gain {
                Some(f) => a + b.unwrap() * f,
                None => a,
            };
            (w, a)
        })
        .collect()
}

/// `E[Aᵀ P A]` by quadrature, exact for polynomial entries of degree <= 2.
pub fn oracle_expected_quadratic(model: &SystemModel, gain: Option<&Mat>, p: &Mat) -> Mat {
    let n = model.n();
    quad_matrices(model, gain)
        .iter()
        .fold(Mat::zeros(n, n), |acc, (w, a)| acc + a.transpose() * p * a * *w)
}

/// `E[g gᵀ]` with `g = [row(A), row(B)]`, by quadrature.
pub fn oracle_g2(model: &SystemModel) -> Mat {
    let (n, m) = (model.n(), model.m());
    let d = (n + m) * n;
    let mut g2 = Mat::zeros(d, d);
    for (w, xi) in quadrature(model.dist()) {
        let (a, b) = model.evaluate(&xi).unwrap();
        let mut g: Vec<f64> = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| a[(i, j)]).collect();
        if let Some(b) = b {
            g.extend((0..n).flat_map(|i| (0..m).map(move |j| (i, j))).map(|(i, j)| b[(i, j)]));
        }
        let g = nalgebra::DVector::from_vec(g);
        g2 += &g * g.transpose() * w;
    }
    g2
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &Mat) -> f64 {
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// `sqrt(ρ(E[A ⊗ A]))` for the (optionally closed-loop) model.
pub fn oracle_lambda(model: &SystemModel, gain: Option<&Mat>) -> f64 {
    let n = model.n();
    let k = quad_matrices(model, gain)
        .iter()
        .fold(Mat::zeros(n * n, n * n), |acc, (w, a)| acc + a.kronecker(a) * *w);
    spectral_radius(&k).sqrt()
}

pub fn max_abs(m: &Mat) -> f64 {
    m.amax()
}

pub fn min_eig(m: &Mat) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}
