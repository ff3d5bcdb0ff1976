//! Second-moment data `E[g gᵀ]` for `g = [row(A(xi)), row(B(xi))]`, its
//! symmetric square-root factor, and the stacked rearrangements that take a
//! Lyapunov matrix outside the expectation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{DistributionSpec, SampleStream, RNG_ALGORITHM};
use crate::error::{Error, Result};
use crate::linalg::{kron_identity, pairwise_sum_vectors, row_vec, symmetrize, DenseMatrix, Mat};
use crate::sysmodel::{ModelForm, PolyEntry, SystemModel};

pub const MOMENTS_SCHEMA: &str = "stoch-lyap/second-moments/v1";

/// Samples per leaf of the Monte-Carlo reduction tree. Results depend only
/// on this constant, never on the number of worker threads.
const MC_LEAF: usize = 1024;

/// Relative eigenvalue floor (times the trace) below which a second-moment
/// matrix is rejected as not PSD.
pub const PSD_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentMethod {
    Analytic,
    MonteCarlo {
        samples: usize,
        seed: u64,
        max_entry_stderr: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MomentsRepr", into = "MomentsRepr")]
pub struct SecondMomentData {
    g2: Mat,
    mean: Mat,
    method: MomentMethod,
    n: usize,
    m: usize,
    z: usize,
    /// Free-form identifier of the model the moments were computed from.
    pub fingerprint: Option<String>,
}

impl SecondMomentData {
    pub fn new(g2: Mat, mean: Mat, method: MomentMethod, n: usize, m: usize, z: usize) -> Result<Self> {
        let d = (n + m) * n;
        if g2.shape() != (d, d) {
            return Err(Error::dims("second-moment matrix", format!("{d}x{d}"), format!("{}x{}", g2.nrows(), g2.ncols())));
        }
        if mean.shape() != (n, n + m) {
            return Err(Error::dims("mean matrix", format!("{n}x{}", n + m), format!("{}x{}", mean.nrows(), mean.ncols())));
        }
        let asym = (&g2 - g2.transpose()).amax();
        if asym > 1e-12 * (1.0 + g2.amax()) {
            return Err(Error::InvalidModel(format!("second-moment matrix is not symmetric (deviation {asym:e})")));
        }
        Ok(SecondMomentData {
            g2: symmetrize(&g2),
            mean,
            method,
            n,
            m,
            z,
            fingerprint: None,
        })
    }

    pub fn g2(&self) -> &Mat {
        &self.g2
    }

    /// `E[[A, B]]`, `n x (n + m)`.
    pub fn mean(&self) -> &Mat {
        &self.mean
    }

    pub fn method(&self) -> &MomentMethod {
        &self.method
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn z(&self) -> usize {
        self.z
    }

    /// `E[row(A)ᵀ row(A)]`, the `n² x n²` leading block.
    pub fn a_block(&self) -> Mat {
        let nn = self.n * self.n;
        self.g2.view((0, 0), (nn, nn)).into_owned()
    }

    /// Drops the input channel.
    pub fn analysis_part(&self) -> SecondMomentData {
        SecondMomentData {
            g2: self.a_block(),
            mean: self.mean.columns(0, self.n).into_owned(),
            method: self.method.clone(),
            n: self.n,
            m: 0,
            z: self.z,
            fingerprint: self.fingerprint.clone(),
        }
    }

    fn check_square(&self, p: &Mat, what: &'static str) -> Result<()> {
        if p.shape() != (self.n, self.n) {
            return Err(Error::dims(what, format!("{0}x{0}", self.n), format!("{}x{}", p.nrows(), p.ncols())));
        }
        Ok(())
    }

    /// `E[Aᵀ P A]` by direct contraction with the moment blocks:
    /// `sum_{i,k} P_ik · Block_ik(G2)`.
    pub fn expected_quadratic(&self, p: &Mat) -> Result<Mat> {
        self.check_square(p, "Lyapunov matrix")?;
        let n = self.n;
        let mut out = Mat::zeros(n, n);
        for i in 0..n {
            for k in 0..n {
                let w = p[(i, k)];
                if w == 0.0 {
                    continue;
                }
                out += self.g2.view((i * n, k * n), (n, n)) * w;
            }
        }
        Ok(symmetrize(&out))
    }

    /// `E[Aᵀ P A] = (Ā')ᵀ (P ⊗ I_{n²}) Ā'` from the stacked factor.
    pub fn expected_quadratic_factored(&self, factors: &RearrangedFactors, p: &Mat) -> Result<Mat> {
        self.check_square(p, "Lyapunov matrix")?;
        let stack = &factors.gp_a;
        let rows_per_block = stack.nrows() / self.n;
        Ok(stack.transpose() * kron_identity(p, rows_per_block) * stack)
    }

    /// `Ā_e2 (I_n ⊗ row(P)ᵀ)` with `Ā_e2 = E[A_e2]`, the `n x n³` matrix
    /// whose block `(r, c)` is `E[row(a_c a_rᵀ)]` for columns `a_c` of `A`.
    pub fn expected_quadratic_e2(&self, p: &Mat) -> Result<Mat> {
        self.check_square(p, "Lyapunov matrix")?;
        let e2 = self.e2_matrix();
        let n = self.n;
        let nn = n * n;
        let rp = row_vec(p);
        let mut right = Mat::zeros(n * nn, n);
        for c in 0..n {
            right.view_mut((c * nn, c), (nn, 1)).copy_from(&rp);
        }
        Ok(e2 * right)
    }

    /// `E[A_e2(xi)]`: entry `(r, c·n² + i·n + k) = E[A_ic A_kr]`.
    pub fn e2_matrix(&self) -> Mat {
        let n = self.n;
        let nn = n * n;
        Mat::from_fn(n, n * nn, |r, col| {
            let (c, rest) = (col / nn, col % nn);
            let (i, k) = (rest / n, rest % n);
            self.g2[(i * n + c, k * n + r)]
        })
    }

    /// Moments of the closed loop `A + B F`, obtained exactly from `G2` as
    /// `T G2 Tᵀ` with `row(A + B F) = T g`.
    pub fn closed_loop(&self, gain: &Mat) -> Result<SecondMomentData> {
        if self.m == 0 {
            return Err(Error::NoInputChannel);
        }
        let (n, m) = (self.n, self.m);
        if gain.shape() != (m, n) {
            return Err(Error::dims("feedback gain", format!("{m}x{n}"), format!("{}x{}", gain.nrows(), gain.ncols())));
        }
        let nn = n * n;
        let mut t = Mat::zeros(nn, nn + n * m);
        for i in 0..n {
            for j in 0..n {
                t[(i * n + j, i * n + j)] = 1.0;
                for r in 0..m {
                    t[(i * n + j, nn + i * m + r)] = gain[(r, j)];
                }
            }
        }
        let g2 = symmetrize(&(&t * &self.g2 * t.transpose()));
        let mean = self.mean.columns(0, n) + self.mean.columns(n, m) * gain;
        Ok(SecondMomentData {
            g2,
            mean,
            method: self.method.clone(),
            n,
            m: 0,
            z: self.z,
            fingerprint: None,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct MomentsRepr {
    schema: String,
    n: usize,
    m: usize,
    #[serde(rename = "Z")]
    z: usize,
    method: MomentMethod,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rng: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fingerprint: Option<String>,
    g2: DenseMatrix,
    mean: DenseMatrix,
}

impl TryFrom<MomentsRepr> for SecondMomentData {
    type Error = Error;

    fn try_from(r: MomentsRepr) -> Result<Self> {
        if r.schema != MOMENTS_SCHEMA {
            return Err(Error::Parse(format!("unsupported moments schema {:?}", r.schema)));
        }
        let g2 = r.g2.to_mat().ok_or_else(|| Error::Parse("g2: data length mismatch".into()))?;
        let mean = r.mean.to_mat().ok_or_else(|| Error::Parse("mean: data length mismatch".into()))?;
        let mut data = SecondMomentData::new(g2, mean, r.method, r.n, r.m, r.z)?;
        data.fingerprint = r.fingerprint;
        Ok(data)
    }
}

impl From<SecondMomentData> for MomentsRepr {
    fn from(d: SecondMomentData) -> Self {
        let rng = matches!(d.method, MomentMethod::MonteCarlo { .. }).then(|| RNG_ALGORITHM.to_string());
        MomentsRepr {
            schema: MOMENTS_SCHEMA.to_string(),
            n: d.n,
            m: d.m,
            z: d.z,
            method: d.method,
            rng,
            fingerprint: d.fingerprint,
            g2: DenseMatrix::from(&d.g2),
            mean: DenseMatrix::from(&d.mean),
        }
    }
}

// ---------------------------------------------------------------------------
// Analytic moments

fn affine_entries(a: &[Mat], z: usize) -> Vec<Vec<PolyEntry>> {
    let (r, c) = a[0].shape();
    (0..r)
        .map(|i| {
            (0..c)
                .map(|j| {
                    let mut terms = vec![(a[0][(i, j)], vec![0; z])];
                    for (k, ak) in a[1..].iter().enumerate() {
                        let mut alpha = vec![0; z];
                        alpha[k] = 1;
                        terms.push((ak[(i, j)], alpha));
                    }
                    PolyEntry::new(terms, z).expect("affine terms have distinct multi-indices")
                })
                .collect()
        })
        .collect()
}

fn flatten_rows(grid: &[Vec<PolyEntry>]) -> impl Iterator<Item = &PolyEntry> {
    grid.iter().flatten()
}

fn poly_moment(a: &PolyEntry, b: Option<&PolyEntry>, dist: &DistributionSpec) -> Result<f64> {
    let z = dist.dim();
    let mut total = 0.0;
    for (ca, alpha_a) in a.terms() {
        match b {
            None => total += ca * dist.moment(alpha_a)?,
            Some(b) => {
                for (cb, alpha_b) in b.terms() {
                    let alpha: Vec<u32> = (0..z).map(|i| alpha_a[i] + alpha_b[i]).collect();
                    total += ca * cb * dist.moment(&alpha)?;
                }
            }
        }
    }
    Ok(total)
}

/// Exact moments for affine, switched and polynomial-entry models.
pub fn second_moment_analytic(model: &SystemModel) -> Result<SecondMomentData> {
    let (n, m, z) = (model.n(), model.m(), model.z());
    let d = (n + m) * n;
    let dist = model.dist();
    let (g2, g_mean) = match model.form() {
        ModelForm::Affine { .. } | ModelForm::Poly { .. } => {
            let (a_grid, b_grid) = match model.form() {
                ModelForm::Affine { a, b } => (affine_entries(a, z), b.as_ref().map(|b| affine_entries(b, z))),
                ModelForm::Poly { a, b } => (a.clone(), b.clone()),
                _ => unreachable!(),
            };
            let entries: Vec<&PolyEntry> = flatten_rows(&a_grid)
                .chain(b_grid.iter().flat_map(|g| flatten_rows(g)))
                .collect();
            let mut g2 = Mat::zeros(d, d);
            for a in 0..d {
                for b in a..d {
                    let v = poly_moment(entries[a], Some(entries[b]), dist)?;
                    g2[(a, b)] = v;
                    g2[(b, a)] = v;
                }
            }
            let mean: Vec<f64> = entries.iter().map(|e| poly_moment(e, None, dist)).collect::<Result<_>>()?;
            (g2, mean)
        }
        ModelForm::Switched { modes, b_modes } => {
            let coord = &dist.coords()[0];
            let (values, probs) = match coord {
                crate::dist::ScalarDistribution::Discrete { values, probs } => (values, probs),
                _ => unreachable!("validated at construction"),
            };
            let mut g2 = Mat::zeros(d, d);
            let mut mean = vec![0.0; d];
            for (v, p) in values.iter().zip(probs) {
                let s = *v as usize - 1;
                let mut g = row_vec(&modes[s]).iter().copied().collect::<Vec<_>>();
                if let Some(b) = b_modes {
                    g.extend(row_vec(&b[s]).iter());
                }
                let g = crate::linalg::Vector::from_vec(g);
                g2 += &g * g.transpose() * *p;
                for (acc, x) in mean.iter_mut().zip(g.iter()) {
                    *acc += p * x;
                }
            }
            (g2, mean)
        }
        ModelForm::Sampled { .. } | ModelForm::ClosedLoop { .. } => {
            return Err(Error::UnsupportedForm {
                op: "second_moment_analytic",
                form: model.form_name(),
            })
        }
    };
    let mean = mean_matrix(&g_mean, n, m);
    SecondMomentData::new(g2, mean, MomentMethod::Analytic, n, m, z)
}

fn mean_matrix(g_mean: &[f64], n: usize, m: usize) -> Mat {
    let nn = n * n;
    Mat::from_fn(n, n + m, |i, j| if j < n { g_mean[i * n + j] } else { g_mean[nn + i * m + (j - n)] })
}

// ---------------------------------------------------------------------------
// Monte-Carlo moments

/// Monte-Carlo moment estimate together with the entrywise standard errors.
#[derive(Debug, Clone)]
pub struct MonteCarloMoments {
    pub data: SecondMomentData,
    pub stderr: Mat,
}

/// Sample `g` for draw `index` of the stream family `seed`.
fn draw(model: &SystemModel, seed: u64, index: usize, g: &mut Vec<f64>) -> Result<()> {
    let mut rng = SampleStream::substream(seed, index as u64);
    let xi = model.dist().sample(&mut rng);
    let (a, b) = model.evaluate(&xi)?;
    g.clear();
    g.extend(row_vec(&a).iter());
    if let Some(b) = b {
        g.extend(row_vec(&b).iter());
    }
    if g.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteSample { index });
    }
    Ok(())
}

pub fn second_moment_mc(model: &SystemModel, samples: usize, seed: u64) -> Result<SecondMomentData> {
    Ok(second_moment_mc_with_stderr(model, samples, seed)?.data)
}

/// `G2 = (1/N) sum g gᵀ` over `N` seeded draws, one ChaCha stream per draw.
pub fn second_moment_mc_with_stderr(model: &SystemModel, samples: usize, seed: u64) -> Result<MonteCarloMoments> {
    if samples < 1000 {
        return Err(Error::InvalidModel(format!("Monte-Carlo moments need at least 1000 samples, got {samples}")));
    }
    let (n, m, z) = (model.n(), model.m(), model.z());
    let d = (n + m) * n;
    // leaf accumulator layout: [sum g gᵀ (d²) | sum (g gᵀ)² (d²) | sum g (d)]
    let width = 2 * d * d + d;
    let leaves = samples.div_ceil(MC_LEAF);
    let parts: Vec<Vec<f64>> = (0..leaves)
        .into_par_iter()
        .map(|leaf| {
            let mut acc = vec![0.0; width];
            let mut g = Vec::with_capacity(d);
            let start = leaf * MC_LEAF;
            for index in start..(start + MC_LEAF).min(samples) {
                draw(model, seed, index, &mut g)?;
                for a in 0..d {
                    for b in a..d {
                        let prod = g[a] * g[b];
                        acc[a * d + b] += prod;
                        acc[d * d + a * d + b] += prod * prod;
                    }
                    acc[2 * d * d + a] += g[a];
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let total = pairwise_sum_vectors(&parts);
    let nf = samples as f64;
    let mut g2 = Mat::zeros(d, d);
    let mut stderr = Mat::zeros(d, d);
    for a in 0..d {
        for b in a..d {
            let mean = total[a * d + b] / nf;
            let second = total[d * d + a * d + b] / nf;
            let var = ((second - mean * mean) * nf / (nf - 1.0)).max(0.0);
            let se = (var / nf).sqrt();
            g2[(a, b)] = mean;
            g2[(b, a)] = mean;
            stderr[(a, b)] = se;
            stderr[(b, a)] = se;
        }
    }
    let g_mean: Vec<f64> = (0..d).map(|a| total[2 * d * d + a] / nf).collect();
    let method = MomentMethod::MonteCarlo {
        samples,
        seed,
        max_entry_stderr: stderr.amax(),
    };
    let data = SecondMomentData::new(g2, mean_matrix(&g_mean, n, m), method, n, m, z)?;
    Ok(MonteCarloMoments { data, stderr })
}

// ---------------------------------------------------------------------------
// Factorization

/// Symmetric square-root factor and its stacked column blocks.
#[derive(Debug, Clone)]
pub struct RearrangedFactors {
    /// `Ḡ` with `ḠᵀḠ = G2`.
    pub gbar: Mat,
    /// `[Ḡ_A1; ...; Ḡ_An]`, `((n+m) n²) x n`.
    pub gp_a: Mat,
    /// `[Ḡ_B1; ...; Ḡ_Bn]`, `((n+m) n²) x m`; absent for analysis data.
    pub gp_b: Option<Mat>,
    pub n: usize,
    pub m: usize,
    /// Eigenvalues in `[-tol, 0)` that were clamped to zero.
    pub clamped_eigenvalues: usize,
}

pub fn factorize(data: &SecondMomentData) -> Result<RearrangedFactors> {
    let (n, m) = (data.n, data.m);
    let eig = nalgebra::SymmetricEigen::new(data.g2.clone());
    let tol = PSD_TOL * data.g2.trace().abs().max(f64::MIN_POSITIVE);
    let mut clamped = 0;
    let mut roots = eig.eigenvalues.clone();
    for l in roots.iter_mut() {
        if *l < -tol {
            return Err(Error::NotPsd { min_eig: *l, tol });
        }
        if *l < 0.0 {
            clamped += 1;
            *l = 0.0;
        }
        *l = l.sqrt();
    }
    if clamped > 0 {
        log::debug!("factorize: clamped {clamped} slightly negative eigenvalue(s) to zero");
    }
    let v = &eig.eigenvectors;
    let gbar = symmetrize(&(v * Mat::from_diagonal(&roots) * v.transpose()));
    let rows = gbar.nrows();
    let nn = n * n;
    let mut gp_a = Mat::zeros(rows * n, n);
    for i in 0..n {
        gp_a.view_mut((i * rows, 0), (rows, n)).copy_from(&gbar.columns(i * n, n));
    }
    let gp_b = (m > 0).then(|| {
        let mut gp_b = Mat::zeros(rows * n, m);
        for i in 0..n {
            gp_b.view_mut((i * rows, 0), (rows, m)).copy_from(&gbar.columns(nn + i * m, m));
        }
        gp_b
    });
    Ok(RearrangedFactors {
        gbar,
        gp_a,
        gp_b,
        n,
        m,
        clamped_eigenvalues: clamped,
    })
}
