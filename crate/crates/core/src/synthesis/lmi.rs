//! Affine matrix inequalities `F_b(v) = C_b + sum_i v_i A_{b,i} ⪰ margin I`.

use crate::error::{Error, Result};
use crate::linalg::{min_eigenvalue, Mat};
use crate::moments::{RearrangedFactors, SecondMomentData};

/// One symmetric block of an LMI.
#[derive(Debug, Clone, PartialEq)]
pub struct LmiBlock {
    pub constant: Mat,
    pub coeffs: Vec<Mat>,
}

impl LmiBlock {
    pub fn dim(&self) -> usize {
        self.constant.nrows()
    }

    pub fn eval(&self, v: &[f64]) -> Mat {
        let mut out = self.constant.clone();
        for (c, x) in self.coeffs.iter().zip(v) {
            if *x != 0.0 {
                out += c * *x;
            }
        }
        out
    }
}

/// Layout of the decision variables of a synthesis problem: `X` upper
/// triangle row-major, then `Y` row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VariableLayout {
    pub n: usize,
    pub m: usize,
}

impl VariableLayout {
    pub fn x_count(&self) -> usize {
        self.n * (self.n + 1) / 2
    }

    pub fn count(&self) -> usize {
        self.x_count() + self.m * self.n
    }

    /// `(i, j)` with `i <= j` for each `X` variable.
    pub fn x_index(&self) -> Vec<(usize, usize)> {
        (0..self.n).flat_map(|i| (i..self.n).map(move |j| (i, j))).collect()
    }

    pub fn x(&self, v: &[f64]) -> Mat {
        let mut x = Mat::zeros(self.n, self.n);
        for (k, (i, j)) in self.x_index().into_iter().enumerate() {
            x[(i, j)] = v[k];
            x[(j, i)] = v[k];
        }
        x
    }

    pub fn y(&self, v: &[f64]) -> Mat {
        Mat::from_row_slice(self.m, self.n, &v[self.x_count()..self.count()])
    }

    pub fn pack(&self, x: &Mat, y: &Mat) -> Vec<f64> {
        let mut v: Vec<f64> = self.x_index().into_iter().map(|(i, j)| x[(i, j)]).collect();
        for r in 0..self.m {
            for c in 0..self.n {
                v.push(y[(r, c)]);
            }
        }
        v
    }

    /// `X` basis matrix of variable `k`: `e_i e_jᵀ + e_j e_iᵀ` off the
    /// diagonal, `e_i e_iᵀ` on it.
    fn x_basis(&self, i: usize, j: usize) -> Mat {
        let mut e = Mat::zeros(self.n, self.n);
        e[(i, j)] = 1.0;
        e[(j, i)] = 1.0;
        e
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmiProblem {
    pub blocks: Vec<LmiBlock>,
    pub nvars: usize,
    pub margin: f64,
    /// Optional `a·v = t` fixing the scale of homogeneous problems.
    pub normalization: Option<(Vec<f64>, f64)>,
    pub layout: Option<VariableLayout>,
    pub lambda: f64,
}

impl LmiProblem {
    pub fn eval(&self, v: &[f64]) -> Vec<Mat> {
        self.blocks.iter().map(|b| b.eval(v)).collect()
    }

    /// Smallest eigenvalue over all blocks.
    pub fn min_eigenvalue(&self, v: &[f64]) -> f64 {
        self.eval(v).iter().map(min_eigenvalue).fold(f64::INFINITY, f64::min)
    }

    pub fn block_dims(&self) -> Vec<usize> {
        self.blocks.iter().map(LmiBlock::dim).collect()
    }
}

/// Default strictness margin `1e-6 (1 + ‖G2‖)`.
pub fn default_margin(data: &SecondMomentData) -> f64 {
    1e-6 * (1.0 + data.g2().norm())
}

/// Synthesis LMI at decay rate `lambda`:
/// `[[λ² X, Zᵀ], [Z, X ⊗ I]] ⪰ margin I` and `X ⪰ margin I` with
/// `Z = Ḡ'_A X + Ḡ'_B Y`.
pub fn assemble(factors: &RearrangedFactors, lambda: f64, margin: f64) -> Result<LmiProblem> {
    let gp_b = factors.gp_b.as_ref().ok_or(Error::AnalysisOnlyModel)?;
    let (n, m) = (factors.n, factors.m);
    let layout = VariableLayout { n, m };
    let k = (n + m) * n;
    let big = n + k * n;
    let gp_a = &factors.gp_a;
    let mut lmi = Vec::with_capacity(layout.count());
    let mut xblk = Vec::with_capacity(layout.count());
    let mut norm = vec![0.0; layout.count()];
    for (idx, (i, j)) in layout.x_index().into_iter().enumerate() {
        let e = layout.x_basis(i, j);
        let z = gp_a * &e;
        let mut c = Mat::zeros(big, big);
        c.view_mut((0, 0), (n, n)).copy_from(&(&e * (lambda * lambda)));
        c.view_mut((n, 0), (k * n, n)).copy_from(&z);
        c.view_mut((0, n), (n, k * n)).copy_from(&z.transpose());
        for a in 0..n {
            for b in 0..n {
                if e[(a, b)] != 0.0 {
                    for r in 0..k {
                        c[(n + a * k + r, n + b * k + r)] = e[(a, b)];
                    }
                }
            }
        }
        lmi.push(c);
        xblk.push(e);
        if i == j {
            norm[idx] = 1.0;
        }
    }
    for r in 0..m {
        for col in 0..n {
            let mut c = Mat::zeros(big, big);
            let g = gp_b.column(r);
            c.view_mut((n, col), (k * n, 1)).copy_from(&g);
            c.view_mut((col, n), (1, k * n)).copy_from(&g.transpose());
            lmi.push(c);
            xblk.push(Mat::zeros(n, n));
        }
    }
    Ok(LmiProblem {
        blocks: vec![
            LmiBlock {
                constant: Mat::zeros(big, big),
                coeffs: lmi,
            },
            LmiBlock {
                constant: Mat::zeros(n, n),
                coeffs: xblk,
            },
        ],
        nvars: layout.count(),
        margin,
        normalization: Some((norm, n as f64)),
        layout: Some(layout),
        lambda,
    })
}

/// Analysis LMI in `P` at decay rate `lambda`:
/// `λ² P - E[Aᵀ P A] ⪰ margin I` and `P ⪰ margin I`, normalized by
/// `trace P = n`. Variables follow the `X` layout.
pub fn assemble_analysis(data: &SecondMomentData, lambda: f64, margin: f64) -> Result<LmiProblem> {
    let n = data.n();
    let layout = VariableLayout { n, m: 0 };
    let data = data.analysis_part();
    let mut lyap = Vec::new();
    let mut pblk = Vec::new();
    let mut norm = vec![0.0; layout.count()];
    for (idx, (i, j)) in layout.x_index().into_iter().enumerate() {
        let e = layout.x_basis(i, j);
        lyap.push(&e * (lambda * lambda) - data.expected_quadratic(&e)?);
        pblk.push(e);
        if i == j {
            norm[idx] = 1.0;
        }
    }
    Ok(LmiProblem {
        blocks: vec![
            LmiBlock {
                constant: Mat::zeros(n, n),
                coeffs: lyap,
            },
            LmiBlock {
                constant: Mat::zeros(n, n),
                coeffs: pblk,
            },
        ],
        nvars: layout.count(),
        margin,
        normalization: Some((norm, n as f64)),
        layout: Some(layout),
        lambda,
    })
}
