//! Projection feasibility solver: Dykstra alternating projections between
//! the cone `{F ⪰ floor I}` (per block) and the affine image of the
//! variables.

use nalgebra::{Cholesky, SymmetricEigen};

use super::lmi::LmiProblem;
use super::{Feasibility, FeasibilityBackend};
use crate::error::{Error, Result};
use crate::linalg::{frob_dot, max_eigenvalue, Mat, Vector};

/// The cone floor starts deep inside the cone, where the intersection (if
/// any) has interior and the iteration converges quickly, and is lowered
/// tenfold on each stall down to `floor_factor * margin`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionBackend {
    /// Total projection steps over all floor stages.
    pub max_iterations: usize,
    /// Window and required gap reduction at the final floor.
    pub stall_window: usize,
    pub stall_ratio: f64,
    /// Window and required gap reduction at the intermediate floors.
    pub stage_window: usize,
    pub stage_ratio: f64,
    /// Final cone floor as a multiple of the problem margin.
    pub floor_factor: f64,
}

impl Default for ProjectionBackend {
    fn default() -> Self {
        ProjectionBackend {
            max_iterations: 50_000,
            stall_window: 1_000,
            stall_ratio: 1.0 - 1e-3,
            stage_window: 200,
            stage_ratio: 0.99,
            floor_factor: 4.0,
        }
    }
}

/// Least-squares map from target blocks to variables, with the optional
/// normalization as an equality constraint.
struct AffineProjector {
    hpinv: Mat,
    constraint: Option<(Vector, Vector, f64, f64)>,
}

impl AffineProjector {
    fn new(problem: &LmiProblem) -> Result<Self> {
        let nv = problem.nvars;
        let mut h = Mat::zeros(nv, nv);
        for b in &problem.blocks {
            for i in 0..nv {
                for j in i..nv {
                    let d = frob_dot(&b.coeffs[i], &b.coeffs[j]);
                    h[(i, j)] += d;
                    if i != j {
                        h[(j, i)] += d;
                    }
                }
            }
        }
        let eig = SymmetricEigen::new(h);
        let top = eig.eigenvalues.amax();
        let cut = 1e-12 * top;
        let inv = eig.eigenvalues.map(|l| if l > cut { 1.0 / l } else { 0.0 });
        let v = &eig.eigenvectors;
        let hpinv = v * Mat::from_diagonal(&inv) * v.transpose();
        let constraint = match &problem.normalization {
            Some((a, t)) => {
                let a = Vector::from_column_slice(a);
                let ha = &hpinv * &a;
                let s = a.dot(&ha);
                if !(s > 0.0) {
                    return Err(Error::BackendFailure("normalization acts on variables absent from the LMI".into()));
                }
                Some((a, ha, s, *t))
            }
            None => None,
        };
        Ok(AffineProjector { hpinv, constraint })
    }

    fn project(&self, problem: &LmiProblem, targets: &[Mat]) -> Vec<f64> {
        let nv = problem.nvars;
        let mut r = Vector::zeros(nv);
        for (b, t) in problem.blocks.iter().zip(targets) {
            let d = t - &b.constant;
            for i in 0..nv {
                r[i] += frob_dot(&b.coeffs[i], &d);
            }
        }
        let mut v = &self.hpinv * r;
        if let Some((a, ha, s, t)) = &self.constraint {
            v -= ha * ((a.dot(&v) - t) / s);
        }
        v.iter().copied().collect()
    }
}

fn project_cone(m: &Mat, floor: f64) -> Mat {
    let eig = SymmetricEigen::new(m.clone());
    if eig.eigenvalues.min() >= floor {
        return m.clone();
    }
    let d = eig.eigenvalues.map(|l| l.max(floor));
    let v = &eig.eigenvectors;
    let out = v * Mat::from_diagonal(&d) * v.transpose();
    (&out + out.transpose()) * 0.5
}

/// `F ⪰ level I` tested by Cholesky.
fn above(m: &Mat, level: f64) -> bool {
    let shifted = m - Mat::identity(m.nrows(), m.ncols()) * level;
    Cholesky::new(shifted).is_some()
}

fn gap(a: &[Mat], b: &[Mat]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_squared()).sum::<f64>().sqrt()
}

fn initial_point(problem: &LmiProblem) -> Vec<f64> {
    match &problem.normalization {
        // diagonal variables of a normalized problem start at the identity
        Some((a, t)) => {
            let k = a.iter().filter(|x| **x != 0.0).count().max(1) as f64;
            a.iter().map(|x| if *x != 0.0 { t / (k * x) } else { 0.0 }).collect()
        }
        None => vec![0.0; problem.nvars],
    }
}

impl FeasibilityBackend for ProjectionBackend {
    fn name(&self) -> String {
        "projection/dykstra".into()
    }

    fn solve(&self, problem: &LmiProblem) -> Result<Feasibility> {
        let accept = problem.margin;
        let base = self.floor_factor * problem.margin;
        let proj = AffineProjector::new(problem)?;
        let mut v = initial_point(problem);
        let mut x = problem.eval(&v);
        let scale = x.iter().map(max_eigenvalue).fold(f64::INFINITY, f64::min);
        let mut floors = Vec::new();
        let mut f = 0.1 * scale;
        while f > base {
            floors.push(f);
            f /= 10.0;
        }
        floors.push(base);
        let mut it = 0;
        for (stage, &floor) in floors.iter().enumerate() {
            let last = stage + 1 == floors.len();
            let (window, ratio) = if last {
                (self.stall_window, self.stall_ratio)
            } else {
                (self.stage_window, self.stage_ratio)
            };
            let mut corr: Vec<Mat> = x.iter().map(|b| Mat::zeros(b.nrows(), b.ncols())).collect();
            let mut checkpoint = None;
            let mut local = 0;
            loop {
                if x.iter().all(|b| above(b, accept)) {
                    return Ok(Feasibility::Feasible { vars: v, iterations: it });
                }
                if it == self.max_iterations {
                    return Ok(Feasibility::Infeasible {
                        iterations: it,
                        reason: "iteration cap reached".into(),
                    });
                }
                let z: Vec<Mat> = x.iter().zip(&corr).map(|(a, p)| a + p).collect();
                let y: Vec<Mat> = z.iter().map(|b| project_cone(b, floor)).collect();
                corr = z.iter().zip(&y).map(|(a, b)| a - b).collect();
                v = proj.project(problem, &y);
                x = problem.eval(&v);
                if !v.iter().all(|t| t.is_finite()) {
                    return Err(Error::BackendFailure("non-finite iterate".into()));
                }
                it += 1;
                local += 1;
                if local % window == 0 {
                    let g = gap(&x, &y);
                    if checkpoint.is_some_and(|prev: f64| g > ratio * prev) {
                        if last {
                            return Ok(Feasibility::Infeasible {
                                iterations: it,
                                reason: format!("projection gap stalled at {g:e}"),
                            });
                        }
                        log::trace!("floor {floor:e}: stalled at gap {g:e} after {local} steps");
                        break;
                    }
                    checkpoint = Some(g);
                }
            }
        }
        unreachable!("the final floor stage returns")
    }
}
