//! Reference feasibility solver: log-det barrier path following on
//! `max t  s.t.  F_b(v) - t I ≻ 0`, with the normalization as an equality.
//!
//! Feasible as soon as an iterate reaches `t >= margin`. Infeasible once
//! the central-path bound `t* <= t + (sum of block dims) / τ` falls below
//! the margin.

use nalgebra::Cholesky;

use super::lmi::LmiProblem;
use super::{Feasibility, FeasibilityBackend};
use crate::error::{Error, Result};
use crate::linalg::{min_eigenvalue, Mat, Vector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierBackend {
    /// Newton steps over all centering rounds.
    pub max_newton_steps: usize,
    /// Barrier weight growth per round.
    pub growth: f64,
    /// Centering stops when half the squared Newton decrement is below this.
    pub centering_tol: f64,
}

impl Default for BarrierBackend {
    fn default() -> Self {
        BarrierBackend {
            max_newton_steps: 2_000,
            growth: 8.0,
            centering_tol: 1e-8,
        }
    }
}

struct Point {
    v: Vec<f64>,
    t: f64,
    /// Cholesky factors of `F_b(v) - t I`.
    chol: Vec<Cholesky<f64, nalgebra::Dyn>>,
    logdet: f64,
}

fn point(problem: &LmiProblem, v: Vec<f64>, t: f64) -> Option<Point> {
    let mut chol = Vec::with_capacity(problem.blocks.len());
    let mut logdet = 0.0;
    for f in problem.eval(&v) {
        let d = f.nrows();
        let c = Cholesky::new(f - Mat::identity(d, d) * t)?;
        logdet += 2.0 * c.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>();
        chol.push(c);
    }
    Some(Point { v, t, chol, logdet })
}

/// `τ (-t) - log det` at `p`.
fn objective(p: &Point, tau: f64) -> f64 {
    -tau * p.t - p.logdet
}

/// Gradient and Hessian in `(v, t)` of the barrier objective.
fn derivatives(problem: &LmiProblem, p: &Point, tau: f64) -> (Vector, Mat) {
    let nv = problem.nvars;
    let nw = nv + 1;
    let mut g = Vector::zeros(nw);
    let mut h = Mat::zeros(nw, nw);
    g[nv] = -tau;
    for (blk, c) in problem.blocks.iter().zip(&p.chol) {
        let r = c.inverse();
        // R A_k, with A_t = -I
        let mut ra: Vec<Mat> = blk.coeffs.iter().map(|a| &r * a).collect();
        ra.push(-&r);
        for k in 0..nw {
            g[k] -= ra[k].trace();
            for l in k..nw {
                let s = ra[k].component_mul(&ra[l].transpose()).sum();
                h[(k, l)] += s;
                if k != l {
                    h[(l, k)] += s;
                }
            }
        }
    }
    (g, h)
}

fn newton_step(h: &Mat, g: &Vector, a: Option<&Vector>) -> Option<Vector> {
    let nw = g.len();
    let reg = 1e-14 * h.trace().abs().max(f64::MIN_POSITIVE);
    match a {
        None => {
            let hh = h + Mat::identity(nw, nw) * reg;
            Some(Cholesky::new(hh)?.solve(&(-g)))
        }
        Some(a) => {
            let mut kkt = Mat::zeros(nw + 1, nw + 1);
            kkt.view_mut((0, 0), (nw, nw)).copy_from(&(h + Mat::identity(nw, nw) * reg));
            kkt.view_mut((nw, 0), (1, nw)).copy_from(&a.transpose());
            kkt.view_mut((0, nw), (nw, 1)).copy_from(a);
            let mut rhs = Vector::zeros(nw + 1);
            rhs.rows_mut(0, nw).copy_from(&(-g));
            let sol = kkt.lu().solve(&rhs)?;
            Some(sol.rows(0, nw).into_owned())
        }
    }
}

fn initial_v(problem: &LmiProblem) -> Vec<f64> {
    match &problem.normalization {
        Some((a, t)) => {
            let k = a.iter().filter(|x| **x != 0.0).count().max(1) as f64;
            a.iter().map(|x| if *x != 0.0 { t / (k * x) } else { 0.0 }).collect()
        }
        None => vec![0.0; problem.nvars],
    }
}

impl FeasibilityBackend for BarrierBackend {
    fn name(&self) -> String {
        "reference/barrier".into()
    }

    fn solve(&self, problem: &LmiProblem) -> Result<Feasibility> {
        let nv = problem.nvars;
        let margin = problem.margin;
        let total_dim: f64 = problem.block_dims().iter().sum::<usize>() as f64;
        let v0 = initial_v(problem);
        let t0 = problem.eval(&v0).iter().map(min_eigenvalue).fold(f64::INFINITY, f64::min);
        let scale = problem.eval(&v0).iter().map(|m| m.amax()).fold(0.0, f64::max).max(1.0);
        let mut p = point(problem, v0, t0 - scale).ok_or_else(|| Error::BackendFailure("no strictly feasible start".into()))?;
        let a = problem.normalization.as_ref().map(|(a, _)| {
            let mut w = Vector::zeros(nv + 1);
            w.rows_mut(0, nv).copy_from(&Vector::from_column_slice(a));
            w
        });
        let mut tau = total_dim / scale;
        let mut steps = 0;
        loop {
            // centering at weight tau
            loop {
                if p.t >= margin {
                    return Ok(Feasibility::Feasible { vars: p.v, iterations: steps });
                }
                if steps == self.max_newton_steps {
                    return Err(Error::BackendFailure(format!("barrier method: {steps} Newton steps without a verdict (t = {:e})", p.t)));
                }
                steps += 1;
                let (g, h) = derivatives(problem, &p, tau);
                let dw = newton_step(&h, &g, a.as_ref()).ok_or_else(|| Error::BackendFailure("singular Newton system".into()))?;
                let decrement = -g.dot(&dw);
                if !(decrement.is_finite()) {
                    return Err(Error::BackendFailure("non-finite Newton step".into()));
                }
                if 0.5 * decrement <= self.centering_tol {
                    break;
                }
                let f0 = objective(&p, tau);
                let mut s = 1.0;
                let next = loop {
                    let v: Vec<f64> = p.v.iter().zip(dw.iter()).map(|(x, d)| x + s * d).collect();
                    let t = p.t + s * dw[nv];
                    if let Some(q) = point(problem, v, t) {
                        if objective(&q, tau) <= f0 - 0.25 * s * decrement {
                            break Some(q);
                        }
                    }
                    s *= 0.5;
                    if s < 1e-12 {
                        break None;
                    }
                };
                match next {
                    Some(q) => p = q,
                    // no descent left at this weight: treat as centered
                    None => break,
                }
            }
            if p.t + total_dim / tau < margin {
                return Ok(Feasibility::Infeasible {
                    iterations: steps,
                    reason: format!("max t <= {:e} < margin", p.t + total_dim / tau),
                });
            }
            tau *= self.growth;
        }
    }
}
