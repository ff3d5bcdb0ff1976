//! Mean-square stability analysis: the moment operator `P -> E[Aᵀ P A]`,
//! its spectral radius (the squared minimal decay rate), and Lyapunov
//! certificates for the inequality `λ² P - E[Aᵀ P A] ⪰ 0`.

use nalgebra::Cholesky;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{frob_dot, min_eigenvalue, row_vec, serde_rows_opt, spectral_radius, sym_eigenvalues, symmetrize, unrow_vec, Mat};
use crate::moments::SecondMomentData;
use crate::sysmodel::{ModelForm, SystemModel};
use crate::dist::ScalarDistribution;

/// Power-iteration cap before falling back to a dense eigensolve.
pub const MAX_POWER_ITERATIONS: usize = 10_000;

/// Smallest ratio `min eig / max eig` of an iterate for which the
/// Collatz-Wielandt bounds are trusted.
const BOUND_CONDITION_FLOOR: f64 = 1e-6;

/// Matrix of `P -> E[Aᵀ P A]` acting on `row(P)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentOperator {
    matrix: Mat,
    n: usize,
}

impl MomentOperator {
    pub fn matrix(&self) -> &Mat {
        &self.matrix
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn apply(&self, p: &Mat) -> Mat {
        symmetrize(&unrow_vec(&(&self.matrix * row_vec(p)), self.n, self.n))
    }

    /// Operator of `P -> sum_s w_s M_sᵀ P M_s`, i.e. `sum_s w_s (M_sᵀ ⊗ M_sᵀ)`.
    pub fn from_terms(terms: &[(f64, Mat)], n: usize) -> Result<Self> {
        let mut matrix = Mat::zeros(n * n, n * n);
        for (w, m) in terms {
            if m.shape() != (n, n) {
                return Err(Error::dims("operator term", format!("{n}x{n}"), format!("{}x{}", m.nrows(), m.ncols())));
            }
            let mt = m.transpose();
            matrix += mt.kronecker(&mt) * *w;
        }
        Ok(MomentOperator { matrix, n })
    }
}

/// `M[j n + l, i n + k] = E[A_ij A_kl]`, a pure index permutation of the
/// leading `n² x n²` block of `G2`.
pub fn build_operator(data: &SecondMomentData) -> MomentOperator {
    let n = data.n();
    let g2 = data.g2();
    let nn = n * n;
    let mut matrix = Mat::zeros(nn, nn);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    matrix[(j * n + l, i * n + k)] = g2[(i * n + j, k * n + l)];
                }
            }
        }
    }
    MomentOperator { matrix, n }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpectralMethod {
    PowerIteration,
    DenseEigen,
}

/// Minimal decay rate `λ_min = sqrt(ρ(M))` with the bracket the iteration
/// established on `ρ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayRate {
    pub lambda: f64,
    pub rho: f64,
    pub rho_lower: f64,
    pub rho_upper: f64,
    pub method: SpectralMethod,
    pub iterations: usize,
}

fn check_tol(tol: f64) -> Result<()> {
    if !(tol > 0.0 && tol <= 1e-2) {
        return Err(Error::InvalidArgument(format!("tolerance must lie in (0, 1e-2], got {tol}")));
    }
    Ok(())
}

/// Collatz-Wielandt bracket: for `P ≻ 0`, `α P ⪯ T(P) ⪯ β P` implies
/// `α ≤ ρ(T) ≤ β` because `T` preserves the PSD cone.
fn cw_bounds(p: &Mat, q: &Mat) -> Option<(f64, f64)> {
    let ev = sym_eigenvalues(p);
    let (lo, hi) = (ev[0], *ev.last()?);
    if !(lo > BOUND_CONDITION_FLOOR * hi) {
        return None;
    }
    let chol = Cholesky::new(p.clone())?;
    let l = chol.l();
    let linv = l.clone().try_inverse()?;
    let c = &linv * q * linv.transpose();
    let ev = sym_eigenvalues(&c);
    Some((ev[0].max(0.0), *ev.last()?))
}

/// `sqrt(ρ(M))` to relative tolerance `tol`, by power iteration on the
/// Lyapunov-matrix space starting from `P = I`.
pub fn minimal_lambda(op: &MomentOperator, tol: f64) -> Result<DecayRate> {
    check_tol(tol)?;
    let n = op.n;
    // relative accuracy on rho that yields `tol` on sqrt(rho)
    let rho_tol = 2.0 * tol;
    let mut p = Mat::identity(n, n) / (n as f64).sqrt();
    let mut lower = 0.0_f64;
    let mut upper = f64::INFINITY;
    for it in 1..=MAX_POWER_ITERATIONS {
        let q = op.apply(&p);
        let qn = q.norm();
        if qn == 0.0 {
            // T^it(I) = 0 forces T = 0 on the PSD cone, hence rho = 0
            return Ok(DecayRate {
                lambda: 0.0,
                rho: 0.0,
                rho_lower: 0.0,
                rho_upper: 0.0,
                method: SpectralMethod::PowerIteration,
                iterations: it,
            });
        }
        if let Some((lo, hi)) = cw_bounds(&p, &q) {
            lower = lower.max(lo);
            upper = upper.min(hi);
        }
        let done = |rho: f64| DecayRate {
            lambda: rho.sqrt(),
            rho,
            rho_lower: lower.min(rho),
            rho_upper: upper.max(rho),
            method: SpectralMethod::PowerIteration,
            iterations: it,
        };
        if upper.is_finite() && upper - lower <= rho_tol * upper {
            return Ok(done(0.5 * (lower + upper)));
        }
        let rayleigh = frob_dot(&p, &q);
        let residual = (&q - &p * rayleigh).norm();
        if rayleigh > 0.0 && residual <= 0.1 * rho_tol * rayleigh {
            return Ok(done(rayleigh.clamp(lower, upper)));
        }
        p = q / qn;
    }
    // dominant eigenvalue not isolated (e.g. a peripheral complex pair)
    let rho = spectral_radius(&op.matrix);
    if !rho.is_finite() {
        return Err(Error::ConvergenceFailure {
            estimate: f64::NAN,
            lower,
            upper,
        });
    }
    log::debug!("minimal_lambda: power iteration stalled, dense eigensolve gave rho = {rho}");
    Ok(DecayRate {
        lambda: rho.sqrt(),
        rho,
        rho_lower: rho,
        rho_upper: rho,
        method: SpectralMethod::DenseEigen,
        iterations: MAX_POWER_ITERATIONS,
    })
}

/// Solves `λ² P - E[Aᵀ P A] = I` and checks that `P ≻ 0`.
pub fn lyapunov_certificate(op: &MomentOperator, data: &SecondMomentData, lambda: f64) -> Result<Mat> {
    let n = op.n;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InfeasibleLambda {
            lambda,
            reason: "lambda must be positive".into(),
        });
    }
    let nn = n * n;
    let system = Mat::identity(nn, nn) * (lambda * lambda) - &op.matrix;
    let rhs = row_vec(&Mat::identity(n, n));
    let sol = system.lu().solve(&rhs).ok_or_else(|| Error::InfeasibleLambda {
        lambda,
        reason: "lambda² is an eigenvalue of the moment operator".into(),
    })?;
    let p = symmetrize(&unrow_vec(&sol, n, n));
    let p_min = min_eigenvalue(&p);
    if !(p_min > 0.0) {
        return Err(Error::InfeasibleLambda {
            lambda,
            reason: format!("solution is not positive definite (min eigenvalue {p_min:e})"),
        });
    }
    let residual = min_eigenvalue(&(&p * (lambda * lambda) - data.expected_quadratic(&p)?));
    if residual < 0.99 {
        return Err(Error::InfeasibleLambda {
            lambda,
            reason: format!("residual min eigenvalue {residual} below 0.99"),
        });
    }
    Ok(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticCheck {
    pub feasible: bool,
    /// Minimum eigenvalue of `λ² P - E[Aᵀ P A]`.
    pub margin: f64,
}

pub fn check_quadratic(data: &SecondMomentData, p: &Mat, lambda: f64) -> Result<QuadraticCheck> {
    let p = symmetrize(p);
    let margin = min_eigenvalue(&(&p * (lambda * lambda) - data.expected_quadratic(&p)?));
    Ok(QuadraticCheck {
        feasible: margin >= -1e-9 * p.norm(),
        margin,
    })
}

/// Weighted terms `(w_s, M_s)` with `E[Aᵀ P A] = sum_s w_s M_sᵀ P M_s` for
/// multiplicative-noise (zero-mean affine) and i.i.d.-switched models.
pub fn special_case_lmi(model: &SystemModel) -> Result<Vec<(f64, Mat)>> {
    match model.form() {
        ModelForm::Affine { a, .. } => {
            let coords = model.dist().coords();
            if coords.iter().any(|c| c.mean() != 0.0) {
                return Err(Error::UnsupportedForm {
                    op: "special_case_lmi",
                    form: "affine with nonzero-mean noise",
                });
            }
            let mut terms = vec![(1.0, a[0].clone())];
            terms.extend(coords.iter().zip(&a[1..]).map(|(c, ai)| (c.variance(), ai.clone())));
            Ok(terms)
        }
        ModelForm::Switched { modes, .. } => match &model.dist().coords()[0] {
            ScalarDistribution::Discrete { values, probs } => Ok(values
                .iter()
                .zip(probs)
                .map(|(v, p)| (*p, modes[*v as usize - 1].clone()))
                .collect()),
            _ => unreachable!("validated at construction"),
        },
        _ => Err(Error::UnsupportedForm {
            op: "special_case_lmi",
            form: model.form_name(),
        }),
    }
}

/// Outcome of a stability analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub stable: bool,
    pub lambda_min: f64,
    pub rho: f64,
    pub rho_bounds: [f64; 2],
    /// Decay rate at which the certificate `p` was computed.
    pub certificate_lambda: Option<f64>,
    #[serde(with = "serde_rows_opt", default)]
    pub p: Option<Mat>,
    pub p_min_eigenvalue: Option<f64>,
    /// Minimum eigenvalue of `λ² P - E[Aᵀ P A]` at `certificate_lambda`.
    pub residual: Option<f64>,
    pub method: String,
    pub iterations: usize,
    pub tol: f64,
    /// Reason the certificate was not produced, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Rate slightly above `λ_min` at which a certificate is requested.
pub fn certificate_lambda(rate: &DecayRate, tol: f64) -> f64 {
    let rel = tol.max(1e-6);
    let lam = (rate.rho * (1.0 + 20.0 * rel)).sqrt().max(rel.sqrt());
    if lam >= 1.0 && rate.lambda < 1.0 {
        0.5 * (rate.lambda + 1.0)
    } else {
        lam
    }
}

fn method_name(m: SpectralMethod) -> &'static str {
    match m {
        SpectralMethod::PowerIteration => "spectral/power-iteration",
        SpectralMethod::DenseEigen => "spectral/dense-eigen",
    }
}

fn report(data: &SecondMomentData, op: &MomentOperator, rate: DecayRate, lambda: f64, tol: f64) -> Result<StabilityReport> {
    let mut out = StabilityReport {
        stable: false,
        lambda_min: rate.lambda,
        rho: rate.rho,
        rho_bounds: [rate.rho_lower, rate.rho_upper],
        certificate_lambda: None,
        p: None,
        p_min_eigenvalue: None,
        residual: None,
        method: method_name(rate.method).to_string(),
        iterations: rate.iterations,
        tol,
        note: None,
    };
    if lambda >= 1.0 {
        out.note = Some(format!("no certificate below 1 (lambda_min = {})", rate.lambda));
        return Ok(out);
    }
    match lyapunov_certificate(op, data, lambda) {
        Ok(p) => {
            let check = check_quadratic(data, &p, lambda)?;
            out.stable = check.feasible;
            out.certificate_lambda = Some(lambda);
            out.p_min_eigenvalue = Some(min_eigenvalue(&p));
            out.residual = Some(check.margin);
            out.p = Some(p);
        }
        Err(Error::InfeasibleLambda { reason, .. }) => out.note = Some(reason),
        Err(e) => return Err(e),
    }
    Ok(out)
}

/// Full analysis: `λ_min`, then a certificate just above it.
pub fn analyze(data: &SecondMomentData, tol: f64) -> Result<StabilityReport> {
    let data = data.analysis_part();
    let op = build_operator(&data);
    let rate = minimal_lambda(&op, tol)?;
    let lambda = certificate_lambda(&rate, tol);
    report(&data, &op, rate, lambda, tol)
}

/// Analysis with the certificate requested at a caller-chosen `lambda`.
pub fn analyze_at(data: &SecondMomentData, tol: f64, lambda: f64) -> Result<StabilityReport> {
    let data = data.analysis_part();
    let op = build_operator(&data);
    let rate = minimal_lambda(&op, tol)?;
    report(&data, &op, rate, lambda, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::DistributionSpec;
    use crate::linalg::max_abs_diff;
    use crate::moments::{second_moment_analytic, MomentMethod};

    fn scalar(v: f64) -> Mat {
        Mat::from_element(1, 1, v)
    }

    fn deterministic(a: &Mat) -> SecondMomentData {
        let r = row_vec(a);
        SecondMomentData::new(&r * r.transpose(), a.clone(), MomentMethod::Analytic, a.nrows(), 0, 1).unwrap()
    }

    fn scalar_data(g: f64) -> SecondMomentData {
        SecondMomentData::new(scalar(g), scalar(0.0), MomentMethod::Analytic, 1, 0, 1).unwrap()
    }

    #[test]
    fn scalar_operator_layout() {
        assert_eq!(build_operator(&scalar_data(0.25)).matrix(), &scalar(0.25));
    }

    #[test]
    fn deterministic_operator_applies_congruence() {
        let a = Mat::from_row_slice(3, 3, &[0.2, -1.0, 0.4, 0.3, 0.5, -0.7, 1.1, 0.0, 0.6]);
        let op = build_operator(&deterministic(&a));
        let p = Mat::from_row_slice(3, 3, &[2.0, 0.3, -0.1, 0.3, 1.0, 0.5, -0.1, 0.5, 3.0]);
        assert!(max_abs_diff(&op.apply(&p), &(a.transpose() * &p * &a)) < 1e-13);
    }

    #[test]
    fn minimal_lambda_closed_forms() {
        let gauss = scalar_data(0.25);
        assert!((minimal_lambda(&build_operator(&gauss), 1e-8).unwrap().lambda - 0.5).abs() < 1e-8);
        let diag = deterministic(&Mat::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.8]));
        assert!((minimal_lambda(&build_operator(&diag), 1e-10).unwrap().lambda - 0.8).abs() < 1e-10);
        let switched = scalar_data(2.0);
        assert!((minimal_lambda(&build_operator(&switched), 1e-8).unwrap().lambda - 2f64.sqrt()).abs() < 1e-8);
    }

    #[test]
    fn zero_system() {
        let d = deterministic(&Mat::zeros(2, 2));
        let op = build_operator(&d);
        assert_eq!(minimal_lambda(&op, 1e-6).unwrap().lambda, 0.0);
        let p = lyapunov_certificate(&op, &d, 0.5).unwrap();
        assert!(max_abs_diff(&p, &(Mat::identity(2, 2) / 0.25)) < 1e-15);
        let r = analyze(&d, 1e-6).unwrap();
        assert!(r.stable);
        assert_eq!(r.lambda_min, 0.0);
    }

    #[test]
    fn rotation_falls_back_to_dense_eigensolver() {
        let t: f64 = 0.7;
        let a = Mat::from_row_slice(2, 2, &[t.cos(), -t.sin(), t.sin(), t.cos()]) * 0.9;
        let a = &a * Mat::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        let rate = minimal_lambda(&build_operator(&deterministic(&a)), 1e-12).unwrap();
        assert!((rate.lambda - spectral_radius(&a)).abs() < 1e-10);
    }

    #[test]
    fn tolerance_precondition() {
        let op = build_operator(&scalar_data(0.25));
        assert!(minimal_lambda(&op, 0.0).is_err());
        assert!(minimal_lambda(&op, 0.1).is_err());
    }

    #[test]
    fn scalar_certificate() {
        let d = scalar_data(0.25);
        let p = lyapunov_certificate(&build_operator(&d), &d, 0.6).unwrap();
        assert!((p[(0, 0)] - 1.0 / (0.36 - 0.25)).abs() < 1e-12);
        assert!(lyapunov_certificate(&build_operator(&d), &d, 0.4).is_err());
    }

    #[test]
    fn certificate_against_truncated_series() {
        // rho(A) = 0.8, lambda = 0.9: P = sum_k lambda^(-2k-2) (Aᵀ)^k A^k
        let a = Mat::from_row_slice(2, 2, &[0.8, 0.3, 0.0, -0.5]);
        let lambda: f64 = 0.9;
        let d = deterministic(&a);
        let p = lyapunov_certificate(&build_operator(&d), &d, lambda).unwrap();
        let mut series = Mat::zeros(2, 2);
        let mut ak = Mat::identity(2, 2);
        for k in 0..200 {
            series += ak.transpose() * &ak * lambda.powi(-2 * k - 2);
            ak = &a * ak;
        }
        assert!(max_abs_diff(&p, &series) < 1e-8 * series.amax());
    }

    #[test]
    fn check_quadratic_cases() {
        let d = deterministic(&Mat::zeros(2, 2));
        let c = check_quadratic(&d, &Mat::identity(2, 2), 0.7).unwrap();
        assert!(c.feasible);
        assert!((c.margin - 0.49).abs() < 1e-15);

        let d = deterministic(&Mat::from_row_slice(2, 2, &[0.5, 1.0, 0.0, 0.6]));
        let op = build_operator(&d);
        let p = lyapunov_certificate(&op, &d, 0.7).unwrap();
        let c = check_quadratic(&d, &p, 0.7).unwrap();
        assert!(c.feasible && (c.margin - 1.0).abs() < 1e-9);
    }

    #[test]
    fn special_cases_reproduce_general_operator() {
        let a = Mat::from_row_slice(2, 2, &[0.9, 0.1, -0.2, 0.4]);
        let dist = DistributionSpec::new(vec![ScalarDistribution::Discrete {
            values: vec![1.0, 2.0],
            probs: vec![0.5, 0.5],
        }])
        .unwrap();
        let sw = SystemModel::switched(vec![a.clone(), a.clone()], None, dist).unwrap();
        let terms = special_case_lmi(&sw).unwrap();
        let special = MomentOperator::from_terms(&terms, 2).unwrap();
        let general = build_operator(&second_moment_analytic(&sw).unwrap());
        let det = build_operator(&deterministic(&a));
        assert!(max_abs_diff(special.matrix(), det.matrix()) < 1e-15);
        assert!(max_abs_diff(general.matrix(), det.matrix()) < 1e-15);

        let a1 = Mat::from_row_slice(2, 2, &[0.0, 0.3, 0.2, -0.1]);
        let dist = DistributionSpec::new(vec![ScalarDistribution::Normal { mean: 0.0, stddev: 0.5 }]).unwrap();
        let mn = SystemModel::affine(vec![a.clone(), a1.clone()], None, dist).unwrap();
        let expected = det.matrix() + build_operator(&deterministic(&a1)).matrix() * 0.25;
        let special = MomentOperator::from_terms(&special_case_lmi(&mn).unwrap(), 2).unwrap();
        assert!(max_abs_diff(special.matrix(), &expected) < 1e-15);
        assert!(matches!(
            special_case_lmi(&crate::examples::three_state_model()),
            Err(Error::UnsupportedForm { .. })
        ));
    }
}
