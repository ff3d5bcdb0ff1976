//! State-feedback synthesis: the LMI in `(X, Y)` with `F = Y X⁻¹`,
//! bisection on the decay rate, and closed-loop verification.

pub mod barrier;
pub mod lmi;
pub mod projection;
pub mod sdpa;

use serde::{Deserialize, Serialize};

use crate::analysis::{self, StabilityReport};
use crate::error::{Error, Result};
use crate::linalg::{min_eigenvalue, serde_rows, Mat};
use crate::moments::{factorize, SecondMomentData};

pub use lmi::{assemble, assemble_analysis, default_margin, LmiBlock, LmiProblem, VariableLayout};
pub use barrier::BarrierBackend;
pub use projection::ProjectionBackend;

/// Default feasibility solver.
pub type ReferenceBackend = BarrierBackend;
pub use sdpa::{read_solution, read_solution_file, to_sdpa_string, write_sdpa, ExternalSolver, SdpaExportBackend};

/// Relative tolerance of the closed-loop analysis in `verify_gain`.
const VERIFY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub enum Feasibility {
    Feasible { vars: Vec<f64>, iterations: usize },
    Infeasible { iterations: usize, reason: String },
}

pub trait FeasibilityBackend {
    fn name(&self) -> String;
    fn solve(&self, problem: &LmiProblem) -> Result<Feasibility>;
}

/// Runs `backend` and enforces the contract on feasible answers.
pub fn solve_feasibility(problem: &LmiProblem, backend: &dyn FeasibilityBackend) -> Result<Feasibility> {
    let out = backend.solve(problem)?;
    if let Feasibility::Feasible { vars, .. } = &out {
        if vars.len() != problem.nvars {
            return Err(Error::BackendFailure(format!("{} returned {} variables, expected {}", backend.name(), vars.len(), problem.nvars)));
        }
        let e = problem.min_eigenvalue(vars);
        if !(e >= 0.5 * problem.margin) {
            return Err(Error::BackendFailure(format!("{} returned a point with min eigenvalue {e:e} below margin/2", backend.name())));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BisectionStep {
    pub lambda: f64,
    pub feasible: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthesisOptions {
    pub lambda_tol: f64,
    /// Strictness margin; `None` selects `default_margin`.
    pub margin: Option<f64>,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        SynthesisOptions {
            lambda_tol: 1e-3,
            margin: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisResult {
    /// Smallest decay rate at which the LMI was found feasible.
    pub lambda: f64,
    /// Largest rate found infeasible (0 if none).
    pub lambda_lower: f64,
    #[serde(with = "serde_rows")]
    pub gain: Mat,
    #[serde(with = "serde_rows")]
    pub x: Mat,
    #[serde(with = "serde_rows")]
    pub y: Mat,
    pub margin: f64,
    pub lambda_tol: f64,
    pub backend: String,
    pub steps: Vec<BisectionStep>,
    pub solver_iterations: usize,
    pub closed_loop_report: StabilityReport,
}

fn check_lambda_tol(tol: f64) -> Result<()> {
    if !(1e-4..=1e-2).contains(&tol) {
        return Err(Error::InvalidArgument(format!("lambda tolerance must lie in [1e-4, 1e-2], got {tol}")));
    }
    Ok(())
}

/// Closed-loop analysis of `A + B F` from moments derived algebraically.
pub fn verify_gain(data: &SecondMomentData, gain: &Mat) -> Result<StabilityReport> {
    analysis::analyze(&data.closed_loop(gain)?, VERIFY_TOL)
}

/// Bisection on `λ ∈ (0, 1 - tol]` for the smallest rate at which the
/// synthesis LMI is feasible, followed by closed-loop verification.
pub fn synthesize_min_lambda(data: &SecondMomentData, opts: &SynthesisOptions, backend: &dyn FeasibilityBackend) -> Result<SynthesisResult> {
    let tol = opts.lambda_tol;
    check_lambda_tol(tol)?;
    if data.m() == 0 {
        return Err(Error::AnalysisOnlyModel);
    }
    let factors = factorize(data)?;
    let margin = opts.margin.unwrap_or_else(|| default_margin(data));
    let mut steps = Vec::new();
    let mut solver_iterations = 0;
    let mut query = |lambda: f64, steps: &mut Vec<BisectionStep>| -> Result<Option<Vec<f64>>> {
        let problem = assemble(&factors, lambda, margin)?;
        let out = solve_feasibility(&problem, backend)?;
        let (feasible, iterations, vars) = match out {
            Feasibility::Feasible { vars, iterations } => (true, iterations, Some(vars)),
            Feasibility::Infeasible { iterations, reason } => {
                log::debug!("lambda = {lambda}: infeasible ({reason})");
                (false, iterations, None)
            }
        };
        solver_iterations += iterations;
        steps.push(BisectionStep {
            lambda,
            feasible,
            iterations,
        });
        Ok(vars)
    };

    let mut hi = 1.0 - tol;
    let Some(mut best) = query(hi, &mut steps)? else {
        // diagnostic only: rates above 1 do not certify stability
        let mut diagnostic_lambda = None;
        for lam in [1.0, 2.0] {
            if query(lam, &mut steps)?.is_some() {
                diagnostic_lambda = Some(lam);
                break;
            }
        }
        return Err(Error::NotStabilizable { diagnostic_lambda });
    };
    let mut lo = 0.0;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        match query(mid, &mut steps)? {
            Some(vars) => {
                hi = mid;
                best = vars;
            }
            None => lo = mid,
        }
    }

    let layout = VariableLayout { n: data.n(), m: data.m() };
    let x = layout.x(&best);
    let y = layout.y(&best);
    if !(min_eigenvalue(&x) > 0.0) {
        return Err(Error::BackendFailure("returned X is not positive definite".into()));
    }
    let gain = x
        .clone()
        .cholesky()
        .map(|c| c.solve(&y.transpose()).transpose())
        .ok_or_else(|| Error::BackendFailure("returned X is not positive definite".into()))?;
    let report = verify_gain(data, &gain)?;
    if report.lambda_min > hi + 5.0 * tol {
        return Err(Error::VerificationMismatch {
            achieved: hi,
            closed_loop: report.lambda_min,
        });
    }
    Ok(SynthesisResult {
        lambda: hi,
        lambda_lower: lo,
        gain,
        x,
        y,
        margin,
        lambda_tol: tol,
        backend: backend.name(),
        steps,
        solver_iterations,
        closed_loop_report: report,
    })
}

/// Decay rate from bisection on the analysis LMI in `P`; a cross-check of
/// the spectral `λ_min`.
pub fn lmi_bisection_lambda(data: &SecondMomentData, tol: f64, backend: &dyn FeasibilityBackend) -> Result<f64> {
    let margin = default_margin(data);
    let feasible = |lambda: f64| -> Result<bool> {
        let problem = assemble_analysis(data, lambda, margin)?;
        Ok(matches!(solve_feasibility(&problem, backend)?, Feasibility::Feasible { .. }))
    };
    let mut hi = 1.0;
    let mut doublings = 0;
    while !feasible(hi)? {
        hi *= 2.0;
        doublings += 1;
        if doublings > 10 {
            return Err(Error::ConvergenceFailure {
                estimate: f64::NAN,
                lower: hi,
                upper: f64::INFINITY,
            });
        }
    }
    let mut lo = if doublings == 0 { 0.0 } else { hi / 2.0 };
    while hi - lo > tol * hi {
        let mid = 0.5 * (lo + hi);
        if feasible(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{DistributionSpec, ScalarDistribution};
    use crate::linalg::{max_abs_diff, row_vec};
    use crate::moments::{second_moment_analytic, MomentMethod};
    use crate::sysmodel::SystemModel;

    fn deterministic(a: &Mat, b: &Mat) -> SecondMomentData {
        let mut g = row_vec(a).as_slice().to_vec();
        g.extend_from_slice(row_vec(b).as_slice());
        let g = crate::linalg::Vector::from_vec(g);
        let mut mean = Mat::zeros(a.nrows(), a.ncols() + b.ncols());
        mean.view_mut((0, 0), a.shape()).copy_from(a);
        mean.view_mut((0, a.ncols()), b.shape()).copy_from(b);
        SecondMomentData::new(&g * g.transpose(), mean, MomentMethod::Analytic, a.nrows(), b.ncols(), 1).unwrap()
    }

    fn scalar(v: f64) -> Mat {
        Mat::from_element(1, 1, v)
    }

    #[test]
    fn zero_variables_give_zero_matrix() {
        let d = deterministic(&Mat::from_row_slice(2, 2, &[0.3, 1.0, -0.2, 0.9]), &Mat::from_row_slice(2, 1, &[0.0, 1.0]));
        let p = assemble(&factorize(&d).unwrap(), 0.8, 1e-6).unwrap();
        assert_eq!(p.block_dims(), vec![2 + 6 * 2, 2]);
        for m in p.eval(&vec![0.0; p.nvars]) {
            assert_eq!(m.amax(), 0.0);
        }
    }

    #[test]
    fn scalar_hand_assembly() {
        let d = deterministic(&scalar(0.6), &scalar(0.5));
        let f = factorize(&d).unwrap();
        let p = assemble(&f, 1.0, 1e-6).unwrap();
        assert_eq!(p.block_dims(), vec![3, 1]);
        let m = &p.eval(&[1.0, 0.0])[0];
        let ga = &f.gp_a;
        let expected = Mat::from_row_slice(3, 3, &[1.0, ga[(0, 0)], ga[(1, 0)], ga[(0, 0)], 1.0, 0.0, ga[(1, 0)], 0.0, 1.0]);
        assert!(max_abs_diff(m, &expected) < 1e-15);
    }

    #[test]
    fn schur_complement_matches_check_quadratic() {
        let a = Mat::from_row_slice(2, 2, &[0.5, 0.4, -0.3, 0.6]);
        let d = deterministic(&a, &Mat::from_row_slice(2, 1, &[1.0, 0.0]));
        let p = assemble(&factorize(&d).unwrap(), 1.0, 0.0).unwrap();
        let layout = p.layout.unwrap();
        let v = layout.pack(&Mat::identity(2, 2), &Mat::zeros(1, 2));
        let lmi_pd = p.min_eigenvalue(&v) > 0.0;
        let check = analysis::check_quadratic(&d, &Mat::identity(2, 2), 1.0).unwrap();
        assert_eq!(lmi_pd, check.margin > 0.0);
    }

    #[test]
    fn scalar_feasibility_region() {
        let d = deterministic(&scalar(0.5), &scalar(1.0));
        let problem = assemble(&factorize(&d).unwrap(), 0.99, 1e-6).unwrap();
        match solve_feasibility(&problem, &ReferenceBackend::default()).unwrap() {
            Feasibility::Feasible { vars, .. } => {
                let f = vars[1] / vars[0];
                assert!((0.5 + f).abs() < 0.99);
            }
            other => panic!("expected feasible, got {other:?}"),
        }
    }

    #[test]
    fn uncontrollable_unstable_is_infeasible() {
        let d = deterministic(&scalar(2.0), &scalar(0.0));
        let problem = assemble(&factorize(&d).unwrap(), 0.999, 1e-6).unwrap();
        assert!(matches!(
            solve_feasibility(&problem, &ReferenceBackend::default()).unwrap(),
            Feasibility::Infeasible { .. }
        ));
        let err = synthesize_min_lambda(&d, &SynthesisOptions::default(), &ReferenceBackend::default()).unwrap_err();
        assert!(matches!(err, Error::NotStabilizable { diagnostic_lambda: None }));
        let d = deterministic(&scalar(1.5), &scalar(0.0));
        let err = synthesize_min_lambda(&d, &SynthesisOptions::default(), &ReferenceBackend::default()).unwrap_err();
        assert!(matches!(err, Error::NotStabilizable { diagnostic_lambda: Some(l) } if l == 2.0));
    }

    #[test]
    fn analysis_data_is_rejected() {
        let d = deterministic(&scalar(0.5), &scalar(1.0)).analysis_part();
        assert!(matches!(assemble(&factorize(&d).unwrap(), 0.9, 1e-6), Err(Error::AnalysisOnlyModel)));
    }

    #[test]
    fn scalar_multiplicative_noise() {
        let dist = DistributionSpec::new(vec![ScalarDistribution::Normal { mean: 0.0, stddev: 0.5 }]).unwrap();
        let model = SystemModel::affine(vec![scalar(0.0), scalar(1.0)], Some(vec![scalar(1.0), scalar(0.0)]), dist).unwrap();
        let d = second_moment_analytic(&model).unwrap();
        let r = synthesize_min_lambda(&d, &SynthesisOptions::default(), &ReferenceBackend::default()).unwrap();
        assert!((r.lambda - 0.5).abs() < 5e-3, "lambda = {}", r.lambda);
        assert!(r.gain[(0, 0)].abs() < 0.1, "gain = {}", r.gain);
        assert!(r.closed_loop_report.lambda_min <= r.lambda + 5e-3);
    }

    #[test]
    fn deadbeat_pair() {
        let d = deterministic(&Mat::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]), &Mat::from_row_slice(2, 1, &[0.0, 1.0]));
        let r = synthesize_min_lambda(&d, &SynthesisOptions::default(), &ReferenceBackend::default()).unwrap();
        assert!(r.lambda <= 0.1, "lambda = {}", r.lambda);
    }

    #[test]
    fn zero_gain_verification_is_open_loop_analysis() {
        let d = deterministic(&Mat::from_row_slice(2, 2, &[0.5, 0.4, -0.3, 0.6]), &Mat::from_row_slice(2, 1, &[1.0, 2.0]));
        let closed = verify_gain(&d, &Mat::zeros(1, 2)).unwrap();
        let open = analysis::analyze(&d, VERIFY_TOL).unwrap();
        assert_eq!(closed.lambda_min, open.lambda_min);
        assert!(verify_gain(&d, &Mat::zeros(2, 2)).is_err());
    }

    #[test]
    fn analysis_lmi_bisection_matches_spectral() {
        let a = Mat::from_row_slice(2, 2, &[0.5, 0.4, -0.3, 0.6]);
        let d = deterministic(&a, &Mat::zeros(2, 1));
        let lam = lmi_bisection_lambda(&d, 1e-3, &ReferenceBackend::default()).unwrap();
        let rho = crate::linalg::spectral_radius(&a);
        assert!(lam >= rho - 1e-3 && lam <= rho + 5e-3, "{lam} vs {rho}");
    }

    #[test]
    fn projection_backend_agrees_on_scalar_cases() {
        let backend = ProjectionBackend::default();
        let d = deterministic(&scalar(0.5), &scalar(1.0));
        let problem = assemble(&factorize(&d).unwrap(), 0.99, 1e-6).unwrap();
        match solve_feasibility(&problem, &backend).unwrap() {
            Feasibility::Feasible { vars, .. } => assert!((0.5 + vars[1] / vars[0]).abs() < 0.99),
            other => panic!("expected feasible, got {other:?}"),
        }
        let d = deterministic(&scalar(2.0), &scalar(0.0));
        let problem = assemble(&factorize(&d).unwrap(), 0.999, 1e-6).unwrap();
        assert!(matches!(solve_feasibility(&problem, &backend).unwrap(), Feasibility::Infeasible { .. }));
    }

    #[test]
    fn returned_point_scaled_by_two_stays_feasible() {
        let a = Mat::from_row_slice(2, 2, &[1.1, 0.4, -0.3, 0.6]);
        let d = deterministic(&a, &Mat::from_row_slice(2, 1, &[0.0, 1.0]));
        let problem = assemble(&factorize(&d).unwrap(), 0.9, 1e-6).unwrap();
        let Feasibility::Feasible { vars, .. } = solve_feasibility(&problem, &ReferenceBackend::default()).unwrap() else {
            panic!("expected feasible");
        };
        let doubled: Vec<f64> = vars.iter().map(|x| 2.0 * x).collect();
        assert!(problem.min_eigenvalue(&doubled) >= problem.margin);
        let layout = problem.layout.unwrap();
        let (x, y) = (layout.x(&vars), layout.y(&vars));
        let gain = &y * x.clone().try_inverse().unwrap();
        let p = x.try_inverse().unwrap();
        assert!(analysis::check_quadratic(&d.closed_loop(&gain).unwrap(), &p, 0.9).unwrap().feasible);
    }

    #[test]
    fn sdpa_text_layout() {
        let d = deterministic(&scalar(0.6), &scalar(0.5));
        let problem = assemble(&factorize(&d).unwrap(), 0.9, 1e-6).unwrap();
        let text = to_sdpa_string(&problem);
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with('"'));
        assert_eq!(lines[1], "2 = mDIM");
        assert_eq!(lines[2], "2 = nBLOCK");
        assert_eq!(lines[3], "3 1");
        assert_eq!(lines[4], "0 0");
        assert_eq!(lines[5], "0 1 1 1 1e-6");
        for l in &lines[5..] {
            let f: Vec<&str> = l.split(' ').collect();
            assert_eq!(f.len(), 5);
            let (i, j): (usize, usize) = (f[2].parse().unwrap(), f[3].parse().unwrap());
            assert!(i <= j);
            let v: f64 = f[4].parse().unwrap();
            let (matno, blk): (usize, usize) = (f[0].parse().unwrap(), f[1].parse().unwrap());
            let expected = if matno == 0 {
                if i == j { 1e-6 } else { 0.0 }
            } else {
                problem.blocks[blk - 1].coeffs[matno - 1][(i - 1, j - 1)]
            };
            assert_eq!(v, expected);
        }
    }

    #[test]
    fn solution_import_formats() {
        assert_eq!(read_solution("1.5 -2e-3 7\n1 1 1 1 2.0\n", 3).unwrap(), vec![1.5, -2e-3, 7.0]);
        let sdpa = "phase.value = pdOPT\nobjValPrimal = 0\nxVec = \n{1.0e+00,-2.5e-01}\nxMat = \n";
        assert_eq!(read_solution(sdpa, 2).unwrap(), vec![1.0, -0.25]);
        assert!(read_solution("1 2", 3).is_err());
        assert!(read_solution("xVec = {1, abc}", 2).is_err());
    }

    #[test]
    fn export_backend_without_solver_is_a_backend_failure() {
        let dir = tempdir();
        let path = dir.join("p.dat-s");
        let d = deterministic(&scalar(0.6), &scalar(0.5));
        let problem = assemble(&factorize(&d).unwrap(), 0.9, 1e-6).unwrap();
        let err = solve_feasibility(&problem, &SdpaExportBackend::new(&path, None)).unwrap_err();
        assert!(matches!(err, Error::BackendFailure(_)));
        assert_eq!(std::fs::read_to_string(&path).unwrap(), to_sdpa_string(&problem));
        std::fs::remove_dir_all(dir).unwrap();
    }

    fn tempdir() -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("stoch-lyap-sdpa-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }
}
