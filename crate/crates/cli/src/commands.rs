//! Subcommand implementations.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde_json::{json, Value};
use stoch_lyap::analysis::{self, StabilityReport};
use stoch_lyap::dist::RNG_ALGORITHM;
use stoch_lyap::linalg::Vector;
use stoch_lyap::moments::{factorize, second_moment_analytic, second_moment_mc};
use stoch_lyap::sampled::intersample_ensemble;
use stoch_lyap::simulate::{decay_rate, rms_csv_string, run_ensemble, EnsembleConfig};
use stoch_lyap::synthesis::{
    self, assemble, default_margin, lmi_bisection_lambda, to_sdpa_string, ExternalSolver, FeasibilityBackend, ProjectionBackend,
    ReferenceBackend, SdpaExportBackend, SynthesisOptions,
};
use stoch_lyap::sysmodel::{ModelForm, SystemModel};
use stoch_lyap::{examples, Error};

use crate::io::{self, envelope, emit, load_gain, load_model, load_plant, parse_vector, write_atomic, MomentSpec};
use crate::{CliError, MomentArgs};

fn model_config(path: &Path, model: &SystemModel, spec: MomentSpec, margs: &MomentArgs) -> Value {
    json!({
        "model_path": path.display().to_string(),
        "model": model,
        "moments": spec.label(),
        "moments_cache": margs.moments_cache.as_ref().map(|p| p.display().to_string()),
        "rng": RNG_ALGORITHM,
    })
}

fn merge(mut base: Value, extra: Value) -> Value {
    if let (Some(b), Some(e)) = (base.as_object_mut(), extra.as_object()) {
        for (k, v) in e {
            b.insert(k.clone(), v.clone());
        }
    }
    base
}

fn unstable(report: &StabilityReport) -> CliError {
    CliError::Negative(format!("not mean-square stable: lambda_min = {}", report.lambda_min))
}

pub fn analyze(
    path: &Path,
    tol: f64,
    margs: &MomentArgs,
    lambda: Option<f64>,
    lmi_cross_check: bool,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let model = load_model(path)?;
    let spec = MomentSpec::resolve(margs.moments.as_deref(), &model)?;
    let data = io::moments(&model, spec, margs.moments_cache.as_deref())?;
    let report = match lambda {
        Some(l) => analysis::analyze_at(&data, tol, l)?,
        None => analysis::analyze(&data, tol)?,
    };
    let mut result = serde_json::to_value(&report)?;
    if lmi_cross_check {
        let lam = lmi_bisection_lambda(&data, tol.max(1e-4), &ReferenceBackend::default())?;
        result["lmi_bisection_lambda"] = json!(lam);
    }
    let config = merge(model_config(path, &model, spec, margs), json!({ "tol": tol, "lambda": lambda, "lmi_cross_check": lmi_cross_check }));
    emit(&envelope("analyze", config, result)?, out)?;
    if report.stable {
        Ok(())
    } else {
        Err(unstable(&report))
    }
}

enum BackendChoice {
    Barrier,
    Projection,
    Export(std::path::PathBuf),
}

fn parse_backend(s: &str) -> Result<BackendChoice, CliError> {
    match s {
        "ref" | "barrier" => Ok(BackendChoice::Barrier),
        "projection" => Ok(BackendChoice::Projection),
        _ => match s.strip_prefix("sdpa-export:") {
            Some(p) if !p.is_empty() => Ok(BackendChoice::Export(p.into())),
            _ => Err(CliError::Usage(format!("backend must be ref, projection or sdpa-export:<path>, got {s:?}"))),
        },
    }
}

pub fn synthesize(path: &Path, tol: f64, backend: &str, margin: Option<f64>, margs: &MomentArgs, out: Option<&Path>) -> Result<(), CliError> {
    let model = load_model(path)?;
    if model.m() == 0 {
        return Err(Error::AnalysisOnlyModel.into());
    }
    let spec = MomentSpec::resolve(margs.moments.as_deref(), &model)?;
    let choice = parse_backend(backend)?;
    let data = io::moments(&model, spec, margs.moments_cache.as_deref())?;
    let opts = SynthesisOptions { lambda_tol: tol, margin };
    let external = ExternalSolver::detect();
    let result = match &choice {
        BackendChoice::Barrier => synthesis::synthesize_min_lambda(&data, &opts, &ReferenceBackend::default())?,
        BackendChoice::Projection => synthesis::synthesize_min_lambda(&data, &opts, &ProjectionBackend::default())?,
        BackendChoice::Export(p) => match &external {
            Some(solver) => {
                let scratch = p.with_extension("work.dat-s");
                let b = SdpaExportBackend::new(scratch, Some(solver.clone()));
                synthesis::synthesize_min_lambda(&data, &opts, &b)?
            }
            None => {
                log::warn!("no external SDP solver on PATH; deciding feasibility with the reference solver");
                synthesis::synthesize_min_lambda(&data, &opts, &ReferenceBackend::default())?
            }
        },
    };
    let mut value = serde_json::to_value(&result)?;
    if let BackendChoice::Export(p) = &choice {
        let margin = margin.unwrap_or_else(|| default_margin(&data));
        let problem = assemble(&factorize(&data)?, result.lambda, margin)?;
        write_atomic(p, to_sdpa_string(&problem).as_bytes())?;
        value["sdpa_export"] = json!(p.display().to_string());
        value["external_solver"] = json!(external.as_ref().map(|s| s.program.display().to_string()));
    }
    let config = merge(
        model_config(path, &model, spec, margs),
        json!({ "tol": tol, "backend": backend, "margin": result.margin }),
    );
    emit(&envelope("synthesize", config, value)?, out)
}

#[allow(clippy::too_many_arguments)]
pub fn simulate(
    path: &Path,
    x0: &str,
    paths: usize,
    kmax: usize,
    seed: u64,
    gain: Option<&Path>,
    window: &str,
    serial: bool,
    out: &Path,
) -> Result<(), CliError> {
    let model = load_model(path)?;
    let x0 = parse_vector(x0)?;
    let f = gain.map(load_gain).transpose()?;
    let w = parse_vector(window)?;
    if w.len() != 2 || w.iter().any(|v| v.fract() != 0.0 || *v < 0.0) {
        return Err(CliError::Usage(format!("window must be k1,k2, got {window:?}")));
    }
    let (k1, k2) = (w[0] as usize, w[1] as usize);
    let mut cfg = EnsembleConfig::new(kmax, paths, seed);
    cfg.parallel = !serial;
    let started = Instant::now();
    let r = run_ensemble(&model, f.as_ref(), &x0, &cfg)?;
    write_atomic(out, rms_csv_string(&r.rms).as_bytes())?;
    let rate = if k2 <= kmax { decay_rate(&r, k1, k2).ok() } else { None };
    let config = json!({
        "model_path": path.display().to_string(),
        "model": model,
        "x0": x0,
        "paths": paths,
        "kmax": kmax,
        "seed": seed,
        "rng": RNG_ALGORITHM,
        "gain": f.as_ref().map(io::rows),
        "window": [k1, k2],
        "serial": serial,
        "out": out.display().to_string(),
    });
    let result = json!({
        "decay_rate": rate,
        "rms_final": r.rms[kmax],
        "overflowed_paths": r.overflowed_paths,
        "seconds": started.elapsed().as_secs_f64(),
    });
    emit(&envelope("simulate", config, result)?, None)
}

pub fn discretize(path: &Path, h: f64) -> Result<(), CliError> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(CliError::Usage(format!("h must be positive, got {h}")));
    }
    let plant = load_plant(path)?;
    let (a, b) = plant.discretize(h);
    let config = json!({ "plant_path": path.display().to_string(), "plant": plant, "h": h });
    emit(&envelope("discretize", config, json!({ "a_op": io::rows(&a), "b_op": io::rows(&b) }))?, None)
}

pub fn export_sdpa(path: &Path, lambda: f64, margin: Option<f64>, margs: &MomentArgs, out: &Path) -> Result<(), CliError> {
    let model = load_model(path)?;
    let spec = MomentSpec::resolve(margs.moments.as_deref(), &model)?;
    let data = io::moments(&model, spec, margs.moments_cache.as_deref())?;
    let margin = margin.unwrap_or_else(|| default_margin(&data));
    let problem = assemble(&factorize(&data)?, lambda, margin)?;
    write_atomic(out, to_sdpa_string(&problem).as_bytes())?;
    let config = merge(model_config(path, &model, spec, margs), json!({ "lambda": lambda, "margin": margin, "out": out.display().to_string() }));
    let result = json!({ "variables": problem.nvars, "blocks": problem.block_dims() });
    emit(&envelope("export-sdpa", config, result)?, None)
}

fn gnuplot_script(csv: &str, title: &str) -> String {
    format!(
        "set datafile separator ','\nset logscale y\nset xlabel 'k'\nset ylabel 'sqrt(E|x_k|^2)'\nset title '{title}'\nplot '{csv}' using 1:2 skip 1 with lines notitle\n"
    )
}

pub fn repro_example1(tol: f64, paths: usize, seed: u64, out_dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::Io(format!("{}: {e}", out_dir.display())))?;
    let started = Instant::now();
    let model = examples::three_state_model();
    let data = second_moment_analytic(&model)?;
    let report = analysis::analyze(&data, tol)?;
    let analysis_seconds = started.elapsed().as_secs_f64();
    let x0 = [1.0, 0.0, 0.0];
    let cfg = EnsembleConfig::new(100, paths, seed);
    let ens = run_ensemble(&model, None, &x0, &cfg)?;
    let lambda_est = decay_rate(&ens, 50, 100)?;
    let csv = out_dir.join("example1_rms.csv");
    write_atomic(&csv, rms_csv_string(&ens.rms).as_bytes())?;
    write_atomic(&out_dir.join("example1_rms.gp"), gnuplot_script("example1_rms.csv", "three-state example").as_bytes())?;
    write_atomic(&out_dir.join("example1_model.json"), serde_json::to_string_pretty(&model)?.as_bytes())?;
    let config = json!({
        "model": model,
        "moments": "analytic",
        "tol": tol,
        "paths": paths,
        "kmax": 100,
        "seed": seed,
        "rng": RNG_ALGORITHM,
        "x0": x0,
        "window": [50, 100],
    });
    let result = json!({
        "lambda_min": report.lambda_min,
        "lambda_est": lambda_est,
        "reported": { "lambda_min": examples::THREE_STATE_LAMBDA, "lambda_est": examples::THREE_STATE_EMPIRICAL_RATE },
        "analysis_seconds": analysis_seconds,
        "total_seconds": started.elapsed().as_secs_f64(),
        "rms_csv": csv.display().to_string(),
        "report": report,
    });
    let report_value = envelope("repro-example1", config, result)?;
    emit(&report_value, Some(&out_dir.join("example1_report.json")))
}

#[allow(clippy::too_many_arguments)]
pub fn repro_example2(samples: usize, seed: u64, tol: f64, paths: usize, t_end: f64, dt: f64, out_dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::Io(format!("{}: {e}", out_dir.display())))?;
    let started = Instant::now();
    let model = examples::sampled_data_model();
    let ModelForm::Sampled { plant, interval } = model.form().clone() else {
        unreachable!("the example is a sampled-data model")
    };
    let data = second_moment_mc(&model, samples, seed)?;
    let backend = ReferenceBackend::default();
    let syn = synthesis::synthesize_min_lambda(&data, &SynthesisOptions { lambda_tol: tol, margin: None }, &backend)?;
    let reported_gain = examples::reported_gain();
    let reported_check = synthesis::verify_gain(&data, &reported_gain)?;

    let x0 = Vector::from_column_slice(&[1.0, 1.0, 1.0]);
    let ensemble = intersample_ensemble(&plant, &interval, model.dist(), &syn.gain, &x0, paths, seed, t_end, dt)?;
    let ratios: Vec<f64> = ensemble
        .iter()
        .map(|p| p.state_at(&plant, &syn.gain, t_end).norm() / x0.norm())
        .collect();
    let worst = ratios.iter().cloned().fold(0.0, f64::max);
    // every 10th plot point keeps the file small
    let mut csv = String::from("path,t,x1,x2,x3,u\n");
    for (p, path) in ensemble.iter().enumerate() {
        let tr = &path.trajectory;
        for j in (0..tr.times.len()).step_by(10) {
            let x = &tr.states[j];
            writeln!(csv, "{p},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}", tr.times[j], x[0], x[1], x[2], tr.inputs[j][0]).unwrap();
        }
    }
    let csv_path = out_dir.join("example2_intersample.csv");
    write_atomic(&csv_path, csv.as_bytes())?;
    let config = json!({
        "model": model,
        "moments": format!("mc:{samples}:{seed}"),
        "rng": RNG_ALGORITHM,
        "lambda_tol": tol,
        "backend": backend.name(),
        "paths": paths,
        "t_end": t_end,
        "dt_plot": dt,
        "x0": x0.as_slice(),
        "seed": seed,
    });
    let result = json!({
        "lambda": syn.lambda,
        "gain": io::rows(&syn.gain),
        "closed_loop_lambda": syn.closed_loop_report.lambda_min,
        "reported": { "lambda": examples::SAMPLED_DATA_LAMBDA, "gain": io::rows(&reported_gain) },
        "reported_gain_closed_loop_lambda": reported_check.lambda_min,
        "intersample_worst_ratio": worst,
        "intersample_csv": csv_path.display().to_string(),
        "total_seconds": started.elapsed().as_secs_f64(),
        "synthesis": syn,
    });
    emit(&envelope("repro-example2", config, result)?, Some(&out_dir.join("example2_report.json")))
}
