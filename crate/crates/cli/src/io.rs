//! File ingestion, atomic output and the report envelope.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use stoch_lyap::linalg::{from_rows, Mat};
use stoch_lyap::moments::{second_moment_analytic, second_moment_mc, SecondMomentData, MOMENTS_SCHEMA};
use stoch_lyap::sampled::ContinuousPlant;
use stoch_lyap::sysmodel::SystemModel;

use crate::CliError;

pub const REPORT_SCHEMA: &str = "stoch-lyap/report/v1";
pub const TOOL: &str = concat!("stoch-lyap ", env!("CARGO_PKG_VERSION"));

pub fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn load_model(path: &Path) -> Result<SystemModel, CliError> {
    serde_json::from_str(&read_text(path)?).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// A plant file, or a sampled-data model whose plant is used.
pub fn load_plant(path: &Path) -> Result<ContinuousPlant, CliError> {
    let text = read_text(path)?;
    if let Ok(p) = serde_json::from_str::<ContinuousPlant>(&text) {
        return Ok(p);
    }
    let model: SystemModel = serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    match model.form() {
        stoch_lyap::sysmodel::ModelForm::Sampled { plant, .. } => Ok(plant.clone()),
        _ => Err(CliError::Input(format!("{}: neither a plant nor a sampled-data model", path.display()))),
    }
}

/// Nested rows, `{"gain": rows}`, or a synthesize report.
pub fn load_gain(path: &Path) -> Result<Mat, CliError> {
    let v: Value = serde_json::from_str(&read_text(path)?).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let rows = v
        .pointer("/result/gain")
        .or_else(|| v.get("gain"))
        .unwrap_or(&v);
    let rows: Vec<Vec<f64>> = serde_json::from_value(rows.clone()).map_err(|e| CliError::Input(format!("{}: gain: {e}", path.display())))?;
    from_rows(&rows).ok_or_else(|| CliError::Input(format!("{}: ragged gain matrix", path.display())))
}

pub fn parse_vector(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| CliError::Usage(format!("bad number {t:?}: {e}"))))
        .collect()
}

/// `analytic`, `mc:N` or `mc:N:seed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentSpec {
    Analytic,
    MonteCarlo { samples: usize, seed: u64 },
}

impl MomentSpec {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || CliError::Usage(format!("moment method must be analytic, mc:N or mc:N:seed, got {s:?}"));
        match parts.as_slice() {
            ["analytic"] => Ok(MomentSpec::Analytic),
            ["mc", n] => Ok(MomentSpec::MonteCarlo {
                samples: n.parse().map_err(|_| bad())?,
                seed: 0,
            }),
            ["mc", n, seed] => Ok(MomentSpec::MonteCarlo {
                samples: n.parse().map_err(|_| bad())?,
                seed: seed.parse().map_err(|_| bad())?,
            }),
            _ => Err(bad()),
        }
    }

    /// Explicit choice, or analytic unless the model is sampled-data.
    pub fn resolve(spec: Option<&str>, model: &SystemModel) -> Result<Self, CliError> {
        let sampled = matches!(model.form(), stoch_lyap::sysmodel::ModelForm::Sampled { .. });
        match spec {
            Some(s) => {
                let m = Self::parse(s)?;
                if sampled && m == MomentSpec::Analytic {
                    return Err(CliError::Usage("analytic moments are not available for sampled-data models; use mc:N:seed".into()));
                }
                Ok(m)
            }
            None if sampled => Ok(MomentSpec::MonteCarlo { samples: 1_000_000, seed: 0 }),
            None => Ok(MomentSpec::Analytic),
        }
    }

    pub fn label(&self) -> String {
        match self {
            MomentSpec::Analytic => "analytic".into(),
            MomentSpec::MonteCarlo { samples, seed } => format!("mc:{samples}:{seed}"),
        }
    }
}

pub fn fingerprint(model: &SystemModel, spec: MomentSpec) -> String {
    let mut h = Sha256::new();
    h.update(MOMENTS_SCHEMA.as_bytes());
    h.update(b"\n");
    h.update(serde_json::to_string(model).expect("models serialize").as_bytes());
    h.update(b"\n");
    h.update(spec.label().as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Moments of `model`, reusing `cache` when its fingerprint matches.
pub fn moments(model: &SystemModel, spec: MomentSpec, cache: Option<&Path>) -> Result<SecondMomentData, CliError> {
    let fp = fingerprint(model, spec);
    if let Some(path) = cache {
        if path.exists() {
            match serde_json::from_str::<SecondMomentData>(&read_text(path)?) {
                Ok(d) if d.fingerprint.as_deref() == Some(fp.as_str()) => {
                    log::info!("using cached moments from {}", path.display());
                    return Ok(d);
                }
                Ok(_) => log::warn!("{}: fingerprint mismatch, recomputing", path.display()),
                Err(e) => log::warn!("{}: unreadable cache ({e}), recomputing", path.display()),
            }
        }
    }
    let mut data = match spec {
        MomentSpec::Analytic => second_moment_analytic(model)?,
        MomentSpec::MonteCarlo { samples, seed } => second_moment_mc(model, samples, seed)?,
    };
    data.fingerprint = Some(fp);
    if let Some(path) = cache {
        write_atomic(path, serde_json::to_string(&data)?.as_bytes())?;
    }
    Ok(data)
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

pub fn envelope<R: Serialize>(command: &str, config: Value, result: R) -> Result<Value, CliError> {
    Ok(json!({
        "schema": REPORT_SCHEMA,
        "tool": TOOL,
        "command": command,
        "config": config,
        "result": serde_json::to_value(result)?,
    }))
}

/// Prints `report` to stdout and, if requested, writes it to `out`.
pub fn emit(report: &Value, out: Option<&Path>) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(report)?;
    let mut stdout = std::io::stdout().lock();
    match writeln!(stdout, "{text}").and_then(|_| stdout.flush()) {
        // a closed pipe (e.g. `| head`) is not an error
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => return Err(CliError::Io(format!("stdout: {e}"))),
        _ => {}
    }
    if let Some(path) = out {
        write_atomic(path, format!("{text}\n").as_bytes())?;
    }
    Ok(())
}

pub fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    stoch_lyap::linalg::to_rows(m)
}
