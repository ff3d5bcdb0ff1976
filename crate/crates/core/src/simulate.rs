//! Monte-Carlo ensembles of `x_{k+1} = A(ξ_k) x_k` (optionally closed with
//! `u_k = F x_k`) estimating `sqrt(E ‖x_k‖²)`.
//!
//! Path `p` draws from `SampleStream::substream(seed, p)`. Paths are grouped
//! into fixed leaves of `PATH_LEAF` and squared norms are reduced by a fixed
//! pairwise tree, so results do not depend on the thread count.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{SampleStream, RNG_ALGORITHM};
use crate::error::{Error, Result};
use crate::linalg::{pairwise_sum_vectors, Mat, Vector};
use crate::sysmodel::SystemModel;

/// Paths whose state norm exceeds this are frozen at it.
pub const OVERFLOW_LIMIT: f64 = 1e150;
pub const PATH_LEAF: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnsembleConfig {
    pub k_max: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub parallel: bool,
    /// Keep `‖x_k‖` of every path.
    pub keep_paths: bool,
}

impl EnsembleConfig {
    pub fn new(k_max: usize, n_paths: usize, seed: u64) -> Self {
        EnsembleConfig {
            k_max,
            n_paths,
            seed,
            parallel: true,
            keep_paths: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub k_max: usize,
    /// `rms[k]` estimates `sqrt(E ‖x_k‖²)`.
    pub rms: Vec<f64>,
    pub n_paths: usize,
    pub seed: u64,
    pub rng: String,
    pub x0: Vec<f64>,
    /// Paths clamped at `OVERFLOW_LIMIT`.
    pub overflowed_paths: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paths: Option<Vec<Vec<f64>>>,
}

struct PathOutcome {
    sq: Vec<f64>,
    overflowed: bool,
}

fn run_path(model: &SystemModel, x0: &Vector, k_max: usize, seed: u64, index: u64) -> Result<PathOutcome> {
    let mut rng = SampleStream::substream(seed, index);
    let mut x = x0.clone();
    let mut sq = Vec::with_capacity(k_max + 1);
    sq.push(x.norm_squared());
    let mut overflowed = false;
    for _ in 0..k_max {
        if overflowed {
            sq.push(OVERFLOW_LIMIT * OVERFLOW_LIMIT);
            continue;
        }
        let xi = model.dist().sample(&mut rng);
        let (a, _) = model.evaluate(&xi)?;
        x = a * x;
        let s = x.norm_squared();
        if s.is_nan() {
            return Err(Error::NonFiniteSample { index: index as usize });
        }
        if !(s.sqrt() <= OVERFLOW_LIMIT) {
            overflowed = true;
            sq.push(OVERFLOW_LIMIT * OVERFLOW_LIMIT);
        } else {
            sq.push(s);
        }
    }
    Ok(PathOutcome { sq, overflowed })
}

struct Leaf {
    sum: Vec<f64>,
    overflowed: usize,
    paths: Option<Vec<Vec<f64>>>,
}

fn run_leaf(model: &SystemModel, x0: &Vector, cfg: &EnsembleConfig, leaf: usize) -> Result<Leaf> {
    let start = leaf * PATH_LEAF;
    let end = (start + PATH_LEAF).min(cfg.n_paths);
    let mut sqs = Vec::with_capacity(end - start);
    let mut overflowed = 0;
    for p in start..end {
        let out = run_path(model, x0, cfg.k_max, cfg.seed, p as u64)?;
        overflowed += out.overflowed as usize;
        sqs.push(out.sq);
    }
    let paths = cfg
        .keep_paths
        .then(|| sqs.iter().map(|s| s.iter().map(|v| v.sqrt()).collect()).collect());
    Ok(Leaf {
        sum: pairwise_sum_vectors(&sqs),
        overflowed,
        paths,
    })
}

/// Ensemble of `cfg.n_paths` trajectories of `model` (closed with `gain` if
/// given) from the deterministic `x0`.
pub fn run_ensemble(model: &SystemModel, gain: Option<&Mat>, x0: &[f64], cfg: &EnsembleConfig) -> Result<EnsembleResult> {
    if cfg.n_paths == 0 {
        return Err(Error::InvalidArgument("at least one path is required".into()));
    }
    if x0.len() != model.n() {
        return Err(Error::dims("x0", model.n().to_string(), x0.len().to_string()));
    }
    let closed;
    let model = match gain {
        Some(f) => {
            closed = model.closed_loop(f)?;
            &closed
        }
        None => model,
    };
    let x0v = Vector::from_column_slice(x0);
    let leaves = cfg.n_paths.div_ceil(PATH_LEAF);
    let results: Vec<Result<Leaf>> = if cfg.parallel {
        (0..leaves).into_par_iter().map(|l| run_leaf(model, &x0v, cfg, l)).collect()
    } else {
        (0..leaves).map(|l| run_leaf(model, &x0v, cfg, l)).collect()
    };
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    let overflowed = results.iter().map(|l| l.overflowed).sum();
    let sums: Vec<Vec<f64>> = results.iter().map(|l| l.sum.clone()).collect();
    let total = pairwise_sum_vectors(&sums);
    let nf = cfg.n_paths as f64;
    let mut rms: Vec<f64> = total.iter().map(|s| (s / nf).sqrt()).collect();
    rms[0] = x0v.norm();
    if overflowed > 0 {
        log::warn!("{overflowed} of {} paths exceeded {OVERFLOW_LIMIT:e} and were clamped", cfg.n_paths);
    }
    let paths = cfg
        .keep_paths
        .then(|| results.into_iter().flat_map(|l| l.paths.unwrap_or_default()).collect());
    Ok(EnsembleResult {
        k_max: cfg.k_max,
        rms,
        n_paths: cfg.n_paths,
        seed: cfg.seed,
        rng: RNG_ALGORITHM.to_string(),
        x0: x0.to_vec(),
        overflowed_paths: overflowed,
        paths,
    })
}

/// Per-step rate `(rms[k2] / rms[k1])^(1 / (k2 - k1))`.
pub fn decay_rate(result: &EnsembleResult, k1: usize, k2: usize) -> Result<f64> {
    decay_rate_of(&result.rms, k1, k2)
}

pub fn decay_rate_of(rms: &[f64], k1: usize, k2: usize) -> Result<f64> {
    if !(k1 < k2 && k2 < rms.len()) {
        return Err(Error::InvalidArgument(format!("window ({k1}, {k2}) outside 0..{}", rms.len())));
    }
    let (r1, r2) = (rms[k1], rms[k2]);
    let ok = |r: f64| r > 0.0 && r.is_finite();
    if !(ok(r1) && ok(r2)) {
        return Err(Error::DegenerateWindow { k1, k2, rms1: r1, rms2: r2 });
    }
    Ok((r2 / r1).powf(1.0 / (k2 - k1) as f64))
}

/// `rms[k_max] / rms[0] < threshold` for each initial state. An empirical
/// indication of mean-square attractivity, not a certificate.
pub fn attractivity_probe(
    model: &SystemModel,
    gain: Option<&Mat>,
    x0s: &[Vec<f64>],
    cfg: &EnsembleConfig,
    threshold: f64,
) -> Result<Vec<bool>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidArgument(format!("threshold must lie in (0, 1), got {threshold}")));
    }
    x0s.iter()
        .map(|x0| {
            let r = run_ensemble(model, gain, x0, cfg)?;
            Ok(r.rms[cfg.k_max] / r.rms[0] < threshold)
        })
        .collect()
}

/// `k,rms` with 17 significant digits.
pub fn write_rms_csv<W: Write>(mut w: W, rms: &[f64]) -> std::io::Result<()> {
    writeln!(w, "k,rms")?;
    for (k, r) in rms.iter().enumerate() {
        writeln!(w, "{k},{r:.16e}")?;
    }
    Ok(())
}

pub fn rms_csv_string(rms: &[f64]) -> String {
    let mut out = Vec::new();
    write_rms_csv(&mut out, rms).expect("writing to a Vec cannot fail");
    String::from_utf8(out).expect("ascii output")
}
