//! SDPA sparse (`.dat-s`) interchange.
//!
//! Written problem, for an `LmiProblem` with blocks `F_b(v) ⪰ margin I`:
//!
//! ```text
//! "<comment>
//! <m> = mDIM
//! <nblocks> = nBLOCK
//! <d_1> <d_2> ...
//! 0 0 ... 0
//! <matno> <blkno> <i> <j> <value>
//! ```
//!
//! in SDPA form `sum_i x_i F_i - F_0 ⪰ 0` with `F_i = A_{b,i}` and
//! `F_0 = margin I - C_b`. Entries are upper-triangular (`i <= j`), 1-based,
//! ordered by matrix number, block, row, column; values use the shortest
//! round-trip `e` notation. The normalization equality, if any, is not
//! exported (the problems are homogeneous up to the margin).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;

use super::lmi::LmiProblem;
use super::{Feasibility, FeasibilityBackend};
use crate::error::{Error, Result};
use crate::linalg::Mat;

fn push_entries(out: &mut String, matno: usize, blkno: usize, m: &Mat) {
    for i in 0..m.nrows() {
        for j in i..m.ncols() {
            let v = m[(i, j)];
            if v != 0.0 {
                writeln!(out, "{matno} {blkno} {} {} {v:e}", i + 1, j + 1).unwrap();
            }
        }
    }
}

pub fn to_sdpa_string(problem: &LmiProblem) -> String {
    let mut out = String::new();
    let dims: Vec<String> = problem.block_dims().iter().map(|d| d.to_string()).collect();
    let kind = match problem.layout {
        Some(l) if l.m > 0 => format!("synthesis n={} m={}", l.n, l.m),
        Some(l) => format!("analysis n={}", l.n),
        None => "generic".into(),
    };
    writeln!(out, "\"stoch-lyap {kind} lambda={:e} margin={:e}", problem.lambda, problem.margin).unwrap();
    writeln!(out, "{} = mDIM", problem.nvars).unwrap();
    writeln!(out, "{} = nBLOCK", problem.blocks.len()).unwrap();
    writeln!(out, "{}", dims.join(" ")).unwrap();
    writeln!(out, "{}", vec!["0"; problem.nvars].join(" ")).unwrap();
    for (b, blk) in problem.blocks.iter().enumerate() {
        let d = blk.dim();
        let f0 = Mat::identity(d, d) * problem.margin - &blk.constant;
        push_entries(&mut out, 0, b + 1, &f0);
    }
    for i in 0..problem.nvars {
        for (b, blk) in problem.blocks.iter().enumerate() {
            push_entries(&mut out, i + 1, b + 1, &blk.coeffs[i]);
        }
    }
    out
}

pub fn write_sdpa(problem: &LmiProblem, path: &Path) -> Result<()> {
    std::fs::write(path, to_sdpa_string(problem))?;
    Ok(())
}

fn numbers(s: &str) -> Result<Vec<f64>> {
    s.split(|c: char| c.is_whitespace() || c == ',' || c == '{' || c == '}')
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|e| Error::Parse(format!("solution value {t:?}: {e}"))))
        .collect()
}

/// Reads the variable vector from an SDPA output (`xVec` section) or a
/// CSDP solution file (first line).
pub fn read_solution(text: &str, nvars: usize) -> Result<Vec<f64>> {
    let values = if let Some(pos) = text.find("xVec") {
        let rest = &text[pos..];
        let open = rest.find('{').ok_or_else(|| Error::Parse("xVec without '{'".into()))?;
        let close = rest[open..].find('}').ok_or_else(|| Error::Parse("unterminated xVec".into()))?;
        numbers(&rest[open + 1..open + close])?
    } else {
        numbers(text.lines().next().unwrap_or(""))?
    };
    if values.len() != nvars {
        return Err(Error::dims("solution vector", nvars.to_string(), values.len().to_string()));
    }
    Ok(values)
}

pub fn read_solution_file(path: &Path, nvars: usize) -> Result<Vec<f64>> {
    read_solution(&std::fs::read_to_string(path)?, nvars)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    Csdp,
    Sdpa,
}

/// External interior-point solver invoked on exported problems.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExternalSolver {
    pub kind: SolverKind,
    pub program: PathBuf,
}

impl ExternalSolver {
    /// First of `csdp`, `sdpa` found on `PATH`.
    pub fn detect() -> Option<Self> {
        let path = std::env::var_os("PATH")?;
        for (name, kind) in [("csdp", SolverKind::Csdp), ("sdpa", SolverKind::Sdpa)] {
            for dir in std::env::split_paths(&path) {
                let candidate = dir.join(name);
                if candidate.is_file() {
                    return Some(ExternalSolver { kind, program: candidate });
                }
            }
        }
        None
    }
}

/// Writes each queried problem in SDPA format; decides feasibility with an
/// external solver when one is configured.
#[derive(Debug, Clone, PartialEq)]
pub struct SdpaExportBackend {
    pub path: PathBuf,
    pub solver: Option<ExternalSolver>,
}

impl SdpaExportBackend {
    pub fn new(path: impl Into<PathBuf>, solver: Option<ExternalSolver>) -> Self {
        SdpaExportBackend { path: path.into(), solver }
    }
}

impl FeasibilityBackend for SdpaExportBackend {
    fn name(&self) -> String {
        match &self.solver {
            Some(s) => format!("sdpa-export/{:?}", s.kind).to_lowercase(),
            None => "sdpa-export".into(),
        }
    }

    fn solve(&self, problem: &LmiProblem) -> Result<Feasibility> {
        write_sdpa(problem, &self.path)?;
        let solver = self
            .solver
            .as_ref()
            .ok_or_else(|| Error::BackendFailure(format!("problem written to {}; no external solver configured", self.path.display())))?;
        let out = self.path.with_extension("sol");
        let status = match solver.kind {
            SolverKind::Csdp => Command::new(&solver.program).arg(&self.path).arg(&out).output()?,
            SolverKind::Sdpa => Command::new(&solver.program).arg("-ds").arg(&self.path).arg("-o").arg(&out).output()?,
        };
        let code = status.status.code();
        match (solver.kind, code) {
            // csdp: 1 primal infeasible, 2 dual infeasible (our LMI infeasible)
            (SolverKind::Csdp, Some(1) | Some(2)) => {
                return Ok(Feasibility::Infeasible {
                    iterations: 0,
                    reason: format!("csdp exit status {}", code.unwrap()),
                })
            }
            (SolverKind::Csdp, Some(0) | Some(3)) | (SolverKind::Sdpa, Some(0)) => {}
            _ => return Err(Error::BackendFailure(format!("{} exited with {:?}", solver.program.display(), code))),
        }
        let text = std::fs::read_to_string(&out)?;
        if solver.kind == SolverKind::Sdpa && (text.contains("pINF") || text.contains("dUNBD")) {
            return Ok(Feasibility::Infeasible {
                iterations: 0,
                reason: "sdpa reports infeasibility".into(),
            });
        }
        let vars = read_solution(&text, problem.nvars)?;
        // the external point is accepted only if it meets the margin itself
        if problem.min_eigenvalue(&vars) >= 0.5 * problem.margin {
            Ok(Feasibility::Feasible { vars, iterations: 0 })
        } else {
            Ok(Feasibility::Infeasible {
                iterations: 0,
                reason: "external solution violates the margin".into(),
            })
        }
    }
}
