//! Stochastic system descriptions: the map `xi -> (A(xi), B(xi))`.
//!
//! Four concrete forms are supported (affine, switched, polynomial-entry,
//! sampled-data) plus a closed-loop wrapper used when a gain is applied to a
//! sampled-data plant. `m == 0` marks an analysis-only model.

use serde::{Deserialize, Serialize};

use crate::dist::{DistributionSpec, ScalarDistribution};
use crate::error::{Error, Result};
use crate::linalg::{from_rows, to_rows, Mat};
use crate::sampled::{ContinuousPlant, IntervalLaw};

/// Highest total degree of a polynomial entry. Products of two entries
/// then need moments up to [`crate::dist::MAX_MOMENT_DEGREE`].
pub const MAX_ENTRY_DEGREE: u32 = 2;

/// Polynomial in `xi`: a sum of `coeff * xi^alpha` terms.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyEntry {
    terms: Vec<(f64, Vec<u32>)>,
}

impl PolyEntry {
    /// Builds an entry over `z` coordinates. Terms are sorted by multi-index
    /// and zero coefficients dropped; repeated multi-indices are rejected.
    pub fn new(mut terms: Vec<(f64, Vec<u32>)>, z: usize) -> Result<Self> {
        for (c, alpha) in &terms {
            if alpha.len() != z {
                return Err(Error::dims("polynomial term multi-index", z, alpha.len()));
            }
            if !c.is_finite() {
                return Err(Error::InvalidModel("non-finite polynomial coefficient".into()));
            }
            let deg: u32 = alpha.iter().sum();
            if deg > MAX_ENTRY_DEGREE {
                return Err(Error::InvalidModel(format!(
                    "polynomial term of degree {deg} exceeds the maximum {MAX_ENTRY_DEGREE}"
                )));
            }
        }
        terms.sort_by(|a, b| a.1.cmp(&b.1));
        if terms.windows(2).any(|w| w[0].1 == w[1].1) {
            return Err(Error::InvalidModel("repeated multi-index within a polynomial entry".into()));
        }
        terms.retain(|(c, _)| *c != 0.0);
        Ok(PolyEntry { terms })
    }

    pub fn constant(value: f64, z: usize) -> Self {
        let terms = if value == 0.0 { vec![] } else { vec![(value, vec![0; z])] };
        PolyEntry { terms }
    }

    pub fn terms(&self) -> &[(f64, Vec<u32>)] {
        &self.terms
    }

    pub fn eval(&self, xi: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(c, alpha)| c * monomial(xi, alpha))
            .sum()
    }

    /// `self + s * other`, merging equal multi-indices.
    pub fn add_scaled(&self, other: &PolyEntry, s: f64) -> PolyEntry {
        let mut terms = self.terms.clone();
        for (c, alpha) in &other.terms {
            match terms.iter_mut().find(|(_, a)| a == alpha) {
                Some(t) => t.0 += s * c,
                None => terms.push((s * c, alpha.clone())),
            }
        }
        terms.sort_by(|a, b| a.1.cmp(&b.1));
        terms.retain(|(c, _)| *c != 0.0);
        PolyEntry { terms }
    }
}

fn monomial(xi: &[f64], alpha: &[u32]) -> f64 {
    xi.iter()
        .zip(alpha)
        .filter(|(_, &p)| p > 0)
        .map(|(x, &p)| x.powi(p as i32))
        .product()
}

pub type PolyGrid = Vec<Vec<PolyEntry>>;

#[derive(Debug, Clone, PartialEq)]
pub enum ModelForm {
    /// `A(xi) = A0 + sum_i A_i xi_i`, likewise for `B`.
    Affine { a: Vec<Mat>, b: Option<Vec<Mat>> },
    /// `A(xi) = A_[xi]` with `xi` in `{1..S}`.
    Switched { modes: Vec<Mat>, b_modes: Option<Vec<Mat>> },
    /// Entrywise polynomials of degree at most two.
    Poly { a: PolyGrid, b: Option<PolyGrid> },
    /// Zero-order-hold discretization of a continuous plant over a random interval.
    Sampled { plant: ContinuousPlant, interval: IntervalLaw },
    /// `A_open(xi) + B_open(xi) F`, for open-loop forms without a closed-form composition.
    ClosedLoop { open: Box<SystemModel>, gain: Mat },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelRepr", into = "ModelRepr")]
pub struct SystemModel {
    form: ModelForm,
    n: usize,
    m: usize,
    dist: DistributionSpec,
}

impl SystemModel {
    pub fn affine(a: Vec<Mat>, b: Option<Vec<Mat>>, dist: DistributionSpec) -> Result<Self> {
        let z = dist.dim();
        if a.len() != z + 1 {
            return Err(Error::dims("affine A terms (Z + 1)", z + 1, a.len()));
        }
        let n = a[0].nrows();
        check_all_shape(&a, n, n, "affine A term")?;
        let m = match &b {
            Some(b) => {
                if b.len() != z + 1 {
                    return Err(Error::dims("affine B terms (Z + 1)", z + 1, b.len()));
                }
                let m = b[0].ncols();
                check_all_shape(b, n, m, "affine B term")?;
                m
            }
            None => 0,
        };
        Self::finish(ModelForm::Affine { a, b }, n, m, dist)
    }

    pub fn switched(modes: Vec<Mat>, b_modes: Option<Vec<Mat>>, dist: DistributionSpec) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::InvalidModel("switched model needs at least one mode".into()));
        }
        let s = modes.len();
        let n = modes[0].nrows();
        check_all_shape(&modes, n, n, "switched mode")?;
        let m = match &b_modes {
            Some(b) => {
                if b.len() != s {
                    return Err(Error::dims("switched B modes", s, b.len()));
                }
                let m = b[0].ncols();
                check_all_shape(b, n, m, "switched B mode")?;
                m
            }
            None => 0,
        };
        match dist.coords() {
            [ScalarDistribution::Discrete { values, .. }] => {
                if let Some(v) = values
                    .iter()
                    .find(|v| v.fract() != 0.0 || **v < 1.0 || **v > s as f64)
                {
                    return Err(Error::InvalidMode { value: *v, modes: s });
                }
            }
            _ => {
                return Err(Error::InvalidModel(
                    "switched model requires a single discrete coordinate over 1..=S".into(),
                ))
            }
        }
        Self::finish(ModelForm::Switched { modes, b_modes }, n, m, dist)
    }

    pub fn poly(a: PolyGrid, b: Option<PolyGrid>, dist: DistributionSpec) -> Result<Self> {
        let z = dist.dim();
        let n = a.len();
        check_grid(&a, n, n, z, "polynomial A grid")?;
        let m = match &b {
            Some(b) => {
                let m = b.first().map_or(0, Vec::len);
                check_grid(b, n, m, z, "polynomial B grid")?;
                m
            }
            None => 0,
        };
        Self::finish(ModelForm::Poly { a, b }, n, m, dist)
    }

    pub fn sampled(plant: ContinuousPlant, interval: IntervalLaw, dist: DistributionSpec) -> Result<Self> {
        if interval.coord >= dist.dim() {
            return Err(Error::dims("interval coordinate index", format!("< {}", dist.dim()), interval.coord));
        }
        if !(interval.offset > 0.0 && interval.offset.is_finite()) {
            return Err(Error::InvalidModel("sampling interval offset must be > 0".into()));
        }
        if !(interval.scale >= 0.0 && interval.scale.is_finite()) {
            return Err(Error::InvalidModel("sampling interval scale must be >= 0".into()));
        }
        if interval.scale > 0.0 && dist.coords()[interval.coord].support_min() < 0.0 {
            return Err(Error::InvalidModel(
                "sampling interval coordinate must have nonnegative support".into(),
            ));
        }
        let (n, m) = (plant.n(), plant.m());
        Self::finish(ModelForm::Sampled { plant, interval }, n, m, dist)
    }

    fn finish(form: ModelForm, n: usize, m: usize, dist: DistributionSpec) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidModel("state dimension must be at least 1".into()));
        }
        Ok(SystemModel { form, n, m, dist })
    }

    pub fn form(&self) -> &ModelForm {
        &self.form
    }

    pub fn form_name(&self) -> &'static str {
        match self.form {
            ModelForm::Affine { .. } => "affine",
            ModelForm::Switched { .. } => "switched",
            ModelForm::Poly { .. } => "poly",
            ModelForm::Sampled { .. } => "sampled",
            ModelForm::ClosedLoop { .. } => "closed_loop",
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn z(&self) -> usize {
        self.dist.dim()
    }

    pub fn dist(&self) -> &DistributionSpec {
        &self.dist
    }

    /// `(A(xi), B(xi))`; `B` is `None` for analysis-only models.
    pub fn evaluate(&self, xi: &[f64]) -> Result<(Mat, Option<Mat>)> {
        if xi.len() != self.z() {
            return Err(Error::dims("parameter vector", self.z(), xi.len()));
        }
        match &self.form {
            ModelForm::Affine { a, b } => {
                let combine = |terms: &[Mat]| {
                    let mut out = terms[0].clone();
                    for (t, x) in terms[1..].iter().zip(xi) {
                        out += t * *x;
                    }
                    out
                };
                Ok((combine(a), b.as_deref().map(combine)))
            }
            ModelForm::Switched { modes, b_modes } => {
                let s = mode_index(xi[0], modes.len())?;
                Ok((modes[s].clone(), b_modes.as_ref().map(|b| b[s].clone())))
            }
            ModelForm::Poly { a, b } => {
                let eval = |g: &PolyGrid, cols: usize| Mat::from_fn(g.len(), cols, |i, j| g[i][j].eval(xi));
                Ok((eval(a, self.n), b.as_ref().map(|g| eval(g, self.m))))
            }
            ModelForm::Sampled { plant, interval } => {
                let h = interval.interval(xi);
                if !(h > 0.0 && h.is_finite()) {
                    return Err(Error::InvalidModel(format!("sampling interval h = {h} is not positive")));
                }
                let (a, b) = plant.discretize(h);
                Ok((a, (self.m > 0).then_some(b)))
            }
            ModelForm::ClosedLoop { open, gain } => {
                let (a, b) = open.evaluate(xi)?;
                let b = b.expect("closed-loop wrapper always has an input matrix");
                Ok((a + b * gain, None))
            }
        }
    }

    /// The analysis-only model `A_op(xi) + B_op(xi) F`.
    pub fn closed_loop(&self, gain: &Mat) -> Result<SystemModel> {
        if self.m == 0 {
            return Err(Error::NoInputChannel);
        }
        if gain.shape() != (self.m, self.n) {
            return Err(Error::dims(
                "feedback gain",
                format!("{}x{}", self.m, self.n),
                format!("{}x{}", gain.nrows(), gain.ncols()),
            ));
        }
        let form = match &self.form {
            ModelForm::Affine { a, b } => {
                let b = b.as_ref().expect("m > 0");
                let a = a.iter().zip(b).map(|(ai, bi)| ai + bi * gain).collect();
                ModelForm::Affine { a, b: None }
            }
            ModelForm::Switched { modes, b_modes } => {
                let b = b_modes.as_ref().expect("m > 0");
                let modes = modes.iter().zip(b).map(|(ai, bi)| ai + bi * gain).collect();
                ModelForm::Switched { modes, b_modes: None }
            }
            ModelForm::Poly { a, b } => {
                let b = b.as_ref().expect("m > 0");
                let a = (0..self.n)
                    .map(|i| {
                        (0..self.n)
                            .map(|j| {
                                (0..self.m).fold(a[i][j].clone(), |acc, r| acc.add_scaled(&b[i][r], gain[(r, j)]))
                            })
                            .collect()
                    })
                    .collect();
                ModelForm::Poly { a, b: None }
            }
            ModelForm::Sampled { .. } => ModelForm::ClosedLoop {
                open: Box::new(self.clone()),
                gain: gain.clone(),
            },
            ModelForm::ClosedLoop { .. } => unreachable!("closed-loop wrappers have m = 0"),
        };
        Ok(SystemModel {
            form,
            n: self.n,
            m: 0,
            dist: self.dist.clone(),
        })
    }
}

fn mode_index(x: f64, modes: usize) -> Result<usize> {
    if x.fract() != 0.0 || x < 1.0 || x > modes as f64 {
        return Err(Error::InvalidMode { value: x, modes });
    }
    Ok(x as usize - 1)
}

fn check_all_shape(ms: &[Mat], rows: usize, cols: usize, what: &'static str) -> Result<()> {
    for m in ms {
        if m.shape() != (rows, cols) {
            return Err(Error::dims(
                what,
                format!("{rows}x{cols}"),
                format!("{}x{}", m.nrows(), m.ncols()),
            ));
        }
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidModel(format!("{what} has non-finite entries")));
        }
    }
    Ok(())
}

fn check_grid(g: &PolyGrid, rows: usize, cols: usize, z: usize, what: &'static str) -> Result<()> {
    if g.len() != rows || g.iter().any(|r| r.len() != cols) {
        return Err(Error::dims(what, format!("{rows}x{cols}"), "ragged or mis-sized grid"));
    }
    for e in g.iter().flatten() {
        if e.terms.iter().any(|(_, a)| a.len() != z) {
            return Err(Error::dims("polynomial term multi-index", z, "other"));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// JSON wire format

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PolyEntryRepr {
    terms: Vec<(f64, Vec<u32>)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PlantRepr {
    a: Rows,
    b: Rows,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct IntervalRepr {
    offset: f64,
    coord: usize,
    #[serde(default = "unit_scale")]
    scale: f64,
}

fn unit_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
enum ModelRepr {
    Affine {
        #[serde(default)]
        n: Option<usize>,
        #[serde(rename = "Z", default)]
        z: Option<usize>,
        a: Vec<Rows>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        b: Option<Vec<Rows>>,
        dist: DistributionSpec,
    },
    Switched {
        #[serde(default)]
        n: Option<usize>,
        #[serde(rename = "Z", default)]
        z: Option<usize>,
        modes: Vec<Rows>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        b_modes: Option<Vec<Rows>>,
        dist: DistributionSpec,
    },
    Poly {
        #[serde(default)]
        n: Option<usize>,
        #[serde(rename = "Z", default)]
        z: Option<usize>,
        entries: Vec<Vec<PolyEntryRepr>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        b_entries: Option<Vec<Vec<PolyEntryRepr>>>,
        dist: DistributionSpec,
    },
    Sampled {
        #[serde(default)]
        n: Option<usize>,
        #[serde(rename = "Z", default)]
        z: Option<usize>,
        plant: PlantRepr,
        interval: IntervalRepr,
        dist: DistributionSpec,
    },
    ClosedLoop {
        open: Box<ModelRepr>,
        gain: Rows,
    },
}

fn mat(rows: &Rows, what: &str) -> Result<Mat> {
    from_rows(rows).ok_or_else(|| Error::InvalidModel(format!("{what}: ragged matrix")))
}

fn mats(list: &[Rows], what: &str) -> Result<Vec<Mat>> {
    list.iter().map(|r| mat(r, what)).collect()
}

fn grid(g: &[Vec<PolyEntryRepr>], z: usize) -> Result<PolyGrid> {
    g.iter()
        .map(|row| row.iter().map(|e| PolyEntry::new(e.terms.clone(), z)).collect())
        .collect()
}

fn grid_repr(g: &PolyGrid) -> Vec<Vec<PolyEntryRepr>> {
    g.iter()
        .map(|row| row.iter().map(|e| PolyEntryRepr { terms: e.terms.clone() }).collect())
        .collect()
}

fn check_declared(model: &SystemModel, n: Option<usize>, z: Option<usize>) -> Result<()> {
    if let Some(n) = n {
        if n != model.n {
            return Err(Error::dims("declared n", n, model.n));
        }
    }
    if let Some(z) = z {
        if z != model.z() {
            return Err(Error::dims("declared Z", z, model.z()));
        }
    }
    Ok(())
}

impl TryFrom<ModelRepr> for SystemModel {
    type Error = Error;

    fn try_from(r: ModelRepr) -> Result<Self> {
        match r {
            ModelRepr::Affine { n, z, a, b, dist } => {
                let b = b.map(|b| mats(&b, "affine B")).transpose()?;
                let m = SystemModel::affine(mats(&a, "affine A")?, b, dist)?;
                check_declared(&m, n, z)?;
                Ok(m)
            }
            ModelRepr::Switched { n, z, modes, b_modes, dist } => {
                let b = b_modes.map(|b| mats(&b, "switched B")).transpose()?;
                let m = SystemModel::switched(mats(&modes, "switched mode")?, b, dist)?;
                check_declared(&m, n, z)?;
                Ok(m)
            }
            ModelRepr::Poly { n, z, entries, b_entries, dist } => {
                let zd = dist.dim();
                let b = b_entries.map(|b| grid(&b, zd)).transpose()?;
                let m = SystemModel::poly(grid(&entries, zd)?, b, dist)?;
                check_declared(&m, n, z)?;
                Ok(m)
            }
            ModelRepr::Sampled { n, z, plant, interval, dist } => {
                let plant = ContinuousPlant::new(mat(&plant.a, "plant A")?, mat(&plant.b, "plant B")?)?;
                let interval = IntervalLaw {
                    offset: interval.offset,
                    scale: interval.scale,
                    coord: interval.coord,
                };
                let m = SystemModel::sampled(plant, interval, dist)?;
                check_declared(&m, n, z)?;
                Ok(m)
            }
            ModelRepr::ClosedLoop { open, gain } => {
                let open = SystemModel::try_from(*open)?;
                open.closed_loop(&mat(&gain, "gain")?)
            }
        }
    }
}

impl From<SystemModel> for ModelRepr {
    fn from(m: SystemModel) -> Self {
        let (n, z) = (Some(m.n), Some(m.z()));
        match m.form {
            ModelForm::Affine { a, b } => ModelRepr::Affine {
                n,
                z,
                a: a.iter().map(to_rows).collect(),
                b: b.map(|b| b.iter().map(to_rows).collect()),
                dist: m.dist,
            },
            ModelForm::Switched { modes, b_modes } => ModelRepr::Switched {
                n,
                z,
                modes: modes.iter().map(to_rows).collect(),
                b_modes: b_modes.map(|b| b.iter().map(to_rows).collect()),
                dist: m.dist,
            },
            ModelForm::Poly { a, b } => ModelRepr::Poly {
                n,
                z,
                entries: grid_repr(&a),
                b_entries: b.as_ref().map(grid_repr),
                dist: m.dist,
            },
            ModelForm::Sampled { plant, interval } => ModelRepr::Sampled {
                n,
                z,
                plant: PlantRepr {
                    a: to_rows(plant.a()),
                    b: to_rows(plant.b()),
                },
                interval: IntervalRepr {
                    offset: interval.offset,
                    coord: interval.coord,
                    scale: interval.scale,
                },
                dist: m.dist,
            },
            ModelForm::ClosedLoop { open, gain } => ModelRepr::ClosedLoop {
                open: Box::new(ModelRepr::from(*open)),
                gain: to_rows(&gain),
            },
        }
    }
}
