//! Zero-order-hold discretization of a continuous-time plant under a random
//! sampling interval, and reconstruction of the continuous signals between
//! sampling instants.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{DistributionSpec, SampleStream};
use crate::error::{Error, Result};
use crate::linalg::{expm, serde_rows, Mat, Vector};

/// `dx/dt = A_c x + B_c u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousPlant {
    #[serde(with = "serde_rows")]
    a: Mat,
    #[serde(with = "serde_rows")]
    b: Mat,
}

impl ContinuousPlant {
    pub fn new(a: Mat, b: Mat) -> Result<Self> {
        if !a.is_square() || b.nrows() != a.nrows() {
            return Err(Error::dims(
                "continuous plant",
                format!("A n x n, B n x m with n = {}", a.nrows()),
                format!("A {}x{}, B {}x{}", a.nrows(), a.ncols(), b.nrows(), b.ncols()),
            ));
        }
        if a.iter().chain(b.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidModel("continuous plant has non-finite entries".into()));
        }
        Ok(ContinuousPlant { a, b })
    }

    pub fn a(&self) -> &Mat {
        &self.a
    }

    pub fn b(&self) -> &Mat {
        &self.b
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    /// `(e^{A_c h}, ∫_0^h e^{A_c t} B_c dt)` read off one exponential of the
    /// augmented generator `[[A_c, B_c], [0, 0]] h`.
    pub fn discretize(&self, h: f64) -> (Mat, Mat) {
        let (n, m) = (self.n(), self.m());
        let mut aug = Mat::zeros(n + m, n + m);
        aug.view_mut((0, 0), (n, n)).copy_from(&(&self.a * h));
        aug.view_mut((0, n), (n, m)).copy_from(&(&self.b * h));
        let e = expm(&aug);
        (e.view((0, 0), (n, n)).into_owned(), e.view((0, n), (n, m)).into_owned())
    }
}

/// `h(xi) = offset + scale * xi[coord]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalLaw {
    pub offset: f64,
    pub scale: f64,
    pub coord: usize,
}

impl IntervalLaw {
    pub fn interval(&self, xi: &[f64]) -> f64 {
        self.offset + self.scale * xi[self.coord]
    }
}

/// Sampling instants `t_0 = 0 < t_1 < ...` drawn from the interval law
/// until the horizon `t_end` is covered (the last instant is `>= t_end`).
pub fn sample_instants(law: &IntervalLaw, dist: &DistributionSpec, rng: &mut SampleStream, t_end: f64) -> Vec<f64> {
    let mut t = 0.0;
    let mut out = vec![t];
    while t < t_end {
        t += law.interval(&dist.sample(rng));
        out.push(t);
    }
    out
}

/// Continuous-time signals at plot resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct IntersampleTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vector>,
    pub inputs: Vec<Vector>,
    /// State at each sampling instant, from the same propagator as the
    /// discrete-time recursion.
    pub sampled_states: Vec<Vector>,
}

impl IntersampleTrajectory {
    /// Continuous state at the last plot point.
    pub fn final_state(&self) -> &Vector {
        self.states.last().expect("trajectory has at least one point")
    }
}

/// Propagates `x_c` with the held input `u_k = F x_c(t_k)` over
/// `[t_k, t_{k+1})`. Plot points lie on the grid `j * dt_plot` up to the
/// last sampling instant.
pub fn intersample_trajectory(
    plant: &ContinuousPlant,
    gain: &Mat,
    instants: &[f64],
    x0: &Vector,
    dt_plot: f64,
) -> Result<IntersampleTrajectory> {
    let n = plant.n();
    if gain.shape() != (plant.m(), n) || x0.len() != n {
        return Err(Error::dims(
            "intersample inputs",
            format!("F {}x{n}, x0 of length {n}", plant.m()),
            format!("F {}x{}, x0 of length {}", gain.nrows(), gain.ncols(), x0.len()),
        ));
    }
    if !(dt_plot > 0.0 && dt_plot.is_finite()) {
        return Err(Error::InvalidModel("plot step must be positive".into()));
    }
    if instants.first() != Some(&0.0) || instants.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidModel("sampling instants must start at 0 and increase strictly".into()));
    }
    let (step_a, step_b) = plant.discretize(dt_plot);
    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut inputs = Vec::new();
    let mut sampled_states = vec![x0.clone()];
    let mut x_k = x0.clone();
    let mut grid_index: u64 = 0;
    for w in instants.windows(2) {
        let (t_k, t_next) = (w[0], w[1]);
        let u_k = gain * &x_k;
        // first grid point inside [t_k, t_next)
        let mut t = grid_index as f64 * dt_plot;
        let mut x: Option<Vector> = None;
        while t < t_next {
            let state = match x.take() {
                None => {
                    let tau = t - t_k;
                    if tau == 0.0 {
                        x_k.clone()
                    } else {
                        let (a, b) = plant.discretize(tau);
                        &a * &x_k + &b * &u_k
                    }
                }
                Some(prev) => &step_a * &prev + &step_b * &u_k,
            };
            times.push(t);
            inputs.push(u_k.clone());
            states.push(state.clone());
            x = Some(state);
            grid_index += 1;
            t = grid_index as f64 * dt_plot;
        }
        let (a, b) = plant.discretize(t_next - t_k);
        x_k = &a * &x_k + &b * &u_k;
        sampled_states.push(x_k.clone());
    }
    if times.is_empty() {
        times.push(0.0);
        states.push(x0.clone());
        inputs.push(gain * x0);
    }
    Ok(IntersampleTrajectory {
        times,
        states,
        inputs,
        sampled_states,
    })
}

/// Continuous state at time `t` given the sampled states and instants.
pub fn state_at(plant: &ContinuousPlant, gain: &Mat, instants: &[f64], sampled: &[Vector], t: f64) -> Vector {
    let k = match instants.iter().rposition(|&tk| tk <= t) {
        Some(k) if k < sampled.len() => k,
        _ => 0,
    };
    let tau = t - instants[k];
    if tau == 0.0 {
        return sampled[k].clone();
    }
    let u = gain * &sampled[k];
    let (a, b) = plant.discretize(tau);
    &a * &sampled[k] + &b * &u
}

/// One sampling sequence and the trajectory it produces.
#[derive(Debug, Clone, PartialEq)]
pub struct IntersamplePath {
    pub instants: Vec<f64>,
    pub trajectory: IntersampleTrajectory,
}

impl IntersamplePath {
    pub fn state_at(&self, plant: &ContinuousPlant, gain: &Mat, t: f64) -> Vector {
        state_at(plant, gain, &self.instants, &self.trajectory.sampled_states, t)
    }
}

/// `n_paths` independent closed-loop responses over `[0, t_end]`; path `p`
/// draws its intervals from `SampleStream::substream(seed, p)`.
#[allow(clippy::too_many_arguments)]
pub fn intersample_ensemble(
    plant: &ContinuousPlant,
    law: &IntervalLaw,
    dist: &DistributionSpec,
    gain: &Mat,
    x0: &Vector,
    n_paths: usize,
    seed: u64,
    t_end: f64,
    dt_plot: f64,
) -> Result<Vec<IntersamplePath>> {
    (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = SampleStream::substream(seed, p as u64);
            let instants = sample_instants(law, dist, &mut rng, t_end);
            let trajectory = intersample_trajectory(plant, gain, &instants, x0, dt_plot)?;
            Ok(IntersamplePath { instants, trajectory })
        })
        .collect()
}
