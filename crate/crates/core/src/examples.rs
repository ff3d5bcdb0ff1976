//! The two worked systems shipped with the CLI.

use crate::dist::{DistributionSpec, ScalarDistribution};
use crate::linalg::Mat;
use crate::sampled::{ContinuousPlant, IntervalLaw};
use crate::sysmodel::{PolyEntry, SystemModel};

/// 3-state polynomial-entry system driven by `xi_1 ~ N(0, 0.2^2)` and
/// `xi_2 ~ U(-0.5, 0.5)`.
pub fn three_state_model() -> SystemModel {
    let dist = DistributionSpec::new(vec![
        ScalarDistribution::Normal { mean: 0.0, stddev: 0.2 },
        ScalarDistribution::Uniform { lo: -0.5, hi: 0.5 },
    ])
    .expect("valid distribution");
    let e = |terms: &[(f64, [u32; 2])]| {
        PolyEntry::new(terms.iter().map(|(c, a)| (*c, a.to_vec())).collect(), 2).expect("valid entry")
    };
    let c = |v: f64| PolyEntry::constant(v, 2);
    let grid = vec![
        vec![e(&[(0.3, [0, 0]), (1.0, [0, 1])]), e(&[(0.8, [0, 0]), (1.0, [1, 0])]), c(-0.5)],
        vec![c(0.5), e(&[(0.3, [0, 0]), (1.0, [1, 1])]), e(&[(-1.2, [0, 0]), (1.0, [2, 0])])],
        vec![c(-0.2), c(0.8), c(0.6)],
    ];
    SystemModel::poly(grid, None, dist).expect("valid model")
}

pub fn sampled_plant() -> ContinuousPlant {
    ContinuousPlant::new(
        Mat::from_row_slice(3, 3, &[-4.0, 3.0, -8.0, 3.0, 7.0, -6.0, 0.0, 8.0, -2.0]),
        Mat::from_row_slice(3, 1, &[0.0, 0.0, 1.0]),
    )
    .expect("valid plant")
}

/// Sampled-data plant with `h = 0.01 + xi`, `xi ~ Exp(rate 20)`.
pub fn sampled_data_model() -> SystemModel {
    let dist = DistributionSpec::new(vec![ScalarDistribution::Exponential { rate: 20.0 }]).expect("valid distribution");
    let law = IntervalLaw {
        offset: 0.01,
        scale: 1.0,
        coord: 0,
    };
    SystemModel::sampled(sampled_plant(), law, dist).expect("valid model")
}

/// Gain reported for [`sampled_data_model`] (one optimizer among many).
pub fn reported_gain() -> Mat {
    Mat::from_row_slice(1, 3, &[2.9242, 4.9123, -10.0501])
}

pub const THREE_STATE_LAMBDA: f64 = 0.9219;
pub const THREE_STATE_EMPIRICAL_RATE: f64 = 0.9213;
pub const SAMPLED_DATA_LAMBDA: f64 = 0.9193;
