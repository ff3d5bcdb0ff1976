mod common;

use common::*;
use proptest::prelude::*;
use stoch_lyap::analysis::{analyze, build_operator, check_quadratic, lyapunov_certificate, minimal_lambda, special_case_lmi, MomentOperator};
use stoch_lyap::dist::{DistributionSpec, ScalarDistribution};
use stoch_lyap::examples;
use stoch_lyap::linalg::Mat;
use stoch_lyap::moments::second_moment_analytic;
use stoch_lyap::sysmodel::SystemModel;

fn three_state(seed: u64) -> SystemModel {
    let mut r = rng(seed);
    match seed % 3 {
        0 => rand_poly(&mut r, 3, 0, 2),
        1 => rand_affine(&mut r, 3, 0, 2, false),
        _ => rand_switched(&mut r, 3, 0, 3),
    }
}

fn constant_model(a: Mat) -> SystemModel {
    let n = a.nrows();
    let dist = DistributionSpec::new(vec![ScalarDistribution::Constant { value: 0.7 }]).unwrap();
    SystemModel::affine(vec![a, Mat::zeros(n, n)], None, dist).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn minimal_lambda_matches_kronecker_oracle(seed in any::<u64>()) {
        let model = three_state(seed);
        let data = second_moment_analytic(&model).unwrap();
        let rate = minimal_lambda(&build_operator(&data), 1e-10).unwrap();
        let oracle = oracle_lambda(&model, None);
        prop_assert!((rate.lambda - oracle).abs() <= 1e-8 * (1.0 + oracle), "{} vs {oracle}", rate.lambda);
        prop_assert!(rate.rho_lower <= rate.rho * (1.0 + 1e-12) && rate.rho <= rate.rho_upper * (1.0 + 1e-12));
    }

    /// Feasible for some P ≻ 0 at λ iff λ² > ρ(M): 5% above yields a
    /// certificate, 5% below every candidate fails.
    #[test]
    fn quadratic_feasibility_tracks_spectral_radius(seed in any::<u64>()) {
        let model = three_state(seed);
        let data = second_moment_analytic(&model).unwrap();
        let op = build_operator(&data);
        let lam = oracle_lambda(&model, None);
        prop_assume!(lam > 1e-6);

        let above = 1.05 * lam;
        let p = lyapunov_certificate(&op, &data, above).unwrap();
        prop_assert!(min_eig(&p) > 0.0);
        prop_assert!(check_quadratic(&data, &p, above).unwrap().feasible);

        let below = 0.95 * lam;
        prop_assert!(lyapunov_certificate(&op, &data, below).is_err());
        let mut r = rng(seed ^ 0xbee);
        let mut candidates = vec![Mat::identity(3, 3), p.clone()];
        candidates.extend((0..8).map(|_| rand_spd(&mut r, 3, 0.01)));
        for q in candidates {
            let check = check_quadratic(&data, &q, below).unwrap();
            prop_assert!(!check.feasible, "P = {q} passes below the minimal rate, margin {}", check.margin);
        }
    }

    #[test]
    fn feasibility_is_monotone_in_lambda(seed in any::<u64>(), bump in 1e-4f64..0.5) {
        let model = three_state(seed);
        let data = second_moment_analytic(&model).unwrap();
        let lam = 1.02 * oracle_lambda(&model, None) + 1e-3;
        let p = lyapunov_certificate(&build_operator(&data), &data, lam).unwrap();
        prop_assert!(check_quadratic(&data, &p, lam).unwrap().feasible);
        prop_assert!(check_quadratic(&data, &p, lam + bump).unwrap().feasible);
        let q = rand_spd(&mut rng(seed), 3, 0.1);
        let lo = check_quadratic(&data, &q, lam).unwrap().feasible;
        let hi = check_quadratic(&data, &q, lam + bump).unwrap().feasible;
        prop_assert!(!lo || hi);
    }

    #[test]
    fn feasibility_is_scale_invariant(seed in any::<u64>(), log_c in -6.0f64..6.0, rel in 0.8f64..1.3) {
        let model = three_state(seed);
        let data = second_moment_analytic(&model).unwrap();
        let lam = rel * oracle_lambda(&model, None);
        let p = rand_spd(&mut rng(seed ^ 7), 3, 0.05);
        let c = log_c.exp();
        let base = check_quadratic(&data, &p, lam).unwrap();
        let scaled = check_quadratic(&data, &(&p * c), lam).unwrap();
        prop_assert_eq!(base.feasible, scaled.feasible);
    }

    #[test]
    fn deterministic_systems_reduce_to_spectral_radius(seed in any::<u64>(), n in 1usize..5) {
        let a = rand_mat(&mut rng(seed), n, n, 0.8);
        let data = second_moment_analytic(&constant_model(a.clone())).unwrap();
        let rate = minimal_lambda(&build_operator(&data), 1e-12).unwrap();
        let rho = spectral_radius(&a);
        prop_assert!((rate.lambda - rho).abs() <= 1e-10, "{} vs {rho}", rate.lambda);
    }

    /// Operator from general moments vs the weighted-term form and direct
    /// enumeration of `sum_s w_s M_sᵀ P M_s`.
    #[test]
    fn multiplicative_noise_operator(seed in any::<u64>(), n in 2usize..4, z in 1usize..4) {
        let model = rand_affine(&mut rng(seed), n, 0, z, true);
        check_special_case(&model, seed)?;
    }

    #[test]
    fn switched_operator(seed in any::<u64>(), n in 2usize..4, s in 2usize..5) {
        let model = rand_switched(&mut rng(seed), n, 0, s);
        check_special_case(&model, seed)?;
    }
}

fn check_special_case(model: &SystemModel, seed: u64) -> Result<(), TestCaseError> {
    let n = model.n();
    let general = build_operator(&second_moment_analytic(model).unwrap());
    let terms = special_case_lmi(model).unwrap();
    let special = MomentOperator::from_terms(&terms, n).unwrap();
    for k in 0..3 {
        let p = rand_sym(&mut rng(seed ^ k), n, 2.0);
        let oracle = oracle_expected_quadratic(model, None, &p);
        prop_assert!(max_abs(&(general.apply(&p) - &oracle)) <= 1e-10);
        prop_assert!(max_abs(&(special.apply(&p) - &oracle)) <= 1e-10);
    }
    prop_assert!(max_abs(&(general.matrix() - special.matrix())) <= 1e-10);
    Ok(())
}

#[test]
fn scalar_gaussian_gain_gives_its_standard_deviation() {
    for sigma in [0.1, 0.5, 0.9, 1.2] {
        let dist = DistributionSpec::new(vec![ScalarDistribution::Normal { mean: 0.0, stddev: sigma }]).unwrap();
        let model = SystemModel::affine(vec![Mat::zeros(1, 1), Mat::identity(1, 1)], None, dist).unwrap();
        let report = analyze(&second_moment_analytic(&model).unwrap(), 1e-12).unwrap();
        assert!((report.lambda_min - sigma).abs() <= 1e-10, "sigma {sigma}: {}", report.lambda_min);
        assert_eq!(report.stable, sigma < 1.0);
    }
}

#[test]
fn operator_matches_expected_quadratic_on_three_state_example() {
    let data = second_moment_analytic(&examples::three_state_model()).unwrap();
    let op = build_operator(&data);
    for seed in 0..20 {
        let p = rand_sym(&mut rng(seed), 3, 3.0);
        assert!(max_abs(&(op.apply(&p) - data.expected_quadratic(&p).unwrap())) <= 1e-10);
    }
}

#[test]
fn stable_reports_carry_a_positive_certificate() {
    for seed in 0..30 {
        let model = three_state(seed);
        let report = analyze(&second_moment_analytic(&model).unwrap(), 1e-8).unwrap();
        if report.stable {
            assert!(report.lambda_min < 1.0);
            assert!(report.p_min_eigenvalue.unwrap() > 0.0);
            let p = report.p.as_ref().unwrap();
            let data = second_moment_analytic(&model).unwrap();
            assert!(check_quadratic(&data, p, report.certificate_lambda.unwrap()).unwrap().feasible);
        } else {
            assert!(report.lambda_min >= 1.0 - 1e-6);
        }
    }
}

#[test]
fn zero_dynamics() {
    let data = second_moment_analytic(&constant_model(Mat::zeros(2, 2))).unwrap();
    let op = build_operator(&data);
    assert_eq!(minimal_lambda(&op, 1e-6).unwrap().lambda, 0.0);
    let p = lyapunov_certificate(&op, &data, 0.5).unwrap();
    assert!(max_abs(&(p - Mat::identity(2, 2) * 4.0)) <= 1e-12);
}
