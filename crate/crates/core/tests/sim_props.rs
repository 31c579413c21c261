use fieldsense::estimation::{solve_protocol, unentangled_weights, EstimationProblem};
use fieldsense::sim::{
    phase_variance, simulate_ghz_linear, simulate_ghz_linear_referenced,
    simulate_unentangled_referenced, ShotPlan,
};
use nalgebra::DVector;
use proptest::prelude::*;

fn toy() -> EstimationProblem {
    EstimationProblem::from_rows(
        &[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]],
        &[1.0, 0.0],
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn same_seed_same_samples(seed in any::<u64>(), x in -0.5f64..0.5, y in -0.5f64..0.5) {
        let p = toy();
        let w = solve_protocol(&p).unwrap().w0;
        let f = p.matrix() * DVector::from_vec(vec![x, y]);
        let plan = ShotPlan::new(1.0, 1000, seed).with_repetitions(16);
        let a = simulate_ghz_linear(&f, &w, &plan).unwrap();
        let b = simulate_ghz_linear(&f, &w, &plan).unwrap();
        prop_assert_eq!(&a.samples, &b.samples);
        // a prefix of repetitions does not depend on how many follow
        let c = simulate_ghz_linear(&f, &w, &plan.clone().with_repetitions(4)).unwrap();
        prop_assert_eq!(&a.samples[..4], &c.samples[..]);
    }

    #[test]
    fn phase_variance_is_symmetric(phi in -1.5f64..1.5) {
        let a = phase_variance(phi, 500, 500);
        let b = phase_variance(-phi, 500, 500);
        prop_assert!((a - b).abs() <= 1e-15 * a);
        // with an even split the variance lies between its values at pi/4 and 0
        prop_assert!(a <= phase_variance(0.0, 500, 500) * (1.0 + 1e-12));
        prop_assert!(a >= phase_variance(std::f64::consts::FRAC_PI_4, 500, 500) * (1.0 - 1e-12));
    }
}

#[test]
fn entangled_beats_unentangled_by_eight_thirds() {
    let p = toy();
    let w = solve_protocol(&p).unwrap().w0;
    let (w2, _) = unentangled_weights(&p).unwrap();
    let theta = DVector::from_vec(vec![0.3, -0.2]);
    let f = p.matrix() * &theta;
    let plan = ShotPlan::new(1.0, 100_000, 5).with_repetitions(4000);
    // referencing every phase to the truth puts both estimators at the optimal operating point
    let lambda = (&w / w.amax()).dot(&f);
    let ghz = simulate_ghz_linear_referenced(&f, &w, lambda, &plan).unwrap();
    let unent = simulate_unentangled_referenced(&f, &w2, &f, &plan).unwrap();
    let theory = unent.theoretical_variance / ghz.theoretical_variance;
    assert!((theory - 8.0 / 3.0).abs() < 1e-9, "{theory}");
    let ratio = unent.empirical_variance / ghz.empirical_variance;
    assert!((ratio / (8.0 / 3.0) - 1.0).abs() < 0.15, "{ratio}");
    assert!((ghz.q_hat - 0.3).abs() < 4.0 * ghz.standard_error());
    assert!((unent.q_hat - 0.3).abs() < 4.0 * unent.standard_error());
}
