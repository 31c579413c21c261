use fieldsense::estimation::{
    generator_seminorm, min_singular_value, random_instance, solve_bound, solve_dual,
    solve_protocol, EstimationProblem,
};
use fieldsense::field::GradientMatrix;
use fieldsense::oracle::{
    enumerate_dual_vertices, feasible_beta_from, random_feasible_beta, ZERO_ROW_TOL,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn instance(seed: u64, max_d: usize, max_k: usize) -> EstimationProblem {
    random_instance(&mut ChaCha8Rng::seed_from_u64(seed), max_d, max_k)
}

fn tol(u: f64) -> f64 {
    1e-8 * u.max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn three_formulations_agree(seed in any::<u64>()) {
        let p = instance(seed, 10, 5);
        let u = solve_bound(&p).unwrap().u;
        let w = solve_protocol(&p).unwrap();
        let v = solve_dual(&p).unwrap();
        prop_assert!((u - w.u_prime).abs() <= tol(u), "u={u} u'={}", w.u_prime);
        prop_assert!((w.u_prime - v.u_dprime).abs() <= tol(u), "u'={} u''={}", w.u_prime, v.u_dprime);
    }

    #[test]
    fn lp_matches_vertex_enumeration(seed in any::<u64>()) {
        let p = instance(seed, 12, 4);
        let v = solve_dual(&p).unwrap();
        let c = enumerate_dual_vertices(p.g(), p.alpha()).unwrap();
        prop_assert!((c.value - v.u_dprime).abs() <= tol(c.value), "{} vs {}", c.value, v.u_dprime);
        // the certificate is dual feasible and has k - 1 zero rows
        let gv = p.matrix() * &c.v;
        prop_assert!(gv.abs().sum() <= 1.0 + 1e-9);
        prop_assert!(c.zero_rows.len() == p.params() - 1);
        for &i in &c.zero_rows {
            prop_assert!(gv[i].abs() <= ZERO_ROW_TOL);
        }
    }

    #[test]
    fn weak_duality_and_holder(seed in any::<u64>(), draws in prop::collection::vec(any::<u64>(), 20)) {
        let p = instance(seed, 8, 4);
        let u = solve_protocol(&p).unwrap().u_prime;
        for s in draws {
            let beta = random_feasible_beta(p.alpha(), s);
            prop_assert!((p.alpha().dot(&beta) - 1.0).abs() <= 1e-9);
            prop_assert!(1.0 / generator_seminorm(p.g(), &beta) <= u + 1e-9);
        }
        // any feasible dual point is below any feasible weight vector
        let v = solve_dual(&p).unwrap().v0;
        let w = solve_protocol(&p).unwrap().w0;
        prop_assert!(p.alpha().dot(&v) <= w.amax() + 1e-9);
        prop_assert!((p.matrix().transpose() * &w - p.alpha()).amax() <= 1e-8);
    }

    #[test]
    fn homogeneous_in_alpha(seed in any::<u64>(), c in 0.05f64..20.0) {
        let p = instance(seed, 8, 4);
        let u = solve_protocol(&p).unwrap().u_prime;
        let uc = solve_protocol(&p.scaled(c).unwrap()).unwrap().u_prime;
        prop_assert!((uc - c * u).abs() <= 1e-8 * (c * u).max(1.0));
        // scaling G by c divides the optimum by c
        let pg = EstimationProblem::new(GradientMatrix::from_matrix(p.matrix() * c), p.alpha().clone()).unwrap();
        let ug = solve_protocol(&pg).unwrap().u_prime;
        prop_assert!((ug * c - u).abs() <= 1e-8 * u.max(1.0));
    }

    #[test]
    fn invariant_under_row_permutation(seed in any::<u64>(), shift in 1usize..10) {
        let p = instance(seed, 10, 4);
        let d = p.sensors();
        let perm: Vec<usize> = (0..d).map(|i| (i + shift) % d).collect();
        let g = DMatrix::from_fn(d, p.params(), |i, j| p.matrix()[(perm[i], j)]);
        let q = EstimationProblem::new(GradientMatrix::from_matrix(g), p.alpha().clone()).unwrap();
        let a = solve_protocol(&p).unwrap();
        let b = solve_protocol(&q).unwrap();
        prop_assert!((a.u_prime - b.u_prime).abs() <= tol(a.u_prime));
        prop_assert!((solve_bound(&q).unwrap().u - a.u_prime).abs() <= tol(a.u_prime));
    }

    #[test]
    fn primal_vertex_is_feasible_and_optimal(seed in any::<u64>()) {
        let p = instance(seed, 10, 5);
        let b = solve_bound(&p).unwrap();
        prop_assert!((p.alpha().dot(&b.beta0) - 1.0).abs() <= 1e-9);
        let value = 1.0 / generator_seminorm(p.g(), &b.beta0);
        prop_assert!((value - b.u).abs() <= tol(b.u));
    }
}

#[test]
fn generated_instances_are_well_conditioned() {
    for seed in 0..50 {
        let p = instance(seed, 10, 5);
        assert!(p.sensors() >= p.params());
        assert!(min_singular_value(p.g()) >= 1e-3);
    }
}

#[test]
fn feasible_beta_is_affine_in_z() {
    let alpha = DVector::from_vec(vec![1.0, -2.0, 0.5]);
    let z = DVector::from_vec(vec![0.3, 0.1, -0.7]);
    let b = feasible_beta_from(&alpha, &z);
    assert!((alpha.dot(&b) - 1.0).abs() < 1e-12);
}
