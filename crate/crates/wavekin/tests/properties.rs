//! Structural invariants as randomized properties.

use proptest::prelude::*;

use wavekin::boardgame::{
    applicable_moves, apply_move, default_step_cap, reduce_with, swap_apply, BoardState, Strategy as Order,
};
use wavekin::collision::{eval_l, CollisionConfig, Term};
use wavekin::hierarchy::{hierarchy_collision, random_probes, Marginal};
use wavekin::phase::{transport, weighted_norm, DistributionField, GridLayout, GridSpec, Sampler, WeightParams};
use wavekin::quadrature::{BoxRule, SphereRule, TimeRule};
use wavekin::solver::{min_value, picard_solve, regime_threshold, SolverConfig};
use wavekin::{Exec, Vec3};

fn coarse() -> CollisionConfig {
    CollisionConfig::new(BoxRule::gauss(3.0, 4).unwrap(), SphereRule::product_gauss(2, 4).unwrap())
        .with_exec(Exec::Sequential)
}

fn gaussian(cx: Vec3, cv: Vec3, a: f64) -> DistributionField {
    DistributionField::formula(move |x, v| (-a * (x - cx).norm2() - (v - cv).norm2()).exp())
}

fn vec3(r: f64) -> impl Strategy<Value = Vec3> {
    (-r..r, -r..r, -r..r).prop_map(|(a, b, c)| Vec3::new(a, b, c))
}

fn tiny_solver() -> SolverConfig {
    let w = WeightParams::default();
    SolverConfig {
        weights: w,
        grid: GridSpec::homogeneous(4.0, 4, GridLayout::CellCentered).unwrap(),
        collision: CollisionConfig::new(BoxRule::gauss(4.0, 4).unwrap(), SphereRule::product_gauss(2, 4).unwrap())
            .with_exec(Exec::Sequential),
        time: TimeRule::composite_gauss(1.0, 1, 2).unwrap(),
        ball_radius: 0.9 * regime_threshold(&w).unwrap(),
        max_iterations: 40,
        tolerance: 1e-13,
        enforce_regime: true,
        seed: 3,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn norm_is_homogeneous(c in -5.0f64..5.0, cv in vec3(1.0), seed in 0u64..100) {
        let w = WeightParams::default();
        let f = gaussian(Vec3::ZERO, cv, 0.5);
        let sampler = Sampler::random_only(3.0, 4.0, 256, seed);
        let a = weighted_norm(&f.scaled(c), &w, &sampler).unwrap();
        let b = c.abs() * weighted_norm(&f, &w, &sampler).unwrap();
        prop_assert!((a - b).abs() <= 1e-14 * b.max(1e-300));
    }

    #[test]
    fn transport_round_trip_is_isometric(s in -3.0f64..3.0, cx in vec3(1.0), seed in 0u64..100) {
        let w = WeightParams::default();
        let f = gaussian(cx, Vec3::new(0.2, 0.0, 0.0), 0.7);
        let sampler = Sampler::random_only(3.0, 4.0, 256, seed);
        let back = transport(&transport(&f, -s), s);
        prop_assert_eq!(
            weighted_norm(&back, &w, &sampler).unwrap(),
            weighted_norm(&f, &w, &sampler).unwrap()
        );
    }

    #[test]
    fn transport_of_tensor_is_tensor_of_transport(s in -2.0f64..2.0, k in 1usize..4, seed in 0u64..100) {
        let f = gaussian(Vec3::new(0.1, 0.0, -0.2), Vec3::new(0.0, 0.3, 0.0), 0.6);
        let a = Marginal::tensor(f.clone(), k).unwrap().transport(s);
        let b = Marginal::tensor(transport(&f, s), k).unwrap();
        for (xs, vs) in random_probes(k, 4, 2.0, 2.0, seed) {
            let (x, y) = (a.eval(&xs, &vs), b.eval(&xs, &vs));
            prop_assert!((x - y).abs() <= 1e-14 * x.abs().max(y.abs()).max(1e-300));
        }
    }

    #[test]
    fn collision_forms_are_trilinear(j in 0usize..4, a in -2.0f64..2.0, b in -2.0f64..2.0, v in vec3(2.0)) {
        let cfg = coarse();
        let term = Term::from_index(j).unwrap();
        let g1 = |u: Vec3| (-(u - Vec3::new(0.3, 0.0, 0.0)).norm2()).exp();
        let g2 = |u: Vec3| 1.0 / (1.0 + u.norm2()).powi(2);
        let h = |u: Vec3| (-0.5 * u.norm2()).exp();
        let mix = |u: Vec3| a * g1(u) + b * g2(u);
        let scale = eval_l(term, g1, h, h, v, &cfg).abs() + eval_l(term, g2, h, h, v, &cfg).abs();
        let tol = 1e-12 * (a.abs() + b.abs() + 1.0) * scale.max(1e-300);
        for slot in 0..3 {
            let (lhs, r1, r2) = match slot {
                0 => (eval_l(term, mix, h, h, v, &cfg), eval_l(term, g1, h, h, v, &cfg), eval_l(term, g2, h, h, v, &cfg)),
                1 => (eval_l(term, h, mix, h, v, &cfg), eval_l(term, h, g1, h, v, &cfg), eval_l(term, h, g2, h, v, &cfg)),
                _ => (eval_l(term, h, h, mix, v, &cfg), eval_l(term, h, h, g1, v, &cfg), eval_l(term, h, h, g2, v, &cfg)),
            };
            prop_assert!((lhs - (a * r1 + b * r2)).abs() <= tol, "slot {slot}: {lhs} vs {}", a * r1 + b * r2);
        }
    }

    #[test]
    fn nonnegative_inputs_give_nonnegative_forms(j in 0usize..4, c in vec3(1.0), v in vec3(3.0)) {
        let cfg = coarse();
        let g = move |u: Vec3| (-(u - c).norm2()).exp();
        let h = |u: Vec3| 1.0 / (1.0 + u.norm2());
        prop_assert!(eval_l(Term::from_index(j).unwrap(), g, h, g, v, &cfg) >= 0.0);
    }

    #[test]
    fn rayleigh_jeans_profiles_are_annihilated(
        a in 0.5f64..2.0,
        b in vec3(0.2),
        c in 0.5f64..2.0,
        v in vec3(3.0),
    ) {
        let cfg = coarse();
        let f = DistributionField::velocity_only(move |u| 1.0 / (a + b.dot(u) + c * u.norm2()));
        let r = wavekin::collision::eval_c_parts(&f, Vec3::ZERO, v, &cfg);
        prop_assert!(r.total.abs() <= 1e-12 * r.gain, "{r:?}");
    }

    #[test]
    fn hierarchy_collision_is_linear_in_mixtures(w0 in 0.0f64..1.0, k in 1usize..3, term in 0usize..4, seed in 0u64..50) {
        let cfg = coarse();
        let term = Term::from_index(term).unwrap();
        let h0 = gaussian(Vec3::ZERO, Vec3::ZERO, 0.5);
        let h1 = gaussian(Vec3::new(0.2, 0.0, 0.0), Vec3::new(0.0, 0.4, 0.0), 0.8);
        let mix = Marginal::mixture(vec![w0, 1.0 - w0], vec![h0.clone(), h1.clone()], k + 2).unwrap();
        let t0 = Marginal::tensor(h0, k + 2).unwrap();
        let t1 = Marginal::tensor(h1, k + 2).unwrap();
        for (xs, vs) in random_probes(k, 3, 1.0, 1.5, seed) {
            for j in 1..=k {
                let lhs = hierarchy_collision(term, j, &mix, &xs, &vs, &cfg).unwrap();
                let rhs = w0 * hierarchy_collision(term, j, &t0, &xs, &vs, &cfg).unwrap()
                    + (1.0 - w0) * hierarchy_collision(term, j, &t1, &xs, &vs, &cfg).unwrap();
                prop_assert!((lhs - rhs).abs() <= 1e-13 * lhs.abs().max(rhs.abs()).max(1e-300));
            }
        }
    }

    #[test]
    fn moves_strictly_lower_the_potential(k in 1usize..4, n in 2usize..5, seed in 0u64..1000) {
        let s = BoardState::random(k, n, seed).unwrap();
        for j in applicable_moves(&s) {
            let t = apply_move(&s, j).unwrap();
            prop_assert!(t.mu.lex_potential() < s.mu.lex_potential());
        }
    }

    #[test]
    fn reduction_is_strategy_independent(k in 1usize..4, n in 2usize..5, seed in 0u64..1000, r in 0u64..1000) {
        let s = BoardState::random(k, n, seed).unwrap();
        let cap = default_step_cap(k, n).unwrap();
        let ends: Vec<_> = [Order::Smallest, Order::Largest, Order::Random(r)]
            .into_iter()
            .map(|st| reduce_with(&s, st, cap).unwrap().echelon)
            .collect();
        prop_assert!(ends[0].is_echelon());
        prop_assert!(ends.iter().all(|e| *e == ends[0]));
    }

    #[test]
    fn swap_commutes_with_transport(s in -2.0f64..2.0, j in 2usize..5, seed in 0u64..100) {
        let order = j + 3;
        let f = wavekin::boardgame::labeled_gaussian_product(order).unwrap();
        let a = swap_apply(&f.transport(s), j).unwrap();
        let b = swap_apply(&f, j).unwrap().transport(s);
        let twice = swap_apply(&swap_apply(&f, j).unwrap(), j).unwrap();
        for (xs, vs) in random_probes(order, 4, 1.0, 1.5, seed) {
            prop_assert_eq!(a.eval(&xs, &vs), b.eval(&xs, &vs));
            prop_assert_eq!(twice.eval(&xs, &vs), f.eval(&xs, &vs));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn picard_iterates_stay_in_the_ball(fraction in 0.05f64..0.5, shift in 0.0f64..0.8) {
        let cfg = tiny_solver();
        let shape = DistributionField::velocity_only(move |v| (-0.5 * (v - Vec3::new(shift, 0.0, 0.0)).norm2()).exp());
        let n = weighted_norm(&shape, &cfg.weights, &cfg.sampler()).unwrap();
        let f0 = shape.scaled(fraction * cfg.ball_radius / n);
        let (state, report) = picard_solve(&f0, &cfg).unwrap();
        prop_assert!(report.max_iterate_norm <= cfg.ball_radius);
        prop_assert!(report.kappa_hat < 1.0);
        prop_assert!(min_value(&state, &cfg) >= -1e-8 * report.initial_norm);
    }

    #[test]
    fn contraction_improves_with_smaller_data(fraction in 0.2f64..0.5) {
        let cfg = tiny_solver();
        let shape = DistributionField::velocity_only(|v| (-0.5 * v.norm2()).exp());
        let n = weighted_norm(&shape, &cfg.weights, &cfg.sampler()).unwrap();
        let kappa = |frac: f64| picard_solve(&shape.scaled(frac * cfg.ball_radius / n), &cfg).unwrap().1.kappa_hat;
        let (big, small) = (kappa(fraction), kappa(0.25 * fraction));
        prop_assert!(small < big, "{small} vs {big}");
    }
}
