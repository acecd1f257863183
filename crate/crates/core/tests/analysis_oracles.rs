//! Closed-form variances against brute-force Monte Carlo.

use apmc::analysis::{
    AnalysisPoint, Threshold, VarianceKind, brownian_diff_variance, coarse_level_threshold, default_burn_in,
    empirical_increments, leading_order_variance, single_level_position_variance, threshold_lhs,
    transport_diff_variance, variance_bound, velocity_diff_variance,
};
use apmc::estimators::{MomentStats, QoiKind, difference_estimate, par_accumulate};
use apmc::kinetics::ModelParams;
use apmc::rng::StreamFamily;
use apmc::scheme::simulate_path;

const POINTS: [(f64, f64, u32, f64); 3] = [(0.5, 0.2, 5, 10.0), (0.5, 0.04, 5, 10.0), (1.0, 0.1, 2, 2.0)];

#[test]
fn increments_match_closed_forms() {
    for (k, &(eps, dt, m, t)) in POINTS.iter().enumerate() {
        let point = AnalysisPoint::new(eps, 1.0, dt, m, t).unwrap();
        let stats = empirical_increments(
            &point.model(),
            dt,
            m,
            t,
            default_burn_in(&point),
            100_000,
            &StreamFamily::new(k as u64),
        )
        .unwrap();
        let label = format!("ε={eps}, Δt={dt}, M={m}");

        let w = &stats.brownian;
        let analytic = brownian_diff_variance(&point);
        assert!((w.variance() - analytic).abs() <= 3.0 * w.variance_std_error(), "{label}: brownian {} vs {analytic}", w.variance());

        let analytic = transport_diff_variance(&point);
        let tr = stats.transport.variance();
        assert!((tr - analytic).abs() <= 0.1 * analytic, "{label}: transport {tr} vs {analytic}");

        let g = &stats.velocity_gap;
        let analytic = velocity_diff_variance(&point);
        assert!((g.mean - analytic).abs() <= 3.0 * g.std_error(), "{label}: velocity {} vs {analytic}", g.mean);

        for (name, s) in [("brownian", w), ("transport", &stats.transport), ("velocity", &stats.velocity_end)] {
            assert!(s.mean.abs() < 4.0 * s.std_error(), "{label}: {name} mean {} ± {}", s.mean, s.std_error());
        }
        assert_eq!(stats.dominance_violations, 0);
    }
}

#[test]
fn leading_orders_take_over_for_small_steps() {
    for (eps, m, t) in [(0.5, 5, 10.0), (1.0, 2, 2.0), (0.1, 2, 0.5)] {
        let dt = eps * eps * 1e-3;
        let point = AnalysisPoint::continuous(eps, 1.0, dt, m as f64, t).unwrap();
        for (kind, exact) in [
            (VarianceKind::Brownian, brownian_diff_variance(&point)),
            (VarianceKind::Transport, transport_diff_variance(&point)),
            (VarianceKind::Velocity, velocity_diff_variance(&point)),
        ] {
            let ratio = exact / leading_order_variance(kind, &point);
            assert!((0.9..=1.1).contains(&ratio), "ε={eps}, {kind:?}: ratio {ratio}");
        }
    }
}

#[test]
fn single_level_variance_matches_monte_carlo() {
    for (k, (eps, dt, t)) in [(0.5f64, 0.2, 10.0), (1.0, 0.1, 2.0), (0.1, 0.01, 0.5)].into_iter().enumerate() {
        let model = ModelParams::two_speed(eps).unwrap();
        let family = StreamFamily::new(100 + k as u64);
        let stats = par_accumulate(
            0,
            100_000,
            MomentStats::new,
            |acc, i| acc.push(simulate_path(&model, dt, t, &mut family.stream(i), false).unwrap().state.x),
            |a, b| a.merge(&b),
        );
        let analytic = single_level_position_variance(eps, 1.0, dt, t).unwrap();
        let (v, se) = (stats.variance(), stats.variance_std_error());
        assert!((v - analytic).abs() <= 3.0 * se, "ε={eps}, Δt={dt}: {v} ± {se} vs {analytic}");
    }
}

#[test]
fn lipschitz_bound_covers_the_empirical_difference_variance() {
    let (eps, t, m) = (0.1, 5.0, 2);
    let model = ModelParams::two_speed(eps).unwrap();
    let family = StreamFamily::new(7);
    for level in 1..=10 {
        let dt = 2.5 / 2f64.powi(level);
        let point = AnalysisPoint::new(eps, 1.0, dt, m, t).unwrap();
        let bound = variance_bound(&point, 8.0, 0.0).unwrap();
        let d = difference_estimate(&model, dt, m, t, QoiKind::XSquared, 4_000, &family.with_level(level as u32)).unwrap();
        let empirical = d.difference.variance();
        assert!(bound >= empirical, "Δt={dt}: bound {bound} < empirical {empirical}");
    }
}

#[test]
fn threshold_map_stays_in_range() {
    let mut interior = 0;
    for i in 0..10 {
        let eps = 10f64.powf(-2.0 + 2.0 * i as f64 / 9.0);
        for j in 0..10 {
            let t = 10f64.powf(2.0 * j as f64 / 9.0);
            if let Threshold::Root(root) = coarse_level_threshold(eps, 1.0, t, eps * eps).unwrap() {
                interior += 1;
                assert!((5.0..=14.0).contains(&root), "ε={eps}, t*={t}: root {root}");
                assert!(threshold_lhs(eps, 1.0, t, 6.0).unwrap() > 0.0);
                assert!(threshold_lhs(eps, 1.0, t, 13.0).unwrap() < 0.0);
            }
        }
    }
    assert!(interior >= 80, "only {interior} interior roots");
}
