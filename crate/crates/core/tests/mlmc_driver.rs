//! End-to-end behaviour of the adaptive multilevel driver.

use apmc::kinetics::ModelParams;
use apmc::mlmc::{BiasRule, MlmcConfig, Strategy, run_mlmc};
use apmc::rng::StreamFamily;

fn config(strategy: Strategy, rmse: f64) -> MlmcConfig<f64> {
    MlmcConfig::new(ModelParams::two_speed(0.1).unwrap(), 0.5, 2, strategy, rmse)
}

#[test]
fn converged_reports_satisfy_their_invariants() {
    for strategy in [Strategy::GeometricFromEps2, Strategy::ExtraCoarseLevel] {
        for rule in [BiasRule::LastTwoLevels, BiasRule::GeometricTail] {
            for seed in 0..4 {
                let mut cfg = config(strategy, 0.1);
                cfg.bias_rule = rule;
                let out = run_mlmc(&cfg, &StreamFamily::new(seed)).unwrap();
                let r = out.report();
                let tag = format!("{strategy}/{rule}/seed {seed}");
                assert!(out.converged(), "{tag}");
                assert!(r.variance_sum < 0.01, "{tag}: Σ V[Ŷ] = {}", r.variance_sum);
                assert!(r.bias_proxy() < 0.1, "{tag}: bias proxy {}", r.bias_proxy());

                let estimate: f64 = r.levels.iter().map(|l| l.mean_diff).sum();
                assert!((estimate - r.estimate).abs() < 1e-12, "{tag}");
                let cost: f64 = r.levels.iter().map(|l| l.level_cost).sum();
                assert!((cost - r.total_cost).abs() <= 1e-9 * cost, "{tag}");
                for l in &r.levels {
                    assert!((l.level_cost - l.samples as f64 * l.spec.cost).abs() <= 1e-9 * l.level_cost);
                    assert!((l.estimator_variance - l.var_diff / l.samples as f64).abs() <= 1e-12);
                }
                assert!(r.levels.windows(2).all(|w| w[1].spec.dt < w[0].spec.dt), "{tag}");
                // the level-0 mean of x² is close to 2 t* D for small ε
                assert!((r.estimate - 1.0).abs() < 0.5, "{tag}: estimate {}", r.estimate);
            }
        }
    }
}

#[test]
fn extra_coarse_level_is_cheaper_on_matched_seeds() {
    let mut cheaper = 0;
    for seed in 0..8 {
        let family = StreamFamily::new(seed);
        let s1 = run_mlmc(&config(Strategy::GeometricFromEps2, 0.1), &family).unwrap();
        let s2 = run_mlmc(&config(Strategy::ExtraCoarseLevel, 0.1), &family).unwrap();
        cheaper += (s2.report().total_cost < s1.report().total_cost) as u32;
    }
    assert!(cheaper >= 6, "strategy 2 cheaper on only {cheaper}/8 seeds");
}

#[test]
fn reports_do_not_depend_on_thread_count() {
    let cfg = config(Strategy::GeometricFromEps2, 0.1);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_mlmc(&cfg, &StreamFamily::new(5)).unwrap())
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn tighter_target_costs_more() {
    let family = StreamFamily::new(3);
    let loose = run_mlmc(&config(Strategy::ExtraCoarseLevel, 0.2), &family).unwrap();
    let tight = run_mlmc(&config(Strategy::ExtraCoarseLevel, 0.05), &family).unwrap();
    assert!(tight.report().total_cost > 2.0 * loose.report().total_cost);
}
