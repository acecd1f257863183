//! The experiment commands. Each one reads its keys from a [`RunConfig`],
//! runs on the current rayon pool and returns a CSV document.

use std::fmt::Write as _;

use apmc::analysis::{
    coarse_level_threshold, fit_convergence_rates, level_scan, single_level_position_variance, threshold_lhs, AnalysisPoint,
    Threshold,
};
use apmc::coupling::simulate_coupled_pair;
use apmc::estimators::{par_accumulate, MomentStats, QoiKind};
use apmc::kinetics::{InitialVelocity, ModelParams, VelocityDist};
use apmc::mlmc::{run_mlmc, BiasRule, MlmcConfig, MlmcReport, Strategy};
use apmc::rng::StreamFamily;
use apmc::scheme::{simulate_path, step_count};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::{float, Cell, Csv};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    DemoPaths,
    VarianceScan,
    Mlmc,
    ThresholdMap,
    Rates,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::DemoPaths => "demo-paths",
            Command::VarianceScan => "variance-scan",
            Command::Mlmc => "mlmc",
            Command::ThresholdMap => "threshold-map",
            Command::Rates => "rates",
        }
    }
}

/// Result of a command: the CSV, an optional terminal summary, and whether
/// the run reached its target.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub csv: Csv,
    pub summary: Option<String>,
    pub converged: bool,
}

impl Outcome {
    fn done(csv: Csv) -> Self {
        Self {
            csv,
            summary: None,
            converged: true,
        }
    }
}

pub fn run(command: Command, config: &mut RunConfig) -> Result<Outcome, CliError> {
    let mut outcome = match command {
        Command::DemoPaths => demo_paths(config)?,
        Command::VarianceScan => variance_scan(config)?,
        Command::Mlmc => mlmc(config)?,
        Command::ThresholdMap => threshold_map(config)?,
        Command::Rates => rates(config)?,
    };
    let mut head = Csv::new(&[]);
    head.comment(format!("apmc {}", command.name()));
    head.settings(config.resolved());
    outcome.csv.prepend_header(head);
    Ok(outcome)
}

fn model(config: &mut RunConfig, epsilon: f64) -> Result<ModelParams<f64>, CliError> {
    let epsilon = config.get("epsilon", epsilon)?;
    model_at(config, epsilon)
}

/// Model with a given `ε`, reading only the remaining model keys.
fn model_at(config: &mut RunConfig, epsilon: f64) -> Result<ModelParams<f64>, CliError> {
    let v_char = config.get("v_char", 1.0)?;
    let dist = config.get("dist", VelocityDist::TwoSpeed)?;
    let init = config.get("init", InitialVelocity::Equilibrium)?;
    Ok(ModelParams::new(epsilon, v_char, dist)?.with_initial(init))
}

fn family(config: &mut RunConfig) -> Result<StreamFamily, CliError> {
    Ok(StreamFamily::new(config.get("seed", 0u64)?))
}

fn positive_samples(config: &mut RunConfig, default: u64) -> Result<u64, CliError> {
    let samples = config.get("samples", default)?;
    if samples == 0 {
        return Err(CliError::invalid("samples", "must be at least 1"));
    }
    Ok(samples)
}

/// One coupled pair's trace and, with more than one sample, the variance
/// of the fine, coarse and difference positions at every output time.
/// With `coupled = false` it traces a single particle at step `dt` instead.
pub fn demo_paths(config: &mut RunConfig) -> Result<Outcome, CliError> {
    let model = model(config, 0.5)?;
    if !config.get_bool("coupled", true)? {
        return single_path(config, &model);
    }
    let dt_fine = config.get("dt_fine", 0.2)?;
    let m = config.get("m_factor", 5u32)?;
    let t_end = config.get("t_end", 10.0)?;
    let samples = positive_samples(config, 1)?;
    let trace = config.get_bool("trace", true)?;
    let family = family(config)?;

    if m < 2 {
        return Err(CliError::invalid("m_factor", format!("must be >= 2, got {m}")));
    }
    let blocks = step_count(t_end, m as f64 * dt_fine).map_err(|e| CliError::invalid("t_end", e.to_string()))?;
    let with_variance = samples > 1;
    let mut columns = vec!["time"];
    if trace || !with_variance {
        columns.extend(["x_fine", "v_fine", "x_coarse", "v_coarse", "fine_collided", "coarse_collided"]);
    }
    if with_variance {
        columns.extend(["var_fine", "var_fine_se", "var_coarse", "var_coarse_se", "var_diff", "var_diff_se"]);
    }
    let mut csv = Csv::new(&columns);
    if blocks == 0 {
        return Ok(Outcome::done(csv));
    }

    let first = simulate_coupled_pair(&model, dt_fine, m, t_end, &mut family.stream(0), true)?;
    let rows = first.trace.expect("trace requested");
    let curves = with_variance.then(|| {
        par_accumulate(
            0,
            samples,
            || vec![[MomentStats::<f64>::new(); 3]; rows.len()],
            |acc, i| {
                let out = simulate_coupled_pair(&model, dt_fine, m, t_end, &mut family.stream(i), true)
                    .expect("parameters were validated by the first pair");
                for (slot, row) in acc.iter_mut().zip(out.trace.expect("trace requested")) {
                    slot[0].push(row.fine.x);
                    slot[1].push(row.coarse.x);
                    slot[2].push(row.fine.x - row.coarse.x);
                }
            },
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(&b) {
                    for k in 0..3 {
                        x[k] = x[k].merge(&y[k]);
                    }
                }
                a
            },
        )
    });

    for (k, row) in rows.iter().enumerate() {
        let mut cells: Vec<Cell> = vec![row.time.into()];
        if trace || !with_variance {
            cells.extend([
                row.fine.x.into(),
                row.fine.v.into(),
                row.coarse.x.into(),
                row.coarse.v.into(),
                row.fine_collided.into(),
                row.coarse_collided.into(),
            ]);
        }
        if let Some(curves) = &curves {
            for s in &curves[k] {
                cells.push(s.variance().into());
                cells.push(s.variance_std_error().into());
            }
        }
        csv.row(cells);
    }
    Ok(Outcome::done(csv))
}

fn single_path(config: &mut RunConfig, model: &ModelParams<f64>) -> Result<Outcome, CliError> {
    let dt = config.get("dt", 0.2)?;
    let t_end = config.get("t_end", 10.0)?;
    let family = family(config)?;
    let mut csv = Csv::new(&["step_index", "time", "x", "v", "collided"]);
    let out = simulate_path(model, dt, t_end, &mut family.stream(0), true)?;
    for row in out.trace.expect("trace requested") {
        csv.row(vec![row.step.into(), row.time.into(), row.state.x.into(), row.state.v.into(), row.collided.into()]);
    }
    Ok(Outcome::done(csv))
}

/// Level statistics over `Δt_ℓ = Δt₀ M^{-ℓ}` with the Lipschitz bound overlay.
///
/// For the `x²` quantity from an equilibrium start the exact level means are
/// known, and the `*_exact` columns carry them next to the sampled ones;
/// otherwise those columns are `nan`.
pub fn variance_scan(config: &mut RunConfig) -> Result<Outcome, CliError> {
    let model = model(config, 1.0)?;
    let t_end = config.get("t_end", 5.0)?;
    let m = config.get("m_factor", 2u32)?;
    let dt0 = config.get("dt0", 2.5)?;
    let level_min = config.get("level_min", 1usize)?;
    let level_max = config.get("level_max", 10usize)?;
    let qoi = config.get("qoi", QoiKind::XSquared)?;
    let samples = positive_samples(config, 10_000)?;
    let k_x = config.get("k_x", 1.0)?;
    let k_v = config.get("k_v", 0.0)?;
    let family = family(config)?;

    if level_min == 0 {
        return Err(CliError::invalid("level_min", "scans start at level 1"));
    }
    if level_max < level_min {
        return Err(CliError::invalid("level_max", format!("empty level range {level_min}..={level_max}")));
    }
    let scan = level_scan(&model, t_end, m, dt0, level_min..=level_max, qoi, samples, &family)?;
    let mut csv = Csv::new(&[
        "level",
        "dt",
        "dt_over_eps2",
        "fine_mean",
        "fine_mean_se",
        "fine_mean_exact",
        "fine_var",
        "coarse_mean",
        "coarse_var",
        "diff_mean",
        "diff_mean_se",
        "diff_mean_exact",
        "diff_var",
        "diff_var_se",
        "bound",
    ]);
    let exact_known = qoi == QoiKind::XSquared && model.initial == InitialVelocity::Equilibrium;
    let second_moment = |dt: f64| -> Result<f64, CliError> {
        Ok(if exact_known { single_level_position_variance(model.epsilon, model.v_char, dt, t_end)? } else { f64::NAN })
    };
    for row in &scan {
        let point = AnalysisPoint::new(model.epsilon, model.v_char, row.dt_fine, m, t_end)?;
        let fine_exact = second_moment(row.dt_fine)?;
        let coarse_exact = second_moment(row.dt_fine * m as f64)?;
        let bound = apmc::analysis::variance_bound(&point, k_x, k_v)?;
        let s = &row.stats;
        csv.row(vec![
            row.level.into(),
            row.dt_fine.into(),
            (row.dt_fine / model.eps2()).into(),
            s.fine.mean.into(),
            s.fine.std_error().into(),
            fine_exact.into(),
            s.fine.variance().into(),
            s.coarse.mean.into(),
            s.coarse.variance().into(),
            s.difference.mean.into(),
            s.difference.std_error().into(),
            (fine_exact - coarse_exact).into(),
            s.difference.variance().into(),
            s.difference.variance_std_error().into(),
            bound.into(),
        ]);
    }
    Ok(Outcome::done(csv))
}

/// First scan level whose step is at most `ratio · ε²`.
pub fn first_tail_level(dt0: f64, m: u32, eps2: f64, ratio: f64) -> Option<usize> {
    (1..=64usize).find(|&l| dt0 / (m as f64).powi(l as i32) <= ratio * eps2 * (1.0 + 1e-12))
}

/// Fitted decay rates of the level differences in the small-step tail,
/// one row per `ε`.
pub fn rates(config: &mut RunConfig) -> Result<Outcome, CliError> {
    let epsilons = config.get_list("epsilons", &[10.0, 1.0, 0.1])?;
    let base = model_at(config, 1.0)?;
    let t_end = config.get("t_end", 5.0)?;
    let m = config.get("m_factor", 2u32)?;
    let dt0 = config.get("dt0", 2.5)?;
    let qoi = config.get("qoi", QoiKind::XSquared)?;
    let samples = positive_samples(config, 10_000)?;
    let tail_ratio = config.get("tail_ratio", 0.125)?;
    let tail_points = config.get("tail_points", 6usize)?;
    let family = family(config)?;

    if epsilons.is_empty() {
        return Err(CliError::invalid("epsilons", "no values given"));
    }
    if tail_points < 3 {
        return Err(CliError::invalid("tail_points", "a slope needs at least 3 points"));
    }
    let mut csv = Csv::new(&[
        "epsilon",
        "level_first",
        "level_last",
        "dt_first",
        "dt_last",
        "alpha",
        "beta",
        "gamma",
        "alpha_max_residual",
        "beta_max_residual",
    ]);
    for (k, &eps) in epsilons.iter().enumerate() {
        let model = ModelParams::new(eps, base.v_char, base.dist)?.with_initial(base.initial);
        let first = first_tail_level(dt0, m, model.eps2(), tail_ratio)
            .ok_or_else(|| CliError::invalid("epsilons", format!("no scan level reaches Δt <= {tail_ratio} ε² for ε = {eps}")))?;
        let last = first + tail_points - 1;
        let scan = level_scan(&model, t_end, m, dt0, first..=last, qoi, samples, &family.with_domain(k as u32))?;
        let points: Vec<(f64, f64, f64)> = scan.iter().map(|r| r.rate_point()).collect();
        let fit = fit_convergence_rates(&points, m)?;
        let worst = |r: &[f64]| r.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        csv.row(vec![
            eps.into(),
            first.into(),
            last.into(),
            scan[0].dt_fine.into(),
            scan[scan.len() - 1].dt_fine.into(),
            fit.alpha.into(),
            fit.beta.into(),
            fit.gamma.into(),
            worst(&fit.alpha_residuals).into(),
            worst(&fit.beta_residuals).into(),
        ]);
    }
    Ok(Outcome::done(csv))
}

/// Adaptive multilevel run, reported in the layout of the result tables.
pub fn mlmc(config: &mut RunConfig) -> Result<Outcome, CliError> {
    let model = model(config, 0.1)?;
    let t_end = config.get("t_end", 0.5)?;
    let m = config.get("m_factor", 2u32)?;
    let strategy = config.get("strategy", Strategy::GeometricFromEps2)?;
    let rmse = config.get("rmse", 0.1)?;
    let qoi = config.get("qoi", QoiKind::XSquared)?;
    let bias_rule = config.get("bias_rule", BiasRule::LastTwoLevels)?;
    let max_levels = config.get("max_levels", 16usize)?;
    let initial = match config.raw("initial_samples") {
        Some(_) => Some(config.get("initial_samples", 0u64)?),
        None => None,
    };
    let family = family(config)?;

    let mut mc = MlmcConfig::new(model, t_end, m, strategy, rmse);
    mc.qoi = qoi;
    mc.bias_rule = bias_rule;
    mc.max_levels = max_levels;
    mc.initial_samples = initial;
    let outcome = run_mlmc(&mc, &family)?;
    let converged = outcome.converged();
    let report = outcome.into_report();

    let mut csv = Csv::new(&[
        "level",
        "dt",
        "samples",
        "fine_var",
        "mean_diff",
        "var_diff",
        "estimator_var",
        "cost",
        "level_cost",
    ]);
    for row in &report.levels {
        csv.row(vec![
            row.spec.index.into(),
            row.spec.dt.into(),
            row.samples.into(),
            row.fine_variance.into(),
            row.mean_diff.into(),
            row.var_diff.into(),
            row.estimator_variance.into(),
            row.spec.cost.into(),
            row.level_cost.into(),
        ]);
    }
    csv.row(vec![
        "total".into(),
        f64::NAN.into(),
        report.levels.iter().map(|r| r.samples).sum::<u64>().into(),
        f64::NAN.into(),
        report.estimate.into(),
        f64::NAN.into(),
        report.variance_sum.into(),
        f64::NAN.into(),
        report.total_cost.into(),
    ]);
    for (key, value) in [
        ("estimate", report.estimate),
        ("variance_sum", report.variance_sum),
        ("total_cost", report.total_cost),
        ("bias_estimate", report.bias_estimate),
        ("bias_proxy", report.bias_proxy()),
        ("alpha", report.alpha),
        ("beta", report.beta),
        ("classical_cost", report.classical_cost),
        ("speedup", report.speedup),
    ] {
        csv.comment(format!("result {key} = {}", float(value)));
    }
    csv.comment(format!("result iterations = {}", report.iterations));
    csv.comment(format!("result converged = {converged}"));
    Ok(Outcome {
        csv,
        summary: Some(summary_table(&report, converged)),
        converged,
    })
}

/// Plain-text version of the report for terminals.
pub fn summary_table(report: &MlmcReport<f64>, converged: bool) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:>3} {:>10} {:>9} {:>10} {:>11} {:>10} {:>10} {:>8} {:>10}",
        "l", "dt", "P", "V[F]", "E[dF]", "V[dF]", "V[Y]", "C", "P*C"
    );
    for r in &report.levels {
        let _ = writeln!(
            s,
            "{:>3} {:>10.3e} {:>9} {:>10.3e} {:>11.3e} {:>10.3e} {:>10.3e} {:>8.2} {:>10.0}",
            r.spec.index, r.spec.dt, r.samples, r.fine_variance, r.mean_diff, r.var_diff, r.estimator_variance, r.spec.cost, r.level_cost
        );
    }
    let _ = writeln!(s, "estimate {:.6} (rmse target {}), sum V[Y] = {:.3e}", report.estimate, report.rmse_target, report.variance_sum);
    let _ = writeln!(s, "total cost {:.0}, classical cost {:.0}, speedup {:.2}", report.total_cost, report.classical_cost, report.speedup);
    let _ = writeln!(
        s,
        "{} after {} iterations (bias proxy {:.3e})",
        if converged { "converged" } else { "NOT converged" },
        report.iterations,
        report.bias_proxy()
    );
    s
}

fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        n => (0..n)
            .map(|i| 10f64.powf(lo.log10() + (hi.log10() - lo.log10()) * i as f64 / (n - 1) as f64))
            .collect(),
    }
}

/// Coarse-level threshold root over a log-spaced `(ε, t*)` grid, with the
/// sign of the left-hand side at `M = 6` and `M = 13`.
pub fn threshold_map(config: &mut RunConfig) -> Result<Outcome, CliError> {
    let v_char = config.get("v_char", 1.0)?;
    let eps_min: f64 = config.get("eps_min", 0.01)?;
    let eps_max: f64 = config.get("eps_max", 1.0)?;
    let eps_count = config.get("eps_count", 10usize)?;
    let t_min: f64 = config.get("t_min", 1.0)?;
    let t_max: f64 = config.get("t_max", 100.0)?;
    let t_count = config.get("t_count", 10usize)?;
    for (key, lo, hi) in [("eps_min", eps_min, eps_max), ("t_min", t_min, t_max)] {
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(CliError::invalid(key, format!("need 0 < min <= max, got {lo}..{hi}")));
        }
    }
    let mut csv = Csv::new(&["epsilon", "t_end", "has_root", "root", "lhs_at_6", "lhs_at_13"]);
    for eps in log_grid(eps_min, eps_max, eps_count) {
        for t in log_grid(t_min, t_max, t_count) {
            let threshold = coarse_level_threshold(eps, v_char, t, eps * eps)?;
            let (has_root, root) = match threshold {
                Threshold::Root(r) => (true, r),
                Threshold::NoRoot { .. } => (false, f64::NAN),
            };
            csv.row(vec![
                eps.into(),
                t.into(),
                has_root.into(),
                root.into(),
                threshold_lhs(eps, v_char, t, 6.0)?.into(),
                threshold_lhs(eps, v_char, t, 13.0)?.into(),
            ]);
        }
    }
    Ok(Outcome::done(csv))
}
