//! Level hierarchies, cost accounting, sample allocation and the adaptive
//! multilevel driver.
//!
//! Costs are measured in units of one trajectory simulated with `Δt = ε²`,
//! so a single trajectory at step `Δt` costs `ε²/Δt` and a coupled pair
//! costs the sum of its two sides.
//!
//! The driver splits the mean squared error budget `E²` evenly between
//! variance and squared bias. Sample counts follow
//! `P_ℓ = ⌈2E⁻² √(V_ℓ/C_ℓ) Σ_k √(V_k C_k)⌉`, and levels are added while the
//! remaining-bias estimate of [`BiasRule`] exceeds `E/√2`.

use crate::error::{Error, Result};
use crate::estimators::{DifferenceLevel, PairStats, QoiKind, SingleLevel};
use crate::kinetics::ModelParams;
use crate::real::Real;
use crate::rng::StreamFamily;
use crate::scheme::step_count;

/// Random-stream domain reserved for the multilevel driver.
pub const MLMC_DOMAIN: u32 = 0x4d4c;

/// How the time steps of the hierarchy are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strategy {
    /// `Δt_ℓ = ε² M^{-ℓ}`.
    #[default]
    GeometricFromEps2,
    /// `Δt_0 = t*`, then `Δt_ℓ = ε² M^{1-ℓ}` for `ℓ ≥ 1`.
    ExtraCoarseLevel,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1" | "geometric" | "geometric_from_eps2" => Ok(Strategy::GeometricFromEps2),
            "2" | "extra_coarse" | "extra_coarse_level" => Ok(Strategy::ExtraCoarseLevel),
            other => Err(Error::invalid(
                "strategy",
                format!("unknown strategy `{other}` (expected geometric or extra_coarse)"),
            )),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::GeometricFromEps2 => "geometric",
            Strategy::ExtraCoarseLevel => "extra_coarse",
        })
    }
}

/// Test used to decide whether the finest level is fine enough.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BiasRule {
    /// `max(|m_L|, |m_{L-1}| M^{-α}) < E/√2`.
    #[default]
    LastTwoLevels,
    /// Remaining bias extrapolated as a geometric tail,
    /// `max_j |m_{L-j}| M^{-αj} / (M^α − 1)` over the last three levels.
    /// Stricter, and more sensitive to noise in the level means.
    GeometricTail,
}

impl std::str::FromStr for BiasRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "geometric_tail" | "tail" => Ok(BiasRule::GeometricTail),
            "last_two" | "last_two_levels" => Ok(BiasRule::LastTwoLevels),
            other => Err(Error::invalid(
                "bias_rule",
                format!("unknown bias rule `{other}` (expected geometric_tail or last_two)"),
            )),
        }
    }
}

impl std::fmt::Display for BiasRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BiasRule::GeometricTail => "geometric_tail",
            BiasRule::LastTwoLevels => "last_two",
        })
    }
}

/// One level of the hierarchy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelSpec<T> {
    pub index: usize,
    pub dt: T,
    /// `N_ℓ = t*/Δt_ℓ`.
    pub steps: usize,
    /// Cost per sample in units of one `Δt = ε²` trajectory.
    pub cost: T,
    pub is_difference: bool,
    /// `Δt_{ℓ-1}/Δt_ℓ` for difference levels.
    pub ratio: Option<u32>,
}

/// Settings of a multilevel run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlmcConfig<T> {
    pub model: ModelParams<T>,
    pub t_end: T,
    pub m_factor: u32,
    pub strategy: Strategy,
    pub rmse_target: T,
    /// Warm-up samples per new level; `None` uses [`warmup_samples`].
    pub initial_samples: Option<u64>,
    pub max_levels: usize,
    pub qoi: QoiKind,
    pub bias_rule: BiasRule,
    /// Fixed weak-error rate `α` (per unit of `log Δt`); fitted when `None`.
    pub alpha: Option<T>,
    /// Fixed variance rate `β`; fitted when `None`.
    pub beta: Option<T>,
}

impl<T: Real> MlmcConfig<T> {
    pub fn new(model: ModelParams<T>, t_end: T, m_factor: u32, strategy: Strategy, rmse_target: T) -> Self {
        Self {
            model,
            t_end,
            m_factor,
            strategy,
            rmse_target,
            initial_samples: None,
            max_levels: 16,
            qoi: QoiKind::XSquared,
            bias_rule: BiasRule::LastTwoLevels,
            alpha: None,
            beta: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.rmse_target > T::zero()) {
            return Err(Error::invalid("rmse", format!("must be > 0, got {}", self.rmse_target)));
        }
        if self.m_factor < 2 {
            return Err(Error::invalid("m_factor", format!("must be >= 2, got {}", self.m_factor)));
        }
        if !(self.t_end.is_finite() && self.t_end > T::zero()) {
            return Err(Error::invalid("t_end", format!("must be finite and > 0, got {}", self.t_end)));
        }
        if self.max_levels < MIN_LEVELS {
            return Err(Error::invalid("max_levels", format!("must be >= {MIN_LEVELS}, got {}", self.max_levels)));
        }
        for (name, rate) in [("alpha", self.alpha), ("beta", self.beta)] {
            if let Some(r) = rate {
                if !(r.is_finite() && r > T::zero()) {
                    return Err(Error::invalid(name, format!("must be finite and > 0, got {r}")));
                }
            }
        }
        if self.initial_samples == Some(0) {
            return Err(Error::invalid("samples", "warm-up sample count must be positive"));
        }
        Ok(())
    }
}

/// Levels the driver starts with.
pub const MIN_LEVELS: usize = 3;

/// Warm-up samples for a new level: 40, 500 and 1000 at `E` = 0.1, 0.01 and
/// 0.001, geometric in between and constant outside that range.
pub fn warmup_samples(rmse_target: f64) -> u64 {
    const ANCHORS: [(f64, f64); 3] = [(0.1, 40.0), (0.01, 500.0), (0.001, 1000.0)];
    if !(rmse_target < ANCHORS[0].0) {
        return ANCHORS[0].1 as u64;
    }
    if rmse_target <= ANCHORS[2].0 {
        return ANCHORS[2].1 as u64;
    }
    let (hi, lo) = if rmse_target >= ANCHORS[1].0 { (ANCHORS[0], ANCHORS[1]) } else { (ANCHORS[1], ANCHORS[2]) };
    let t = (hi.0 / rmse_target).log10() / (hi.0 / lo.0).log10();
    (hi.1 * (lo.1 / hi.1).powf(t)).round() as u64
}

fn integer_ratio<T: Real>(name: &'static str, num: T, den: T) -> Result<u32> {
    let n = step_count(num, den).map_err(|_| {
        Error::invalid(name, format!("{num} / {den} must be a positive whole number"))
    })?;
    if n == 0 || n > u32::MAX as usize {
        return Err(Error::invalid(name, format!("{num} / {den} must be a positive whole number")));
    }
    Ok(n as u32)
}

/// The first `level_count` levels of the configured hierarchy.
pub fn build_levels<T: Real>(config: &MlmcConfig<T>, level_count: usize) -> Result<Vec<LevelSpec<T>>> {
    config.model.validate()?;
    if config.m_factor < 2 {
        return Err(Error::invalid("m_factor", format!("must be >= 2, got {}", config.m_factor)));
    }
    let eps2 = config.model.eps2();
    let m = T::lit(config.m_factor as f64);
    // number of Δt = ε² steps in the horizon
    let base = integer_ratio("t_end", config.t_end, eps2)?;
    // single-trajectory cost and time step of hierarchy position k ≥ 0 below ε²
    let geometric = |k: usize| (eps2 / m.powi(k as i32), m.powi(k as i32));
    let mut levels = Vec::with_capacity(level_count);
    for index in 0..level_count {
        let (dt, single_cost, coarse_cost, ratio) = match (config.strategy, index) {
            (Strategy::GeometricFromEps2, 0) => (eps2, T::one(), T::zero(), None),
            (Strategy::GeometricFromEps2, l) => {
                let (dt, c) = geometric(l);
                (dt, c, geometric(l - 1).1, Some(config.m_factor))
            }
            (Strategy::ExtraCoarseLevel, 0) => (config.t_end, T::lit(1.0 / base as f64), T::zero(), None),
            (Strategy::ExtraCoarseLevel, 1) => (eps2, T::one(), T::lit(1.0 / base as f64), Some(base)),
            (Strategy::ExtraCoarseLevel, l) => {
                let (dt, c) = geometric(l - 1);
                (dt, c, geometric(l - 2).1, Some(config.m_factor))
            }
        };
        levels.push(LevelSpec {
            index,
            dt,
            steps: step_count(config.t_end, dt)?,
            cost: single_cost + coarse_cost,
            is_difference: index > 0,
            ratio,
        });
    }
    Ok(levels)
}

/// `P_ℓ = ⌈2E⁻² √(V_ℓ/C_ℓ) Σ √(V_k C_k)⌉`, at least 1.
pub fn sample_counts<T: Real>(rmse_target: T, variances: &[T], costs: &[T]) -> Result<Vec<u64>> {
    if rmse_target.is_nan() || rmse_target <= T::zero() {
        return Err(Error::invalid("rmse", format!("must be > 0, got {rmse_target}")));
    }
    if variances.len() != costs.len() {
        return Err(Error::invalid("variances", "one variance per cost is required"));
    }
    if variances.iter().any(|v| !(v.is_finite() && *v >= T::zero())) {
        return Err(Error::invalid("variances", "must be finite and >= 0"));
    }
    if costs.iter().any(|c| !(c.is_finite() && *c > T::zero())) {
        return Err(Error::invalid("costs", "must be finite and > 0"));
    }
    let total: f64 = variances.iter().zip(costs).map(|(v, c)| (*v * *c).sqrt().to_f64_lossy()).sum();
    let scale = 2.0 / (rmse_target.to_f64_lossy() * rmse_target.to_f64_lossy());
    Ok(variances
        .iter()
        .zip(costs)
        .map(|(v, c)| {
            let p = scale * (v.to_f64_lossy() / c.to_f64_lossy()).sqrt() * total;
            // shave rounding noise so exact products do not round up
            let p = (p * (1.0 - 1e-12)).ceil();
            if p.is_finite() { p.max(1.0) as u64 } else { 1 }
        })
        .collect())
}

/// Cost of plain Monte Carlo at the finest step reaching the same variance,
/// `⌈V[F̂_L] / Σ V[Ŷ_ℓ]⌉ · (2/3) C_L`, where `(2/3) C_L` is the cost of one
/// uncoupled fine trajectory when `M = 2`.
pub fn classical_equivalent_cost<T: Real>(fine_variance: T, estimator_variance_sum: T, fine_cost: T) -> Result<T> {
    if !(estimator_variance_sum > T::zero()) {
        return Err(Error::invalid(
            "estimator_variance_sum",
            format!("must be > 0, got {estimator_variance_sum}"),
        ));
    }
    let samples = (fine_variance / estimator_variance_sum).ceil().max(T::one());
    Ok(samples * T::lit(2.0 / 3.0) * fine_cost)
}

/// One row of the report, in the column order of the result tables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelRow<T> {
    pub spec: LevelSpec<T>,
    pub samples: u64,
    /// `V[F̂_ℓ]`, variance of the fine-side quantity.
    pub fine_variance: T,
    /// `E[F̂_ℓ − F̂_{ℓ-1}]` (plain mean on level 0).
    pub mean_diff: T,
    /// `V_ℓ = V[F̂_ℓ − F̂_{ℓ-1}]`.
    pub var_diff: T,
    /// `V[Ŷ_ℓ] = V_ℓ / P_ℓ`.
    pub estimator_variance: T,
    pub level_cost: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlmcReport<T> {
    pub rmse_target: T,
    pub levels: Vec<LevelRow<T>>,
    /// `Ŷ = Σ_ℓ mean(Ŷ_ℓ)`.
    pub estimate: T,
    pub variance_sum: T,
    pub total_cost: T,
    /// Extrapolated bias left after the finest level.
    pub bias_estimate: T,
    pub alpha: T,
    pub beta: T,
    pub classical_cost: T,
    pub speedup: T,
    pub iterations: usize,
}

impl<T: Real> MlmcReport<T> {
    /// `|E[F̂_L − F̂_{L-1}]|` at the finest level.
    pub fn bias_proxy(&self) -> T {
        self.levels.last().map(|r| r.mean_diff.abs()).unwrap_or_else(T::zero)
    }

    pub fn finest(&self) -> Option<&LevelRow<T>> {
        self.levels.last()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MlmcOutcome<T> {
    Converged(MlmcReport<T>),
    /// Hit `max_levels` with the bias still above target.
    NotConverged(MlmcReport<T>),
}

impl<T> MlmcOutcome<T> {
    pub fn report(&self) -> &MlmcReport<T> {
        match self {
            MlmcOutcome::Converged(r) | MlmcOutcome::NotConverged(r) => r,
        }
    }

    pub fn into_report(self) -> MlmcReport<T> {
        match self {
            MlmcOutcome::Converged(r) | MlmcOutcome::NotConverged(r) => r,
        }
    }

    pub fn converged(&self) -> bool {
        matches!(self, MlmcOutcome::Converged(_))
    }
}

enum Sampler<T> {
    Single(SingleLevel<T>),
    Difference(DifferenceLevel<T>),
}

struct Level<T> {
    spec: LevelSpec<T>,
    sampler: Sampler<T>,
    family: StreamFamily,
    stats: PairStats<T>,
}

impl<T: Real> Level<T> {
    fn new(config: &MlmcConfig<T>, spec: LevelSpec<T>, family: &StreamFamily) -> Result<Self> {
        let sampler = match spec.ratio {
            None => Sampler::Single(SingleLevel::new(&config.model, spec.dt, config.t_end, config.qoi)?),
            Some(ratio) => Sampler::Difference(DifferenceLevel::new(&config.model, spec.dt, ratio, config.t_end, config.qoi)?),
        };
        Ok(Self {
            spec,
            sampler,
            family: family.with_level(spec.index as u32),
            stats: PairStats::new(),
        })
    }

    fn samples(&self) -> u64 {
        self.stats.difference.count
    }

    fn top_up(&mut self, extra: u64) {
        if extra == 0 {
            return;
        }
        let start = self.samples();
        let batch = match &self.sampler {
            Sampler::Single(s) => {
                let m = s.run(&self.family, start, extra);
                PairStats {
                    difference: m,
                    fine: m,
                    coarse: Default::default(),
                }
            }
            Sampler::Difference(d) => d.run(&self.family, start, extra),
        };
        self.stats = self.stats.merge(&batch);
    }
}

/// Slope of `log value` against `log Δt` over the given levels; `None` if
/// fewer than two usable points.
fn fitted_rate<T: Real>(levels: &[Level<T>], values: &[T]) -> Option<T> {
    let pts: Vec<(T, T)> = levels
        .iter()
        .zip(values)
        .skip(1)
        .filter(|(_, v)| **v > T::zero())
        .map(|(l, v)| (l.spec.dt.ln(), v.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let (x, y): (Vec<T>, Vec<T>) = pts.into_iter().unzip();
    Some(crate::analysis::log_slope(&x, &y).0)
}

/// Runs the adaptive multilevel estimator.
pub fn run_mlmc<T: Real>(config: &MlmcConfig<T>, family: &StreamFamily) -> Result<MlmcOutcome<T>> {
    config.validate()?;
    let family = family.with_domain(MLMC_DOMAIN);
    let warmup = config
        .initial_samples
        .unwrap_or_else(|| warmup_samples(config.rmse_target.to_f64_lossy()));
    let m = T::lit(config.m_factor as f64);
    let half = T::lit(0.5);
    let bias_budget = config.rmse_target / T::lit(2.0).sqrt();

    let mut levels: Vec<Level<T>> = build_levels(config, MIN_LEVELS)?
        .into_iter()
        .map(|spec| Level::new(config, spec, &family))
        .collect::<Result<_>>()?;
    let mut pending: Vec<u64> = vec![warmup; levels.len()];
    let (mut alpha, mut beta) = (T::one(), T::one());
    let mut iterations = 0;
    let mut converged = false;
    let mut remaining_bias;

    loop {
        iterations += 1;
        for (level, &extra) in levels.iter_mut().zip(&pending) {
            level.top_up(extra);
        }

        let n = levels.len();
        let mut ml: Vec<T> = levels.iter().map(|l| l.stats.difference.mean.abs()).collect();
        let mut vl: Vec<T> = levels.iter().map(|l| l.stats.difference.variance()).collect();
        // guard against noisy, spuriously small estimates on fine levels
        for l in 2..n {
            ml[l] = ml[l].max(half * ml[l - 1] / m.powf(alpha));
            vl[l] = vl[l].max(half * vl[l - 1] / m.powf(beta));
        }
        alpha = config
            .alpha
            .unwrap_or_else(|| fitted_rate(&levels, &ml).map(|s| s.max(half)).unwrap_or_else(T::one));
        beta = config
            .beta
            .unwrap_or_else(|| fitted_rate(&levels, &vl).map(|s| s.max(half)).unwrap_or_else(T::one));

        let costs: Vec<T> = levels.iter().map(|l| l.spec.cost).collect();
        let optimal = sample_counts(config.rmse_target, &vl, &costs)?;
        pending = levels.iter().zip(&optimal).map(|(l, &p)| p.saturating_sub(l.samples())).collect();

        let nearly_done = levels
            .iter()
            .zip(&pending)
            .all(|(l, &d)| (d as f64) <= 0.01 * l.samples() as f64);
        if nearly_done {
            remaining_bias = remaining_bias_estimate(config.bias_rule, &ml, m, alpha);
            if remaining_bias > bias_budget {
                if n >= config.max_levels {
                    break;
                }
                let spec = build_levels(config, n + 1)?[n];
                levels.push(Level::new(config, spec, &family)?);
                pending.push(warmup);
                continue;
            }
            if pending.iter().all(|&d| d == 0) {
                converged = true;
                break;
            }
        }
    }

    let report = assemble_report(config, &levels, alpha, beta, remaining_bias, iterations);
    Ok(if converged {
        MlmcOutcome::Converged(report)
    } else {
        MlmcOutcome::NotConverged(report)
    })
}

fn remaining_bias_estimate<T: Real>(rule: BiasRule, ml: &[T], m: T, alpha: T) -> T {
    let n = ml.len();
    let (depth, tail) = match rule {
        BiasRule::GeometricTail => (3, (m.powf(alpha) - T::one()).recip()),
        BiasRule::LastTwoLevels => (2, T::one()),
    };
    // level 0 is a plain estimate, not a difference, so it never enters
    (0..depth.min(n - 1))
        .map(|j| ml[n - 1 - j] / m.powf(alpha * T::lit(j as f64)) * tail)
        .fold(T::zero(), T::max)
}

fn assemble_report<T: Real>(
    config: &MlmcConfig<T>,
    levels: &[Level<T>],
    alpha: T,
    beta: T,
    bias_estimate: T,
    iterations: usize,
) -> MlmcReport<T> {
    let rows: Vec<LevelRow<T>> = levels
        .iter()
        .map(|l| {
            let samples = l.samples();
            let var_diff = l.stats.difference.variance();
            LevelRow {
                spec: l.spec,
                samples,
                fine_variance: l.stats.fine.variance(),
                mean_diff: l.stats.difference.mean,
                var_diff,
                estimator_variance: var_diff / T::lit(samples as f64),
                level_cost: T::lit(samples as f64) * l.spec.cost,
            }
        })
        .collect();
    let estimate = rows.iter().map(|r| r.mean_diff).sum::<T>();
    let variance_sum = rows.iter().map(|r| r.estimator_variance).sum::<T>();
    let total_cost = rows.iter().map(|r| r.level_cost).sum::<T>();
    let finest = rows.last().expect("at least one level");
    // one uncoupled trajectory at the finest step
    let fine_single_cost = config.model.eps2() / finest.spec.dt;
    let classical_cost = if variance_sum > T::zero() {
        (finest.fine_variance / variance_sum).ceil().max(T::one()) * fine_single_cost
    } else {
        fine_single_cost
    };
    MlmcReport {
        rmse_target: config.rmse_target,
        estimate,
        variance_sum,
        total_cost,
        bias_estimate,
        alpha,
        beta,
        classical_cost,
        speedup: classical_cost / total_cost,
        iterations,
        levels: rows,
    }
}
