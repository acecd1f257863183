//! Closed-form variances of coupled differences, their small-step leading
//! orders, the coarse-level threshold, and convergence-rate fitting.
//!
//! Every closed form here describes a coupled pair with fine step `Δt_ℓ`,
//! coarse step `Δt_{ℓ-1} = M Δt_ℓ` and `N` coarse steps, where both
//! trajectories are in their stationary velocity state. The sums over
//! the `N` steps reduce to the geometric series
//!
//! ```text
//! S(a, N) = Σ_{d=1}^{N-1} (N - d) aᵈ = a (a^N - N a + N - 1) / (1 - a)²
//! ```
//!
//! which is evaluated through `a = e^{-λ}` so that neither `a → 1` nor
//! large `N` loses precision.

use crate::coupling::CoupledStepper;
use crate::error::{Error, Result};
use crate::estimators::{par_accumulate, DifferenceLevel, EstimatorStats, MomentStats, PairStats, QoiKind};
use crate::kinetics::{scaled_params, ModelParams};
use crate::real::Real;
use crate::rng::StreamFamily;
use crate::scheme::{step_count, STEP_RATIO_TOLERANCE};

/// Parameters of a coupled pair for the closed forms.
///
/// `m` and `n_blocks` are real so the threshold search can treat `M` as a
/// continuous variable; [`AnalysisPoint::new`] insists they are integers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisPoint<T> {
    pub epsilon: T,
    pub v_char: T,
    pub dt_fine: T,
    pub m: T,
    pub t_end: T,
    pub n_blocks: T,
}

impl<T: Real> AnalysisPoint<T> {
    pub fn new(epsilon: T, v_char: T, dt_fine: T, m_factor: u32, t_end: T) -> Result<Self> {
        if m_factor < 2 {
            return Err(Error::invalid("m_factor", format!("must be >= 2, got {m_factor}")));
        }
        let m = T::lit(m_factor as f64);
        let n = step_count(t_end, m * dt_fine)?;
        let point = Self {
            epsilon,
            v_char,
            dt_fine,
            m,
            t_end,
            n_blocks: T::from_usize_lossy(n),
        };
        point.validate()?;
        Ok(point)
    }

    /// A point with real `M > 1` and `N = t_end / (M Δt_ℓ)` not rounded.
    pub fn continuous(epsilon: T, v_char: T, dt_fine: T, m: T, t_end: T) -> Result<Self> {
        if !(m.is_finite() && m > T::one()) {
            return Err(Error::invalid("m_factor", format!("must be finite and > 1, got {m}")));
        }
        let point = Self {
            epsilon,
            v_char,
            dt_fine,
            m,
            t_end,
            n_blocks: t_end / (m * dt_fine),
        };
        point.validate()?;
        Ok(point)
    }

    fn validate(&self) -> Result<()> {
        ModelParams::new(self.epsilon, self.v_char, Default::default())?;
        if !(self.dt_fine.is_finite() && self.dt_fine > T::zero()) {
            return Err(Error::invalid("dt_fine", format!("must be finite and > 0, got {}", self.dt_fine)));
        }
        if !(self.t_end.is_finite() && self.t_end >= T::zero()) {
            return Err(Error::invalid("t_end", format!("must be finite and >= 0, got {}", self.t_end)));
        }
        Ok(())
    }

    pub fn dt_coarse(&self) -> T {
        self.m * self.dt_fine
    }

    /// `M` as an integer, if it is one.
    pub fn m_factor(&self) -> Option<u32> {
        let m = self.m.to_f64_lossy();
        (m.fract() == 0.0 && m >= 1.0).then_some(m as u32)
    }

    pub fn model(&self) -> ModelParams<T> {
        ModelParams::new(self.epsilon, self.v_char, Default::default()).expect("validated on construction")
    }

    fn coefs(&self) -> Coefs<T> {
        let model = self.model();
        let f = scaled_params(&model, self.dt_fine).expect("validated on construction");
        let c = scaled_params(&model, self.dt_coarse()).expect("validated on construction");
        let r = self.dt_fine / model.eps2();
        Coefs {
            eps2: model.eps2(),
            v2: self.v_char * self.v_char,
            dtf: self.dt_fine,
            dtc: self.dt_coarse(),
            vf: f.v_char_dt,
            vc: c.v_char_dt,
            df: f.diff_coef,
            dc: c.diff_coef,
            pcf: f.p_collide,
            pc: c.p_no_collide,
            m: self.m,
            n: self.n_blocks,
            lam_fine_block: self.m * r.ln_1p(),
            lam_coarse: (self.m * r).ln_1p(),
        }
    }
}

struct Coefs<T> {
    eps2: T,
    v2: T,
    dtf: T,
    dtc: T,
    vf: T,
    vc: T,
    df: T,
    dc: T,
    /// fine collision probability
    pcf: T,
    /// coarse no-collision probability
    pc: T,
    m: T,
    n: T,
    /// `-ln p_nc,ℓ^M`
    lam_fine_block: T,
    /// `-ln p_nc,ℓ-1`
    lam_coarse: T,
}

/// `e^{-x} - 1 + x`, accurate for small `x`.
fn exp_defect<T: Real>(x: T) -> T {
    if x.abs() < T::lit(0.1) {
        // alternating Taylor series x²/2 - x³/6 + ...
        let mut term = x * x / T::lit(2.0);
        let mut sum = term;
        for k in 3..=14 {
            term = -term * x / T::lit(k as f64);
            sum = sum + term;
        }
        sum
    } else {
        (-x).exp_m1() + x
    }
}

/// `S(e^{-λ}, N) = Σ_{d=1}^{N-1} (N - d) e^{-λd}` for real `N ≥ 0`.
fn lag_sum<T: Real>(lambda: T, n: T) -> T {
    if n <= T::one() {
        return T::zero();
    }
    if lambda <= T::zero() {
        return n * (n - T::one()) / T::lit(2.0);
    }
    // a / (1 - a)² = 1 / (4 sinh²(λ/2))
    let sh = (lambda / T::lit(2.0)).sinh();
    (exp_defect(n * lambda) - n * exp_defect(lambda)) / (T::lit(4.0) * sh * sh)
}

/// Variance of the summed Brownian increment differences after `N` steps.
pub fn brownian_diff_variance<T: Real>(point: &AnalysisPoint<T>) -> T {
    let k = point.coefs();
    let gap = k.df.sqrt() - k.dc.sqrt();
    k.n * T::lit(2.0) * k.dtc * gap * gap
}

/// Variance of one coarse step's transport increment difference.
pub fn transport_step_variance<T: Real>(point: &AnalysisPoint<T>) -> T {
    let k = point.coefs();
    let no_fine_collision = -(-k.lam_fine_block).exp_m1();
    k.m * k.dtf * k.dtf * k.vf * k.vf - k.dtc * k.dtc * k.vc * k.vc
        + T::lit(2.0) * k.eps2 * k.vf * k.vf * (k.m * k.dtf - (k.eps2 + k.dtf) * no_fine_collision)
}

/// Variance of the summed transport increment differences after `N` steps,
/// including all cross-step covariances.
pub fn transport_diff_variance<T: Real>(point: &AnalysisPoint<T>) -> T {
    let k = point.coefs();
    let two = T::lit(2.0);
    let per_step = transport_step_variance(point);
    if k.n <= T::one() {
        return k.n * per_step;
    }
    let pf = T::one() / (T::one() + k.dtf / k.eps2);
    let pfm = (-k.lam_fine_block).exp();
    let one_minus_pfm = -(-k.lam_fine_block).exp_m1();
    let coarse_transport = k.dtc * k.dtc * k.vc * k.vc;
    // p^{1-M} + p^{M+1} - 2p = 4p sinh²(λ/2)
    let sinh_half = (k.lam_fine_block / two).sinh();
    let sigma1 = k.eps2 * k.v2 * T::lit(4.0) * pf * sinh_half * sinh_half - coarse_transport;
    let x = (k.pc - pfm) / one_minus_pfm * (k.pcf.recip() - k.m * pfm / one_minus_pfm) + k.eps2 / k.dtf;
    let sigma2 = coarse_transport * (T::one() - k.dtf * k.vf / (k.eps2 * k.vc) * x);
    k.n * per_step + two * (sigma1 * lag_sum(k.lam_fine_block, k.n) + sigma2 * lag_sum(k.lam_coarse, k.n))
}

/// Stationary variance of the velocity difference, `ṽ_ℓ² − ṽ_{ℓ-1}²`.
pub fn velocity_diff_variance<T: Real>(point: &AnalysisPoint<T>) -> T {
    let k = point.coefs();
    k.vf * k.vf - k.vc * k.vc
}

/// Which closed form a leading-order query refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarianceKind {
    Brownian,
    Transport,
    Velocity,
}

/// First-order term of the closed forms as `Δt_ℓ → 0`.
pub fn leading_order_variance<T: Real>(kind: VarianceKind, point: &AnalysisPoint<T>) -> T {
    let eps2 = point.epsilon * point.epsilon;
    let v2 = point.v_char * point.v_char;
    let two = T::lit(2.0);
    let dt = point.dt_fine;
    match kind {
        VarianceKind::Brownian => {
            let g = point.m.sqrt() - T::one();
            two * point.t_end * v2 / eps2 * g * g * dt
        }
        VarianceKind::Transport => two * v2 * (point.m - T::one()) * exp_defect(point.t_end / eps2) * dt,
        VarianceKind::Velocity => two * v2 * (point.m - T::one()) / (eps2 * eps2) * dt,
    }
}

/// Lipschitz-type bound on the variance of `F_fine − F_coarse`,
/// `K_x²(V_W + V_T) + K_v² V_vel + 2 K_x K_v √((V_W + V_T) V_vel)`.
pub fn variance_bound<T: Real>(point: &AnalysisPoint<T>, k_x: T, k_v: T) -> Result<T> {
    if !(k_x >= T::zero() && k_v >= T::zero()) {
        return Err(Error::invalid("k_x", format!("Lipschitz constants must be >= 0, got ({k_x}, {k_v})")));
    }
    let pos = brownian_diff_variance(point) + transport_diff_variance(point);
    let vel = velocity_diff_variance(point);
    Ok(k_x * k_x * pos + k_v * k_v * vel + T::lit(2.0) * k_x * k_v * (pos * vel).sqrt())
}

/// Variance of `X(t_end)` for a single trajectory started at the origin
/// with an equilibrium velocity, `N = t_end / dt` real.
pub fn single_level_position_variance<T: Real>(epsilon: T, v_char: T, dt: T, t_end: T) -> Result<T> {
    let model = ModelParams::new(epsilon, v_char, Default::default())?;
    let p = scaled_params(&model, dt)?;
    if dt <= T::zero() {
        return Err(Error::invalid("dt", "must be > 0"));
    }
    let n = t_end / dt;
    let lambda = (dt / model.eps2()).ln_1p();
    let two = T::lit(2.0);
    Ok(n * two * dt * p.diff_coef + dt * dt * p.v_char_dt * p.v_char_dt * (n + two * lag_sum(lambda, n)))
}

/// Left-hand side of the test for dropping the extra coarse level, with
/// `Δt₁ = ε²`, `Δt₀ = M ε²` and costs `C₁ = 1`, `C₀ = 1/M`:
///
/// ```text
/// √(C₀ V[F₀]) + √((C₀ + C₁) V[F₁ − F₀]) − √(C₁ V[F₁])
/// ```
///
/// Positive means the extra level does not pay for itself.
pub fn threshold_lhs<T: Real>(epsilon: T, v_char: T, t_end: T, m: T) -> Result<T> {
    let dt1 = epsilon * epsilon;
    let point = AnalysisPoint::continuous(epsilon, v_char, dt1, m, t_end)?;
    let v0 = single_level_position_variance(epsilon, v_char, m * dt1, t_end)?;
    let v1 = single_level_position_variance(epsilon, v_char, dt1, t_end)?;
    let vd = brownian_diff_variance(&point) + transport_diff_variance(&point);
    let c0 = m.recip();
    Ok((c0 * v0).sqrt() + ((c0 + T::one()) * vd).sqrt() - v1.sqrt())
}

/// Outcome of the threshold search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold<T> {
    Root(T),
    /// No sign change on the bracket (or the horizon is too short to build
    /// an extra coarse level); carries the end-point values when defined.
    NoRoot { lhs_low: Option<T>, lhs_high: Option<T> },
}

impl<T: Copy> Threshold<T> {
    pub fn root(&self) -> Option<T> {
        match self {
            Threshold::Root(m) => Some(*m),
            Threshold::NoRoot { .. } => None,
        }
    }
}

pub const THRESHOLD_BRACKET: (f64, f64) = (1.5, 64.0);
pub const THRESHOLD_TOLERANCE: f64 = 1e-3;

/// The real `M` at which [`threshold_lhs`] changes sign, by bisection on
/// [`THRESHOLD_BRACKET`] clipped to `M ≤ t*/Δt₁`.
pub fn coarse_level_threshold<T: Real>(epsilon: T, v_char: T, t_end: T, dt_level1: T) -> Result<Threshold<T>> {
    let eps2 = epsilon * epsilon;
    if (dt_level1 - eps2).abs() > T::lit(STEP_RATIO_TOLERANCE) * eps2 {
        return Err(Error::invalid("dt", format!("level 1 must use dt = ε² = {eps2}, got {dt_level1}")));
    }
    // a level-0 step `M Δt₁` longer than the horizon cannot be built, so the
    // search never goes past `t*/Δt₁`
    let (mut lo, mut hi) = (T::lit(THRESHOLD_BRACKET.0), T::lit(THRESHOLD_BRACKET.1).min(t_end / dt_level1));
    if hi <= lo {
        return Ok(Threshold::NoRoot {
            lhs_low: None,
            lhs_high: None,
        });
    }
    let f_lo = threshold_lhs(epsilon, v_char, t_end, lo)?;
    let f_hi = threshold_lhs(epsilon, v_char, t_end, hi)?;
    if f_lo.signum() == f_hi.signum() {
        return Ok(Threshold::NoRoot {
            lhs_low: Some(f_lo),
            lhs_high: Some(f_hi),
        });
    }
    let positive_low = f_lo > T::zero();
    let two = T::lit(2.0);
    while hi - lo > T::lit(THRESHOLD_TOLERANCE) {
        let mid = (lo + hi) / two;
        let f = threshold_lhs(epsilon, v_char, t_end, mid)?;
        if (f > T::zero()) == positive_low {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Threshold::Root((lo + hi) / two))
}

/// Fitted decay rates of the level differences.
#[derive(Debug, Clone, PartialEq)]
pub struct RateFit<T> {
    /// Slope of `log₂ |E[F_ℓ − F_{ℓ-1}]|` against `log₂ Δt_ℓ`.
    pub alpha: T,
    /// Slope of `log₂ V[F_ℓ − F_{ℓ-1}]` against `log₂ Δt_ℓ`.
    pub beta: T,
    /// Cost growth per level, `log₂ M`.
    pub gamma: T,
    /// Residuals of the mean fit, in `log₂` units, in input order.
    pub alpha_residuals: Vec<T>,
    pub beta_residuals: Vec<T>,
}

/// Ordinary least-squares slope and residuals of `y` against `x`.
pub fn log_slope<T: Real>(x: &[T], y: &[T]) -> (T, Vec<T>) {
    let n = T::from_usize_lossy(x.len());
    let mx = x.iter().copied().sum::<T>() / n;
    let my = y.iter().copied().sum::<T>() / n;
    let sxy: T = x.iter().zip(y).map(|(&a, &b)| (a - mx) * (b - my)).sum();
    let sxx: T = x.iter().map(|&a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals = x.iter().zip(y).map(|(&a, &b)| b - (intercept + slope * a)).collect();
    (slope, residuals)
}

/// Fits `α` and `β` from `(Δt_ℓ, |mean difference|, difference variance)`
/// triples.
pub fn fit_convergence_rates<T: Real>(series: &[(T, T, T)], m_factor: u32) -> Result<RateFit<T>> {
    if series.len() < 3 {
        return Err(Error::invalid("series", format!("need at least 3 points, got {}", series.len())));
    }
    if m_factor < 2 {
        return Err(Error::invalid("m_factor", format!("must be >= 2, got {m_factor}")));
    }
    if series.iter().any(|&(dt, m, v)| !(dt > T::zero() && m > T::zero() && v > T::zero())) {
        return Err(Error::invalid("series", "time steps, means and variances must be positive to take logs"));
    }
    let x: Vec<T> = series.iter().map(|p| p.0.log2()).collect();
    let ym: Vec<T> = series.iter().map(|p| p.1.log2()).collect();
    let yv: Vec<T> = series.iter().map(|p| p.2.log2()).collect();
    let (alpha, alpha_residuals) = log_slope(&x, &ym);
    let (beta, beta_residuals) = log_slope(&x, &yv);
    Ok(RateFit {
        alpha,
        beta,
        gamma: T::lit(m_factor as f64).log2(),
        alpha_residuals,
        beta_residuals,
    })
}

/// Statistics of one level of a time-step scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanRow<T> {
    pub level: usize,
    pub dt_fine: T,
    pub stats: PairStats<T>,
}

impl<T: Real> ScanRow<T> {
    /// `(Δt_ℓ, |mean difference|, difference variance)`, the input of
    /// [`fit_convergence_rates`].
    pub fn rate_point(&self) -> (T, T, T) {
        (self.dt_fine, self.stats.difference.mean.abs(), self.stats.difference.variance())
    }
}

/// Coupled difference statistics at `Δt_ℓ = Δt₀ M^{-ℓ}` for each `ℓ` in
/// `levels`, each level drawing from its own sub-family.
pub fn level_scan<T: Real>(
    model: &ModelParams<T>,
    t_end: T,
    m_factor: u32,
    dt0: T,
    levels: std::ops::RangeInclusive<usize>,
    qoi: QoiKind,
    samples: u64,
    family: &StreamFamily,
) -> Result<Vec<ScanRow<T>>> {
    if *levels.start() == 0 {
        return Err(Error::invalid("levels", "level 0 has no coarser partner; scans start at 1"));
    }
    let m = T::lit(m_factor as f64);
    levels
        .map(|level| {
            let dt_fine = dt0 / m.powi(level as i32);
            let sampler = DifferenceLevel::new(model, dt_fine, m_factor, t_end, qoi)?;
            let stats = sampler.run(&family.with_level(level as u32), 0, samples);
            Ok(ScanRow { level, dt_fine, stats })
        })
        .collect()
}

/// Default burn-in for empirical increment statistics: `⌈5ε²/Δt_{ℓ-1}⌉`
/// coarse steps, long enough for the coupled velocities to forget their
/// shared initial draw.
pub fn default_burn_in<T: Real>(point: &AnalysisPoint<T>) -> usize {
    let blocks = T::lit(5.0) * point.epsilon * point.epsilon / point.dt_coarse();
    blocks.to_f64_lossy().ceil().max(0.0) as usize
}

/// Empirical counterparts of the closed forms over many coupled pairs.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct IncrementStats<T> {
    /// Summed Brownian increment differences.
    pub brownian: MomentStats<T>,
    /// Summed transport increment differences.
    pub transport: MomentStats<T>,
    /// Mean squared velocity gap over the sub-steps of the final block.
    pub velocity_gap: EstimatorStats<T>,
    /// Velocity difference at the end of the horizon.
    pub velocity_end: MomentStats<T>,
    /// Displacements over the measured window.
    pub fine: MomentStats<T>,
    pub coarse: MomentStats<T>,
    pub difference: MomentStats<T>,
    pub dominance_violations: u64,
}

impl<T: Real> IncrementStats<T> {
    fn merge(&self, o: &Self) -> Self {
        Self {
            brownian: self.brownian.merge(&o.brownian),
            transport: self.transport.merge(&o.transport),
            velocity_gap: self.velocity_gap.merge(&o.velocity_gap),
            velocity_end: self.velocity_end.merge(&o.velocity_end),
            fine: self.fine.merge(&o.fine),
            coarse: self.coarse.merge(&o.coarse),
            difference: self.difference.merge(&o.difference),
            dominance_violations: self.dominance_violations + o.dominance_violations,
        }
    }
}

/// Simulates `samples` coupled pairs, discards `burn_in` coarse steps and
/// accumulates the increments of the following `N` coarse steps.
pub fn empirical_increments<T: Real>(
    model: &ModelParams<T>,
    dt_fine: T,
    m_factor: u32,
    t_end: T,
    burn_in: usize,
    samples: u64,
    family: &StreamFamily,
) -> Result<IncrementStats<T>> {
    let stepper = CoupledStepper::new(model, dt_fine, m_factor)?;
    let blocks = step_count(t_end, stepper.coarse_params().dt)?;
    Ok(par_accumulate(
        0,
        samples,
        IncrementStats::default,
        |acc, i| {
            let mut rng = family.stream(i);
            let mut pair = stepper.init_pair(&mut rng);
            let mut violations = 0u64;
            for _ in 0..burn_in {
                violations += stepper.step_block(&mut pair, &mut rng).dominance_violated() as u64;
            }
            let (mut w, mut tr, mut xf, mut xc) = (T::zero(), T::zero(), T::zero(), T::zero());
            let mut gap = T::zero();
            for _ in 0..blocks {
                let b = stepper.step_block(&mut pair, &mut rng);
                violations += b.dominance_violated() as u64;
                w = w + b.fine_brownian - b.coarse_brownian;
                tr = tr + b.fine_transport - b.coarse_transport;
                xf = xf + b.fine_brownian + b.fine_transport;
                xc = xc + b.coarse_brownian + b.coarse_transport;
                gap = b.mean_sq_velocity_gap;
            }
            acc.brownian.push(w);
            acc.transport.push(tr);
            acc.velocity_gap.push(gap);
            acc.velocity_end.push(pair.fine.v - pair.coarse.v);
            acc.fine.push(xf);
            acc.coarse.push(xc);
            acc.difference.push(xf - xc);
            acc.dominance_violations += violations;
        },
        |a, b| a.merge(&b),
    ))
}
