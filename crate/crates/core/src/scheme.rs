//! The asymptotic-preserving particle step and single-level paths.
//!
//! One step transports the particle with its current velocity plus a
//! Brownian increment, then decides whether it collides. A collision redraws
//! the unit velocity, which takes effect from the next step on:
//!
//! ```text
//! x' = x + v Δt + √(2 Δt D_Δt) ξ
//! V̄' = V̄*  if u ≥ p_nc,   V̄ otherwise
//! ```

use rand::Rng;

use crate::error::{Error, Result};
use crate::kinetics::{sample_unit_velocity, scaled_params, InitialVelocity, ModelParams, ScaledParams, VelocityDist};
use crate::real::Real;

/// Relative tolerance when checking that a horizon is a whole number of steps.
pub const STEP_RATIO_TOLERANCE: f64 = 1e-9;

/// Position and velocity of one particle.
///
/// `vbar` is authoritative; `v` is cached as `ṽ_Δt · vbar` for the time step
/// the particle is being advanced with.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ParticleState<T> {
    pub x: T,
    pub v: T,
    pub vbar: T,
}

impl<T: Real> ParticleState<T> {
    pub fn at_origin(vbar: T, params: &ScaledParams<T>) -> Self {
        Self {
            x: T::zero(),
            v: params.v_char_dt * vbar,
            vbar,
        }
    }
}

/// Random inputs consumed by one time step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDraws<T> {
    pub xi: T,
    pub u: T,
    /// New unit velocity; present exactly when the step collides.
    pub vbar_new: Option<T>,
}

impl<T: Real> StepDraws<T> {
    /// Draws `ξ`, then `u`, then `V̄*` only if `u` triggers a collision.
    #[inline]
    pub fn sample<R: Rng + ?Sized>(params: &ScaledParams<T>, dist: VelocityDist, rng: &mut R) -> Self {
        let xi = T::standard_normal(rng);
        let u = T::unit_uniform(rng);
        let vbar_new = params.collides(u).then(|| sample_unit_velocity(dist, rng));
        Self { xi, u, vbar_new }
    }

    pub fn collided(&self) -> bool {
        self.vbar_new.is_some()
    }

    fn check(&self, params: &ScaledParams<T>) -> Result<()> {
        if !self.xi.is_finite() {
            return Err(Error::contract(format!("normal draw must be finite, got {}", self.xi)));
        }
        if !(self.u >= T::zero() && self.u <= T::one()) {
            return Err(Error::contract(format!("uniform draw must lie in [0, 1], got {}", self.u)));
        }
        match (params.collides(self.u), self.vbar_new) {
            (true, None) => Err(Error::contract(format!(
                "u = {} collides (p_nc = {}) but no new velocity was supplied",
                self.u, params.p_no_collide
            ))),
            (false, Some(_)) => Err(Error::contract(format!(
                "u = {} does not collide (p_nc = {}) but a new velocity was supplied",
                self.u, params.p_no_collide
            ))),
            _ => Ok(()),
        }
    }
}

/// Advances one step after validating the draws against the collision rule.
pub fn ap_step<T: Real>(state: ParticleState<T>, params: &ScaledParams<T>, draws: &StepDraws<T>) -> Result<ParticleState<T>> {
    draws.check(params)?;
    Ok(advance(state, params, draws.xi, draws.vbar_new))
}

/// Unchecked step: transport with the current velocity, then apply the
/// collision outcome (if any).
#[inline]
pub(crate) fn advance<T: Real>(state: ParticleState<T>, params: &ScaledParams<T>, xi: T, vbar_new: Option<T>) -> ParticleState<T> {
    let x = state.x + state.v * params.dt + params.brownian_scale() * xi;
    let vbar = vbar_new.unwrap_or(state.vbar);
    ParticleState {
        x,
        v: params.v_char_dt * vbar,
        vbar,
    }
}

/// Unit velocity for a fresh particle.
pub fn initial_unit_velocity<T: Real, R: Rng + ?Sized>(model: &ModelParams<T>, rng: &mut R) -> T {
    match model.initial {
        InitialVelocity::Equilibrium => sample_unit_velocity(model.dist, rng),
        InitialVelocity::Aligned => T::one(),
    }
}

/// A particle at the origin with a velocity drawn according to the model.
pub fn init_particle<T: Real, R: Rng + ?Sized>(model: &ModelParams<T>, params: &ScaledParams<T>, rng: &mut R) -> ParticleState<T> {
    ParticleState::at_origin(initial_unit_velocity(model, rng), params)
}

/// Number of steps `N = t_end / dt`, insisting that it is a whole number.
pub fn step_count<T: Real>(t_end: T, dt: T) -> Result<usize> {
    if !t_end.is_finite() || t_end < T::zero() {
        return Err(Error::invalid("t_end", format!("must be finite and >= 0, got {t_end}")));
    }
    if !dt.is_finite() || dt <= T::zero() {
        return Err(Error::invalid("dt", format!("must be finite and > 0, got {dt}")));
    }
    let ratio = t_end.to_f64_lossy() / dt.to_f64_lossy();
    let n = ratio.round();
    // single precision cannot resolve 1e-9, so widen to a few ulps of T
    let tol = STEP_RATIO_TOLERANCE.max(8.0 * T::epsilon().to_f64_lossy());
    if (ratio - n).abs() > tol * ratio.max(1.0) || n > u32::MAX as f64 {
        return Err(Error::invalid(
            "t_end",
            format!("t_end / dt = {ratio} is not a whole number of steps N (t_end = {t_end}, dt = {dt})"),
        ));
    }
    Ok(n as usize)
}

/// One row of a single-path trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow<T> {
    pub step: usize,
    pub time: T,
    pub state: ParticleState<T>,
    /// Whether the step that produced this state collided (false at step 0).
    pub collided: bool,
}

/// Result of [`simulate_path`].
#[derive(Debug, Clone, PartialEq)]
pub struct PathOutcome<T> {
    pub state: ParticleState<T>,
    pub steps: usize,
    pub collisions: usize,
    /// All `N + 1` states when a trace was requested.
    pub trace: Option<Vec<TraceRow<T>>>,
}

/// Simulates one particle from the origin up to `t_end` with step `dt`.
pub fn simulate_path<T: Real, R: Rng + ?Sized>(
    model: &ModelParams<T>,
    dt: T,
    t_end: T,
    rng: &mut R,
    trace: bool,
) -> Result<PathOutcome<T>> {
    let steps = step_count(t_end, dt)?;
    let params = scaled_params(model, dt)?;
    let mut state = init_particle(model, &params, rng);
    let mut rows = trace.then(|| {
        let mut rows = Vec::with_capacity(steps + 1);
        rows.push(TraceRow {
            step: 0,
            time: T::zero(),
            state,
            collided: false,
        });
        rows
    });
    let mut collisions = 0;
    for n in 1..=steps {
        let draws = StepDraws::sample(&params, model.dist, rng);
        state = advance(state, &params, draws.xi, draws.vbar_new);
        collisions += draws.collided() as usize;
        if let Some(rows) = rows.as_mut() {
            rows.push(TraceRow {
                step: n,
                time: T::from_usize_lossy(n) * dt,
                state,
                collided: draws.collided(),
            });
        }
    }
    Ok(PathOutcome {
        state,
        steps,
        collisions,
        trace: rows,
    })
}

/// Final state only; the allocation-free path used by the estimators.
#[inline]
pub(crate) fn final_state<T: Real, R: Rng + ?Sized>(
    model: &ModelParams<T>,
    params: &ScaledParams<T>,
    steps: usize,
    rng: &mut R,
) -> ParticleState<T> {
    let mut state = init_particle(model, params, rng);
    for _ in 0..steps {
        let draws = StepDraws::sample(params, model.dist, rng);
        state = advance(state, params, draws.xi, draws.vbar_new);
    }
    state
}
