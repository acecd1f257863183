//! Model parameters, time-step dependent coefficients and equilibrium
//! velocity sampling.
//!
//! The equilibrium velocity is written as `v = ṽ · V̄` with `V̄` drawn from a
//! unit distribution (zero mean, unit variance). The particle scheme replaces
//! the characteristic velocity `ṽ` by the time-step dependent `ṽ_Δt` and adds
//! a diffusion term with coefficient `D_Δt`:
//!
//! ```text
//! ṽ_Δt = ε ṽ / (ε² + Δt)        D_Δt = ṽ² Δt / (ε² + Δt)
//! p_c  = Δt / (ε² + Δt)         p_nc = ε² / (ε² + Δt)
//! ```

use rand::Rng;

use crate::error::{Error, Result};
use crate::real::Real;

/// Shape of the unit velocity distribution `V̄`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VelocityDist {
    /// `V̄ = ±1` with probability 1/2 each.
    #[default]
    TwoSpeed,
    /// `V̄ ~ N(0, 1)`.
    Gaussian,
}

impl std::str::FromStr for VelocityDist {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "two_speed" | "two-speed" | "twospeed" => Ok(VelocityDist::TwoSpeed),
            "gaussian" | "normal" => Ok(VelocityDist::Gaussian),
            other => Err(Error::invalid(
                "dist",
                format!("unknown velocity distribution `{other}` (expected two_speed or gaussian)"),
            )),
        }
    }
}

impl std::fmt::Display for VelocityDist {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            VelocityDist::TwoSpeed => f.write_str("two_speed"),
            VelocityDist::Gaussian => f.write_str("gaussian"),
        }
    }
}

/// How the unit velocity of a fresh particle is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitialVelocity {
    /// Sampled from the equilibrium distribution.
    #[default]
    Equilibrium,
    /// Every particle starts with `V̄ = +1`.
    Aligned,
}

impl std::str::FromStr for InitialVelocity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "equilibrium" => Ok(InitialVelocity::Equilibrium),
            "aligned" => Ok(InitialVelocity::Aligned),
            other => Err(Error::invalid(
                "init",
                format!("unknown initial velocity `{other}` (expected equilibrium or aligned)"),
            )),
        }
    }
}

impl std::fmt::Display for InitialVelocity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InitialVelocity::Equilibrium => f.write_str("equilibrium"),
            InitialVelocity::Aligned => f.write_str("aligned"),
        }
    }
}

/// Physical parameters of the kinetic model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams<T> {
    /// Dimensionless mean free path `ε`.
    pub epsilon: T,
    /// Characteristic velocity `ṽ` of the unscaled equilibrium.
    pub v_char: T,
    pub dist: VelocityDist,
    pub initial: InitialVelocity,
}

impl<T: Real> ModelParams<T> {
    pub fn new(epsilon: T, v_char: T, dist: VelocityDist) -> Result<Self> {
        let model = Self {
            epsilon,
            v_char,
            dist,
            initial: InitialVelocity::Equilibrium,
        };
        model.validate()?;
        Ok(model)
    }

    /// Two-speed model with `ṽ = 1`.
    pub fn two_speed(epsilon: T) -> Result<Self> {
        Self::new(epsilon, T::one(), VelocityDist::TwoSpeed)
    }

    pub fn with_initial(self, initial: InitialVelocity) -> Self {
        Self { initial, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > T::zero()) {
            return Err(Error::invalid("epsilon", format!("must be finite and > 0, got {}", self.epsilon)));
        }
        if !(self.v_char.is_finite() && self.v_char > T::zero()) {
            return Err(Error::invalid("v_char", format!("must be finite and > 0, got {}", self.v_char)));
        }
        Ok(())
    }

    /// `ε²`, the time step used as the cost unit.
    pub fn eps2(&self) -> T {
        self.epsilon * self.epsilon
    }
}

/// Coefficients of the particle scheme at one time step size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledParams<T> {
    pub dt: T,
    /// `ṽ_Δt`
    pub v_char_dt: T,
    /// `D_Δt`
    pub diff_coef: T,
    /// Probability that a step collides.
    pub p_collide: T,
    /// Probability that a step does not collide, `1 - p_collide`.
    pub p_no_collide: T,
}

impl<T: Real> ScaledParams<T> {
    /// Standard deviation of the Brownian increment, `√(2 Δt D_Δt)`.
    #[inline]
    pub fn brownian_scale(&self) -> T {
        (T::lit(2.0) * self.dt * self.diff_coef).sqrt()
    }

    /// Whether uniform draw `u` triggers a collision (`u ≥ p_nc`).
    #[inline]
    pub fn collides(&self, u: T) -> bool {
        u >= self.p_no_collide
    }
}

/// Coefficients of the scheme for time step `dt`.
///
/// `dt = 0` returns the analytic limit `(ṽ/ε, 0, 0, 1)`.
pub fn scaled_params<T: Real>(model: &ModelParams<T>, dt: T) -> Result<ScaledParams<T>> {
    model.validate()?;
    if !dt.is_finite() || dt < T::zero() {
        return Err(Error::invalid("dt", format!("must be finite and >= 0, got {dt}")));
    }
    let eps2 = model.eps2();
    let denom = eps2 + dt;
    let p_no_collide = eps2 / denom;
    Ok(ScaledParams {
        dt,
        v_char_dt: model.epsilon * model.v_char / denom,
        diff_coef: model.v_char * model.v_char * dt / denom,
        p_collide: T::one() - p_no_collide,
        p_no_collide,
    })
}

/// Draws a unit velocity `V̄` (zero mean, unit variance).
#[inline]
pub fn sample_unit_velocity<T: Real, R: Rng + ?Sized>(dist: VelocityDist, rng: &mut R) -> T {
    match dist {
        VelocityDist::TwoSpeed => {
            if rng.random::<bool>() {
                T::one()
            } else {
                -T::one()
            }
        }
        VelocityDist::Gaussian => T::standard_normal(rng),
    }
}

/// Checks `(ε²/(ε²+Δt))^M ≤ ε²/(ε²+MΔt)`, which guarantees that a coupled
/// coarse step can only collide if one of its fine sub-steps did.
///
/// Evaluated as `M·ln(1+r) ≥ ln(1+Mr)` with `r = Δt/ε²`, allowing a few ulps
/// of rounding so that the equality case `M = 1` stays true.
pub fn collision_dominance_holds<T: Real>(epsilon: T, dt_fine: T, m_factor: u32) -> bool {
    if m_factor == 0 {
        return false;
    }
    let r = dt_fine / (epsilon * epsilon);
    let m = T::lit(m_factor as f64);
    let lhs = m * r.ln_1p();
    let rhs = (m * r).ln_1p();
    lhs >= rhs - T::lit(4.0) * T::epsilon() * rhs.abs()
}
