//! Correlated simulation of a fine path (step `Δt_ℓ`) and a coarse path
//! (step `Δt_{ℓ-1} = M Δt_ℓ`).
//!
//! The fine path runs `M` ordinary steps. Their draws are then condensed
//! into the inputs of one coarse step:
//!
//! * the normals are summed and rescaled, `ξ_c = Σ ξ_m / √M`;
//! * the largest uniform is pushed through its own CDF, `u_c = (max u_m)^M`,
//!   so `u_c` is again uniform and a coarse collision can only happen when
//!   some fine sub-step collided;
//! * a colliding coarse step adopts the unit velocity the fine path ends the
//!   block with.
//!
//! Each marginal law is untouched, so the coarse path is distributed exactly
//! like an independent simulation at `Δt_{ℓ-1}`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::kinetics::{collision_dominance_holds, scaled_params, ModelParams, ScaledParams};
use crate::real::Real;
use crate::scheme::{advance, initial_unit_velocity, step_count, ParticleState, StepDraws};

/// Coarse normal draw from the `M` fine ones.
pub fn couple_xi<T: Real>(fine_xis: &[T]) -> Result<T> {
    if fine_xis.is_empty() {
        return Err(Error::contract("cannot couple an empty block of normal draws"));
    }
    let sum: T = fine_xis.iter().copied().sum();
    Ok(sum / T::from_usize_lossy(fine_xis.len()).sqrt())
}

/// Coarse uniform draw from the `M` fine ones.
pub fn couple_u<T: Real>(fine_us: &[T]) -> Result<T> {
    if fine_us.is_empty() {
        return Err(Error::contract("cannot couple an empty block of uniform draws"));
    }
    let mut max = T::zero();
    for &u in fine_us {
        if !(u >= T::zero() && u <= T::one()) {
            return Err(Error::contract(format!("uniform draw must lie in [0, 1], got {u}")));
        }
        max = max.max(u);
    }
    Ok(max.powi(fine_us.len() as i32))
}

/// Unit velocity the coarse path carries into its next step.
#[inline]
pub fn coarse_collision_and_velocity<T: Real>(coarse_u: T, coarse_params: &ScaledParams<T>, prev_vbar: T, last_fine_vbar: T) -> T {
    if coarse_params.collides(coarse_u) {
        last_fine_vbar
    } else {
        prev_vbar
    }
}

/// Fine and coarse particle at a common block boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoupledPair<T> {
    pub fine: ParticleState<T>,
    pub coarse: ParticleState<T>,
    pub m_factor: u32,
}

/// The `M` fine draws of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockDraws<T> {
    draws: Vec<StepDraws<T>>,
}

impl<T: Real> BlockDraws<T> {
    pub fn new(draws: Vec<StepDraws<T>>, m_factor: u32) -> Result<Self> {
        if draws.len() != m_factor as usize {
            return Err(Error::contract(format!(
                "a block needs exactly M = {m_factor} fine draws, got {}",
                draws.len()
            )));
        }
        Ok(Self { draws })
    }

    pub fn draws(&self) -> &[StepDraws<T>] {
        &self.draws
    }

    pub fn coarse_xi(&self) -> T {
        let xis: Vec<T> = self.draws.iter().map(|d| d.xi).collect();
        couple_xi(&xis).expect("blocks are never empty")
    }

    pub fn coarse_u(&self) -> Result<T> {
        let us: Vec<T> = self.draws.iter().map(|d| d.u).collect();
        couple_u(&us)
    }
}

/// What happened during one coupled block.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BlockOutcome<T> {
    /// Sum of the fine Brownian increments `√(2Δt_ℓ D_ℓ) ξ_m`.
    pub fine_brownian: T,
    pub coarse_brownian: T,
    /// Sum of the fine transport increments `v Δt_ℓ`.
    pub fine_transport: T,
    pub coarse_transport: T,
    pub fine_collisions: u32,
    pub coarse_collided: bool,
    /// Mean over the `M` sub-steps of `(v_fine - v_coarse)²`, with the
    /// velocities that drove each sub-step's transport.
    pub mean_sq_velocity_gap: T,
}

impl<T: Real> BlockOutcome<T> {
    /// A coarse collision without any fine collision in the same block.
    pub fn dominance_violated(&self) -> bool {
        self.coarse_collided && self.fine_collisions == 0
    }
}

/// Precomputed coefficients for stepping coupled pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoupledStepper<T> {
    model: ModelParams<T>,
    fine: ScaledParams<T>,
    coarse: ScaledParams<T>,
    m_factor: u32,
    inv_sqrt_m: T,
}

impl<T: Real> CoupledStepper<T> {
    pub fn new(model: &ModelParams<T>, dt_fine: T, m_factor: u32) -> Result<Self> {
        if m_factor < 2 {
            return Err(Error::invalid("m_factor", format!("must be >= 2, got {m_factor}")));
        }
        if !(dt_fine.is_finite() && dt_fine > T::zero()) {
            return Err(Error::invalid("dt_fine", format!("must be finite and > 0, got {dt_fine}")));
        }
        let m = T::lit(m_factor as f64);
        let fine = scaled_params(model, dt_fine)?;
        let coarse = scaled_params(model, m * dt_fine)?;
        debug_assert!(collision_dominance_holds(model.epsilon, dt_fine, m_factor));
        Ok(Self {
            model: *model,
            fine,
            coarse,
            m_factor,
            inv_sqrt_m: m.sqrt().recip(),
        })
    }

    pub fn model(&self) -> &ModelParams<T> {
        &self.model
    }

    pub fn fine_params(&self) -> &ScaledParams<T> {
        &self.fine
    }

    pub fn coarse_params(&self) -> &ScaledParams<T> {
        &self.coarse
    }

    pub fn m_factor(&self) -> u32 {
        self.m_factor
    }

    /// Both particles at the origin sharing one unit velocity draw.
    pub fn init_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> CoupledPair<T> {
        let vbar = initial_unit_velocity(&self.model, rng);
        CoupledPair {
            fine: ParticleState::at_origin(vbar, &self.fine),
            coarse: ParticleState::at_origin(vbar, &self.coarse),
            m_factor: self.m_factor,
        }
    }

    /// Advances the pair by one coarse step with freshly drawn randomness.
    #[inline]
    pub fn step_block<R: Rng + ?Sized>(&self, pair: &mut CoupledPair<T>, rng: &mut R) -> BlockOutcome<T> {
        self.step_block_with(pair, rng, |_, _, _| {})
    }

    /// As [`step_block`](Self::step_block), reporting every fine sub-step as
    /// `(sub-step index, fine state after it, collided)`.
    pub fn step_block_with<R: Rng + ?Sized>(
        &self,
        pair: &mut CoupledPair<T>,
        rng: &mut R,
        mut on_substep: impl FnMut(u32, &ParticleState<T>, bool),
    ) -> BlockOutcome<T> {
        let fine_scale = self.fine.brownian_scale();
        let mut xi_sum = T::zero();
        let mut u_max = T::zero();
        let mut out = BlockOutcome::default();
        let mut gap = T::zero();
        for m in 0..self.m_factor {
            let d = StepDraws::sample(&self.fine, self.model.dist, rng);
            let dv = pair.fine.v - pair.coarse.v;
            gap = gap + dv * dv;
            out.fine_transport = out.fine_transport + pair.fine.v * self.fine.dt;
            out.fine_brownian = out.fine_brownian + fine_scale * d.xi;
            pair.fine = advance(pair.fine, &self.fine, d.xi, d.vbar_new);
            xi_sum = xi_sum + d.xi;
            u_max = u_max.max(d.u);
            out.fine_collisions += d.collided() as u32;
            on_substep(m, &pair.fine, d.collided());
        }
        out.mean_sq_velocity_gap = gap / T::lit(self.m_factor as f64);
        self.finish_coarse(pair, xi_sum * self.inv_sqrt_m, u_max.powi(self.m_factor as i32), &mut out);
        out
    }

    /// Advances the pair with caller-supplied fine draws, validating each.
    pub fn apply_block(&self, pair: &mut CoupledPair<T>, block: &BlockDraws<T>) -> Result<BlockOutcome<T>> {
        if block.draws().len() != self.m_factor as usize {
            return Err(Error::contract(format!(
                "block has {} draws but M = {}",
                block.draws().len(),
                self.m_factor
            )));
        }
        let fine_scale = self.fine.brownian_scale();
        let mut out = BlockOutcome::default();
        let mut gap = T::zero();
        for d in block.draws() {
            let dv = pair.fine.v - pair.coarse.v;
            gap = gap + dv * dv;
            out.fine_transport = out.fine_transport + pair.fine.v * self.fine.dt;
            out.fine_brownian = out.fine_brownian + fine_scale * d.xi;
            pair.fine = crate::scheme::ap_step(pair.fine, &self.fine, d)?;
            out.fine_collisions += d.collided() as u32;
        }
        out.mean_sq_velocity_gap = gap / T::lit(self.m_factor as f64);
        self.finish_coarse(pair, block.coarse_xi(), block.coarse_u()?, &mut out);
        Ok(out)
    }

    #[inline]
    fn finish_coarse(&self, pair: &mut CoupledPair<T>, xi_c: T, u_c: T, out: &mut BlockOutcome<T>) {
        let c = &self.coarse;
        out.coarse_transport = pair.coarse.v * c.dt;
        out.coarse_brownian = c.brownian_scale() * xi_c;
        out.coarse_collided = c.collides(u_c);
        let vbar = coarse_collision_and_velocity(u_c, c, pair.coarse.vbar, pair.fine.vbar);
        pair.coarse = ParticleState {
            x: pair.coarse.x + out.coarse_transport + out.coarse_brownian,
            v: c.v_char_dt * vbar,
            vbar,
        };
    }
}

/// One row of a coupled trace, at fine resolution.
///
/// Between block boundaries the coarse position is linearly interpolated
/// and the coarse velocity is the one driving the current coarse step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoupledTraceRow<T> {
    pub time: T,
    pub fine: ParticleState<T>,
    pub coarse: ParticleState<T>,
    pub fine_collided: bool,
    pub coarse_collided: bool,
}

/// Result of [`simulate_coupled_pair`].
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledOutcome<T> {
    pub pair: CoupledPair<T>,
    pub blocks: usize,
    pub fine_collisions: usize,
    pub coarse_collisions: usize,
    pub dominance_violations: usize,
    pub trace: Option<Vec<CoupledTraceRow<T>>>,
}

/// Simulates one coupled pair from the origin up to `t_end`.
pub fn simulate_coupled_pair<T: Real, R: Rng + ?Sized>(
    model: &ModelParams<T>,
    dt_fine: T,
    m_factor: u32,
    t_end: T,
    rng: &mut R,
    trace: bool,
) -> Result<CoupledOutcome<T>> {
    let stepper = CoupledStepper::new(model, dt_fine, m_factor)?;
    let blocks = step_count(t_end, stepper.coarse.dt)?;
    let mut pair = stepper.init_pair(rng);
    let mut rows = trace.then(|| {
        let mut rows = Vec::with_capacity(blocks * m_factor as usize + 1);
        rows.push(CoupledTraceRow {
            time: T::zero(),
            fine: pair.fine,
            coarse: pair.coarse,
            fine_collided: false,
            coarse_collided: false,
        });
        rows
    });
    let mut out = CoupledOutcome {
        pair,
        blocks,
        fine_collisions: 0,
        coarse_collisions: 0,
        dominance_violations: 0,
        trace: None,
    };
    let m = T::lit(m_factor as f64);
    for n in 0..blocks {
        let start = pair.coarse;
        let mut sub: Vec<(ParticleState<T>, bool)> = Vec::new();
        let block = stepper.step_block_with(&mut pair, rng, |_, s, c| {
            if trace {
                sub.push((*s, c));
            }
        });
        out.fine_collisions += block.fine_collisions as usize;
        out.coarse_collisions += block.coarse_collided as usize;
        out.dominance_violations += block.dominance_violated() as usize;
        if let Some(rows) = rows.as_mut() {
            let last = sub.len() - 1;
            for (k, (fine, fine_collided)) in sub.into_iter().enumerate() {
                let frac = T::from_usize_lossy(k + 1) / m;
                let at_end = k == last;
                let coarse = if at_end {
                    pair.coarse
                } else {
                    ParticleState {
                        x: start.x + frac * (pair.coarse.x - start.x),
                        ..start
                    }
                };
                rows.push(CoupledTraceRow {
                    time: (T::from_usize_lossy(n) + frac) * stepper.coarse.dt,
                    fine,
                    coarse,
                    fine_collided,
                    coarse_collided: at_end && block.coarse_collided,
                });
            }
        }
    }
    out.pair = pair;
    out.trace = rows;
    Ok(out)
}
