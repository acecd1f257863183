//! Quantities of interest, streaming statistics and the single-level and
//! difference Monte Carlo estimators.
//!
//! Sampling fans out over fixed-size chunks of sample indices. Each chunk
//! builds its own statistics, and the chunk results are merged in a fixed
//! pairwise tree, so an estimate depends only on the seed and the index
//! range, never on the number of worker threads.

use rayon::prelude::*;

use crate::coupling::CoupledStepper;
use crate::error::{Error, Result};
use crate::kinetics::{scaled_params, ModelParams, ScaledParams};
use crate::real::Real;
use crate::rng::StreamFamily;
use crate::scheme::{final_state, step_count, ParticleState};

/// Samples per parallel work item.
pub const CHUNK: u64 = 256;

/// Functional `F(x, v)` averaged over particles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QoiKind {
    #[default]
    XSquared,
    X,
    V,
    VSquared,
}

impl std::str::FromStr for QoiKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "x_squared" | "x2" | "x^2" => Ok(QoiKind::XSquared),
            "x" => Ok(QoiKind::X),
            "v" => Ok(QoiKind::V),
            "v_squared" | "v2" | "v^2" => Ok(QoiKind::VSquared),
            other => Err(Error::invalid(
                "qoi",
                format!("unknown quantity `{other}` (expected x_squared, x, v or v_squared)"),
            )),
        }
    }
}

impl std::fmt::Display for QoiKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            QoiKind::XSquared => "x_squared",
            QoiKind::X => "x",
            QoiKind::V => "v",
            QoiKind::VSquared => "v_squared",
        })
    }
}

#[inline]
pub fn qoi_eval<T: Real>(kind: QoiKind, state: &ParticleState<T>) -> T {
    match kind {
        QoiKind::XSquared => state.x * state.x,
        QoiKind::X => state.x,
        QoiKind::V => state.v,
        QoiKind::VSquared => state.v * state.v,
    }
}

/// Running count, mean and sum of squared deviations.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EstimatorStats<T> {
    pub count: u64,
    pub mean: T,
    pub m2: T,
}

impl<T: Real> EstimatorStats<T> {
    pub fn new() -> Self {
        Self {
            count: 0,
            mean: T::zero(),
            m2: T::zero(),
        }
    }

    pub fn from_slice(xs: &[T]) -> Self {
        let mut s = Self::new();
        xs.iter().for_each(|&x| s.push(x));
        s
    }

    #[inline]
    pub fn push(&mut self, x: T) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean = self.mean + delta / T::lit(self.count as f64);
        self.m2 = self.m2 + delta * (x - self.mean);
    }

    /// Unbiased sample variance; zero with fewer than two samples.
    pub fn variance(&self) -> T {
        if self.count < 2 {
            T::zero()
        } else {
            self.m2 / T::lit((self.count - 1) as f64)
        }
    }

    /// Standard error of the mean.
    pub fn std_error(&self) -> T {
        if self.count == 0 {
            return T::zero();
        }
        (self.variance() / T::lit(self.count as f64)).sqrt()
    }

    pub fn merge(&self, other: &Self) -> Self {
        merge_stats(self, other)
    }
}

/// Statistics of the concatenation of two sample streams.
///
/// The mean is the count-weighted average, which makes the merge exactly
/// commutative in floating point.
pub fn merge_stats<T: Real>(a: &EstimatorStats<T>, b: &EstimatorStats<T>) -> EstimatorStats<T> {
    if a.count == 0 {
        return *b;
    }
    if b.count == 0 {
        return *a;
    }
    let count = a.count + b.count;
    let (na, nb, n) = (T::lit(a.count as f64), T::lit(b.count as f64), T::lit(count as f64));
    let delta = b.mean - a.mean;
    EstimatorStats {
        count,
        mean: (na * a.mean + nb * b.mean) / n,
        m2: a.m2 + b.m2 + delta * delta * (na * nb / n),
    }
}

/// Streaming moments up to fourth order, for standard errors of variances.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MomentStats<T> {
    pub count: u64,
    pub mean: T,
    pub m2: T,
    pub m3: T,
    pub m4: T,
}

impl<T: Real> MomentStats<T> {
    pub fn new() -> Self {
        Self {
            count: 0,
            mean: T::zero(),
            m2: T::zero(),
            m3: T::zero(),
            m4: T::zero(),
        }
    }

    pub fn from_slice(xs: &[T]) -> Self {
        let mut s = Self::new();
        xs.iter().for_each(|&x| s.push(x));
        s
    }

    #[inline]
    pub fn push(&mut self, x: T) {
        let n1 = T::lit(self.count as f64);
        self.count += 1;
        let n = T::lit(self.count as f64);
        let delta = x - self.mean;
        let dn = delta / n;
        let dn2 = dn * dn;
        let term1 = delta * dn * n1;
        self.mean = self.mean + dn;
        self.m4 = self.m4 + term1 * dn2 * (n * n - T::lit(3.0) * n + T::lit(3.0)) + T::lit(6.0) * dn2 * self.m2
            - T::lit(4.0) * dn * self.m3;
        self.m3 = self.m3 + term1 * dn * (n - T::lit(2.0)) - T::lit(3.0) * dn * self.m2;
        self.m2 = self.m2 + term1;
    }

    pub fn merge(&self, other: &Self) -> Self {
        let (a, b) = (self, other);
        if a.count == 0 {
            return *b;
        }
        if b.count == 0 {
            return *a;
        }
        let count = a.count + b.count;
        let (na, nb, n) = (T::lit(a.count as f64), T::lit(b.count as f64), T::lit(count as f64));
        let d = b.mean - a.mean;
        let d2 = d * d;
        let (three, four, six) = (T::lit(3.0), T::lit(4.0), T::lit(6.0));
        let m2 = a.m2 + b.m2 + d2 * na * nb / n;
        let m3 = a.m3 + b.m3 + d2 * d * na * nb * (na - nb) / (n * n) + three * d * (na * b.m2 - nb * a.m2) / n;
        let m4 = a.m4
            + b.m4
            + d2 * d2 * na * nb * (na * na - na * nb + nb * nb) / (n * n * n)
            + six * d2 * (na * na * b.m2 + nb * nb * a.m2) / (n * n)
            + four * d * (na * b.m3 - nb * a.m3) / n;
        MomentStats {
            count,
            mean: (na * a.mean + nb * b.mean) / n,
            m2,
            m3,
            m4,
        }
    }

    pub fn basic(&self) -> EstimatorStats<T> {
        EstimatorStats {
            count: self.count,
            mean: self.mean,
            m2: self.m2,
        }
    }

    pub fn variance(&self) -> T {
        self.basic().variance()
    }

    pub fn std_error(&self) -> T {
        self.basic().std_error()
    }

    /// Approximate standard error of the sample variance,
    /// `√((μ₄ − σ⁴ (n−3)/(n−1)) / n)`.
    pub fn variance_std_error(&self) -> T {
        if self.count < 4 {
            return T::infinity();
        }
        let n = T::lit(self.count as f64);
        let s2 = self.variance();
        let mu4 = self.m4 / n;
        let v = (mu4 - s2 * s2 * (n - T::lit(3.0)) / (n - T::one())) / n;
        v.max(T::zero()).sqrt()
    }
}

/// Statistics of a coupled difference and of its two sides.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PairStats<T> {
    pub difference: MomentStats<T>,
    pub fine: MomentStats<T>,
    pub coarse: MomentStats<T>,
}

impl<T: Real> PairStats<T> {
    pub fn new() -> Self {
        Self {
            difference: MomentStats::new(),
            fine: MomentStats::new(),
            coarse: MomentStats::new(),
        }
    }

    #[inline]
    pub fn push(&mut self, fine: T, coarse: T) {
        self.difference.push(fine - coarse);
        self.fine.push(fine);
        self.coarse.push(coarse);
    }

    pub fn merge(&self, other: &Self) -> Self {
        Self {
            difference: self.difference.merge(&other.difference),
            fine: self.fine.merge(&other.fine),
            coarse: self.coarse.merge(&other.coarse),
        }
    }
}

/// Runs `body` for every sample index in `start .. start + count` and merges
/// the per-chunk accumulators in a fixed order.
pub fn par_accumulate<A, Make, Body, Merge>(start: u64, count: u64, make: Make, body: Body, merge: Merge) -> A
where
    A: Send,
    Make: Fn() -> A + Sync,
    Body: Fn(&mut A, u64) + Sync,
    Merge: Fn(A, A) -> A + Sync,
{
    let chunks = count.div_ceil(CHUNK);
    let mut parts: Vec<A> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = make();
            let lo = start + c * CHUNK;
            let hi = (lo + CHUNK).min(start + count);
            for i in lo..hi {
                body(&mut acc, i);
            }
            acc
        })
        .collect();
    if parts.is_empty() {
        return make();
    }
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(merge(a, b)),
                None => next.push(a),
            }
        }
        parts = next;
    }
    parts.pop().expect("one part remains")
}

/// A single-level sampler with precomputed coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingleLevel<T> {
    pub model: ModelParams<T>,
    pub params: ScaledParams<T>,
    pub steps: usize,
    pub qoi: QoiKind,
}

impl<T: Real> SingleLevel<T> {
    pub fn new(model: &ModelParams<T>, dt: T, t_end: T, qoi: QoiKind) -> Result<Self> {
        Ok(Self {
            model: *model,
            params: scaled_params(model, dt)?,
            steps: step_count(t_end, dt)?,
            qoi,
        })
    }

    pub fn sample(&self, family: &StreamFamily, index: u64) -> T {
        let mut rng = family.stream(index);
        qoi_eval(self.qoi, &final_state(&self.model, &self.params, self.steps, &mut rng))
    }

    pub fn run(&self, family: &StreamFamily, start: u64, count: u64) -> MomentStats<T> {
        par_accumulate(
            start,
            count,
            MomentStats::new,
            |acc, i| acc.push(self.sample(family, i)),
            |a, b| a.merge(&b),
        )
    }
}

/// A coupled-difference sampler with precomputed coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DifferenceLevel<T> {
    pub stepper: CoupledStepper<T>,
    pub blocks: usize,
    pub qoi: QoiKind,
}

impl<T: Real> DifferenceLevel<T> {
    pub fn new(model: &ModelParams<T>, dt_fine: T, m_factor: u32, t_end: T, qoi: QoiKind) -> Result<Self> {
        let stepper = CoupledStepper::new(model, dt_fine, m_factor)?;
        let blocks = step_count(t_end, stepper.coarse_params().dt)?;
        Ok(Self { stepper, blocks, qoi })
    }

    /// `(F_fine, F_coarse)` of one coupled pair.
    pub fn sample(&self, family: &StreamFamily, index: u64) -> (T, T) {
        let mut rng = family.stream(index);
        let mut pair = self.stepper.init_pair(&mut rng);
        for _ in 0..self.blocks {
            self.stepper.step_block(&mut pair, &mut rng);
        }
        (qoi_eval(self.qoi, &pair.fine), qoi_eval(self.qoi, &pair.coarse))
    }

    pub fn run(&self, family: &StreamFamily, start: u64, count: u64) -> PairStats<T> {
        par_accumulate(
            start,
            count,
            PairStats::new,
            |acc, i| {
                let (f, c) = self.sample(family, i);
                acc.push(f, c);
            },
            |a, b| a.merge(&b),
        )
    }
}

fn check_samples(sample_count: u64) -> Result<()> {
    if sample_count < 2 {
        return Err(Error::invalid("samples", format!("need at least 2 samples, got {sample_count}")));
    }
    Ok(())
}

/// Plain Monte Carlo estimate of `E[F(X(t_end), V(t_end))]` at step `dt`.
pub fn single_level_estimate<T: Real>(
    model: &ModelParams<T>,
    dt: T,
    t_end: T,
    qoi: QoiKind,
    sample_count: u64,
    family: &StreamFamily,
) -> Result<EstimatorStats<T>> {
    check_samples(sample_count)?;
    Ok(SingleLevel::new(model, dt, t_end, qoi)?.run(family, 0, sample_count).basic())
}

/// Monte Carlo estimate of `E[F_fine − F_coarse]` over coupled pairs, with
/// the statistics of both sides.
pub fn difference_estimate<T: Real>(
    model: &ModelParams<T>,
    dt_fine: T,
    m_factor: u32,
    t_end: T,
    qoi: QoiKind,
    sample_count: u64,
    family: &StreamFamily,
) -> Result<PairStats<T>> {
    check_samples(sample_count)?;
    Ok(DifferenceLevel::new(model, dt_fine, m_factor, t_end, qoi)?.run(family, 0, sample_count))
}
