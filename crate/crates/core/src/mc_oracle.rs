//! Monte Carlo validation of the analytic quantities.
//!
//! A toy continuous language model lives in calibrated reward space: its
//! aligned policy is the tilted density `f ∝ exp(Φ(u)/β)` on `[0, 1]`,
//! sampled by inverting the analytic module's tabulated CDF. Inference-time
//! procedures are applied by literal sampling (draw N, keep max/min/first
//! past the threshold), and win rates are estimated by counting.
//!
//! Streams are seeded per (model seed, chunk index) with a splittable
//! counter-based generator, so estimates are bit-identical regardless of
//! thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::analytic::{build_tilted, InferenceProcedure, TiltedPolicy};
use crate::transforms::Transform;
use crate::{Error, Result};

/// Distribution of raw rewards under the toy base policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaseDistribution {
    /// Rewards uniform on `[0, 1]`; calibrated space equals raw space.
    Uniform,
    /// Rewards exponential with rate 1, calibrated through `1 - e^{-z}`.
    Exponential,
}

impl BaseDistribution {
    #[inline]
    fn to_raw(self, u: f64) -> f64 {
        match self {
            BaseDistribution::Uniform => u,
            BaseDistribution::Exponential => -(-u).ln_1p(), // -ln(1-u)
        }
    }

    #[inline]
    fn to_calibrated(self, z: f64) -> f64 {
        match self {
            BaseDistribution::Uniform => z,
            BaseDistribution::Exponential => -(-z).exp_m1(), // 1 - e^{-z}
        }
    }
}

/// A simulable continuous language model.
#[derive(Debug, Clone)]
pub struct ToyModel {
    pub base: BaseDistribution,
    pub transform: Transform,
    pub beta: f64,
    pub seed: u64,
}

impl ToyModel {
    /// The base policy itself (constant transform, no tilt).
    pub fn base_policy(base: BaseDistribution, seed: u64) -> Self {
        Self {
            base,
            transform: Transform::exp_tilt(0.0),
            beta: 1.0,
            seed,
        }
    }

    pub fn tilted(transform: Transform, beta: f64, seed: u64) -> Self {
        Self {
            base: BaseDistribution::Uniform,
            transform,
            beta,
            seed,
        }
    }

    /// The tabulated aligned policy this model samples from.
    pub fn policy(&self, m: usize) -> Result<TiltedPolicy> {
        build_tilted(&self.transform, self.beta, m)
    }
}

/// What rewind-and-repeat returns when no draw passes the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RewindFallback {
    /// The N-th draw as-is.
    #[default]
    Last,
    /// The best of the N draws. No analytic formula is provided for this
    /// variant; only the Monte Carlo path supports it.
    Best,
}

impl RewindFallback {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "last" => Ok(Self::Last),
            "best" => Ok(Self::Best),
            other => Err(Error::InvalidParameter(format!(
                "rewind fallback must be `last` or `best`, got `{other}`"
            ))),
        }
    }
}

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
    pub samples: u64,
}

impl McEstimate {
    /// Absolute z-score against a reference value.
    pub fn z_score(&self, reference: f64) -> f64 {
        let gap = (self.value - reference).abs();
        if self.std_error > 0.0 {
            gap / self.std_error
        } else if gap == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }

    /// Agreement rule used by the oracle suites: within 3 standard errors,
    /// with a tiny absolute floor for degenerate (variance-zero) cells.
    pub fn agrees_with(&self, reference: f64) -> bool {
        let gap = (self.value - reference).abs();
        gap <= 3.0 * self.std_error || gap <= 10.0 / self.samples as f64
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Accumulator {
    n: u64,
    sum: f64,
    sum_sq: f64,
}

impl Accumulator {
    #[inline]
    fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    fn merge(mut self, other: Accumulator) -> Accumulator {
        self.n += other.n;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
        self
    }

    fn estimate(&self) -> McEstimate {
        let n = self.n as f64;
        let mean = self.sum / n;
        let var = if self.n > 1 {
            ((self.sum_sq - self.sum * self.sum / n) / (n - 1.0)).max(0.0)
        } else {
            0.0
        };
        McEstimate {
            value: mean,
            std_error: (var / n).sqrt(),
            samples: self.n,
        }
    }
}

const CHUNK: u64 = 1 << 16;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Raw-space sampler for one model: inverse-CDF through the tabulated
/// aligned policy, then the base distribution's quantile map.
struct Drawer<'a> {
    policy: &'a TiltedPolicy,
    base: BaseDistribution,
}

impl Drawer<'_> {
    #[inline]
    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        let v: f64 = rng.gen();
        self.base.to_raw(self.policy.quantile(v))
    }
}

/// Draw `n` i.i.d. calibrated values from the aligned policy.
///
/// Non-uniform base distributions draw raw rewards and map them back
/// through the base CDF, which is the identity round trip in exact
/// arithmetic.
pub fn sample_aligned(model: &ToyModel, n: usize, m: usize) -> Result<Vec<f64>> {
    if n < 1 {
        return Err(Error::InvalidParameter("need at least one draw".into()));
    }
    let policy = model.policy(m)?;
    let drawer = Drawer {
        policy: &policy,
        base: model.base,
    };
    let mut rng = stream_rng(model.seed, 0);
    Ok((0..n)
        .map(|_| model.base.to_calibrated(drawer.draw(&mut rng)))
        .collect())
}

/// Apply `procedure` for one trial, in raw reward space. Returns the raw
/// output value.
#[inline]
fn run_trial(
    drawer: &Drawer<'_>,
    procedure: &InferenceProcedure,
    raw_threshold: f64,
    fallback: RewindFallback,
    rng: &mut ChaCha8Rng,
) -> f64 {
    match procedure {
        InferenceProcedure::Identity => drawer.draw(rng),
        InferenceProcedure::BestOfN { n } => (0..*n)
            .map(|_| drawer.draw(rng))
            .fold(f64::NEG_INFINITY, f64::max),
        InferenceProcedure::WorstOfN { n } => (0..*n)
            .map(|_| drawer.draw(rng))
            .fold(f64::INFINITY, f64::min),
        InferenceProcedure::RewindRepeat { n, .. } => {
            let mut best = f64::NEG_INFINITY;
            let mut last = f64::NAN;
            for _ in 0..*n {
                last = drawer.draw(rng);
                if last >= raw_threshold {
                    return last;
                }
                best = best.max(last);
            }
            match fallback {
                RewindFallback::Last => last,
                RewindFallback::Best => best,
            }
        }
        InferenceProcedure::Custom { .. } => {
            unreachable!("custom procedures are not simulable by literal sampling")
        }
    }
}

/// The raw-space acceptance threshold of a rewind procedure: the policy's
/// own `phi`-quantile.
fn raw_threshold(
    policy: &TiltedPolicy,
    base: BaseDistribution,
    procedure: &InferenceProcedure,
) -> f64 {
    match procedure {
        InferenceProcedure::RewindRepeat { phi, .. } => base.to_raw(policy.quantile(*phi)),
        _ => f64::NAN,
    }
}

fn check_simulable(procedure: &InferenceProcedure) -> Result<()> {
    if matches!(procedure, InferenceProcedure::Custom { .. }) {
        return Err(Error::InvalidParameter(
            "custom procedures have no sampling form; use the analytic path".into(),
        ));
    }
    Ok(())
}

/// Run `trials` independent trials of `procedure` on `model` and return the
/// calibrated output values.
pub fn apply_procedure(
    model: &ToyModel,
    procedure: &InferenceProcedure,
    trials: usize,
    seed: u64,
    fallback: RewindFallback,
    m: usize,
) -> Result<Vec<f64>> {
    if trials < 1 {
        return Err(Error::InvalidParameter("need at least one trial".into()));
    }
    check_simulable(procedure)?;
    let policy = model.policy(m)?;
    let drawer = Drawer {
        policy: &policy,
        base: model.base,
    };
    let threshold = raw_threshold(&policy, model.base, procedure);
    let mut rng = stream_rng(seed, 0);
    Ok((0..trials)
        .map(|_| {
            model
                .base
                .to_calibrated(run_trial(&drawer, procedure, threshold, fallback, &mut rng))
        })
        .collect())
}

/// Estimate the inference-time win rate of `model_a` over `model_b`: the
/// fraction of trials where `model_a`'s procedure output out-scores
/// `model_b`'s, ties counting one half.
pub fn estimate_win_rate(
    model_a: &ToyModel,
    model_b: &ToyModel,
    procedure: &InferenceProcedure,
    trials: u64,
    fallback: RewindFallback,
    m: usize,
) -> Result<McEstimate> {
    if trials < 1 {
        return Err(Error::InvalidParameter("need at least one trial".into()));
    }
    check_simulable(procedure)?;
    let policy_a = model_a.policy(m)?;
    let policy_b = model_b.policy(m)?;
    let drawer_a = Drawer {
        policy: &policy_a,
        base: model_a.base,
    };
    let drawer_b = Drawer {
        policy: &policy_b,
        base: model_b.base,
    };
    let threshold_a = raw_threshold(&policy_a, model_a.base, procedure);
    let threshold_b = raw_threshold(&policy_b, model_b.base, procedure);

    let chunks = trials.div_ceil(CHUNK);
    let acc = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng_a = stream_rng(model_a.seed, 2 * chunk);
            let mut rng_b = stream_rng(model_b.seed, 2 * chunk + 1);
            let count = CHUNK.min(trials - chunk * CHUNK);
            let mut acc = Accumulator::default();
            for _ in 0..count {
                let out_a = model_a.base.to_calibrated(run_trial(
                    &drawer_a,
                    procedure,
                    threshold_a,
                    fallback,
                    &mut rng_a,
                ));
                let out_b = model_b.base.to_calibrated(run_trial(
                    &drawer_b,
                    procedure,
                    threshold_b,
                    fallback,
                    &mut rng_b,
                ));
                let score = if out_a > out_b {
                    1.0
                } else if out_a == out_b {
                    0.5
                } else {
                    0.0
                };
                acc.push(score);
            }
            acc
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(Accumulator::default(), Accumulator::merge);
    Ok(acc.estimate())
}

/// Estimate the KL divergence of the aligned policy to its base by
/// averaging the policy's log density over aligned draws. The density is
/// the tabulated policy's own — known exactly by construction, not
/// estimated from the samples — so the estimator is unbiased for
/// [`TiltedPolicy::kl_divergence`].
pub fn estimate_kl(model: &ToyModel, samples: u64, m: usize) -> Result<McEstimate> {
    if samples < 1 {
        return Err(Error::InvalidParameter("need at least one sample".into()));
    }
    let policy = model.policy(m)?;
    let chunks = samples.div_ceil(CHUNK);
    let acc = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = stream_rng(model.seed, chunk);
            let count = CHUNK.min(samples - chunk * CHUNK);
            let mut acc = Accumulator::default();
            for _ in 0..count {
                let v: f64 = rng.gen();
                let u = policy.quantile(v);
                acc.push(policy.log_cell_density_at(u));
            }
            acc
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(Accumulator::default(), Accumulator::merge);
    Ok(acc.estimate())
}
