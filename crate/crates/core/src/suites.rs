//! Reusable verification suites.
//!
//! Each suite returns structured results so the CLI can print a pass/fail
//! table and the acceptance tests can assert on the same numbers. Suites
//! are deterministic given their seed.

use std::cell::RefCell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::analytic::{
    beta_for_target_kl, build_tilted, InferenceProcedure, TiltedPolicy, DEFAULT_GRID_SIZE,
};
use crate::calibration::{self, CalibrationTable, RewardRecord};
use crate::discrete::{self, DiscreteInstance, GdParams, LogLinearInstance};
use crate::fixed_point::{
    solve_bon_fp, solve_won_fp, solve_warm, FixedPointConfig, FixedPointKind, FixedPointSolution,
};
use crate::mc_oracle::{estimate_kl, estimate_win_rate, BaseDistribution, RewindFallback, ToyModel};
use crate::stats;
use crate::transforms::Transform;
use crate::Result;

/// KL checkpoints at which the standard suite matches `beta` per transform.
/// The top value keeps every suite policy resolved enough on the default
/// grid that doubling the grid moves no reported number by more than 1e-6.
pub const SUITE_KL_TARGETS: [f64; 8] = [0.02, 0.05, 0.1, 0.2, 0.35, 0.6, 0.9, 1.2];

/// One member of the standard transform suite: either a fixed transform or
/// a fixed-point family solved per `beta`.
#[derive(Debug, Clone)]
pub enum SuiteTransform {
    Fixed { label: String, transform: Transform },
    FixedPoint { kind: FixedPointKind, n: u32 },
}

impl SuiteTransform {
    pub fn fixed(transform: Transform) -> Self {
        Self::Fixed {
            label: transform.label(),
            transform,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::Fixed { label, .. } => label.clone(),
            Self::FixedPoint {
                kind: FixedPointKind::BestOfN,
                n,
            } => format!("bon_fp:{n}"),
            Self::FixedPoint {
                kind: FixedPointKind::WorstOfN,
                n,
            } => format!("won_fp:{n}"),
        }
    }

    /// The tilted policy at `beta` (solving the coupled equations for
    /// fixed-point members).
    pub fn policy_at(&self, beta: f64, m: usize) -> Result<TiltedPolicy> {
        match self {
            Self::Fixed { transform, .. } => build_tilted(transform, beta, m),
            Self::FixedPoint { kind, n } => fp_policy_at(*kind, *n, beta, m),
        }
    }

    /// A matched-KL policy, warm-starting fixed-point solves across the
    /// root-finder's probes.
    pub fn policy_at_kl(&self, target_kl: f64, m: usize) -> Result<TiltedPolicy> {
        match self {
            Self::Fixed { transform, .. } => {
                beta_for_target_kl(|beta| build_tilted(transform, beta, m), target_kl)
            }
            Self::FixedPoint { kind, n } => {
                let config = FixedPointConfig {
                    m,
                    ..FixedPointConfig::default()
                };
                let warm: RefCell<Option<FixedPointSolution>> = RefCell::new(None);
                beta_for_target_kl(
                    |beta| {
                        let sol = {
                            let cache = warm.borrow();
                            match cache.as_ref() {
                                Some(prev) => solve_warm(*kind, *n, beta, config, prev)?,
                                None => match kind {
                                    FixedPointKind::BestOfN => solve_bon_fp(*n, beta, config)?,
                                    FixedPointKind::WorstOfN => solve_won_fp(*n, beta, config)?,
                                },
                            }
                        };
                        let policy = sol.policy(m)?;
                        if sol.converged {
                            *warm.borrow_mut() = Some(sol);
                        }
                        Ok(policy)
                    },
                    target_kl,
                )
            }
        }
    }
}

/// Solve the fixed point for `(kind, n, beta)` and return its policy.
pub fn fp_policy_at(kind: FixedPointKind, n: u32, beta: f64, m: usize) -> Result<TiltedPolicy> {
    let config = FixedPointConfig {
        m,
        ..FixedPointConfig::default()
    };
    let solution = match kind {
        FixedPointKind::BestOfN => solve_bon_fp(n, beta, config)?,
        FixedPointKind::WorstOfN => solve_won_fp(n, beta, config)?,
    };
    solution.policy(m)
}

/// The standard transform suite: identity, log, exponential tilts, and the
/// Best-of-N / Worst-of-N fixed points for `n`.
pub fn standard_transforms(n: u32) -> Vec<SuiteTransform> {
    vec![
        SuiteTransform::fixed(Transform::Identity),
        SuiteTransform::fixed(Transform::log()),
        SuiteTransform::fixed(Transform::exp_tilt(5.0)),
        SuiteTransform::fixed(Transform::exp_tilt(-5.0)),
        SuiteTransform::fixed(Transform::exp_tilt(10.0)),
        SuiteTransform::fixed(Transform::exp_tilt(-10.0)),
        SuiteTransform::FixedPoint {
            kind: FixedPointKind::BestOfN,
            n,
        },
        SuiteTransform::FixedPoint {
            kind: FixedPointKind::WorstOfN,
            n,
        },
    ]
}

/// The standard procedure suite.
pub fn standard_procedures() -> Vec<InferenceProcedure> {
    vec![
        InferenceProcedure::Identity,
        InferenceProcedure::BestOfN { n: 2 },
        InferenceProcedure::BestOfN { n: 4 },
        InferenceProcedure::BestOfN { n: 32 },
        InferenceProcedure::WorstOfN { n: 2 },
        InferenceProcedure::WorstOfN { n: 4 },
        InferenceProcedure::WorstOfN { n: 32 },
        InferenceProcedure::RewindRepeat { phi: 0.85, n: 32 },
    ]
}

/// Matched `beta` values for one suite transform over the KL targets.
pub fn matched_betas(transform: &SuiteTransform, m: usize) -> Result<Vec<f64>> {
    SUITE_KL_TARGETS
        .iter()
        .map(|&target| Ok(transform.policy_at_kl(target, m)?.beta()))
        .collect()
}

/// One Monte Carlo-vs-analytic comparison cell.
#[derive(Debug, Clone)]
pub struct OracleCell {
    pub transform: String,
    pub beta: f64,
    pub procedure: String,
    pub analytic: f64,
    pub mc: f64,
    pub std_error: f64,
    pub z_score: f64,
    pub pass: bool,
}

/// Full oracle-agreement run: every suite transform at its matched betas,
/// against every suite procedure (win rates) plus one KL cell per policy.
pub struct OracleReport {
    pub win_cells: Vec<OracleCell>,
    pub kl_cells: Vec<OracleCell>,
}

impl OracleReport {
    pub fn pass_fraction(&self) -> f64 {
        let total = self.win_cells.len();
        if total == 0 {
            return 1.0;
        }
        self.win_cells.iter().filter(|c| c.pass).count() as f64 / total as f64
    }

    pub fn all_kl_pass(&self) -> bool {
        self.kl_cells.iter().all(|c| c.pass)
    }
}

/// Run the oracle agreement suite with `trials` Monte Carlo trials per
/// cell. `seed` derives every stream; identical seeds give bit-identical
/// reports.
pub fn oracle_agreement(n: u32, trials: u64, seed: u64, m: usize) -> Result<OracleReport> {
    let transforms = standard_transforms(n);
    let procedures = standard_procedures();

    // Matched policies first (sequential: fixed-point warm starts).
    let mut policies: Vec<(String, TiltedPolicy)> = Vec::new();
    for transform in &transforms {
        for &target in SUITE_KL_TARGETS.iter() {
            let policy = transform.policy_at_kl(target, m)?;
            policies.push((transform.label(), policy));
        }
    }

    let cells: Vec<(OracleCell, Option<OracleCell>)> = policies
        .par_iter()
        .enumerate()
        .map(|(pi, (label, policy))| -> Result<Vec<(OracleCell, Option<OracleCell>)>> {
            let beta = policy.beta();
            let tabulated = Transform::tabulated(policy.phi_values().to_vec())?;
            let model = ToyModel {
                base: BaseDistribution::Uniform,
                transform: tabulated,
                beta,
                seed: seed ^ (pi as u64).wrapping_mul(0x9e3779b97f4a7c15),
            };
            let base = ToyModel::base_policy(BaseDistribution::Uniform, seed ^ 0xabcdef ^ pi as u64);
            let mut out = Vec::new();
            for (qi, procedure) in procedures.iter().enumerate() {
                let analytic = policy.win_rate(procedure);
                let est = estimate_win_rate(
                    &ToyModel {
                        seed: model.seed.wrapping_add(qi as u64),
                        ..model.clone()
                    },
                    &base,
                    procedure,
                    trials,
                    RewindFallback::Last,
                    m,
                )?;
                out.push((
                    OracleCell {
                        transform: label.clone(),
                        beta,
                        procedure: procedure.label(),
                        analytic,
                        mc: est.value,
                        std_error: est.std_error,
                        z_score: est.z_score(analytic),
                        pass: est.agrees_with(analytic),
                    },
                    None,
                ));
            }
            let analytic_kl = policy.kl_divergence();
            let est = estimate_kl(&model, trials, m)?;
            out.last_mut().unwrap().1 = Some(OracleCell {
                transform: label.clone(),
                beta,
                procedure: "kl".into(),
                analytic: analytic_kl,
                mc: est.value,
                std_error: est.std_error,
                z_score: est.z_score(analytic_kl),
                pass: est.agrees_with(analytic_kl),
            });
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();

    let mut win_cells = Vec::new();
    let mut kl_cells = Vec::new();
    for (win, kl) in cells {
        win_cells.push(win);
        if let Some(kl) = kl {
            kl_cells.push(kl);
        }
    }
    Ok(OracleReport {
        win_cells,
        kl_cells,
    })
}

/// Outcome of the calibration uniformity check (Kolmogorov-Smirnov against
/// the uniform distribution at significance 0.01).
#[derive(Debug, Clone, Copy)]
pub struct KsOutcome {
    pub statistic: f64,
    pub critical: f64,
    pub pass: bool,
}

/// Calibrate fresh continuous samples against an independently drawn table
/// and KS-test the scores against Unif[0, 1].
pub fn calibration_uniformity(samples: usize, seed: u64) -> Result<KsOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Normal-ish reward distribution via sums of uniforms; any continuous
    // distribution works.
    let draw = |rng: &mut ChaCha8Rng| -> f64 { (0..4).map(|_| rng.gen::<f64>()).sum() };
    let records: Vec<RewardRecord> = (0..samples)
        .map(|i| RewardRecord {
            prompt_id: "p".into(),
            response_id: format!("r{i}"),
            reward: draw(&mut rng),
        })
        .collect();
    let table = CalibrationTable::build(&records, "p")?;
    let mut scores: Vec<f64> = (0..samples)
        .map(|_| {
            let r = draw(&mut rng);
            table.calibrate(r).map(|s| s.value())
        })
        .collect::<Result<Vec<_>>>()?;
    let statistic = stats::ks_statistic_sorted(&mut scores, |u| u.clamp(0.0, 1.0));
    let critical = stats::ks_critical(samples, 0.01);
    Ok(KsOutcome {
        statistic,
        critical,
        pass: statistic < critical,
    })
}

/// Empirical DKW coverage over `repetitions` tables of size `k`.
#[derive(Debug, Clone, Copy)]
pub struct DkwOutcome {
    pub delta: f64,
    pub coverage: f64,
    pub required: f64,
    pub pass: bool,
}

/// For each repetition draw `k` uniform rewards, build the empirical
/// calibration, and compare its sup error to the bound; coverage must reach
/// `1 - delta`.
pub fn dkw_coverage(k: usize, repetitions: usize, deltas: &[f64], seed: u64) -> Result<Vec<DkwOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut errors = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let mut sorted: Vec<f64> = (0..k).map(|_| rng.gen::<f64>()).collect();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        errors.push(stats::calibration_sup_error_uniform(&sorted));
    }
    deltas
        .iter()
        .map(|&delta| {
            let bound = calibration::dkw_error_bound(k, delta)?;
            let covered = errors.iter().filter(|&&e| e <= bound).count();
            let coverage = covered as f64 / repetitions as f64;
            let required = 1.0 - delta;
            Ok(DkwOutcome {
                delta,
                coverage,
                required,
                pass: coverage >= required,
            })
        })
        .collect()
}

/// Exact monotone-map invariance on `tables` random tables.
pub fn invariance_check(tables: usize, seed: u64) -> Result<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..tables {
        let k = rng.gen_range(1..200);
        let records: Vec<RewardRecord> = (0..k)
            .map(|i| RewardRecord {
                prompt_id: "p".into(),
                response_id: format!("r{i}"),
                // Quantized so floating-point maps keep distinct values
                // distinct.
                reward: (rng.gen_range(-100.0..100.0) * 8.0f64).round() / 8.0,
            })
            .collect();
        let table = CalibrationTable::build(&records, "p")?;
        let probes: Vec<f64> = (0..20)
            .map(|_| (rng.gen_range(-100.0..100.0) * 8.0f64).round() / 8.0)
            .collect();
        let scale = rng.gen_range(0.1..10.0);
        let shift = rng.gen_range(-50.0..50.0);
        if !calibration::check_monotone_invariance(&table, |r| scale * r + shift, &probes) {
            return Ok(false);
        }
        if !calibration::check_monotone_invariance(&table, |r| (r / 50.0).exp(), &probes) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Discrete optimality sweep: `instances` random instances, each checked at
/// every `beta` against `trials` random policies plus local perturbations.
pub fn discrete_optimality(
    instances: usize,
    betas: &[f64],
    trials: usize,
    seed: u64,
) -> Result<(usize, usize)> {
    let specs: Vec<(u64, usize)> = (0..instances)
        .map(|i| (seed.wrapping_add(i as u64), 2 + i % 7))
        .collect();
    let results: Vec<bool> = specs
        .par_iter()
        .map(|&(instance_seed, n)| -> Result<bool> {
            let mut rng = ChaCha8Rng::seed_from_u64(instance_seed);
            let instance = DiscreteInstance::random(n, &mut rng)?;
            for &beta in betas {
                if !discrete::verify_no_procedure_optimality(
                    &instance,
                    beta,
                    trials,
                    instance_seed ^ 0x5555,
                )? {
                    return Ok(false);
                }
                // The two win-rate routes must agree exactly.
                let p = discrete::exact_rlhf(
                    &instance,
                    &discrete::exact_calibrated_reward(&instance),
                    beta,
                )?;
                let direct = discrete::exact_win_rate(&p, instance.base_probs(), instance.rewards());
                let via_c =
                    discrete::win_rate_via_calibration(&p, instance.base_probs(), instance.rewards());
                if (direct - via_c).abs() > 1e-12 {
                    return Ok(false);
                }
            }
            Ok(true)
        })
        .collect::<Result<Vec<_>>>()?;
    let passed = results.iter().filter(|&&b| b).count();
    Ok((passed, instances))
}

/// Multitask equivalence sweep over random saturated instances; returns
/// (passed, total, worst TV, worst gap spread).
pub fn multitask_suite(instances: usize, seed: u64) -> Result<(usize, usize, f64, f64)> {
    let mut worst_tv = 0.0f64;
    let mut worst_spread = 0.0f64;
    let mut passed = 0;
    for i in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        let n = 3 + i % 4;
        let beta = [0.3, 1.0, 3.0][i % 3];
        let instance = LogLinearInstance::random_saturated(n, beta, &mut rng)?;
        let report =
            discrete::verify_multitask_equivalence(&instance, GdParams::default(), seed ^ i as u64)?;
        worst_tv = worst_tv.max(report.tv_distance);
        worst_spread = worst_spread.max(report.gap_spread);
        if report.tv_distance <= 1e-4 && report.gap_spread <= 1e-9 {
            passed += 1;
        }
    }
    Ok((passed, instances, worst_tv, worst_spread))
}

/// Default grid-size re-export for CLI convenience.
pub fn default_grid() -> usize {
    DEFAULT_GRID_SIZE
}
