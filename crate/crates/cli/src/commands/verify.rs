//! `infalign verify`: the property-verification suites, printed as a
//! pass/fail table. Exit status 0 iff every selected check passes.

use infalign::analytic::{build_tilted, InferenceProcedure};
use infalign::suites;
use infalign::transforms::Transform;

use crate::errors::{CliError, CliResult};

#[derive(clap::Args)]
pub struct Args {
    /// Suite selector: trivial | calibration | oracle | discrete |
    /// multitask | all.
    #[arg(long, default_value = "all")]
    pub suite: String,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Monte Carlo trials per oracle cell.
    #[arg(long, default_value_t = 1_000_000)]
    pub trials: u64,
    /// Grid size (odd).
    #[arg(long, default_value_t = infalign::analytic::DEFAULT_GRID_SIZE)]
    pub grid: usize,
    /// Also write the checks as line-delimited JSON records.
    #[arg(long)]
    pub out: Option<std::path::PathBuf>,
}

#[derive(serde::Serialize)]
struct Check {
    name: String,
    passed: bool,
    detail: String,
}

pub fn run(args: Args) -> CliResult<()> {
    let mut checks = Vec::new();
    let known = ["trivial", "calibration", "oracle", "discrete", "multitask", "all"];
    if !known.contains(&args.suite.as_str()) {
        return Err(CliError::Config(format!(
            "unknown suite `{}` (expected one of {})",
            args.suite,
            known.join(", ")
        )));
    }
    let selected = |name: &str| args.suite == "all" || args.suite == name;

    if selected("trivial") {
        checks.extend(trivial_suite(args.grid).map_err(CliError::config)?);
    }
    if selected("calibration") {
        checks.extend(calibration_suite(args.seed).map_err(CliError::config)?);
    }
    if selected("oracle") {
        checks.extend(oracle_suite(args.trials, args.seed, args.grid).map_err(CliError::config)?);
    }
    if selected("discrete") {
        checks.extend(discrete_suite(args.seed).map_err(CliError::config)?);
    }
    if selected("multitask") {
        checks.extend(multitask_suite(args.seed).map_err(CliError::config)?);
    }

    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(8);
    let mut failures = 0;
    for check in &checks {
        let status = if check.passed { "PASS" } else { "FAIL" };
        println!("{status}  {:<width$}  {}", check.name, check.detail);
        if !check.passed {
            failures += 1;
        }
    }
    if let Some(path) = &args.out {
        let mut body = String::new();
        for check in &checks {
            body.push_str(&serde_json::to_string(check).map_err(CliError::io)?);
            body.push('\n');
        }
        std::fs::write(path, body)
            .map_err(|e| CliError::io(format!("writing {}: {e}", path.display())))?;
    }
    if failures > 0 {
        return Err(CliError::verify(format!(
            "{failures}/{} checks failed",
            checks.len()
        )));
    }
    println!("all {} checks passed", checks.len());
    Ok(())
}

/// Constant transform symmetry: win rate one half, KL zero, for every
/// procedure and beta.
fn trivial_suite(m: usize) -> infalign::Result<Vec<Check>> {
    let mut checks = Vec::new();
    let constant = Transform::exp_tilt(0.0);
    let mut worst_w: f64 = 0.0;
    let mut worst_kl: f64 = 0.0;
    for beta in [0.02, 1.0, 5.0, 1e6] {
        let policy = build_tilted(&constant, beta, m)?;
        worst_kl = worst_kl.max(policy.kl_divergence().abs());
        for procedure in suites::standard_procedures() {
            worst_w = worst_w.max((policy.win_rate(&procedure) - 0.5).abs());
        }
    }
    checks.push(Check {
        name: "trivial/constant-win-rate".into(),
        passed: worst_w < 1e-8,
        detail: format!("max |W - 0.5| = {worst_w:.3e}"),
    });
    checks.push(Check {
        name: "trivial/constant-kl".into(),
        passed: worst_kl < 1e-8,
        detail: format!("max KL = {worst_kl:.3e}"),
    });

    let identity = build_tilted(&Transform::Identity, 1.0, m)?;
    let e = std::f64::consts::E;
    let w_gap = (identity.win_rate(&InferenceProcedure::Identity) - 1.0 / (e - 1.0)).abs();
    let kl_gap = (identity.kl_divergence() - (1.0 / (e - 1.0) - (e - 1.0).ln())).abs();
    checks.push(Check {
        name: "trivial/identity-closed-forms".into(),
        passed: w_gap < 1e-6 && kl_gap < 1e-6,
        detail: format!("|ΔW| = {w_gap:.3e}, |ΔKL| = {kl_gap:.3e}"),
    });
    Ok(checks)
}

fn calibration_suite(seed: u64) -> infalign::Result<Vec<Check>> {
    let mut checks = Vec::new();
    let ks = suites::calibration_uniformity(10_000, seed.wrapping_add(16))?;
    checks.push(Check {
        name: "calibration/uniformity-ks".into(),
        passed: ks.pass,
        detail: format!("D = {:.5} < {:.5}", ks.statistic, ks.critical),
    });
    for outcome in suites::dkw_coverage(100, 1000, &[0.1, 0.05], seed.wrapping_add(16))? {
        checks.push(Check {
            name: format!("calibration/dkw-coverage-{}", outcome.delta),
            passed: outcome.pass,
            detail: format!("coverage {:.3} >= {:.3}", outcome.coverage, outcome.required),
        });
    }
    let invariant = suites::invariance_check(100, seed.wrapping_add(17))?;
    checks.push(Check {
        name: "calibration/monotone-invariance".into(),
        passed: invariant,
        detail: "100 random tables, affine and exponential maps".into(),
    });
    Ok(checks)
}

fn oracle_suite(trials: u64, seed: u64, m: usize) -> infalign::Result<Vec<Check>> {
    let report = suites::oracle_agreement(4, trials, seed, m)?;
    let fraction = report.pass_fraction();
    let worst = report
        .win_cells
        .iter()
        .filter(|c| c.z_score.is_finite())
        .max_by(|a, b| a.z_score.partial_cmp(&b.z_score).unwrap());
    let mut checks = vec![Check {
        name: "oracle/win-rate-agreement".into(),
        passed: fraction >= 0.99,
        detail: format!(
            "{:.2}% of {} cells within 3 std errors (worst z = {:.2} at {} beta={:.4} {})",
            fraction * 100.0,
            report.win_cells.len(),
            worst.map(|c| c.z_score).unwrap_or(0.0),
            worst.map(|c| c.transform.clone()).unwrap_or_default(),
            worst.map(|c| c.beta).unwrap_or(0.0),
            worst.map(|c| c.procedure.clone()).unwrap_or_default(),
        ),
    }];
    checks.push(Check {
        name: "oracle/kl-agreement".into(),
        passed: report.all_kl_pass(),
        detail: format!("{} KL cells", report.kl_cells.len()),
    });
    Ok(checks)
}

fn discrete_suite(seed: u64) -> infalign::Result<Vec<Check>> {
    let (passed, total) =
        suites::discrete_optimality(100, &[0.1, 1.0, 10.0], 10_000, seed.wrapping_add(33))?;
    Ok(vec![Check {
        name: "discrete/no-procedure-optimality".into(),
        passed: passed == total,
        detail: format!("{passed}/{total} instances"),
    }])
}

fn multitask_suite(seed: u64) -> infalign::Result<Vec<Check>> {
    let (passed, total, worst_tv, worst_spread) =
        suites::multitask_suite(20, seed.wrapping_add(44))?;
    Ok(vec![Check {
        name: "multitask/bilevel-equivalence".into(),
        passed: passed == total,
        detail: format!(
            "{passed}/{total} instances (worst TV {worst_tv:.2e}, worst gap spread {worst_spread:.2e})"
        ),
    }])
}
