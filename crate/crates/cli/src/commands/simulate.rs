//! `infalign simulate`: Monte Carlo estimates against analytic values,
//! reported as `transform,beta,procedure,analytic,mc,std_err,z_score` CSV.

use std::path::PathBuf;

use infalign::analytic::InferenceProcedure;
use infalign::mc_oracle::{estimate_win_rate, BaseDistribution, RewindFallback, ToyModel};
use infalign::transforms::Transform;
use serde_json::json;

use crate::config::parse_sweep_transform;
use crate::errors::{CliError, CliResult};
use crate::manifest::RunWriter;

#[derive(clap::Args)]
pub struct Args {
    /// Comma-separated transform specs (bon_fp:<N> / won_fp:<N> allowed).
    #[arg(long, default_value = "identity")]
    pub transforms: String,
    /// Comma-separated beta values.
    #[arg(long, default_value = "1.0")]
    pub betas: String,
    /// Comma-separated procedure specs.
    #[arg(long, default_value = "identity")]
    pub procedures: String,
    /// Monte Carlo trials per cell.
    #[arg(long, default_value_t = 1_000_000)]
    pub trials: u64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Grid size (odd).
    #[arg(long, default_value_t = infalign::analytic::DEFAULT_GRID_SIZE)]
    pub grid: usize,
    /// Rewind-and-repeat fallback: last | best. The analytic column is
    /// left empty for `best`, which has no closed form here.
    #[arg(long, default_value = "last")]
    pub rewind_fallback: String,
    /// Output directory.
    #[arg(long, default_value = "simulate")]
    pub out: PathBuf,
}

pub fn run(args: Args) -> CliResult<()> {
    let fallback = RewindFallback::parse(&args.rewind_fallback).map_err(CliError::config)?;
    let transforms: Vec<_> = args
        .transforms
        .split(',')
        .map(parse_sweep_transform)
        .collect::<CliResult<_>>()?;
    let procedures: Vec<InferenceProcedure> = args
        .procedures
        .split(',')
        .map(|s| InferenceProcedure::parse_spec(s.trim()).map_err(CliError::config))
        .collect::<CliResult<_>>()?;
    let betas: Vec<f64> = args
        .betas
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| CliError::Config(format!("beta `{s}`: {e}")))
        })
        .collect::<CliResult<_>>()?;
    if betas.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
        return Err(CliError::Config("betas must be positive".into()));
    }

    let mut csv = String::from("transform,beta,procedure,analytic,mc,std_err,z_score\n");
    let mut cell = 0u64;
    for transform in &transforms {
        for &beta in &betas {
            let policy = transform.policy_at(beta, args.grid).map_err(CliError::config)?;
            let tabulated =
                Transform::tabulated(policy.phi_values().to_vec()).map_err(CliError::config)?;
            for procedure in &procedures {
                if matches!(procedure, InferenceProcedure::Custom { .. }) {
                    return Err(CliError::Config(
                        "custom procedures cannot be simulated by literal sampling".into(),
                    ));
                }
                cell += 1;
                let model = ToyModel {
                    base: BaseDistribution::Uniform,
                    transform: tabulated.clone(),
                    beta,
                    seed: args.seed.wrapping_add(cell.wrapping_mul(0x9e3779b97f4a7c15)),
                };
                let base = ToyModel::base_policy(BaseDistribution::Uniform, args.seed ^ cell);
                let est = estimate_win_rate(&model, &base, procedure, args.trials, fallback, args.grid)
                    .map_err(CliError::config)?;
                let analytic_supported = !matches!(
                    (procedure, fallback),
                    (InferenceProcedure::RewindRepeat { .. }, RewindFallback::Best)
                );
                if analytic_supported {
                    let analytic = policy.win_rate(procedure);
                    csv.push_str(&format!(
                        "{},{},{},{},{},{},{}\n",
                        transform.label(),
                        beta,
                        procedure.label(),
                        analytic,
                        est.value,
                        est.std_error,
                        est.z_score(analytic)
                    ));
                } else {
                    csv.push_str(&format!(
                        "{},{},{},,{},{},\n",
                        transform.label(),
                        beta,
                        procedure.label(),
                        est.value,
                        est.std_error,
                    ));
                }
            }
        }
    }

    let config_value = json!({
        "command": "simulate",
        "transforms": args.transforms,
        "betas": args.betas,
        "procedures": args.procedures,
        "trials": args.trials,
        "grid": args.grid,
        "rewind_fallback": args.rewind_fallback,
        "seed": args.seed,
    });
    let mut writer = RunWriter::new(&args.out, args.seed, config_value)?;
    writer.write("report.csv", csv.as_bytes())?;
    writer.finish()?;
    print!("{csv}");
    Ok(())
}
