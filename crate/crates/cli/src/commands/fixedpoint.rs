//! `infalign fixedpoint`: derive an optimized transform by solving the
//! coupled equations, exporting it as a `table:` CSV plus convergence
//! metadata.

use std::path::PathBuf;

use infalign::fixed_point::{solve_bon_fp, solve_won_fp, FixedPointConfig};
use serde_json::json;

use crate::errors::{CliError, CliResult};
use crate::manifest::RunWriter;

#[derive(clap::Args)]
pub struct Args {
    /// Procedure size N.
    #[arg(long)]
    pub n: u32,
    /// Regularizer strength.
    #[arg(long)]
    pub beta: f64,
    /// Which coupled equations to solve: bon or won.
    #[arg(long)]
    pub kind: String,
    /// Output directory.
    #[arg(long, default_value = "fixedpoint")]
    pub out: PathBuf,
    /// Grid size (odd).
    #[arg(long, default_value_t = infalign::analytic::DEFAULT_GRID_SIZE)]
    pub grid: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 10_000)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 0.5)]
    pub damping: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

pub fn run(args: Args) -> CliResult<()> {
    let config = FixedPointConfig {
        m: args.grid,
        tol: args.tol,
        max_iter: args.max_iter,
        damping: args.damping,
    };
    let solution = match args.kind.as_str() {
        "bon" => solve_bon_fp(args.n, args.beta, config),
        "won" => solve_won_fp(args.n, args.beta, config),
        other => {
            return Err(CliError::Config(format!(
                "kind must be `bon` or `won`, got `{other}`"
            )))
        }
    }
    .map_err(CliError::config)?;

    let config_value = json!({
        "command": "fixedpoint",
        "kind": args.kind,
        "n": args.n,
        "beta": args.beta,
        "grid": args.grid,
        "tol": args.tol,
        "max_iter": args.max_iter,
        "damping": args.damping,
        "seed": args.seed,
    });
    let mut writer = RunWriter::new(&args.out, args.seed, config_value)?;

    let mut table = Vec::new();
    solution
        .transform
        .write_table(&mut table, args.grid)
        .map_err(CliError::io)?;
    writer.write("transform.csv", &table)?;

    let meta = json!({
        "kind": args.kind,
        "n": args.n,
        "beta": args.beta,
        "converged": solution.converged,
        "residual": solution.residual,
        "iterations": solution.iterations,
    });
    let mut meta_bytes = serde_json::to_vec_pretty(&meta).map_err(CliError::io)?;
    meta_bytes.push(b'\n');
    writer.write("convergence.json", &meta_bytes)?;

    writer.finish()?;
    println!(
        "{}_fp N={} beta={}: converged={} iterations={} residual={}",
        args.kind, args.n, args.beta, solution.converged, solution.iterations, solution.residual
    );
    if !solution.converged {
        return Err(CliError::verify(format!(
            "fixed point did not converge within {} iterations (residual {})",
            args.max_iter, solution.residual
        )));
    }
    Ok(())
}
