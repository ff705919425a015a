//! `infalign curve`: tradeoff-curve sweeps over (transform, procedure,
//! beta) cells, emitting one CSV per curve plus a combined SVG chart.

use std::path::PathBuf;

use rayon::prelude::*;

use infalign::analytic::InferenceProcedure;
use infalign::suites::SuiteTransform;

use crate::config::{slug, SweepConfig};
use crate::errors::{CliError, CliResult};
use crate::manifest::RunWriter;
use crate::svg;

#[derive(clap::Args)]
pub struct Args {
    /// Sweep configuration (TOML). Defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override the configured output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Override the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the configured grid size.
    #[arg(long)]
    pub grid: Option<usize>,
}

struct CurveData {
    transform_label: String,
    procedure_label: String,
    rows: Vec<(f64, f64, f64)>, // beta, kl, win_rate (sorted by kl)
}

pub fn run(args: Args) -> CliResult<()> {
    let mut config = match &args.config {
        Some(path) => SweepConfig::load(path)?,
        None => SweepConfig::default(),
    };
    if let Some(out) = &args.out {
        config.out_dir = out.display().to_string();
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(grid) = args.grid {
        config.grid_size = grid;
    }

    // Validate everything before any computation.
    let transforms = config.parsed_transforms()?;
    let procedures = config.parsed_procedures()?;
    let betas = config.beta_grid()?;
    if config.grid_size < 3 || config.grid_size % 2 == 0 {
        return Err(CliError::Config(format!(
            "grid_size must be odd and >= 3, got {}",
            config.grid_size
        )));
    }

    let curves = compute_curves(&transforms, &procedures, &betas, config.grid_size)?;

    let config_value = serde_json::to_value(&config).map_err(CliError::config)?;
    let mut writer = RunWriter::new(PathBuf::from(&config.out_dir).as_path(), config.seed, config_value)?;

    for curve in &curves {
        let mut csv = String::from("beta,kl,win_rate,transform,procedure\n");
        for (beta, kl, win) in &curve.rows {
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                beta, kl, win, curve.transform_label, curve.procedure_label
            ));
        }
        let name = format!(
            "curve_{}_{}.csv",
            slug(&curve.transform_label),
            slug(&curve.procedure_label)
        );
        writer.write(&name, csv.as_bytes())?;
    }

    let svg_curves: Vec<svg::Curve> = curves
        .iter()
        .map(|c| svg::Curve {
            label: if procedures.len() == 1 {
                c.transform_label.clone()
            } else {
                format!("{} / {}", c.transform_label, c.procedure_label)
            },
            points: c.rows.iter().map(|&(_, kl, w)| (kl, w)).collect(),
        })
        .collect();
    let title = if procedures.len() == 1 {
        format!("win rate vs KL ({})", curves[0].procedure_label)
    } else {
        "win rate vs KL".to_string()
    };
    writer.write("curves.svg", svg::render(&title, &svg_curves).as_bytes())?;

    let manifest = writer.finish()?;
    println!(
        "wrote {} curves -> {}",
        curves.len(),
        manifest.parent().map(|p| p.display().to_string()).unwrap_or_default()
    );
    Ok(())
}

fn compute_curves(
    transforms: &[SuiteTransform],
    procedures: &[InferenceProcedure],
    betas: &[f64],
    m: usize,
) -> CliResult<Vec<CurveData>> {
    let cells: Vec<(usize, usize)> = (0..transforms.len())
        .flat_map(|t| (0..procedures.len()).map(move |p| (t, p)))
        .collect();
    cells
        .par_iter()
        .map(|&(ti, pi)| -> CliResult<CurveData> {
            let transform = &transforms[ti];
            let procedure = &procedures[pi];
            let mut rows: Vec<(f64, f64, f64)> = betas
                .par_iter()
                .map(|&beta| -> CliResult<(f64, f64, f64)> {
                    let policy = transform.policy_at(beta, m).map_err(CliError::config)?;
                    Ok((beta, policy.kl_divergence(), policy.win_rate(procedure)))
                })
                .collect::<CliResult<Vec<_>>>()?;
            rows.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(b.0.partial_cmp(&a.0).unwrap()));
            Ok(CurveData {
                transform_label: transform.label(),
                procedure_label: procedure.label(),
                rows,
            })
        })
        .collect()
}
