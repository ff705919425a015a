//! `infalign calibrate`: empirical per-prompt calibration plus a transform,
//! applied to line-delimited reward records.

use std::collections::BTreeMap;
use std::path::PathBuf;

use infalign::calibration::{self, CalibrationTable, ScoredRecord};
use infalign::transforms::Transform;
use serde_json::json;

use crate::errors::{CliError, CliResult};
use crate::manifest::RunWriter;

#[derive(clap::Args)]
pub struct Args {
    /// Input reward records (JSON lines: prompt_id, response_id, reward).
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "calibrated")]
    pub out: PathBuf,
    /// Transform spec: identity | log | log:<eps> | exp:<t> | table:<path>.
    #[arg(long, default_value = "identity")]
    pub transform: String,
    /// Seed recorded in the manifest (calibration itself is deterministic).
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

pub fn run(args: Args) -> CliResult<()> {
    let transform = Transform::parse_spec(&args.transform).map_err(CliError::config)?;

    let file = std::fs::File::open(&args.input)
        .map_err(|e| CliError::io(format!("opening {}: {e}", args.input.display())))?;
    let records =
        calibration::read_records(std::io::BufReader::new(file)).map_err(CliError::io)?;
    if records.is_empty() {
        return Err(CliError::Io("no records".into()));
    }

    let tables: BTreeMap<String, CalibrationTable> =
        CalibrationTable::build_all(&records).map_err(CliError::io)?;

    let mut scored = Vec::with_capacity(records.len());
    for record in &records {
        let table = &tables[&record.prompt_id];
        let calibrated = table.calibrate(record.reward).map_err(CliError::io)?;
        scored.push(ScoredRecord {
            prompt_id: record.prompt_id.clone(),
            response_id: record.response_id.clone(),
            reward: record.reward,
            calibrated: calibrated.value(),
            transformed: Some(transform.compose(calibrated).value()),
        });
    }

    let config = json!({
        "command": "calibrate",
        "input": args.input.display().to_string(),
        "transform": args.transform,
        "log_epsilon": match &transform {
            Transform::Log { epsilon } => Some(*epsilon),
            _ => None,
        },
        "seed": args.seed,
    });
    let mut writer = RunWriter::new(&args.out, args.seed, config)?;

    let mut body = Vec::new();
    calibration::write_scored_records(&mut body, &scored).map_err(CliError::io)?;
    writer.write("records.jsonl", &body)?;

    let summary = json!({
        "transform": args.transform,
        "prompts": tables
            .values()
            .map(|t| {
                json!({
                    "prompt_id": t.prompt_id(),
                    "k": t.k(),
                    "min_reward": t.sorted_rewards().first(),
                    "max_reward": t.sorted_rewards().last(),
                })
            })
            .collect::<Vec<_>>(),
    });
    let mut summary_bytes = serde_json::to_vec_pretty(&summary).map_err(CliError::io)?;
    summary_bytes.push(b'\n');
    writer.write("summary.json", &summary_bytes)?;

    let manifest = writer.finish()?;
    println!(
        "calibrated {} records across {} prompts -> {}",
        scored.len(),
        tables.len(),
        manifest.parent().unwrap_or(&args.out).display()
    );
    Ok(())
}
