//! `fracdet stats`: dataset distribution report.

use std::path::PathBuf;

use clap::Args;
use fracdet_core::coco::{distribution_report, parse_dataset, render_distribution_report};

use crate::failure::{ensure_dir, read_input, write_output, CmdResult, Failure};

/// Print image and annotation distribution counts for a COCO dataset.
#[derive(Debug, Args)]
pub struct StatsArgs {
    /// COCO dataset document to summarize
    #[arg(long)]
    pub dataset: PathBuf,
    /// Directory to receive stats.json (stdout-only without it)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(args: StatsArgs) -> CmdResult {
    let text = read_input(&args.dataset)?;
    let dataset = parse_dataset(&text).map_err(Failure::input)?;
    let report = distribution_report(&dataset);
    print!("{}", render_distribution_report(&report));
    if let Some(out) = &args.out {
        ensure_dir(out)?;
        let mut doc = serde_json::to_string_pretty(&report).expect("report serialization");
        doc.push('\n');
        write_output(&out.join("stats.json"), doc)?;
    }
    Ok(())
}
