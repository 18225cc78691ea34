use std::path::{Path, PathBuf};

use anyhow::Result;
use fmgm::metrics::{MetricsReport, Support};
use fmgm::VariableSchema;
use serde::Serialize;

use crate::files::{create_dir, load_schema, read_edge_set, write_file, write_manifest};

#[derive(Debug, Clone, clap::Args, Serialize)]
pub struct Args {
    /// Directory with truth_class1.tsv, truth_class2.tsv and truth_diff.tsv.
    #[arg(long)]
    pub truth: PathBuf,
    /// Directory with edges_class1.tsv, edges_class2.tsv and edges_diff.tsv
    /// (truth-named files are accepted too).
    #[arg(long)]
    pub estimate: PathBuf,
    /// Defaults to schema.tsv in the truth directory.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

pub fn run(args: &Args) -> Result<u8> {
    run_report(args)?;
    Ok(0)
}

/// Runs the command and hands back the report it wrote.
pub fn run_report(args: &Args) -> Result<MetricsReport> {
    let schema_path = args.schema.clone().unwrap_or_else(|| args.truth.join("schema.tsv"));
    let schema = load_schema(&schema_path)?;
    let report = evaluate_dirs(&args.truth, &args.estimate, &schema)?;
    create_dir(&args.out)?;
    write_file(&args.out, "metrics.tsv", |w| Ok(report.write_tsv(w)?))?;
    write_manifest(&args.out, "evaluate", args, &["metrics.tsv"])?;
    Ok(report)
}

pub fn evaluate_dirs(truth: &Path, estimate: &Path, schema: &VariableSchema) -> Result<MetricsReport> {
    let truth = read_support(truth, "truth", schema)?;
    let prefix = if estimate.join("edges_class1.tsv").exists() { "edges" } else { "truth" };
    let estimate = read_support(estimate, prefix, schema)?;
    Ok(MetricsReport::new(&estimate, &truth, schema.layout()))
}

fn read_support(dir: &Path, prefix: &str, schema: &VariableSchema) -> Result<Support> {
    Ok(Support {
        class: [
            read_edge_set(&dir.join(format!("{prefix}_class1.tsv")), schema)?,
            read_edge_set(&dir.join(format!("{prefix}_class2.tsv")), schema)?,
        ],
        diff: read_edge_set(&dir.join(format!("{prefix}_diff.tsv")), schema)?,
    })
}
