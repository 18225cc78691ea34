use std::path::PathBuf;

use anyhow::Result;
use fmgm::prox::ProxConfig;
use fmgm::stability;
use serde::Serialize;

use crate::files::{create_dir, load_data, write_file, write_lambdas, write_manifest};
use crate::settings::{Optim, Runtime, Steps};
use crate::EXIT_FALLBACK;

#[derive(Debug, Clone, clap::Args, Serialize)]
pub struct Args {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[command(flatten)]
    pub steps: Steps,
    #[command(flatten)]
    pub optim: Optim,
    #[command(flatten)]
    pub runtime: Runtime,
}

pub fn run(args: &Args) -> Result<u8> {
    let data = load_data(&args.data, &args.schema)?;
    let cfg = args.steps.config(args.seed)?;
    let ocfg = args.optim.config(args.runtime.workers())?;
    let (pen, report) = stability::select_lambdas(&data, &cfg, &ocfg, &ProxConfig::default())?;
    create_dir(&args.out)?;
    write_file(&args.out, "lambdas.tsv", |w| write_lambdas(w, &pen))?;
    write_file(&args.out, "stability_report.tsv", |w| Ok(report.write_tsv(w)?))?;
    write_manifest(&args.out, "steps", args, &["lambdas.tsv", "stability_report.tsv"])?;
    if report.any_fallback() {
        let classes: Vec<&str> = report.classes.iter().filter(|c| c.fallback).map(|c| c.class.as_str()).collect();
        eprintln!("warning: no grid value met the threshold for {}; used the largest", classes.join(", "));
        return Ok(EXIT_FALLBACK);
    }
    Ok(0)
}
