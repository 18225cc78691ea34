use std::path::{Path, PathBuf};

use anyhow::{anyhow, Result};
use fmgm::optim::{self, FitResult};
use fmgm::prox::{self, ProxConfig};
use fmgm::pseudolik::PseudoLikelihood;
use fmgm::{MixedDataset, ParameterPair, PenaltyConfig};
use serde::Serialize;

use crate::files::{
    create_dir, load_data, read_lambdas, write_class_edges, write_diff_edges, write_file, write_manifest, ParamsFile,
};
use crate::settings::{Optim, Runtime};

#[derive(Debug, Clone, clap::Args, Serialize)]
pub struct Args {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    /// Penalty table as written by `steps`; single flags below override it.
    #[arg(long)]
    pub lambdas: Option<PathBuf>,
    #[arg(long)]
    pub lambda_cc: Option<f64>,
    #[arg(long)]
    pub lambda_cd: Option<f64>,
    #[arg(long)]
    pub lambda_dd: Option<f64>,
    #[arg(long)]
    pub lambda_diff_cc: Option<f64>,
    #[arg(long)]
    pub lambda_diff_cd: Option<f64>,
    #[arg(long)]
    pub lambda_diff_dd: Option<f64>,
    #[command(flatten)]
    pub optim: Optim,
    #[command(flatten)]
    pub runtime: Runtime,
}

impl Args {
    fn penalties(&self) -> Result<PenaltyConfig> {
        let base = match &self.lambdas {
            Some(path) => Some(read_lambdas(path)?.to_array()),
            None => None,
        };
        let flags = [
            self.lambda_cc,
            self.lambda_cd,
            self.lambda_dd,
            self.lambda_diff_cc,
            self.lambda_diff_cd,
            self.lambda_diff_dd,
        ];
        let mut out = [0.0; 6];
        for k in 0..6 {
            out[k] = flags[k].or(base.map(|b| b[k])).ok_or_else(|| {
                anyhow!(
                    "no value for {}; pass --lambdas or --{}",
                    PenaltyConfig::NAMES[k],
                    PenaltyConfig::NAMES[k].replace('_', "-")
                )
            })?;
        }
        Ok(PenaltyConfig::new(out)?)
    }
}

pub const OUTPUTS: [&str; 5] =
    ["edges_class1.tsv", "edges_class2.tsv", "edges_diff.tsv", "fit_summary.tsv", "params.json"];

#[derive(Serialize)]
struct Resolved<'a> {
    #[serde(flatten)]
    args: &'a Args,
    penalties: PenaltyConfig,
}

pub fn run(args: &Args) -> Result<u8> {
    let pen = args.penalties()?;
    let data = load_data(&args.data, &args.schema)?;
    let ocfg = args.optim.config(args.runtime.workers())?;
    let res = optim::fit(&data, &pen, &ocfg, &ProxConfig::default())?;
    write_fit(&args.out, &data, &pen, &res, ocfg.workers)?;
    write_manifest(&args.out, "fit", &Resolved { args, penalties: pen }, &OUTPUTS)?;
    Ok(0)
}

/// Objective at `theta`, recomputed from scratch.
pub fn objective(data: &MixedDataset, theta: &ParameterPair, pen: &PenaltyConfig, workers: usize) -> Result<f64> {
    let pl = PseudoLikelihood::with_workers(data, workers)?;
    Ok(pl.value(theta)? + prox::penalty(theta, pen))
}

pub fn write_fit(
    dir: &Path,
    data: &MixedDataset,
    pen: &PenaltyConfig,
    res: &FitResult<ParameterPair>,
    workers: usize,
) -> Result<()> {
    let schema = data.schema();
    let obj = objective(data, &res.theta, pen, workers)?;
    create_dir(dir)?;
    write_edge_files(dir, &res.theta, schema)?;
    write_file(dir, "fit_summary.tsv", |w| {
        writeln!(w, "key\tvalue")?;
        writeln!(w, "objective\t{obj}")?;
        writeln!(w, "iterations\t{}", res.iterations)?;
        writeln!(w, "converged\t{}", res.converged)?;
        writeln!(w, "final_l\t{}", res.final_l)?;
        writeln!(w, "prox_warnings\t{}", res.prox_warnings)?;
        let tail = &res.objective_trace[res.objective_trace.len().saturating_sub(10)..];
        let tail: Vec<String> = tail.iter().map(|v| v.to_string()).collect();
        writeln!(w, "objective_tail\t{}", tail.join(","))?;
        let rmsd = res.rmsd_trace.last().map_or(String::new(), |v| v.to_string());
        writeln!(w, "last_rmsd\t{rmsd}")?;
        Ok(())
    })?;
    let params = ParamsFile {
        penalties: *pen,
        objective: obj,
        scaling: data.scaling().map(|s| s.to_vec()),
        theta: res.theta.clone(),
    };
    write_file(dir, "params.json", |w| {
        serde_json::to_writer(&mut *w, &params)?;
        writeln!(w)?;
        Ok(())
    })?;
    Ok(())
}

pub fn write_edge_files(dir: &Path, theta: &ParameterPair, schema: &fmgm::VariableSchema) -> Result<()> {
    write_file(dir, "edges_class1.tsv", |w| write_class_edges(w, theta, 0, schema))?;
    write_file(dir, "edges_class2.tsv", |w| write_class_edges(w, theta, 1, schema))?;
    write_file(dir, "edges_diff.tsv", |w| write_diff_edges(w, theta, schema))?;
    Ok(())
}
