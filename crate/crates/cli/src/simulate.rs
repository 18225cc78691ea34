use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use fmgm::model::{write_dataset, write_schema};
use fmgm::simgen::{self, GibbsConfig, GroundTruth};
use fmgm::{Group, MixedDataset};
use serde::Serialize;

use crate::files::{create_dir, write_file, write_manifest};
use crate::settings::Runtime;

#[derive(Debug, Clone, clap::Args, Serialize)]
pub struct Args {
    /// Output directory.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Continuous variables.
    #[arg(long, default_value_t = 50)]
    pub p: usize,
    /// Categorical variables.
    #[arg(long, default_value_t = 50)]
    pub q: usize,
    /// Levels of every categorical variable.
    #[arg(long, default_value_t = 4)]
    pub levels: usize,
    /// Observations per class.
    #[arg(long, default_value_t = 250)]
    pub n_per_class: usize,
    /// Number of equal-size variable blocks.
    #[arg(long, default_value_t = 5)]
    pub blocks: usize,
    /// Variables per block; must equal (p + q) / blocks when given.
    #[arg(long)]
    pub block_size: Option<usize>,
    #[arg(long, default_value_t = 1000)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 100)]
    pub thin: usize,
    #[command(flatten)]
    pub runtime: Runtime,
}

pub const OUTPUTS: [&str; 5] = ["data.csv", "schema.tsv", "truth_class1.tsv", "truth_class2.tsv", "truth_diff.tsv"];

pub fn run(args: &Args) -> Result<u8> {
    let (truth, data) = generate(args)?;
    write_outputs(&args.out, &truth, &data)?;
    write_manifest(&args.out, "simulate", args, &OUTPUTS)?;
    Ok(0)
}

pub fn generate(args: &Args) -> Result<(GroundTruth, MixedDataset)> {
    let n = args.p + args.q;
    if args.blocks == 0 || !n.is_multiple_of(args.blocks) {
        bail!("{n} variables cannot be split into {} equal blocks", args.blocks);
    }
    if let Some(size) = args.block_size {
        if size * args.blocks != n {
            bail!("{} blocks of {size} do not cover {n} variables", args.blocks);
        }
    }
    if args.n_per_class == 0 {
        bail!("--n-per-class must be positive");
    }
    let truth = simgen::build_truth(args.p, args.q, args.levels, args.blocks, args.seed)?;
    let gibbs = GibbsConfig { burn_in: args.burn_in, thin: args.thin };
    // distinct stream from the truth draw
    let data =
        simgen::gibbs_sample(&truth.params, &truth.schema, args.n_per_class, gibbs, args.seed ^ 0x005E_ED0F_6155)?;
    Ok((truth, data))
}

pub fn write_outputs(dir: &Path, truth: &GroundTruth, data: &MixedDataset) -> Result<()> {
    create_dir(dir)?;
    write_file(dir, "data.csv", |w| Ok(write_dataset(w, data)?))?;
    write_file(dir, "schema.tsv", |w| Ok(write_schema(w, &truth.schema)?))?;
    write_file(dir, "truth_class1.tsv", |w| Ok(truth.write_class_tsv(Group::One, w)?))?;
    write_file(dir, "truth_class2.tsv", |w| Ok(truth.write_class_tsv(Group::Two, w)?))?;
    write_file(dir, "truth_diff.tsv", |w| Ok(truth.write_diff_tsv(w)?))?;
    Ok(())
}
