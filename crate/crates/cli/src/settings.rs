//! Flag groups shared by several commands.

use anyhow::{bail, Context, Result};
use clap::Args;
use fmgm::optim::OptimizerConfig;
use fmgm::stability::{self, StepsConfig};
use serde::Serialize;

#[derive(Debug, Clone, Args, Serialize)]
pub struct Runtime {
    /// Worker threads; defaults to the available cores.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Run on one thread; the reproducibility reference.
    #[arg(long, conflicts_with = "workers")]
    pub single_thread: bool,
}

impl Runtime {
    pub fn workers(&self) -> usize {
        if self.single_thread {
            return 1;
        }
        self.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }
}

pub fn init_threads(rt: &Runtime) -> Result<()> {
    let n = rt.workers();
    if n == 0 {
        bail!("--workers must be at least 1");
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the worker pool")
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Optim {
    /// Iteration cap of the proximal gradient method.
    #[arg(long, default_value_t = 2000)]
    pub max_iter: usize,
    /// RMSD between successive iterates below which an iteration counts as
    /// converged (three in a row stop the run).
    #[arg(long, default_value_t = 1e-5)]
    pub rmsd_tol: f64,
}

impl Optim {
    pub fn config(&self, workers: usize) -> Result<OptimizerConfig> {
        let cfg = OptimizerConfig { max_iter: self.max_iter, rmsd_tol: self.rmsd_tol, workers, ..Default::default() };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Steps {
    /// λ grid as MIN:MAX:COUNT, equally spaced on the log2 scale.
    #[arg(long, default_value = "0.08:0.32:7")]
    pub grid: String,
    /// Largest tolerated monotonized instability.
    #[arg(long, default_value_t = 0.05)]
    pub threshold: f64,
    #[arg(long, default_value_t = 20)]
    pub subsamples: usize,
    /// Rows per subsample; defaults to round(10 sqrt(n)).
    #[arg(long)]
    pub subsample_size: Option<usize>,
}

impl Steps {
    pub fn config(&self, seed: u64) -> Result<StepsConfig> {
        Ok(StepsConfig {
            n_subsamples: self.subsamples,
            subsample_size: self.subsample_size,
            threshold: self.threshold,
            grid: parse_grid(&self.grid)?,
            seed,
        })
    }
}

pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    let [min, max, count] = parts[..] else {
        bail!("--grid expects MIN:MAX:COUNT, got `{text}`");
    };
    let min: f64 = min.parse().with_context(|| format!("bad grid minimum `{min}`"))?;
    let max: f64 = max.parse().with_context(|| format!("bad grid maximum `{max}`"))?;
    let count: usize = count.parse().with_context(|| format!("bad grid count `{count}`"))?;
    Ok(stability::log2_grid(min, max, count)?)
}
