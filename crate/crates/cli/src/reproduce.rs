use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fmgm::metrics::{self, Metrics, MetricsReport};
use fmgm::optim;
use fmgm::stability;
use fmgm::{Group, ParameterPair};
use serde::Serialize;

use crate::files::{create_dir, load_data, write_file, write_lambdas, write_manifest};
use crate::settings::{Optim, Runtime, Steps};
use crate::{evaluate, fit, simulate, EXIT_FALLBACK};

#[derive(Debug, Clone, clap::Args, Serialize)]
pub struct Args {
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Repetitions.
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    #[arg(long, default_value_t = 50)]
    pub p: usize,
    #[arg(long, default_value_t = 50)]
    pub q: usize,
    #[arg(long, default_value_t = 4)]
    pub levels: usize,
    #[arg(long, default_value_t = 250)]
    pub n_per_class: usize,
    #[arg(long, default_value_t = 5)]
    pub blocks: usize,
    #[arg(long, default_value_t = 1000)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 100)]
    pub thin: usize,
    #[command(flatten)]
    pub steps: Steps,
    #[command(flatten)]
    pub optim: Optim,
    #[command(flatten)]
    pub runtime: Runtime,
}

pub const METHODS: [&str; 2] = ["fmgm", "baseline"];

pub fn run(args: &Args) -> Result<u8> {
    if args.reps == 0 {
        bail!("--reps must be at least 1");
    }
    create_dir(&args.out)?;
    let mut fused = Vec::new();
    let mut separate = Vec::new();
    for r in 1..=args.reps {
        let dir = args.out.join(format!("rep_{r:03}"));
        match repetition(args, r, &dir) {
            Ok((a, b)) => {
                fused.push(a);
                separate.push(b);
            }
            Err(e) => eprintln!("warning: repetition {r} failed: {e:#}"),
        }
    }
    if fused.is_empty() {
        bail!("no repetition completed");
    }
    write_file(&args.out, "summary.tsv", |w| write_summary(w, args.reps, &[&fused, &separate]))?;
    write_manifest(&args.out, "reproduce", args, &["summary.tsv"])?;
    Ok(0)
}

fn rep_seed(seed: u64, r: usize) -> u64 {
    seed.wrapping_mul(10_000).wrapping_add(r as u64)
}

/// One simulate → steps → fit → evaluate pass, plus the baseline on the
/// same data.
fn repetition(args: &Args, r: usize, dir: &Path) -> Result<(MetricsReport, MetricsReport)> {
    let seed = rep_seed(args.seed, r);
    let sim_dir = dir.join("sim");
    simulate::run(&simulate::Args {
        out: sim_dir.clone(),
        seed,
        p: args.p,
        q: args.q,
        levels: args.levels,
        n_per_class: args.n_per_class,
        blocks: args.blocks,
        block_size: None,
        burn_in: args.burn_in,
        thin: args.thin,
        runtime: args.runtime.clone(),
    })
    .context("simulate")?;
    let data_path = sim_dir.join("data.csv");
    let schema_path = sim_dir.join("schema.tsv");

    let steps_dir = dir.join("steps");
    let code = crate::steps::run(&crate::steps::Args {
        data: data_path.clone(),
        schema: schema_path.clone(),
        out: steps_dir.clone(),
        seed,
        steps: args.steps.clone(),
        optim: args.optim.clone(),
        runtime: args.runtime.clone(),
    })
    .context("steps")?;
    if code == EXIT_FALLBACK {
        log::info!("repetition {r}: penalty selection used a fallback");
    }

    let fit_dir = dir.join("fmgm");
    fit::run(&fit::Args {
        data: data_path.clone(),
        schema: schema_path.clone(),
        out: fit_dir.clone(),
        lambdas: Some(steps_dir.join("lambdas.tsv")),
        lambda_cc: None,
        lambda_cd: None,
        lambda_dd: None,
        lambda_diff_cc: None,
        lambda_diff_cd: None,
        lambda_diff_dd: None,
        optim: args.optim.clone(),
        runtime: args.runtime.clone(),
    })
    .context("fit")?;
    let fused = evaluate::run_report(&evaluate::Args {
        truth: sim_dir.clone(),
        estimate: fit_dir,
        schema: None,
        out: dir.join("eval_fmgm"),
    })
    .context("evaluate")?;

    let base_dir = dir.join("baseline");
    baseline(args, seed, &data_path, &schema_path, &base_dir).context("baseline")?;
    let separate = evaluate::run_report(&evaluate::Args {
        truth: sim_dir,
        estimate: base_dir,
        schema: None,
        out: dir.join("eval_baseline"),
    })
    .context("evaluate baseline")?;
    Ok((fused, separate))
}

/// Each class on its own: three-class stability selection on that class's
/// rows, then a single-class fit.
fn baseline(args: &Args, seed: u64, data: &Path, schema: &Path, dir: &Path) -> Result<()> {
    let data = load_data(data, schema)?;
    let cfg = args.steps.config(seed)?;
    let ocfg = args.optim.config(args.runtime.workers())?;
    create_dir(dir)?;
    let mut thetas = Vec::with_capacity(2);
    for g in [Group::One, Group::Two] {
        let (pen, report) = stability::select_lambdas_single(&data, g, &cfg, &ocfg)?;
        let name = format!("lambdas_class{}.tsv", g.label());
        write_file(dir, &name, |w| write_lambdas(w, &pen))?;
        thetas.push(optim::fit_single_group(&data, g, &pen, None, &ocfg)?.theta);
        if report.any_fallback() {
            log::info!("baseline class {}: penalty selection used a fallback", g.label());
        }
    }
    let t2 = thetas.pop().expect("two classes");
    let t1 = thetas.pop().expect("two classes");
    let pair = ParameterPair::new(t1, t2)?;
    fit::write_edge_files(dir, &pair, data.schema())?;
    Ok(())
}

/// Mean and sd of each rate per table row and method.
fn write_summary(w: &mut dyn Write, reps: usize, by_method: &[&Vec<MetricsReport>]) -> Result<()> {
    writeln!(w, "# completed {} of {reps} repetitions", by_method[0].len())?;
    let mut header = vec!["method", "row", "scope", "edge_type"].into_iter().map(String::from).collect::<Vec<_>>();
    for name in Metrics::NAMES {
        header.push(format!("{name}_mean"));
        header.push(format!("{name}_sd"));
    }
    writeln!(w, "{}", header.join("\t"))?;
    for (method, reports) in METHODS.iter().zip(by_method) {
        for (cat, stats) in metrics::summarize(reports) {
            let mut row =
                vec![method.to_string(), cat.label().into(), cat.scope.as_str().into(), cat.edge_type().into()];
            for (mean, sd) in stats {
                row.push(mean.to_string());
                row.push(sd.to_string());
            }
            writeln!(w, "{}", row.join("\t"))?;
        }
    }
    Ok(())
}
