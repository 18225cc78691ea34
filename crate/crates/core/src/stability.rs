//! Stability-based penalty selection over a λ grid.
//!
//! Every subsample is fitted at every grid value with all penalty weights
//! tied to that single λ. For each edge class the selection frequencies are
//! turned into an average instability, monotonized from the largest λ
//! downward, and the smallest λ whose monotonized instability stays under
//! the threshold is picked.
//!
//! The three difference classes (`diff_cc`, `diff_cd`, `diff_dd`) use the
//! same recipe on nonzero-difference frequencies. This extends the usual
//! three-class procedure; reports say so in their header.

use std::io::Write;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EdgeKey, EdgeKind, Group, Layout, MixedDataset, ParameterPair, ParameterSet, PenaltyConfig};
use crate::optim::{self, OptimizerConfig};
use crate::prox::ProxConfig;

/// Largest share of failed (subsample, λ) fits tolerated.
pub const MAX_FAILED_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EdgeClass {
    Cc,
    Cd,
    Dd,
    DiffCc,
    DiffCd,
    DiffDd,
}

impl EdgeClass {
    pub const ALL: [EdgeClass; 6] =
        [EdgeClass::Cc, EdgeClass::Cd, EdgeClass::Dd, EdgeClass::DiffCc, EdgeClass::DiffCd, EdgeClass::DiffDd];
    pub const NETWORK: [EdgeClass; 3] = [EdgeClass::Cc, EdgeClass::Cd, EdgeClass::Dd];

    pub fn as_str(self) -> &'static str {
        match self {
            EdgeClass::Cc => "cc",
            EdgeClass::Cd => "cd",
            EdgeClass::Dd => "dd",
            EdgeClass::DiffCc => "diff_cc",
            EdgeClass::DiffCd => "diff_cd",
            EdgeClass::DiffDd => "diff_dd",
        }
    }

    pub fn kind(self) -> EdgeKind {
        match self {
            EdgeClass::Cc | EdgeClass::DiffCc => EdgeKind::Cc,
            EdgeClass::Cd | EdgeClass::DiffCd => EdgeKind::Cd,
            EdgeClass::Dd | EdgeClass::DiffDd => EdgeKind::Dd,
        }
    }

    pub fn is_diff(self) -> bool {
        matches!(self, EdgeClass::DiffCc | EdgeClass::DiffCd | EdgeClass::DiffDd)
    }

    /// Position in [`PenaltyConfig::to_array`].
    pub fn penalty_index(self) -> usize {
        match self {
            EdgeClass::Cc => 0,
            EdgeClass::Cd => 1,
            EdgeClass::Dd => 2,
            EdgeClass::DiffCc => 3,
            EdgeClass::DiffCd => 4,
            EdgeClass::DiffDd => 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepsConfig {
    pub n_subsamples: usize,
    /// Rows per subsample; `None` uses [`default_subsample_size`].
    pub subsample_size: Option<usize>,
    pub threshold: f64,
    /// Candidate λ values in any order.
    pub grid: Vec<f64>,
    pub seed: u64,
}

impl Default for StepsConfig {
    fn default() -> Self {
        Self { n_subsamples: 20, subsample_size: None, threshold: 0.05, grid: default_grid(), seed: 1 }
    }
}

impl StepsConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_subsamples < 2 {
            return bad(format!("need at least 2 subsamples, got {}", self.n_subsamples));
        }
        if !(self.threshold > 0.0 && self.threshold < 0.5) {
            return bad(format!("threshold must lie in (0, 0.5), got {}", self.threshold));
        }
        if self.grid.is_empty() {
            return bad("the λ grid is empty".into());
        }
        if let Some(v) = self.grid.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return bad(format!("grid values must be finite and positive, got {v}"));
        }
        let b = self.resolved_size(n);
        if b == 0 || b >= n {
            return bad(format!("subsample size must lie in 1..{n}, got {b}"));
        }
        Ok(())
    }

    pub fn resolved_size(&self, n: usize) -> usize {
        self.subsample_size.unwrap_or_else(|| default_subsample_size(n))
    }

    /// The grid sorted from the largest λ to the smallest, duplicates removed.
    pub fn descending_grid(&self) -> Vec<f64> {
        let mut g = self.grid.clone();
        g.sort_by(|a, b| b.total_cmp(a));
        g.dedup();
        g
    }
}

/// `round(10 sqrt(n))`, or `floor(0.8 n)` when that would not leave any row
/// out.
pub fn default_subsample_size(n: usize) -> usize {
    let b = (10.0 * (n as f64).sqrt()).round() as usize;
    if b < n {
        b
    } else {
        (0.8 * n as f64).floor() as usize
    }
}

/// `count` values from `min` to `max`, equally spaced on the log2 scale,
/// ascending.
pub fn log2_grid(min: f64, max: f64, count: usize) -> Result<Vec<f64>> {
    if !(min > 0.0 && max >= min && max.is_finite()) || count == 0 || (count == 1 && max != min) {
        return Err(Error::Config(format!("bad grid {min}:{max}:{count}")));
    }
    if count == 1 {
        return Ok(vec![min]);
    }
    let step = (max / min).log2() / (count - 1) as f64;
    let mut g: Vec<f64> = (0..count).map(|k| min * (step * k as f64).exp2()).collect();
    g[count - 1] = max;
    Ok(g)
}

/// Seven log2-spaced values from 0.08 to 0.32.
pub fn default_grid() -> Vec<f64> {
    log2_grid(0.08, 0.32, 7).expect("valid default grid")
}

/// Probability that two independent fits disagree on an edge selected with
/// frequency `theta_hat`.
pub fn edge_instability(theta_hat: f64) -> f64 {
    2.0 * theta_hat * (1.0 - theta_hat)
}

/// Running maximum of `raw`, which is ordered from the largest λ down.
pub fn monotonize(raw: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(raw.len());
    let mut m = f64::NEG_INFINITY;
    for &v in raw {
        m = m.max(v);
        out.push(m);
    }
    out
}

/// Index (into a descending grid) of the smallest λ whose monotonized
/// instability is at most `threshold`, and whether the fallback to the
/// largest λ was needed.
pub fn pick_index(monotone: &[f64], threshold: f64) -> (usize, bool) {
    match monotone.iter().rposition(|&d| d <= threshold) {
        Some(k) => (k, false),
        None => (0, true),
    }
}

/// Number of variable pairs of a kind; the instability denominator.
pub fn pair_count(layout: &Layout, kind: EdgeKind) -> usize {
    layout.n_pairs(kind)
}

/// Average instability of one class given the per-edge selection
/// frequencies of that class.
pub fn class_instability(freqs: &[f64], pairs: usize) -> f64 {
    if pairs == 0 {
        return 0.0;
    }
    freqs.iter().map(|&t| edge_instability(t)).sum::<f64>() / pairs as f64
}

/// Draws `b` rows without replacement, stratified by class. Each present
/// class gets its proportional share rounded half up; the shares are then
/// nudged (largest rounding excess first) until they sum to `b`. Rows keep
/// their original order.
pub fn subsample(data: &MixedDataset, b: usize, seed: u64) -> Result<MixedDataset> {
    let n = data.n();
    if b == 0 || b >= n {
        return Err(Error::Config(format!("subsample size {b} must lie in 1..{n}")));
    }
    let strata: Vec<Vec<usize>> =
        [Group::One, Group::Two].into_iter().map(|g| data.group_rows(g)).filter(|rows| !rows.is_empty()).collect();
    let exact: Vec<f64> = strata.iter().map(|r| b as f64 * r.len() as f64 / n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| (e + 0.5).floor() as usize).collect();
    loop {
        let total: usize = counts.iter().sum();
        if total == b {
            break;
        }
        let excess = |k: usize| counts[k] as f64 - exact[k];
        let ks = 0..counts.len();
        if total > b {
            let k = ks.filter(|&k| counts[k] > 0).max_by(|&x, &y| excess(x).total_cmp(&excess(y)));
            counts[k.expect("positive share")] -= 1;
        } else {
            let k = ks.filter(|&k| counts[k] < strata[k].len()).min_by(|&x, &y| excess(x).total_cmp(&excess(y)));
            counts[k.expect("room left")] += 1;
        }
    }
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Stability(format!(
            "a subsample of {b} rows leaves a class of {} rows empty",
            strata[k].len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(b);
    for (stratum, &k) in strata.iter().zip(&counts) {
        rows.extend(sample(&mut rng, stratum.len(), k).into_iter().map(|i| stratum[i]));
    }
    rows.sort_unstable();
    Ok(data.select_rows(&rows))
}

/// Per-class results of a selection run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: EdgeClass,
    /// One entry per grid value, descending λ.
    pub raw: Vec<f64>,
    pub monotone: Vec<f64>,
    pub selected: f64,
    /// True when no grid value met the threshold.
    pub fallback: bool,
    /// `frequencies[k][e]`: share of subsamples selecting edge `e` (in
    /// [`Layout::edge_keys`] order restricted to this class's kind) at grid
    /// value `k`.
    pub frequencies: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    /// Descending.
    pub grid: Vec<f64>,
    pub threshold: f64,
    pub subsample_size: usize,
    pub n_subsamples: usize,
    pub failed_cells: usize,
    pub classes: Vec<ClassReport>,
}

impl StabilityReport {
    pub fn class(&self, c: EdgeClass) -> Option<&ClassReport> {
        self.classes.iter().find(|r| r.class == c)
    }

    pub fn any_fallback(&self) -> bool {
        self.classes.iter().any(|r| r.fallback)
    }

    /// Penalties for the reported classes; missing classes are zero.
    pub fn penalties(&self) -> PenaltyConfig {
        let mut v = [0.0; 6];
        for r in &self.classes {
            v[r.class.penalty_index()] = r.selected;
        }
        PenaltyConfig::from_array(v)
    }

    /// One row per λ (descending) with raw and monotonized instability per
    /// class, preceded by comment lines and followed by the selections.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "# instabilities D (raw) and Dbar (monotonized from the largest lambda); \
             diff_* classes extend the network-class rule to nonzero differences"
        )?;
        writeln!(
            w,
            "# subsamples={} size={} threshold={} failed_cells={}",
            self.n_subsamples, self.subsample_size, self.threshold, self.failed_cells
        )?;
        let mut header = vec!["lambda".to_string()];
        for r in &self.classes {
            header.push(format!("D_{}", r.class.as_str()));
        }
        for r in &self.classes {
            header.push(format!("Dbar_{}", r.class.as_str()));
        }
        writeln!(w, "{}", header.join("\t"))?;
        for (k, lam) in self.grid.iter().enumerate() {
            let mut row = vec![lam.to_string()];
            row.extend(self.classes.iter().map(|r| r.raw[k].to_string()));
            row.extend(self.classes.iter().map(|r| r.monotone[k].to_string()));
            writeln!(w, "{}", row.join("\t"))?;
        }
        for r in &self.classes {
            writeln!(
                w,
                "# selected\t{}\t{}{}",
                r.class.as_str(),
                r.selected,
                if r.fallback { "\tfallback" } else { "" }
            )?;
        }
        Ok(())
    }
}

/// Which edges a fit selected, per class, in edge-key order.
type Selection = Vec<(EdgeClass, Vec<bool>)>;

fn keys_by_kind(layout: &Layout) -> [Vec<EdgeKey>; 3] {
    let keys = layout.edge_keys();
    EdgeKind::ALL.map(|k| keys.iter().filter(|e| e.kind == k).copied().collect())
}

fn pair_selection(pair: &ParameterPair, keys: &[Vec<EdgeKey>; 3]) -> Selection {
    EdgeClass::ALL
        .iter()
        .map(|&c| {
            let ks = &keys[c.kind() as usize];
            let sel = if c.is_diff() {
                ks.iter().map(|k| pair.edge_differs(k)).collect()
            } else {
                ks.iter().map(|k| pair.get(0).edge_is_nonzero(k) || pair.get(1).edge_is_nonzero(k)).collect()
            };
            (c, sel)
        })
        .collect()
}

fn set_selection(theta: &ParameterSet, keys: &[Vec<EdgeKey>; 3]) -> Selection {
    EdgeClass::NETWORK
        .iter()
        .map(|&c| (c, keys[c.kind() as usize].iter().map(|k| theta.edge_is_nonzero(k)).collect()))
        .collect()
}

/// Runs the subsample × grid fits and reduces them into a report. `fit_path`
/// fits one subsample along the descending grid and returns one entry per
/// grid value (`None` for a failed cell).
fn run_selection(
    data: &MixedDataset,
    cfg: &StepsConfig,
    classes: &[EdgeClass],
    fit_path: impl Fn(&MixedDataset, &[f64]) -> Vec<Option<Selection>> + Sync,
) -> Result<StabilityReport> {
    let n = data.n();
    cfg.validate(n)?;
    let b = cfg.resolved_size(n);
    let grid = cfg.descending_grid();
    let paths: Vec<Vec<Option<Selection>>> = (0..cfg.n_subsamples)
        .into_par_iter()
        .map(|k| {
            let seed = cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k as u64);
            match subsample(data, b, seed) {
                Ok(sub) => fit_path(&sub, &grid),
                Err(e) => {
                    log::warn!("subsample {k}: {e}");
                    vec![None; grid.len()]
                }
            }
        })
        .collect();

    let cells = cfg.n_subsamples * grid.len();
    let failed = paths.iter().flatten().filter(|c| c.is_none()).count();
    if failed as f64 > MAX_FAILED_FRACTION * cells as f64 {
        return Err(Error::Stability(format!("{failed} of {cells} subsample fits failed")));
    }
    if failed > 0 {
        log::warn!("{failed} of {cells} subsample fits failed and were excluded");
    }

    let layout = data.schema().layout();
    let mut reports = Vec::with_capacity(classes.len());
    for (ci, &class) in classes.iter().enumerate() {
        let pairs = pair_count(layout, class.kind());
        let mut raw = Vec::with_capacity(grid.len());
        let mut frequencies = Vec::with_capacity(grid.len());
        for k in 0..grid.len() {
            let ok: Vec<&Selection> = paths.iter().filter_map(|p| p[k].as_ref()).collect();
            if ok.is_empty() {
                return Err(Error::Stability(format!("every fit failed at lambda = {}", grid[k])));
            }
            let mut counts = vec![0usize; pairs];
            for sel in &ok {
                debug_assert_eq!(sel[ci].0, class);
                for (c, &s) in counts.iter_mut().zip(&sel[ci].1) {
                    *c += s as usize;
                }
            }
            let freqs: Vec<f64> = counts.iter().map(|&c| c as f64 / ok.len() as f64).collect();
            raw.push(class_instability(&freqs, pairs));
            frequencies.push(freqs);
        }
        let monotone = monotonize(&raw);
        let (idx, fallback) = pick_index(&monotone, cfg.threshold);
        if fallback {
            log::warn!("no lambda met threshold {} for class {}; using the largest", cfg.threshold, class.as_str());
        }
        reports.push(ClassReport { class, raw, monotone, selected: grid[idx], fallback, frequencies });
    }
    Ok(StabilityReport {
        grid,
        threshold: cfg.threshold,
        subsample_size: b,
        n_subsamples: cfg.n_subsamples,
        failed_cells: failed,
        classes: reports,
    })
}

/// Selects all six penalties for the fused two-class model. Each subsample
/// is fitted along the grid from the largest λ down, warm-starting from the
/// previous grid value's solution.
pub fn select_lambdas(
    data: &MixedDataset,
    cfg: &StepsConfig,
    ocfg: &OptimizerConfig,
    pcfg: &ProxConfig,
) -> Result<(PenaltyConfig, StabilityReport)> {
    data.require_two_groups()?;
    let keys = keys_by_kind(data.schema().layout());
    let report = run_selection(data, cfg, &EdgeClass::ALL, |sub, grid| {
        let mut init = ParameterPair::empty(sub.schema().layout().clone());
        grid.iter()
            .map(|&lam| match optim::fit_from(sub, init.clone(), &PenaltyConfig::uniform(lam), ocfg, pcfg) {
                Ok(res) => {
                    let sel = pair_selection(&res.theta, &keys);
                    init = res.theta;
                    Some(sel)
                }
                Err(e) => {
                    log::warn!("subsample fit at lambda = {lam} failed: {e}");
                    init = ParameterPair::empty(sub.schema().layout().clone());
                    None
                }
            })
            .collect()
    })?;
    Ok((report.penalties(), report))
}

/// Selects the three network penalties for one class fitted on its own
/// (difference weights are returned as zero). Only rows of `group` are
/// used.
pub fn select_lambdas_single(
    data: &MixedDataset,
    group: Group,
    cfg: &StepsConfig,
    ocfg: &OptimizerConfig,
) -> Result<(PenaltyConfig, StabilityReport)> {
    let rows = data.group_rows(group);
    if rows.is_empty() {
        return Err(Error::Dataset(format!("group {} has no observations", group.label())));
    }
    let class_data = data.select_rows(&rows);
    let keys = keys_by_kind(data.schema().layout());
    let report = run_selection(&class_data, cfg, &EdgeClass::NETWORK, |sub, grid| {
        let empty = || ParameterSet::empty(sub.schema().layout().clone());
        let mut init = empty();
        grid.iter()
            .map(|&lam| {
                let pen = PenaltyConfig::uniform(lam);
                match optim::fit_single_group_from(sub, group, init.clone(), &pen, None, ocfg) {
                    Ok(res) => {
                        let sel = set_selection(&res.theta, &keys);
                        init = res.theta;
                        Some(sel)
                    }
                    Err(e) => {
                        log::warn!("subsample fit at lambda = {lam} failed: {e}");
                        init = empty();
                        None
                    }
                }
            })
            .collect()
    })?;
    Ok((report.penalties(), report))
}
