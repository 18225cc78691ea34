//! Edge-recovery scoring of an estimate against a known truth.
//!
//! Intra-network decisions are one per class and variable pair (both classes
//! pooled into one table). Inter-network decisions are one per pair: is the
//! difference block nonzero, against membership in the true symmetric
//! difference. "Overall" pools both decision sets.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{EdgeKey, EdgeKind, Layout, ParameterPair};
use crate::simgen::GroundTruth;

/// Edge supports of a two-class model.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Support {
    pub class: [BTreeSet<EdgeKey>; 2],
    pub diff: BTreeSet<EdgeKey>,
}

impl Support {
    /// Exactly nonzero blocks, and blocks that are not equal across classes.
    pub fn from_pair(pair: &ParameterPair) -> Self {
        let mut s = Self::default();
        for key in pair.layout().edge_keys() {
            for c in 0..2 {
                if pair.get(c).edge_is_nonzero(&key) {
                    s.class[c].insert(key);
                }
            }
            if pair.edge_differs(&key) {
                s.diff.insert(key);
            }
        }
        s
    }

    pub fn from_truth(truth: &GroundTruth) -> Self {
        Self { class: truth.class_edges.clone(), diff: truth.diff_edges() }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn add(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }
}

/// Rates from a confusion table. A rate whose denominator is zero is
/// reported as 0 and named in `degenerate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub mcc: f64,
    pub degenerate: Vec<String>,
}

impl Metrics {
    pub const NAMES: [&'static str; 5] = ["accuracy", "precision", "recall", "f1", "mcc"];

    pub fn values(&self) -> [f64; 5] {
        [self.accuracy, self.precision, self.recall, self.f1, self.mcc]
    }
}

pub fn compute_metrics(c: &Confusion) -> Metrics {
    let (tp, fp, fn_, tn) = (c.tp as f64, c.fp as f64, c.fn_ as f64, c.tn as f64);
    let mut degenerate = Vec::new();
    let mut ratio = |name: &'static str, num: f64, den: f64| {
        if den > 0.0 {
            num / den
        } else {
            degenerate.push(name.to_string());
            0.0
        }
    };
    let accuracy = ratio("accuracy", tp + tn, tp + fp + fn_ + tn);
    let precision = ratio("precision", tp, tp + fp);
    let recall = ratio("recall", tp, tp + fn_);
    let f1 = ratio("f1", 2.0 * tp, 2.0 * tp + fp + fn_);
    let den = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
    let mcc = ratio("mcc", tp * tn - fp * fn_, den);
    Metrics { accuracy, precision, recall, f1, mcc, degenerate }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scope {
    Overall,
    Intra,
    Inter,
}

impl Scope {
    pub const ALL: [Scope; 3] = [Scope::Overall, Scope::Intra, Scope::Inter];

    pub fn as_str(self) -> &'static str {
        match self {
            Scope::Overall => "overall",
            Scope::Intra => "intra",
            Scope::Inter => "inter",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Scope::Overall => "Overall",
            Scope::Intra => "Intra-network",
            Scope::Inter => "Inter-network",
        }
    }
}

pub fn kind_label(kind: EdgeKind) -> &'static str {
    match kind {
        EdgeKind::Cc => "Cont-Cont",
        EdgeKind::Cd => "Cont-Disc",
        EdgeKind::Dd => "Disc-Disc",
    }
}

/// A scope, either over all edge types (`kind == None`) or one type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Category {
    pub scope: Scope,
    pub kind: Option<EdgeKind>,
}

impl Category {
    /// All twelve categories, scope-major, "all types" first.
    pub fn all() -> Vec<Category> {
        Scope::ALL
            .iter()
            .flat_map(|&scope| {
                std::iter::once(None).chain(EdgeKind::ALL.map(Some)).map(move |kind| Category { scope, kind })
            })
            .collect()
    }

    /// The nine rows of the published table, in order.
    pub fn table_rows() -> Vec<Category> {
        let mut rows = vec![Category { scope: Scope::Overall, kind: None }];
        for scope in [Scope::Intra, Scope::Inter] {
            rows.push(Category { scope, kind: None });
            rows.extend(EdgeKind::ALL.map(|k| Category { scope, kind: Some(k) }));
        }
        rows
    }

    pub fn label(&self) -> &'static str {
        match self.kind {
            None => self.scope.label(),
            Some(k) => kind_label(k),
        }
    }

    pub fn edge_type(&self) -> &'static str {
        self.kind.map_or("all", |k| k.as_str())
    }
}

/// Confusion tables for all twelve categories, in [`Category::all`] order.
pub fn classify_edges(estimate: &Support, truth: &Support, layout: &Layout) -> Vec<(Category, Confusion)> {
    let mut by_kind = [[Confusion::default(); 3]; 2];
    for key in layout.edge_keys() {
        let k = key.kind as usize;
        for c in 0..2 {
            by_kind[0][k].record(estimate.class[c].contains(&key), truth.class[c].contains(&key));
        }
        by_kind[1][k].record(estimate.diff.contains(&key), truth.diff.contains(&key));
    }
    Category::all()
        .into_iter()
        .map(|cat| {
            let scopes: &[usize] = match cat.scope {
                Scope::Overall => &[0, 1],
                Scope::Intra => &[0],
                Scope::Inter => &[1],
            };
            let mut conf = Confusion::default();
            for &s in scopes {
                for kind in EdgeKind::ALL {
                    if cat.kind.is_none_or(|k| k == kind) {
                        conf.add(&by_kind[s][kind as usize]);
                    }
                }
            }
            (cat, conf)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub category: Category,
    pub confusion: Confusion,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
}

impl MetricsReport {
    pub fn new(estimate: &Support, truth: &Support, layout: &Layout) -> Self {
        let rows = classify_edges(estimate, truth, layout)
            .into_iter()
            .map(|(category, confusion)| MetricsRow { category, metrics: compute_metrics(&confusion), confusion })
            .collect();
        Self { rows }
    }

    pub fn get(&self, scope: Scope, kind: Option<EdgeKind>) -> &MetricsRow {
        self.rows.iter().find(|r| r.category == Category { scope, kind }).expect("every category is present")
    }

    /// The published table's rows as TSV.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "row\tscope\tedge_type\ttp\tfp\tfn\ttn\taccuracy\tprecision\trecall\tf1\tmcc\tdegenerate")?;
        for cat in Category::table_rows() {
            let r = self.get(cat.scope, cat.kind);
            let c = &r.confusion;
            let m = &r.metrics;
            let flags = if m.degenerate.is_empty() { "-".to_string() } else { m.degenerate.join(",") };
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                cat.label(),
                cat.scope.as_str(),
                cat.edge_type(),
                c.tp,
                c.fp,
                c.fn_,
                c.tn,
                m.accuracy,
                m.precision,
                m.recall,
                m.f1,
                m.mcc,
                flags
            )?;
        }
        Ok(())
    }
}

/// Mean and sample standard deviation of each metric over several reports,
/// one entry per table row.
pub fn summarize(reports: &[MetricsReport]) -> Vec<(Category, [(f64, f64); 5])> {
    Category::table_rows()
        .into_iter()
        .map(|cat| {
            let stats = std::array::from_fn(|m| {
                let xs: Vec<f64> = reports.iter().map(|r| r.get(cat.scope, cat.kind).metrics.values()[m]).collect();
                mean_sd(&xs)
            });
            (cat, stats)
        })
        .collect()
}

/// Mean and sample standard deviation; the deviation is 0 for fewer than
/// two values.
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
