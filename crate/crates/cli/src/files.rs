//! Run-directory file formats.
//!
//! All tables are tab-separated with a header row, LF line endings and
//! shortest round-trip decimals.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use fmgm::model::{load_dataset, read_schema, ColumnScale};
use fmgm::{EdgeKey, EdgeKind, MixedDataset, ParameterPair, PenaltyConfig, VariableSchema};
use serde::{Deserialize, Serialize};

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Creates `dir/name` and hands a buffered writer to `f`.
pub fn write_file(dir: &Path, name: &str, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<PathBuf> {
    let path = dir.join(name);
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    f(&mut w).with_context(|| format!("writing {}", path.display()))?;
    w.flush().with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

#[derive(Serialize)]
struct Manifest<'a, T: Serialize> {
    command: &'a str,
    version: &'a str,
    settings: &'a T,
    outputs: &'a [&'a str],
}

/// Writes `manifest.json`: the command, tool version, every resolved setting
/// and the files written next to it.
pub fn write_manifest<T: Serialize>(dir: &Path, command: &str, settings: &T, outputs: &[&str]) -> Result<()> {
    let m = Manifest { command, version: env!("CARGO_PKG_VERSION"), settings, outputs };
    write_file(dir, "manifest.json", |w| {
        serde_json::to_writer_pretty(&mut *w, &m)?;
        writeln!(w)?;
        Ok(())
    })?;
    Ok(())
}

pub fn load_schema(path: &Path) -> Result<VariableSchema> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_schema(f).with_context(|| format!("reading {}", path.display()))
}

/// Loads and standardizes a dataset.
pub fn load_data(data: &Path, schema: &Path) -> Result<MixedDataset> {
    let d = File::open(data).with_context(|| format!("opening {}", data.display()))?;
    let s = File::open(schema).with_context(|| format!("opening {}", schema.display()))?;
    load_dataset(d, s).with_context(|| format!("loading {}", data.display()))
}

pub fn write_lambdas(w: &mut dyn Write, pen: &PenaltyConfig) -> Result<()> {
    writeln!(w, "name\tvalue")?;
    for (name, v) in PenaltyConfig::NAMES.iter().zip(pen.to_array()) {
        writeln!(w, "{name}\t{v}")?;
    }
    Ok(())
}

/// Reads a `name value` table; every one of the six weights must appear
/// exactly once.
pub fn read_lambdas(path: &Path) -> Result<PenaltyConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut values: [Option<f64>; 6] = [None; 6];
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line.split('\t');
        let (Some(name), Some(value), None) = (cols.next(), cols.next(), cols.next()) else {
            bail!("{}:{}: expected `name<TAB>value`", path.display(), n + 1);
        };
        let k = PenaltyConfig::NAMES
            .iter()
            .position(|&x| x == name)
            .ok_or_else(|| anyhow!("{}:{}: unknown penalty `{name}`", path.display(), n + 1))?;
        if values[k].is_some() {
            bail!("{}: `{name}` given twice", path.display());
        }
        values[k] = Some(value.parse().with_context(|| format!("{}:{}: bad value", path.display(), n + 1))?);
    }
    let mut out = [0.0; 6];
    for (k, v) in values.iter().enumerate() {
        out[k] = v.ok_or_else(|| anyhow!("{}: missing `{}`", path.display(), PenaltyConfig::NAMES[k]))?;
    }
    Ok(PenaltyConfig::new(out)?)
}

/// Nonzero edges of one class: `var1 var2 edge_type magnitude interaction`.
/// `magnitude` is |β| for cc, the Euclidean norm of the ρ vector for cd and
/// the Frobenius norm of the φ block for dd. `interaction` is filled for cc
/// edges only and equals −β, the sign of the conditional association.
pub fn write_class_edges(w: &mut dyn Write, pair: &ParameterPair, group: usize, schema: &VariableSchema) -> Result<()> {
    let theta = pair.get(group);
    writeln!(w, "var1\tvar2\tedge_type\tmagnitude\tinteraction")?;
    for key in schema.edge_keys() {
        if !theta.edge_is_nonzero(&key) {
            continue;
        }
        let interaction = match key.kind {
            EdgeKind::Cc => (-theta.edge_values(&key)[0]).to_string(),
            _ => String::new(),
        };
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}",
            schema.name(key.i),
            schema.name(key.j),
            key.kind,
            theta.edge_norm(&key),
            interaction
        )?;
    }
    Ok(())
}

/// Blocks that differ between the classes: `var1 var2 edge_type magnitude`
/// with the norm of the class 1 minus class 2 block.
pub fn write_diff_edges(w: &mut dyn Write, pair: &ParameterPair, schema: &VariableSchema) -> Result<()> {
    writeln!(w, "var1\tvar2\tedge_type\tmagnitude")?;
    for key in schema.edge_keys() {
        if pair.edge_differs(&key) {
            writeln!(w, "{}\t{}\t{}\t{}", schema.name(key.i), schema.name(key.j), key.kind, pair.edge_diff_norm(&key))?;
        }
    }
    Ok(())
}

/// Reads the pairs named in an edge list. Any table whose first three
/// columns are `var1 var2 edge_type` is accepted, so truth and estimate files
/// read the same way.
pub fn read_edge_set(path: &Path, schema: &VariableSchema) -> Result<BTreeSet<EdgeKey>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| anyhow!("{} is empty", path.display()))?;
    if !header.starts_with("var1\tvar2\tedge_type") {
        bail!("{}: header must start with var1, var2, edge_type", path.display());
    }
    let mut out = BTreeSet::new();
    for (n, line) in lines.enumerate() {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 3 {
            bail!("{}:{}: too few columns", path.display(), n + 2);
        }
        let idx = |name: &str| {
            schema.index_of(name).ok_or_else(|| anyhow!("{}:{}: `{name}` is not in the schema", path.display(), n + 2))
        };
        let (a, b) = (idx(cols[0])?, idx(cols[1])?);
        if a == b {
            bail!("{}:{}: self edge", path.display(), n + 2);
        }
        let key = EdgeKey::new(a, b, schema.p());
        if EdgeKind::parse(cols[2]) != Some(key.kind) {
            bail!("{}:{}: edge type `{}` does not match the schema ({})", path.display(), n + 2, cols[2], key.kind);
        }
        out.insert(key);
    }
    Ok(out)
}

/// Full-precision dump of a fit, enough to recompute its objective.
#[derive(Debug, Serialize, Deserialize)]
pub struct ParamsFile {
    pub penalties: PenaltyConfig,
    /// Smooth part plus penalty at `theta`, on the standardized data.
    pub objective: f64,
    /// Affine map used to standardize the continuous columns.
    pub scaling: Option<Vec<ColumnScale>>,
    pub theta: ParameterPair,
}
