use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VariableKind {
    Continuous,
    Categorical { levels: usize },
}

impl VariableKind {
    pub fn is_continuous(self) -> bool {
        matches!(self, VariableKind::Continuous)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub kind: VariableKind,
}

/// Declared variables, in file order.
///
/// Internally every variable also has a position in the model ordering:
/// all continuous variables first, then all categorical ones, each block in
/// declaration order. Edge keys, parameter blocks and output files all use
/// that ordering.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariableSchema {
    entries: Vec<Variable>,
    continuous: Vec<usize>,
    categorical: Vec<usize>,
    layout: Arc<Layout>,
}

impl VariableSchema {
    pub fn new(entries: Vec<Variable>) -> Result<Self> {
        let mut seen = HashSet::new();
        for v in &entries {
            if v.name.trim().is_empty() {
                return Err(Error::Schema("variable names must be non-empty".into()));
            }
            if v.name == "group" {
                return Err(Error::Schema("`group` is reserved for the class column".into()));
            }
            if !seen.insert(v.name.as_str()) {
                return Err(Error::Schema(format!("duplicate variable name `{}`", v.name)));
            }
            if let VariableKind::Categorical { levels } = v.kind {
                if levels < 2 {
                    return Err(Error::Schema(format!(
                        "categorical variable `{}` needs at least 2 levels, got {levels}",
                        v.name
                    )));
                }
            }
        }
        if entries.len() < 2 {
            return Err(Error::Schema(format!("at least two variables are required, got {}", entries.len())));
        }
        let continuous: Vec<usize> = (0..entries.len()).filter(|&i| entries[i].kind.is_continuous()).collect();
        let categorical: Vec<usize> = (0..entries.len()).filter(|&i| !entries[i].kind.is_continuous()).collect();
        let levels = categorical
            .iter()
            .map(|&i| match entries[i].kind {
                VariableKind::Categorical { levels } => levels,
                VariableKind::Continuous => unreachable!(),
            })
            .collect();
        let layout = Arc::new(Layout::new(continuous.len(), levels));
        Ok(Self { entries, continuous, categorical, layout })
    }

    /// `p` continuous variables named `x1..xp` followed by `q` categorical
    /// variables `y1..yq`, all with `levels` levels.
    pub fn synthetic(p: usize, q: usize, levels: usize) -> Result<Self> {
        let mut entries = Vec::with_capacity(p + q);
        entries.extend((1..=p).map(|i| Variable { name: format!("x{i}"), kind: VariableKind::Continuous }));
        entries.extend((1..=q).map(|i| Variable { name: format!("y{i}"), kind: VariableKind::Categorical { levels } }));
        Self::new(entries)
    }

    pub fn entries(&self) -> &[Variable] {
        &self.entries
    }

    pub fn p(&self) -> usize {
        self.continuous.len()
    }

    pub fn q(&self) -> usize {
        self.categorical.len()
    }

    pub fn n_vars(&self) -> usize {
        self.entries.len()
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn levels(&self, r: usize) -> usize {
        self.layout.levels[r]
    }

    /// Name of the variable at `index` in model ordering.
    pub fn name(&self, index: usize) -> &str {
        let p = self.p();
        let entry = if index < p { self.continuous[index] } else { self.categorical[index - p] };
        &self.entries[entry].name
    }

    pub fn continuous_name(&self, s: usize) -> &str {
        &self.entries[self.continuous[s]].name
    }

    pub fn categorical_name(&self, r: usize) -> &str {
        &self.entries[self.categorical[r]].name
    }

    /// Model-order index of the variable called `name`.
    pub fn index_of(&self, name: &str) -> Option<usize> {
        let pos = self.entries.iter().position(|v| v.name == name)?;
        if let Some(s) = self.continuous.iter().position(|&i| i == pos) {
            return Some(s);
        }
        self.categorical.iter().position(|&i| i == pos).map(|r| self.p() + r)
    }

    /// Every unordered variable pair as an [`EdgeKey`], in model order.
    pub fn edge_keys(&self) -> Vec<EdgeKey> {
        self.layout.edge_keys()
    }
}

/// Shape information shared by parameters, gradients and data blocks.
///
/// Categorical levels are laid out contiguously: categorical `r` occupies
/// columns `offsets[r]..offsets[r] + levels[r]` of the one-hot design and of
/// the `rho`/`phi` parameter matrices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub p: usize,
    pub levels: Vec<usize>,
    pub offsets: Vec<usize>,
    pub total_levels: usize,
}

impl Layout {
    pub fn new(p: usize, levels: Vec<usize>) -> Self {
        let mut offsets = Vec::with_capacity(levels.len());
        let mut acc = 0;
        for &l in &levels {
            offsets.push(acc);
            acc += l;
        }
        Self { p, levels, offsets, total_levels: acc }
    }

    pub fn q(&self) -> usize {
        self.levels.len()
    }

    pub fn block(&self, r: usize) -> std::ops::Range<usize> {
        self.offsets[r]..self.offsets[r] + self.levels[r]
    }

    /// Categorical index owning one-hot column `col`.
    pub fn owner(&self, col: usize) -> usize {
        match self.offsets.binary_search(&col) {
            Ok(r) => r,
            Err(r) => r - 1,
        }
    }

    pub fn n_pairs(&self, kind: EdgeKind) -> usize {
        let (p, q) = (self.p, self.q());
        match kind {
            EdgeKind::Cc => p * p.saturating_sub(1) / 2,
            EdgeKind::Cd => p * q,
            EdgeKind::Dd => q * q.saturating_sub(1) / 2,
        }
    }

    pub fn edge_keys(&self) -> Vec<EdgeKey> {
        let (p, q) = (self.p, self.q());
        let n = p + q;
        let mut keys = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                keys.push(EdgeKey::new(i, j, p));
            }
        }
        keys
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EdgeKind {
    Cc,
    Cd,
    Dd,
}

impl EdgeKind {
    pub const ALL: [EdgeKind; 3] = [EdgeKind::Cc, EdgeKind::Cd, EdgeKind::Dd];

    pub fn as_str(self) -> &'static str {
        match self {
            EdgeKind::Cc => "cc",
            EdgeKind::Cd => "cd",
            EdgeKind::Dd => "dd",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "cc" => Some(EdgeKind::Cc),
            "cd" => Some(EdgeKind::Cd),
            "dd" => Some(EdgeKind::Dd),
            _ => None,
        }
    }
}

impl fmt::Display for EdgeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An unordered variable pair, `i < j` in model ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EdgeKey {
    pub i: usize,
    pub j: usize,
    pub kind: EdgeKind,
}

impl EdgeKey {
    /// Builds the key for the pair `{a, b}` given the number of continuous
    /// variables `p`. Panics on `a == b`.
    pub fn new(a: usize, b: usize, p: usize) -> Self {
        assert_ne!(a, b, "an edge needs two distinct variables");
        let (i, j) = if a < b { (a, b) } else { (b, a) };
        let kind = match (i < p, j < p) {
            (true, true) => EdgeKind::Cc,
            (true, false) => EdgeKind::Cd,
            _ => EdgeKind::Dd,
        };
        Self { i, j, kind }
    }

    /// Indices within their own blocks: `(s, t)` for cc, `(s, r)` for cd and
    /// `(r, j)` for dd.
    pub fn local(&self, p: usize) -> (usize, usize) {
        match self.kind {
            EdgeKind::Cc => (self.i, self.j),
            EdgeKind::Cd => (self.i, self.j - p),
            EdgeKind::Dd => (self.i - p, self.j - p),
        }
    }
}
