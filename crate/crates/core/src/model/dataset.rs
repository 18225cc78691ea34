use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use super::schema::VariableSchema;
use crate::error::{Error, Result};

/// Class label of an observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    One,
    Two,
}

impl Group {
    pub fn index(self) -> usize {
        match self {
            Group::One => 0,
            Group::Two => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            Group::One
        } else {
            Group::Two
        }
    }

    pub fn label(self) -> u8 {
        self.index() as u8 + 1
    }

    pub fn other(self) -> Self {
        match self {
            Group::One => Group::Two,
            Group::Two => Group::One,
        }
    }
}

/// Per-column affine map applied when standardizing continuous data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnScale {
    pub mean: f64,
    pub sd: f64,
}

/// N observations of p continuous and q categorical values, each tagged with
/// its class.
///
/// Categorical values are stored 0-based (`0..L_r`); files use 1-based
/// levels.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedDataset {
    schema: VariableSchema,
    x: Array2<f64>,
    y: Array2<usize>,
    groups: Vec<Group>,
    scaling: Option<Vec<ColumnScale>>,
}

impl MixedDataset {
    pub fn new(schema: VariableSchema, x: Array2<f64>, y: Array2<usize>, groups: Vec<Group>) -> Result<Self> {
        let n = groups.len();
        if x.dim() != (n, schema.p()) || y.dim() != (n, schema.q()) {
            return Err(Error::Dataset(format!(
                "expected {n} x {} continuous and {n} x {} categorical values, got {:?} and {:?}",
                schema.p(),
                schema.q(),
                x.dim(),
                y.dim()
            )));
        }
        if let Some(((_, s), _)) = x.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Dataset(format!("non-finite value in column `{}`", schema.continuous_name(s))));
        }
        for ((i, r), &v) in y.indexed_iter() {
            if v >= schema.levels(r) {
                return Err(Error::LevelOutOfRange {
                    row: i + 1,
                    column: schema.categorical_name(r).to_string(),
                    value: (v + 1).to_string(),
                    levels: schema.levels(r),
                });
            }
        }
        Ok(Self { schema, x, y, groups, scaling: None })
    }

    pub fn schema(&self) -> &VariableSchema {
        &self.schema
    }

    pub fn n(&self) -> usize {
        self.groups.len()
    }

    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn y(&self) -> &Array2<usize> {
        &self.y
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn row_x(&self, i: usize) -> ArrayView1<'_, f64> {
        self.x.row(i)
    }

    pub fn row_y(&self, i: usize) -> ArrayView1<'_, usize> {
        self.y.row(i)
    }

    pub fn group_size(&self, g: Group) -> usize {
        self.groups.iter().filter(|&&h| h == g).count()
    }

    pub fn group_rows(&self, g: Group) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.groups[i] == g).collect()
    }

    /// Applied standardization, if any.
    pub fn scaling(&self) -> Option<&[ColumnScale]> {
        self.scaling.as_deref()
    }

    /// Errors unless both classes are present.
    pub fn require_two_groups(&self) -> Result<()> {
        for g in [Group::One, Group::Two] {
            if self.group_size(g) == 0 {
                return Err(Error::Dataset(format!("group {} has no observations", g.label())));
            }
        }
        Ok(())
    }

    /// Rows `rows` in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            schema: self.schema.clone(),
            x: self.x.select(ndarray::Axis(0), rows),
            y: self.y.select(ndarray::Axis(0), rows),
            groups: rows.iter().map(|&i| self.groups[i]).collect(),
            scaling: self.scaling.clone(),
        }
    }

    /// Centers every continuous column to mean 0 and scales it to sample
    /// standard deviation 1, recording the applied map. Columns with zero
    /// spread cannot be standardized and are rejected.
    pub fn standardized(&self) -> Result<Self> {
        let n = self.n();
        if n < 2 && self.schema.p() > 0 {
            return Err(Error::Dataset("standardization needs at least two rows".into()));
        }
        let mut x = self.x.clone();
        let mut scales = Vec::with_capacity(self.schema.p());
        for (s, mut col) in x.columns_mut().into_iter().enumerate() {
            let mean = col.sum() / n as f64;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
            let sd = var.sqrt();
            if sd.is_nan() || sd <= 0.0 {
                return Err(Error::Dataset(format!(
                    "column `{}` is constant and cannot be standardized",
                    self.schema.continuous_name(s)
                )));
            }
            col.mapv_inplace(|v| (v - mean) / sd);
            scales.push(ColumnScale { mean, sd });
        }
        Ok(Self {
            schema: self.schema.clone(),
            x,
            y: self.y.clone(),
            groups: self.groups.clone(),
            scaling: Some(scales),
        })
    }

    /// Continuous values mapped back to the original scale.
    pub fn unstandardized_x(&self) -> Array2<f64> {
        let mut x = self.x.clone();
        if let Some(scales) = &self.scaling {
            for (mut col, sc) in x.columns_mut().into_iter().zip(scales) {
                col.mapv_inplace(|v| v * sc.sd + sc.mean);
            }
        }
        x
    }

    /// A copy with the class labels exchanged.
    pub fn relabeled(&self) -> Self {
        let mut out = self.clone();
        for g in &mut out.groups {
            *g = g.other();
        }
        out
    }
}
