//! Shared domain types: variable schemas, datasets, parameters, penalties
//! and edge keys, plus the dataset text formats.

mod dataset;
pub mod io;
mod params;
mod schema;

pub use dataset::{ColumnScale, Group, MixedDataset};
pub use io::{load_dataset, load_dataset_raw, read_schema, write_dataset, write_schema};
pub use params::{ParameterPair, ParameterSet, PenaltyConfig, EPS_DIAG};
pub use schema::{EdgeKey, EdgeKind, Layout, Variable, VariableKind, VariableSchema};
