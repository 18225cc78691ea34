//! Fused mixed graphical models.
//!
//! Jointly estimates two sparse pairwise Markov random fields over mixed
//! continuous and categorical variables, one per class, together with their
//! sparse difference. The smooth part of the objective is the negative log
//! pseudolikelihood; the penalty is a fused group lasso over edge blocks,
//! and the whole thing is minimized with a monotone accelerated proximal
//! gradient method.
//!
//! Besides the estimator the crate carries the pieces needed to run a
//! synthetic benchmark end to end: stability-based penalty selection
//! ([`stability`]), a two-class ground-truth simulator with a Gibbs sampler
//! ([`simgen`]) and edge-recovery scoring ([`metrics`]).

pub mod error;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod prox;
pub mod pseudolik;
pub mod simgen;
pub mod stability;

pub use error::{Error, Result};
pub use model::{
    EdgeKey, EdgeKind, Group, Layout, MixedDataset, ParameterPair, ParameterSet, PenaltyConfig, VariableKind,
    VariableSchema,
};
