//! Nonhierarchical generalized random energy models.
//!
//! The energy of a configuration `σ = (σ_1, …, σ_n)` is a sum of independent
//! Gaussian fields `X^J_{σ_J}` over a family of coordinate subsets `J`. The
//! crate finds the hierarchical chain governing the model's thermodynamics,
//! simulates finite systems exactly, and samples the cascade limit objects
//! they are compared against.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod builtins;
pub mod cascade;
pub mod chain;
pub mod field;
pub mod gibbs;
pub mod model;
pub mod rng;
pub mod stats;
pub mod subset;

pub use builtins::{builtin_model, Builtin, BUILTIN_NAMES};
pub use chain::{build_chain, Chain, CriticalReport, LevelData};
pub use model::{validate_model, ModelDraft, ModelSpec};
pub use subset::Subset;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error(transparent)]
    Chain(#[from] chain::ChainError),
    #[error(transparent)]
    Field(#[from] field::FieldError),
    #[error(transparent)]
    Gibbs(#[from] gibbs::GibbsError),
    #[error(transparent)]
    Cascade(#[from] cascade::CascadeError),
}
