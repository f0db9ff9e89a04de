//! Frozen-feature evaluation for a pretrained backbone.
//!
//! The backbone is never updated here. Global features are extracted once per
//! cloud and a small linear max-margin classifier is fit on top of them, which
//! keeps every result deterministic and cheap to recompute. The same probe
//! machinery drives few-shot episodes and the rotation-setting grid, where a
//! probe trained under one rotation regime is scored under another.

pub mod fewshot;
pub mod grid;
pub mod linear;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProbeError {
    /// The provided features, labels, or episode request are unusable.
    #[error("data error: {0}")]
    Data(String),
    /// Feature extraction through the backbone failed.
    #[error(transparent)]
    Pipeline(#[from] hfbm_mae::MaeError),
}

pub use fewshot::{few_shot_episode, Episode};
pub use grid::{evaluate_grid, GridCell, GridReport};
pub use linear::{train_probe, train_probe_traced, LinearProbe, HINGE_L2};
