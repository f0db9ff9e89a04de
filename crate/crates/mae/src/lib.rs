//! Masked autoencoder over rotation-invariant point-cloud features.
//!
//! The model never sees raw coordinates: patches are described by
//! rotation-invariant local and per-patch features, so every downstream
//! output inherits invariance from the input representation. Reconstruction
//! targets live in the canonical (aligned) pose, which removes rotation
//! from both sides of the pretraining objective.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod features;
pub mod model;
pub mod train;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MaeError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("geometry error: {0}")]
    Geometry(#[from] hfbm_core::geom::GeomError),
    #[error("feature error: {0}")]
    Features(#[from] hfbm_core::rihf::RihfError),
    #[error("cloud error: {0}")]
    Cloud(#[from] hfbm_core::pcio::PcioError),
    #[error("loss became non-finite at training step {step}")]
    NonFinite { step: u64 },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub use checkpoint::{load_checkpoint, read_checkpoint_config, save_checkpoint};
pub use hfbm_adiff::Scalar;
pub use config::{ModelConfig, ScaleTag};
pub use dataset::{build_synthetic, five_class_specs, four_class_specs, present, ClassSpec, Dataset};
pub use features::{
    assemble_full_batch, assemble_pretrain_batch, assign_points_to_patches, cloud_features,
    sample_mask, CloudFeatures, FeatureDrop, FullBatch, PretrainBatch,
};
pub use model::MaeModel;
pub use train::{
    evaluate_classifier, evaluate_segmenter, extract_probe_features, finetune_classifier,
    finetune_segmenter, pretrain, pretrain_observed, EpochStats, FinetuneEpoch, FinetuneReport,
    FinetuneScope, FinetuneSettings, PretrainReport, TrainSettings,
};
