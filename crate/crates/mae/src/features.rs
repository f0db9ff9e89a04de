//! Bridges geometry to tensors: per-cloud feature extraction, mask
//! sampling, and batch assembly for the training loops.

use hfbm_adiff::{Scalar, Tensor};
use hfbm_core::geom::{patchify, PatchSet};
use hfbm_core::pcio::PointCloud;
use hfbm_core::rihf::{extract_features, FeatureSet, RIGF_DIM, RILF_DIM};
use hfbm_core::rng::SeededRng;
use hfbm_core::vec3;
use rayon::prelude::*;

use crate::config::ModelConfig;
use crate::MaeError;

/// Which feature-column groups to zero at extraction time. Used by the
/// ablation sweeps; the default drops nothing.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FeatureDrop {
    /// Column 0: distance to the patch reference point.
    pub distance: bool,
    /// Columns 1-3: angles against the reference point.
    pub reference_angles: bool,
    /// Columns 4-7: angles among neighboring points.
    pub inter_neighbor: bool,
}

impl FeatureDrop {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn all() -> Self {
        Self { distance: true, reference_angles: true, inter_neighbor: true }
    }

    /// Parse a group name used by the ablation sweep.
    pub fn from_group_name(name: &str) -> Result<Self, MaeError> {
        let mut drop = Self::none();
        match name {
            "distance" => drop.distance = true,
            "reference_angles" => drop.reference_angles = true,
            "inter_neighbor" => drop.inter_neighbor = true,
            "all" => drop = Self::all(),
            other => {
                return Err(MaeError::Config(format!(
                    "unknown feature group {other:?}; expected distance, reference_angles, inter_neighbor, or all"
                )))
            }
        }
        Ok(drop)
    }

    fn zeroed_columns(&self) -> Vec<usize> {
        let mut cols = Vec::new();
        if self.distance {
            cols.push(0);
        }
        if self.reference_angles {
            cols.extend([1, 2, 3]);
        }
        if self.inter_neighbor {
            cols.extend([4, 5, 6, 7]);
        }
        cols
    }
}

/// Per-cloud features in flat row-major layout, ready for tensor assembly.
#[derive(Debug, Clone)]
pub struct CloudFeatures {
    /// n_patches x points_per_patch x 8.
    pub rilf: Vec<f64>,
    /// n_patches x 5.
    pub rigf: Vec<f64>,
    pub patches: PatchSet,
    /// Smallest stability margin over all patches.
    pub min_margin: f64,
}

/// Extract patch features for one cloud under the model's patch layout.
pub fn cloud_features(
    cloud: &PointCloud,
    config: &ModelConfig,
    drop: &FeatureDrop,
) -> Result<CloudFeatures, MaeError> {
    let patches = patchify(cloud, config.n_patches, config.points_per_patch, 0)?;
    let feats: FeatureSet = extract_features(cloud, &patches)?;
    Ok(pack_features(feats, patches, config, drop))
}

fn pack_features(
    feats: FeatureSet,
    patches: PatchSet,
    config: &ModelConfig,
    drop: &FeatureDrop,
) -> CloudFeatures {
    let (np, k) = (config.n_patches, config.points_per_patch);
    let zeroed = drop.zeroed_columns();
    let mut rilf = Vec::with_capacity(np * k * RILF_DIM);
    for patch in &feats.rilf {
        for row in &patch.values {
            let mut r = *row;
            for &c in &zeroed {
                r[c] = 0.0;
            }
            rilf.extend_from_slice(&r);
        }
    }
    let mut rigf = Vec::with_capacity(np * RIGF_DIM);
    for v in &feats.rigf {
        rigf.extend_from_slice(&v.values);
    }
    let min_margin = feats.margins.iter().map(|m| m.min()).fold(f64::INFINITY, f64::min);
    CloudFeatures { rilf, rigf, patches, min_margin }
}

/// Choose exactly the configured number of masked patches uniformly without
/// replacement. Entry `i` is true when patch `i` is masked.
pub fn sample_mask(n_patches: usize, ratio: f64, seed: u64) -> Result<Vec<bool>, MaeError> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(MaeError::Config(format!("mask ratio {ratio} outside [0, 1)")));
    }
    let n_masked = ((ratio * n_patches as f64).round() as usize).max(1);
    if n_masked >= n_patches {
        return Err(MaeError::Config(format!(
            "mask ratio {ratio} leaves no visible patch out of {n_patches}"
        )));
    }
    let mut rng = SeededRng::new(seed);
    let mut indices: Vec<usize> = (0..n_patches).collect();
    // Partial Fisher-Yates: the first n_masked slots become the masked set.
    for i in 0..n_masked {
        let j = i + rng.index(n_patches - i);
        indices.swap(i, j);
    }
    let mut mask = vec![false; n_patches];
    for &i in &indices[..n_masked] {
        mask[i] = true;
    }
    Ok(mask)
}

/// One pretraining minibatch. Patch rows are permuted per cloud so that the
/// visible patches come first (ascending patch index) and the masked ones
/// follow (ascending); narrowing along the patch axis then splits the two
/// sets without any gather inside the graph.
#[derive(Debug)]
pub struct PretrainBatch<T: Scalar> {
    /// [B, n_patches, K, 8], rows in visible-then-masked order.
    pub rilf: Tensor<T>,
    /// [B, n_patches, 5], same row order.
    pub rigf: Tensor<T>,
    /// [B, n_masked, K, 3]: aligned coordinates of each masked patch.
    pub targets: Tensor<T>,
    pub n_visible: usize,
    pub n_masked: usize,
}

/// Assemble a pretraining batch.
///
/// Each entry pairs the cloud presented to the network (usually a rotated
/// copy) with the aligned cloud providing reconstruction targets. Patch
/// membership indices are computed on the presented cloud and used to read
/// target coordinates out of the aligned one; the two clouds must therefore
/// index the same points.
pub fn assemble_pretrain_batch<T: Scalar>(
    presented: &[PointCloud],
    aligned: &[&PointCloud],
    config: &ModelConfig,
    drop: &FeatureDrop,
    mask_seeds: &[u64],
) -> Result<PretrainBatch<T>, MaeError> {
    assert_eq!(presented.len(), aligned.len());
    assert_eq!(presented.len(), mask_seeds.len());
    let bsz = presented.len();
    let (np, k) = (config.n_patches, config.points_per_patch);
    let (nv, nm) = (config.n_visible(), config.n_masked());

    let per_cloud: Vec<Result<(CloudFeatures, Vec<bool>), MaeError>> = presented
        .par_iter()
        .zip(mask_seeds.par_iter())
        .map(|(cloud, &seed)| {
            let feats = cloud_features(cloud, config, drop)?;
            let mask = sample_mask(np, config.mask_ratio, seed)?;
            Ok((feats, mask))
        })
        .collect();

    let mut rilf = Vec::with_capacity(bsz * np * k * RILF_DIM);
    let mut rigf = Vec::with_capacity(bsz * np * RIGF_DIM);
    let mut targets = Vec::with_capacity(bsz * nm * k * 3);
    for (res, aligned_cloud) in per_cloud.into_iter().zip(aligned) {
        let (feats, mask) = res?;
        let order = visible_then_masked(&mask);
        debug_assert_eq!(order.len(), np);
        for &p in &order {
            let start = p * k * RILF_DIM;
            rilf.extend_from_slice(&feats.rilf[start..start + k * RILF_DIM]);
        }
        for &p in &order {
            let start = p * RIGF_DIM;
            rigf.extend_from_slice(&feats.rigf[start..start + RIGF_DIM]);
        }
        for &p in &order[nv..] {
            for &member in &feats.patches.member_indices[p] {
                targets.extend_from_slice(&aligned_cloud.points[member]);
            }
        }
    }

    Ok(PretrainBatch {
        rilf: Tensor::from_f64_slice(vec![bsz, np, k, RILF_DIM], &rilf),
        rigf: Tensor::from_f64_slice(vec![bsz, np, RIGF_DIM], &rigf),
        targets: Tensor::from_f64_slice(vec![bsz, nm, k, 3], &targets),
        n_visible: nv,
        n_masked: nm,
    })
}

/// Patch indices reordered as all visible (ascending) then all masked
/// (ascending).
pub fn visible_then_masked(mask: &[bool]) -> Vec<usize> {
    let visible = mask.iter().enumerate().filter(|(_, &m)| !m).map(|(i, _)| i);
    let masked = mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i);
    visible.chain(masked).collect()
}

/// Features for a batch of full clouds (no masking): the finetune and
/// probing input. Patch rows stay in their natural order.
#[derive(Debug)]
pub struct FullBatch<T: Scalar> {
    /// [B, n_patches, K, 8].
    pub rilf: Tensor<T>,
    /// [B, n_patches, 5].
    pub rigf: Tensor<T>,
    pub patch_sets: Vec<PatchSet>,
}

pub fn assemble_full_batch<T: Scalar>(
    clouds: &[PointCloud],
    config: &ModelConfig,
    drop: &FeatureDrop,
) -> Result<FullBatch<T>, MaeError> {
    let bsz = clouds.len();
    let (np, k) = (config.n_patches, config.points_per_patch);
    let per_cloud: Vec<Result<CloudFeatures, MaeError>> =
        clouds.par_iter().map(|c| cloud_features(c, config, drop)).collect();

    let mut rilf = Vec::with_capacity(bsz * np * k * RILF_DIM);
    let mut rigf = Vec::with_capacity(bsz * np * RIGF_DIM);
    let mut patch_sets = Vec::with_capacity(bsz);
    for res in per_cloud {
        let feats = res?;
        rilf.extend_from_slice(&feats.rilf);
        rigf.extend_from_slice(&feats.rigf);
        patch_sets.push(feats.patches);
    }
    Ok(FullBatch {
        rilf: Tensor::from_f64_slice(vec![bsz, np, k, RILF_DIM], &rilf),
        rigf: Tensor::from_f64_slice(vec![bsz, np, RIGF_DIM], &rigf),
        patch_sets,
    })
}

/// Nearest patch center for every point of the cloud, ties to the smaller
/// patch index. Distances are preserved by rotation, so the assignment is a
/// pure function of the patch structure.
pub fn assign_points_to_patches(cloud: &PointCloud, patches: &PatchSet) -> Vec<usize> {
    cloud
        .points
        .iter()
        .map(|&p| {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (pi, &ci) in patches.center_indices.iter().enumerate() {
                let d = vec3::norm_sq(vec3::sub(p, cloud.points[ci]));
                if d < best_d {
                    best_d = d;
                    best = pi;
                }
            }
            best
        })
        .collect()
}
