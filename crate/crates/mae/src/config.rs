//! Model hyperparameters and the dimensional arithmetic derived from them.

use std::fmt;
use std::str::FromStr;

use crate::MaeError;

/// Preset family a config belongs to. Hidden-layer widths in the task heads
/// are keyed on this tag rather than derived from `embed_dim`, so the two
/// presets reproduce their intended head shapes even after field tweaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleTag {
    Paper,
    Desk,
}

impl fmt::Display for ScaleTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Paper => write!(f, "paper"),
            Self::Desk => write!(f, "desk"),
        }
    }
}

impl FromStr for ScaleTag {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "paper" => Ok(Self::Paper),
            "desk" => Ok(Self::Desk),
            other => Err(format!("unknown scale tag {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub encoder_blocks: usize,
    pub decoder_blocks: usize,
    pub heads: usize,
    pub n_patches: usize,
    pub points_per_patch: usize,
    pub mask_ratio: f64,
    pub cls_dim: usize,
    pub seg_dim: usize,
    pub scale_tag: ScaleTag,
}

impl ModelConfig {
    /// Small configuration sized so the full pipeline trains in minutes on
    /// one CPU core.
    pub fn desk() -> Self {
        Self {
            embed_dim: 64,
            encoder_blocks: 3,
            decoder_blocks: 2,
            heads: 4,
            n_patches: 32,
            points_per_patch: 16,
            mask_ratio: 0.6,
            cls_dim: 4,
            seg_dim: 3,
            scale_tag: ScaleTag::Desk,
        }
    }

    /// Full-size configuration. Constructible and shape-checked, not meant
    /// for CPU training runs.
    pub fn paper() -> Self {
        Self {
            embed_dim: 384,
            encoder_blocks: 12,
            decoder_blocks: 4,
            heads: 8,
            n_patches: 256,
            points_per_patch: 64,
            mask_ratio: 0.6,
            cls_dim: 40,
            seg_dim: 50,
            scale_tag: ScaleTag::Paper,
        }
    }

    pub fn validate(&self) -> Result<(), MaeError> {
        if self.embed_dim == 0 || self.heads == 0 {
            return Err(MaeError::Config("embed_dim and heads must be positive".into()));
        }
        if self.embed_dim % self.heads != 0 {
            return Err(MaeError::Config(format!(
                "embed_dim {} is not divisible by {} heads",
                self.embed_dim, self.heads
            )));
        }
        if self.encoder_blocks == 0 || self.decoder_blocks == 0 {
            return Err(MaeError::Config("block counts must be positive".into()));
        }
        if self.n_patches < 2 || self.points_per_patch == 0 {
            return Err(MaeError::Config(
                "need at least 2 patches and 1 point per patch".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.mask_ratio) {
            return Err(MaeError::Config(format!(
                "mask_ratio {} outside [0, 1)",
                self.mask_ratio
            )));
        }
        if self.n_masked() >= self.n_patches {
            return Err(MaeError::Config(format!(
                "mask_ratio {} leaves no visible patch out of {}",
                self.mask_ratio, self.n_patches
            )));
        }
        if self.cls_dim == 0 || self.seg_dim == 0 {
            return Err(MaeError::Config("cls_dim and seg_dim must be positive".into()));
        }
        Ok(())
    }

    /// Masked-patch count: round(ratio * n_patches), at least one patch
    /// masked. At least one visible is a validation error instead, because
    /// clamping downward would silently change the requested ratio.
    pub fn n_masked(&self) -> usize {
        let raw = (self.mask_ratio * self.n_patches as f64).round() as usize;
        raw.max(1)
    }

    pub fn n_visible(&self) -> usize {
        self.n_patches - self.n_masked()
    }

    /// Classification input width: all encoder block outputs concatenated.
    pub fn d_global(&self) -> usize {
        self.encoder_blocks * self.embed_dim
    }

    /// Widened width used inside the segmentation head.
    pub fn d_wide(&self) -> usize {
        3 * self.embed_dim
    }

    /// Width of the per-point concatenation feeding the segmentation stack:
    /// gathered per-point features, the max-pooled global, and the 64-wide
    /// class-label stream.
    pub fn seg_concat_dim(&self) -> usize {
        2 * self.d_wide() + SEG_LABEL_DIM
    }

    /// Hidden widths of the classification head.
    pub fn cls_hidden(&self) -> (usize, usize) {
        match self.scale_tag {
            ScaleTag::Paper => (512, 256),
            ScaleTag::Desk => (128, 64),
        }
    }

    /// Hidden widths of the segmentation stack.
    pub fn seg_hidden(&self) -> (usize, usize) {
        match self.scale_tag {
            ScaleTag::Paper => (512, 256),
            ScaleTag::Desk => (128, 64),
        }
    }

    /// Key=value lines identifying this config inside a checkpoint.
    pub fn fingerprint(&self) -> String {
        format!(
            "embed_dim={}\nencoder_blocks={}\ndecoder_blocks={}\nheads={}\nn_patches={}\npoints_per_patch={}\nmask_ratio={}\ncls_dim={}\nseg_dim={}\nscale_tag={}\n",
            self.embed_dim,
            self.encoder_blocks,
            self.decoder_blocks,
            self.heads,
            self.n_patches,
            self.points_per_patch,
            self.mask_ratio,
            self.cls_dim,
            self.seg_dim,
            self.scale_tag,
        )
    }

    /// Parse the key=value block written by [`ModelConfig::fingerprint`].
    /// Unknown keys and missing fields are hard errors.
    pub fn from_fingerprint(text: &str) -> Result<Self, MaeError> {
        let mut cfg = Self::desk();
        let mut seen = std::collections::BTreeSet::new();
        for line in text.lines() {
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| MaeError::Checkpoint(format!("malformed config line {line:?}")))?;
            let bad = |e: &dyn fmt::Display| {
                MaeError::Checkpoint(format!("config key {key}: {e}"))
            };
            match key {
                "embed_dim" => cfg.embed_dim = value.parse().map_err(|e| bad(&e))?,
                "encoder_blocks" => cfg.encoder_blocks = value.parse().map_err(|e| bad(&e))?,
                "decoder_blocks" => cfg.decoder_blocks = value.parse().map_err(|e| bad(&e))?,
                "heads" => cfg.heads = value.parse().map_err(|e| bad(&e))?,
                "n_patches" => cfg.n_patches = value.parse().map_err(|e| bad(&e))?,
                "points_per_patch" => cfg.points_per_patch = value.parse().map_err(|e| bad(&e))?,
                "mask_ratio" => cfg.mask_ratio = value.parse().map_err(|e| bad(&e))?,
                "cls_dim" => cfg.cls_dim = value.parse().map_err(|e| bad(&e))?,
                "seg_dim" => cfg.seg_dim = value.parse().map_err(|e| bad(&e))?,
                "scale_tag" => cfg.scale_tag = value.parse().map_err(|e| bad(&e))?,
                other => {
                    return Err(MaeError::Checkpoint(format!("unknown config key {other:?}")))
                }
            }
            seen.insert(key.to_string());
        }
        if seen.len() != 10 {
            return Err(MaeError::Checkpoint(format!(
                "config block has {} of 10 required keys",
                seen.len()
            )));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Fields on which `self` and `other` disagree, as "name: a vs b" strings.
    pub fn diff(&self, other: &Self) -> Vec<String> {
        let mut out = Vec::new();
        macro_rules! cmp {
            ($field:ident) => {
                if self.$field != other.$field {
                    out.push(format!(
                        "{}: {} vs {}",
                        stringify!($field),
                        self.$field,
                        other.$field
                    ));
                }
            };
        }
        cmp!(embed_dim);
        cmp!(encoder_blocks);
        cmp!(decoder_blocks);
        cmp!(heads);
        cmp!(n_patches);
        cmp!(points_per_patch);
        cmp!(mask_ratio);
        cmp!(cls_dim);
        cmp!(seg_dim);
        cmp!(scale_tag);
        out
    }
}

/// Width of the class-label stream inside the segmentation head.
pub const SEG_LABEL_DIM: usize = 64;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_and_paper_presets_validate() {
        ModelConfig::desk().validate().unwrap();
        ModelConfig::paper().validate().unwrap();
    }

    #[test]
    fn mask_counts() {
        let desk = ModelConfig::desk();
        assert_eq!(desk.n_masked(), 19);
        assert_eq!(desk.n_visible(), 13);

        let paper = ModelConfig::paper();
        assert_eq!(paper.n_masked(), 154);
        assert_eq!(paper.n_visible(), 102);

        let mut half = desk.clone();
        half.mask_ratio = 0.5;
        half.n_patches = 10;
        assert_eq!(half.n_masked(), 5);

        let mut none = desk.clone();
        none.mask_ratio = 0.0;
        assert_eq!(none.n_masked(), 1);
    }

    #[test]
    fn derived_widths() {
        let paper = ModelConfig::paper();
        assert_eq!(paper.d_global(), 4608);
        assert_eq!(paper.d_wide(), 1152);
        assert_eq!(paper.seg_concat_dim(), 2368);

        let desk = ModelConfig::desk();
        assert_eq!(desk.d_global(), 192);
        assert_eq!(desk.seg_concat_dim(), 448);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = ModelConfig::desk();
        c.heads = 5;
        assert!(c.validate().is_err());

        let mut c = ModelConfig::desk();
        c.mask_ratio = 1.0;
        assert!(c.validate().is_err());

        let mut c = ModelConfig::desk();
        c.n_patches = 4;
        c.mask_ratio = 0.95;
        assert!(c.validate().is_err(), "rounding to all-masked must fail");
    }

    #[test]
    fn fingerprint_round_trip() {
        for cfg in [ModelConfig::desk(), ModelConfig::paper()] {
            let back = ModelConfig::from_fingerprint(&cfg.fingerprint()).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn fingerprint_rejects_unknown_key() {
        let mut text = ModelConfig::desk().fingerprint();
        text.push_str("bogus=1\n");
        let err = ModelConfig::from_fingerprint(&text).unwrap_err();
        assert!(err.to_string().contains("bogus"));
    }

    #[test]
    fn diff_names_fields() {
        let a = ModelConfig::desk();
        let mut b = a.clone();
        b.embed_dim = 32;
        b.heads = 2;
        let d = a.diff(&b);
        assert_eq!(d.len(), 2);
        assert!(d[0].contains("embed_dim"));
        assert!(d[1].contains("heads"));
    }
}
