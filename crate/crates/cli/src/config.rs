//! Run configuration: a JSON document resolved into concrete settings.
//!
//! Unknown keys are hard errors so a typo in an ablation sweep cannot
//! silently fall back to a default. The resolved form is hashed (seed
//! included, output location excluded) and the hash is stamped into every
//! CSV a command writes, tying artifacts back to the exact run that
//! produced them.

use std::fs;
use std::path::{Path, PathBuf};

use hfbm_core::geom::RotationSetting;
use hfbm_core::pcio::Shape;
use hfbm_mae::{five_class_specs, four_class_specs, ClassSpec, ModelConfig, ScaleTag};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Linear-probe fitting defaults used by every probe-backed command.
pub const PROBE_EPOCHS: usize = 200;
pub const PROBE_LR: f64 = 1e-2;

fn default_mask_ratios() -> Vec<f64> {
    vec![0.3, 0.5, 0.6, 0.8]
}

fn default_rilf_groups() -> Vec<String> {
    ["none", "distance", "reference_angles", "inter_neighbor", "all"]
        .into_iter()
        .map(String::from)
        .collect()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelSection {
    /// "desk" or "paper"; every other field overrides that preset.
    scale: String,
    #[serde(default)]
    embed_dim: Option<usize>,
    #[serde(default)]
    encoder_blocks: Option<usize>,
    #[serde(default)]
    decoder_blocks: Option<usize>,
    #[serde(default)]
    heads: Option<usize>,
    #[serde(default)]
    n_patches: Option<usize>,
    #[serde(default)]
    points_per_patch: Option<usize>,
    #[serde(default)]
    mask_ratio: Option<f64>,
    #[serde(default)]
    cls_dim: Option<usize>,
    #[serde(default)]
    seg_dim: Option<usize>,
}

impl ModelSection {
    fn resolve(&self) -> Result<ModelConfig, CliError> {
        let mut cfg = match self.scale.as_str() {
            "desk" => ModelConfig::desk(),
            "paper" => ModelConfig::paper(),
            other => {
                return Err(CliError::Config(format!(
                    "unknown model scale {other:?}; expected \"desk\" or \"paper\""
                )))
            }
        };
        macro_rules! take {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { cfg.$field = v; })*
            };
        }
        take!(
            embed_dim,
            encoder_blocks,
            decoder_blocks,
            heads,
            n_patches,
            points_per_patch,
            mask_ratio,
            cls_dim,
            seg_dim
        );
        cfg.validate()
            .map_err(|e| CliError::Config(format!("model section: {e}")))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SyntheticSection {
    /// "four" (sphere/cube/cylinder/torus), "five" (adds a stretched
    /// ellipsoid), or "cylinder" (single class with part labels).
    classes: String,
    per_class: usize,
    #[serde(default)]
    test_per_class: Option<usize>,
    n_points: usize,
    #[serde(default)]
    base_seed: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct DataSection {
    #[serde(default)]
    synthetic: Option<SyntheticSection>,
    #[serde(default)]
    directory: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct FewshotSection {
    ways: usize,
    shots: usize,
    queries: usize,
    #[serde(default)]
    episodes: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct AblateSection {
    #[serde(default)]
    mask_ratios: Option<Vec<f64>>,
    #[serde(default)]
    rilf_groups: Option<Vec<String>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    model: ModelSection,
    data: DataSection,
    train_rotation: String,
    #[serde(default)]
    test_rotation: Option<String>,
    epochs: usize,
    #[serde(default)]
    batch_size: Option<usize>,
    #[serde(default)]
    lr: Option<f64>,
    #[serde(default)]
    weight_decay: Option<f64>,
    seed: u64,
    #[serde(default)]
    out_dir: Option<PathBuf>,
    #[serde(default)]
    checkpoint_every: Option<usize>,
    #[serde(default)]
    fewshot: Option<FewshotSection>,
    #[serde(default)]
    ablate: Option<AblateSection>,
}

/// Where clouds come from.
#[derive(Debug, Clone, Serialize)]
pub enum DataSpec {
    Synthetic {
        classes: String,
        per_class: usize,
        test_per_class: usize,
        n_points: usize,
        base_seed: u64,
    },
    Directory(PathBuf),
}

impl DataSpec {
    /// Class generators for a synthetic spec.
    pub fn class_specs(&self) -> Result<Vec<ClassSpec>, CliError> {
        match self {
            DataSpec::Synthetic { classes, .. } => match classes.as_str() {
                "four" => Ok(four_class_specs()),
                "five" => Ok(five_class_specs()),
                "cylinder" => Ok(vec![ClassSpec::plain(Shape::Cylinder)]),
                other => Err(CliError::Config(format!(
                    "unknown synthetic class set {other:?}; expected \"four\", \"five\", or \"cylinder\""
                ))),
            },
            DataSpec::Directory(_) => Err(CliError::Config(
                "directory datasets have no synthetic class spec".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FewshotPlan {
    pub ways: usize,
    pub shots: usize,
    pub queries: usize,
    pub episodes: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblatePlan {
    pub mask_ratios: Vec<f64>,
    pub rilf_groups: Vec<String>,
}

/// A fully resolved run: presets applied, defaults filled, flags folded in.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub data: DataSpec,
    pub train_rotation: RotationSetting,
    pub test_rotation: RotationSetting,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    /// 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
    pub fewshot: FewshotPlan,
    pub ablate: AblatePlan,
}

fn parse_rotation(s: &str) -> Result<RotationSetting, CliError> {
    match s {
        "A" => Ok(RotationSetting::A),
        "Z" => Ok(RotationSetting::Z),
        "R" => Ok(RotationSetting::R),
        other => Err(CliError::Config(format!(
            "unknown rotation setting {other:?}; expected \"A\", \"Z\", or \"R\""
        ))),
    }
}

/// Fallback generation seed so the dataset identity does not move when a run
/// is re-seeded from the command line.
const DEFAULT_DATA_SEED: u64 = 100_003;

impl RunConfig {
    /// Parse and resolve a JSON config file. `seed_override` and
    /// `out_override` come from the command line and win over the file.
    pub fn load(
        path: &Path,
        seed_override: Option<u64>,
        out_override: Option<PathBuf>,
    ) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let raw: RawConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?;
        Self::resolve(raw, seed_override, out_override)
    }

    fn resolve(
        raw: RawConfig,
        seed_override: Option<u64>,
        out_override: Option<PathBuf>,
    ) -> Result<Self, CliError> {
        let model = raw.model.resolve()?;
        let data = match (raw.data.synthetic, raw.data.directory) {
            (Some(s), None) => {
                if s.per_class == 0 {
                    return Err(CliError::Config("per_class must be positive".into()));
                }
                DataSpec::Synthetic {
                    classes: s.classes,
                    per_class: s.per_class,
                    test_per_class: s.test_per_class.unwrap_or(s.per_class),
                    n_points: s.n_points,
                    base_seed: s.base_seed.unwrap_or(DEFAULT_DATA_SEED),
                }
            }
            (None, Some(dir)) => {
                if !dir.is_dir() {
                    return Err(CliError::Config(format!(
                        "data directory {} does not exist",
                        dir.display()
                    )));
                }
                DataSpec::Directory(dir)
            }
            _ => {
                return Err(CliError::Config(
                    "data section must set exactly one of \"synthetic\" or \"directory\"".into(),
                ))
            }
        };
        // Sanity-check synthetic class sets eagerly so typos fail at launch.
        if matches!(data, DataSpec::Synthetic { .. }) {
            data.class_specs()?;
        }
        if raw.epochs == 0 {
            return Err(CliError::Config("epochs must be positive".into()));
        }
        let train_rotation = parse_rotation(&raw.train_rotation)?;
        let test_rotation = match &raw.test_rotation {
            Some(s) => parse_rotation(s)?,
            None => train_rotation,
        };
        let batch_size = raw.batch_size.unwrap_or(match model.scale_tag {
            ScaleTag::Desk => 16,
            ScaleTag::Paper => 128,
        });
        if batch_size == 0 {
            return Err(CliError::Config("batch_size must be positive".into()));
        }
        let lr = raw.lr.unwrap_or(1e-3);
        let weight_decay = raw.weight_decay.unwrap_or(0.05);
        if !(lr.is_finite() && lr > 0.0) {
            return Err(CliError::Config(format!("lr must be positive, got {lr}")));
        }
        if !(weight_decay.is_finite() && weight_decay >= 0.0) {
            return Err(CliError::Config(format!(
                "weight_decay must be non-negative, got {weight_decay}"
            )));
        }
        let fewshot = match raw.fewshot {
            Some(f) => FewshotPlan {
                ways: f.ways,
                shots: f.shots,
                queries: f.queries,
                episodes: f.episodes.unwrap_or(10),
            },
            None => FewshotPlan {
                ways: 5,
                shots: 10,
                queries: 10,
                episodes: 10,
            },
        };
        if fewshot.ways == 0 || fewshot.shots == 0 || fewshot.queries == 0 || fewshot.episodes == 0
        {
            return Err(CliError::Config(
                "fewshot ways, shots, queries, and episodes must all be positive".into(),
            ));
        }
        let ablate = match raw.ablate {
            Some(a) => AblatePlan {
                mask_ratios: a.mask_ratios.unwrap_or_else(default_mask_ratios),
                rilf_groups: a.rilf_groups.unwrap_or_else(default_rilf_groups),
            },
            None => AblatePlan {
                mask_ratios: default_mask_ratios(),
                rilf_groups: default_rilf_groups(),
            },
        };
        if ablate.mask_ratios.is_empty() || ablate.rilf_groups.is_empty() {
            return Err(CliError::Config(
                "ablate sweeps must name at least one setting".into(),
            ));
        }
        Ok(RunConfig {
            model,
            data,
            train_rotation,
            test_rotation,
            epochs: raw.epochs,
            batch_size,
            lr,
            weight_decay,
            seed: seed_override.unwrap_or(raw.seed),
            out_dir: out_override.or(raw.out_dir),
            checkpoint_every: raw.checkpoint_every.unwrap_or(0),
            fewshot,
            ablate,
        })
    }

    /// Output directory, required by every command that writes files.
    pub fn out_dir(&self) -> Result<&Path, CliError> {
        self.out_dir.as_deref().ok_or_else(|| {
            CliError::Config("no output directory; set \"out_dir\" or pass --out".into())
        })
    }

    /// Hash of everything that determines the run's numbers. The output
    /// location is excluded on purpose: re-running into a different
    /// directory must produce byte-identical artifacts, trailer included.
    pub fn hash(&self) -> String {
        #[derive(Serialize)]
        struct Hashed<'a> {
            model: String,
            data: &'a DataSpec,
            train_rotation: String,
            test_rotation: String,
            epochs: usize,
            batch_size: usize,
            lr: f64,
            weight_decay: f64,
            seed: u64,
            checkpoint_every: usize,
            fewshot: &'a FewshotPlan,
            ablate: &'a AblatePlan,
        }
        let view = Hashed {
            model: self.model.fingerprint(),
            data: &self.data,
            train_rotation: self.train_rotation.to_string(),
            test_rotation: self.test_rotation.to_string(),
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            weight_decay: self.weight_decay,
            seed: self.seed,
            checkpoint_every: self.checkpoint_every,
            fewshot: &self.fewshot,
            ablate: &self.ablate,
        };
        let json = serde_json::to_string(&view).expect("hash view serializes");
        let digest = Sha256::digest(json.as_bytes());
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        hex[..16].to_string()
    }
}
