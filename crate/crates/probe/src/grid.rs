//! Rotation-setting evaluation grids.
//!
//! Setting X governs how training clouds are rotated before frozen features
//! are extracted and a probe is fit; setting Y governs the rotation applied
//! to test clouds. A rotation-invariant pipeline makes every cell of a row
//! agree up to float noise, which is exactly what the grid is for measuring.

use hfbm_core::geom::RotationSetting;
use hfbm_core::rng::derive_seed;
use hfbm_mae::{extract_probe_features, Dataset, FeatureDrop, MaeModel, Scalar};

use crate::linear::train_probe;
use crate::ProbeError;

/// Clouds per forward pass during feature extraction. Features are computed
/// per cloud, so the chunk size never changes the numbers.
const EXTRACT_BATCH: usize = 32;

#[derive(Debug, Clone, Copy)]
pub struct GridCell {
    pub train_setting: RotationSetting,
    pub test_setting: RotationSetting,
    /// Fraction of test clouds classified correctly, in [0, 1].
    pub accuracy: f64,
    pub n_test: usize,
}

#[derive(Debug, Clone)]
pub struct GridReport {
    pub cells: Vec<GridCell>,
    pub seed: u64,
}

impl GridReport {
    pub fn cell(&self, x: RotationSetting, y: RotationSetting) -> Option<&GridCell> {
        self.cells
            .iter()
            .find(|c| c.train_setting == x && c.test_setting == y)
    }

    /// Largest accuracy spread across test settings for any fixed train
    /// setting. Small spread is the observable face of feature invariance.
    pub fn max_spread_over_test(&self) -> f64 {
        let mut worst = 0.0f64;
        let xs: Vec<RotationSetting> = {
            let mut seen = Vec::new();
            for c in &self.cells {
                if !seen.contains(&c.train_setting) {
                    seen.push(c.train_setting);
                }
            }
            seen
        };
        for x in xs {
            let row: Vec<f64> = self
                .cells
                .iter()
                .filter(|c| c.train_setting == x)
                .map(|c| c.accuracy)
                .collect();
            if row.len() > 1 {
                let hi = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lo = row.iter().cloned().fold(f64::INFINITY, f64::min);
                worst = worst.max(hi - lo);
            }
        }
        worst
    }

    /// One row per cell under a fixed header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("train_setting,test_setting,accuracy,n_test,seed\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                c.train_setting, c.test_setting, c.accuracy, c.n_test, self.seed
            ));
        }
        out
    }
}

/// Fit one probe per train setting on frozen features and score it under
/// every test setting. Emits cells in row-major (train, test) order.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_grid<T: Scalar>(
    model: &MaeModel<T>,
    train: &Dataset,
    test: &Dataset,
    train_settings: &[RotationSetting],
    test_settings: &[RotationSetting],
    epochs: usize,
    lr: f64,
    seed: u64,
    drop: &FeatureDrop,
) -> Result<GridReport, ProbeError> {
    if train_settings.is_empty() || test_settings.is_empty() {
        return Err(ProbeError::Data("empty rotation setting list".into()));
    }
    let mut cells = Vec::with_capacity(train_settings.len() * test_settings.len());
    for (xi, &x) in train_settings.iter().enumerate() {
        let (train_f, train_l) = extract_probe_features(
            model,
            train,
            x,
            derive_seed(seed, "grid-train", xi as u64),
            EXTRACT_BATCH,
            drop,
        )?;
        let probe = train_probe(
            &train_f,
            &train_l,
            epochs,
            lr,
            derive_seed(seed, "grid-probe", xi as u64),
        )?;
        for (yi, &y) in test_settings.iter().enumerate() {
            let cell_id = (xi * test_settings.len() + yi) as u64;
            let (test_f, test_l) = extract_probe_features(
                model,
                test,
                y,
                derive_seed(seed, "grid-test", cell_id),
                EXTRACT_BATCH,
                drop,
            )?;
            cells.push(GridCell {
                train_setting: x,
                test_setting: y,
                accuracy: probe.evaluate(&test_f, &test_l),
                n_test: test.len(),
            });
        }
    }
    Ok(GridReport { cells, seed })
}
