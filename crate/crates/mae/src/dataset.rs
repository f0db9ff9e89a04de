//! Synthetic labeled datasets generated on the fly. Splits are partitions
//! of the seed space, so train and test never share a cloud and no files
//! are involved.

use hfbm_core::geom::{apply_rotation, sample_rotation, RotationSetting};
use hfbm_core::pcio::{generate_synthetic, normalize_unit_sphere, PointCloud, Shape};
use hfbm_core::rng::derive_seed;

use crate::MaeError;

/// One synthetic class: a base shape plus an anisotropic stretch applied
/// before normalization. Stretching lets two classes share a base shape yet
/// stay geometrically distinct.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassSpec {
    pub shape: Shape,
    pub stretch: [f64; 3],
}

impl ClassSpec {
    pub fn plain(shape: Shape) -> Self {
        Self { shape, stretch: [1.0, 1.0, 1.0] }
    }
}

/// The four-class benchmark: one plain instance of each base shape.
pub fn four_class_specs() -> Vec<ClassSpec> {
    Shape::ALL.iter().copied().map(ClassSpec::plain).collect()
}

/// Five classes for few-shot episodes: the four base shapes plus a
/// flattened ellipsoid derived from the sphere.
pub fn five_class_specs() -> Vec<ClassSpec> {
    let mut specs = four_class_specs();
    specs.push(ClassSpec { shape: Shape::Sphere, stretch: [1.0, 0.62, 0.35] });
    specs
}

/// Aligned-pose clouds with class labels. Points are stored in canonical
/// pose; rotation happens per presentation, never here.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub clouds: Vec<PointCloud>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.clouds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clouds.is_empty()
    }
}

/// Generate `per_class` clouds for each class spec. The split tag keeps
/// train/test seed streams disjoint; clouds come out grouped by class in
/// spec order. Canonical pose = generate, stretch, then rescale to the unit
/// sphere.
pub fn build_synthetic(
    specs: &[ClassSpec],
    per_class: usize,
    n_points: usize,
    base_seed: u64,
    split: &str,
) -> Result<Dataset, MaeError> {
    if specs.is_empty() || per_class == 0 {
        return Err(MaeError::Data("dataset spec has no classes or no clouds".into()));
    }
    let mut clouds = Vec::with_capacity(specs.len() * per_class);
    let mut labels = Vec::with_capacity(specs.len() * per_class);
    for (class, spec) in specs.iter().enumerate() {
        for i in 0..per_class {
            let idx = (class * per_class + i) as u64;
            let seed = derive_seed(base_seed, split, idx);
            let mut cloud = generate_synthetic(spec.shape, n_points, seed)?;
            for p in &mut cloud.points {
                for (coord, &s) in p.iter_mut().zip(&spec.stretch) {
                    *coord *= s;
                }
            }
            normalize_unit_sphere(&mut cloud);
            cloud.label = Some(class);
            clouds.push(cloud);
            labels.push(class);
        }
    }
    Ok(Dataset { clouds, labels, n_classes: specs.len() })
}

/// The cloud as presented to the network: a freshly sampled rotation under
/// the given setting. Setting A is the exact identity.
pub fn present(cloud: &PointCloud, setting: RotationSetting, seed: u64) -> PointCloud {
    let rotation = sample_rotation(setting, seed);
    apply_rotation(cloud, &rotation)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_streams_are_disjoint() {
        let specs = four_class_specs();
        let train = build_synthetic(&specs, 3, 64, 7, "train").unwrap();
        let test = build_synthetic(&specs, 3, 64, 7, "test").unwrap();
        assert_eq!(train.len(), 12);
        assert_eq!(train.n_classes, 4);
        for a in &train.clouds {
            for b in &test.clouds {
                assert_ne!(a.points, b.points);
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let specs = five_class_specs();
        let a = build_synthetic(&specs, 2, 64, 3, "train").unwrap();
        let b = build_synthetic(&specs, 2, 64, 3, "train").unwrap();
        for (x, y) in a.clouds.iter().zip(&b.clouds) {
            assert_eq!(x.points, y.points);
        }
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn labels_follow_spec_order() {
        let specs = five_class_specs();
        let ds = build_synthetic(&specs, 2, 64, 1, "train").unwrap();
        assert_eq!(ds.labels, vec![0, 0, 1, 1, 2, 2, 3, 3, 4, 4]);
    }

    #[test]
    fn clouds_are_normalized() {
        let ds = build_synthetic(&five_class_specs(), 2, 64, 5, "train").unwrap();
        for cloud in &ds.clouds {
            let max_norm = cloud
                .points
                .iter()
                .map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt())
                .fold(0.0f64, f64::max);
            assert!((max_norm - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn stretched_class_differs_from_plain() {
        let specs = five_class_specs();
        let ds = build_synthetic(&specs, 1, 64, 2, "train").unwrap();
        // Sphere (class 0) versus ellipsoid (class 4): per-axis extents of
        // the normalized ellipsoid must be visibly anisotropic.
        let ellipsoid = &ds.clouds[4];
        let extent = |axis: usize| {
            ellipsoid.points.iter().map(|p| p[axis].abs()).fold(0.0f64, f64::max)
        };
        assert!(extent(0) > 2.0 * extent(2));
    }

    #[test]
    fn presentation_rotates_but_setting_a_is_identity() {
        let ds = build_synthetic(&four_class_specs(), 1, 64, 9, "train").unwrap();
        let cloud = &ds.clouds[0];
        let same = present(cloud, RotationSetting::A, 5);
        assert_eq!(same.points, cloud.points);
        let rotated = present(cloud, RotationSetting::R, 5);
        assert_ne!(rotated.points, cloud.points);
        for (a, b) in cloud.points.iter().zip(&rotated.points) {
            let na = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
            let nb = (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt();
            assert!((na - nb).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_spec_is_an_error() {
        assert!(build_synthetic(&[], 2, 64, 1, "train").is_err());
        assert!(build_synthetic(&four_class_specs(), 0, 64, 1, "train").is_err());
    }
}
