//! Rotation sampling and the index-space sampling geometry: farthest point
//! sampling, k-nearest neighbors, and patch construction.
//!
//! All selection rules are written in terms of squared distances with
//! smallest-index tie-breaks, so the produced indices are exactly reproducible
//! and, for clouds without distance ties, identical before and after a rigid
//! rotation of the coordinates.

use crate::pcio::PointCloud;
use crate::rng::SeededRng;
use crate::vec3::{self, Vec3};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeomError {
    #[error("{what} must satisfy 1 <= {what} <= {max}, got {got}")]
    CountOutOfRange { what: &'static str, got: usize, max: usize },
    #[error("index {got} is out of bounds for a cloud of {len} points")]
    IndexOutOfBounds { got: usize, len: usize },
    #[error("matrix is not a rotation: {reason}")]
    NotARotation { reason: String },
}

/// Proper rotation: orthonormal with determinant +1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix([[f64; 3]; 3]);

impl RotationMatrix {
    pub fn identity() -> Self {
        Self([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    }

    /// Validating constructor: rows must be orthonormal within 1e-9 and the
    /// determinant must be +1.
    pub fn new(m: [[f64; 3]; 3]) -> Result<Self, GeomError> {
        let r = Self(m);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                let got = vec3::dot(r.row(i), r.row(j));
                if (got - want).abs() > 1e-9 {
                    return Err(GeomError::NotARotation {
                        reason: format!("rows {i} and {j} have inner product {got}"),
                    });
                }
            }
        }
        let det = r.det();
        if (det - 1.0).abs() > 1e-9 {
            return Err(GeomError::NotARotation { reason: format!("determinant is {det}") });
        }
        Ok(r)
    }

    pub fn row(&self, i: usize) -> Vec3 {
        self.0[i]
    }

    pub fn det(&self) -> f64 {
        vec3::dot(self.0[0], vec3::cross(self.0[1], self.0[2]))
    }

    pub fn apply(&self, v: Vec3) -> Vec3 {
        [
            vec3::dot(self.0[0], v),
            vec3::dot(self.0[1], v),
            vec3::dot(self.0[2], v),
        ]
    }

    pub fn transpose(&self) -> Self {
        let m = &self.0;
        Self([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn matrix(&self) -> &[[f64; 3]; 3] {
        &self.0
    }
}

/// Rotation regimes used for training and evaluation.
///
/// `A` leaves clouds in their stored aligned pose, `Z` spins them by a
/// uniform angle about the z axis, and `R` applies a uniform random rotation
/// drawn from the whole rotation group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RotationSetting {
    A,
    Z,
    R,
}

impl RotationSetting {
    pub const ALL: [RotationSetting; 3] = [RotationSetting::A, RotationSetting::Z, RotationSetting::R];
}

impl fmt::Display for RotationSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::A => write!(f, "A"),
            Self::Z => write!(f, "Z"),
            Self::R => write!(f, "R"),
        }
    }
}

impl std::str::FromStr for RotationSetting {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "A" => Ok(Self::A),
            "Z" => Ok(Self::Z),
            "R" => Ok(Self::R),
            other => Err(format!("unknown rotation setting {other:?}, expected A, Z, or R")),
        }
    }
}

/// Draw a rotation for the given setting. Deterministic in the seed; setting
/// `A` returns the exact identity without consuming randomness.
pub fn sample_rotation(setting: RotationSetting, seed: u64) -> RotationMatrix {
    match setting {
        RotationSetting::A => RotationMatrix::identity(),
        RotationSetting::Z => {
            let mut rng = SeededRng::new(seed);
            let theta = rng.range(0.0, std::f64::consts::TAU);
            let (s, c) = theta.sin_cos();
            RotationMatrix([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        }
        RotationSetting::R => {
            // Uniform over the rotation group via a uniform unit quaternion.
            let mut rng = SeededRng::new(seed);
            let u1 = rng.uniform();
            let u2 = rng.uniform();
            let u3 = rng.uniform();
            let a = (1.0 - u1).sqrt();
            let b = u1.sqrt();
            let x = a * (std::f64::consts::TAU * u2).sin();
            let y = a * (std::f64::consts::TAU * u2).cos();
            let z = b * (std::f64::consts::TAU * u3).sin();
            let w = b * (std::f64::consts::TAU * u3).cos();
            RotationMatrix([
                [
                    1.0 - 2.0 * (y * y + z * z),
                    2.0 * (x * y - w * z),
                    2.0 * (x * z + w * y),
                ],
                [
                    2.0 * (x * y + w * z),
                    1.0 - 2.0 * (x * x + z * z),
                    2.0 * (y * z - w * x),
                ],
                [
                    2.0 * (x * z - w * y),
                    2.0 * (y * z + w * x),
                    1.0 - 2.0 * (x * x + y * y),
                ],
            ])
        }
    }
}

/// Rotate every point, preserving point order and all labels.
pub fn apply_rotation(cloud: &PointCloud, rotation: &RotationMatrix) -> PointCloud {
    PointCloud {
        points: cloud.points.iter().map(|p| rotation.apply(*p)).collect(),
        label: cloud.label,
        part_labels: cloud.part_labels.clone(),
    }
}

/// Greedy farthest point sampling over squared distances.
///
/// The first selection is `start_index`; every later selection maximizes the
/// minimum squared distance to the already-selected set, breaking ties toward
/// the smallest index. With `count == n` the result is a permutation.
pub fn farthest_point_sample(
    points: &[Vec3],
    count: usize,
    start_index: usize,
) -> Result<Vec<usize>, GeomError> {
    let n = points.len();
    if count == 0 || count > n {
        return Err(GeomError::CountOutOfRange { what: "count", got: count, max: n });
    }
    if start_index >= n {
        return Err(GeomError::IndexOutOfBounds { got: start_index, len: n });
    }
    let mut selected = Vec::with_capacity(count);
    let mut taken = vec![false; n];
    let mut min_d2: Vec<f64> = points
        .iter()
        .map(|p| vec3::dist_sq(*p, points[start_index]))
        .collect();
    selected.push(start_index);
    taken[start_index] = true;
    while selected.len() < count {
        let mut best = usize::MAX;
        let mut best_d2 = -1.0f64;
        for i in 0..n {
            if !taken[i] && min_d2[i] > best_d2 {
                best = i;
                best_d2 = min_d2[i];
            }
        }
        taken[best] = true;
        selected.push(best);
        for i in 0..n {
            if !taken[i] {
                let d2 = vec3::dist_sq(points[i], points[best]);
                if d2 < min_d2[i] {
                    min_d2[i] = d2;
                }
            }
        }
    }
    Ok(selected)
}

/// Indices of the k nearest points to `points[center_index]`, the center
/// itself included, sorted by (squared distance, index) ascending.
pub fn knn(points: &[Vec3], center_index: usize, k: usize) -> Result<Vec<usize>, GeomError> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(GeomError::CountOutOfRange { what: "k", got: k, max: n });
    }
    if center_index >= n {
        return Err(GeomError::IndexOutOfBounds { got: center_index, len: n });
    }
    let center = points[center_index];
    let mut order: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| (vec3::dist_sq(*p, center), i))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| {
        a.0.partial_cmp(&b.0).expect("finite distances").then(a.1.cmp(&b.1))
    };
    if k < n {
        order.select_nth_unstable_by(k - 1, cmp);
        order.truncate(k);
    }
    order.sort_unstable_by(cmp);
    Ok(order.into_iter().map(|(_, i)| i).collect())
}

/// Patch decomposition of a cloud: farthest-point-sampled centers, each with
/// its k-nearest neighborhood.
///
/// The struct stores indices into the cloud it was built from; it does not
/// own the coordinates. Patches may overlap and their union need not cover
/// the cloud.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchSet {
    pub center_indices: Vec<usize>,
    /// One row per patch, each of length k, sorted by (squared distance to
    /// the center, index); the center is always a member.
    pub member_indices: Vec<Vec<usize>>,
}

impl PatchSet {
    pub fn n_patches(&self) -> usize {
        self.center_indices.len()
    }

    pub fn points_per_patch(&self) -> usize {
        self.member_indices.first().map_or(0, Vec::len)
    }

    /// Cheap structural check that this patch set can index `cloud`.
    pub fn is_valid_for(&self, cloud: &PointCloud) -> bool {
        let n = cloud.len();
        self.center_indices.iter().all(|&c| c < n)
            && self
                .member_indices
                .iter()
                .all(|row| row.iter().all(|&m| m < n))
    }
}

pub fn patchify(
    cloud: &PointCloud,
    n_patches: usize,
    points_per_patch: usize,
    start_index: usize,
) -> Result<PatchSet, GeomError> {
    let center_indices = farthest_point_sample(&cloud.points, n_patches, start_index)?;
    let member_indices = center_indices
        .iter()
        .map(|&c| knn(&cloud.points, c, points_per_patch))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PatchSet { center_indices, member_indices })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pcio::{generate_synthetic, Shape};

    #[test]
    fn identity_setting_is_exact() {
        for seed in 0..20 {
            assert_eq!(sample_rotation(RotationSetting::A, seed), RotationMatrix::identity());
        }
    }

    #[test]
    fn sampled_rotations_are_orthonormal_with_unit_determinant() {
        for setting in RotationSetting::ALL {
            for seed in 0..1000 {
                let r = sample_rotation(setting, seed);
                RotationMatrix::new(*r.matrix()).unwrap();
            }
        }
    }

    #[test]
    fn z_setting_fixes_the_z_axis() {
        for seed in 0..100 {
            let r = sample_rotation(RotationSetting::Z, seed);
            let v = r.apply([0.0, 0.0, 1.0]);
            assert_eq!(v, [0.0, 0.0, 1.0]);
        }
    }

    #[test]
    fn full_rotations_cover_the_sphere() {
        // The image of a fixed direction under uniformly drawn rotations has
        // mean near the origin.
        let mut acc = [0.0f64; 3];
        let n = 10_000;
        for seed in 0..n {
            let r = sample_rotation(RotationSetting::R, seed);
            acc = vec3::add(acc, r.apply([0.0, 0.0, 1.0]));
        }
        let mean = vec3::scale(acc, 1.0 / n as f64);
        assert!(vec3::norm(mean) < 0.05, "mean image {mean:?}");
    }

    #[test]
    fn rotation_sampling_is_deterministic() {
        for setting in RotationSetting::ALL {
            assert_eq!(sample_rotation(setting, 5), sample_rotation(setting, 5));
        }
        assert_ne!(sample_rotation(RotationSetting::R, 5), sample_rotation(RotationSetting::R, 6));
    }

    #[test]
    fn apply_rotation_preserves_structure_and_distances() {
        let cloud = generate_synthetic(Shape::Cylinder, 100, 3).unwrap();
        let r = sample_rotation(RotationSetting::R, 12);
        let rotated = apply_rotation(&cloud, &r);
        assert_eq!(rotated.label, cloud.label);
        assert_eq!(rotated.part_labels, cloud.part_labels);
        for i in 0..cloud.len() {
            for j in (i + 1)..cloud.len().min(i + 10) {
                let d0 = vec3::dist(cloud.points[i], cloud.points[j]);
                let d1 = vec3::dist(rotated.points[i], rotated.points[j]);
                assert!((d0 - d1).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn fps_picks_the_opposite_corner_of_a_square() {
        let pts = vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [1.0, 1.0, 0.0],
            [0.0, 1.0, 0.0],
        ];
        assert_eq!(farthest_point_sample(&pts, 2, 0).unwrap(), vec![0, 2]);
    }

    #[test]
    fn fps_with_full_count_is_a_permutation() {
        let cloud = generate_synthetic(Shape::Sphere, 64, 8).unwrap();
        let mut sel = farthest_point_sample(&cloud.points, 64, 0).unwrap();
        sel.sort_unstable();
        assert_eq!(sel, (0..64).collect::<Vec<_>>());
    }

    #[test]
    fn fps_rejects_bad_arguments() {
        let pts = vec![[0.0; 3]; 4];
        assert!(farthest_point_sample(&pts, 0, 0).is_err());
        assert!(farthest_point_sample(&pts, 5, 0).is_err());
        assert!(farthest_point_sample(&pts, 2, 4).is_err());
    }

    #[test]
    fn knn_orders_by_distance_then_index() {
        let pts = vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [2.0, 0.0, 0.0],
            [3.0, 0.0, 0.0],
        ];
        assert_eq!(knn(&pts, 1, 3).unwrap(), vec![1, 0, 2]);
    }

    #[test]
    fn knn_includes_center_first_without_duplicates() {
        let cloud = generate_synthetic(Shape::Torus, 128, 4).unwrap();
        let got = knn(&cloud.points, 17, 16).unwrap();
        assert_eq!(got[0], 17);
        let mut uniq = got.clone();
        uniq.sort_unstable();
        uniq.dedup();
        assert_eq!(uniq.len(), 16);
    }

    #[test]
    fn patchify_produces_full_rows() {
        let cloud = generate_synthetic(Shape::Cube, 256, 6).unwrap();
        let patches = patchify(&cloud, 32, 16, 0).unwrap();
        assert_eq!(patches.n_patches(), 32);
        assert!(patches.is_valid_for(&cloud));
        for (c, row) in patches.center_indices.iter().zip(&patches.member_indices) {
            assert_eq!(row.len(), 16);
            assert!(row.contains(c));
        }
    }

    #[test]
    fn patch_indices_survive_rotation() {
        for seed in 0..20 {
            let mut cloud = generate_synthetic(Shape::Torus, 200, seed).unwrap();
            crate::pcio::normalize_unit_sphere(&mut cloud);
            let rotated = apply_rotation(&cloud, &sample_rotation(RotationSetting::R, seed + 1000));
            let a = patchify(&cloud, 24, 12, 0).unwrap();
            let b = patchify(&rotated, 24, 12, 0).unwrap();
            assert_eq!(a, b);
        }
    }
}
