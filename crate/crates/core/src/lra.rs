//! Local reference axis estimation and the tangent-plane ordering of patch
//! points.
//!
//! The axis of a neighborhood is the smallest-eigenvalue eigenvector of its
//! point covariance, which for a locally flat surface approximates the
//! surface normal. Both the axis sign and the point ordering are pinned down
//! by deterministic rules so that the downstream features depend only on the
//! shape, not on point order or pose.

use crate::vec3::{self, Vec3, DEGENERATE_EPS};
use std::f64::consts::{PI, TAU};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LraError {
    #[error("cannot estimate an axis from an empty neighborhood")]
    EmptyNeighborhood,
}

/// Unit axis attached to a neighborhood, with a deterministic sign.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lra {
    pub axis: Vec3,
}

/// Axis plus the margins that decide how stable it is under perturbation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LraDetail {
    pub lra: Lra,
    /// |axis . (anchor - mean)| for the anchor that fixed the sign, or 0 when
    /// every anchor was degenerate and the first-nonzero-component rule fired.
    pub sign_margin: f64,
    /// Gap between the two smallest covariance eigenvalues, relative to the
    /// eigenvalue scale. Near zero the axis direction itself is ill-defined.
    pub eigen_gap: f64,
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    vec3::dot(m[0], vec3::cross(m[1], m[2]))
}

fn char_poly(m: &[[f64; 3]; 3], x: f64) -> (f64, f64) {
    // Monic form x^3 - tr x^2 + (sum of principal minors) x - det, with its
    // derivative, for Newton refinement of the closed-form roots.
    let tr = m[0][0] + m[1][1] + m[2][2];
    let minors = (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        + (m[0][0] * m[2][2] - m[0][2] * m[2][0])
        + (m[0][0] * m[1][1] - m[0][1] * m[1][0]);
    let det = det3(m);
    let p = ((x - tr) * x + minors) * x - det;
    let dp = (3.0 * x - 2.0 * tr) * x + minors;
    (p, dp)
}

fn newton_polish(m: &[[f64; 3]; 3], mut x: f64) -> f64 {
    for _ in 0..2 {
        let (p, dp) = char_poly(m, x);
        if dp == 0.0 {
            break;
        }
        let next = x - p / dp;
        if !next.is_finite() {
            break;
        }
        let (p_next, _) = char_poly(m, next);
        if p_next.abs() <= p.abs() {
            x = next;
        } else {
            break;
        }
    }
    x
}

/// Eigenvalues of a symmetric 3x3 matrix in ascending order, via the
/// trigonometric closed form refined by two Newton steps per root.
pub fn symmetric_eigenvalues(m: &[[f64; 3]; 3]) -> [f64; 3] {
    let off = m[0][1] * m[0][1] + m[0][2] * m[0][2] + m[1][2] * m[1][2];
    let mut eigs = if off == 0.0 {
        [m[0][0], m[1][1], m[2][2]]
    } else {
        let q = (m[0][0] + m[1][1] + m[2][2]) / 3.0;
        let p2 = (m[0][0] - q).powi(2)
            + (m[1][1] - q).powi(2)
            + (m[2][2] - q).powi(2)
            + 2.0 * off;
        let p = (p2 / 6.0).sqrt();
        let b = [
            [(m[0][0] - q) / p, m[0][1] / p, m[0][2] / p],
            [m[1][0] / p, (m[1][1] - q) / p, m[1][2] / p],
            [m[2][0] / p, m[2][1] / p, (m[2][2] - q) / p],
        ];
        let r = (det3(&b) / 2.0).clamp(-1.0, 1.0);
        let phi = r.acos() / 3.0;
        let e_max = q + 2.0 * p * phi.cos();
        let e_min = q + 2.0 * p * (phi + 2.0 * PI / 3.0).cos();
        let polished = [newton_polish(m, e_min), newton_polish(m, e_max)];
        [polished[0], 3.0 * q - polished[0] - polished[1], polished[1]]
    };
    eigs.sort_unstable_by(f64::total_cmp);
    eigs
}

fn canonical_sign(v: Vec3) -> Vec3 {
    for c in v {
        if c != 0.0 {
            return if c < 0.0 { vec3::neg(v) } else { v };
        }
    }
    v
}

fn eigenvector_for(m: &[[f64; 3]; 3], lambda: f64) -> Vec3 {
    let rows = [
        [m[0][0] - lambda, m[0][1], m[0][2]],
        [m[1][0], m[1][1] - lambda, m[1][2]],
        [m[2][0], m[2][1], m[2][2] - lambda],
    ];
    let scale_sq = rows.iter().map(|r| vec3::norm_sq(*r)).fold(0.0, f64::max);
    if scale_sq == 0.0 {
        // The matrix is lambda * identity; every direction is an eigenvector.
        return [0.0, 0.0, 1.0];
    }
    // The eigenvector is orthogonal to every row, so any robust cross product
    // of two rows spans it when the eigenvalue is simple.
    let crosses = [
        vec3::cross(rows[0], rows[1]),
        vec3::cross(rows[0], rows[2]),
        vec3::cross(rows[1], rows[2]),
    ];
    let mut best = crosses[0];
    let mut best_norm_sq = vec3::norm_sq(best);
    for c in &crosses[1..] {
        let n = vec3::norm_sq(*c);
        if n > best_norm_sq {
            best = *c;
            best_norm_sq = n;
        }
    }
    if best_norm_sq > scale_sq * scale_sq * 1e-24 {
        return vec3::scale(best, 1.0 / best_norm_sq.sqrt());
    }
    // Repeated eigenvalue: the rows are parallel and the eigenspace is the
    // plane orthogonal to the dominant row. Pick a fixed vector in it.
    let mut row = rows[0];
    let mut row_norm_sq = vec3::norm_sq(row);
    for r in &rows[1..] {
        let n = vec3::norm_sq(*r);
        if n > row_norm_sq {
            row = *r;
            row_norm_sq = n;
        }
    }
    let unit_row = vec3::scale(row, 1.0 / row_norm_sq.sqrt());
    let mut k = 0;
    for i in 1..3 {
        if unit_row[i].abs() < unit_row[k].abs() {
            k = i;
        }
    }
    let mut e = [0.0; 3];
    e[k] = 1.0;
    let v = vec3::cross(unit_row, e);
    vec3::scale(v, 1.0 / vec3::norm(v))
}

/// Unit eigenvector of the smallest eigenvalue, with the first nonzero
/// component made positive.
pub fn smallest_eigenvector(m: &[[f64; 3]; 3]) -> Vec3 {
    let eigs = symmetric_eigenvalues(m);
    canonical_sign(eigenvector_for(m, eigs[0]))
}

pub(crate) fn mean_of(points: &[Vec3]) -> Vec3 {
    let mut acc = [0.0; 3];
    for p in points {
        acc = vec3::add(acc, *p);
    }
    vec3::scale(acc, 1.0 / points.len() as f64)
}

fn covariance_about(points: &[Vec3], mean: Vec3) -> [[f64; 3]; 3] {
    let mut c = [[0.0; 3]; 3];
    for p in points {
        let d = vec3::sub(*p, mean);
        for i in 0..3 {
            for j in i..3 {
                c[i][j] += d[i] * d[j];
            }
        }
    }
    let inv = 1.0 / points.len() as f64;
    for i in 0..3 {
        for j in i..3 {
            c[i][j] *= inv;
            c[j][i] = c[i][j];
        }
    }
    c
}

/// Orient the canonically signed `axis` toward the first anchor whose offset
/// from `mean` has a non-degenerate projection on it. Returns the oriented
/// axis and the winning projection magnitude, which is 0 when every anchor
/// was degenerate and the canonical orientation was kept.
pub(crate) fn apply_sign_chain(axis: Vec3, mean: Vec3, anchors: &[Vec3]) -> (Vec3, f64) {
    for a in anchors {
        let dot = vec3::dot(axis, vec3::sub(*a, mean));
        if dot.abs() >= DEGENERATE_EPS {
            let oriented = if dot < 0.0 { vec3::neg(axis) } else { axis };
            return (oriented, dot.abs());
        }
    }
    (axis, 0.0)
}

/// Axis of a neighborhood with the sign chosen by a chain of anchors.
///
/// The canonical eigenvector is flipped so it points from the neighborhood
/// mean toward the first anchor whose offset has a non-degenerate projection
/// on it; if every anchor projects within 1e-12 of zero the
/// first-nonzero-component-positive orientation is kept.
pub fn compute_lra_detailed(neighborhood: &[Vec3], anchors: &[Vec3]) -> Result<LraDetail, LraError> {
    if neighborhood.is_empty() {
        return Err(LraError::EmptyNeighborhood);
    }
    let mean = mean_of(neighborhood);
    let cov = covariance_about(neighborhood, mean);
    let eigs = symmetric_eigenvalues(&cov);
    let canonical = canonical_sign(eigenvector_for(&cov, eigs[0]));
    let (axis, sign_margin) = apply_sign_chain(canonical, mean, anchors);
    let scale = eigs[2].abs().max(eigs[0].abs()).max(1e-300);
    Ok(LraDetail {
        lra: Lra { axis },
        sign_margin,
        eigen_gap: (eigs[1] - eigs[0]) / scale,
    })
}

/// Axis of a neighborhood, sign-anchored toward `anchor`.
pub fn compute_lra(neighborhood: &[Vec3], anchor: Vec3) -> Result<Lra, LraError> {
    compute_lra_detailed(neighborhood, &[anchor]).map(|d| d.lra)
}

/// Anchor-free axis estimate, cached per point by the feature extractor so
/// the sign chain can be re-applied per patch without redoing the
/// eigendecomposition.
#[derive(Debug, Clone, Copy)]
pub(crate) struct CanonicalAxis {
    pub axis: Vec3,
    pub mean: Vec3,
    pub eigen_gap: f64,
}

pub(crate) fn canonical_axis_of(neighborhood: &[Vec3]) -> CanonicalAxis {
    let mean = mean_of(neighborhood);
    let cov = covariance_about(neighborhood, mean);
    let eigs = symmetric_eigenvalues(&cov);
    let axis = canonical_sign(eigenvector_for(&cov, eigs[0]));
    let scale = eigs[2].abs().max(eigs[0].abs()).max(1e-300);
    CanonicalAxis { axis, mean, eigen_gap: (eigs[1] - eigs[0]) / scale }
}

/// Ordering of a patch plus the margins that decide how stable it is.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderingDetail {
    pub permutation: Vec<usize>,
    /// Distance lead of the starting point over the runner-up.
    pub farthest_gap: f64,
    /// Smallest angular separation between consecutive sweep positions,
    /// including the wrap-around at the starting direction.
    pub min_angle_gap: f64,
    /// Smallest tangent-plane projection norm among points that do not sit
    /// exactly on the reference.
    pub min_projection_norm: f64,
}

/// Deterministic ordering of patch points in the tangent plane of the
/// reference.
///
/// Position 0 is the point farthest from the reference in 3D (ties broken by
/// index). The rest follow by the clockwise angle, about the axis, swept from
/// the starting point's tangent-plane direction to theirs, ties again by
/// index. Points whose tangent-plane projection is degenerate (norm below
/// 1e-12) come last, in index order.
pub fn order_patch_points(patch_points: &[Vec3], reference: Vec3, reference_lra: &Lra) -> Vec<usize> {
    order_patch_points_detailed(patch_points, reference, reference_lra).permutation
}

pub fn order_patch_points_detailed(
    patch_points: &[Vec3],
    reference: Vec3,
    reference_lra: &Lra,
) -> OrderingDetail {
    let k = patch_points.len();
    if k == 0 {
        return OrderingDetail {
            permutation: Vec::new(),
            farthest_gap: f64::INFINITY,
            min_angle_gap: f64::INFINITY,
            min_projection_norm: f64::INFINITY,
        };
    }
    let axis = reference_lra.axis;
    let offsets: Vec<Vec3> = patch_points.iter().map(|p| vec3::sub(*p, reference)).collect();
    let dists: Vec<f64> = offsets.iter().map(|v| vec3::norm(*v)).collect();

    let mut pos0 = 0;
    for i in 1..k {
        if dists[i] > dists[pos0] {
            pos0 = i;
        }
    }
    let farthest_gap = dists
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != pos0)
        .map(|(_, d)| dists[pos0] - d)
        .fold(f64::INFINITY, f64::min);

    let projections: Vec<Vec3> = offsets
        .iter()
        .map(|v| vec3::sub(*v, vec3::scale(axis, vec3::dot(*v, axis))))
        .collect();
    let proj_norms: Vec<f64> = projections.iter().map(|u| vec3::norm(*u)).collect();
    let min_projection_norm = (0..k)
        .filter(|&i| dists[i] > 0.0)
        .map(|i| proj_norms[i])
        .fold(f64::INFINITY, f64::min);

    let start_degenerate = proj_norms[pos0] < DEGENERATE_EPS;
    let u0 = if start_degenerate {
        [0.0; 3]
    } else {
        vec3::scale(projections[pos0], 1.0 / proj_norms[pos0])
    };

    let mut swept: Vec<(f64, usize)> = Vec::with_capacity(k - 1);
    let mut degenerate: Vec<usize> = Vec::new();
    for i in 0..k {
        if i == pos0 {
            continue;
        }
        if proj_norms[i] < DEGENERATE_EPS {
            degenerate.push(i);
            continue;
        }
        let angle = if start_degenerate {
            0.0
        } else {
            let u = vec3::scale(projections[i], 1.0 / proj_norms[i]);
            let a = f64::atan2(vec3::dot(vec3::cross(u, u0), axis), vec3::dot(u, u0));
            if a < 0.0 {
                a + TAU
            } else {
                a
            }
        };
        swept.push((angle, i));
    }
    swept.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let min_angle_gap = if swept.is_empty() || start_degenerate {
        f64::INFINITY
    } else {
        // Treat the starting direction as occupying angle 0 (and 2*pi): a
        // swept angle near the wrap-around can cross it under perturbation.
        let mut gap = f64::INFINITY;
        let mut prev = 0.0;
        for &(a, _) in &swept {
            gap = gap.min(a - prev);
            prev = a;
        }
        gap.min(TAU - prev)
    };

    let mut permutation = Vec::with_capacity(k);
    permutation.push(pos0);
    permutation.extend(swept.into_iter().map(|(_, i)| i));
    permutation.extend(degenerate);
    OrderingDetail {
        permutation,
        farthest_gap,
        min_angle_gap,
        min_projection_norm,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{apply_rotation, sample_rotation, RotationSetting};
    use crate::pcio::PointCloud;
    use crate::rng::SeededRng;
    use proptest::prelude::*;

    fn char_poly_at(m: &[[f64; 3]; 3], x: f64) -> f64 {
        // Independent evaluation straight from the determinant definition.
        let shifted = [
            [m[0][0] - x, m[0][1], m[0][2]],
            [m[1][0], m[1][1] - x, m[1][2]],
            [m[2][0], m[2][1], m[2][2] - x],
        ];
        det3(&shifted)
    }

    /// Root-finding oracle: bracket the spectrum with Gershgorin discs, scan
    /// for sign changes of the characteristic polynomial, bisect each.
    fn oracle_eigenvalues(m: &[[f64; 3]; 3]) -> Vec<f64> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..3 {
            let radius: f64 = (0..3).filter(|&j| j != i).map(|j| m[i][j].abs()).sum();
            lo = lo.min(m[i][i] - radius);
            hi = hi.max(m[i][i] + radius);
        }
        lo -= 1e-6;
        hi += 1e-6;
        let samples = 4096;
        let step = (hi - lo) / samples as f64;
        let mut roots = Vec::new();
        let mut prev_x = lo;
        let mut prev_f = char_poly_at(m, lo);
        for s in 1..=samples {
            let x = lo + step * s as f64;
            let f = char_poly_at(m, x);
            if prev_f == 0.0 {
                roots.push(prev_x);
            } else if prev_f * f < 0.0 {
                let (mut a, mut b) = (prev_x, x);
                let mut fa = prev_f;
                for _ in 0..150 {
                    let mid = 0.5 * (a + b);
                    let fm = char_poly_at(m, mid);
                    if fa * fm <= 0.0 {
                        b = mid;
                    } else {
                        a = mid;
                        fa = fm;
                    }
                }
                roots.push(0.5 * (a + b));
            }
            prev_x = x;
            prev_f = f;
        }
        roots
    }

    fn random_symmetric(rng: &mut SeededRng) -> [[f64; 3]; 3] {
        let a = rng.range(-1.0, 1.0);
        let b = rng.range(-1.0, 1.0);
        let c = rng.range(-1.0, 1.0);
        let d = rng.range(-1.0, 1.0);
        let e = rng.range(-1.0, 1.0);
        let f = rng.range(-1.0, 1.0);
        [[a, b, c], [b, d, e], [c, e, f]]
    }

    #[test]
    fn eigenvalues_match_root_finding_oracle() {
        let mut rng = SeededRng::new(0x5e1f);
        for _ in 0..1000 {
            let m = random_symmetric(&mut rng);
            let got = symmetric_eigenvalues(&m);
            let want = oracle_eigenvalues(&m);
            assert_eq!(want.len(), 3, "oracle lost a root for {m:?}");
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-9, "eig {g} vs oracle {w} for {m:?}");
            }
        }
    }

    #[test]
    fn smallest_eigenvector_satisfies_its_definition() {
        let mut rng = SeededRng::new(0xe15);
        for _ in 0..200 {
            let m = random_symmetric(&mut rng);
            let lambda = symmetric_eigenvalues(&m)[0];
            let v = smallest_eigenvector(&m);
            assert!((vec3::norm(v) - 1.0).abs() < 1e-9);
            for i in 0..3 {
                let mv = vec3::dot(m[i], v);
                assert!((mv - lambda * v[i]).abs() < 1e-8, "residual for {m:?}");
            }
            let first = v.iter().find(|c| **c != 0.0).unwrap();
            assert!(*first > 0.0);
        }
    }

    #[test]
    fn repeated_eigenvalue_picks_a_fixed_vector_in_the_eigenspace() {
        // diag(0, 0, 1): the smallest eigenvalue 0 has the whole xy-plane as
        // its eigenspace.
        let m = [[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        let v = smallest_eigenvector(&m);
        assert_eq!(v, [0.0, 1.0, 0.0]);
    }

    #[test]
    fn scalar_matrix_falls_back_to_z() {
        let m = [[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 2.0]];
        assert_eq!(smallest_eigenvector(&m), [0.0, 0.0, 1.0]);
        assert_eq!(smallest_eigenvector(&[[0.0; 3]; 3]), [0.0, 0.0, 1.0]);
    }

    #[test]
    fn planar_neighborhood_gives_the_plane_normal() {
        let mut rng = SeededRng::new(7);
        let pts: Vec<Vec3> = (0..20)
            .map(|_| [rng.range(-1.0, 1.0), rng.range(-1.0, 1.0), 0.0])
            .collect();
        let lra = compute_lra(&pts, [0.0, 0.0, 1.0]).unwrap();
        assert!(vec3::dist(lra.axis, [0.0, 0.0, 1.0]) < 1e-6, "axis {:?}", lra.axis);
        // The plane normal is the exact null direction of the covariance.
        let cov = covariance_about(&pts, mean_of(&pts));
        assert!(symmetric_eigenvalues(&cov)[0].abs() < 1e-12);
    }

    #[test]
    fn coincident_points_use_the_component_rule() {
        let pts = vec![[1.0, 2.0, 3.0]; 5];
        let lra = compute_lra(&pts, [1.0, 2.0, 3.0]).unwrap();
        assert_eq!(lra.axis, [0.0, 0.0, 1.0]);
        // A non-degenerate anchor still orients the fallback vector.
        assert_eq!(compute_lra(&pts, [1.0, 2.0, 9.0]).unwrap().axis, [0.0, 0.0, 1.0]);
        assert_eq!(compute_lra(&pts, [1.0, 2.0, -9.0]).unwrap().axis, [0.0, 0.0, -1.0]);
    }

    #[test]
    fn empty_neighborhood_is_rejected() {
        assert!(compute_lra(&[], [0.0; 3]).is_err());
    }

    #[test]
    fn anchor_chain_prefers_the_first_usable_anchor() {
        let mut rng = SeededRng::new(11);
        let pts: Vec<Vec3> = (0..12)
            .map(|_| [rng.range(-1.0, 1.0), rng.range(-1.0, 1.0), 0.0])
            .collect();
        let mean = mean_of(&pts);
        // First anchor lies in the plane, so its projection on the normal is
        // degenerate and the second anchor must decide the sign.
        let in_plane = [mean[0] + 0.3, mean[1] - 0.2, 0.0];
        let detail = compute_lra_detailed(&pts, &[in_plane, [0.0, 0.0, -2.0]]).unwrap();
        assert!(vec3::dist(detail.lra.axis, [0.0, 0.0, -1.0]) < 1e-6);
        assert!((detail.sign_margin - 2.0).abs() < 1e-9);
        assert!(detail.eigen_gap > 1e-3);
    }

    proptest! {
        #[test]
        fn lra_is_unit_and_sign_consistent(
            raw in prop::collection::vec(prop::array::uniform3(-10.0f64..10.0), 1..24),
            anchor in prop::array::uniform3(-10.0f64..10.0),
        ) {
            let detail = compute_lra_detailed(&raw, &[anchor]).unwrap();
            prop_assert!((vec3::norm(detail.lra.axis) - 1.0).abs() < 1e-9);
            if detail.sign_margin > 0.0 {
                let dot = vec3::dot(detail.lra.axis, vec3::sub(anchor, mean_of(&raw)));
                prop_assert!(dot >= 0.0);
            }
        }

        #[test]
        fn ordering_is_always_a_permutation(
            raw in prop::collection::vec(prop::array::uniform3(-10.0f64..10.0), 1..20),
            reference in prop::array::uniform3(-10.0f64..10.0),
            axis_raw in prop::array::uniform3(-1.0f64..1.0),
        ) {
            prop_assume!(vec3::norm(axis_raw) > 1e-3);
            let lra = Lra { axis: vec3::scale(axis_raw, 1.0 / vec3::norm(axis_raw)) };
            let mut perm = order_patch_points(&raw, reference, &lra);
            prop_assert_eq!(perm.len(), raw.len());
            perm.sort_unstable();
            prop_assert_eq!(perm, (0..raw.len()).collect::<Vec<_>>());
        }
    }

    #[test]
    fn ordering_starts_farthest_and_sweeps_clockwise() {
        // Four planar directions with the far point opposite x; viewed from
        // +z the sweep from it visits 90, 0, then 270 degrees.
        let pts = vec![
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [-2.0, 0.0, 0.0],
            [0.0, -1.0, 0.0],
        ];
        let lra = Lra { axis: [0.0, 0.0, 1.0] };
        let detail = order_patch_points_detailed(&pts, [0.0; 3], &lra);
        assert_eq!(detail.permutation, vec![2, 1, 0, 3]);
        assert!((detail.farthest_gap - 1.0).abs() < 1e-12);
        assert!((detail.min_angle_gap - PI / 2.0).abs() < 1e-12);
        assert!((detail.min_projection_norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_point_patch_orders_trivially() {
        let lra = Lra { axis: [0.0, 0.0, 1.0] };
        assert_eq!(order_patch_points(&[[3.0, 1.0, 2.0]], [0.0; 3], &lra), vec![0]);
    }

    #[test]
    fn axis_aligned_points_are_placed_last() {
        let pts = vec![[0.0, 0.0, 0.5], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let lra = Lra { axis: [0.0, 0.0, 1.0] };
        assert_eq!(order_patch_points(&pts, [0.0; 3], &lra), vec![1, 2, 0]);
    }

    #[test]
    fn reference_sitting_in_its_own_patch_is_degenerate_but_stable() {
        let pts = vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, -1.0, 0.0]];
        let lra = Lra { axis: [0.0, 0.0, 1.0] };
        let detail = order_patch_points_detailed(&pts, [0.0; 3], &lra);
        assert_eq!(detail.permutation, vec![1, 2, 0]);
        // The exactly-coincident point does not poison the stability margin.
        assert!((detail.min_projection_norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lra_rotates_with_the_neighborhood() {
        let mut rng = SeededRng::new(0xacc);
        let mut checked = 0;
        for trial in 0..100 {
            let n = 8 + (trial % 17);
            let pts: Vec<Vec3> = (0..n)
                .map(|_| [rng.range(-1.0, 1.0), rng.range(-1.0, 1.0), rng.range(-1.0, 1.0)])
                .collect();
            let anchor = [rng.range(-2.0, 2.0), rng.range(-2.0, 2.0), rng.range(-2.0, 2.0)];
            let detail = compute_lra_detailed(&pts, &[anchor]).unwrap();
            if detail.sign_margin <= 1e-6 {
                continue;
            }
            let r = sample_rotation(RotationSetting::R, 9000 + trial);
            let rotated: Vec<Vec3> = pts.iter().map(|p| r.apply(*p)).collect();
            let lra_rot = compute_lra(&rotated, r.apply(anchor)).unwrap();
            assert!(
                vec3::dist(lra_rot.axis, r.apply(detail.lra.axis)) < 1e-6,
                "trial {trial}"
            );
            checked += 1;
        }
        assert!(checked >= 90, "only {checked} trials had a usable sign margin");
    }

    #[test]
    fn ordering_permutation_is_rotation_invariant() {
        let mut rng = SeededRng::new(0x0d3);
        for trial in 0..100u64 {
            let k = 4 + (trial as usize % 13);
            let pts: Vec<Vec3> = (0..k)
                .map(|_| [rng.range(-1.0, 1.0), rng.range(-1.0, 1.0), rng.range(-1.0, 1.0)])
                .collect();
            let reference = [rng.range(-1.0, 1.0), rng.range(-1.0, 1.0), rng.range(-1.0, 1.0)];
            let axis_raw = [rng.normal(), rng.normal(), rng.normal()];
            let axis = vec3::scale(axis_raw, 1.0 / vec3::norm(axis_raw));
            let perm = order_patch_points(&pts, reference, &Lra { axis });
            let r = sample_rotation(RotationSetting::R, 7000 + trial);
            let rotated: Vec<Vec3> = pts.iter().map(|p| r.apply(*p)).collect();
            let perm_rot =
                order_patch_points(&rotated, r.apply(reference), &Lra { axis: r.apply(axis) });
            assert_eq!(perm, perm_rot, "trial {trial}");
        }
    }

    #[test]
    fn joint_axis_and_ordering_survive_rotation_when_margins_are_healthy() {
        let mut checked = 0;
        for trial in 0..60u64 {
            let cloud = crate::pcio::generate_synthetic(
                crate::pcio::Shape::ALL[(trial % 4) as usize],
                128,
                trial,
            )
            .unwrap();
            let cloud = {
                let mut c = cloud;
                crate::pcio::normalize_unit_sphere(&mut c);
                c
            };
            let members = crate::geom::knn(&cloud.points, (trial as usize * 7) % 128, 12).unwrap();
            let patch: Vec<Vec3> = members.iter().map(|&i| cloud.points[i]).collect();
            let reference = patch[0];
            let centroid = mean_of(&cloud.points);
            let detail = compute_lra_detailed(&patch, &[reference, centroid]).unwrap();
            let order = order_patch_points_detailed(&patch, reference, &detail.lra);
            let healthy = detail.sign_margin > 1e-6
                && detail.eigen_gap > 1e-6
                && order.farthest_gap > 1e-6
                && order.min_angle_gap > 1e-6
                && order.min_projection_norm > 1e-6;
            if !healthy {
                continue;
            }
            let rot = sample_rotation(RotationSetting::R, 31_000 + trial);
            let rcloud = apply_rotation(
                &PointCloud { points: cloud.points.clone(), label: None, part_labels: None },
                &rot,
            );
            let rpatch: Vec<Vec3> = members.iter().map(|&i| rcloud.points[i]).collect();
            let rdetail =
                compute_lra_detailed(&rpatch, &[rpatch[0], mean_of(&rcloud.points)]).unwrap();
            let rorder = order_patch_points(&rpatch, rpatch[0], &rdetail.lra);
            assert_eq!(order.permutation, rorder, "trial {trial}");
            checked += 1;
        }
        assert!(checked >= 40, "only {checked} patches had healthy margins");
    }
}
