//! Handcrafted rotation-invariant features.
//!
//! Two families are produced per patch: an 8-column per-point matrix built
//! from distances and angles between points and their local reference axes,
//! and a 5-value per-patch summary built from the reference point, the patch
//! mean, and the enclosing-ball boundary. Every quantity is a distance or an
//! angle between rotation-covariant vectors, so the outputs are unchanged by
//! a proper rotation of the cloud; the signed columns flip under reflection,
//! which is deliberate.

use crate::geom::{knn, PatchSet};
use crate::lra::{self, order_patch_points_detailed, Lra};
use crate::pcio::PointCloud;
use crate::vec3::{self, Vec3, DEGENERATE_EPS};
use thiserror::Error;

pub const RILF_DIM: usize = 8;
pub const RIGF_DIM: usize = 5;

#[derive(Debug, Error)]
pub enum RihfError {
    #[error("patch set indexes points outside the cloud")]
    PatchCloudMismatch,
    #[error(transparent)]
    Lra(#[from] lra::LraError),
}

/// Per-point features of one patch, one row per point in sweep order.
///
/// Columns: distance to the reference, then the angles (alpha0, alpha1,
/// alpha2, phi, beta0, beta1, beta2). alpha2 and beta2 are signed in
/// (-pi, pi]; the other angles live in [0, pi].
#[derive(Debug, Clone, PartialEq)]
pub struct RilfMatrix {
    pub values: Vec<[f64; RILF_DIM]>,
}

/// Per-patch summary: (d_p, d_pm, d_sm, alpha, beta) where d_p is the
/// reference's distance to the origin, m is the patch mean, and s is where
/// the ray through the reference exits the patch's enclosing ball.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigfVector {
    pub values: [f64; RIGF_DIM],
}

/// How far a patch sits from every tie-break and degeneracy threshold in the
/// feature pipeline. A small minimum means a perturbation of the coordinates
/// could change a discrete decision and with it the features.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchMargins {
    pub sign_margin: f64,
    pub eigen_gap: f64,
    pub farthest_gap: f64,
    pub min_angle_gap: f64,
    pub min_projection_norm: f64,
    pub min_triple_margin: f64,
}

impl PatchMargins {
    pub fn min(&self) -> f64 {
        self.sign_margin
            .min(self.eigen_gap)
            .min(self.farthest_gap)
            .min(self.min_angle_gap)
            .min(self.min_projection_norm)
            .min(self.min_triple_margin)
    }
}

/// All features of one cloud, patch order matching the patch set.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub rilf: Vec<RilfMatrix>,
    pub rigf: Vec<RigfVector>,
    pub margins: Vec<PatchMargins>,
}

/// Sign factor for a signed angle between `a` and `b`, taken from the triple
/// product with `direction`; +1 when the triple product is degenerate.
///
/// The second value is the stability margin of the factor: a sign flip
/// requires the triple product to cross the lower degeneracy threshold, so
/// non-negative products can never flip and report infinity.
fn directional_sign(a: Vec3, b: Vec3, direction: Vec3) -> (f64, f64) {
    let t = vec3::dot(vec3::cross(a, b), direction);
    let s = if t.abs() < DEGENERATE_EPS { 1.0 } else { t.signum() };
    let margin = if t >= 0.0 { f64::INFINITY } else { (t + DEGENERATE_EPS).abs() };
    (s, margin)
}

/// A flipped sign factor only matters when the signed angle it scales is
/// large enough to move a feature past the invariance tolerance.
fn guarded_triple_margin(angle: f64, margin: f64) -> f64 {
    if angle <= 4e-7 {
        f64::INFINITY
    } else {
        margin
    }
}

fn compute_rilf_with_margin(
    patch_points: &[Vec3],
    reference: Vec3,
    reference_lra: &Lra,
    point_lras: &[Lra],
    ordering: &[usize],
) -> (RilfMatrix, f64) {
    let k = patch_points.len();
    debug_assert_eq!(point_lras.len(), k);
    debug_assert_eq!(ordering.len(), k);
    let mut values = Vec::with_capacity(k);
    let mut min_triple = f64::INFINITY;
    for r in 0..k {
        let i = ordering[r];
        let j = ordering[(r + 1) % k];
        let xi = patch_points[i];
        let xj = patch_points[j];
        let li = point_lras[i].axis;
        let lj = point_lras[j].axis;
        let lp = reference_lra.axis;
        let to_ref = vec3::sub(reference, xi);
        let succ_to_ref = vec3::sub(reference, xj);
        let to_succ = vec3::sub(xj, xi);

        let d = vec3::norm(to_ref);
        let alpha0 = vec3::angle(li, to_ref);
        let alpha1 = vec3::angle(lp, to_ref);
        let alpha2_abs = vec3::angle(li, lp);
        let (sa, sa_margin) = directional_sign(li, lp, to_ref);
        let phi = vec3::angle(succ_to_ref, to_ref);
        let beta0 = vec3::angle(li, to_succ);
        let beta1 = vec3::angle(lj, to_succ);
        let beta2_abs = vec3::angle(li, lj);
        let (sb, sb_margin) = directional_sign(li, lj, to_succ);

        min_triple = min_triple
            .min(guarded_triple_margin(alpha2_abs, sa_margin))
            .min(guarded_triple_margin(beta2_abs, sb_margin));
        values.push([
            d,
            alpha0,
            alpha1,
            sa * alpha2_abs,
            phi,
            beta0,
            beta1,
            sb * beta2_abs,
        ]);
    }
    (RilfMatrix { values }, min_triple)
}

/// Per-point features of one patch, rows following `ordering`; the successor
/// of the last ordered point wraps around to the first.
pub fn compute_rilf(
    patch_points: &[Vec3],
    reference: Vec3,
    reference_lra: &Lra,
    point_lras: &[Lra],
    ordering: &[usize],
) -> RilfMatrix {
    compute_rilf_with_margin(patch_points, reference, reference_lra, point_lras, ordering).0
}

/// Per-patch summary features relative to the reference point.
pub fn compute_rigf(patch_points: &[Vec3], reference: Vec3) -> RigfVector {
    if patch_points.is_empty() {
        return RigfVector { values: [0.0; RIGF_DIM] };
    }
    let r = patch_points
        .iter()
        .map(|x| vec3::dist(*x, reference))
        .fold(0.0, f64::max);
    let m = lra::mean_of(patch_points);
    let d_p = vec3::norm(reference);
    let s = if d_p < DEGENERATE_EPS {
        vec3::add(reference, [0.0, 0.0, r])
    } else {
        vec3::scale(reference, (d_p + r) / d_p)
    };
    let d_pm = vec3::dist(reference, m);
    let d_sm = vec3::dist(s, m);
    let alpha = vec3::angle(vec3::sub(m, reference), vec3::sub(m, s));
    let beta = vec3::angle(vec3::sub(s, reference), vec3::sub(s, m));
    RigfVector { values: [d_p, d_pm, d_sm, alpha, beta] }
}

/// All features of a cloud under a patch decomposition.
///
/// Each point's axis comes from its own k-nearest neighborhood (k = patch
/// size); the sign is re-anchored per patch toward the patch reference, with
/// the cloud centroid as fallback when the reference offset is degenerate,
/// so flat neighborhoods still get a pose-covariant orientation.
pub fn extract_features(cloud: &PointCloud, patches: &PatchSet) -> Result<FeatureSet, RihfError> {
    if !patches.is_valid_for(cloud) {
        return Err(RihfError::PatchCloudMismatch);
    }
    let n_patches = patches.n_patches();
    let mut out = FeatureSet {
        rilf: Vec::with_capacity(n_patches),
        rigf: Vec::with_capacity(n_patches),
        margins: Vec::with_capacity(n_patches),
    };
    if n_patches == 0 {
        return Ok(out);
    }
    let n = cloud.len();
    let k_lra = patches.points_per_patch().clamp(1, n);
    let centroid = lra::mean_of(&cloud.points);
    let mut cache: Vec<Option<lra::CanonicalAxis>> = vec![None; n];
    let axis_of = |cache: &mut Vec<Option<lra::CanonicalAxis>>, idx: usize| {
        if cache[idx].is_none() {
            let members = knn(&cloud.points, idx, k_lra).expect("validated patch geometry");
            let pts: Vec<Vec3> = members.iter().map(|&i| cloud.points[i]).collect();
            cache[idx] = Some(lra::canonical_axis_of(&pts));
        }
        cache[idx].unwrap()
    };

    for (patch_idx, &center) in patches.center_indices.iter().enumerate() {
        let reference = cloud.points[center];
        let anchors = [reference, centroid];
        let patch_points: Vec<Vec3> = patches.member_indices[patch_idx]
            .iter()
            .map(|&i| cloud.points[i])
            .collect();

        let mut sign_margin = f64::INFINITY;
        let mut eigen_gap = f64::INFINITY;
        let ref_cached = axis_of(&mut cache, center);
        let (ref_axis, ref_margin) = lra::apply_sign_chain(ref_cached.axis, ref_cached.mean, &anchors);
        sign_margin = sign_margin.min(ref_margin);
        eigen_gap = eigen_gap.min(ref_cached.eigen_gap);
        let reference_lra = Lra { axis: ref_axis };

        let point_lras: Vec<Lra> = patches.member_indices[patch_idx]
            .iter()
            .map(|&i| {
                let cached = axis_of(&mut cache, i);
                let (axis, margin) = lra::apply_sign_chain(cached.axis, cached.mean, &anchors);
                sign_margin = sign_margin.min(margin);
                eigen_gap = eigen_gap.min(cached.eigen_gap);
                Lra { axis }
            })
            .collect();

        let ordering = order_patch_points_detailed(&patch_points, reference, &reference_lra);
        let (rilf, min_triple) = compute_rilf_with_margin(
            &patch_points,
            reference,
            &reference_lra,
            &point_lras,
            &ordering.permutation,
        );
        out.rilf.push(rilf);
        out.rigf.push(compute_rigf(&patch_points, reference));
        out.margins.push(PatchMargins {
            sign_margin,
            eigen_gap,
            farthest_gap: ordering.farthest_gap,
            min_angle_gap: ordering.min_angle_gap,
            min_projection_norm: ordering.min_projection_norm,
            min_triple_margin: min_triple,
        });
    }
    Ok(out)
}
