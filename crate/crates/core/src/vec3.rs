//! Minimal 3-vector helpers over [f64; 3].

pub type Vec3 = [f64; 3];

/// Vectors shorter than this are treated as directionless when defining
/// angles and signs.
pub const DEGENERATE_EPS: f64 = 1e-12;

pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn neg(a: Vec3) -> Vec3 {
    [-a[0], -a[1], -a[2]]
}

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm_sq(a: Vec3) -> f64 {
    dot(a, a)
}

pub fn norm(a: Vec3) -> f64 {
    norm_sq(a).sqrt()
}

pub fn dist_sq(a: Vec3, b: Vec3) -> f64 {
    norm_sq(sub(a, b))
}

pub fn dist(a: Vec3, b: Vec3) -> f64 {
    dist_sq(a, b).sqrt()
}

/// Unit vector along a, or None when a is degenerate.
pub fn unit(a: Vec3) -> Option<Vec3> {
    let n = norm(a);
    if n < DEGENERATE_EPS {
        None
    } else {
        Some(scale(a, 1.0 / n))
    }
}

/// Unsigned angle between a and b in [0, pi], computed as
/// atan2(|a x b|, a . b). Returns 0 when either vector is degenerate.
pub fn angle(a: Vec3, b: Vec3) -> f64 {
    if norm(a) < DEGENERATE_EPS || norm(b) < DEGENERATE_EPS {
        return 0.0;
    }
    norm(cross(a, b)).atan2(dot(a, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn angle_right_and_opposite() {
        assert!((angle([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]) - FRAC_PI_2).abs() < 1e-15);
        assert!((angle([1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]) - PI).abs() < 1e-15);
        assert_eq!(angle([1.0, 0.0, 0.0], [2.0, 0.0, 0.0]), 0.0);
    }

    #[test]
    fn angle_degenerate_is_zero() {
        assert_eq!(angle([0.0; 3], [1.0, 0.0, 0.0]), 0.0);
        assert_eq!(angle([1e-13, 0.0, 0.0], [1.0, 0.0, 0.0]), 0.0);
    }

    #[test]
    fn cross_follows_right_hand_rule() {
        assert_eq!(cross([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]), [0.0, 0.0, 1.0]);
    }

    #[test]
    fn unit_rejects_tiny_vectors() {
        assert!(unit([1e-13, 0.0, 0.0]).is_none());
        let u = unit([3.0, 0.0, 4.0]).unwrap();
        assert!((norm(u) - 1.0).abs() < 1e-15);
    }
}
