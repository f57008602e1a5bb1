//! Planar points and rigid transforms.

use serde::{Deserialize, Serialize};

/// `(x, y)` in meters.
pub type Point = [f64; 2];

#[inline]
pub fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub fn add(a: Point, b: Point) -> Point {
    [a[0] + b[0], a[1] + b[1]]
}

#[inline]
pub fn scale(a: Point, s: f64) -> Point {
    [a[0] * s, a[1] * s]
}

#[inline]
pub fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub fn norm(a: Point) -> f64 {
    a[0].hypot(a[1])
}

#[inline]
pub fn dist(a: Point, b: Point) -> f64 {
    norm(sub(a, b))
}

pub fn lerp(a: Point, b: Point, t: f64) -> Point {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t]
}

/// Cumulative arc length of a polyline, starting at 0.
pub fn cumulative_length(points: &[Point]) -> Vec<f64> {
    let mut out = Vec::with_capacity(points.len());
    let mut acc = 0.0;
    for (i, p) in points.iter().enumerate() {
        if i > 0 {
            acc += dist(points[i - 1], *p);
        }
        out.push(acc);
    }
    out
}

/// Rigid transform `p -> R (p - origin)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: [[f64; 2]; 2],
    pub origin: Point,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self { rotation: [[1.0, 0.0], [0.0, 1.0]], origin: [0.0, 0.0] }
    }

    /// Rotation by `angle` radians (counter-clockwise) after moving `origin` to zero.
    pub fn from_angle(angle: f64, origin: Point) -> Self {
        let (s, c) = angle.sin_cos();
        Self { rotation: [[c, -s], [s, c]], origin }
    }

    #[inline]
    pub fn rotate(&self, v: Point) -> Point {
        let r = &self.rotation;
        [r[0][0] * v[0] + r[0][1] * v[1], r[1][0] * v[0] + r[1][1] * v[1]]
    }

    #[inline]
    pub fn apply(&self, p: Point) -> Point {
        self.rotate(sub(p, self.origin))
    }

    /// Maps a point from the transformed frame back to the source frame.
    pub fn invert(&self, q: Point) -> Point {
        let r = &self.rotation;
        let v = [r[0][0] * q[0] + r[1][0] * q[1], r[0][1] * q[0] + r[1][1] * q[1]];
        add(v, self.origin)
    }

    pub fn determinant(&self) -> f64 {
        let r = &self.rotation;
        r[0][0] * r[1][1] - r[0][1] * r[1][0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transform_round_trip() {
        let t = RigidTransform::from_angle(0.7, [3.0, -2.0]);
        let p = [1.5, 4.25];
        let q = t.invert(t.apply(p));
        assert!(dist(p, q) < 1e-12);
        assert!((t.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cumulative_length_of_unit_steps() {
        let pts: Vec<Point> = (0..4).map(|i| [0.0, i as f64]).collect();
        assert_eq!(cumulative_length(&pts), vec![0.0, 1.0, 2.0, 3.0]);
    }
}
