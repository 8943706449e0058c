//! Small planar geometry toolkit shared by the simulator: vectors in the
//! x–z plane (x along the plate, z up), rotations, segments, and convex
//! polygon helpers. Nothing here allocates in inner loops except the
//! polygon constructors.

use serde::{Deserialize, Serialize};
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

/// A point or direction in the vertical x–z working plane.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub z: f64,
}

pub const fn vec2(x: f64, z: f64) -> Vec2 {
    Vec2 { x, z }
}

impl Vec2 {
    pub const ZERO: Vec2 = vec2(0.0, 0.0);

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.z * o.z
    }

    /// 2D cross product (scalar): `self.x * o.z - self.z * o.x`.
    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.z - self.z * o.x
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Vec2 {
        let n = self.norm();
        if n > 0.0 {
            vec2(self.x / n, self.z / n)
        } else {
            Vec2::ZERO
        }
    }

    /// Counterclockwise perpendicular.
    pub fn perp(self) -> Vec2 {
        vec2(-self.z, self.x)
    }

    pub fn rotated(self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        vec2(c * self.x - s * self.z, s * self.x + c * self.z)
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        vec2(self.x + o.x, self.z + o.z)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.z += o.z;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        vec2(self.x - o.x, self.z - o.z)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        vec2(self.x * s, self.z * s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        vec2(-self.x, -self.z)
    }
}

/// Rigid planar pose: translation plus rotation angle (radians, CCW).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec2,
    pub angle: f64,
}

impl Pose {
    pub fn new(position: Vec2, angle: f64) -> Pose {
        Pose { position, angle }
    }

    /// Local point to world.
    pub fn transform(&self, local: Vec2) -> Vec2 {
        self.position + local.rotated(self.angle)
    }

    /// World point to local.
    pub fn inverse_transform(&self, world: Vec2) -> Vec2 {
        (world - self.position).rotated(-self.angle)
    }
}

/// Closest point on segment `[a, b]` to `p`.
pub fn closest_point_on_segment(a: Vec2, b: Vec2, p: Vec2) -> Vec2 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 <= 0.0 {
        return a;
    }
    let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    a + ab * t
}

/// Strict point-in-polygon test for a counterclockwise convex polygon.
/// Points exactly on the boundary count as inside.
pub fn point_in_convex_polygon(verts: &[Vec2], p: Vec2) -> bool {
    let n = verts.len();
    for i in 0..n {
        let a = verts[i];
        let b = verts[(i + 1) % n];
        if (b - a).cross(p - a) < -1e-12 {
            return false;
        }
    }
    true
}

/// Is the counterclockwise-ordered vertex list strictly convex?
/// Requires at least three vertices and positive cross products at every
/// corner (collinear runs are rejected as degenerate).
pub fn is_ccw_convex(verts: &[Vec2]) -> bool {
    let n = verts.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        let a = verts[i];
        let b = verts[(i + 1) % n];
        let c = verts[(i + 2) % n];
        if (b - a).cross(c - b) <= 0.0 {
            return false;
        }
    }
    true
}

/// Area centroid of a simple polygon.
pub fn polygon_centroid(verts: &[Vec2]) -> Vec2 {
    let mut area2 = 0.0;
    let mut cx = 0.0;
    let mut cz = 0.0;
    let n = verts.len();
    for i in 0..n {
        let a = verts[i];
        let b = verts[(i + 1) % n];
        let w = a.cross(b);
        area2 += w;
        cx += (a.x + b.x) * w;
        cz += (a.z + b.z) * w;
    }
    let area = area2 / 2.0;
    if area.abs() < 1e-18 {
        return verts[0];
    }
    vec2(cx / (6.0 * area), cz / (6.0 * area))
}

/// Area of a simple polygon (positive when counterclockwise).
pub fn polygon_area(verts: &[Vec2]) -> f64 {
    let n = verts.len();
    let mut area2 = 0.0;
    for i in 0..n {
        area2 += verts[i].cross(verts[(i + 1) % n]);
    }
    area2 / 2.0
}

/// Second moment of area about the centroid, for a unit-density polygon.
/// Multiply by `mass / area` to get the moment of inertia.
pub fn polygon_unit_inertia(verts: &[Vec2]) -> f64 {
    // Standard decomposition into triangles against the centroid.
    let c = polygon_centroid(verts);
    let n = verts.len();
    let mut acc = 0.0;
    let mut area = 0.0;
    for i in 0..n {
        let a = verts[i] - c;
        let b = verts[(i + 1) % n] - c;
        let cross = a.cross(b);
        acc += cross * (a.dot(a) + a.dot(b) + b.dot(b)) / 12.0;
        area += cross / 2.0;
    }
    if area.abs() < 1e-18 {
        return 0.0;
    }
    acc / area
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotation_and_transform_roundtrip() {
        let pose = Pose::new(vec2(0.3, -0.1), 0.7);
        let p = vec2(0.02, 0.05);
        let back = pose.inverse_transform(pose.transform(p));
        assert!((back - p).norm() < 1e-12);
    }

    #[test]
    fn convexity_checks() {
        let square = [
            vec2(0.0, 0.0),
            vec2(1.0, 0.0),
            vec2(1.0, 1.0),
            vec2(0.0, 1.0),
        ];
        assert!(is_ccw_convex(&square));
        let cw: Vec<Vec2> = square.iter().rev().copied().collect();
        assert!(!is_ccw_convex(&cw));
        let dart = [
            vec2(0.0, 0.0),
            vec2(2.0, 0.0),
            vec2(1.0, 0.5),
            vec2(1.0, 2.0),
        ];
        assert!(!is_ccw_convex(&dart));
    }

    #[test]
    fn centroid_and_inertia_of_square_match_closed_form() {
        let half = 0.015;
        let square = [
            vec2(-half, -half),
            vec2(half, -half),
            vec2(half, half),
            vec2(-half, half),
        ];
        let c = polygon_centroid(&square);
        assert!(c.norm() < 1e-15);
        // Unit inertia of a w x h rectangle is (w^2 + h^2) / 12.
        let expected = (4.0 * half * half + 4.0 * half * half) / 12.0;
        assert!((polygon_unit_inertia(&square) - expected).abs() < 1e-12);
    }

    #[test]
    fn segment_closest_point_clamps_to_ends() {
        let a = vec2(0.0, 0.0);
        let b = vec2(1.0, 0.0);
        assert_eq!(closest_point_on_segment(a, b, vec2(-1.0, 1.0)), a);
        assert_eq!(closest_point_on_segment(a, b, vec2(2.0, 1.0)), b);
        let mid = closest_point_on_segment(a, b, vec2(0.25, 3.0));
        assert!((mid - vec2(0.25, 0.0)).norm() < 1e-12);
    }
}
