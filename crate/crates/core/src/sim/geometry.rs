//! Planar poses and the convex primitives used for collision checking.

use std::f64::consts::{PI, TAU};

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

pub type Vec2 = Vector2<f64>;

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let mut a = (theta + PI).rem_euclid(TAU) - PI;
    if a <= -PI {
        a += TAU;
    }
    a
}

/// A rigid transform in the plane. `theta` is always kept in `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanarPose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Default for PlanarPose {
    fn default() -> Self {
        Self::identity()
    }
}

impl PlanarPose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn identity() -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            theta: 0.0,
        }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    /// `self * other`: express `other` (given in this frame) in the parent frame.
    pub fn compose(&self, other: &PlanarPose) -> PlanarPose {
        let p = self.transform_point(&other.position());
        PlanarPose::new(p.x, p.y, self.theta + other.theta)
    }

    pub fn inverse(&self) -> PlanarPose {
        let (s, c) = self.theta.sin_cos();
        PlanarPose::new(
            -(c * self.x + s * self.y),
            s * self.x - c * self.y,
            -self.theta,
        )
    }

    /// `self^-1 * other`: pose of `other` as seen from this frame.
    pub fn relative(&self, other: &PlanarPose) -> PlanarPose {
        self.inverse().compose(other)
    }

    pub fn transform_point(&self, p: &Vec2) -> Vec2 {
        let (s, c) = self.theta.sin_cos();
        Vec2::new(c * p.x - s * p.y + self.x, s * p.x + c * p.y + self.y)
    }

    pub fn rotate_vector(&self, v: &Vec2) -> Vec2 {
        let (s, c) = self.theta.sin_cos();
        Vec2::new(c * v.x - s * v.y, s * v.x + c * v.y)
    }

    pub fn inverse_rotate_vector(&self, v: &Vec2) -> Vec2 {
        let (s, c) = self.theta.sin_cos();
        Vec2::new(c * v.x + s * v.y, -s * v.x + c * v.y)
    }

    /// Planar distance and absolute heading difference between two poses.
    pub fn distance_to(&self, other: &PlanarPose) -> (f64, f64) {
        (
            (self.position() - other.position()).norm(),
            wrap_angle(self.theta - other.theta).abs(),
        )
    }
}

/// Geometric core of a swept shape: every primitive is a core inflated by a radius.
#[derive(Debug, Clone, PartialEq)]
pub enum Core {
    Point(Vec2),
    Segment(Vec2, Vec2),
    /// Convex polygon, counter-clockwise.
    Polygon(Vec<Vec2>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Shape {
    pub core: Core,
    pub radius: f64,
}

impl Shape {
    pub fn circle(center: Vec2, radius: f64) -> Self {
        Self {
            core: Core::Point(center),
            radius,
        }
    }

    pub fn capsule(a: Vec2, b: Vec2, radius: f64) -> Self {
        Self {
            core: Core::Segment(a, b),
            radius,
        }
    }

    /// Oriented rectangle centered on `pose` with the given half extents.
    pub fn oriented_box(pose: &PlanarPose, half_x: f64, half_y: f64) -> Self {
        let corners = [
            Vec2::new(-half_x, -half_y),
            Vec2::new(half_x, -half_y),
            Vec2::new(half_x, half_y),
            Vec2::new(-half_x, half_y),
        ]
        .iter()
        .map(|c| pose.transform_point(c))
        .collect();
        Self {
            core: Core::Polygon(corners),
            radius: 0.0,
        }
    }

    pub fn aabb(min: Vec2, max: Vec2) -> Self {
        Self {
            core: Core::Polygon(vec![
                min,
                Vec2::new(max.x, min.y),
                max,
                Vec2::new(min.x, max.y),
            ]),
            radius: 0.0,
        }
    }

    /// Separation between the two shapes' boundaries; zero or negative means contact.
    pub fn clearance(&self, other: &Shape) -> f64 {
        core_distance(&self.core, &other.core) - self.radius - other.radius
    }

    pub fn intersects(&self, other: &Shape) -> bool {
        self.clearance(other) <= 0.0
    }

    pub fn contains_point(&self, p: &Vec2) -> bool {
        core_distance(&self.core, &Core::Point(*p)) < self.radius
            || (self.radius == 0.0 && matches!(&self.core, Core::Polygon(poly) if point_in_convex(poly, p)))
    }
}

fn cross(a: &Vec2, b: &Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

pub fn point_segment_distance(p: &Vec2, a: &Vec2, b: &Vec2) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

fn segments_intersect(a: &Vec2, b: &Vec2, c: &Vec2, d: &Vec2) -> bool {
    let d1 = cross(&(b - a), &(c - a));
    let d2 = cross(&(b - a), &(d - a));
    let d3 = cross(&(d - c), &(a - c));
    let d4 = cross(&(d - c), &(b - c));
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

pub fn segment_segment_distance(a: &Vec2, b: &Vec2, c: &Vec2, d: &Vec2) -> f64 {
    if segments_intersect(a, b, c, d) {
        return 0.0;
    }
    point_segment_distance(a, c, d)
        .min(point_segment_distance(b, c, d))
        .min(point_segment_distance(c, a, b))
        .min(point_segment_distance(d, a, b))
}

/// Point in (or on) a counter-clockwise convex polygon.
pub fn point_in_convex(poly: &[Vec2], p: &Vec2) -> bool {
    let n = poly.len();
    (0..n).all(|i| cross(&(poly[(i + 1) % n] - poly[i]), &(p - poly[i])) >= 0.0)
}

fn polygon_edges(poly: &[Vec2]) -> impl Iterator<Item = (&Vec2, &Vec2)> {
    let n = poly.len();
    (0..n).map(move |i| (&poly[i], &poly[(i + 1) % n]))
}

fn point_polygon_distance(p: &Vec2, poly: &[Vec2]) -> f64 {
    if point_in_convex(poly, p) {
        return 0.0;
    }
    polygon_edges(poly)
        .map(|(a, b)| point_segment_distance(p, a, b))
        .fold(f64::INFINITY, f64::min)
}

fn segment_polygon_distance(a: &Vec2, b: &Vec2, poly: &[Vec2]) -> f64 {
    if point_in_convex(poly, a) || point_in_convex(poly, b) {
        return 0.0;
    }
    polygon_edges(poly)
        .map(|(c, d)| segment_segment_distance(a, b, c, d))
        .fold(f64::INFINITY, f64::min)
}

fn polygon_polygon_distance(p: &[Vec2], q: &[Vec2]) -> f64 {
    if p.iter().any(|v| point_in_convex(q, v)) || q.iter().any(|v| point_in_convex(p, v)) {
        return 0.0;
    }
    polygon_edges(p)
        .map(|(a, b)| segment_polygon_distance(a, b, q))
        .fold(f64::INFINITY, f64::min)
}

pub fn core_distance(a: &Core, b: &Core) -> f64 {
    use Core::*;
    match (a, b) {
        (Point(p), Point(q)) => (p - q).norm(),
        (Point(p), Segment(c, d)) | (Segment(c, d), Point(p)) => point_segment_distance(p, c, d),
        (Point(p), Polygon(poly)) | (Polygon(poly), Point(p)) => point_polygon_distance(p, poly),
        (Segment(a, b), Segment(c, d)) => segment_segment_distance(a, b, c, d),
        (Segment(a, b), Polygon(poly)) | (Polygon(poly), Segment(a, b)) => {
            segment_polygon_distance(a, b, poly)
        }
        (Polygon(p), Polygon(q)) => polygon_polygon_distance(p, q),
    }
}
