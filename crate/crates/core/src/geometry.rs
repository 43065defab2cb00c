//! Planar vectors, segments and polygon predicates.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

use crate::scalar::{lit, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2<T> {
    pub x: T,
    pub y: T,
}

impl<T: Scalar> Vec2<T> {
    #[inline]
    pub const fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero())
    }

    pub fn from_f64(x: f64, y: f64) -> Self {
        Self::new(lit(x), lit(y))
    }

    #[inline]
    pub fn dot(self, other: Self) -> T {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 3-D cross product.
    #[inline]
    pub fn cross(self, other: Self) -> T {
        self.x * other.y - self.y * other.x
    }

    #[inline]
    pub fn norm_sq(self) -> T {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> T {
        self.x.hypot(self.y)
    }

    #[inline]
    pub fn distance(self, other: Self) -> T {
        (self - other).norm()
    }

    /// Unit vector, or `None` for the zero vector.
    pub fn normalized(self) -> Option<Self> {
        let n = self.norm();
        if n > T::zero() && n.is_finite() {
            Some(self / n)
        } else {
            None
        }
    }

    /// Rotates counter-clockwise by `deg` degrees.
    pub fn rotated_deg(self, deg: T) -> Self {
        let (s, c) = deg.to_radians().sin_cos();
        Self::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    /// Left-hand perpendicular.
    #[inline]
    pub fn perp(self) -> Self {
        Self::new(-self.y, self.x)
    }

    pub fn lerp(self, other: Self, t: T) -> Self {
        self + (other - self) * t
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn cast<U: Scalar>(self) -> Vec2<U> {
        Vec2::new(
            U::from(self.x).unwrap_or_else(U::nan),
            U::from(self.y).unwrap_or_else(U::nan),
        )
    }
}

impl<T: Scalar> Add for Vec2<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y)
    }
}

impl<T: Scalar> AddAssign for Vec2<T> {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<T: Scalar> Sub for Vec2<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y)
    }
}

impl<T: Scalar> SubAssign for Vec2<T> {
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

impl<T: Scalar> Mul<T> for Vec2<T> {
    type Output = Self;
    fn mul(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s)
    }
}

impl<T: Scalar> Div<T> for Vec2<T> {
    type Output = Self;
    fn div(self, s: T) -> Self {
        Self::new(self.x / s, self.y / s)
    }
}

impl<T: Scalar> Neg for Vec2<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y)
    }
}

/// Normalizes an angle in degrees into `[0, 360)`.
pub fn wrap_deg<T: Scalar>(deg: T) -> T {
    let full = lit::<T>(360.0);
    let mut a = deg % full;
    if a < T::zero() {
        a = a + full;
    }
    if a >= full {
        a = a - full;
    }
    a
}

/// Counter-clockwise angle from `from` to `to`, in degrees within `[0, 360)`.
pub fn directed_angle_deg<T: Scalar>(from: Vec2<T>, to: Vec2<T>) -> T {
    wrap_deg(from.cross(to).atan2(from.dot(to)).to_degrees())
}

/// Unsigned angle between two vectors in degrees, within `[0, 180]`.
pub fn angle_between_deg<T: Scalar>(a: Vec2<T>, b: Vec2<T>) -> T {
    a.cross(b).abs().atan2(a.dot(b)).to_degrees()
}

/// Closest point to `p` on segment `[a, b]`.
pub fn closest_point_on_segment<T: Scalar>(p: Vec2<T>, a: Vec2<T>, b: Vec2<T>) -> Vec2<T> {
    let ab = b - a;
    let len_sq = ab.norm_sq();
    if len_sq == T::zero() {
        return a;
    }
    let t = ((p - a).dot(ab) / len_sq).max(T::zero()).min(T::one());
    a + ab * t
}

pub fn point_segment_distance<T: Scalar>(p: Vec2<T>, a: Vec2<T>, b: Vec2<T>) -> T {
    p.distance(closest_point_on_segment(p, a, b))
}

fn orient<T: Scalar>(a: Vec2<T>, b: Vec2<T>, c: Vec2<T>) -> T {
    (b - a).cross(c - a)
}

/// True when the segments cross at a single point interior to both.
pub fn segments_properly_intersect<T: Scalar>(
    p1: Vec2<T>,
    p2: Vec2<T>,
    q1: Vec2<T>,
    q2: Vec2<T>,
) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    let z = T::zero();
    ((d1 > z && d2 < z) || (d1 < z && d2 > z)) && ((d3 > z && d4 < z) || (d3 < z && d4 > z))
}

/// True when the closed segments share at least one point.
pub fn segments_intersect<T: Scalar>(p1: Vec2<T>, p2: Vec2<T>, q1: Vec2<T>, q2: Vec2<T>) -> bool {
    if segments_properly_intersect(p1, p2, q1, q2) {
        return true;
    }
    let on = |a: Vec2<T>, b: Vec2<T>, c: Vec2<T>| {
        orient(a, b, c) == T::zero()
            && c.x >= a.x.min(b.x)
            && c.x <= a.x.max(b.x)
            && c.y >= a.y.min(b.y)
            && c.y <= a.y.max(b.y)
    };
    on(q1, q2, p1) || on(q1, q2, p2) || on(p1, p2, q1) || on(p1, p2, q2)
}

/// Minimum distance between two closed segments.
pub fn segment_segment_distance<T: Scalar>(
    p1: Vec2<T>,
    p2: Vec2<T>,
    q1: Vec2<T>,
    q2: Vec2<T>,
) -> T {
    if segments_intersect(p1, p2, q1, q2) {
        return T::zero();
    }
    point_segment_distance(p1, q1, q2)
        .min(point_segment_distance(p2, q1, q2))
        .min(point_segment_distance(q1, p1, p2))
        .min(point_segment_distance(q2, p1, p2))
}

/// Signed area (positive for counter-clockwise vertex order).
pub fn signed_area<T: Scalar>(poly: &[Vec2<T>]) -> T {
    let n = poly.len();
    let mut acc = T::zero();
    for i in 0..n {
        acc = acc + poly[i].cross(poly[(i + 1) % n]);
    }
    acc / lit(2.0)
}

/// Strict interior test (points on the boundary are outside).
pub fn point_strictly_inside_polygon<T: Scalar>(p: Vec2<T>, poly: &[Vec2<T>]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        if orient(a, b, p) == T::zero()
            && p.x >= a.x.min(b.x)
            && p.x <= a.x.max(b.x)
            && p.y >= a.y.min(b.y)
            && p.y <= a.y.max(b.y)
        {
            return false;
        }
    }
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a.y > p.y) != (b.y > p.y) {
            let x_cross = (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x;
            if p.x < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Iterator over the edges of a polyline or closed polygon.
pub fn edges<T: Scalar>(
    vertices: &[Vec2<T>],
    closed: bool,
) -> impl Iterator<Item = (Vec2<T>, Vec2<T>)> + '_ {
    let n = vertices.len();
    let count = if closed && n >= 3 { n } else { n.saturating_sub(1) };
    (0..count).map(move |i| (vertices[i], vertices[(i + 1) % n]))
}

/// Oriented rectangle: centre, unit heading along the length axis, full length and width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedRect<T> {
    pub center: Vec2<T>,
    pub heading: Vec2<T>,
    pub length: T,
    pub width: T,
}

impl<T: Scalar> OrientedRect<T> {
    /// Distance from `p` to the rectangle; zero when `p` is inside.
    pub fn distance_to(&self, p: Vec2<T>) -> T {
        let d = p - self.center;
        let local_x = d.dot(self.heading).abs();
        let local_y = d.dot(self.heading.perp()).abs();
        let half = lit::<T>(0.5);
        let dx = (local_x - self.length * half).max(T::zero());
        let dy = (local_y - self.width * half).max(T::zero());
        dx.hypot(dy)
    }

    /// Disc of radius `r` at `p` overlaps the rectangle interior.
    pub fn overlaps_disc(&self, p: Vec2<T>, r: T) -> bool {
        self.distance_to(p) < r
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    type V = Vec2<f64>;

    #[test]
    fn directed_angle_quadrants() {
        let e = V::new(1.0, 0.0);
        assert_relative_eq!(directed_angle_deg(e, V::new(0.0, 1.0)), 90.0, epsilon = 1e-12);
        assert_relative_eq!(directed_angle_deg(e, V::new(0.0, -1.0)), 270.0, epsilon = 1e-12);
        assert_relative_eq!(directed_angle_deg(e, V::new(-1.0, 0.0)), 180.0, epsilon = 1e-12);
        assert_eq!(directed_angle_deg(e, e), 0.0);
    }

    #[test]
    fn rotation_matches_rotation_matrix() {
        let f = V::new(4.5, 0.0).rotated_deg(90.0);
        assert_relative_eq!(f.x, 0.0, epsilon = 1e-12);
        assert_relative_eq!(f.y, 4.5, epsilon = 1e-12);
    }

    #[test]
    fn proper_intersection_excludes_touching() {
        let (a, b) = (V::new(0.0, 0.0), V::new(2.0, 0.0));
        assert!(segments_properly_intersect(a, b, V::new(1.0, -1.0), V::new(1.0, 1.0)));
        assert!(!segments_properly_intersect(a, b, V::new(2.0, -1.0), V::new(2.0, 1.0)));
        assert!(segments_intersect(a, b, V::new(2.0, -1.0), V::new(2.0, 1.0)));
    }

    #[test]
    fn polygon_interior_is_strict() {
        let sq = [V::new(0.0, 0.0), V::new(1.0, 0.0), V::new(1.0, 1.0), V::new(0.0, 1.0)];
        assert!(point_strictly_inside_polygon(V::new(0.5, 0.5), &sq));
        assert!(!point_strictly_inside_polygon(V::new(1.0, 0.5), &sq));
        assert!(!point_strictly_inside_polygon(V::new(1.5, 0.5), &sq));
        assert_relative_eq!(signed_area(&sq), 1.0);
    }

    #[test]
    fn rect_disc_overlap() {
        let car = OrientedRect { center: V::zero(), heading: V::new(1.0, 0.0), length: 4.0, width: 1.8 };
        assert!(car.overlaps_disc(V::new(2.2, 0.0), 0.3));
        assert!(!car.overlaps_disc(V::new(2.31, 0.0), 0.3));
        assert!(car.overlaps_disc(V::new(0.0, 0.0), 0.3));
    }
}
