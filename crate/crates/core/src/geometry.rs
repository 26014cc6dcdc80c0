//! Oriented bounding boxes and the handful of exact or sampled measurements
//! the relation rules need: XY footprint overlap, 3D disjointness, volume
//! containment and closest-vertex distance.
//!
//! A box maps local coordinates to world as `center + R * local`, so column
//! `j` of the row-major rotation is the box's `j`-th local axis in world space.

use alloc::vec::Vec;

use thiserror::Error;

pub type Vec3 = [f64; 3];
pub type Vec2 = [f64; 2];
pub type Mat3 = [[f64; 3]; 3];

const ORTHONORMAL_TOL: f64 = 1e-6;
const SAT_EPS: f64 = 1e-9;
const CLIP_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("invalid box: {0}")]
    InvalidBox(&'static str),
    #[error("polygon needs at least 3 non-collinear vertices")]
    DegeneratePolygon,
}

pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

/// Rotation by `angle` radians about the world X axis.
pub fn rotation_x(angle: f64) -> Mat3 {
    let (s, c) = (libm::sin(angle), libm::cos(angle));
    [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]
}

pub fn rotation_y(angle: f64) -> Mat3 {
    let (s, c) = (libm::sin(angle), libm::cos(angle));
    [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]
}

pub fn rotation_z(angle: f64) -> Mat3 {
    let (s, c) = (libm::sin(angle), libm::cos(angle));
    [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn sub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm(a: &Vec3) -> f64 {
    libm::sqrt(dot(a, a))
}

fn det(m: &Mat3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedBox {
    pub center: Vec3,
    pub half_extents: Vec3,
    /// Row-major rotation; columns are the local axes.
    pub rotation: Mat3,
}

impl OrientedBox {
    pub fn new(center: Vec3, half_extents: Vec3, rotation: Mat3) -> Result<Self, GeometryError> {
        let b = Self { center, half_extents, rotation };
        b.validate()?;
        Ok(b)
    }

    pub fn axis_aligned(center: Vec3, half_extents: Vec3) -> Result<Self, GeometryError> {
        Self::new(center, half_extents, IDENTITY)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.center.iter().chain(self.half_extents.iter()).any(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidBox("non-finite center or half extent"));
        }
        if self.half_extents.iter().any(|h| *h <= 0.0) {
            return Err(GeometryError::InvalidBox("half extents must be strictly positive"));
        }
        let r = &self.rotation;
        if r.iter().flatten().any(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidBox("non-finite rotation entry"));
        }
        for i in 0..3 {
            for j in 0..3 {
                let rrt: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                if libm::fabs(rrt - expected) > ORTHONORMAL_TOL {
                    return Err(GeometryError::InvalidBox("rotation is not orthonormal"));
                }
            }
        }
        if det(r) <= 0.0 {
            return Err(GeometryError::InvalidBox("rotation determinant must be +1"));
        }
        Ok(())
    }

    /// Local axis `j` expressed in world coordinates.
    pub fn axis(&self, j: usize) -> Vec3 {
        [self.rotation[0][j], self.rotation[1][j], self.rotation[2][j]]
    }

    pub fn to_world(&self, local: &Vec3) -> Vec3 {
        let r = &self.rotation;
        let mut out = self.center;
        for (i, o) in out.iter_mut().enumerate() {
            *o += r[i][0] * local[0] + r[i][1] * local[1] + r[i][2] * local[2];
        }
        out
    }

    pub fn to_local(&self, world: &Vec3) -> Vec3 {
        let d = sub(world, &self.center);
        let r = &self.rotation;
        [
            r[0][0] * d[0] + r[1][0] * d[1] + r[2][0] * d[2],
            r[0][1] * d[0] + r[1][1] * d[1] + r[2][1] * d[2],
            r[0][2] * d[0] + r[1][2] * d[1] + r[2][2] * d[2],
        ]
    }

    pub fn contains_point(&self, p: &Vec3) -> bool {
        let local = self.to_local(p);
        (0..3).all(|j| libm::fabs(local[j]) <= self.half_extents[j] + CLIP_EPS)
    }

    pub fn vertices(&self) -> [Vec3; 8] {
        let h = self.half_extents;
        let mut out = [[0.0; 3]; 8];
        for (idx, v) in out.iter_mut().enumerate() {
            let sx = if idx & 1 == 0 { -1.0 } else { 1.0 };
            let sy = if idx & 2 == 0 { -1.0 } else { 1.0 };
            let sz = if idx & 4 == 0 { -1.0 } else { 1.0 };
            *v = self.to_world(&[sx * h[0], sy * h[1], sz * h[2]]);
        }
        out
    }

    pub fn volume(&self) -> f64 {
        8.0 * self.half_extents[0] * self.half_extents[1] * self.half_extents[2]
    }

    /// Highest world z over the vertices.
    pub fn top_z(&self) -> f64 {
        self.vertices().iter().map(|v| v[2]).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn bottom_z(&self) -> f64 {
        self.vertices().iter().map(|v| v[2]).fold(f64::INFINITY, f64::min)
    }
}

/// Counter-clockwise convex polygon in the XY plane.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexPolygon2D {
    vertices: Vec<Vec2>,
}

fn cross2(o: &Vec2, a: &Vec2, b: &Vec2) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Shoelace formula; positive for counter-clockwise rings.
pub fn signed_area(ring: &[Vec2]) -> f64 {
    if ring.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..ring.len() {
        let p = ring[i];
        let q = ring[(i + 1) % ring.len()];
        acc += p[0] * q[1] - q[0] * p[1];
    }
    acc * 0.5
}

impl ConvexPolygon2D {
    /// Convex hull (Andrew's monotone chain) with collinear points removed.
    pub fn hull(points: &[Vec2]) -> Result<Self, GeometryError> {
        let mut pts: Vec<Vec2> = points.to_vec();
        pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
        pts.dedup();
        if pts.len() < 3 {
            return Err(GeometryError::DegeneratePolygon);
        }
        let mut lower: Vec<Vec2> = Vec::with_capacity(pts.len());
        for p in &pts {
            while lower.len() >= 2 && cross2(&lower[lower.len() - 2], &lower[lower.len() - 1], p) <= CLIP_EPS {
                lower.pop();
            }
            lower.push(*p);
        }
        let mut upper: Vec<Vec2> = Vec::with_capacity(pts.len());
        for p in pts.iter().rev() {
            while upper.len() >= 2 && cross2(&upper[upper.len() - 2], &upper[upper.len() - 1], p) <= CLIP_EPS {
                upper.pop();
            }
            upper.push(*p);
        }
        lower.pop();
        upper.pop();
        lower.extend(upper);
        if lower.len() < 3 || signed_area(&lower) <= 0.0 {
            return Err(GeometryError::DegeneratePolygon);
        }
        Ok(Self { vertices: lower })
    }

    pub fn vertices(&self) -> &[Vec2] {
        &self.vertices
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices)
    }

    /// Sutherland–Hodgman clip of `self` against the convex `clip` polygon.
    /// Returns the vertex ring of the intersection (possibly empty).
    pub fn clip(&self, clip: &ConvexPolygon2D) -> Vec<Vec2> {
        let mut output = self.vertices.clone();
        let n = clip.vertices.len();
        for i in 0..n {
            if output.is_empty() {
                break;
            }
            let p = clip.vertices[i];
            let q = clip.vertices[(i + 1) % n];
            let input = core::mem::take(&mut output);
            let inside = |x: &Vec2| cross2(&p, &q, x) >= -CLIP_EPS;
            for j in 0..input.len() {
                let cur = input[j];
                let prev = input[(j + input.len() - 1) % input.len()];
                let (cur_in, prev_in) = (inside(&cur), inside(&prev));
                if cur_in {
                    if !prev_in {
                        output.push(line_intersection(&prev, &cur, &p, &q));
                    }
                    output.push(cur);
                } else if prev_in {
                    output.push(line_intersection(&prev, &cur, &p, &q));
                }
            }
        }
        output
    }
}

/// Intersection of segment `s→e` with the infinite line through `p→q`.
fn line_intersection(s: &Vec2, e: &Vec2, p: &Vec2, q: &Vec2) -> Vec2 {
    let ds = cross2(p, q, s);
    let de = cross2(p, q, e);
    let denom = ds - de;
    if denom == 0.0 {
        return *e;
    }
    let t = ds / denom;
    [s[0] + t * (e[0] - s[0]), s[1] + t * (e[1] - s[1])]
}

/// Footprint of a box: hull of its eight vertices projected onto XY.
pub fn xy_footprint(b: &OrientedBox) -> ConvexPolygon2D {
    let pts: Vec<Vec2> = b.vertices().iter().map(|v| [v[0], v[1]]).collect();
    // A valid box always has a non-degenerate footprint: the projection of a
    // solid with positive volume onto a plane has positive area.
    ConvexPolygon2D::hull(&pts).expect("valid box has a non-degenerate footprint")
}

/// Intersection-over-union of the XY footprints of two boxes.
pub fn xy_iou(a: &OrientedBox, b: &OrientedBox) -> f64 {
    let pa = xy_footprint(a);
    let pb = xy_footprint(b);
    let area_a = pa.area();
    let area_b = pb.area();
    let inter = libm::fabs(signed_area(&pa.clip(&pb))).min(area_a.min(area_b));
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Footprint intersection divided by the smaller footprint's area: 1.0 when
/// one footprint lies entirely within the other.
pub fn xy_intersection_over_min(a: &OrientedBox, b: &OrientedBox) -> f64 {
    let pa = xy_footprint(a);
    let pb = xy_footprint(b);
    let smaller = pa.area().min(pb.area());
    let inter = libm::fabs(signed_area(&pa.clip(&pb))).min(smaller);
    if smaller <= 0.0 {
        return 0.0;
    }
    (inter / smaller).clamp(0.0, 1.0)
}

/// Separating-axis test over the 15 candidate axes. Boxes whose projections
/// only touch (zero-volume contact) are reported as not intersecting.
pub fn boxes_intersect_3d(a: &OrientedBox, b: &OrientedBox) -> bool {
    let t = sub(&b.center, &a.center);
    let a_axes = [a.axis(0), a.axis(1), a.axis(2)];
    let b_axes = [b.axis(0), b.axis(1), b.axis(2)];

    let separated_on = |axis: &Vec3| -> bool {
        let ra: f64 = (0..3).map(|i| a.half_extents[i] * libm::fabs(dot(&a_axes[i], axis))).sum();
        let rb: f64 = (0..3).map(|i| b.half_extents[i] * libm::fabs(dot(&b_axes[i], axis))).sum();
        libm::fabs(dot(&t, axis)) >= ra + rb - SAT_EPS
    };

    for axis in a_axes.iter().chain(b_axes.iter()) {
        if separated_on(axis) {
            return false;
        }
    }
    for ai in &a_axes {
        for bj in &b_axes {
            let c = cross(ai, bj);
            let len = norm(&c);
            if len < SAT_EPS {
                // Parallel edges; covered by the face axes.
                continue;
            }
            let unit = [c[0] / len, c[1] / len, c[2] / len];
            if separated_on(&unit) {
                return false;
            }
        }
    }
    true
}

/// Fraction of `contained`'s volume that lies inside `container`, estimated
/// from a `resolution³` grid of cell-centre samples in `contained`'s frame.
///
/// Deterministic; the error is bounded by roughly `2 / resolution`.
pub fn containment_fraction(container: &OrientedBox, contained: &OrientedBox, resolution: usize) -> f64 {
    assert!(resolution > 0, "containment resolution must be positive");
    let h = contained.half_extents;
    let step = |axis: usize, i: usize| -h[axis] + (2 * i + 1) as f64 * h[axis] / resolution as f64;
    let mut hits = 0usize;
    for i in 0..resolution {
        let x = step(0, i);
        for j in 0..resolution {
            let y = step(1, j);
            for k in 0..resolution {
                let world = contained.to_world(&[x, y, step(2, k)]);
                if container.contains_point(&world) {
                    hits += 1;
                }
            }
        }
    }
    hits as f64 / (resolution * resolution * resolution) as f64
}

/// Minimum Euclidean distance over all 64 vertex pairs.
pub fn closest_vertex_distance(a: &OrientedBox, b: &OrientedBox) -> f64 {
    let va = a.vertices();
    let vb = b.vertices();
    let mut best = f64::INFINITY;
    for p in &va {
        for q in &vb {
            best = best.min(norm(&sub(p, q)));
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::{FRAC_PI_4, FRAC_PI_6, SQRT_2};
    use proptest::prelude::*;

    fn cube(center: Vec3, half: f64) -> OrientedBox {
        OrientedBox::axis_aligned(center, [half; 3]).unwrap()
    }

    fn bbox2(poly: &ConvexPolygon2D) -> (f64, f64, f64, f64) {
        let v = poly.vertices();
        let fold = |f: fn(&Vec2) -> f64, init: f64, g: fn(f64, f64) -> f64| v.iter().map(f).fold(init, g);
        (
            fold(|p| p[0], f64::INFINITY, f64::min),
            fold(|p| p[0], f64::NEG_INFINITY, f64::max),
            fold(|p| p[1], f64::INFINITY, f64::min),
            fold(|p| p[1], f64::NEG_INFINITY, f64::max),
        )
    }

    #[test]
    fn rejects_bad_boxes() {
        assert!(OrientedBox::axis_aligned([0.0; 3], [1.0, 0.0, 1.0]).is_err());
        assert!(OrientedBox::new([0.0; 3], [1.0; 3], [[2.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).is_err());
        // reflection: orthonormal but det = -1
        assert!(OrientedBox::new([0.0; 3], [1.0; 3], [[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).is_err());
        assert!(OrientedBox::new([0.0; 3], [1.0; 3], rotation_z(0.3)).is_ok());
    }

    #[test]
    fn unit_cube_footprint_is_unit_square() {
        let fp = xy_footprint(&cube([0.0; 3], 0.5));
        assert_eq!(fp.vertices().len(), 4);
        assert_eq!(bbox2(&fp), (-0.5, 0.5, -0.5, 0.5));
        assert!((fp.area() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rotated_cube_footprint_has_vertices_on_axes() {
        let b = OrientedBox::new([0.0; 3], [1.0; 3], rotation_z(FRAC_PI_4)).unwrap();
        let fp = xy_footprint(&b);
        assert_eq!(fp.vertices().len(), 4);
        for v in fp.vertices() {
            let r = libm::sqrt(v[0] * v[0] + v[1] * v[1]);
            assert!((r - SQRT_2).abs() < 1e-12);
            assert!(v[0].abs() < 1e-12 || v[1].abs() < 1e-12);
        }
    }

    #[test]
    fn tilted_box_footprint_stretches_y() {
        // Hand projection: x ∈ [-1, 1]; y extent = hy·cos30° + hz·sin30°
        // = 0.5·0.8660254037844386 + 0.25·0.5 = 0.5580127018922193.
        let b = OrientedBox::new([0.0; 3], [1.0, 0.5, 0.25], rotation_x(FRAC_PI_6)).unwrap();
        let fp = xy_footprint(&b);
        assert_eq!(fp.vertices().len(), 4);
        let (x0, x1, y0, y1) = bbox2(&fp);
        assert!((x0 + 1.0).abs() < 1e-12 && (x1 - 1.0).abs() < 1e-12);
        assert!((y1 - 0.558_012_701_892_219_3).abs() < 1e-12);
        assert!((y0 + 0.558_012_701_892_219_3).abs() < 1e-12);
    }

    #[test]
    fn iou_analytic_cases() {
        let a = cube([0.0; 3], 0.5);
        assert_eq!(xy_iou(&a, &a), 1.0);
        let b = cube([0.5, 0.0, 0.0], 0.5);
        assert!((xy_iou(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
        // Regular octagon: area 2(√2−1), union 2 − 2(√2−1), IoU = 1/√2.
        let r = OrientedBox::new([0.0; 3], [0.5; 3], rotation_z(FRAC_PI_4)).unwrap();
        assert!((xy_iou(&a, &r) - core::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9);
        let far = cube([5.0, 0.0, 0.0], 0.5);
        assert_eq!(xy_iou(&a, &far), 0.0);
    }

    #[test]
    fn intersection_over_min_cases() {
        let table = OrientedBox::axis_aligned([0.0; 3], [1.0, 0.5, 0.4]).unwrap();
        let cup = cube([0.3, 0.1, 0.5], 0.05);
        assert!((xy_intersection_over_min(&table, &cup) - 1.0).abs() < 1e-12);
        assert!(xy_iou(&table, &cup) < 0.01);
        // half of the cup hangs over the edge
        let edge = cube([1.0, 0.0, 0.5], 0.05);
        assert!((xy_intersection_over_min(&table, &edge) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn sat_basic_cases() {
        let a = cube([0.0; 3], 0.5);
        assert!(!boxes_intersect_3d(&a, &cube([2.0, 0.0, 0.0], 0.5)));
        assert!(boxes_intersect_3d(&a, &a));
        // face contact only
        assert!(!boxes_intersect_3d(&a, &cube([1.0, 0.0, 0.0], 0.5)));
        assert!(!boxes_intersect_3d(&a, &cube([0.0, 0.0, 1.0], 0.5)));
        assert!(boxes_intersect_3d(&a, &cube([0.99, 0.0, 0.0], 0.5)));
        // separated only along an edge-edge cross axis
        let b = OrientedBox::new([1.2, 1.2, 0.0], [0.5; 3], rotation_z(FRAC_PI_4)).unwrap();
        assert!(!boxes_intersect_3d(&a, &b));
    }

    #[test]
    fn containment_cases() {
        let big = cube([0.0; 3], 1.0);
        assert_eq!(containment_fraction(&big, &cube([0.0; 3], 0.2), 16), 1.0);
        assert_eq!(containment_fraction(&big, &cube([10.0, 0.0, 0.0], 1.0), 16), 0.0);
        let shifted = cube([1.0, 0.0, 0.0], 1.0);
        for res in [4, 16, 33] {
            let f = containment_fraction(&big, &shifted, res);
            assert!((f - 0.5).abs() <= 2.0 / res as f64, "res {res}: {f}");
        }
    }

    #[test]
    fn closest_vertex_cases() {
        let a = cube([0.0; 3], 0.5);
        assert_eq!(closest_vertex_distance(&a, &a), 0.0);
        assert!((closest_vertex_distance(&a, &cube([3.0, 0.0, 0.0], 0.5)) - 2.0).abs() < 1e-12);
        // rotated pair, brute force over an independent vertex enumeration
        let b = OrientedBox::new([2.0, 1.0, 0.3], [0.4, 0.2, 0.3], rotation_z(0.7)).unwrap();
        let mut best = f64::INFINITY;
        for sx in [-0.5, 0.5] {
            for sy in [-0.5, 0.5] {
                for sz in [-0.5, 0.5] {
                    for tx in [-0.4, 0.4] {
                        for ty in [-0.2, 0.2] {
                            for tz in [-0.3, 0.3] {
                                let (c, s) = (libm::cos(0.7), libm::sin(0.7));
                                let q = [2.0 + c * tx - s * ty, 1.0 + s * tx + c * ty, 0.3 + tz];
                                let d = libm::sqrt((q[0] - sx).powi(2) + (q[1] - sy).powi(2) + (q[2] - sz).powi(2));
                                best = best.min(d);
                            }
                        }
                    }
                }
            }
        }
        assert!((closest_vertex_distance(&a, &b) - best).abs() < 1e-12);
    }

    fn arb_box() -> impl Strategy<Value = OrientedBox> {
        (
            prop::array::uniform3(-2.0f64..2.0),
            prop::array::uniform3(0.05f64..1.5),
            prop::array::uniform3(-3.2f64..3.2),
        )
            .prop_map(|(c, h, e)| {
                let r = mat_mul(&rotation_z(e[0]), &mat_mul(&rotation_y(e[1]), &rotation_x(e[2])));
                OrientedBox::new(c, h, r).unwrap()
            })
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_reflexive(a in arb_box(), b in arb_box()) {
            prop_assert!((xy_iou(&a, &b) - xy_iou(&b, &a)).abs() <= 1e-12);
            prop_assert_eq!(xy_iou(&a, &a), 1.0);
            let v = xy_iou(&a, &b);
            prop_assert!((0.0..=1.0).contains(&v));
        }

        #[test]
        fn footprint_vertex_count(a in arb_box()) {
            let n = xy_footprint(&a).vertices().len();
            prop_assert!((4..=8).contains(&n), "{n}");
        }

        #[test]
        fn shared_vertex_gives_zero_distance(a in arb_box(), h in prop::array::uniform3(0.1f64..1.0)) {
            // Axis-aligned box whose min corner sits on a vertex of `a`.
            let v = a.vertices()[0];
            let b = OrientedBox::axis_aligned([v[0] + h[0], v[1] + h[1], v[2] + h[2]], h).unwrap();
            prop_assert!(closest_vertex_distance(&a, &b) < 1e-12);
        }

        #[test]
        fn containment_converges(a in arb_box(), b in arb_box()) {
            let coarse = containment_fraction(&a, &b, 16);
            let fine = containment_fraction(&a, &b, 64);
            prop_assert!((coarse - fine).abs() <= 0.05, "{coarse} vs {fine}");
        }
    }
}
