//! Small geometric kernels shared by the mesh, classification and embedding code.

use nalgebra::{Matrix3, Vector3};

pub type Point3 = Vector3<f64>;

/// Signed volume of the tetrahedron `(a, b, c, d)`; positive when `d` lies on
/// the side of `(a, b, c)` that the right-hand normal points to.
#[inline]
pub fn tet_signed_volume(a: &Point3, b: &Point3, c: &Point3, d: &Point3) -> f64 {
    (b - a).dot(&(c - a).cross(&(d - a))) / 6.0
}

#[inline]
pub fn tet_volume(p: &[Point3; 4]) -> f64 {
    tet_signed_volume(&p[0], &p[1], &p[2], &p[3])
}

pub fn centroid(p: &[Point3; 4]) -> Point3 {
    (p[0] + p[1] + p[2] + p[3]) * 0.25
}

/// Barycentric coordinates of `x` with respect to the tetrahedron `p`.
///
/// Returns `None` for a degenerate tetrahedron.
pub fn barycentric(x: &Point3, p: &[Point3; 4]) -> Option<[f64; 4]> {
    let m = Matrix3::from_columns(&[p[1] - p[0], p[2] - p[0], p[3] - p[0]]);
    let inv = m.try_inverse()?;
    let l = inv * (x - p[0]);
    Some([1.0 - l.x - l.y - l.z, l.x, l.y, l.z])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Point3,
    pub max: Point3,
}

impl Aabb {
    pub fn empty() -> Self {
        Aabb {
            min: Point3::repeat(f64::INFINITY),
            max: Point3::repeat(f64::NEG_INFINITY),
        }
    }

    pub fn from_points<'a>(pts: impl IntoIterator<Item = &'a Point3>) -> Self {
        let mut b = Self::empty();
        for p in pts {
            b.grow(p);
        }
        b
    }

    pub fn grow(&mut self, p: &Point3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn inflated(&self, by: f64) -> Self {
        Aabb {
            min: self.min.add_scalar(-by),
            max: self.max.add_scalar(by),
        }
    }

    pub fn overlaps(&self, other: &Aabb) -> bool {
        (0..3).all(|k| self.min[k] <= other.max[k] && other.min[k] <= self.max[k])
    }

    pub fn contains(&self, p: &Point3) -> bool {
        (0..3).all(|k| self.min[k] <= p[k] && p[k] <= self.max[k])
    }

    pub fn diagonal(&self) -> f64 {
        (self.max - self.min).norm()
    }

    /// Squared distance from `p` to the box (zero inside).
    pub fn distance_squared(&self, p: &Point3) -> f64 {
        let mut d = 0.0;
        for k in 0..3 {
            let v = if p[k] < self.min[k] {
                self.min[k] - p[k]
            } else if p[k] > self.max[k] {
                p[k] - self.max[k]
            } else {
                0.0
            };
            d += v * v;
        }
        d
    }
}

/// Which feature of a triangle realises the closest point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriFeature {
    Face,
    /// Edge `k` joins local vertices `k` and `(k + 1) % 3`.
    Edge(u8),
    Vertex(u8),
}

/// Closest point on triangle `(a, b, c)` to `p` (Voronoi-region walk).
pub fn closest_point_on_triangle(
    p: &Point3,
    a: &Point3,
    b: &Point3,
    c: &Point3,
) -> (Point3, TriFeature) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (*a, TriFeature::Vertex(0));
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (*b, TriFeature::Vertex(1));
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (a + ab * v, TriFeature::Edge(0));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (*c, TriFeature::Vertex(2));
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (a + ac * w, TriFeature::Edge(2));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + (c - b) * w, TriFeature::Edge(1));
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (a + ab * v + ac * w, TriFeature::Face)
}

/// Parameter `t ∈ [0, 1]` at which segment `p → q` crosses triangle `(a, b, c)`.
///
/// Segments lying in the triangle plane are reported as non-crossing.
pub fn segment_triangle(p: &Point3, q: &Point3, a: &Point3, b: &Point3, c: &Point3) -> Option<f64> {
    let dir = q - p;
    let e1 = b - a;
    let e2 = c - a;
    let h = dir.cross(&e2);
    let det = e1.dot(&h);
    let scale = e1.norm() * e2.norm() * dir.norm();
    if det.abs() <= 1e-14 * scale {
        return None;
    }
    let inv = 1.0 / det;
    let s = p - a;
    let u = inv * s.dot(&h);
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let qv = s.cross(&e1);
    let v = inv * dir.dot(&qv);
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = inv * e2.dot(&qv);
    (0.0..=1.0).contains(&t).then_some(t)
}

/// The six edges of a tetrahedron as local vertex pairs. The order matches
/// the template mid-edge node numbering (node `4 + k` sits on edge `k`).
pub const TET_EDGES: [(usize, usize); 6] = [(0, 1), (1, 2), (0, 2), (0, 3), (2, 3), (1, 3)];

/// Faces of a positively oriented tetrahedron, each wound outward.
pub const TET_FACES: [[usize; 3]; 4] = [[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]];

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_tet() -> [Point3; 4] {
        [
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(0.0, 0.0, 1.0),
        ]
    }

    #[test]
    fn unit_tet_volume_and_faces_outward() {
        let t = unit_tet();
        assert!((tet_volume(&t) - 1.0 / 6.0).abs() < 1e-15);
        let c = centroid(&t);
        for f in TET_FACES {
            let n = (t[f[1]] - t[f[0]]).cross(&(t[f[2]] - t[f[0]]));
            assert!(n.dot(&(t[f[0]] - c)) > 0.0, "face {f:?} wound inward");
        }
    }

    #[test]
    fn barycentric_reconstructs() {
        let t = unit_tet();
        let x = Point3::new(0.1, 0.2, 0.3);
        let w = barycentric(&x, &t).unwrap();
        let r: Point3 = (0..4).map(|i| t[i] * w[i]).sum();
        assert!((r - x).norm() < 1e-15);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn closest_point_regions() {
        let a = Point3::new(0.0, 0.0, 0.0);
        let b = Point3::new(1.0, 0.0, 0.0);
        let c = Point3::new(0.0, 1.0, 0.0);
        let (q, f) = closest_point_on_triangle(&Point3::new(0.2, 0.2, 1.0), &a, &b, &c);
        assert_eq!(f, TriFeature::Face);
        assert!((q - Point3::new(0.2, 0.2, 0.0)).norm() < 1e-15);
        let (_, f) = closest_point_on_triangle(&Point3::new(-1.0, -1.0, 0.0), &a, &b, &c);
        assert_eq!(f, TriFeature::Vertex(0));
        let (q, f) = closest_point_on_triangle(&Point3::new(0.5, -1.0, 0.3), &a, &b, &c);
        assert_eq!(f, TriFeature::Edge(0));
        assert!((q - Point3::new(0.5, 0.0, 0.0)).norm() < 1e-15);
        let (_, f) = closest_point_on_triangle(&Point3::new(1.0, 1.0, 0.0), &a, &b, &c);
        assert_eq!(f, TriFeature::Edge(1));
    }

    #[test]
    fn segment_crossing() {
        let a = Point3::new(0.0, 0.0, 0.0);
        let b = Point3::new(1.0, 0.0, 0.0);
        let c = Point3::new(0.0, 1.0, 0.0);
        let t = segment_triangle(&Point3::new(0.2, 0.2, -1.0), &Point3::new(0.2, 0.2, 3.0), &a, &b, &c);
        assert!((t.unwrap() - 0.25).abs() < 1e-15);
        assert!(segment_triangle(&Point3::new(0.8, 0.8, -1.0), &Point3::new(0.8, 0.8, 1.0), &a, &b, &c).is_none());
    }
}
