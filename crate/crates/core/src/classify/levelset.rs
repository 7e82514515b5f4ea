use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{closest_point_on_triangle, segment_triangle, Aabb, Point3, TriFeature};
use crate::mesh::{TetMesh, TriSurface};

/// Signed distance queries against a closed triangle surface.
///
/// Signs come from angle-weighted pseudo-normals at the nearest feature, so
/// points near edges and vertices of concave regions get the right side.
#[derive(Debug, Clone)]
pub struct SurfaceQuery {
    surface: TriSurface,
    vertex_normals: Vec<Point3>,
    edge_normals: HashMap<(usize, usize), Point3>,
    bvh: Bvh,
}

impl SurfaceQuery {
    pub fn new(surface: &TriSurface) -> Result<Self> {
        surface.check_closed()?;
        let mut vertex_normals = vec![Point3::zeros(); surface.vertices.len()];
        let mut edge_normals: HashMap<(usize, usize), Point3> = HashMap::new();
        for (t, tri) in surface.triangles.iter().enumerate() {
            let n = surface.normals[t];
            for k in 0..3 {
                let (a, b, c) = (tri[k], tri[(k + 1) % 3], tri[(k + 2) % 3]);
                let u = (surface.vertices[b] - surface.vertices[a]).normalize();
                let v = (surface.vertices[c] - surface.vertices[a]).normalize();
                let angle = u.dot(&v).clamp(-1.0, 1.0).acos();
                vertex_normals[a] += n * angle;
                *edge_normals.entry((a.min(b), a.max(b))).or_insert_with(Point3::zeros) += n;
            }
        }
        let boxes: Vec<Aabb> = (0..surface.triangles.len())
            .map(|t| Aabb::from_points(&surface.corners(t)))
            .collect();
        Ok(SurfaceQuery {
            surface: surface.clone(),
            vertex_normals,
            edge_normals,
            bvh: Bvh::build(&boxes),
        })
    }

    pub fn surface(&self) -> &TriSurface {
        &self.surface
    }

    /// Nearest surface point, its triangle, the feature it lies on and the distance.
    pub fn nearest(&self, p: &Point3) -> (Point3, usize, TriFeature, f64) {
        let (t, _) = self
            .bvh
            .nearest(p, |t| {
                let [a, b, c] = self.surface.corners(t);
                (p - closest_point_on_triangle(p, &a, &b, &c).0).norm_squared()
            })
            .expect("surface has triangles");
        let [a, b, c] = self.surface.corners(t);
        let (q, f) = closest_point_on_triangle(p, &a, &b, &c);
        (q, t, f, (p - q).norm())
    }

    /// Signed distance: negative inside the closed surface, zero on it.
    pub fn signed_distance(&self, p: &Point3) -> f64 {
        let (q, t, feature, d) = self.nearest(p);
        if d == 0.0 {
            return 0.0;
        }
        let tri = self.surface.triangles[t];
        let n = match feature {
            TriFeature::Face => self.surface.normals[t],
            TriFeature::Edge(k) => {
                let (a, b) = (tri[k as usize], tri[(k as usize + 1) % 3]);
                self.edge_normals[&(a.min(b), a.max(b))]
            }
            TriFeature::Vertex(k) => self.vertex_normals[tri[k as usize]],
        };
        if (p - q).dot(&n) < 0.0 {
            -d
        } else {
            d
        }
    }

    pub fn is_inside(&self, p: &Point3) -> bool {
        self.signed_distance(p) < 0.0
    }

    /// Number of surface triangles crossed by the segment `a → b`.
    pub fn segment_crossings(&self, a: &Point3, b: &Point3) -> usize {
        let seg = Aabb::from_points([a, b]);
        let mut n = 0;
        self.bvh.visit_overlapping(&seg, &mut |t| {
            let [p, q, r] = self.surface.corners(t);
            if segment_triangle(a, b, &p, &q, &r).is_some() {
                n += 1;
            }
        });
        n
    }

    /// Parameters along `a → b` of every crossing with the surface, sorted.
    pub fn segment_hits(&self, a: &Point3, b: &Point3) -> Vec<(f64, usize)> {
        let seg = Aabb::from_points([a, b]);
        let mut hits = Vec::new();
        self.bvh.visit_overlapping(&seg, &mut |t| {
            let [p, q, r] = self.surface.corners(t);
            if let Some(s) = segment_triangle(a, b, &p, &q, &r) {
                hits.push((s, t));
            }
        });
        hits.sort_by(|x, y| x.0.total_cmp(&y.0));
        hits
    }
}

/// Per-node signed distances to the immersed surface.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSet {
    pub delta: Vec<f64>,
    /// Values with magnitude below this were snapped to `+eps_snap`.
    pub eps_snap: f64,
}

impl LevelSet {
    pub fn snap_tolerance(mesh: &TetMesh) -> f64 {
        1e-9 * mesh.bounding_box().diagonal()
    }

    pub fn value(&self, node: usize) -> f64 {
        self.delta[node]
    }
}

/// Snaps a distance away from zero so that intersections never sit on nodes.
#[inline]
pub fn snap(delta: f64, eps_snap: f64) -> f64 {
    if delta.abs() < eps_snap {
        eps_snap
    } else {
        delta
    }
}

/// Signed distance from every mesh node to the surface, with zero snapping.
pub fn signed_distances(mesh: &TetMesh, query: &SurfaceQuery) -> Result<LevelSet> {
    let eps_snap = LevelSet::snap_tolerance(mesh);
    let delta: Vec<f64> = mesh
        .nodes
        .par_iter()
        .map(|p| snap(query.signed_distance(p), eps_snap))
        .collect();
    if let Some(i) = delta.iter().position(|d| !d.is_finite()) {
        return Err(Error::Numerical { element: i });
    }
    Ok(LevelSet { delta, eps_snap })
}

/// Raw (unsnapped) signed distances, for callers that need exact zeros.
pub fn raw_signed_distances(points: &[Point3], query: &SurfaceQuery) -> Vec<f64> {
    points.par_iter().map(|p| query.signed_distance(p)).collect()
}

#[derive(Debug, Clone)]
struct BvhNode {
    bbox: Aabb,
    /// Leaf: `start..start + count` into `order`; inner: children at `left`, `left + 1`.
    left: usize,
    start: usize,
    count: usize,
}

#[derive(Debug, Clone)]
struct Bvh {
    nodes: Vec<BvhNode>,
    order: Vec<usize>,
    boxes: Vec<Aabb>,
}

impl Bvh {
    const LEAF: usize = 4;

    fn build(boxes: &[Aabb]) -> Self {
        let mut bvh = Bvh {
            nodes: Vec::with_capacity(2 * boxes.len() / Self::LEAF + 1),
            order: (0..boxes.len()).collect(),
            boxes: boxes.to_vec(),
        };
        bvh.nodes.push(BvhNode {
            bbox: Aabb::empty(),
            left: 0,
            start: 0,
            count: boxes.len(),
        });
        bvh.split(0);
        bvh
    }

    fn split(&mut self, node: usize) {
        let (start, count) = (self.nodes[node].start, self.nodes[node].count);
        let mut bbox = Aabb::empty();
        let mut cbox = Aabb::empty();
        for &i in &self.order[start..start + count] {
            bbox.grow(&self.boxes[i].min);
            bbox.grow(&self.boxes[i].max);
            cbox.grow(&((self.boxes[i].min + self.boxes[i].max) * 0.5));
        }
        self.nodes[node].bbox = bbox;
        if count <= Self::LEAF {
            return;
        }
        let ext = cbox.max - cbox.min;
        let axis = ext.imax();
        let boxes = &self.boxes;
        let key = |i: &usize| boxes[*i].min[axis] + boxes[*i].max[axis];
        let slice = &mut self.order[start..start + count];
        let mid = count / 2;
        slice.select_nth_unstable_by(mid, |a, b| key(a).total_cmp(&key(b)));
        let left = self.nodes.len();
        self.nodes.push(BvhNode {
            bbox: Aabb::empty(),
            left: 0,
            start,
            count: mid,
        });
        self.nodes.push(BvhNode {
            bbox: Aabb::empty(),
            left: 0,
            start: start + mid,
            count: count - mid,
        });
        self.nodes[node].left = left;
        self.nodes[node].count = 0;
        self.split(left);
        self.split(left + 1);
    }

    /// Item minimising `dist_sq`, searched near-to-far with box pruning.
    fn nearest(&self, p: &Point3, mut dist_sq: impl FnMut(usize) -> f64) -> Option<(usize, f64)> {
        if self.order.is_empty() {
            return None;
        }
        let mut best: Option<(usize, f64)> = None;
        let mut stack = vec![(0usize, self.nodes[0].bbox.distance_squared(p))];
        while let Some((n, bound)) = stack.pop() {
            if best.is_some_and(|(_, d)| bound >= d) {
                continue;
            }
            let node = &self.nodes[n];
            if node.count > 0 || node.left == 0 {
                for &i in &self.order[node.start..node.start + node.count] {
                    if best.is_some_and(|(_, d)| self.boxes[i].distance_squared(p) >= d) {
                        continue;
                    }
                    let d = dist_sq(i);
                    if best.is_none_or(|(_, bd)| d < bd) {
                        best = Some((i, d));
                    }
                }
                continue;
            }
            let (l, r) = (node.left, node.left + 1);
            let (dl, dr) = (self.nodes[l].bbox.distance_squared(p), self.nodes[r].bbox.distance_squared(p));
            if dl <= dr {
                stack.push((r, dr));
                stack.push((l, dl));
            } else {
                stack.push((l, dl));
                stack.push((r, dr));
            }
        }
        best
    }

    fn visit_overlapping(&self, query: &Aabb, f: &mut impl FnMut(usize)) {
        if self.order.is_empty() {
            return;
        }
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if !node.bbox.overlaps(query) {
                continue;
            }
            if node.count > 0 || node.left == 0 {
                for &i in &self.order[node.start..node.start + node.count] {
                    if self.boxes[i].overlaps(query) {
                        f(i);
                    }
                }
            } else {
                stack.push(node.left);
                stack.push(node.left + 1);
            }
        }
    }
}
