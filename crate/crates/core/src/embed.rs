//! Template embedding of cut elements and the integration tree.
//!
//! Cut elements never receive extra degrees of freedom. Each one gets a tree
//! of sub-tetrahedra whose leaves lie entirely on one side of the linearised
//! interface; only the leaves' volumes and region flags are used later.

use std::path::Path;

use rayon::prelude::*;

use crate::classify::{edge_cut, snap, Classification, EdgeIntersection, LevelSet, SurfaceQuery};
use crate::error::{Error, Result};
use crate::geometry::{centroid, tet_signed_volume, Point3, TET_EDGES};
use crate::mesh::io::{write_vtk, Field, VtkCells};
use crate::mesh::TetMesh;

/// Sub-tetrahedra of the midpoint template. Nodes 0-3 are the corners and
/// node `4 + k` sits on edge `TET_EDGES[k]`. The octahedron is split along
/// the 6-9 diagonal.
pub const TEMPLATE_TETS: [[usize; 4]; 8] = [
    [0, 4, 6, 7],
    [4, 1, 5, 9],
    [6, 5, 2, 8],
    [7, 9, 8, 3],
    [6, 9, 4, 5],
    [6, 9, 5, 8],
    [6, 9, 8, 7],
    [6, 9, 7, 4],
];

/// Sub-tets thinner than this fraction of the parent count as degenerate.
const DEGENERATE: f64 = 1e-14;
/// Clamp applied to ξ on the retry after a degenerate embedding.
const XI_CLAMP: f64 = 1e-4;
pub const DEFAULT_MAX_DEPTH: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CutPattern {
    /// No sign change and no surface crossing on any edge.
    Uncut,
    /// Three cut edges meeting at `vertex`.
    Tri3 { vertex: usize },
    /// Four cut edges separating `pair` from the other two corners.
    Quad4 { pair: [usize; 2] },
    Invalid,
}

impl CutPattern {
    pub fn is_valid_cut(self) -> bool {
        matches!(self, CutPattern::Tri3 { .. } | CutPattern::Quad4 { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CutInfo {
    pub pattern: CutPattern,
    /// Intersections on sign-change edges, with local corner indices.
    pub intersections: Vec<EdgeIntersection>,
}

/// Surface crossings strictly inside the segment, merging hits closer than
/// `eps` (a crossing through a shared surface edge is reported twice).
fn interior_crossings(query: &SurfaceQuery, a: &Point3, b: &Point3, eps: f64) -> usize {
    let len = (b - a).norm();
    let mut count = 0;
    let mut last = f64::NEG_INFINITY;
    for (s, _) in query.segment_hits(a, b) {
        let d = s * len;
        if d < eps || len - d < eps || d - last < eps {
            continue;
        }
        last = d;
        count += 1;
    }
    count
}

/// Classifies the intersection topology of one tetrahedron.
pub fn cut_pattern(corners: &[Point3; 4], delta: &[f64; 4], query: &SurfaceQuery, eps: f64) -> CutInfo {
    let mut intersections = Vec::new();
    let mut consistent = true;
    let mut any_crossing = false;
    for &(i, j) in TET_EDGES.iter() {
        let crossings = interior_crossings(query, &corners[i], &corners[j], eps);
        any_crossing |= crossings > 0;
        if edge_cut(delta[i], delta[j]) {
            consistent &= crossings <= 1;
            let xi = delta[i].abs() / (delta[i].abs() + delta[j].abs());
            intersections.push(EdgeIntersection {
                edge: (i, j),
                xi,
                point: corners[i] * (1.0 - xi) + corners[j] * xi,
            });
        } else {
            consistent &= crossings == 0;
        }
    }
    let negative: Vec<usize> = (0..4).filter(|&k| delta[k] < 0.0).collect();
    let pattern = if !consistent {
        CutPattern::Invalid
    } else {
        match (intersections.len(), negative.len()) {
            (0, _) if !any_crossing => CutPattern::Uncut,
            (3, 1) => CutPattern::Tri3 { vertex: negative[0] },
            (3, 3) => CutPattern::Tri3 {
                vertex: (0..4).find(|k| !negative.contains(k)).unwrap(),
            },
            (4, 2) => CutPattern::Quad4 {
                pair: [negative[0], negative[1]],
            },
            _ => CutPattern::Invalid,
        }
    };
    CutInfo { pattern, intersections }
}

/// All 24 vertex permutations in lexicographic order.
fn permutations() -> Vec<[usize; 4]> {
    let mut out = Vec::with_capacity(24);
    for a in 0..4 {
        for b in 0..4 {
            for c in 0..4 {
                for d in 0..4 {
                    let p = [a, b, c, d];
                    if (0..4).all(|k| p.contains(&k)) {
                        out.push(p);
                    }
                }
            }
        }
    }
    out
}

fn aligns(perm: &[usize; 4], pattern: CutPattern) -> bool {
    match pattern {
        CutPattern::Tri3 { vertex } => perm[0] == vertex,
        CutPattern::Quad4 { pair } => {
            let (a, b) = (perm[0], perm[1]);
            (a == pair[0] && b == pair[1]) || (a == pair[1] && b == pair[0]) || {
                let (c, d) = (perm[2], perm[3]);
                (c == pair[0] && d == pair[1]) || (c == pair[1] && d == pair[0])
            }
        }
        _ => false,
    }
}

/// Physical positions of the 10 template nodes under `perm`. Midpoints on cut
/// edges move to the intersection, clamped to `[clamp, 1 - clamp]`.
fn template_nodes(corners: &[Point3; 4], perm: &[usize; 4], cuts: &[EdgeIntersection], clamp: f64) -> [Point3; 10] {
    let mut nodes = [Point3::zeros(); 10];
    for k in 0..4 {
        nodes[k] = corners[perm[k]];
    }
    for (k, &(i, j)) in TET_EDGES.iter().enumerate() {
        let (a, b) = (perm[i], perm[j]);
        nodes[4 + k] = match cuts.iter().find(|c| c.edge == (a, b) || c.edge == (b, a)) {
            Some(c) => {
                let xi = if c.edge == (a, b) { c.xi } else { 1.0 - c.xi };
                let xi = xi.clamp(clamp, 1.0 - clamp);
                corners[a] * (1.0 - xi) + corners[b] * xi
            }
            None => (corners[a] + corners[b]) * 0.5,
        };
    }
    nodes
}

/// Maps the template into a tet; `None` if some sub-tet is degenerate or
/// inverted relative to the permutation's parity.
fn place_template(corners: &[Point3; 4], perm: &[usize; 4], cuts: &[EdgeIntersection], clamp: f64) -> Option<[[Point3; 4]; 8]> {
    let parent = tet_signed_volume(&corners[0], &corners[1], &corners[2], &corners[3]);
    let nodes = template_nodes(corners, perm, cuts, clamp);
    let parity = tet_signed_volume(&nodes[0], &nodes[1], &nodes[2], &nodes[3]).signum();
    let mut out = [[Point3::zeros(); 4]; 8];
    for (s, t) in TEMPLATE_TETS.iter().enumerate() {
        let mut p = t.map(|k| nodes[k]);
        let v = parity * tet_signed_volume(&p[0], &p[1], &p[2], &p[3]);
        if !(v > DEGENERATE * parent) {
            return None;
        }
        if parity < 0.0 {
            p.swap(2, 3);
        }
        out[s] = p;
    }
    Some(out)
}

/// Eight positively oriented sub-tets of a validly cut tet, conforming to the
/// linearised interface. Tries aligned permutations in lexicographic order,
/// then once more with ξ pulled away from the corners.
pub fn embed_template(corners: &[Point3; 4], info: &CutInfo) -> Result<[[Point3; 4]; 8]> {
    if !info.pattern.is_valid_cut() {
        return Err(Error::Argument(format!("cannot embed pattern {:?}", info.pattern)));
    }
    let perms = permutations();
    for clamp in [0.0, XI_CLAMP] {
        for perm in perms.iter().filter(|p| aligns(p, info.pattern)) {
            if let Some(subs) = place_template(corners, perm, &info.intersections, clamp) {
                return Ok(subs);
            }
        }
    }
    Err(Error::Embedding {
        element: usize::MAX,
        msg: "every template rotation produced a degenerate sub-tetrahedron".into(),
    })
}

/// Plain midpoint subdivision (no moved nodes).
pub fn midpoint_subdivision(corners: &[Point3; 4]) -> [[Point3; 4]; 8] {
    place_template(corners, &[0, 1, 2, 3], &[], 0.0).expect("midpoint subdivision of a positive tet")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Region {
    Inside,
    Outside,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub corners: [Point3; 4],
    pub level: usize,
    pub children: Vec<usize>,
    /// Set on leaves only.
    pub region: Option<Region>,
}

impl TreeNode {
    pub fn volume(&self) -> f64 {
        let [a, b, c, d] = &self.corners;
        tet_signed_volume(a, b, c, d)
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// Integration tree of one cut background element; `nodes[0]` is the element
/// itself at level 0.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTree {
    pub element: usize,
    pub nodes: Vec<TreeNode>,
}

impl EmbeddingTree {
    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    pub fn leaves(&self) -> impl Iterator<Item = &TreeNode> {
        self.nodes.iter().filter(|n| n.is_leaf())
    }

    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.level).max().unwrap_or(0)
    }

    pub fn region_volume(&self, region: Region) -> f64 {
        self.leaves().filter(|n| n.region == Some(region)).map(TreeNode::volume).sum()
    }

    fn push(&mut self, parent: usize, corners: [Point3; 4], region: Option<Region>) -> usize {
        let level = self.nodes[parent].level + 1;
        self.nodes.push(TreeNode {
            corners,
            level,
            children: Vec::new(),
            region,
        });
        let id = self.nodes.len() - 1;
        self.nodes[parent].children.push(id);
        id
    }
}

fn leaf_region(query: &SurfaceQuery, corners: &[Point3; 4]) -> Region {
    if query.signed_distance(&centroid(corners)) < 0.0 {
        Region::Inside
    } else {
        Region::Outside
    }
}

fn snapped_deltas(query: &SurfaceQuery, corners: &[Point3; 4], eps: f64) -> [f64; 4] {
    corners.map(|p| snap(query.signed_distance(&p), eps))
}

fn attach_template(tree: &mut EmbeddingTree, parent: usize, subs: [[Point3; 4]; 8], query: &SurfaceQuery) {
    for s in subs {
        let r = leaf_region(query, &s);
        tree.push(parent, s, Some(r));
    }
}

/// Refines an invalidly cut tree node with the unmoved template and recurses.
/// `depth` is the level of the children being created.
pub fn refine_invalid(
    tree: &mut EmbeddingTree,
    node: usize,
    query: &SurfaceQuery,
    eps: f64,
    depth: usize,
    max_depth: usize,
) -> Result<()> {
    let corners = tree.nodes[node].corners;
    let info = cut_pattern(&corners, &snapped_deltas(query, &corners, eps), query, eps);
    if info.pattern != CutPattern::Invalid {
        return Err(Error::Argument(format!(
            "refine_invalid called on a {:?} sub-element of element {}",
            info.pattern, tree.element
        )));
    }
    if depth > max_depth {
        return Err(Error::RefinementLimit {
            element: tree.element,
            max_depth,
        });
    }
    for sub in midpoint_subdivision(&corners) {
        let delta = snapped_deltas(query, &sub, eps);
        let sub_info = cut_pattern(&sub, &delta, query, eps);
        match sub_info.pattern {
            CutPattern::Uncut => {
                tree.push(node, sub, Some(leaf_region(query, &sub)));
            }
            CutPattern::Invalid => {
                let id = tree.push(node, sub, None);
                refine_invalid(tree, id, query, eps, depth + 1, max_depth)?;
            }
            _ => {
                let id = tree.push(node, sub, None);
                let subs = embed_template(&sub, &sub_info).map_err(|e| with_element(e, tree.element))?;
                attach_template(tree, id, subs, query);
            }
        }
    }
    Ok(())
}

fn with_element(e: Error, element: usize) -> Error {
    match e {
        Error::Embedding { msg, .. } => Error::Embedding { element, msg },
        other => other,
    }
}

/// Builds the integration tree of a single background element.
pub fn embed_element(mesh: &TetMesh, element: usize, levelset: &LevelSet, query: &SurfaceQuery, max_depth: usize) -> Result<EmbeddingTree> {
    let corners = mesh.corners(element);
    let delta = mesh.tets[element].map(|n| levelset.delta[n]);
    let mut tree = EmbeddingTree {
        element,
        nodes: vec![TreeNode {
            corners,
            level: 0,
            children: Vec::new(),
            region: None,
        }],
    };
    let info = cut_pattern(&corners, &delta, query, levelset.eps_snap);
    match info.pattern {
        CutPattern::Uncut => {
            tree.nodes[0].region = Some(leaf_region(query, &corners));
        }
        CutPattern::Invalid => refine_invalid(&mut tree, 0, query, levelset.eps_snap, 1, max_depth)?,
        _ => {
            let subs = embed_template(&corners, &info).map_err(|e| with_element(e, element))?;
            attach_template(&mut tree, 0, subs, query);
        }
    }
    Ok(tree)
}

/// Integration trees for every cut element, ordered by element index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Embedding {
    pub trees: Vec<EmbeddingTree>,
}

impl Embedding {
    pub fn tree(&self, element: usize) -> Option<&EmbeddingTree> {
        self.trees
            .binary_search_by_key(&element, |t| t.element)
            .ok()
            .map(|i| &self.trees[i])
    }

    pub fn region_volume(&self, region: Region) -> f64 {
        self.trees.iter().map(|t| t.region_volume(region)).sum()
    }

    pub fn num_leaves(&self) -> usize {
        self.trees.iter().map(|t| t.leaves().count()).sum()
    }
}

pub fn build_embedding(
    mesh: &TetMesh,
    classification: &Classification,
    levelset: &LevelSet,
    query: &SurfaceQuery,
    max_depth: usize,
) -> Result<Embedding> {
    let trees = classification
        .cut
        .par_iter()
        .map(|&e| embed_element(mesh, e, levelset, query, max_depth))
        .collect::<Result<Vec<_>>>()?;
    Ok(Embedding { trees })
}

/// Writes every leaf as a VTK cell with `region`, `level` and `element` fields.
pub fn write_embedding_vtk(embedding: &Embedding, path: impl AsRef<Path>) -> Result<()> {
    let mut points = Vec::new();
    let mut cells = Vec::new();
    let (mut region, mut level, mut element) = (Vec::new(), Vec::new(), Vec::new());
    for tree in &embedding.trees {
        for leaf in tree.leaves() {
            let base = points.len();
            points.extend_from_slice(&leaf.corners);
            cells.push([base, base + 1, base + 2, base + 3]);
            region.push(if leaf.region == Some(Region::Inside) { 1.0 } else { 0.0 });
            level.push(leaf.level as f64);
            element.push(tree.element as f64);
        }
    }
    write_vtk(
        path,
        &points,
        VtkCells::Tets(&cells),
        &[],
        &[
            Field::scalar("region", region),
            Field::scalar("level", level),
            Field::scalar("element", element),
        ],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::tet_volume;
    use crate::mesh::generate_sphere_surface;

    fn unit_tet() -> [Point3; 4] {
        [
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(0.0, 0.0, 1.0),
        ]
    }

    #[test]
    fn permutations_are_24_and_sorted() {
        let p = permutations();
        assert_eq!(p.len(), 24);
        assert!(p.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn midpoint_template_is_eighths() {
        let t = unit_tet();
        let v = tet_volume(&t);
        let subs = midpoint_subdivision(&t);
        for s in &subs {
            assert!((tet_volume(s) - v / 8.0).abs() < 1e-15);
            assert!(tet_signed_volume(&s[0], &s[1], &s[2], &s[3]) > 0.0);
        }
    }

    #[test]
    fn tri3_with_half_xi_equals_unmoved_template() {
        // plane far from the tet so no actual surface crossings need checking
        let t = unit_tet();
        let info = CutInfo {
            pattern: CutPattern::Tri3 { vertex: 0 },
            intersections: [(0, 1), (0, 2), (0, 3)]
                .iter()
                .map(|&(i, j)| EdgeIntersection {
                    edge: (i, j),
                    xi: 0.5,
                    point: (t[i] + t[j]) * 0.5,
                })
                .collect(),
        };
        let subs = embed_template(&t, &info).unwrap();
        let plain = midpoint_subdivision(&t);
        let key = |s: &[Point3; 4]| {
            let mut v: Vec<[i64; 3]> = s.iter().map(|p| [0, 1, 2].map(|k| (p[k] * 1e9).round() as i64)).collect();
            v.sort();
            v
        };
        let mut a: Vec<_> = subs.iter().map(key).collect();
        let mut b: Vec<_> = plain.iter().map(key).collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }

    #[test]
    fn sign_patterns() {
        let s = generate_sphere_surface(Point3::new(-0.05, -0.05, -0.05), 0.3, 3).unwrap();
        let q = SurfaceQuery::new(&s).unwrap();
        let t = unit_tet();
        let d = t.map(|p| q.signed_distance(&p));
        let info = cut_pattern(&t, &d, &q, 1e-12);
        assert_eq!(info.pattern, CutPattern::Tri3 { vertex: 0 });
        assert_eq!(info.intersections.len(), 3);
    }
}
