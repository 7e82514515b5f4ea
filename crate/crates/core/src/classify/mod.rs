//! Level sets, edge intersections and three-way element classification.

mod grid;
mod levelset;

use std::collections::VecDeque;
use std::path::Path;

use rayon::prelude::*;

pub use grid::{default_cube_size, AccelGrid};
pub use levelset::{raw_signed_distances, signed_distances, snap, LevelSet, SurfaceQuery};

use crate::error::{Error, Result};
use crate::geometry::{segment_triangle, Point3, TET_EDGES, TET_FACES};
use crate::mesh::io::{write_tet_mesh_vtk, Field};
use crate::mesh::TetMesh;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum ElementLabel {
    Outside = 0,
    Cut = 1,
    Inside = 2,
}

impl ElementLabel {
    pub fn code(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeIntersection {
    pub edge: (usize, usize),
    pub xi: f64,
    pub point: Point3,
}

/// True iff the level set changes sign along the edge.
#[inline]
pub fn edge_cut(delta_i: f64, delta_j: f64) -> bool {
    delta_i * delta_j < 0.0
}

/// Linear interpolation of the zero crossing of δ along `p_i → p_j`.
pub fn edge_intersection(
    edge: (usize, usize),
    p_i: &Point3,
    p_j: &Point3,
    delta_i: f64,
    delta_j: f64,
) -> Result<EdgeIntersection> {
    if !edge_cut(delta_i, delta_j) {
        return Err(Error::Argument(format!(
            "edge ({}, {}) is not cut: δ = ({delta_i}, {delta_j})",
            edge.0, edge.1
        )));
    }
    let xi = delta_i.abs() / (delta_i.abs() + delta_j.abs());
    Ok(EdgeIntersection {
        edge,
        xi,
        point: p_i * (1.0 - xi) + p_j * xi,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct ClassifyOptions {
    /// Reject surfaces that touch or leave the background mesh.
    pub require_interior: bool,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        ClassifyOptions { require_interior: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub labels: Vec<ElementLabel>,
    /// Cut elements in ascending order.
    pub cut: Vec<usize>,
}

impl Classification {
    pub fn count(&self, label: ElementLabel) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn codes(&self) -> Vec<f64> {
        self.labels.iter().map(|l| l.code() as f64).collect()
    }
}

/// Everything the later stages need about one immersed surface.
#[derive(Debug, Clone)]
pub struct Immersion {
    pub query: SurfaceQuery,
    pub grid: AccelGrid,
    pub levelset: LevelSet,
    pub classification: Classification,
}

impl Immersion {
    pub fn build(mesh: &TetMesh, query: SurfaceQuery, cube_size: Option<f64>, options: ClassifyOptions) -> Result<Self> {
        let eps = LevelSet::snap_tolerance(mesh);
        let cube = cube_size.unwrap_or_else(|| default_cube_size(query.surface()));
        let grid = AccelGrid::build(mesh, Some(query.surface()), cube, eps)?;
        let levelset = signed_distances(mesh, &query)?;
        let classification = classify(mesh, &query, &grid, &levelset, options)?;
        Ok(Immersion {
            query,
            grid,
            levelset,
            classification,
        })
    }
}

fn tet_has_sign_change(t: &[usize; 4], delta: &[f64]) -> bool {
    TET_EDGES.iter().any(|&(a, b)| edge_cut(delta[t[a]], delta[t[b]]))
}

/// Three-step marking: cut elements from the triangles' subcubes, outside by
/// face-adjacent flood fill from the boundary subcubes, inside for the rest.
pub fn classify(
    mesh: &TetMesh,
    query: &SurfaceQuery,
    grid: &AccelGrid,
    levelset: &LevelSet,
    options: ClassifyOptions,
) -> Result<Classification> {
    let surface = query.surface();
    let delta = &levelset.delta;
    let mut cut: Vec<usize> = (0..surface.triangles.len())
        .into_par_iter()
        .flat_map_iter(|t| {
            let [a, b, c] = surface.corners(t);
            grid.tets_near_triangle(surface, t, levelset.eps_snap)
                .into_iter()
                .filter(move |&e| {
                    let tet = &mesh.tets[e];
                    tet_has_sign_change(tet, delta)
                        || TET_EDGES.iter().any(|&(i, j)| {
                            segment_triangle(&mesh.nodes[tet[i]], &mesh.nodes[tet[j]], &a, &b, &c).is_some()
                        })
                })
        })
        .collect();
    cut.sort_unstable();
    cut.dedup();

    let n = mesh.num_tets();
    let mut labels: Vec<Option<ElementLabel>> = vec![None; n];
    for &e in &cut {
        labels[e] = Some(ElementLabel::Cut);
    }
    let adjacency = mesh.adjacency();
    if options.require_interior {
        let bb = mesh.bounding_box();
        let sb = surface.bounding_box();
        let boxed = (0..3).all(|k| sb.min[k] > bb.min[k] && sb.max[k] < bb.max[k]);
        let boundary_node = mesh.boundary_faces().into_iter().find_map(|(e, k)| {
            let t = mesh.tets[e];
            TET_FACES[k].iter().map(|&l| t[l]).find(|&n| delta[n] < 0.0)
        });
        if !boxed || boundary_node.is_some() {
            return Err(Error::Config(format!(
                "immersed surface is not strictly inside the background mesh{}",
                boundary_node.map(|n| format!(" (boundary node {n} is inside)")).unwrap_or_default()
            )));
        }
    }

    let mut queue = VecDeque::new();
    for &c in grid.boundary_cells() {
        for &e in grid.tets_in(c) {
            let e = e as usize;
            if labels[e].is_none() && delta[mesh.tets[e][0]] > 0.0 {
                labels[e] = Some(ElementLabel::Outside);
                queue.push_back(e);
            }
        }
    }
    while let Some(e) = queue.pop_front() {
        for nb in adjacency[e].iter().flatten() {
            if labels[*nb].is_none() {
                labels[*nb] = Some(ElementLabel::Outside);
                queue.push_back(*nb);
            }
        }
    }
    let labels = labels.into_iter().map(|l| l.unwrap_or(ElementLabel::Inside)).collect();
    Ok(Classification { labels, cut })
}

/// Writes the mesh with a `label` cell field (codes 0/1/2) and the nodal level set.
pub fn write_labels_vtk(mesh: &TetMesh, levelset: &LevelSet, classification: &Classification, path: impl AsRef<Path>) -> Result<()> {
    write_tet_mesh_vtk(
        mesh,
        &[Field::scalar("delta", levelset.delta.clone())],
        &[Field::scalar("label", classification.codes())],
        path,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_box_mesh, generate_sphere_surface};

    #[test]
    fn edge_cut_cases() {
        assert!(edge_cut(-1.0, 2.0));
        assert!(!edge_cut(1.0, 2.0));
        assert!(!edge_cut(snap(0.0, 1e-9), 3.0));
    }

    #[test]
    fn intersection_parameter() {
        let (a, b) = (Point3::new(0.0, 0.0, 0.0), Point3::new(2.0, 0.0, 0.0));
        let m = edge_intersection((0, 1), &a, &b, -1.0, 1.0).unwrap();
        assert_eq!(m.xi, 0.5);
        assert_eq!(m.point, Point3::new(1.0, 0.0, 0.0));
        assert_eq!(edge_intersection((0, 1), &a, &b, -1.0, 3.0).unwrap().xi, 0.25);
        assert!(edge_intersection((0, 1), &a, &b, 1.0, 3.0).is_err());
    }

    #[test]
    fn sphere_center_and_vertex() {
        let s = generate_sphere_surface(Point3::new(3.0, 1.0, 1.0), 0.7, 3).unwrap();
        let q = SurfaceQuery::new(&s).unwrap();
        let d = q.signed_distance(&Point3::new(3.0, 1.0, 1.0));
        assert!(d < 0.0 && (d + 0.7).abs() < 0.7 * 0.01);
        assert_eq!(q.signed_distance(&s.vertices[5]), 0.0);
    }

    #[test]
    fn outside_surface_gives_all_outside() {
        let m = generate_box_mesh([1.0, 1.0, 1.0], [4, 4, 4]).unwrap();
        let s = generate_sphere_surface(Point3::new(5.0, 5.0, 5.0), 0.5, 1).unwrap();
        let opts = ClassifyOptions { require_interior: false };
        let im = Immersion::build(&m, SurfaceQuery::new(&s).unwrap(), None, opts).unwrap();
        assert_eq!(im.classification.count(ElementLabel::Outside), m.num_tets());
    }

    #[test]
    fn surface_touching_boundary_is_config_error() {
        let m = generate_box_mesh([1.0, 1.0, 1.0], [4, 4, 4]).unwrap();
        let s = generate_sphere_surface(Point3::new(0.5, 0.5, 0.5), 0.6, 1).unwrap();
        let err = Immersion::build(&m, SurfaceQuery::new(&s).unwrap(), None, ClassifyOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
