//! Background tetrahedral meshes, immersed triangle surfaces, generators and file I/O.

mod generate;
pub mod io;

use std::collections::HashMap;

pub use generate::{generate_ball_mesh, generate_box_mesh, generate_ellipsoid_surface, generate_sphere_surface};

use crate::error::{Error, Result};
use crate::geometry::{tet_signed_volume, Aabb, Point3, TET_FACES};

#[derive(Debug, Clone, PartialEq)]
pub struct TetMesh {
    pub nodes: Vec<Point3>,
    pub tets: Vec<[usize; 4]>,
}

impl TetMesh {
    /// Builds a mesh after checking index ranges and orientation.
    pub fn new(nodes: Vec<Point3>, tets: Vec<[usize; 4]>) -> Result<Self> {
        let mesh = TetMesh { nodes, tets };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        for (e, t) in self.tets.iter().enumerate() {
            if let Some(&i) = t.iter().find(|&&i| i >= self.nodes.len()) {
                return Err(Error::Geometry(format!("tet {e} references missing node {i}")));
            }
            if self.signed_volume(e) <= 0.0 {
                return Err(Error::Geometry(format!("tet {e} has non-positive volume")));
            }
        }
        if let Some(i) = self.nodes.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::Geometry(format!("node {i} is not finite")));
        }
        Ok(())
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_tets(&self) -> usize {
        self.tets.len()
    }

    pub fn corners(&self, e: usize) -> [Point3; 4] {
        self.tets[e].map(|i| self.nodes[i])
    }

    pub fn signed_volume(&self, e: usize) -> f64 {
        let [a, b, c, d] = self.corners(e);
        tet_signed_volume(&a, &b, &c, &d)
    }

    pub fn total_volume(&self) -> f64 {
        (0..self.tets.len()).map(|e| self.signed_volume(e)).sum()
    }

    pub fn bounding_box(&self) -> Aabb {
        Aabb::from_points(&self.nodes)
    }

    pub fn tet_bounding_box(&self, e: usize) -> Aabb {
        Aabb::from_points(&self.corners(e))
    }

    /// Face neighbours: `adjacency()[e][k]` is the tet across the face opposite
    /// local vertex `k`, if any.
    pub fn adjacency(&self) -> Vec<[Option<usize>; 4]> {
        let mut faces: HashMap<[usize; 3], (usize, usize)> = HashMap::with_capacity(self.tets.len() * 2);
        let mut adj = vec![[None; 4]; self.tets.len()];
        for (e, t) in self.tets.iter().enumerate() {
            for k in 0..4 {
                let key = face_key(t, k);
                if let Some((other, ok)) = faces.remove(&key) {
                    adj[e][k] = Some(other);
                    adj[other][ok] = Some(e);
                } else {
                    faces.insert(key, (e, k));
                }
            }
        }
        adj
    }

    /// Boundary faces as (tet, local face index), wound outward.
    pub fn boundary_faces(&self) -> Vec<(usize, usize)> {
        let adj = self.adjacency();
        let mut out = Vec::new();
        for (e, a) in adj.iter().enumerate() {
            for (k, n) in a.iter().enumerate() {
                if n.is_none() {
                    out.push((e, k));
                }
            }
        }
        out
    }

    /// Extracts the boundary as a closed triangle surface sharing node numbering
    /// through the returned vertex-to-node map.
    pub fn boundary_surface(&self) -> (TriSurface, Vec<usize>) {
        let faces = self.boundary_faces();
        let mut remap: HashMap<usize, usize> = HashMap::new();
        let mut verts = Vec::new();
        let mut node_of = Vec::new();
        let mut tris = Vec::with_capacity(faces.len());
        for (e, k) in faces {
            let t = self.tets[e];
            let f = TET_FACES[k].map(|l| t[l]);
            let tri = f.map(|n| {
                *remap.entry(n).or_insert_with(|| {
                    verts.push(self.nodes[n]);
                    node_of.push(n);
                    verts.len() - 1
                })
            });
            tris.push(tri);
        }
        (TriSurface::from_parts(verts, tris), node_of)
    }
}

/// Sorted node triple of the face opposite local vertex `k`.
pub(crate) fn face_key(t: &[usize; 4], k: usize) -> [usize; 3] {
    let mut f = TET_FACES[k].map(|l| t[l]);
    f.sort_unstable();
    f
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriSurface {
    pub vertices: Vec<Point3>,
    pub triangles: Vec<[usize; 3]>,
    pub normals: Vec<Point3>,
}

impl TriSurface {
    /// Builds a surface and computes unit face normals from the winding.
    pub fn from_parts(vertices: Vec<Point3>, triangles: Vec<[usize; 3]>) -> Self {
        let normals = triangles
            .iter()
            .map(|t| {
                let n = (vertices[t[1]] - vertices[t[0]]).cross(&(vertices[t[2]] - vertices[t[0]]));
                let len = n.norm();
                if len > 0.0 {
                    n / len
                } else {
                    n
                }
            })
            .collect();
        TriSurface {
            vertices,
            triangles,
            normals,
        }
    }

    pub fn corners(&self, t: usize) -> [Point3; 3] {
        self.triangles[t].map(|i| self.vertices[i])
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.corners(t);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn bounding_box(&self) -> Aabb {
        Aabb::from_points(&self.vertices)
    }

    pub fn mean_edge_length(&self) -> f64 {
        let mut sum = 0.0;
        for t in 0..self.triangles.len() {
            let [a, b, c] = self.corners(t);
            sum += (b - a).norm() + (c - b).norm() + (a - c).norm();
        }
        sum / (3 * self.triangles.len().max(1)) as f64
    }

    /// Volume enclosed by a closed, outward-wound surface (divergence theorem).
    pub fn enclosed_volume(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| {
                let [a, b, c] = self.corners(t);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    /// Checks that every directed edge is matched by exactly one opposite edge
    /// and that every normal is unit length.
    pub fn check_closed(&self) -> Result<()> {
        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        for (ti, t) in self.triangles.iter().enumerate() {
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                return Err(Error::Topology(format!("triangle {ti} is degenerate")));
            }
            for k in 0..3 {
                let e = (t[k], t[(k + 1) % 3]);
                if directed.insert(e, ti).is_some() {
                    return Err(Error::Topology(format!(
                        "edge ({}, {}) traversed twice in the same direction",
                        e.0, e.1
                    )));
                }
            }
        }
        for &(a, b) in directed.keys() {
            if !directed.contains_key(&(b, a)) {
                return Err(Error::Topology(format!("open edge ({a}, {b})")));
            }
        }
        for (ti, n) in self.normals.iter().enumerate() {
            if (n.norm() - 1.0).abs() > 1e-12 {
                return Err(Error::Topology(format!("triangle {ti} has no unit normal")));
            }
        }
        Ok(())
    }

    pub fn translated(&self, by: &Point3) -> Self {
        TriSurface {
            vertices: self.vertices.iter().map(|v| v + by).collect(),
            triangles: self.triangles.clone(),
            normals: self.normals.clone(),
        }
    }
}

/// A (time, nodal positions, scalar measures) series collected by the scenarios.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimulationOutput {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub snapshots: Vec<(f64, Vec<Point3>)>,
}

impl SimulationOutput {
    pub fn new(columns: &[&str]) -> Self {
        SimulationOutput {
            columns: columns.iter().map(|s| s.to_string()).collect(),
            ..Default::default()
        }
    }

    /// Appends a record. The `time` column (or the first one) must not decrease.
    pub fn push(&mut self, row: Vec<f64>) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(Error::Argument(format!(
                "record has {} values, expected {}",
                row.len(),
                self.columns.len()
            )));
        }
        let t = self.columns.iter().position(|c| c == "time").unwrap_or(0);
        if let Some(last) = self.rows.last() {
            if row[t] < last[t] {
                return Err(Error::Argument("time stamps must be monotone".into()));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }
}
