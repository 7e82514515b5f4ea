use crate::error::{Error, Result};
use crate::geometry::{Aabb, Point3};
use crate::mesh::{TetMesh, TriSurface};

/// Upper bound on subcube count; the cube size grows if a request exceeds it.
const MAX_CELLS: usize = 1 << 23;

/// Uniform subdivision of the (inflated) mesh bounding box into subcubes, with
/// incidence lists for surface triangles and mesh tetrahedra.
#[derive(Debug, Clone)]
pub struct AccelGrid {
    pub origin: Point3,
    pub cube: f64,
    pub dims: [usize; 3],
    tri_cells: Vec<Vec<u32>>,
    tet_cells: Vec<Vec<u32>>,
    boundary_cells: Vec<usize>,
}

/// Default subcube edge: twice the mean surface edge length.
pub fn default_cube_size(surface: &TriSurface) -> f64 {
    2.0 * surface.mean_edge_length()
}

impl AccelGrid {
    /// Builds the grid; surface triangle boxes are inflated by `inflate`.
    pub fn build(mesh: &TetMesh, surface: Option<&TriSurface>, target_cube_size: f64, inflate: f64) -> Result<Self> {
        if !(target_cube_size > 0.0) || !target_cube_size.is_finite() {
            return Err(Error::Argument(format!("cube size must be positive, got {target_cube_size}")));
        }
        let bb = mesh.bounding_box();
        let ext = bb.max - bb.min;
        let mut cube = target_cube_size;
        let dims = loop {
            let d = [0, 1, 2].map(|k| ((ext[k] / cube).ceil() as usize).max(1) + 2);
            if d[0] * d[1] * d[2] <= MAX_CELLS {
                break d;
            }
            cube *= 1.5;
        };
        let origin = bb.min.add_scalar(-cube);
        let n = dims[0] * dims[1] * dims[2];
        let mut grid = AccelGrid {
            origin,
            cube,
            dims,
            tri_cells: vec![Vec::new(); n],
            tet_cells: vec![Vec::new(); n],
            boundary_cells: Vec::new(),
        };
        for e in 0..mesh.num_tets() {
            let b = mesh.tet_bounding_box(e);
            let cells: Vec<usize> = grid.cells_overlapping(&b).collect();
            for c in cells {
                grid.tet_cells[c].push(e as u32);
            }
        }
        if let Some(s) = surface {
            for t in 0..s.triangles.len() {
                let b = Aabb::from_points(&s.corners(t)).inflated(inflate);
                let cells: Vec<usize> = grid.cells_overlapping(&b).collect();
                for c in cells {
                    grid.tri_cells[c].push(t as u32);
                }
            }
        }
        let mut is_boundary = vec![false; n];
        for (e, k) in mesh.boundary_faces() {
            let t = mesh.tets[e];
            let face = crate::geometry::TET_FACES[k].map(|l| mesh.nodes[t[l]]);
            for c in grid.cells_overlapping(&Aabb::from_points(&face)) {
                is_boundary[c] = true;
            }
        }
        grid.boundary_cells = (0..n).filter(|&c| is_boundary[c]).collect();
        Ok(grid)
    }

    pub fn num_cells(&self) -> usize {
        self.tet_cells.len()
    }

    fn coord(&self, x: f64, axis: usize) -> usize {
        let i = ((x - self.origin[axis]) / self.cube).floor();
        i.clamp(0.0, (self.dims[axis] - 1) as f64) as usize
    }

    pub fn cell_index(&self, p: &Point3) -> usize {
        let [i, j, k] = [0, 1, 2].map(|a| self.coord(p[a], a));
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn cell_box(&self, c: usize) -> Aabb {
        let i = c % self.dims[0];
        let j = (c / self.dims[0]) % self.dims[1];
        let k = c / (self.dims[0] * self.dims[1]);
        let min = self.origin + Point3::new(i as f64, j as f64, k as f64) * self.cube;
        Aabb {
            min,
            max: min.add_scalar(self.cube),
        }
    }

    /// Indices of all subcubes overlapping `b` (clamped to the grid).
    pub fn cells_overlapping(&self, b: &Aabb) -> impl Iterator<Item = usize> + '_ {
        let lo = [0, 1, 2].map(|a| self.coord(b.min[a], a));
        let hi = [0, 1, 2].map(|a| self.coord(b.max[a], a));
        let (nx, ny) = (self.dims[0], self.dims[1]);
        (lo[2]..=hi[2]).flat_map(move |k| {
            (lo[1]..=hi[1]).flat_map(move |j| (lo[0]..=hi[0]).map(move |i| i + nx * (j + ny * k)))
        })
    }

    pub fn triangles_in(&self, cell: usize) -> &[u32] {
        &self.tri_cells[cell]
    }

    pub fn tets_in(&self, cell: usize) -> &[u32] {
        &self.tet_cells[cell]
    }

    /// Subcubes touching the background-mesh boundary.
    pub fn boundary_cells(&self) -> &[usize] {
        &self.boundary_cells
    }

    /// Tets whose bounding boxes share a subcube with the triangle's box,
    /// sorted and deduplicated.
    pub fn tets_near_triangle(&self, surface: &TriSurface, t: usize, inflate: f64) -> Vec<usize> {
        let b = Aabb::from_points(&surface.corners(t)).inflated(inflate);
        let mut out: Vec<usize> = self
            .cells_overlapping(&b)
            .flat_map(|c| self.tet_cells[c].iter().map(|&e| e as usize))
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::generate_box_mesh;

    #[test]
    fn single_tet_single_cube() {
        let m = TetMesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
                Point3::new(0.0, 0.0, 1.0),
            ],
            vec![[0, 1, 2, 3]],
        )
        .unwrap();
        let g = AccelGrid::build(&m, None, 2.0, 0.0).unwrap();
        assert_eq!(g.dims, [3, 3, 3]);
        let c = g.cell_index(&Point3::new(0.25, 0.25, 0.25));
        assert_eq!(g.tets_in(c), &[0]);
    }

    #[test]
    fn triangle_spanning_two_cubes() {
        let m = generate_box_mesh([2.0, 1.0, 1.0], [3, 2, 2]).unwrap();
        let s = TriSurface::from_parts(
            vec![
                Point3::new(0.8, 0.4, 0.4),
                Point3::new(1.2, 0.4, 0.4),
                Point3::new(1.0, 0.6, 0.45),
            ],
            vec![[0, 1, 2]],
        );
        let g = AccelGrid::build(&m, Some(&s), 1.0, 0.0).unwrap();
        let holding: Vec<usize> = (0..g.num_cells()).filter(|&c| !g.triangles_in(c).is_empty()).collect();
        assert_eq!(holding.len(), 2);
        assert_eq!(
            holding,
            vec![g.cell_index(&Point3::new(0.9, 0.5, 0.4)), g.cell_index(&Point3::new(1.1, 0.5, 0.4))]
        );
    }

    #[test]
    fn every_tet_is_listed_where_it_overlaps() {
        let m = generate_box_mesh([1.0, 1.0, 1.0], [4, 4, 4]).unwrap();
        let g = AccelGrid::build(&m, None, 0.3, 0.0).unwrap();
        for e in 0..m.num_tets() {
            let b = m.tet_bounding_box(e);
            for c in 0..g.num_cells() {
                if g.cell_box(c).overlaps(&b) && !g.cell_box(c).inflated(-1e-12).overlaps(&b) {
                    continue; // touching only
                }
                assert_eq!(g.cell_box(c).overlaps(&b), g.tets_in(c).contains(&(e as u32)), "tet {e} cell {c}");
            }
        }
        assert!(!g.boundary_cells().is_empty());
    }
}
