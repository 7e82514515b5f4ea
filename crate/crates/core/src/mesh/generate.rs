use std::collections::HashMap;

use super::{TetMesh, TriSurface};
use crate::error::{Error, Result};
use crate::geometry::{tet_signed_volume, Point3};

/// Kuhn split of a hexahedron along its `0 → 6` diagonal. Every cell uses the
/// same diagonal so neighbouring cells share conforming face diagonals.
const HEX_TO_TETS: [[usize; 4]; 6] = [
    [0, 1, 2, 6],
    [0, 3, 2, 6],
    [0, 3, 7, 6],
    [0, 4, 7, 6],
    [0, 4, 5, 6],
    [0, 1, 5, 6],
];

fn structured_grid(counts: [usize; 3], place: impl Fn(usize, usize, usize) -> Point3) -> (Vec<Point3>, Vec<[usize; 4]>) {
    let [nx, ny, nz] = counts;
    let id = |i: usize, j: usize, k: usize| i + nx * (j + ny * k);
    let mut nodes = Vec::with_capacity(nx * ny * nz);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                nodes.push(place(i, j, k));
            }
        }
    }
    let mut tets = Vec::with_capacity((nx - 1) * (ny - 1) * (nz - 1) * 6);
    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let hex = [
                    id(i, j, k),
                    id(i + 1, j, k),
                    id(i + 1, j + 1, k),
                    id(i, j + 1, k),
                    id(i, j, k + 1),
                    id(i + 1, j, k + 1),
                    id(i + 1, j + 1, k + 1),
                    id(i, j + 1, k + 1),
                ];
                for pattern in HEX_TO_TETS {
                    let mut t = pattern.map(|l| hex[l]);
                    if tet_signed_volume(&nodes[t[0]], &nodes[t[1]], &nodes[t[2]], &nodes[t[3]]) < 0.0 {
                        t.swap(2, 3);
                    }
                    tets.push(t);
                }
            }
        }
    }
    (nodes, tets)
}

/// Structured tetrahedral mesh of the box `[0, dims]` with `counts` nodes per axis.
pub fn generate_box_mesh(dims: [f64; 3], counts: [usize; 3]) -> Result<TetMesh> {
    if counts.iter().any(|&n| n < 2) {
        return Err(Error::Argument(format!("node counts must be >= 2, got {counts:?}")));
    }
    if dims.iter().any(|&d| !(d > 0.0) || !d.is_finite()) {
        return Err(Error::Argument(format!("box dimensions must be positive, got {dims:?}")));
    }
    let h = [0, 1, 2].map(|a| dims[a] / (counts[a] - 1) as f64);
    let (nodes, tets) = structured_grid(counts, |i, j, k| {
        Point3::new(
            if i == counts[0] - 1 { dims[0] } else { i as f64 * h[0] },
            if j == counts[1] - 1 { dims[1] } else { j as f64 * h[1] },
            if k == counts[2] - 1 { dims[2] } else { k as f64 * h[2] },
        )
    });
    Ok(TetMesh { nodes, tets })
}

/// Boundary-fitted tetrahedral mesh of an ellipsoid, obtained by mapping a
/// structured cube mesh with `n` nodes per axis onto the unit ball and scaling.
pub fn generate_ball_mesh(center: Point3, radii: [f64; 3], n: usize) -> Result<TetMesh> {
    if n < 3 {
        return Err(Error::Argument(format!("ball mesh needs at least 3 nodes per axis, got {n}")));
    }
    if radii.iter().any(|&r| !(r > 0.0)) {
        return Err(Error::Argument(format!("radii must be positive, got {radii:?}")));
    }
    let s = |i: usize| -1.0 + 2.0 * i as f64 / (n - 1) as f64;
    let (nodes, tets) = structured_grid([n, n, n], |i, j, k| {
        let (x, y, z) = (s(i), s(j), s(k));
        let (x2, y2, z2) = (x * x, y * y, z * z);
        let b = Point3::new(
            x * (1.0 - y2 / 2.0 - z2 / 2.0 + y2 * z2 / 3.0).sqrt(),
            y * (1.0 - z2 / 2.0 - x2 / 2.0 + z2 * x2 / 3.0).sqrt(),
            z * (1.0 - x2 / 2.0 - y2 / 2.0 + x2 * y2 / 3.0).sqrt(),
        );
        center + Point3::new(b.x * radii[0], b.y * radii[1], b.z * radii[2])
    });
    TetMesh::new(nodes, tets)
}

/// Icosphere: an icosahedron subdivided `subdivisions` times and projected onto
/// the sphere. Triangles are wound so normals point outward.
pub fn generate_sphere_surface(center: Point3, radius: f64, subdivisions: usize) -> Result<TriSurface> {
    if !(radius > 0.0) {
        return Err(Error::Argument(format!("radius must be positive, got {radius}")));
    }
    let (unit, tris) = unit_icosphere(subdivisions);
    let verts = unit.into_iter().map(|u| center + u * radius).collect();
    Ok(TriSurface::from_parts(verts, tris))
}

/// Axis-aligned ellipsoid surface built from a scaled icosphere.
pub fn generate_ellipsoid_surface(center: Point3, radii: [f64; 3], subdivisions: usize) -> Result<TriSurface> {
    if radii.iter().any(|&r| !(r > 0.0)) {
        return Err(Error::Argument(format!("radii must be positive, got {radii:?}")));
    }
    let (unit, tris) = unit_icosphere(subdivisions);
    let verts = unit
        .into_iter()
        .map(|u| center + Point3::new(u.x * radii[0], u.y * radii[1], u.z * radii[2]))
        .collect();
    Ok(TriSurface::from_parts(verts, tris))
}

fn unit_icosphere(subdivisions: usize) -> (Vec<Point3>, Vec<[usize; 3]>) {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Point3> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Point3::new(x, y, z).normalize())
    .collect();
    let mut tris: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<Point3>| {
            let key = (a.min(b), a.max(b));
            *mid.entry(key).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) * 0.5).normalize());
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(tris.len() * 4);
        for [a, b, c] in tris {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        tris = next;
    }
    (verts, tris)
}
