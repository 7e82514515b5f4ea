//! Independent oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use cutfem::beam::{exp_rotation, BeamMesh, Section};
use cutfem::classify::ElementLabel;
use cutfem::fem::{corot_force_and_tangent, deformation_gradient, element_stiffness, polar_rotation, Mat12, Material, Vec12};
use cutfem::geometry::TET_EDGES;
use cutfem::mesh::{generate_box_mesh, generate_sphere_surface, TetMesh, TriSurface};
use cutfem::Point3;
use nalgebra::{DMatrix, DVector, Matrix3, Matrix4x3, Rotation3, Vector3};

/// Plane-then-barycentric segment/triangle test, written independently of the
/// library's Möller–Trumbore routine.
pub fn segment_hits(p: &Point3, q: &Point3, tri: &[Point3; 3]) -> bool {
    let n = (tri[1] - tri[0]).cross(&(tri[2] - tri[0]));
    let dp = n.dot(&(p - tri[0]));
    let dq = n.dot(&(q - tri[0]));
    if dp * dq > 0.0 || dp == dq {
        return false;
    }
    let s = dp / (dp - dq);
    let x = p + (q - p) * s;
    (0..3).all(|k| {
        let a = tri[k];
        let b = tri[(k + 1) % 3];
        n.dot(&(b - a).cross(&(x - a))) >= 0.0
    })
}

/// Parity of ray crossings along a fixed skew direction.
pub fn inside(s: &TriSurface, p: &Point3) -> bool {
    let far = p + Point3::new(0.5377, 0.3190, 0.7806).normalize() * 1e3;
    let hits = (0..s.triangles.len())
        .filter(|&t| segment_hits(p, &far, &s.corners(t)))
        .count();
    hits % 2 == 1
}

/// Exhaustive labels: every tet against every triangle.
pub fn labels(mesh: &TetMesh, s: &TriSurface) -> Vec<ElementLabel> {
    let inside: Vec<bool> = mesh.nodes.iter().map(|p| inside(s, p)).collect();
    mesh.tets
        .iter()
        .map(|t| {
            let crossed = TET_EDGES.iter().any(|&(i, j)| {
                inside[t[i]] != inside[t[j]]
                    || (0..s.triangles.len()).any(|k| segment_hits(&mesh.nodes[t[i]], &mesh.nodes[t[j]], &s.corners(k)))
            });
            if crossed {
                ElementLabel::Cut
            } else if inside[t[0]] {
                ElementLabel::Inside
            } else {
                ElementLabel::Outside
            }
        })
        .collect()
}

/// Face-adjacent pairs labelled Inside/Outside, which the cut layer must separate.
pub fn separation_violations(mesh: &TetMesh, labels: &[ElementLabel]) -> Vec<(usize, usize)> {
    let mut bad = Vec::new();
    for (e, adj) in mesh.adjacency().iter().enumerate() {
        for &nb in adj.iter().flatten() {
            let pair = (labels[e], labels[nb]);
            if pair == (ElementLabel::Inside, ElementLabel::Outside) || pair == (ElementLabel::Outside, ElementLabel::Inside) {
                bad.push((e, nb));
            }
        }
    }
    bad
}

pub fn sphere_in_beam(counts: [usize; 3], subdivisions: usize) -> (TetMesh, TriSurface) {
    let mesh = generate_box_mesh([6.0, 2.0, 2.0], counts).unwrap();
    let s = generate_sphere_surface(Point3::new(3.0, 1.0, 1.0), 0.7, subdivisions).unwrap();
    (mesh, s)
}

fn corot_force(k: &Mat12, x: &[Point3; 4], rest: &[Point3; 4], g: &Matrix4x3<f64>) -> Vec12 {
    let r = polar_rotation(&deformation_gradient(x, g)).rotation;
    corot_force_and_tangent(&r, k, x, rest).0
}

/// `‖f‖ / (‖K‖ max|x|)` of a tet moved rigidly by rotation vector `w` and shift `t`.
pub fn tet_rigid_residual(rest: &[Point3; 4], m: &Material, w: &Vector3<f64>, t: &Vector3<f64>) -> f64 {
    let em = element_stiffness(rest, m).unwrap();
    let q = exp_rotation(w);
    let x = rest.map(|p| q * p + t);
    let f = corot_force(&em.stiffness, &x, rest, &em.shape_gradients);
    f.norm() / (em.stiffness.norm() * x.iter().map(|p| p.norm()).fold(1.0, f64::max))
}

/// Largest relative force over the segments of a needle-like beam moved rigidly.
pub fn beam_rigid_residual(start: &Point3, dir: &Vector3<f64>, w: &Vector3<f64>, t: &Vector3<f64>) -> f64 {
    let m = Material::new(20000.0, 0.2, 1.0).unwrap();
    let beam = BeamMesh::straight(*start, *dir, 2.8, 7, Section { radius: 0.05 }, m).unwrap();
    let q = exp_rotation(w);
    let pos: Vec<Point3> = beam.rest_positions.iter().map(|p| q * p + t).collect();
    let frames: Vec<Matrix3<f64>> = beam.rest_frames.iter().map(|f| q * f).collect();
    (0..beam.segments.len())
        .map(|s| {
            let (f, k) = beam.element_force(s, &pos, &frames).unwrap();
            f.norm() / (k.norm() * pos.iter().map(|p| p.norm()).fold(1.0, f64::max))
        })
        .fold(0.0, f64::max)
}

/// Distance between the polar rotation and `U Vᵀ` from an SVD.
pub fn polar_svd_gap(f: &Matrix3<f64>) -> f64 {
    let svd = f.svd(true, true);
    let oracle = svd.u.unwrap() * svd.v_t.unwrap();
    (polar_rotation(f).rotation - oracle).norm()
}

/// Central differences of the corotated tet force, optionally with the
/// rotation frozen at its value in `x`.
pub fn tet_fd(k: &Mat12, x: &[Point3; 4], rest: &[Point3; 4], g: &Matrix4x3<f64>, frozen: bool) -> Mat12 {
    let r0 = polar_rotation(&deformation_gradient(x, g)).rotation;
    let h = 1e-6;
    let mut out = Mat12::zeros();
    for j in 0..12 {
        let mut plus = *x;
        let mut minus = *x;
        plus[j / 3][j % 3] += h;
        minus[j / 3][j % 3] -= h;
        let eval = |y: &[Point3; 4]| {
            if frozen {
                corot_force_and_tangent(&r0, k, y, rest).0
            } else {
                corot_force(k, y, rest, g)
            }
        };
        out.set_column(j, &((eval(&plus) - eval(&minus)) / (2.0 * h)));
    }
    out
}

/// Relative gap between the frozen-rotation tangent and finite differences
/// of the full corotated force, at deformation amplitudes `deltas` around a
/// rotated rest state. Returns `(frozen-rotation gap, gaps per delta)`.
pub fn tet_tangent_gaps(deltas: &[f64]) -> (f64, Vec<f64>) {
    let rest = [
        Point3::new(0.1, 0.0, -0.05),
        Point3::new(1.2, 0.1, 0.0),
        Point3::new(0.0, 0.9, 0.2),
        Point3::new(0.1, 0.2, 1.1),
    ];
    let em = element_stiffness(&rest, &Material::new(1000.0, 0.3, 1.0).unwrap()).unwrap();
    let q = *Rotation3::from_euler_angles(0.4, -0.9, 1.3).matrix();
    let dir = [
        Vector3::new(0.3, -0.1, 0.2),
        Vector3::new(-0.2, 0.4, 0.1),
        Vector3::new(0.1, 0.2, -0.3),
        Vector3::new(0.0, -0.3, 0.2),
    ];
    let deformed = |delta: f64| -> [Point3; 4] { std::array::from_fn(|a| q * (rest[a] + dir[a] * delta)) };
    let tangent = |x: &[Point3; 4]| {
        let r = polar_rotation(&deformation_gradient(x, &em.shape_gradients)).rotation;
        corot_force_and_tangent(&r, &em.stiffness, x, &rest).1
    };
    let x = deformed(0.1);
    let kt = tangent(&x);
    let frozen = (tet_fd(&em.stiffness, &x, &rest, &em.shape_gradients, true) - kt).norm() / kt.norm();
    let gaps = deltas
        .iter()
        .map(|&delta| {
            let x = deformed(delta);
            let kt = tangent(&x);
            (tet_fd(&em.stiffness, &x, &rest, &em.shape_gradients, false) - kt).norm() / kt.norm()
        })
        .collect();
    (frozen, gaps)
}

/// Finite differences of a beam segment's force over its 12 DOFs: node
/// translations and spatial rotation increments of the node frames.
pub fn beam_fd(beam: &BeamMesh, s: usize, pos: &[Point3], frames: &[Matrix3<f64>]) -> Mat12 {
    let [a, b] = beam.segments[s];
    let h = 1e-6;
    let mut out = Mat12::zeros();
    for j in 0..12 {
        let node = if j < 6 { a } else { b };
        let k = j % 6;
        let eval = |sign: f64| {
            let mut p = pos.to_vec();
            let mut f = frames.to_vec();
            if k < 3 {
                p[node][k] += sign * h;
            } else {
                let mut w = Vector3::zeros();
                w[k - 3] = sign * h;
                f[node] = exp_rotation(&w) * f[node];
            }
            beam.element_force(s, &p, &f).unwrap().0
        };
        out.set_column(j, &((eval(1.0) - eval(-1.0)) / (2.0 * h)));
    }
    out
}

/// Frozen-frame beam tangent against finite differences at a bent and
/// twisted configuration of amplitude `delta`, relative, over all segments.
pub fn beam_tangent_gap(delta: f64) -> f64 {
    let m = Material::new(20000.0, 0.2, 1.0).unwrap();
    let beam = BeamMesh::straight(Point3::new(0.2, -0.1, 0.3), Vector3::new(1.0, 0.3, -0.2), 1.4, 2, Section { radius: 0.05 }, m).unwrap();
    let q = exp_rotation(&Vector3::new(0.3, 1.1, -0.6));
    let bend = [Vector3::zeros(), Vector3::new(0.0, 0.3, -0.2), Vector3::new(0.1, -0.2, 0.4)];
    let twist = [Vector3::zeros(), Vector3::new(0.5, -0.3, 0.2), Vector3::new(-0.2, 0.6, 0.1)];
    let pos: Vec<Point3> = beam.rest_positions.iter().zip(&bend).map(|(p, d)| q * (p + d * delta)).collect();
    let frames: Vec<Matrix3<f64>> = beam
        .rest_frames
        .iter()
        .zip(&twist)
        .map(|(f, w)| exp_rotation(&(w * delta)) * q * f)
        .collect();
    (0..beam.segments.len())
        .map(|s| {
            let (_, kt) = beam.element_force(s, &pos, &frames).unwrap();
            (beam_fd(&beam, s, &pos, &frames) - kt).norm() / kt.norm()
        })
        .fold(0.0, f64::max)
}

/// `[A Jᵀ; J 0] [x; λ] = [b; c]` by dense LU.
pub fn monolithic_saddle(a: &DMatrix<f64>, j: &DMatrix<f64>, b: &DVector<f64>, c: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
    let (n, m) = (a.nrows(), j.nrows());
    let mut k = DMatrix::zeros(n + m, n + m);
    k.view_mut((0, 0), (n, n)).copy_from(a);
    k.view_mut((0, n), (n, m)).copy_from(&j.transpose());
    k.view_mut((n, 0), (m, n)).copy_from(j);
    let mut rhs = DVector::zeros(n + m);
    rhs.rows_mut(0, n).copy_from(b);
    rhs.rows_mut(n, m).copy_from(c);
    let sol = k.full_piv_lu().solve(&rhs)?;
    Some((sol.rows(0, n).into_owned(), sol.rows(n, m).into_owned()))
}
