//! Corotational Euler-Bernoulli beam with 6 DOFs per node, used for the needle.

use nalgebra::{Matrix3, Rotation3, SMatrix, Vector3};

use crate::error::{Error, Result};
use crate::fem::{Mat12, Material, Vec12};
use crate::geometry::Point3;

/// Rotational inertia as a fraction of the translational nodal mass.
pub const ROTATIONAL_INERTIA: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Section {
    pub radius: f64,
}

impl Section {
    pub fn area(&self) -> f64 {
        std::f64::consts::PI * self.radius.powi(2)
    }

    /// Second moment of area about either bending axis.
    pub fn inertia(&self) -> f64 {
        std::f64::consts::PI * self.radius.powi(4) / 4.0
    }

    pub fn polar(&self) -> f64 {
        std::f64::consts::PI * self.radius.powi(4) / 2.0
    }
}

/// Local stiffness of a 2-node beam, DOFs per node `(u, v, w, θx, θy, θz)`
/// with `x` along the element axis.
pub fn beam_element_stiffness(length: f64, material: &Material, section: &Section) -> Mat12 {
    let l = length;
    let e = material.young;
    let a = section.area();
    let i = section.inertia();
    let gj = material.shear_modulus() * section.polar();
    let mut k = Mat12::zeros();
    let mut set = |r: usize, c: usize, v: f64| {
        k[(r, c)] = v;
        k[(c, r)] = v;
    };
    let ea = e * a / l;
    set(0, 0, ea);
    set(6, 6, ea);
    set(0, 6, -ea);
    let tj = gj / l;
    set(3, 3, tj);
    set(9, 9, tj);
    set(3, 9, -tj);
    let (k1, k2, k3, k4) = (12.0 * e * i / l.powi(3), 6.0 * e * i / l.powi(2), 4.0 * e * i / l, 2.0 * e * i / l);
    // bending in the x-y plane: v, θz
    set(1, 1, k1);
    set(7, 7, k1);
    set(1, 7, -k1);
    set(1, 5, k2);
    set(1, 11, k2);
    set(5, 7, -k2);
    set(7, 11, -k2);
    set(5, 5, k3);
    set(11, 11, k3);
    set(5, 11, k4);
    // bending in the x-z plane: w, θy
    set(2, 2, k1);
    set(8, 8, k1);
    set(2, 8, -k1);
    set(2, 4, -k2);
    set(2, 10, -k2);
    set(4, 8, k2);
    set(8, 10, k2);
    set(4, 4, k3);
    set(10, 10, k3);
    set(4, 10, k4);
    k
}

/// Rotation vector of a rotation matrix.
pub fn log_rotation(r: &Matrix3<f64>) -> Vector3<f64> {
    let w = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]) * 0.5;
    let sin = w.norm();
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    if sin < 1e-12 && cos > 0.0 {
        return w;
    }
    if sin < 1e-6 && cos < 0.0 {
        // near a half turn: axis from the largest diagonal entry of (R + I) / 2
        let b = (r + Matrix3::identity()) * 0.5;
        let k = b.diagonal().imax();
        let mut axis = b.column(k).into_owned() / b[(k, k)].max(1e-300).sqrt();
        if axis.dot(&w) < 0.0 {
            axis = -axis;
        }
        return axis.normalize() * sin.atan2(cos);
    }
    w * (sin.atan2(cos) / sin)
}

pub fn exp_rotation(w: &Vector3<f64>) -> Matrix3<f64> {
    *Rotation3::new(*w).matrix()
}

/// Element frame with its first column along the chord `a → b` and the second
/// the Gram-Schmidt projection of `reference_y`.
pub fn beam_frame_update(a: &Point3, b: &Point3, reference_y: &Vector3<f64>) -> Result<Matrix3<f64>> {
    let chord = b - a;
    let len = chord.norm();
    if !(len > 0.0) {
        return Err(Error::Geometry("zero-length beam segment".into()));
    }
    let e1 = chord / len;
    let mut y = reference_y - e1 * reference_y.dot(&e1);
    if y.norm() < 1e-8 {
        // reference axis parallel to the chord; pick any orthogonal one
        let trial = if e1.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        y = trial - e1 * trial.dot(&e1);
    }
    let e2 = y.normalize();
    let e3 = e1.cross(&e2);
    Ok(Matrix3::from_columns(&[e1, e2, e3]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamMesh {
    pub rest_positions: Vec<Point3>,
    /// Rest node frames; column 0 is the beam tangent.
    pub rest_frames: Vec<Matrix3<f64>>,
    pub segments: Vec<[usize; 2]>,
    pub section: Section,
    pub material: Material,
    rest_element_frames: Vec<Matrix3<f64>>,
    rest_lengths: Vec<f64>,
    local_stiffness: Vec<Mat12>,
}

impl BeamMesh {
    /// A straight beam of `elements` equal segments starting at `start`.
    pub fn straight(start: Point3, direction: Vector3<f64>, length: f64, elements: usize, section: Section, material: Material) -> Result<Self> {
        if elements == 0 || !(length > 0.0) || !(section.radius > 0.0) {
            return Err(Error::Argument("beam needs positive length, radius and at least one element".into()));
        }
        let t = direction.normalize();
        let frame = beam_frame_update(&Point3::zeros(), &t, &Vector3::z().cross(&t).try_normalize(1e-12).unwrap_or(Vector3::y()))?;
        let positions = (0..=elements).map(|k| start + t * (length * k as f64 / elements as f64)).collect();
        let segments = (0..elements).map(|k| [k, k + 1]).collect();
        Self::new(positions, vec![frame; elements + 1], segments, section, material)
    }

    pub fn new(
        rest_positions: Vec<Point3>,
        rest_frames: Vec<Matrix3<f64>>,
        segments: Vec<[usize; 2]>,
        section: Section,
        material: Material,
    ) -> Result<Self> {
        material.validate()?;
        let mut rest_element_frames = Vec::with_capacity(segments.len());
        let mut rest_lengths = Vec::with_capacity(segments.len());
        let mut local_stiffness = Vec::with_capacity(segments.len());
        for s in &segments {
            let (a, b) = (rest_positions[s[0]], rest_positions[s[1]]);
            let y = rest_frames[s[0]].column(1) + rest_frames[s[1]].column(1);
            let r0 = beam_frame_update(&a, &b, &y)?;
            let l = (b - a).norm();
            rest_element_frames.push(r0);
            rest_lengths.push(l);
            local_stiffness.push(beam_element_stiffness(l, &material, &section));
        }
        Ok(BeamMesh {
            rest_positions,
            rest_frames,
            segments,
            section,
            material,
            rest_element_frames,
            rest_lengths,
            local_stiffness,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.rest_positions.len()
    }

    pub fn rest_length(&self, segment: usize) -> f64 {
        self.rest_lengths[segment]
    }

    pub fn total_length(&self) -> f64 {
        self.rest_lengths.iter().sum()
    }

    pub fn local_stiffness(&self, segment: usize) -> &Mat12 {
        &self.local_stiffness[segment]
    }

    /// Lumped nodal masses: translational and rotational per node.
    pub fn lumped_mass(&self) -> Vec<(f64, f64)> {
        let mut m = vec![0.0; self.num_nodes()];
        let rho_a = self.material.density * self.section.area();
        for (s, seg) in self.segments.iter().enumerate() {
            let half = 0.5 * rho_a * self.rest_lengths[s];
            m[seg[0]] += half;
            m[seg[1]] += half;
        }
        m.into_iter().map(|t| (t, t * ROTATIONAL_INERTIA)).collect()
    }

    /// Current element frame from node positions and frames.
    pub fn element_frame(&self, segment: usize, positions: &[Point3], frames: &[Matrix3<f64>]) -> Result<Matrix3<f64>> {
        let [a, b] = self.segments[segment];
        let r0 = self.rest_element_frames[segment];
        let ya = frames[a] * self.rest_frames[a].transpose() * r0.column(1);
        let yb = frames[b] * self.rest_frames[b].transpose() * r0.column(1);
        beam_frame_update(&positions[a], &positions[b], &(ya + yb))
    }

    /// Corotated force (forces then moments per node, global axes) and
    /// frozen-frame tangent of one segment.
    pub fn element_force(&self, segment: usize, positions: &[Point3], frames: &[Matrix3<f64>]) -> Result<(Vec12, Mat12)> {
        let [a, b] = self.segments[segment];
        let r = self.element_frame(segment, positions, frames)?;
        let r0 = self.rest_element_frames[segment];
        let mut d = Vec12::zeros();
        for (slot, n) in [(0usize, a), (6, b)] {
            let u = r.transpose() * (positions[n] - positions[a]) - r0.transpose() * (self.rest_positions[n] - self.rest_positions[a]);
            let dq = frames[n] * self.rest_frames[n].transpose();
            let theta = log_rotation(&(r.transpose() * dq * r0));
            d.fixed_rows_mut::<3>(slot).copy_from(&u);
            d.fixed_rows_mut::<3>(slot + 3).copy_from(&theta);
        }
        let k = &self.local_stiffness[segment];
        let fl = k * d;
        let mut f = Vec12::zeros();
        let mut kg = Mat12::zeros();
        for i in 0..4 {
            f.fixed_rows_mut::<3>(3 * i).copy_from(&(r * fl.fixed_rows::<3>(3 * i)));
            for j in 0..4 {
                let block = r * k.fixed_view::<3, 3>(3 * i, 3 * j) * r.transpose();
                kg.fixed_view_mut::<3, 3>(3 * i, 3 * j).copy_from(&block);
            }
        }
        Ok((f, kg))
    }

    /// Hermite shape weights at parameter `s ∈ [0, 1]` of a segment:
    /// `(N1, N2·L, N3, N4·L)` for position, tangent a, position b, tangent b.
    pub fn hermite_weights(&self, segment: usize, s: f64) -> [f64; 4] {
        let l = self.rest_lengths[segment];
        let (s2, s3) = (s * s, s * s * s);
        [1.0 - 3.0 * s2 + 2.0 * s3, l * (s - 2.0 * s2 + s3), 3.0 * s2 - 2.0 * s3, l * (s3 - s2)]
    }

    /// Point on the deformed centreline.
    pub fn point_at(&self, segment: usize, s: f64, positions: &[Point3], frames: &[Matrix3<f64>]) -> Point3 {
        let [a, b] = self.segments[segment];
        let w = self.hermite_weights(segment, s);
        let ta = frames[a].column(0).into_owned();
        let tb = frames[b].column(0).into_owned();
        positions[a] * w[0] + ta * w[1] + positions[b] * w[2] + tb * w[3]
    }

    /// Linearised velocity map at a centreline point: the velocity along `dir`
    /// is `Σ coeff · (v_node or ω_node)` over the returned `(node, is_rotation, coeff)`.
    pub fn velocity_row(&self, segment: usize, s: f64, dir: &Vector3<f64>, frames: &[Matrix3<f64>]) -> [(usize, bool, Vector3<f64>); 4] {
        let [a, b] = self.segments[segment];
        let w = self.hermite_weights(segment, s);
        let ta = frames[a].column(0).into_owned();
        let tb = frames[b].column(0).into_owned();
        [
            (a, false, dir * w[0]),
            (a, true, ta.cross(dir) * w[1]),
            (b, false, dir * w[2]),
            (b, true, tb.cross(dir) * w[3]),
        ]
    }
}

/// Expands a 3×3 rotation to the 12×12 block-diagonal form.
pub fn block_diagonal(r: &Matrix3<f64>) -> SMatrix<f64, 12, 12> {
    let mut t = Mat12::zeros();
    for i in 0..4 {
        t.fixed_view_mut::<3, 3>(3 * i, 3 * i).copy_from(r);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector, SymmetricEigen};

    fn needle_material() -> Material {
        Material::new(20000.0, 0.2, 1.0).unwrap()
    }

    #[test]
    fn axial_entry_and_symmetry() {
        let s = Section { radius: 0.05 };
        let k = beam_element_stiffness(0.28, &needle_material(), &s);
        assert!((k[(0, 0)] - 20000.0 * s.area() / 0.28).abs() < 1e-9);
        assert!((k - k.transpose()).norm() < 1e-12 * k.norm());
        let eig = SymmetricEigen::new(k).eigenvalues;
        let max = eig.max();
        assert_eq!(eig.iter().filter(|&&l| l.abs() < 1e-9 * max).count(), 6);
    }

    #[test]
    fn rigid_modes_are_null() {
        let l = 0.7;
        let k = beam_element_stiffness(l, &needle_material(), &Section { radius: 0.05 });
        // small rotation about z: v_b = l θ, both θz = θ
        let mut rot = Vec12::zeros();
        rot[5] = 1.0;
        rot[11] = 1.0;
        rot[7] = l;
        assert!((k * rot).norm() < 1e-10 * k.norm());
        let mut rot_y = Vec12::zeros();
        rot_y[4] = 1.0;
        rot_y[10] = 1.0;
        rot_y[8] = -l;
        assert!((k * rot_y).norm() < 1e-10 * k.norm());
    }

    #[test]
    fn cantilever_tip_deflection() {
        let section = Section { radius: 0.05 };
        let m = needle_material();
        let beam = BeamMesh::straight(Point3::zeros(), Vector3::x(), 2.8, 10, section, m).unwrap();
        let n = beam.num_nodes();
        let mut k = DMatrix::zeros(6 * n, 6 * n);
        for s in 0..beam.segments.len() {
            let (_, ke) = beam.element_force(s, &beam.rest_positions, &beam.rest_frames).unwrap();
            let [a, b] = beam.segments[s];
            for (bi, ni) in [(0, a), (1, b)] {
                for (bj, nj) in [(0, a), (1, b)] {
                    let blk = ke.fixed_view::<6, 6>(6 * bi, 6 * bj);
                    let mut view = k.view_mut((6 * ni, 6 * nj), (6, 6));
                    view += blk;
                }
            }
        }
        let free = 6..6 * n;
        let kf = k.view((6, 6), (6 * n - 6, 6 * n - 6)).into_owned();
        let mut f = DVector::zeros(free.len());
        f[6 * (n - 1) - 6 + 2] = 1.0; // unit load along z at the tip
        let u = kf.lu().solve(&f).unwrap();
        let tip = u[6 * (n - 1) - 6 + 2];
        let exact = 2.8f64.powi(3) / (3.0 * 20000.0 * section.inertia());
        assert!((tip - exact).abs() / exact < 0.005, "{tip} vs {exact}");
    }

    #[test]
    fn frame_update_cases() {
        let r = beam_frame_update(&Point3::zeros(), &Point3::x(), &Vector3::y()).unwrap();
        assert!((r - Matrix3::identity()).norm() < 1e-15);
        let r = beam_frame_update(&Point3::zeros(), &Point3::y(), &Vector3::y()).unwrap();
        assert!((r.column(0) - Vector3::y()).norm() < 1e-12);
        assert!(beam_frame_update(&Point3::x(), &Point3::x(), &Vector3::y()).is_err());
    }

    #[test]
    fn rigid_rotation_is_force_free() {
        let beam = BeamMesh::straight(Point3::new(0.1, 0.2, 0.3), Vector3::new(1.0, 0.2, 0.0), 2.8, 5, Section { radius: 0.05 }, needle_material()).unwrap();
        let q = exp_rotation(&Vector3::new(0.4, -1.2, 0.3));
        let shift = Vector3::new(1.0, -2.0, 0.5);
        let pos: Vec<Point3> = beam.rest_positions.iter().map(|p| q * p + shift).collect();
        let frames: Vec<_> = beam.rest_frames.iter().map(|f| q * f).collect();
        for s in 0..beam.segments.len() {
            let (f, _) = beam.element_force(s, &pos, &frames).unwrap();
            assert!(f.norm() < 1e-8, "{}", f.norm());
        }
    }

    #[test]
    fn hermite_point_interpolates_ends() {
        let beam = BeamMesh::straight(Point3::zeros(), Vector3::x(), 1.0, 2, Section { radius: 0.05 }, needle_material()).unwrap();
        let p = beam.point_at(0, 0.5, &beam.rest_positions, &beam.rest_frames);
        assert!((p - Point3::new(0.25, 0.0, 0.0)).norm() < 1e-14);
        let p = beam.point_at(1, 1.0, &beam.rest_positions, &beam.rest_frames);
        assert!((p - Point3::new(1.0, 0.0, 0.0)).norm() < 1e-14);
    }
}
