//! Linear tetrahedra with corotated stiffness.

use nalgebra::{Matrix3, Matrix4, Matrix4x3, SMatrix, SVector};

use crate::embed::{EmbeddingTree, Region};
use crate::error::{Error, Result};
use crate::geometry::{barycentric, centroid, tet_signed_volume, Point3};

pub type Mat6 = SMatrix<f64, 6, 6>;
pub type Mat6x12 = SMatrix<f64, 6, 12>;
pub type Mat12 = SMatrix<f64, 12, 12>;
pub type Vec12 = SVector<f64, 12>;

pub const MAX_POISSON: f64 = 0.499;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Material {
    pub young: f64,
    pub poisson: f64,
    #[serde(default = "unit_density")]
    pub density: f64,
}

fn unit_density() -> f64 {
    1.0
}

impl Material {
    pub fn new(young: f64, poisson: f64, density: f64) -> Result<Self> {
        let m = Material { young, poisson, density };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.young > 0.0) || !self.young.is_finite() {
            return Err(Error::Argument(format!("Young's modulus must be positive, got {}", self.young)));
        }
        if !(self.poisson > -1.0 && self.poisson <= MAX_POISSON) {
            return Err(Error::Argument(format!(
                "Poisson's ratio must lie in (-1, {MAX_POISSON}], got {}",
                self.poisson
            )));
        }
        if !(self.density >= 0.0) {
            return Err(Error::Argument(format!("density must be non-negative, got {}", self.density)));
        }
        Ok(())
    }

    pub fn shear_modulus(&self) -> f64 {
        self.young / (2.0 * (1.0 + self.poisson))
    }
}

/// Isotropic Hooke matrix, Voigt order (xx, yy, zz, xy, yz, zx) with
/// engineering shear strains.
pub fn isotropic_tensor(m: &Material) -> Mat6 {
    let (e, nu) = (m.young, m.poisson);
    let lambda = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
    let mu = e / (2.0 * (1.0 + nu));
    let mut d = Mat6::zeros();
    for i in 0..3 {
        for j in 0..3 {
            d[(i, j)] = lambda;
        }
        d[(i, i)] = lambda + 2.0 * mu;
        d[(i + 3, i + 3)] = mu;
    }
    d
}

/// Rest-state quantities of one linear tetrahedron.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementMatrices {
    pub rest: [Point3; 4],
    pub volume: f64,
    /// Shape-function gradients, one row per node.
    pub shape_gradients: Matrix4x3<f64>,
    pub strain_displacement: Mat6x12,
    pub stiffness: Mat12,
    pub lumped_mass: [f64; 4],
}

pub fn shape_gradients(rest: &[Point3; 4]) -> Result<(Matrix4x3<f64>, f64)> {
    let volume = tet_signed_volume(&rest[0], &rest[1], &rest[2], &rest[3]);
    if !(volume > 0.0) {
        return Err(Error::Geometry(format!("element has non-positive volume {volume}")));
    }
    // rows of [1 x y z] per node; the inverse's columns 1..4 hold the gradients
    let mut a = Matrix4::zeros();
    for (k, p) in rest.iter().enumerate() {
        a[(k, 0)] = 1.0;
        a[(k, 1)] = p.x;
        a[(k, 2)] = p.y;
        a[(k, 3)] = p.z;
    }
    let inv = a
        .try_inverse()
        .ok_or_else(|| Error::Geometry("degenerate element".into()))?;
    let mut g = Matrix4x3::zeros();
    for k in 0..4 {
        for d in 0..3 {
            g[(k, d)] = inv[(d + 1, k)];
        }
    }
    Ok((g, volume))
}

pub fn strain_displacement(g: &Matrix4x3<f64>) -> Mat6x12 {
    let mut b = Mat6x12::zeros();
    for a in 0..4 {
        let (bx, by, bz) = (g[(a, 0)], g[(a, 1)], g[(a, 2)]);
        let c = 3 * a;
        b[(0, c)] = bx;
        b[(1, c + 1)] = by;
        b[(2, c + 2)] = bz;
        b[(3, c)] = by;
        b[(3, c + 1)] = bx;
        b[(4, c + 1)] = bz;
        b[(4, c + 2)] = by;
        b[(5, c)] = bz;
        b[(5, c + 2)] = bx;
    }
    b
}

pub fn element_stiffness(rest: &[Point3; 4], material: &Material) -> Result<ElementMatrices> {
    let (g, volume) = shape_gradients(rest)?;
    let b = strain_displacement(&g);
    let stiffness = b.transpose() * isotropic_tensor(material) * b * volume;
    Ok(ElementMatrices {
        rest: *rest,
        volume,
        shape_gradients: g,
        strain_displacement: b,
        stiffness,
        lumped_mass: [material.density * volume / 4.0; 4],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CutMode {
    /// Two materials, one on each side of the surface.
    Interface,
    /// Only the inside of the surface is physical.
    Fictitious,
}

/// Material stiffness tensor of each region, `None` for void.
fn region_tensor(region: Region, outside: &Material, inside: &Material, mode: CutMode) -> Option<Mat6> {
    match (region, mode) {
        (Region::Inside, _) => Some(isotropic_tensor(inside)),
        (Region::Outside, CutMode::Interface) => Some(isotropic_tensor(outside)),
        (Region::Outside, CutMode::Fictitious) => None,
    }
}

/// Stiffness of a cut element: the parent's constant strain-displacement
/// matrix weighted by each leaf's volume and material.
pub fn cut_element_stiffness(
    parent: &ElementMatrices,
    tree: &EmbeddingTree,
    outside: &Material,
    inside: &Material,
    mode: CutMode,
) -> Result<Mat12> {
    let mut weighted = Mat6::zeros();
    let mut leaves = 0;
    for leaf in tree.leaves() {
        let region = leaf
            .region
            .ok_or_else(|| Error::Argument(format!("leaf without region flag in element {}", tree.element)))?;
        leaves += 1;
        if let Some(d) = region_tensor(region, outside, inside, mode) {
            weighted += d * leaf.volume();
        }
    }
    if leaves == 0 {
        return Err(Error::Argument(format!("empty embedding tree for element {}", tree.element)));
    }
    let b = &parent.strain_displacement;
    Ok(b.transpose() * weighted * b)
}

/// Leaf masses spread to the parent nodes by the barycentric weights of each
/// leaf centroid.
pub fn cut_lumped_mass(parent: &ElementMatrices, tree: &EmbeddingTree, outside: &Material, inside: &Material, mode: CutMode) -> [f64; 4] {
    let mut m = [0.0; 4];
    for leaf in tree.leaves() {
        let rho = match (leaf.region, mode) {
            (Some(Region::Inside), _) => inside.density,
            (Some(Region::Outside), CutMode::Interface) => outside.density,
            _ => 0.0,
        };
        if rho == 0.0 {
            continue;
        }
        let w = barycentric(&centroid(&leaf.corners), &parent.rest).unwrap_or([0.25; 4]);
        let mass = rho * leaf.volume();
        for k in 0..4 {
            m[k] += mass * w[k];
        }
    }
    m
}

/// F = P N', with `current` the deformed corners.
pub fn deformation_gradient(current: &[Point3; 4], shape_gradients: &Matrix4x3<f64>) -> Matrix3<f64> {
    let mut f = Matrix3::zeros();
    for (k, p) in current.iter().enumerate() {
        f += p * shape_gradients.row(k);
    }
    f
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarRotation {
    pub rotation: Matrix3<f64>,
    /// True when F was inverted and the SVD fallback flipped a direction.
    pub inverted: bool,
}

const POLAR_TOL: f64 = 1e-12;
const POLAR_MAX_ITER: usize = 50;

/// Rotation factor of F = R U. Uses scaled Newton iteration; falls back to an
/// SVD with the weakest direction flipped if det F <= 0 or Newton stalls.
pub fn polar_rotation(f: &Matrix3<f64>) -> PolarRotation {
    let det = f.determinant();
    if det > 0.0 && det.is_finite() {
        let mut r = *f;
        for _ in 0..POLAR_MAX_ITER {
            let Some(inv) = r.try_inverse() else { break };
            let inv_t = inv.transpose();
            let gamma = (inv.norm() / r.norm()).sqrt();
            let next = (r * gamma + inv_t / gamma) * 0.5;
            let change = (next - r).norm();
            r = next;
            if change <= POLAR_TOL * r.norm() {
                return PolarRotation {
                    rotation: r,
                    inverted: false,
                };
            }
        }
    }
    log::warn!("polar decomposition fallback (det F = {det:.3e})");
    let svd = f.svd(true, true);
    let (mut u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let s = svd.singular_values;
    if (u * v_t).determinant() < 0.0 {
        let k = s.imin();
        u.column_mut(k).neg_mut();
    }
    PolarRotation {
        rotation: u * v_t,
        inverted: det <= 0.0,
    }
}

pub fn block_rotate(r: &Matrix3<f64>, k: &Mat12) -> Mat12 {
    let mut out = Mat12::zeros();
    for i in 0..4 {
        for j in 0..4 {
            let kij = k.fixed_view::<3, 3>(3 * i, 3 * j);
            out.fixed_view_mut::<3, 3>(3 * i, 3 * j).copy_from(&(r * kij * r.transpose()));
        }
    }
    out
}

/// Corotated element force `R K (Rᵀx - x0)` and frozen-rotation tangent `R K Rᵀ`.
pub fn corot_force_and_tangent(r: &Matrix3<f64>, k: &Mat12, current: &[Point3; 4], rest: &[Point3; 4]) -> (Vec12, Mat12) {
    let mut local = Vec12::zeros();
    for a in 0..4 {
        let d = r.transpose() * current[a] - rest[a];
        local.fixed_rows_mut::<3>(3 * a).copy_from(&d);
    }
    let fl = k * local;
    let mut f = Vec12::zeros();
    for a in 0..4 {
        f.fixed_rows_mut::<3>(3 * a).copy_from(&(r * fl.fixed_rows::<3>(3 * a)));
    }
    (f, block_rotate(r, k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, SymmetricEigen};

    fn unit_tet() -> [Point3; 4] {
        [
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(0.0, 0.0, 1.0),
        ]
    }

    #[test]
    fn hooke_closed_forms() {
        let d = isotropic_tensor(&Material::new(1.0, 0.0, 1.0).unwrap());
        assert_eq!(d, Mat6::from_diagonal(&SVector::from([1.0, 1.0, 1.0, 0.5, 0.5, 0.5])));
        let d = isotropic_tensor(&Material::new(1000.0, 0.1, 1.0).unwrap());
        assert!((d[(0, 0)] - 1022.7272727272727).abs() < 1e-9);
    }

    #[test]
    fn material_guards() {
        assert!(Material::new(1.0, 0.5, 1.0).is_err());
        assert!(Material::new(0.0, 0.3, 1.0).is_err());
        assert!(Material::new(1.0, 0.3, -1.0).is_err());
    }

    #[test]
    fn stiffness_null_space_and_scaling() {
        let m = Material::new(1000.0, 0.3, 1.0).unwrap();
        let t = unit_tet();
        let em = element_stiffness(&t, &m).unwrap();
        let trans = Vec12::from_fn(|i, _| [0.3, -0.2, 0.7][i % 3]);
        assert!((em.stiffness * trans).norm() < 1e-12 * em.stiffness.norm());
        let eig = SymmetricEigen::new(em.stiffness).eigenvalues;
        let max = eig.max();
        assert_eq!(eig.iter().filter(|&&l| l.abs() < 1e-10 * max).count(), 6);
        assert!(eig.iter().all(|&l| l > -1e-10 * max));
        let doubled = element_stiffness(&t.map(|p| p * 2.0), &m).unwrap();
        assert!((doubled.stiffness - em.stiffness * 2.0).norm() < 1e-10 * em.stiffness.norm());
        assert!(element_stiffness(&[t[0], t[2], t[1], t[3]], &m).is_err());
    }

    #[test]
    fn deformation_gradient_cases() {
        let t = unit_tet();
        let (g, _) = shape_gradients(&t).unwrap();
        assert!((deformation_gradient(&t, &g) - Matrix3::identity()).norm() < 1e-14);
        let r0 = *Rotation3::from_euler_angles(0.3, -1.1, 0.4).matrix();
        assert!((deformation_gradient(&t.map(|p| r0 * p), &g) - r0).norm() < 1e-14);
        assert!((deformation_gradient(&t.map(|p| p * 1.7), &g) - Matrix3::identity() * 1.7).norm() < 1e-14);
    }

    #[test]
    fn polar_of_identity_and_rotation() {
        assert_eq!(polar_rotation(&Matrix3::identity()).rotation, Matrix3::identity());
        let r0 = *Rotation3::from_euler_angles(1.0, 0.2, -0.7).matrix();
        assert!((polar_rotation(&r0).rotation - r0).norm() < 1e-12);
    }

    #[test]
    fn inverted_gradient_falls_back() {
        let f = Matrix3::from_diagonal(&nalgebra::Vector3::new(1.0, 2.0, -0.1));
        let p = polar_rotation(&f);
        assert!(p.inverted);
        assert!((p.rotation.determinant() - 1.0).abs() < 1e-12);
        assert!((p.rotation.transpose() * p.rotation - Matrix3::identity()).norm() < 1e-12);
    }

    #[test]
    fn identity_rotation_is_linear_fem() {
        let m = Material::new(500.0, 0.25, 1.0).unwrap();
        let t = unit_tet();
        let em = element_stiffness(&t, &m).unwrap();
        let x = [t[0], t[1] + Point3::new(0.01, 0.0, 0.0), t[2], t[3] + Point3::new(0.0, -0.02, 0.01)];
        let (f, k) = corot_force_and_tangent(&Matrix3::identity(), &em.stiffness, &x, &t);
        let mut u = Vec12::zeros();
        for a in 0..4 {
            u.fixed_rows_mut::<3>(3 * a).copy_from(&(x[a] - t[a]));
        }
        assert!((f - em.stiffness * u).norm() < 1e-12);
        assert_eq!(k, em.stiffness);
    }
}
