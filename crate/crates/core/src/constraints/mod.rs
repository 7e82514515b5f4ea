//! Lagrange-multiplier constraints: barycentric maps onto the background
//! mesh, Dirichlet and Neumann conditions on immersed points, needle-tissue
//! coupling, and the three-step Schur-complement solve.

mod needle;

pub use needle::{needle_coupling, ContactSolution, CouplingContext, NeedleCoupling, Phase, ShaftPoint};

use nalgebra::{DMatrix, DVector, Vector3};

use crate::classify::AccelGrid;
use crate::error::{Error, Result};
use crate::geometry::{barycentric, centroid, Point3};
use crate::linalg::LinearSolve;
use crate::mesh::TetMesh;

/// Barycentric weights may undershoot zero by this much after clamping.
pub const WEIGHT_TOL: f64 = 1e-10;
/// Points whose best weight is above `-LOCATE_TOL` count as inside.
pub const LOCATE_TOL: f64 = 1e-7;

/// A point expressed in one tetrahedron of the background mesh.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapRow {
    pub tet: usize,
    pub nodes: [usize; 4],
    pub weights: [f64; 4],
}

impl MapRow {
    /// `Σ w_k field[n_k]`.
    pub fn evaluate(&self, field: &[Point3]) -> Point3 {
        (0..4).map(|k| field[self.nodes[k]] * self.weights[k]).sum()
    }

    /// Row of `dir · (J u)` with the mesh DOFs starting at `offset`.
    pub fn directional_row(&self, dir: &Vector3<f64>, offset: usize) -> SparseRow {
        let mut entries = Vec::with_capacity(12);
        for k in 0..4 {
            for d in 0..3 {
                let v = self.weights[k] * dir[d];
                if v != 0.0 {
                    entries.push((offset + 3 * self.nodes[k] + d, v));
                }
            }
        }
        SparseRow { entries }
    }
}

/// Locates `p` in `mesh` through the grid cell containing it and returns the
/// barycentric weights, clamped into `[0, 1]` and renormalised.
pub fn locate_and_weights(p: &Point3, mesh: &TetMesh, grid: &AccelGrid) -> Result<MapRow> {
    let mut best: Option<(f64, usize, [f64; 4])> = None;
    for &e in grid.tets_in(grid.cell_index(p)) {
        let e = e as usize;
        if let Some(w) = barycentric(p, &mesh.corners(e)) {
            let m = w.iter().copied().fold(f64::INFINITY, f64::min);
            if best.is_none_or(|b| m > b.0) {
                best = Some((m, e, w));
            }
        }
    }
    match best {
        Some((m, e, w)) if m >= -LOCATE_TOL => {
            let w = w.map(|x| x.max(0.0));
            let sum: f64 = w.iter().sum();
            Ok(MapRow {
                tet: e,
                nodes: mesh.tets[e],
                weights: w.map(|x| x / sum),
            })
        }
        _ => {
            let nearest = (0..mesh.num_tets())
                .min_by(|&a, &b| {
                    let da = (centroid(&mesh.corners(a)) - p).norm_squared();
                    let db = (centroid(&mesh.corners(b)) - p).norm_squared();
                    da.total_cmp(&db)
                })
                .unwrap_or(0);
            Err(Error::Location {
                x: p.x,
                y: p.y,
                z: p.z,
                nearest,
            })
        }
    }
}

/// The surface-to-mesh map `u_S = J u_M` for a set of points.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BarycentricMap {
    pub rows: Vec<MapRow>,
}

impl BarycentricMap {
    pub fn build(points: &[Point3], mesh: &TetMesh, grid: &AccelGrid) -> Result<Self> {
        let rows = points.iter().map(|p| locate_and_weights(p, mesh, grid)).collect::<Result<_>>()?;
        Ok(BarycentricMap { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Mapped values `J field` at every point.
    pub fn evaluate(&self, field: &[Point3]) -> Vec<Point3> {
        self.rows.iter().map(|r| r.evaluate(field)).collect()
    }

    /// Three rows per point (x, y, z).
    pub fn matrix_rows(&self, offset: usize) -> Vec<SparseRow> {
        self.rows
            .iter()
            .flat_map(|r| [Vector3::x(), Vector3::y(), Vector3::z()].map(|d| r.directional_row(&d, offset)))
            .collect()
    }
}

/// Nodal forces `Q_M = Jᵀ Q_S` for point forces `Q_S` (one per map row).
pub fn apply_neumann(map: &BarycentricMap, forces: &[Vector3<f64>], num_nodes: usize) -> Vec<f64> {
    let mut q = vec![0.0; 3 * num_nodes];
    for (row, f) in map.rows.iter().zip(forces) {
        for k in 0..4 {
            for d in 0..3 {
                q[3 * row.nodes[k] + d] += row.weights[k] * f[d];
            }
        }
    }
    q
}

/// Sparse row of a constraint matrix over global DOFs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseRow {
    pub entries: Vec<(usize, f64)>,
}

impl SparseRow {
    pub fn dot(&self, x: &[f64]) -> f64 {
        self.entries.iter().map(|&(i, v)| v * x[i]).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.iter().all(|&(_, v)| v == 0.0)
    }

    pub fn extend(&mut self, other: &SparseRow, scale: f64) {
        self.entries.extend(other.entries.iter().map(|&(i, v)| (i, v * scale)));
    }

    pub fn max_index(&self) -> Option<usize> {
        self.entries.iter().map(|e| e.0).max()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    Dirichlet,
    Puncture,
    Tip,
    ShaftFriction,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RowStatus {
    Active,
    Inactive,
    Stick,
    /// Sliding with the given multiplier.
    Slip(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CouplingParams {
    /// Contact force at which the needle punctures the surface.
    pub penetration_strength: f64,
    /// Coulomb coefficient between shaft and tissue.
    pub friction: f64,
    /// Distance between shaft constraint points, in needle length units.
    pub spacing: f64,
}

impl CouplingParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.penetration_strength >= 0.0) || !(self.friction >= 0.0) || !(self.spacing > 0.0) {
            return Err(Error::Config(format!("invalid coupling parameters {self:?}")));
        }
        Ok(())
    }
}

/// Rows of one constraint group with their right-hand side, such that the
/// solve enforces `rows · unknown = rhs` on rows with an enforcing status.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintBlock {
    pub kind: ConstraintKind,
    pub rows: Vec<SparseRow>,
    pub rhs: Vec<f64>,
    pub status: Vec<RowStatus>,
    pub params: Option<CouplingParams>,
}

impl ConstraintBlock {
    pub fn new(kind: ConstraintKind, rows: Vec<SparseRow>, rhs: Vec<f64>) -> Self {
        let status = vec![RowStatus::Active; rows.len()];
        ConstraintBlock {
            kind,
            rows,
            rhs,
            status,
            params: None,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn validate(&self, num_dofs: usize) -> Result<()> {
        if self.rhs.len() != self.rows.len() || self.status.len() != self.rows.len() {
            return Err(Error::Argument(format!("{:?} block has mismatched lengths", self.kind)));
        }
        if let Some(i) = self.rows.iter().filter_map(SparseRow::max_index).find(|&i| i >= num_dofs) {
            return Err(Error::Argument(format!("{:?} row references DOF {i} of {num_dofs}", self.kind)));
        }
        if self.rhs.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument(format!("{:?} block has a non-finite right-hand side", self.kind)));
        }
        Ok(())
    }

    /// Converts a displacement-level block `J u = ū` into the velocity-level
    /// form used by one implicit step: `J dv = (ū - J u) / τ - J v`.
    pub fn to_velocity_level(&self, u: &[f64], v: &[f64], tau: f64) -> ConstraintBlock {
        let rhs = self
            .rows
            .iter()
            .zip(&self.rhs)
            .map(|(r, target)| (target - r.dot(u)) / tau - r.dot(v))
            .collect();
        ConstraintBlock { rhs, ..self.clone() }
    }
}

/// Dirichlet block `J u = ū` on a point set; coincident points are merged.
pub fn dirichlet_block(
    points: &[Point3],
    prescribed: &[Vector3<f64>],
    mesh: &TetMesh,
    grid: &AccelGrid,
    offset: usize,
) -> Result<(ConstraintBlock, BarycentricMap)> {
    if points.len() != prescribed.len() {
        return Err(Error::Argument(format!(
            "{} Dirichlet points but {} prescribed values",
            points.len(),
            prescribed.len()
        )));
    }
    let tol = 1e-12 * mesh.bounding_box().diagonal();
    let mut kept: Vec<usize> = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        if kept.iter().any(|&j| (points[j] - p).norm() <= tol) {
            log::warn!("duplicate Dirichlet point {i} at {p:?} collapsed");
            continue;
        }
        kept.push(i);
    }
    let located: Vec<Point3> = kept.iter().map(|&i| points[i]).collect();
    let map = BarycentricMap::build(&located, mesh, grid)?;
    let rhs = kept.iter().flat_map(|&i| [prescribed[i].x, prescribed[i].y, prescribed[i].z]).collect();
    let block = ConstraintBlock::new(ConstraintKind::Dirichlet, map.matrix_rows(offset), rhs);
    block.validate(offset + 3 * mesh.num_nodes())?;
    Ok((block, map))
}

/// How a row takes part in a Schur solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RowMode {
    /// Enforced: `row · x = c`.
    Enforce,
    /// Not enforced; contributes a known multiplier.
    Known(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchurSolution {
    pub x: Vec<f64>,
    pub lambda: Vec<f64>,
    pub regularized: bool,
}

/// Solution of `A x + Jᵀ λ = b`, `J x = c`, with `A⁻¹ Jᵀ` and the Schur
/// matrix `J A⁻¹ Jᵀ` kept so several right-hand sides and row modes can be
/// tried against one factorisation.
pub struct SchurSystem {
    pub x_free: Vec<f64>,
    pub rows: Vec<SparseRow>,
    y: DMatrix<f64>,
    s: DMatrix<f64>,
}

impl SchurSystem {
    pub fn new(a: &dyn LinearSolve, b: &[f64], rows: Vec<SparseRow>) -> Self {
        let n = a.dim();
        let mut x_free = b.to_vec();
        a.solve_in_place(&mut x_free);
        let m = rows.len();
        let mut y = DMatrix::zeros(n, m);
        for (j, r) in rows.iter().enumerate() {
            for &(i, v) in &r.entries {
                y[(i, j)] += v;
            }
        }
        a.solve_columns(&mut y);
        let mut s = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                s[(i, j)] = rows[i].entries.iter().map(|&(k, v)| v * y[(k, j)]).sum();
            }
        }
        let s = (&s + s.transpose()) * 0.5;
        SchurSystem { x_free, rows, y, s }
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    /// Solves with every row enforced.
    pub fn solve_all(&self, c: &[f64]) -> Result<SchurSolution> {
        self.solve(c, &vec![RowMode::Enforce; self.rows.len()])
    }

    pub fn solve(&self, c: &[f64], modes: &[RowMode]) -> Result<SchurSolution> {
        let m = self.rows.len();
        if c.len() != m || modes.len() != m {
            return Err(Error::Argument(format!("{m} rows but {} rhs and {} modes", c.len(), modes.len())));
        }
        let enforced: Vec<usize> = (0..m).filter(|&i| modes[i] == RowMode::Enforce).collect();
        let mut lambda = vec![0.0; m];
        for i in 0..m {
            if let RowMode::Known(l) = modes[i] {
                lambda[i] = l;
            }
        }
        // x with only the known multipliers applied
        let mut x = self.x_free.clone();
        for (j, &l) in lambda.iter().enumerate() {
            if l != 0.0 {
                for (xi, yi) in x.iter_mut().zip(self.y.column(j).iter()) {
                    *xi -= yi * l;
                }
            }
        }
        let mut regularized = false;
        if !enforced.is_empty() {
            let k = enforced.len();
            let s = DMatrix::from_fn(k, k, |i, j| self.s[(enforced[i], enforced[j])]);
            let r = DVector::from_fn(k, |i, _| self.rows[enforced[i]].dot(&x) - c[enforced[i]]);
            let (sol, reg) = solve_schur_matrix(s, &r)?;
            regularized = reg;
            for (i, &row) in enforced.iter().enumerate() {
                lambda[row] = sol[i];
                let l = sol[i];
                for (xi, yi) in x.iter_mut().zip(self.y.column(row).iter()) {
                    *xi -= yi * l;
                }
            }
        }
        Ok(SchurSolution { x, lambda, regularized })
    }

    /// `‖J x - c‖∞` over the enforced rows.
    pub fn residual(&self, x: &[f64], c: &[f64], modes: &[RowMode]) -> f64 {
        (0..self.rows.len())
            .filter(|&i| modes[i] == RowMode::Enforce)
            .map(|i| (self.rows[i].dot(x) - c[i]).abs())
            .fold(0.0, f64::max)
    }
}

/// Pivot ratio below which the Schur matrix is treated as rank deficient.
const RANK_TOL: f64 = 1e-12;

/// Solves `S λ = r`. A rank-deficient `S` (repeated or dependent rows) gets the
/// minimum-norm solution from its eigendecomposition, which satisfies every row
/// exactly when the rows are consistent.
fn solve_schur_matrix(s: DMatrix<f64>, r: &DVector<f64>) -> Result<(DVector<f64>, bool)> {
    let k = s.nrows();
    let max_diag = (0..k).map(|i| s[(i, i)]).fold(0.0, f64::max);
    if let Some(ch) = nalgebra::Cholesky::new(s.clone()) {
        let l = ch.l_dirty();
        let min_pivot = (0..k).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
        if min_pivot > RANK_TOL * max_diag {
            return Ok((ch.solve(r), false));
        }
    }
    let eig = nalgebra::SymmetricEigen::new(s);
    let top = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(top > 0.0) {
        return Err(Error::Singular("constraint Schur matrix".into()));
    }
    let mut sol = DVector::zeros(k);
    let mut dropped = 0;
    for (i, &ev) in eig.eigenvalues.iter().enumerate() {
        if ev > RANK_TOL * top {
            let v = eig.eigenvectors.column(i);
            sol += v * (v.dot(r) / ev);
        } else {
            dropped += 1;
        }
    }
    log::debug!("constraint Schur matrix ({k} rows) has {dropped} dependent directions");
    Ok((sol, true))
}

/// Three-step constrained solve: free solution, multipliers from
/// `(J A⁻¹ Jᵀ) λ = J x_free - c`, then `x = x_free - A⁻¹ Jᵀ λ`.
pub fn schur_solve(a: &dyn LinearSolve, rows: &[SparseRow], b: &[f64], c: &[f64]) -> Result<SchurSolution> {
    SchurSystem::new(a, b, rows.to_vec()).solve_all(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DenseCholesky;
    use crate::mesh::generate_box_mesh;

    fn unit_box() -> (TetMesh, AccelGrid) {
        let m = generate_box_mesh([1.0, 1.0, 1.0], [3, 3, 3]).unwrap();
        let g = AccelGrid::build(&m, None, 0.3, 0.0).unwrap();
        (m, g)
    }

    #[test]
    fn node_and_centroid_weights() {
        let (m, g) = unit_box();
        let r = locate_and_weights(&m.nodes[13], &m, &g).unwrap();
        let k = r.nodes.iter().position(|&n| n == 13).unwrap();
        assert!((r.weights[k] - 1.0).abs() < 1e-12);
        let c = centroid(&m.corners(7));
        let r = locate_and_weights(&c, &m, &g).unwrap();
        assert_eq!(r.tet, 7);
        assert!(r.weights.iter().all(|w| (w - 0.25).abs() < 1e-12));
    }

    #[test]
    fn outside_point_names_nearest_tet() {
        let (m, g) = unit_box();
        let err = locate_and_weights(&Point3::new(1.5, 0.5, 0.5), &m, &g).unwrap_err();
        assert!(matches!(err, Error::Location { .. }));
    }

    #[test]
    fn neumann_at_centroid_splits_in_quarters() {
        let (m, g) = unit_box();
        let map = BarycentricMap::build(&[centroid(&m.corners(3))], &m, &g).unwrap();
        let q = apply_neumann(&map, &[Vector3::new(4.0, 0.0, -8.0)], m.num_nodes());
        for &n in &m.tets[3] {
            assert!((q[3 * n] - 1.0).abs() < 1e-12 && (q[3 * n + 2] + 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicate_dirichlet_points_collapse() {
        let (m, g) = unit_box();
        let p = Point3::new(0.3, 0.4, 0.5);
        let (b, map) = dirichlet_block(&[p, p], &[Vector3::zeros(); 2], &m, &g, 0).unwrap();
        assert_eq!(map.len(), 1);
        assert_eq!(b.len(), 3);
    }

    #[test]
    fn identity_rows_pin_dofs() {
        let a = DMatrix::from_fn(4, 4, |i, j| if i == j { 3.0 } else { 0.5 });
        let f = DenseCholesky::new(a).unwrap();
        let rows = vec![SparseRow { entries: vec![(1, 1.0)] }, SparseRow { entries: vec![(3, 1.0)] }];
        let s = schur_solve(&f, &rows, &[1.0, 2.0, 3.0, 4.0], &[0.0, 0.0]).unwrap();
        assert!(s.x[1].abs() < 1e-15 && s.x[3].abs() < 1e-15);
        let free = schur_solve(&f, &[], &[1.0, 2.0, 3.0, 4.0], &[]).unwrap();
        assert_eq!(free.x, SchurSystem::new(&f, &[1.0, 2.0, 3.0, 4.0], vec![]).x_free);
    }

    #[test]
    fn dependent_rows_get_minimum_norm_multipliers() {
        let a = DMatrix::<f64>::identity(3, 3);
        let f = DenseCholesky::new(a).unwrap();
        let r = SparseRow { entries: vec![(0, 1.0)] };
        let s = schur_solve(&f, &[r.clone(), r], &[1.0, 0.0, 0.0], &[0.5, 0.5]).unwrap();
        assert!(s.regularized);
        assert!((s.x[0] - 0.5).abs() < 1e-12);
        assert!((s.lambda[0] - 0.25).abs() < 1e-12 && (s.lambda[1] - 0.25).abs() < 1e-12);
    }
}
