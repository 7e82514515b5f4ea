//! Implicit backward-Euler stepping of the corotational tissue and the
//! needle beam, with constraints solved through the Schur complement.

use nalgebra::{Matrix3, Matrix4x3, Vector3};
use rayon::prelude::*;

use crate::beam::{exp_rotation, BeamMesh};
use crate::classify::{Classification, ElementLabel};
use crate::constraints::{ConstraintBlock, RowMode, SchurSolution, SchurSystem, SparseRow};
use crate::embed::Embedding;
use crate::error::{Error, Result};
use crate::fem::{corot_force_and_tangent, cut_element_stiffness, cut_lumped_mass, deformation_gradient, element_stiffness, polar_rotation, CutMode, Mat12, Material, Vec12};
use crate::geometry::Point3;
use crate::linalg::{BlockDiagonal, LinearSolve, SparseCholesky, SymbolicCache, SymmetricBuilder};
use crate::mesh::TetMesh;

/// Rayleigh damping `C = α_M M + α_K K`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Damping {
    pub mass: f64,
    pub stiffness: f64,
}

impl Default for Damping {
    fn default() -> Self {
        Damping { mass: 0.1, stiffness: 0.0 }
    }
}

impl Damping {
    pub const NONE: Damping = Damping { mass: 0.0, stiffness: 0.0 };
}

#[derive(Debug, Clone, PartialEq)]
pub struct TissueElement {
    pub nodes: [usize; 4],
    pub rest: [Point3; 4],
    pub shape_gradients: Matrix4x3<f64>,
    pub stiffness: Mat12,
}

/// Assembled tissue: active elements, lumped nodal masses and clamped nodes.
#[derive(Debug, Clone)]
pub struct TissueModel {
    pub mesh: TetMesh,
    pub elements: Vec<TissueElement>,
    /// Index into `mesh.tets` of each active element.
    pub element_ids: Vec<usize>,
    pub mass: Vec<f64>,
    pub fixed: Vec<bool>,
}

impl TissueModel {
    /// Plain FEM with one material per element.
    pub fn with_materials(mesh: TetMesh, materials: &[Material]) -> Result<Self> {
        if materials.len() != mesh.num_tets() {
            return Err(Error::Argument(format!("{} materials for {} elements", materials.len(), mesh.num_tets())));
        }
        let parts = (0..mesh.num_tets())
            .into_par_iter()
            .map(|e| {
                let em = element_stiffness(&mesh.corners(e), &materials[e])?;
                Ok((e, em.shape_gradients, em.stiffness, em.lumped_mass))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_parts(mesh, parts))
    }

    pub fn homogeneous(mesh: TetMesh, material: &Material) -> Result<Self> {
        let n = mesh.num_tets();
        Self::with_materials(mesh, &vec![*material; n])
    }

    /// CutFEM tissue: uncut elements take the material of their side, cut
    /// elements integrate their embedding tree. In fictitious mode the outside
    /// is void and nodes left without stiffness are clamped.
    pub fn cut(
        mesh: TetMesh,
        classification: &Classification,
        embedding: &Embedding,
        outside: &Material,
        inside: &Material,
        mode: CutMode,
    ) -> Result<Self> {
        let parts = (0..mesh.num_tets())
            .into_par_iter()
            .filter_map(|e| {
                let label = classification.labels[e];
                let material = match (label, mode) {
                    (ElementLabel::Outside, CutMode::Fictitious) => return None,
                    (ElementLabel::Outside, CutMode::Interface) => outside,
                    _ => inside,
                };
                let build = || {
                    let em = element_stiffness(&mesh.corners(e), material)?;
                    if label != ElementLabel::Cut {
                        return Ok(Some((e, em.shape_gradients, em.stiffness, em.lumped_mass)));
                    }
                    let tree = embedding
                        .tree(e)
                        .ok_or_else(|| Error::Argument(format!("cut element {e} has no embedding tree")))?;
                    let k = cut_element_stiffness(&em, tree, outside, inside, mode)?;
                    let m = cut_lumped_mass(&em, tree, outside, inside, mode);
                    if k.iter().all(|&v| v == 0.0) {
                        return Ok(None);
                    }
                    Ok(Some((e, em.shape_gradients, k, m)))
                };
                build().transpose()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_parts(mesh, parts))
    }

    fn from_parts(mesh: TetMesh, mut parts: Vec<(usize, Matrix4x3<f64>, Mat12, [f64; 4])>) -> Self {
        parts.sort_by_key(|p| p.0);
        let n = mesh.num_nodes();
        let mut mass = vec![0.0; n];
        let mut used = vec![false; n];
        let mut elements = Vec::with_capacity(parts.len());
        let mut element_ids = Vec::with_capacity(parts.len());
        for (e, g, k, m) in parts {
            let nodes = mesh.tets[e];
            for a in 0..4 {
                mass[nodes[a]] += m[a];
                used[nodes[a]] = true;
            }
            elements.push(TissueElement {
                nodes,
                rest: mesh.corners(e),
                shape_gradients: g,
                stiffness: k,
            });
            element_ids.push(e);
        }
        let fixed = used.iter().map(|u| !u).collect();
        TissueModel {
            mesh,
            elements,
            element_ids,
            mass,
            fixed,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.mesh.num_nodes()
    }

    pub fn num_dofs(&self) -> usize {
        3 * self.mesh.num_nodes()
    }

    /// Nodes carrying stiffness.
    pub fn active_nodes(&self) -> usize {
        let mut used = vec![false; self.num_nodes()];
        for el in &self.elements {
            for &n in &el.nodes {
                used[n] = true;
            }
        }
        used.iter().filter(|&&u| u).count()
    }

    /// Clamps every node satisfying `pred`; returns how many were newly clamped.
    pub fn fix_nodes(&mut self, pred: impl Fn(&Point3) -> bool) -> usize {
        let mut count = 0;
        for (i, p) in self.mesh.nodes.iter().enumerate() {
            if !self.fixed[i] && pred(p) {
                self.fixed[i] = true;
                count += 1;
            }
        }
        count
    }

    pub fn dof_fixed(&self, dof: usize) -> bool {
        self.fixed[dof / 3]
    }

    pub fn rest_state(&self) -> TissueState {
        let n = self.num_nodes();
        TissueState {
            x: self.mesh.nodes.clone(),
            v: vec![Vector3::zeros(); n],
            rotations: vec![Matrix3::identity(); self.elements.len()],
        }
    }

    fn element_corners(&self, el: &TissueElement, x: &[Point3]) -> [Point3; 4] {
        el.nodes.map(|n| x[n])
    }

    /// Element rotations of the configuration `x`.
    pub fn rotations(&self, x: &[Point3]) -> Vec<Matrix3<f64>> {
        self.elements
            .par_iter()
            .map(|el| polar_rotation(&deformation_gradient(&self.element_corners(el, x), &el.shape_gradients)).rotation)
            .collect()
    }

    fn element_terms(&self, x: &[Point3], rotations: &[Matrix3<f64>]) -> Result<Vec<(Vec12, Mat12)>> {
        self.elements
            .par_iter()
            .zip(rotations.par_iter())
            .zip(self.element_ids.par_iter())
            .map(|((el, r), &id)| {
                let (f, k) = corot_force_and_tangent(r, &el.stiffness, &self.element_corners(el, x), &el.rest);
                if f.iter().chain(k.iter()).all(|v| v.is_finite()) {
                    Ok((f, k))
                } else {
                    Err(Error::Numerical { element: id })
                }
            })
            .collect()
    }

    /// Corotated internal force of configuration `x` with the given rotations.
    pub fn internal_force(&self, x: &[Point3], rotations: &[Matrix3<f64>]) -> Result<Vec<f64>> {
        let terms = self.element_terms(x, rotations)?;
        let mut f = vec![0.0; self.num_dofs()];
        for (el, (fe, _)) in self.elements.iter().zip(&terms) {
            for a in 0..4 {
                for d in 0..3 {
                    f[3 * el.nodes[a] + d] += fe[3 * a + d];
                }
            }
        }
        Ok(f)
    }

    /// Small-strain stiffness (R = I) with clamped DOFs replaced by identity rows.
    pub fn static_stiffness(&self) -> SymmetricBuilder {
        let mut a = SymmetricBuilder::new(self.num_dofs());
        for el in &self.elements {
            self.add_element(&mut a, &el.nodes, &el.stiffness, 1.0);
        }
        for (i, &fx) in self.fixed.iter().enumerate() {
            if fx {
                for d in 0..3 {
                    a.add(3 * i + d, 3 * i + d, 1.0);
                }
            }
        }
        a
    }

    fn add_element(&self, a: &mut SymmetricBuilder, nodes: &[usize; 4], k: &Mat12, scale: f64) {
        for i in 0..4 {
            if self.fixed[nodes[i]] {
                continue;
            }
            for j in 0..4 {
                if self.fixed[nodes[j]] {
                    continue;
                }
                let block: Matrix3<f64> = k.fixed_view::<3, 3>(3 * i, 3 * j) * scale;
                a.add_block(3 * nodes[i], 3 * nodes[j], &block);
            }
        }
    }

    /// Backward-Euler system `A dv = b` at the current state.
    pub fn linearize(&self, state: &TissueState, f_ext: &[f64], tau: f64, damping: Damping) -> Result<Linearized> {
        let terms = self.element_terms(&state.x, &state.rotations)?;
        let n = self.num_dofs();
        let mut a = SymmetricBuilder::new(n);
        let mut b = vec![0.0; n];
        let kscale = tau * damping.stiffness + tau * tau;
        for (el, (fe, ke)) in self.elements.iter().zip(&terms) {
            self.add_element(&mut a, &el.nodes, ke, kscale);
            let mut ve = Vec12::zeros();
            for k in 0..4 {
                ve.fixed_rows_mut::<3>(3 * k).copy_from(&state.v[el.nodes[k]]);
            }
            let kv = ke * ve;
            for k in 0..4 {
                for d in 0..3 {
                    b[3 * el.nodes[k] + d] -= tau * fe[3 * k + d] + kscale * kv[3 * k + d];
                }
            }
        }
        for i in 0..self.num_nodes() {
            for d in 0..3 {
                let dof = 3 * i + d;
                if self.fixed[i] {
                    a.add(dof, dof, 1.0);
                    b[dof] = 0.0;
                } else {
                    let m = self.mass[i];
                    a.add(dof, dof, m * (1.0 + tau * damping.mass));
                    b[dof] += tau * f_ext[dof] - tau * damping.mass * m * state.v[i][d];
                }
            }
        }
        Ok(Linearized { a, b })
    }

    /// Kinetic energy `½ Σ m v²`.
    pub fn kinetic_energy(&self, state: &TissueState) -> f64 {
        0.5 * self.mass.iter().zip(&state.v).map(|(m, v)| m * v.norm_squared()).sum::<f64>()
    }

    /// Corotated elastic energy `½ Σ dᵀ K d`, `d = Rᵀx - X`.
    pub fn elastic_energy(&self, state: &TissueState) -> f64 {
        self.elements
            .iter()
            .zip(&state.rotations)
            .map(|(el, r)| {
                let mut d = Vec12::zeros();
                for a in 0..4 {
                    d.fixed_rows_mut::<3>(3 * a).copy_from(&(r.transpose() * state.x[el.nodes[a]] - el.rest[a]));
                }
                0.5 * d.dot(&(el.stiffness * d))
            })
            .sum()
    }

    /// Connected groups of active elements without a clamped node.
    pub fn floating_components(&self) -> Vec<Vec<usize>> {
        let n = self.num_nodes();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for el in &self.elements {
            for k in 1..4 {
                let (a, b) = (find(&mut parent, el.nodes[0]), find(&mut parent, el.nodes[k]));
                parent[a] = b;
            }
        }
        let mut groups: std::collections::BTreeMap<usize, (Vec<usize>, bool)> = Default::default();
        for (el, &id) in self.elements.iter().zip(&self.element_ids) {
            let root = find(&mut parent, el.nodes[0]);
            let g = groups.entry(root).or_default();
            g.0.push(id);
            g.1 |= el.nodes.iter().any(|&v| self.fixed[v]);
        }
        groups.into_values().filter(|g| !g.1).map(|g| g.0).collect()
    }

    /// Static small-strain solve `K u = f` with optional displacement-level
    /// constraint rows; returns displacements and multipliers. Constraint
    /// rows are also added as an augmentation `γ JᵀJ` (exact at the solution)
    /// so bodies held only by multipliers stay factorisable.
    pub fn solve_static(&self, f_ext: &[f64], constraints: &[ConstraintBlock]) -> Result<SchurSolution> {
        let (rows, c): (Vec<SparseRow>, Vec<f64>) = constraints
            .iter()
            .flat_map(|blk| blk.rows.iter().cloned().zip(blk.rhs.iter().copied()))
            .map(|(r, c)| (self.drop_fixed(&r, 0), c))
            .filter(|(r, _)| !r.is_empty())
            .unzip();
        if rows.is_empty() {
            let floating = self.floating_components();
            if !floating.is_empty() {
                return Err(self.singular(Error::Singular("stiffness matrix has rigid modes".into())));
            }
        }
        let mut k = self.static_stiffness();
        let mut b = f_ext.to_vec();
        for (i, v) in b.iter_mut().enumerate() {
            if self.dof_fixed(i) {
                *v = 0.0;
            }
        }
        let gamma = self.mean_stiffness_diagonal();
        for (r, &ci) in rows.iter().zip(&c) {
            for &(i, vi) in &r.entries {
                b[i] += gamma * vi * ci;
                for &(j, vj) in &r.entries {
                    k.add(i, j, gamma * vi * vj);
                }
            }
        }
        let factor = SparseCholesky::factor(&k, &mut SymbolicCache::default()).map_err(|e| self.singular(e))?;
        SchurSystem::new(&factor, &b, rows).solve_all(&c)
    }

    fn mean_stiffness_diagonal(&self) -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for el in &self.elements {
            for i in 0..12 {
                sum += el.stiffness[(i, i)];
                count += 1;
            }
        }
        if count == 0 { 1.0 } else { sum / count as f64 }
    }

    fn singular(&self, e: Error) -> Error {
        match e {
            Error::Singular(msg) => {
                let floating = self.floating_components();
                let list: Vec<String> = floating
                    .iter()
                    .map(|g| format!("{} elements starting at {}", g.len(), g[0]))
                    .collect();
                Error::Singular(format!("{msg}; unconstrained components: [{}]", list.join(", ")))
            }
            other => other,
        }
    }

    /// Removes entries on clamped DOFs (mesh DOFs start at `offset`).
    pub fn drop_fixed(&self, row: &SparseRow, offset: usize) -> SparseRow {
        SparseRow {
            entries: row
                .entries
                .iter()
                .copied()
                .filter(|&(i, _)| i < offset || i >= offset + self.num_dofs() || !self.dof_fixed(i - offset))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TissueState {
    pub x: Vec<Point3>,
    pub v: Vec<Vector3<f64>>,
    pub rotations: Vec<Matrix3<f64>>,
}

impl TissueState {
    pub fn displacement(&self, rest: &[Point3]) -> Vec<f64> {
        self.x.iter().zip(rest).flat_map(|(x, r)| { let u = x - r; [u.x, u.y, u.z] }).collect()
    }

    pub fn velocity(&self) -> Vec<f64> {
        self.v.iter().flat_map(|v| [v.x, v.y, v.z]).collect()
    }
}

/// One body's backward-Euler system.
#[derive(Debug, Clone)]
pub struct Linearized {
    pub a: SymmetricBuilder,
    pub b: Vec<f64>,
}

/// Prescribed translational and angular velocity of a needle node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrivenNode {
    pub node: usize,
    pub velocity: Vector3<f64>,
    pub angular: Vector3<f64>,
}

#[derive(Debug, Clone)]
pub struct NeedleModel {
    pub beam: BeamMesh,
    pub mass: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeedleState {
    pub x: Vec<Point3>,
    pub frames: Vec<Matrix3<f64>>,
    pub v: Vec<Vector3<f64>>,
    pub w: Vec<Vector3<f64>>,
}

impl NeedleState {
    /// Velocities as `[v, ω]` per node.
    pub fn velocity(&self) -> Vec<f64> {
        self.v
            .iter()
            .zip(&self.w)
            .flat_map(|(v, w)| [v.x, v.y, v.z, w.x, w.y, w.z])
            .collect()
    }
}

impl NeedleModel {
    pub fn new(beam: BeamMesh) -> Self {
        let mass = beam.lumped_mass();
        NeedleModel { beam, mass }
    }

    pub fn num_dofs(&self) -> usize {
        6 * self.beam.num_nodes()
    }

    pub fn rest_state(&self) -> NeedleState {
        let n = self.beam.num_nodes();
        NeedleState {
            x: self.beam.rest_positions.clone(),
            frames: self.beam.rest_frames.clone(),
            v: vec![Vector3::zeros(); n],
            w: vec![Vector3::zeros(); n],
        }
    }

    /// Backward-Euler system with `driven` nodes eliminated: their rows become
    /// identity with the required velocity change on the right-hand side.
    pub fn linearize(&self, state: &NeedleState, f_ext: &[f64], tau: f64, damping: Damping, driven: &[DrivenNode]) -> Result<Linearized> {
        let n = self.num_dofs();
        let mut prescribed: Vec<Option<f64>> = vec![None; n];
        let vel = state.velocity();
        for d in driven {
            for k in 0..3 {
                prescribed[6 * d.node + k] = Some(d.velocity[k] - vel[6 * d.node + k]);
                prescribed[6 * d.node + 3 + k] = Some(d.angular[k] - vel[6 * d.node + 3 + k]);
            }
        }
        let terms = (0..self.beam.segments.len())
            .into_par_iter()
            .map(|s| {
                let (f, k) = self.beam.element_force(s, &state.x, &state.frames)?;
                if f.iter().chain(k.iter()).all(|v| v.is_finite()) {
                    Ok((f, k))
                } else {
                    Err(Error::Numerical { element: s })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let mut a = SymmetricBuilder::new(n);
        let mut b = vec![0.0; n];
        let kscale = tau * damping.stiffness + tau * tau;
        for (seg, (fe, ke)) in self.beam.segments.iter().zip(&terms) {
            let dofs: Vec<usize> = seg.iter().flat_map(|&nd| (0..6).map(move |k| 6 * nd + k)).collect();
            let ve: Vec12 = Vec12::from_iterator(dofs.iter().map(|&i| vel[i]));
            let kv = ke * ve;
            for (i, &gi) in dofs.iter().enumerate() {
                b[gi] -= tau * fe[i] + kscale * kv[i];
                for (j, &gj) in dofs.iter().enumerate() {
                    let v = ke[(i, j)] * kscale;
                    match (prescribed[gi], prescribed[gj]) {
                        (None, None) => a.add(gi, gj, v),
                        (None, Some(p)) => b[gi] -= v * p,
                        _ => {}
                    }
                }
            }
        }
        for (node, &(mt, mr)) in self.mass.iter().enumerate() {
            for k in 0..6 {
                let dof = 6 * node + k;
                let m = if k < 3 { mt } else { mr };
                match prescribed[dof] {
                    Some(p) => {
                        a.add(dof, dof, 1.0);
                        b[dof] = p;
                    }
                    None => {
                        a.add(dof, dof, m * (1.0 + tau * damping.mass));
                        b[dof] += tau * f_ext[dof] - tau * damping.mass * m * vel[dof];
                    }
                }
            }
        }
        Ok(Linearized { a, b })
    }

    pub fn is_driven(driven: &[DrivenNode], dof: usize) -> bool {
        driven.iter().any(|d| d.node == dof / 6)
    }
}

/// Complete simulation state.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub tissue: TissueState,
    pub needle: Option<NeedleState>,
    pub time: f64,
    pub tau: f64,
}

impl SystemState {
    pub fn new(tissue: TissueState, needle: Option<NeedleState>, tau: f64) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::Argument(format!("time step must be positive, got {tau}")));
        }
        Ok(SystemState {
            tissue,
            needle,
            time: 0.0,
            tau,
        })
    }

    /// Global velocity vector: tissue DOFs followed by needle DOFs.
    pub fn velocity(&self) -> Vec<f64> {
        let mut v = self.tissue.velocity();
        if let Some(n) = &self.needle {
            v.extend(n.velocity());
        }
        v
    }
}

/// Factorised per-step system of tissue and (optionally) needle, block
/// diagonal over the global DOF vector `[tissue, needle]`.
pub struct StepSystem {
    pub tissue: SparseCholesky,
    pub needle: Option<SparseCholesky>,
    pub b: Vec<f64>,
    pub tissue_dofs: usize,
    needle_driven: Vec<DrivenNode>,
}

impl StepSystem {
    pub fn solver(&self) -> BlockDiagonal<'_> {
        let mut blocks: Vec<&dyn LinearSolve> = vec![&self.tissue];
        if let Some(n) = &self.needle {
            blocks.push(n);
        }
        BlockDiagonal::new(blocks)
    }

    /// Drops row entries on DOFs whose motion is prescribed.
    pub fn filter_row(&self, tissue: &TissueModel, row: &SparseRow) -> SparseRow {
        self.constrain(tissue, row, 0.0).0
    }

    /// Drops prescribed DOFs from `row · dv = c` and moves their known
    /// velocity changes to the right-hand side.
    pub fn constrain(&self, tissue: &TissueModel, row: &SparseRow, c: f64) -> (SparseRow, f64) {
        let mut kept = SparseRow::default();
        let mut c = c;
        for &(i, v) in &row.entries {
            let prescribed = if i < self.tissue_dofs {
                tissue.dof_fixed(i)
            } else {
                NeedleModel::is_driven(&self.needle_driven, i - self.tissue_dofs)
            };
            if prescribed {
                c -= v * self.b[i];
            } else {
                kept.entries.push((i, v));
            }
        }
        (kept, c)
    }
}

/// Owns the time-stepping parameters and symbolic factorisations.
pub struct Stepper {
    pub damping: Damping,
    tissue_cache: SymbolicCache,
    needle_cache: SymbolicCache,
}

/// Inputs that change from step to step.
#[derive(Debug, Clone, Default)]
pub struct StepLoads<'a> {
    pub tissue_force: Option<&'a [f64]>,
    pub needle_force: Option<&'a [f64]>,
    pub driven: Vec<DrivenNode>,
}

impl Stepper {
    pub fn new(damping: Damping) -> Self {
        Stepper {
            damping,
            tissue_cache: SymbolicCache::default(),
            needle_cache: SymbolicCache::default(),
        }
    }

    /// Step 1: assemble and factorise `A`, keeping `b`.
    pub fn factor(&mut self, tissue: &TissueModel, needle: Option<&NeedleModel>, state: &SystemState, loads: &StepLoads) -> Result<StepSystem> {
        let zeros_t = vec![0.0; tissue.num_dofs()];
        let lt = tissue.linearize(&state.tissue, loads.tissue_force.unwrap_or(&zeros_t), state.tau, self.damping)?;
        let ft = SparseCholesky::factor(&lt.a, &mut self.tissue_cache).map_err(|e| tissue.singular(e))?;
        let mut b = lt.b;
        let nf = match (needle, &state.needle) {
            (Some(model), Some(ns)) => {
                let zeros_n = vec![0.0; model.num_dofs()];
                let ln = model.linearize(ns, loads.needle_force.unwrap_or(&zeros_n), state.tau, self.damping, &loads.driven)?;
                b.extend(ln.b);
                Some(SparseCholesky::factor(&ln.a, &mut self.needle_cache)?)
            }
            _ => None,
        };
        Ok(StepSystem {
            tissue: ft,
            needle: nf,
            b,
            tissue_dofs: tissue.num_dofs(),
            needle_driven: loads.driven.clone(),
        })
    }

    /// Full step with every constraint row enforced: factorise, Schur solve,
    /// then update velocities, positions and rotations. `blocks` hold
    /// velocity-level rows over the global DOF vector.
    pub fn step(
        &mut self,
        tissue: &TissueModel,
        needle: Option<&NeedleModel>,
        state: &mut SystemState,
        blocks: &[ConstraintBlock],
        loads: &StepLoads,
    ) -> Result<StepReport> {
        let sys = self.factor(tissue, needle, state, loads)?;
        let (rows, c): (Vec<SparseRow>, Vec<f64>) = blocks
            .iter()
            .flat_map(|blk| blk.rows.iter().zip(blk.rhs.iter().copied()))
            .map(|(r, c)| sys.constrain(tissue, r, c))
            .filter(|(r, _)| !r.is_empty())
            .unzip();
        let schur = SchurSystem::new(&sys.solver(), &sys.b, rows);
        let modes = vec![RowMode::Enforce; c.len()];
        let sol = schur.solve(&c, &modes)?;
        let residual = schur.residual(&sol.x, &c, &modes);
        let scale = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        apply_velocity_change(tissue, needle, state, &sol.x)?;
        Ok(StepReport {
            lambda: sol.lambda,
            residual,
            rhs_scale: scale,
        })
    }
}

/// Outcome of one constrained step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub lambda: Vec<f64>,
    /// `‖H dv - c‖∞` over enforced rows.
    pub residual: f64,
    /// `‖c‖∞`.
    pub rhs_scale: f64,
}

impl StepReport {
    /// The relative residual bound `‖Hx - c‖∞ ≤ 1e-8 ‖c‖∞ + 1e-10`.
    pub fn within_bound(&self) -> bool {
        self.residual <= 1e-8 * self.rhs_scale + 1e-10
    }
}

/// `v += dv`, `x += τ v`, needle frames by the exponential of `τ ω`, then
/// fresh element rotations.
pub fn apply_velocity_change(tissue: &TissueModel, needle: Option<&NeedleModel>, state: &mut SystemState, dv: &[f64]) -> Result<()> {
    let tau = state.tau;
    let nt = tissue.num_nodes();
    for i in 0..nt {
        if tissue.fixed[i] {
            state.tissue.v[i] = Vector3::zeros();
            continue;
        }
        let d = Vector3::new(dv[3 * i], dv[3 * i + 1], dv[3 * i + 2]);
        state.tissue.v[i] += d;
        state.tissue.x[i] += state.tissue.v[i] * tau;
    }
    if let Some(i) = state.tissue.x.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
        return Err(Error::Numerical { element: i });
    }
    state.tissue.rotations = tissue.rotations(&state.tissue.x);
    if let (Some(_), Some(ns)) = (needle, state.needle.as_mut()) {
        let off = tissue.num_dofs();
        for i in 0..ns.x.len() {
            let b = off + 6 * i;
            ns.v[i] += Vector3::new(dv[b], dv[b + 1], dv[b + 2]);
            ns.w[i] += Vector3::new(dv[b + 3], dv[b + 4], dv[b + 5]);
            ns.x[i] += ns.v[i] * tau;
            ns.frames[i] = exp_rotation(&(ns.w[i] * tau)) * ns.frames[i];
        }
    }
    state.time += tau;
    Ok(())
}
