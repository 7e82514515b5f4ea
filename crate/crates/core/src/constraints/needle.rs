//! Needle-tissue coupling: puncture at the surface, tip guidance and Coulomb
//! friction at points sampled along the inserted shaft.

use nalgebra::Vector3;

use super::{locate_and_weights, ConstraintBlock, ConstraintKind, CouplingParams, MapRow, RowMode, RowStatus, SchurSolution, SchurSystem, SparseRow};
use crate::classify::{AccelGrid, SurfaceQuery};
use crate::dynamics::{NeedleModel, NeedleState, TissueModel, TissueState};
use crate::error::Result;
use crate::geometry::Point3;
use crate::mesh::TetMesh;

const MAX_CONTACT_ITERATIONS: usize = 100;
const CONTACT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Tip outside the tissue, possibly pressing on the surface.
    Approach,
    Inserted,
    Retracting,
    /// Fully withdrawn after a retraction.
    Out,
}

/// A tissue material point the shaft slides through.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShaftPoint {
    pub point: MapRow,
    /// `Stick` or `Slip(λ)` of the axial friction row.
    pub status: RowStatus,
}

/// Needle-tissue interaction state carried between steps.
#[derive(Debug, Clone)]
pub struct NeedleCoupling {
    pub params: CouplingParams,
    pub phase: Phase,
    /// Surface material point in contact during the approach.
    pub contact: Option<MapRow>,
    pub shaft: Vec<ShaftPoint>,
    /// Tissue material point at the tip in the current step.
    pub tip: Option<MapRow>,
}

/// Everything the coupling reads from the current step.
pub struct CouplingContext<'a> {
    pub tissue: &'a TissueModel,
    pub tissue_state: &'a TissueState,
    /// Tissue boundary in the reference configuration.
    pub surface: &'a SurfaceQuery,
    /// Grid over the reference mesh.
    pub grid: &'a AccelGrid,
    pub needle: &'a NeedleModel,
    pub needle_state: &'a NeedleState,
    pub tau: f64,
}

impl CouplingContext<'_> {
    fn offset(&self) -> usize {
        self.tissue.num_dofs()
    }

    fn tip_node(&self) -> usize {
        self.needle.beam.num_nodes() - 1
    }

    fn tip_position(&self) -> Point3 {
        self.needle_state.x[self.tip_node()]
    }

    fn tip_tangent(&self) -> Vector3<f64> {
        self.needle_state.frames[self.tip_node()].column(0).into_owned()
    }

    /// Lateral pair orthogonal to `t`, transported from the node frame.
    fn lateral(&self, node: usize, t: &Vector3<f64>) -> [Vector3<f64>; 2] {
        let f = &self.needle_state.frames[node];
        let mut n1 = f.column(1) - t * t.dot(&f.column(1));
        if n1.norm() < 1e-8 {
            n1 = f.column(2) - t * t.dot(&f.column(2));
        }
        let n1 = n1.normalize();
        [n1, t.cross(&n1)]
    }

    /// Row for `dir · (v_needle(seg, s) - v_P)` over the global DOFs.
    fn relative_row(&self, seg: usize, s: f64, point: &MapRow, dir: &Vector3<f64>) -> SparseRow {
        let off = self.offset();
        let mut row = SparseRow::default();
        for (node, rot, coeff) in self.needle.beam.velocity_row(seg, s, dir, &self.needle_state.frames) {
            for k in 0..3 {
                if coeff[k] != 0.0 {
                    row.entries.push((off + 6 * node + if rot { 3 } else { 0 } + k, coeff[k]));
                }
            }
        }
        row.extend(&point.directional_row(dir, 0), -1.0);
        row
    }

    /// Closest centreline parameter `(segment, s)` to `p` using element chords.
    fn project(&self, p: &Point3) -> (usize, f64) {
        let x = &self.needle_state.x;
        let mut best = (0, 0.0, f64::INFINITY);
        for (k, seg) in self.needle.beam.segments.iter().enumerate() {
            let (a, b) = (x[seg[0]], x[seg[1]]);
            let d = b - a;
            let s = ((p - a).dot(&d) / d.norm_squared()).clamp(0.0, 1.0);
            let dist = (a + d * s - p).norm();
            if dist < best.2 {
                best = (k, s, dist);
            }
        }
        (best.0, best.1)
    }

    fn segment_tangent(&self, seg: usize) -> Vector3<f64> {
        let [a, b] = self.needle.beam.segments[seg];
        (self.needle_state.x[b] - self.needle_state.x[a]).normalize()
    }

    /// Tissue material point currently at `p`, if `p` is inside the tissue.
    fn material_point_at(&self, p: &Point3, deformed: &TetMesh, grid: &AccelGrid) -> Option<MapRow> {
        let row = locate_and_weights(p, deformed, grid).ok()?;
        let reference = row.evaluate(&self.tissue.mesh.nodes);
        if self.surface.signed_distance(&reference) > 0.0 {
            return None;
        }
        let active = row.nodes.iter().all(|&n| !self.tissue.fixed[n] || self.tissue.mass[n] > 0.0);
        active.then_some(row)
    }

    fn velocity(&self) -> Vec<f64> {
        let mut v = self.tissue_state.velocity();
        v.extend(self.needle_state.velocity());
        v
    }
}

impl NeedleCoupling {
    pub fn new(params: CouplingParams) -> Self {
        NeedleCoupling {
            params,
            phase: Phase::Approach,
            contact: None,
            shaft: Vec::new(),
            tip: None,
        }
    }

    pub fn start_retraction(&mut self) {
        if self.phase == Phase::Inserted || self.phase == Phase::Approach {
            self.phase = Phase::Retracting;
            self.contact = None;
        }
    }

    /// Updates contact, tip and shaft bookkeeping for the current
    /// configuration and returns the velocity-level blocks of this step.
    pub fn blocks(&mut self, ctx: &CouplingContext) -> Result<Vec<ConstraintBlock>> {
        let tip = ctx.tip_position();
        let t = ctx.tip_tangent();
        let deformed = TetMesh {
            nodes: ctx.tissue_state.x.clone(),
            tets: ctx.tissue.mesh.tets.clone(),
        };
        let mut blocks = Vec::new();
        match self.phase {
            Phase::Approach => {
                if self.contact.is_none() && ctx.surface.signed_distance(&tip) <= 0.0 {
                    let (q, ..) = ctx.surface.nearest(&tip);
                    if let Ok(row) = locate_and_weights(&q, &ctx.tissue.mesh, ctx.grid) {
                        self.contact = Some(row);
                    }
                }
                if let Some(p) = self.contact {
                    blocks.push(self.puncture_block(ctx, &p, &t));
                }
                return Ok(blocks);
            }
            Phase::Out => return Ok(blocks),
            Phase::Inserted | Phase::Retracting => {}
        }
        let grid = AccelGrid::build(&deformed, None, ctx.grid.cube, 0.0)?;
        self.tip = ctx.material_point_at(&tip, &deformed, &grid);
        let x = &ctx.tissue_state.x;
        if self.phase == Phase::Inserted {
            if let Some(tp) = self.tip {
                let spacing = self.params.spacing;
                let far_enough = self.shaft.last().is_none_or(|last| (last.point.evaluate(x) - tip).norm() >= spacing);
                if far_enough {
                    self.shaft.push(ShaftPoint {
                        point: tp,
                        status: RowStatus::Stick,
                    });
                }
            }
        } else {
            let last_seg = ctx.needle.beam.segments.len() - 1;
            self.shaft.retain(|sp| {
                let p = sp.point.evaluate(x);
                let (seg, s) = ctx.project(&p);
                !(seg == last_seg && s >= 1.0 && (p - tip).dot(&t) > 0.0)
            });
            if self.shaft.is_empty() && self.tip.is_none() {
                self.phase = Phase::Out;
                return Ok(blocks);
            }
        }
        // a shaft point close to the tip would duplicate the tip rows
        let clear = self
            .shaft
            .last()
            .is_none_or(|last| (last.point.evaluate(x) - tip).norm() >= 0.25 * self.params.spacing);
        if let Some(tp) = self.tip.filter(|_| clear) {
            let last_seg = ctx.needle.beam.segments.len() - 1;
            let lat = ctx.lateral(ctx.tip_node(), &t);
            let v = ctx.velocity();
            let rows: Vec<SparseRow> = lat.iter().map(|d| ctx.relative_row(last_seg, 1.0, &tp, d)).collect();
            let rhs = rows.iter().map(|r| -r.dot(&v)).collect();
            let mut b = ConstraintBlock::new(ConstraintKind::Tip, rows, rhs);
            b.params = Some(self.params);
            blocks.push(b);
        }
        for sp in &self.shaft {
            blocks.push(self.shaft_block(ctx, sp));
        }
        Ok(blocks)
    }

    fn puncture_block(&self, ctx: &CouplingContext, p: &MapRow, t: &Vector3<f64>) -> ConstraintBlock {
        let last_seg = ctx.needle.beam.segments.len() - 1;
        let x = &ctx.tissue_state.x;
        let gap = ctx.tip_position() - p.evaluate(x);
        let lat = ctx.lateral(ctx.tip_node(), t);
        let v = ctx.velocity();
        let dirs = [*t, lat[0], lat[1]];
        let rows: Vec<SparseRow> = dirs.iter().map(|d| ctx.relative_row(last_seg, 1.0, p, d)).collect();
        let rhs = rows
            .iter()
            .zip(&dirs)
            .map(|(r, d)| -gap.dot(d) / ctx.tau - r.dot(&v))
            .collect();
        let mut b = ConstraintBlock::new(ConstraintKind::Puncture, rows, rhs);
        b.params = Some(self.params);
        b
    }

    fn shaft_block(&self, ctx: &CouplingContext, sp: &ShaftPoint) -> ConstraintBlock {
        let x = &ctx.tissue_state.x;
        let p = sp.point.evaluate(x);
        let (seg, s) = ctx.project(&p);
        let t = ctx.segment_tangent(seg);
        let node = ctx.needle.beam.segments[seg][if s < 0.5 { 0 } else { 1 }];
        let lat = ctx.lateral(node, &t);
        let on_needle = ctx.needle.beam.point_at(seg, s, &ctx.needle_state.x, &ctx.needle_state.frames);
        let gap = on_needle - p;
        let v = ctx.velocity();
        let dirs = [lat[0], lat[1], t];
        let rows: Vec<SparseRow> = dirs.iter().map(|d| ctx.relative_row(seg, s, &sp.point, d)).collect();
        let rhs = vec![
            -gap.dot(&lat[0]) / ctx.tau - rows[0].dot(&v),
            -gap.dot(&lat[1]) / ctx.tau - rows[1].dot(&v),
            -rows[2].dot(&v),
        ];
        let mut b = ConstraintBlock::new(ConstraintKind::ShaftFriction, rows, rhs);
        b.status[2] = sp.status;
        b.params = Some(self.params);
        b
    }

    /// Solves the step with unilateral puncture and stick-slip friction,
    /// iterating the row modes to a fixed point. Coupling blocks occupy the
    /// Schur rows from `first_row` on, in the order returned by [`Self::blocks`].
    /// Multipliers of a step of length `tau` are impulses `τ f`.
    pub fn solve(&mut self, schur: &SchurSystem, c: &[f64], first_row: usize, blocks: &[ConstraintBlock], tau: f64) -> Result<ContactSolution> {
        let mut modes = vec![RowMode::Enforce; c.len()];
        let mut layout = Vec::new();
        let mut row = first_row;
        for b in blocks {
            layout.push((b.kind, row));
            if b.kind == ConstraintKind::ShaftFriction {
                if let RowStatus::Slip(l) = b.status[2] {
                    modes[row + 2] = RowMode::Known(l);
                }
            }
            row += b.len();
        }
        let mu = self.params.friction;
        let fp = self.params.penetration_strength * tau;
        let mut punctured = false;
        let mut sol = schur.solve(c, &modes)?;
        for _ in 0..MAX_CONTACT_ITERATIONS {
            let mut changed = false;
            for &(kind, r) in &layout {
                match kind {
                    ConstraintKind::Puncture => {
                        let ax = r;
                        let rel = schur.rows[ax].dot(&sol.x) - c[ax];
                        match modes[ax] {
                            RowMode::Enforce if sol.lambda[ax] < 0.0 => {
                                modes[ax] = RowMode::Known(0.0);
                                changed = true;
                            }
                            RowMode::Enforce if sol.lambda[ax] > fp => {
                                modes[ax] = RowMode::Known(fp);
                                changed = true;
                            }
                            RowMode::Known(l) if l == 0.0 && rel > CONTACT_TOL => {
                                modes[ax] = RowMode::Enforce;
                                changed = true;
                            }
                            _ => {}
                        }
                    }
                    ConstraintKind::ShaftFriction => {
                        let ax = r + 2;
                        let bound = mu * (sol.lambda[r].powi(2) + sol.lambda[r + 1].powi(2)).sqrt();
                        match modes[ax] {
                            RowMode::Enforce => {
                                let l = sol.lambda[ax];
                                if l.abs() > bound * (1.0 + CONTACT_TOL) + CONTACT_TOL {
                                    modes[ax] = RowMode::Known(l.signum() * bound);
                                    changed = true;
                                }
                            }
                            RowMode::Known(l) => {
                                // sliding velocity after the solve; friction must oppose it
                                let rel = schur.rows[ax].dot(&sol.x) - c[ax];
                                let dir = if l != 0.0 { l.signum() } else { rel.signum() };
                                if rel * dir < -CONTACT_TOL {
                                    modes[ax] = RowMode::Enforce;
                                    changed = true;
                                } else {
                                    let target = dir * bound;
                                    if (target - l).abs() > CONTACT_TOL * (1.0 + bound) {
                                        modes[ax] = RowMode::Known(target);
                                        changed = true;
                                    }
                                }
                            }
                        }
                    }
                    _ => {}
                }
            }
            if !changed {
                break;
            }
            sol = schur.solve(c, &modes)?;
        }
        // bookkeeping for the next step
        let mut axial_force = 0.0;
        let mut k = 0;
        for &(kind, r) in &layout {
            match kind {
                ConstraintKind::Puncture => {
                    axial_force += sol.lambda[r];
                    if modes[r] == RowMode::Known(fp) {
                        punctured = true;
                    }
                }
                ConstraintKind::ShaftFriction => {
                    let ax = r + 2;
                    axial_force += sol.lambda[ax];
                    self.shaft[k].status = match modes[ax] {
                        RowMode::Enforce => RowStatus::Stick,
                        RowMode::Known(l) => RowStatus::Slip(l),
                    };
                    k += 1;
                }
                _ => {}
            }
        }
        if punctured && self.phase == Phase::Approach {
            if let Some(p) = self.contact.take() {
                self.shaft.push(ShaftPoint {
                    point: p,
                    status: RowStatus::Stick,
                });
            }
            self.phase = Phase::Inserted;
        }
        Ok(ContactSolution {
            solution: sol,
            modes,
            axial_force: axial_force / tau,
            punctured,
        })
    }
}

/// Result of the coupled solve of one step.
#[derive(Debug, Clone)]
pub struct ContactSolution {
    pub solution: SchurSolution,
    pub modes: Vec<RowMode>,
    /// Sum of the axial multipliers; positive opposes insertion.
    pub axial_force: f64,
    /// True if the puncture threshold was reached in this step.
    pub punctured: bool,
}

/// Blocks of the current step; see [`NeedleCoupling::blocks`].
pub fn needle_coupling(coupling: &mut NeedleCoupling, ctx: &CouplingContext) -> Result<Vec<ConstraintBlock>> {
    coupling.blocks(ctx)
}
