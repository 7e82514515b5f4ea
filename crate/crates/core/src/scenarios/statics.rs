//! Static beam solves, error norms against a fine reference, and the
//! CutFEM against FEM probe comparison.

use nalgebra::Vector3;
use rayon::prelude::*;

use super::insertion::mesh_grid;
use super::{build_tissue, label_field, BeamGeometry, ComparisonConfig, ConvergenceConfig, LoadCase, ModelMode, OutputSink};
use crate::classify::AccelGrid;
use crate::dynamics::{Stepper, StepLoads, SystemState, TissueModel};
use crate::error::{Error, Result};
use crate::fem::{isotropic_tensor, shape_gradients, strain_displacement, Material};
use crate::geometry::{barycentric, centroid, Point3, TET_FACES};
use crate::mesh::{generate_box_mesh, generate_sphere_surface, SimulationOutput, TetMesh};

/// Consistent nodal forces of a uniform traction on the boundary faces lying
/// in the plane `x[axis] = value`.
pub fn face_pressure(mesh: &TetMesh, axis: usize, value: f64, traction: Vector3<f64>) -> Vec<f64> {
    let tol = 1e-9 * mesh.bounding_box().diagonal();
    let mut f = vec![0.0; 3 * mesh.num_nodes()];
    for (e, k) in mesh.boundary_faces() {
        let t = mesh.tets[e];
        let ids = TET_FACES[k].map(|l| t[l]);
        let p = ids.map(|i| mesh.nodes[i]);
        if p.iter().all(|q| (q[axis] - value).abs() <= tol) {
            let area = 0.5 * (p[1] - p[0]).cross(&(p[2] - p[0])).norm();
            for &i in &ids {
                for a in 0..3 {
                    f[3 * i + a] += traction[a] * area / 3.0;
                }
            }
        }
    }
    f
}

fn traction(case: LoadCase, pressure: f64) -> Vector3<f64> {
    match case {
        LoadCase::Tensile => Vector3::new(-pressure, 0.0, 0.0),
        LoadCase::Bending => Vector3::new(0.0, 0.0, pressure),
    }
}

/// Displacement field of a static beam solve.
#[derive(Debug, Clone)]
pub struct StaticSolution {
    pub tissue: TissueModel,
    pub u: Vec<Vector3<f64>>,
    /// Element materials for energy norms, indexed like `mesh.tets`.
    pub materials: Vec<Material>,
}

impl StaticSolution {
    pub fn dofs(&self) -> usize {
        self.tissue.num_dofs()
    }

    pub fn mesh(&self) -> &TetMesh {
        &self.tissue.mesh
    }
}

fn beam_tissue(geometry: &BeamGeometry, counts: [usize; 3], outside: &Material, inside: &Material, mode: ModelMode) -> Result<(TissueModel, Vec<Material>, Option<crate::classify::Immersion>)> {
    let mesh = generate_box_mesh(geometry.dims, counts)?;
    let surface = generate_sphere_surface(geometry.center(), geometry.sphere_radius, geometry.sphere_subdivisions)?;
    let c = geometry.center();
    let r = geometry.sphere_radius;
    let materials = (0..mesh.num_tets())
        .map(|e| if (centroid(&mesh.corners(e)) - c).norm() < r { *inside } else { *outside })
        .collect();
    let (mut tissue, im) = build_tissue(mesh, &surface, outside, inside, mode)?;
    let xmax = geometry.dims[0];
    tissue.fix_nodes(|p| p.x >= xmax - 1e-9 * xmax);
    Ok((tissue, materials, im))
}

/// Static solve of the clamped beam with a uniform traction on the free end.
pub fn solve_beam_static(
    geometry: &BeamGeometry,
    counts: [usize; 3],
    outside: &Material,
    inside: &Material,
    mode: ModelMode,
    case: LoadCase,
    pressure: f64,
) -> Result<StaticSolution> {
    let (tissue, materials, _) = beam_tissue(geometry, counts, outside, inside, mode)?;
    let f = face_pressure(&tissue.mesh, 0, 0.0, traction(case, pressure));
    let sol = tissue.solve_static(&f, &[])?;
    let u = sol.x.chunks(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect();
    Ok(StaticSolution { tissue, u, materials })
}

/// Relative errors of one coarse solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorRow {
    pub counts: [usize; 3],
    pub dofs: usize,
    pub l2: f64,
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub case: LoadCase,
    pub rows: Vec<ErrorRow>,
    pub l2_slope: f64,
    pub energy_slope: f64,
    /// False if some error grew under refinement.
    pub monotone: bool,
}

/// Least-squares slope of `log y` against `log x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Locates a point in the coarse mesh, extrapolating from the best element
/// when it lies outside; the flag reports extrapolation.
fn coarse_weights(p: &Point3, mesh: &TetMesh, grid: &AccelGrid) -> (usize, [f64; 4], bool) {
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
    if let Some((m, e, w)) = best {
        return (e, w, m < -1e-9);
    }
    let e = (0..mesh.num_tets())
        .min_by(|&a, &b| (centroid(&mesh.corners(a)) - p).norm_squared().total_cmp(&(centroid(&mesh.corners(b)) - p).norm_squared()))
        .unwrap_or(0);
    let w = barycentric(p, &mesh.corners(e)).unwrap_or([0.25; 4]);
    (e, w, true)
}

fn element_strain(mesh: &TetMesh, e: usize, u: &[Vector3<f64>]) -> Result<nalgebra::SVector<f64, 6>> {
    let (g, _) = shape_gradients(&mesh.corners(e))?;
    let b = strain_displacement(&g);
    let t = mesh.tets[e];
    let mut ue = nalgebra::SVector::<f64, 12>::zeros();
    for a in 0..4 {
        ue.fixed_rows_mut::<3>(3 * a).copy_from(&u[t[a]]);
    }
    Ok(b * ue)
}

/// Relative L2 and energy errors of `u_h` on `coarse` against `u_r` on
/// `reference`, integrated with one point per reference element. Returns
/// the number of quadrature points that had to be extrapolated as well.
pub fn error_norms(
    coarse: &TetMesh,
    u_h: &[Vector3<f64>],
    reference: &TetMesh,
    u_r: &[Vector3<f64>],
    materials: &[Material],
) -> Result<(f64, f64, usize)> {
    if u_h.len() != coarse.num_nodes() || u_r.len() != reference.num_nodes() || materials.len() != reference.num_tets() {
        return Err(Error::Argument("field sizes do not match the meshes".into()));
    }
    let grid = mesh_grid(coarse)?;
    let coarse_strain = (0..coarse.num_tets())
        .into_par_iter()
        .map(|e| element_strain(coarse, e, u_h))
        .collect::<Result<Vec<_>>>()?;
    let parts = (0..reference.num_tets())
        .into_par_iter()
        .map(|e| {
            let corners = reference.corners(e);
            let (g, vol) = shape_gradients(&corners)?;
            let q = centroid(&corners);
            let t = reference.tets[e];
            let ur = t.iter().map(|&i| u_r[i]).sum::<Vector3<f64>>() / 4.0;
            let (ce, w, extrapolated) = coarse_weights(&q, coarse, &grid);
            let ct = coarse.tets[ce];
            let uh: Vector3<f64> = (0..4).map(|a| u_h[ct[a]] * w[a]).sum();
            let b = strain_displacement(&g);
            let mut ue = nalgebra::SVector::<f64, 12>::zeros();
            for a in 0..4 {
                ue.fixed_rows_mut::<3>(3 * a).copy_from(&u_r[t[a]]);
            }
            let er = b * ue;
            let d = isotropic_tensor(&materials[e]);
            let de = er - coarse_strain[ce];
            Ok((
                (ur - uh).norm_squared() * vol,
                ur.norm_squared() * vol,
                de.dot(&(d * de)) * vol,
                er.dot(&(d * er)) * vol,
                extrapolated as usize,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let (mut el2, mut rl2, mut een, mut ren, mut outside) = (0.0, 0.0, 0.0, 0.0, 0usize);
    for p in parts {
        el2 += p.0;
        rl2 += p.1;
        een += p.2;
        ren += p.3;
        outside += p.4;
    }
    if outside > 0 {
        log::warn!("{outside} quadrature points extrapolated from the nearest coarse element");
    }
    let ratio = |e: f64, r: f64| if r > 0.0 { (e / r).sqrt() } else { e.sqrt() };
    Ok((ratio(el2, rl2), ratio(een, ren), outside))
}

/// Static convergence study for each load case.
pub fn run_convergence(config: &ConvergenceConfig, sink: &OutputSink) -> Result<Vec<ErrorReport>> {
    config.validate()?;
    let mut reports = Vec::new();
    for &case in &config.cases {
        log::info!("{case:?}: reference {:?}", config.reference);
        let reference = solve_beam_static(&config.geometry, config.reference, &config.outside, &config.inside, ModelMode::Fem, case, config.pressure)?;
        let mut rows = Vec::new();
        for &counts in &config.meshes {
            let coarse = solve_beam_static(&config.geometry, counts, &config.outside, &config.inside, config.mode, case, config.pressure)?;
            let (l2, energy, _) = error_norms(coarse.mesh(), &coarse.u, reference.mesh(), &reference.u, &reference.materials)?;
            log::info!("{case:?} {counts:?}: N = {}, L2 = {l2:.4e}, energy = {energy:.4e}", coarse.dofs());
            rows.push(ErrorRow {
                counts,
                dofs: coarse.dofs(),
                l2,
                energy,
            });
        }
        let k = config.fit_meshes.unwrap_or(rows.len());
        let n: Vec<f64> = rows[..k].iter().map(|r| r.dofs as f64).collect();
        let l2: Vec<f64> = rows[..k].iter().map(|r| r.l2).collect();
        let en: Vec<f64> = rows[..k].iter().map(|r| r.energy).collect();
        let monotone = rows.windows(2).all(|w| w[1].l2 <= w[0].l2 && w[1].energy <= w[0].energy);
        if !monotone {
            log::warn!("{case:?}: errors do not decrease monotonically");
        }
        let report = ErrorReport {
            case,
            l2_slope: fit_slope(&n, &l2),
            energy_slope: fit_slope(&n, &en),
            rows,
            monotone,
        };
        let mut out = SimulationOutput::new(&["nx", "ny", "nz", "dofs", "l2_error", "energy_error"]);
        for r in &report.rows {
            out.push(vec![r.counts[0] as f64, r.counts[1] as f64, r.counts[2] as f64, r.dofs as f64, r.l2, r.energy])?;
        }
        sink.csv(&format!("convergence_{}.csv", case_name(case)), &out)?;
        reports.push(report);
    }
    let mut slopes = SimulationOutput::new(&["case", "l2_slope", "energy_slope"]);
    for (i, r) in reports.iter().enumerate() {
        slopes.push(vec![i as f64, r.l2_slope, r.energy_slope])?;
    }
    sink.csv("convergence_slopes.csv", &slopes)?;
    Ok(reports)
}

fn case_name(case: LoadCase) -> &'static str {
    match case {
        LoadCase::Tensile => "tensile",
        LoadCase::Bending => "bending",
    }
}

/// Probe values of the two models on one mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub counts: [usize; 3],
    pub dofs: usize,
    pub cut_static: Vector3<f64>,
    pub fem_static: Vector3<f64>,
    /// Per-step probe displacement of the dynamic runs.
    pub cut_series: Vec<Vector3<f64>>,
    pub fem_series: Vec<Vector3<f64>>,
}

impl ComparisonRow {
    /// `|u_cut - u_fem| / |u_fem|` of the final static probe values.
    pub fn relative_difference(&self) -> f64 {
        (self.cut_static - self.fem_static).norm() / self.fem_static.norm().max(f64::MIN_POSITIVE)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
}

fn probe_value(mesh: &TetMesh, u: &[Vector3<f64>], probe: &Point3) -> Result<Vector3<f64>> {
    let grid = mesh_grid(mesh)?;
    let row = crate::constraints::locate_and_weights(probe, mesh, &grid).map_err(|_| Error::Config(format!("probe {probe:?} lies outside the mesh")))?;
    Ok((0..4).map(|a| u[row.nodes[a]] * row.weights[a]).sum())
}

fn dynamic_series(tissue: &TissueModel, f: &[f64], probe: &Point3, config: &ComparisonConfig, sink: &OutputSink, tag: &str) -> Result<Vec<Vector3<f64>>> {
    let mut state = SystemState::new(tissue.rest_state(), None, config.time.tau)?;
    let mut stepper = Stepper::new(config.time.damping);
    let loads = StepLoads {
        tissue_force: Some(f),
        ..Default::default()
    };
    let mut series = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let report = stepper.step(tissue, None, &mut state, &[], &loads)?;
        if !report.within_bound() {
            return Err(Error::Singular(format!("constraint residual {} at step {step}", report.residual)));
        }
        let u: Vec<Vector3<f64>> = state.tissue.x.iter().zip(&tissue.mesh.nodes).map(|(x, r)| x - r).collect();
        series.push(probe_value(&tissue.mesh, &u, probe)?);
        if sink.wants_snapshot(step) {
            sink.snapshot(&format!("{tag}_{step:05}.vtk"), &tissue.mesh, &state.tissue.x, &[])?;
        }
    }
    Ok(series)
}

/// CutFEM (interface mode) against FEM with centroid material assignment
/// on each mesh: static probe values and a dynamic probe series.
pub fn run_comparison(config: &ComparisonConfig, sink: &OutputSink) -> Result<ComparisonReport> {
    config.validate()?;
    let probe = Point3::from(config.probe);
    let t = traction(config.case, config.pressure);
    let mut rows = Vec::new();
    for &counts in &config.meshes {
        let (cut, _, im) = beam_tissue(&config.geometry, counts, &config.outside, &config.inside, ModelMode::Interface)?;
        let (fem, _, _) = beam_tissue(&config.geometry, counts, &config.outside, &config.inside, ModelMode::Fem)?;
        let f = face_pressure(&cut.mesh, 0, 0.0, t);
        let solve = |tissue: &TissueModel| -> Result<Vector3<f64>> {
            let s = tissue.solve_static(&f, &[])?;
            let u: Vec<Vector3<f64>> = s.x.chunks(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect();
            probe_value(&tissue.mesh, &u, &probe)
        };
        let cut_static = solve(&cut)?;
        let fem_static = solve(&fem)?;
        let tag = format!("{}x{}x{}", counts[0], counts[1], counts[2]);
        if sink.dir.is_some() {
            sink.snapshot(&format!("comparison_{tag}_labels.vtk"), &cut.mesh, &cut.mesh.nodes, &[label_field(im.as_ref(), cut.mesh.num_tets())])?;
        }
        let cut_series = dynamic_series(&cut, &f, &probe, config, sink, &format!("comparison_cut_{tag}"))?;
        let fem_series = dynamic_series(&fem, &f, &probe, config, sink, &format!("comparison_fem_{tag}"))?;
        let mut out = SimulationOutput::new(&["step", "time", "cut_ux", "cut_uy", "cut_uz", "fem_ux", "fem_uy", "fem_uz"]);
        for (k, (c, e)) in cut_series.iter().zip(&fem_series).enumerate() {
            out.push(vec![(k + 1) as f64, (k + 1) as f64 * config.time.tau, c.x, c.y, c.z, e.x, e.y, e.z])?;
        }
        sink.csv(&format!("comparison_{tag}.csv"), &out)?;
        let row = ComparisonRow {
            counts,
            dofs: cut.num_dofs(),
            cut_static,
            fem_static,
            cut_series,
            fem_series,
        };
        log::info!("{tag}: cut {:?} fem {:?} rel {:.3e}", row.cut_static, row.fem_static, row.relative_difference());
        rows.push(row);
    }
    let mut out = SimulationOutput::new(&["dofs", "cut_uz", "fem_uz", "relative_difference"]);
    for r in &rows {
        out.push(vec![r.dofs as f64, r.cut_static.z, r.fem_static.z, r.relative_difference()])?;
    }
    sink.csv("comparison.csv", &out)?;
    Ok(ComparisonReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_box(n: usize) -> TetMesh {
        generate_box_mesh([1.0, 1.0, 1.0], [n, n, n]).unwrap()
    }

    #[test]
    fn slope_of_power_law() {
        let x = [10.0, 100.0, 1000.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-2.0 / 3.0)).collect();
        assert!((fit_slope(&x, &y) + 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn pressure_sums_to_total_force() {
        let m = generate_box_mesh([6.0, 2.0, 2.0], [7, 3, 3]).unwrap();
        let f = face_pressure(&m, 0, 0.0, Vector3::new(0.0, 0.0, -5.0));
        let fz: f64 = f.iter().skip(2).step_by(3).sum();
        assert!((fz + 20.0).abs() < 1e-12);
    }

    #[test]
    fn identical_fields_have_zero_error() {
        let m = unit_box(4);
        let u: Vec<Vector3<f64>> = m.nodes.iter().map(|p| Vector3::new(p.y * p.z, p.x, 0.1)).collect();
        let mat = vec![Material::new(100.0, 0.3, 1.0).unwrap(); m.num_tets()];
        let (l2, en, out) = error_norms(&m, &u, &m, &u, &mat).unwrap();
        assert!(l2 < 1e-14 && en < 1e-14);
        assert_eq!(out, 0);
    }

    #[test]
    fn scaled_field_has_ratio_error() {
        let m = unit_box(3);
        let u: Vec<Vector3<f64>> = m.nodes.iter().map(|p| Vector3::new(p.x * p.x, p.y, p.z * p.x)).collect();
        let uh: Vec<Vector3<f64>> = u.iter().map(|v| v * 1.1).collect();
        let mat = vec![Material::new(100.0, 0.3, 1.0).unwrap(); m.num_tets()];
        let (l2, en, _) = error_norms(&m, &uh, &m, &u, &mat).unwrap();
        assert!((l2 - 0.1).abs() < 1e-12);
        assert!((en - 0.1).abs() < 1e-12);
    }

    #[test]
    fn linear_field_is_exact_across_meshes() {
        let coarse = unit_box(3);
        let fine = unit_box(7);
        let f = |p: &Point3| Vector3::new(p.x + 0.5 * p.y, -0.2 * p.z, 0.3 * p.x);
        let uh: Vec<_> = coarse.nodes.iter().map(f).collect();
        let ur: Vec<_> = fine.nodes.iter().map(f).collect();
        let mat = vec![Material::new(100.0, 0.3, 1.0).unwrap(); fine.num_tets()];
        let (l2, en, _) = error_norms(&coarse, &uh, &fine, &ur, &mat).unwrap();
        assert!(l2 <= 1e-12 && en <= 1e-12, "{l2} {en}");
    }
}
