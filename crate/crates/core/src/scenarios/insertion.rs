//! Needle insertion and retraction drivers.

use nalgebra::Vector3;

use super::{build_tissue, label_field, FictitiousConfig, ModelMode, NeedleSpec, OutputSink, PhantomConfig, TimeSpec};
use crate::beam::{BeamMesh, Section};
use crate::classify::{AccelGrid, SurfaceQuery};
use crate::constraints::{
    dirichlet_block, locate_and_weights, ConstraintBlock, CouplingContext, CouplingParams, MapRow, NeedleCoupling, Phase, SchurSystem, SparseRow,
};
use crate::dynamics::{apply_velocity_change, DrivenNode, NeedleModel, StepLoads, Stepper, SystemState, TissueModel};
use crate::error::{Error, Result};
use crate::fem::Material;
use crate::geometry::Point3;
use crate::mesh::io::load_surface;
use crate::mesh::{generate_ball_mesh, generate_box_mesh, generate_ellipsoid_surface, generate_sphere_surface, SimulationOutput, TetMesh, TriSurface};

pub const INSERTION_COLUMNS: [&str; 10] = [
    "step",
    "time",
    "tip_displacement",
    "force",
    "phase",
    "residual",
    "residual_ok",
    "probe_ux",
    "probe_uy",
    "probe_uz",
];

/// Per-step record of one insertion run.
#[derive(Debug, Clone)]
pub struct InsertionRun {
    pub records: SimulationOutput,
    /// First step driven backwards.
    pub retraction_step: Option<usize>,
    /// First step in which the needle was fully out.
    pub out_step: Option<usize>,
    /// Every step met the constraint residual bound.
    pub residual_ok: bool,
}

impl InsertionRun {
    pub fn column(&self, name: &str) -> Vec<f64> {
        self.records.column(name).unwrap_or_default()
    }
}

pub(crate) fn phase_code(p: Phase) -> f64 {
    match p {
        Phase::Approach => 0.0,
        Phase::Inserted => 1.0,
        Phase::Retracting => 2.0,
        Phase::Out => 3.0,
    }
}

/// Subcube grid with cells of about one and a half mean element widths.
pub(crate) fn mesh_grid(mesh: &TetMesh) -> Result<AccelGrid> {
    let bb = mesh.bounding_box();
    let ext = bb.max - bb.min;
    let h = (ext.x * ext.y * ext.z * 6.0 / mesh.num_tets().max(1) as f64).cbrt();
    AccelGrid::build(mesh, None, 1.5 * h, 0.0)
}

fn build_needle(spec: &NeedleSpec) -> Result<NeedleModel> {
    let dir = spec.direction();
    let tip = Point3::from(spec.tip);
    let base = tip - dir * spec.length;
    let beam = BeamMesh::straight(base, dir, spec.length, spec.elements, Section { radius: spec.radius }, spec.material)?;
    Ok(NeedleModel::new(beam))
}

struct Insertion<'a> {
    tissue: &'a TissueModel,
    /// Boundary of the tissue in the reference configuration.
    surface: SurfaceQuery,
    grid: AccelGrid,
    dirichlet: Option<ConstraintBlock>,
    probe: Option<MapRow>,
    needle: NeedleModel,
    spec: &'a NeedleSpec,
    params: CouplingParams,
    time: &'a TimeSpec,
    trailing: usize,
}

impl Insertion<'_> {
    fn run(&self, sink: &OutputSink, tag: &str, cells: &[crate::mesh::io::Field]) -> Result<InsertionRun> {
        let tissue = self.tissue;
        let needle = &self.needle;
        let tau = self.time.tau;
        let mut state = SystemState::new(tissue.rest_state(), Some(needle.rest_state()), tau)?;
        let mut stepper = Stepper::new(self.time.damping);
        let mut coupling = NeedleCoupling::new(self.params);
        let axis = self.spec.axis();
        let tip_node = needle.beam.num_nodes() - 1;
        let tip0 = needle.beam.rest_positions[tip_node];
        let mut records = SimulationOutput::new(&INSERTION_COLUMNS);
        let mut retraction_step = None;
        let mut out_step = None;
        let mut residual_ok = true;
        for step in 1..=self.time.max_steps {
            let speed = self.spec.speed / tau;
            let drive = if retraction_step.is_some() { -speed } else { speed };
            // the guide holds every needle node outside the tissue
            let free_phase = matches!(coupling.phase, Phase::Inserted | Phase::Retracting);
            let ns = state.needle.as_ref().expect("needle state");
            let driven = (0..ns.x.len())
                .filter(|&i| i == 0 || !free_phase || self.surface.signed_distance(&ns.x[i]) > 0.0)
                .map(|node| DrivenNode {
                    node,
                    velocity: axis * drive,
                    angular: Vector3::zeros(),
                })
                .collect();
            let loads = StepLoads {
                driven,
                ..Default::default()
            };
            let sys = stepper.factor(tissue, Some(needle), &state, &loads)?;
            let ns = state.needle.as_ref().expect("needle state");
            let ctx = CouplingContext {
                tissue,
                tissue_state: &state.tissue,
                surface: &self.surface,
                grid: &self.grid,
                needle,
                needle_state: ns,
                tau,
            };
            let blocks = coupling.blocks(&ctx)?;
            let mut rows: Vec<SparseRow> = Vec::new();
            let mut c: Vec<f64> = Vec::new();
            if let Some(d) = &self.dirichlet {
                let u = state.tissue.displacement(&tissue.mesh.nodes);
                let vb = d.to_velocity_level(&u, &state.tissue.velocity(), tau);
                for (r, ci) in vb.rows.iter().zip(&vb.rhs) {
                    let (r, ci) = sys.constrain(tissue, r, *ci);
                    if !r.is_empty() {
                        rows.push(r);
                        c.push(ci);
                    }
                }
            }
            let first = rows.len();
            for b in &blocks {
                for (r, ci) in b.rows.iter().zip(&b.rhs) {
                    let (r, ci) = sys.constrain(tissue, r, *ci);
                    rows.push(r);
                    c.push(ci);
                }
            }
            let schur = SchurSystem::new(&sys.solver(), &sys.b, rows);
            let contact = coupling.solve(&schur, &c, first, &blocks, tau)?;
            let residual = schur.residual(&contact.solution.x, &c, &contact.modes);
            let scale = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let ok = residual <= 1e-8 * scale + 1e-10;
            if !ok {
                log::warn!("{tag}: step {step} constraint residual {residual:.3e} exceeds the bound");
                residual_ok = false;
            }
            if contact.solution.regularized {
                log::debug!("{tag}: step {step} constraint rows were rank deficient");
            }
            apply_velocity_change(tissue, Some(needle), &mut state, &contact.solution.x)?;

            let ns = state.needle.as_ref().expect("needle state");
            let tip_disp = (ns.x[tip_node] - tip0).dot(&axis);
            let probe = match &self.probe {
                Some(p) => p.evaluate(&state.tissue.x) - p.evaluate(&tissue.mesh.nodes),
                None => Vector3::zeros(),
            };
            records.push(vec![
                step as f64,
                state.time,
                tip_disp,
                contact.axial_force,
                phase_code(coupling.phase),
                residual,
                ok as u8 as f64,
                probe.x,
                probe.y,
                probe.z,
            ])?;
            if sink.wants_snapshot(step) {
                sink.snapshot(&format!("{tag}_{step:05}.vtk"), &tissue.mesh, &state.tissue.x, cells)?;
            }
            if retraction_step.is_none() && tip_disp >= self.spec.retraction_at {
                log::info!("{tag}: retraction starts after step {step}");
                coupling.start_retraction();
                retraction_step = Some(step + 1);
            }
            if coupling.phase == Phase::Out && out_step.is_none() {
                out_step = Some(step);
            }
            if out_step.is_some_and(|s| step >= s + self.trailing) {
                break;
            }
        }
        if out_step.is_none() {
            log::warn!("{tag}: needle not withdrawn within {} steps", self.time.max_steps);
        }
        Ok(InsertionRun {
            records,
            retraction_step,
            out_step,
            residual_ok,
        })
    }
}

fn write_run(sink: &OutputSink, name: &str, run: &InsertionRun) -> Result<()> {
    sink.csv(name, &run.records)
}

#[derive(Debug, Clone)]
pub struct PhantomReport {
    /// `(E₂/E₁, run)` in configuration order.
    pub runs: Vec<(f64, InsertionRun)>,
}

/// Needle insertion into the box phantom for every inclusion stiffness ratio.
pub fn run_needle_phantom(config: &PhantomConfig, sink: &OutputSink) -> Result<PhantomReport> {
    config.validate()?;
    let params = config.coupling.params(&config.needle)?;
    let inclusion = generate_sphere_surface(Point3::from(config.inclusion_center), config.inclusion_radius, config.inclusion_subdivisions)?;
    let mut runs = Vec::new();
    for &ratio in &config.ratios {
        let inside = Material {
            young: config.tissue.young * ratio,
            ..config.tissue
        };
        let mesh = generate_box_mesh(config.dims, config.counts)?;
        let (mut tissue, im) = build_tissue(mesh, &inclusion, &config.tissue, &inside, config.mode)?;
        let xc = config.clamp_x;
        tissue.fix_nodes(|p| p.x >= xc - 1e-9 * xc.abs().max(1.0));
        let (boundary, _) = tissue.mesh.boundary_surface();
        let setup = Insertion {
            tissue: &tissue,
            surface: SurfaceQuery::new(&boundary)?,
            grid: mesh_grid(&tissue.mesh)?,
            dirichlet: None,
            probe: None,
            needle: build_needle(&config.needle)?,
            spec: &config.needle,
            params,
            time: &config.time,
            trailing: config.trailing_steps,
        };
        let tag = format!("phantom_ratio{ratio}");
        let cells = [label_field(im.as_ref(), tissue.mesh.num_tets())];
        let run = setup.run(sink, &tag, &cells)?;
        write_run(sink, &format!("{tag}.csv"), &run)?;
        runs.push((ratio, run));
    }
    Ok(PhantomReport { runs })
}

#[derive(Debug, Clone)]
pub struct FictitiousReport {
    pub cut: InsertionRun,
    pub fem: Option<InsertionRun>,
}

impl FictitiousReport {
    /// `max |d_cut - d_fem| / max |d_fem|` over the common steps.
    pub fn probe_discrepancy(&self) -> Option<f64> {
        let fem = self.fem.as_ref()?;
        let probe = |r: &InsertionRun| -> Vec<Vector3<f64>> {
            let (x, y, z) = (r.column("probe_ux"), r.column("probe_uy"), r.column("probe_uz"));
            (0..x.len()).map(|i| Vector3::new(x[i], y[i], z[i])).collect()
        };
        let (a, b) = (probe(&self.cut), probe(fem));
        let n = a.len().min(b.len());
        let diff = (0..n).map(|i| (a[i] - b[i]).norm()).fold(0.0, f64::max);
        let peak = b[..n].iter().map(|v| v.norm()).fold(0.0, f64::max);
        Some(diff / peak.max(f64::MIN_POSITIVE))
    }
}

fn organ_surface(config: &FictitiousConfig, conforming: &TetMesh) -> Result<TriSurface> {
    match &config.surface {
        Some(path) => load_surface(path),
        None if config.compare_fem || config.mode == ModelMode::Fem => Ok(conforming.boundary_surface().0),
        None => generate_ellipsoid_surface(Point3::from(config.ellipsoid_center), config.ellipsoid_radii, 3),
    }
}

fn organ_run(config: &FictitiousConfig, tissue: &TissueModel, surface: &TriSurface, sink: &OutputSink, tag: &str, cells: &[crate::mesh::io::Field]) -> Result<InsertionRun> {
    let grid = mesh_grid(&tissue.mesh)?;
    let points: Vec<Point3> = config.dirichlet_points.iter().map(|p| Point3::from(*p)).collect();
    let zeros = vec![Vector3::zeros(); points.len()];
    let (dirichlet, _) = dirichlet_block(&points, &zeros, &tissue.mesh, &grid, 0).map_err(|e| match e {
        Error::Location { .. } => Error::Config(format!("Dirichlet point outside the {tag} mesh: {e}")),
        other => other,
    })?;
    let probe = locate_and_weights(&Point3::from(config.probe), &tissue.mesh, &grid).map_err(|_| Error::Config(format!("probe {:?} lies outside the {tag} mesh", config.probe)))?;
    let setup = Insertion {
        tissue,
        surface: SurfaceQuery::new(surface)?,
        grid,
        dirichlet: Some(dirichlet),
        probe: Some(probe),
        needle: build_needle(&config.needle)?,
        spec: &config.needle,
        params: config.coupling.params(&config.needle)?,
        time: &config.time,
        trailing: config.trailing_steps,
    };
    let run = setup.run(sink, tag, cells)?;
    write_run(sink, &format!("{tag}.csv"), &run)?;
    Ok(run)
}

/// Insertion into an organ immersed in a box background mesh, held by
/// immersed Dirichlet points; optionally repeated on a conforming mesh.
pub fn run_fictitious_insertion(config: &FictitiousConfig, sink: &OutputSink) -> Result<FictitiousReport> {
    config.validate()?;
    let conforming = generate_ball_mesh(Point3::from(config.ellipsoid_center), config.ellipsoid_radii, config.conforming_nodes)?;
    let surface = organ_surface(config, &conforming)?;
    surface.check_closed()?;
    let fem_run = |sink: &OutputSink| -> Result<InsertionRun> {
        if config.surface.is_some() {
            return Err(Error::Config("a conforming comparison needs the generated ellipsoid".into()));
        }
        let tissue = TissueModel::homogeneous(conforming.clone(), &config.tissue)?;
        let cells = [label_field(None, tissue.mesh.num_tets())];
        organ_run(config, &tissue, &surface, sink, "fictitious_fem", &cells)
    };
    if config.mode == ModelMode::Fem {
        let fem = fem_run(sink)?;
        return Ok(FictitiousReport { cut: fem, fem: None });
    }
    let bb = surface.bounding_box().inflated(config.padding);
    let ext = bb.max - bb.min;
    let mut background = generate_box_mesh([ext.x, ext.y, ext.z], config.background_counts)?;
    for p in &mut background.nodes {
        *p += bb.min;
    }
    let (tissue, im) = build_tissue(background, &surface, &config.tissue, &config.tissue, ModelMode::Fictitious)?;
    let cells = [label_field(im.as_ref(), tissue.mesh.num_tets())];
    let cut = organ_run(config, &tissue, &surface, sink, "fictitious_cut", &cells)?;
    let fem = if config.compare_fem { Some(fem_run(sink)?) } else { None };
    Ok(FictitiousReport { cut, fem })
}
