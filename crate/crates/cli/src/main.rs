use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cutfem::classify::{write_labels_vtk, ClassifyOptions, Immersion, SurfaceQuery};
use cutfem::embed::{build_embedding, write_embedding_vtk, DEFAULT_MAX_DEPTH};
use cutfem::mesh::io::{load_surface, load_tet_mesh, write_csv};
use cutfem::mesh::{generate_box_mesh, generate_sphere_surface, SimulationOutput, TetMesh, TriSurface};
use cutfem::scenarios::{
    run_comparison, run_convergence, run_fictitious_insertion, run_needle_phantom, ModelMode, OutputSink, ScenarioConfig,
};
use cutfem::{Error, Point3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Scenario runner for the cut finite element engine.
#[derive(Parser, Debug)]
#[command(name = "cutfem-sim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Static convergence study of the beam with an immersed sphere.
    Converge(Common),
    /// CutFEM against FEM probe displacement of the bent beam.
    Compare(Common),
    /// Needle insertion into the phantom for each inclusion stiffness.
    NeedlePhantom(Common),
    /// Needle insertion into an organ immersed in a background mesh.
    Fictitious(Common),
    /// Writes level set and element labels of a mesh and surface.
    ClassifyDebug(Debug),
    /// Writes the embedding trees of the cut elements.
    EmbedDebug(Debug),
}

#[derive(Args, Debug)]
struct Common {
    /// TOML scenario file; missing keys take the built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_parser = ["interface", "fictitious", "fem"])]
    mode: Option<String>,
    /// Time step.
    #[arg(long)]
    tau: Option<f64>,
    /// Step limit of dynamic runs.
    #[arg(long)]
    steps: Option<usize>,
    /// Seed for randomised geometry.
    #[arg(long)]
    seed: Option<u64>,
    /// VTK snapshot interval in steps (0 disables).
    #[arg(long)]
    vtk_every: Option<usize>,
}

#[derive(Args, Debug)]
struct Debug {
    #[command(flatten)]
    common: Common,
    /// Background mesh as a `.node`/`.ele` pair; a 13×5×5 beam when omitted.
    #[arg(long)]
    mesh: Option<PathBuf>,
    /// Immersed OBJ surface; the sphere of the beam study when omitted.
    #[arg(long)]
    surface: Option<PathBuf>,
}

fn load_config(c: &Common) -> Result<ScenarioConfig, Error> {
    let mut cfg = match &c.config {
        Some(p) => ScenarioConfig::load(p)?,
        None => ScenarioConfig::default(),
    };
    if let Some(t) = c.tau {
        cfg.needle_phantom.time.tau = t;
        cfg.fictitious.time.tau = t;
        cfg.comparison.time.tau = t;
    }
    if let Some(s) = c.steps {
        cfg.needle_phantom.time.max_steps = s;
        cfg.fictitious.time.max_steps = s;
        cfg.comparison.steps = s;
    }
    if let Some(k) = c.vtk_every {
        cfg.output.vtk_every = k;
    }
    Ok(cfg)
}

fn mode(c: &Common) -> Result<Option<ModelMode>, Error> {
    c.mode.as_deref().map(str::parse).transpose()
}

fn sink(c: &Common, cfg: &ScenarioConfig) -> Result<OutputSink, Error> {
    OutputSink::new(&c.out, cfg.output.vtk_every)
}

/// Random shift of up to a tenth of the sphere radius.
fn jitter(seed: Option<u64>, radius: f64) -> Point3 {
    match seed {
        Some(s) => {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            Point3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * (0.1 * radius)
        }
        None => Point3::zeros(),
    }
}

fn debug_inputs(d: &Debug, cfg: &ScenarioConfig) -> Result<(TetMesh, TriSurface), Error> {
    let g = &cfg.convergence.geometry;
    let mesh = match &d.mesh {
        Some(p) => load_tet_mesh(p)?,
        None => generate_box_mesh(g.dims, [13, 5, 5])?,
    };
    let surface = match &d.surface {
        Some(p) => load_surface(p)?,
        None => generate_sphere_surface(g.center() + jitter(d.common.seed, g.sphere_radius), g.sphere_radius, g.sphere_subdivisions)?,
    };
    Ok((mesh, surface))
}

fn immersion(d: &Debug, cfg: &ScenarioConfig) -> Result<(TetMesh, Immersion), Error> {
    let (mesh, surface) = debug_inputs(d, cfg)?;
    let options = ClassifyOptions {
        require_interior: mode(&d.common)? != Some(ModelMode::Fictitious),
    };
    let im = Immersion::build(&mesh, SurfaceQuery::new(&surface)?, None, options)?;
    Ok((mesh, im))
}

fn summary(out: &Path, name: &str, columns: &[&str], rows: Vec<Vec<f64>>) -> Result<(), Error> {
    let mut s = SimulationOutput::new(columns);
    for r in rows {
        s.push(r)?;
    }
    write_csv(&s, out.join(name))
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Converge(c) => {
            let mut cfg = load_config(&c)?;
            if let Some(m) = mode(&c)? {
                cfg.convergence.mode = m;
            }
            let reports = run_convergence(&cfg.convergence, &sink(&c, &cfg)?)?;
            for r in &reports {
                println!("{:?}: L2 slope {:.4}, energy slope {:.4}", r.case, r.l2_slope, r.energy_slope);
            }
        }
        Command::Compare(c) => {
            let cfg = load_config(&c)?;
            if mode(&c)?.is_some() {
                log::warn!("compare always runs both CutFEM and FEM; --mode ignored");
            }
            let report = run_comparison(&cfg.comparison, &sink(&c, &cfg)?)?;
            for r in &report.rows {
                println!("N = {}: cut uz {:.6e}, fem uz {:.6e}, relative difference {:.3e}", r.dofs, r.cut_static.z, r.fem_static.z, r.relative_difference());
            }
        }
        Command::NeedlePhantom(c) => {
            let mut cfg = load_config(&c)?;
            if let Some(m) = mode(&c)? {
                cfg.needle_phantom.mode = m;
            }
            let report = run_needle_phantom(&cfg.needle_phantom, &sink(&c, &cfg)?)?;
            for (ratio, run) in &report.runs {
                let peak = run.column("force").into_iter().fold(f64::MIN, f64::max);
                println!("E2/E1 = {ratio}: {} steps, peak force {peak:.4}, retraction at step {:?}", run.records.rows.len(), run.retraction_step);
            }
        }
        Command::Fictitious(c) => {
            let mut cfg = load_config(&c)?;
            if let Some(m) = mode(&c)? {
                cfg.fictitious.mode = m;
            }
            let report = run_fictitious_insertion(&cfg.fictitious, &sink(&c, &cfg)?)?;
            println!("{} steps, retraction at step {:?}", report.cut.records.rows.len(), report.cut.retraction_step);
            if let Some(d) = report.probe_discrepancy() {
                println!("probe discrepancy against FEM: {:.3}%", 100.0 * d);
            }
        }
        Command::ClassifyDebug(d) => {
            let cfg = load_config(&d.common)?;
            let (mesh, im) = immersion(&d, &cfg)?;
            let out = &d.common.out;
            std::fs::create_dir_all(out).map_err(|e| Error::Io { path: out.clone(), source: e })?;
            write_labels_vtk(&mesh, &im.levelset, &im.classification, out.join("labels.vtk"))?;
            let counts = im.classification.labels.iter().fold([0.0; 3], |mut a, l| {
                a[l.code() as usize] += 1.0;
                a
            });
            summary(out, "labels.csv", &["outside", "cut", "inside"], vec![counts.to_vec()])?;
            println!("outside {}, cut {}, inside {}", counts[0], counts[1], counts[2]);
        }
        Command::EmbedDebug(d) => {
            let cfg = load_config(&d.common)?;
            let (mesh, im) = immersion(&d, &cfg)?;
            let emb = build_embedding(&mesh, &im.classification, &im.levelset, &im.query, DEFAULT_MAX_DEPTH)?;
            let out = &d.common.out;
            std::fs::create_dir_all(out).map_err(|e| Error::Io { path: out.clone(), source: e })?;
            write_embedding_vtk(&emb, out.join("embedding.vtk"))?;
            let inside = emb.region_volume(cutfem::embed::Region::Inside);
            let outside = emb.region_volume(cutfem::embed::Region::Outside);
            summary(out, "embedding.csv", &["cut_elements", "leaves", "inside_volume", "outside_volume"], vec![vec![
                im.classification.cut.len() as f64,
                emb.num_leaves() as f64,
                inside,
                outside,
            ]])?;
            println!("{} cut elements, {} leaves", im.classification.cut.len(), emb.num_leaves());
        }
    }
    Ok(())
}

/// 2 for configuration and input problems, 3 for solver failures.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Argument(_) | Error::Parse { .. } | Error::Io { .. } | Error::Topology(_) | Error::Config(_) => 2,
        Error::Geometry(_)
        | Error::Embedding { .. }
        | Error::RefinementLimit { .. }
        | Error::Location { .. }
        | Error::Singular(_)
        | Error::Numerical { .. } => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
