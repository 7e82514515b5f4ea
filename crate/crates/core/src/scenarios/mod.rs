//! Scripted experiments: convergence study, CutFEM against FEM comparisons,
//! needle insertion into a phantom with an inclusion, and insertion into a
//! fictitious-boundary organ.

mod config;
mod insertion;
mod statics;

use std::path::{Path, PathBuf};

pub use config::*;
pub use insertion::{run_fictitious_insertion, run_needle_phantom, FictitiousReport, InsertionRun, PhantomReport};
pub use statics::{
    error_norms, face_pressure, fit_slope, run_comparison, run_convergence, solve_beam_static, ComparisonReport, ComparisonRow,
    ErrorReport, ErrorRow, StaticSolution,
};

use crate::classify::{ClassifyOptions, ElementLabel, Immersion, SurfaceQuery};
use crate::dynamics::TissueModel;
use crate::embed::{build_embedding, DEFAULT_MAX_DEPTH};
use crate::error::{Error, Result};
use crate::fem::{CutMode, Material};
use crate::geometry::{centroid, Point3};
use crate::mesh::io::{write_csv, write_tet_mesh_vtk, Field};
use crate::mesh::{SimulationOutput, TetMesh, TriSurface};

/// Tissue model of a background mesh with an immersed surface.
pub fn build_tissue(mesh: TetMesh, surface: &TriSurface, outside: &Material, inside: &Material, mode: ModelMode) -> Result<(TissueModel, Option<Immersion>)> {
    match mode {
        ModelMode::Interface | ModelMode::Fictitious => {
            let cut_mode = if mode == ModelMode::Interface { CutMode::Interface } else { CutMode::Fictitious };
            let options = ClassifyOptions {
                require_interior: mode == ModelMode::Interface,
            };
            let im = Immersion::build(&mesh, SurfaceQuery::new(surface)?, None, options)?;
            let emb = build_embedding(&mesh, &im.classification, &im.levelset, &im.query, DEFAULT_MAX_DEPTH)?;
            let tissue = TissueModel::cut(mesh, &im.classification, &emb, outside, inside, cut_mode)?;
            Ok((tissue, Some(im)))
        }
        ModelMode::Fem => {
            // element-wise material from the side of its centroid
            let q = SurfaceQuery::new(surface)?;
            let materials: Vec<Material> = (0..mesh.num_tets())
                .map(|e| if q.is_inside(&centroid(&mesh.corners(e))) { *inside } else { *outside })
                .collect();
            Ok((TissueModel::with_materials(mesh, &materials)?, None))
        }
    }
}

/// Label codes of an immersion for VTK output, or all-inside for plain FEM.
pub(crate) fn label_field(im: Option<&Immersion>, n: usize) -> Field {
    let codes = im
        .map(|im| im.classification.codes())
        .unwrap_or_else(|| vec![ElementLabel::Inside.code() as f64; n]);
    Field::scalar("label", codes)
}

/// Where scenario files go.
#[derive(Debug, Clone)]
pub struct OutputSink {
    pub dir: Option<PathBuf>,
    pub vtk_every: usize,
}

impl OutputSink {
    pub fn none() -> Self {
        OutputSink { dir: None, vtk_every: 0 }
    }

    pub fn new(dir: impl AsRef<Path>, vtk_every: usize) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(OutputSink { dir: Some(dir), vtk_every })
    }

    pub fn csv(&self, name: &str, records: &SimulationOutput) -> Result<()> {
        match &self.dir {
            Some(d) => write_csv(records, d.join(name)),
            None => Ok(()),
        }
    }

    pub fn wants_snapshot(&self, step: usize) -> bool {
        self.dir.is_some() && self.vtk_every > 0 && step.is_multiple_of(self.vtk_every)
    }

    pub fn snapshot(&self, name: &str, mesh: &TetMesh, positions: &[Point3], cell_fields: &[Field]) -> Result<()> {
        let Some(d) = &self.dir else { return Ok(()) };
        let u: Vec<Point3> = positions.iter().zip(&mesh.nodes).map(|(x, r)| x - r).collect();
        let deformed = TetMesh {
            nodes: positions.to_vec(),
            tets: mesh.tets.clone(),
        };
        write_tet_mesh_vtk(&deformed, &[Field::vector("displacement", u)], cell_fields, d.join(name))
    }
}
