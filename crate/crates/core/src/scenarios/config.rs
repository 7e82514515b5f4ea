use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::constraints::CouplingParams;
use crate::dynamics::Damping;
use crate::error::{Error, Result};
use crate::fem::Material;
use crate::geometry::Point3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelMode {
    /// Two materials separated by the immersed surface.
    Interface,
    /// Only the inside of the immersed surface carries material.
    Fictitious,
    /// Plain FEM with element-wise materials.
    Fem,
}

impl std::str::FromStr for ModelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "interface" => Ok(ModelMode::Interface),
            "fictitious" => Ok(ModelMode::Fictitious),
            "fem" => Ok(ModelMode::Fem),
            other => Err(Error::Config(format!("unknown mode '{other}' (interface, fictitious or fem)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoadCase {
    /// Pressure on the free end pulling along the beam axis.
    Tensile,
    /// Pressure on the free end acting downwards.
    Bending,
}

/// Box with an immersed sphere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeamGeometry {
    pub dims: [f64; 3],
    pub sphere_center: [f64; 3],
    pub sphere_radius: f64,
    pub sphere_subdivisions: usize,
}

impl Default for BeamGeometry {
    fn default() -> Self {
        BeamGeometry {
            dims: [6.0, 2.0, 2.0],
            sphere_center: [3.0, 1.0, 1.0],
            sphere_radius: 0.7,
            sphere_subdivisions: 4,
        }
    }
}

impl BeamGeometry {
    pub fn center(&self) -> Point3 {
        Point3::from(self.sphere_center)
    }

    fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::Config(format!("box dimensions must be positive, got {:?}", self.dims)));
        }
        let c = self.center();
        let r = self.sphere_radius;
        let inside = (0..3).all(|a| c[a] - r > 0.0 && c[a] + r < self.dims[a]);
        if !(r > 0.0) || !inside {
            return Err(Error::Config("immersed sphere must lie strictly inside the box".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceConfig {
    pub geometry: BeamGeometry,
    pub outside: Material,
    pub inside: Material,
    /// Node counts per axis, coarse to fine.
    pub meshes: Vec<[usize; 3]>,
    pub reference: [usize; 3],
    pub cases: Vec<LoadCase>,
    pub pressure: f64,
    /// Fit slopes on this many of the coarsest meshes (all when unset).
    pub fit_meshes: Option<usize>,
    pub mode: ModelMode,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        let m = Material {
            young: 1000.0,
            poisson: 0.1,
            density: 1.0,
        };
        ConvergenceConfig {
            geometry: BeamGeometry::default(),
            outside: m,
            inside: m,
            meshes: vec![[7, 3, 3], [13, 5, 5], [25, 9, 9], [49, 17, 17]],
            reference: [97, 33, 33],
            cases: vec![LoadCase::Tensile, LoadCase::Bending],
            pressure: 1.0,
            fit_meshes: None,
            mode: ModelMode::Interface,
        }
    }
}

impl ConvergenceConfig {
    /// Reduced variant: 49×17×17 reference, slopes from the three coarsest meshes.
    pub fn reduced() -> Self {
        ConvergenceConfig {
            meshes: vec![[7, 3, 3], [13, 5, 5], [25, 9, 9]],
            reference: [49, 17, 17],
            fit_meshes: Some(3),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.outside.validate().map_err(config_error)?;
        self.inside.validate().map_err(config_error)?;
        if self.meshes.len() < 2 {
            return Err(Error::Config("convergence needs at least two meshes".into()));
        }
        for w in self.meshes.windows(2) {
            if w[1].iter().product::<usize>() <= w[0].iter().product::<usize>() {
                return Err(Error::Config("meshes must be listed coarse to fine".into()));
            }
        }
        let finest = self.meshes.last().unwrap();
        if (0..3).any(|a| self.reference[a] <= finest[a]) && self.reference != *finest {
            return Err(Error::Config("reference mesh must be finer than every coarse mesh".into()));
        }
        if self.meshes.iter().chain([&self.reference]).flatten().any(|&n| n < 2) {
            return Err(Error::Config("every mesh needs at least two nodes per axis".into()));
        }
        if self.fit_meshes.is_some_and(|k| k < 2 || k > self.meshes.len()) {
            return Err(Error::Config("fit_meshes must be between 2 and the number of meshes".into()));
        }
        if !self.pressure.is_finite() {
            return Err(Error::Config("pressure must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeSpec {
    pub tau: f64,
    pub damping: Damping,
    pub max_steps: usize,
}

impl Default for TimeSpec {
    fn default() -> Self {
        TimeSpec {
            tau: 0.01,
            damping: Damping::default(),
            max_steps: 1000,
        }
    }
}

impl TimeSpec {
    fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::Config(format!("time step must be positive, got {}", self.tau)));
        }
        if self.damping.mass < 0.0 || self.damping.stiffness < 0.0 {
            return Err(Error::Config("damping coefficients must be non-negative".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComparisonConfig {
    pub geometry: BeamGeometry,
    pub outside: Material,
    pub inside: Material,
    pub meshes: Vec<[usize; 3]>,
    pub case: LoadCase,
    pub pressure: f64,
    pub probe: [f64; 3],
    /// Dynamic steps per mesh after the static solve (0 skips the series).
    pub steps: usize,
    pub time: TimeSpec,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        let m = Material {
            young: 1000.0,
            poisson: 0.1,
            density: 1.0,
        };
        ComparisonConfig {
            geometry: BeamGeometry::default(),
            outside: m,
            inside: m,
            meshes: vec![[7, 3, 3], [13, 5, 5], [25, 9, 9], [49, 17, 17]],
            case: LoadCase::Bending,
            pressure: -5.0,
            probe: [0.0, 1.0, 1.0],
            steps: 100,
            time: TimeSpec {
                tau: 0.01,
                damping: Damping { mass: 1.0, stiffness: 0.0 },
                max_steps: 100,
            },
        }
    }
}

impl ComparisonConfig {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.outside.validate().map_err(config_error)?;
        self.inside.validate().map_err(config_error)?;
        self.time.validate()?;
        if self.meshes.is_empty() {
            return Err(Error::Config("comparison needs at least one mesh".into()));
        }
        let p = Point3::from(self.probe);
        let d = self.geometry.dims;
        if (0..3).any(|a| p[a] < 0.0 || p[a] > d[a]) {
            return Err(Error::Config(format!("probe {:?} lies outside the beam", self.probe)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeedleSpec {
    pub length: f64,
    pub radius: f64,
    pub material: Material,
    pub elements: usize,
    /// Initial tip position.
    pub tip: [f64; 3],
    /// Direction the base is driven along.
    pub axis: [f64; 3],
    /// The needle is rotated by `inclination_deg` from `axis` towards `tilt`.
    pub tilt: [f64; 3],
    pub inclination_deg: f64,
    /// Base displacement per step.
    pub speed: f64,
    /// Tip displacement along `axis` that starts the retraction.
    pub retraction_at: f64,
}

impl Default for NeedleSpec {
    fn default() -> Self {
        let tilt = 3.5f64.to_radians().tan();
        NeedleSpec {
            length: 2.8,
            radius: 0.05,
            material: Material {
                young: 20000.0,
                poisson: 0.2,
                density: 1.0,
            },
            elements: 20,
            tip: [-0.25, 1.0, 1.0 - 3.0 * tilt],
            axis: [1.0, 0.0, 0.0],
            tilt: [0.0, 0.0, 1.0],
            inclination_deg: 3.5,
            speed: 0.01,
            retraction_at: 3.0,
        }
    }
}

impl NeedleSpec {
    pub fn axis(&self) -> Vector3<f64> {
        Vector3::from(self.axis).normalize()
    }

    /// Unit needle direction, base to tip.
    pub fn direction(&self) -> Vector3<f64> {
        let a = self.axis();
        let t = Vector3::from(self.tilt);
        let n = (t - a * a.dot(&t)).try_normalize(1e-12).unwrap_or_else(Vector3::zeros);
        let th = self.inclination_deg.to_radians();
        (a * th.cos() + n * th.sin()).normalize()
    }

    fn validate(&self) -> Result<()> {
        self.material.validate().map_err(config_error)?;
        if !(self.length > 0.0) || !(self.radius > 0.0) || self.elements == 0 {
            return Err(Error::Config("needle needs positive length, radius and element count".into()));
        }
        if Vector3::from(self.axis).norm() < 1e-12 {
            return Err(Error::Config("needle axis must be non-zero".into()));
        }
        if !(self.speed > 0.0) || !(self.retraction_at > 0.0) {
            return Err(Error::Config("needle speed and retraction trigger must be positive".into()));
        }
        if !(self.inclination_deg.abs() < 90.0) {
            return Err(Error::Config("inclination must be below 90 degrees".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CouplingSpec {
    pub penetration_strength: f64,
    pub friction: f64,
    /// Shaft sampling distance; the needle element length when unset.
    pub spacing: Option<f64>,
}

impl Default for CouplingSpec {
    fn default() -> Self {
        CouplingSpec {
            penetration_strength: 1.0,
            friction: 0.5,
            spacing: None,
        }
    }
}

impl CouplingSpec {
    pub fn params(&self, needle: &NeedleSpec) -> Result<CouplingParams> {
        let p = CouplingParams {
            penetration_strength: self.penetration_strength,
            friction: self.friction,
            spacing: self.spacing.unwrap_or(needle.length / needle.elements as f64),
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomConfig {
    pub dims: [f64; 3],
    pub counts: [usize; 3],
    pub inclusion_center: [f64; 3],
    pub inclusion_radius: f64,
    pub inclusion_subdivisions: usize,
    pub tissue: Material,
    /// Inclusion stiffness as multiples of the tissue modulus.
    pub ratios: Vec<f64>,
    /// Nodes with `x ≥ clamp_x` are clamped.
    pub clamp_x: f64,
    pub mode: ModelMode,
    pub needle: NeedleSpec,
    pub coupling: CouplingSpec,
    pub time: TimeSpec,
    /// Steps recorded after the needle is out.
    pub trailing_steps: usize,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            dims: [6.0, 2.0, 2.0],
            counts: [25, 9, 9],
            inclusion_center: [3.0, 1.0, 1.0],
            inclusion_radius: 0.7,
            inclusion_subdivisions: 3,
            tissue: Material {
                young: 1000.0,
                poisson: 0.4,
                density: 1.0,
            },
            ratios: vec![1.0, 2.0, 4.0, 8.0],
            clamp_x: 6.0,
            mode: ModelMode::Interface,
            needle: NeedleSpec::default(),
            coupling: CouplingSpec::default(),
            time: TimeSpec {
                max_steps: 1000,
                ..Default::default()
            },
            trailing_steps: 5,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        BeamGeometry {
            dims: self.dims,
            sphere_center: self.inclusion_center,
            sphere_radius: self.inclusion_radius,
            sphere_subdivisions: self.inclusion_subdivisions,
        }
        .validate()?;
        if self.counts.iter().any(|&n| n < 2) {
            return Err(Error::Config("phantom mesh needs at least two nodes per axis".into()));
        }
        self.tissue.validate().map_err(config_error)?;
        if self.ratios.is_empty() || self.ratios.iter().any(|&r| !(r > 0.0)) {
            return Err(Error::Config("stiffness ratios must be positive".into()));
        }
        if self.mode == ModelMode::Fictitious {
            return Err(Error::Config("the phantom needs tissue around the inclusion; use interface or fem mode".into()));
        }
        self.needle.validate()?;
        self.coupling.params(&self.needle).map_err(config_error)?;
        self.time.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FictitiousConfig {
    /// Closed OBJ surface; an ellipsoid is generated when unset.
    pub surface: Option<std::path::PathBuf>,
    pub ellipsoid_center: [f64; 3],
    pub ellipsoid_radii: [f64; 3],
    /// Nodes per axis of the conforming ellipsoid mesh, which also supplies
    /// the immersed surface.
    pub conforming_nodes: usize,
    /// Background mesh margin around the surface bounding box.
    pub padding: f64,
    pub background_counts: [usize; 3],
    pub tissue: Material,
    /// Immersed points held in place.
    pub dirichlet_points: Vec<[f64; 3]>,
    pub probe: [f64; 3],
    pub needle: NeedleSpec,
    pub coupling: CouplingSpec,
    pub time: TimeSpec,
    pub trailing_steps: usize,
    /// Also run conforming FEM for comparison.
    pub compare_fem: bool,
    pub mode: ModelMode,
}

impl Default for FictitiousConfig {
    fn default() -> Self {
        let radii: [f64; 3] = [2.0, 1.2, 1.0];
        let mut dirichlet_points = Vec::new();
        // grid of points on the section x = -1.5, kept well inside the ellipse
        let x: f64 = -1.5;
        let shrink = 0.8 * (1.0 - (x / radii[0]) * (x / radii[0])).sqrt();
        for j in -3i32..=3 {
            for k in -3i32..=3 {
                let (y, z) = (j as f64 * 0.25 * radii[1] * shrink, k as f64 * 0.25 * radii[2] * shrink);
                if (y / radii[1]).powi(2) + (z / radii[2]).powi(2) <= (0.75 * shrink).powi(2) + 1e-12 {
                    dirichlet_points.push([x, y, z]);
                }
            }
        }
        let needle = NeedleSpec {
            length: 2.0,
            radius: 0.05,
            elements: 20,
            tip: [2.05, 0.0, 0.3],
            axis: [-1.0, 0.0, 0.0],
            tilt: [0.0, 0.0, 1.0],
            inclination_deg: 3.5,
            retraction_at: 1.5,
            ..Default::default()
        };
        FictitiousConfig {
            surface: None,
            ellipsoid_center: [0.0, 0.0, 0.0],
            ellipsoid_radii: radii,
            conforming_nodes: 13,
            padding: 0.15,
            background_counts: [19, 12, 10],
            tissue: Material {
                young: 1200.0,
                poisson: 0.4,
                density: 1.0,
            },
            dirichlet_points,
            probe: [1.0, 0.0, 0.55],
            needle,
            coupling: CouplingSpec::default(),
            time: TimeSpec {
                max_steps: 800,
                ..Default::default()
            },
            trailing_steps: 5,
            compare_fem: true,
            mode: ModelMode::Fictitious,
        }
    }
}

impl FictitiousConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ellipsoid_radii.iter().any(|&r| !(r > 0.0)) {
            return Err(Error::Config("ellipsoid radii must be positive".into()));
        }
        if self.conforming_nodes < 3 || self.background_counts.iter().any(|&n| n < 2) {
            return Err(Error::Config("mesh resolutions are too small".into()));
        }
        if !(self.padding > 0.0) {
            return Err(Error::Config("background padding must be positive".into()));
        }
        if self.dirichlet_points.is_empty() {
            return Err(Error::Config("fictitious insertion needs immersed Dirichlet points".into()));
        }
        if self.mode == ModelMode::Interface {
            return Err(Error::Config("fictitious insertion runs in fictitious or fem mode".into()));
        }
        self.tissue.validate().map_err(config_error)?;
        self.needle.validate()?;
        self.coupling.params(&self.needle).map_err(config_error)?;
        self.time.validate()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Write a VTK snapshot every this many steps (0 disables).
    pub vtk_every: usize,
}

/// Every scenario's parameters; missing sections and keys take the defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub convergence: ConvergenceConfig,
    pub comparison: ComparisonConfig,
    pub needle_phantom: PhantomConfig,
    pub fictitious: FictitiousConfig,
    pub output: OutputConfig,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}

fn config_error(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = ScenarioConfig::default();
        let back = ScenarioConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_sections_keep_defaults() {
        let c = ScenarioConfig::from_toml("[needle_phantom]\nratios = [1.0, 3.0]\n[needle_phantom.time]\ntau = 0.02\n").unwrap();
        assert_eq!(c.needle_phantom.ratios, vec![1.0, 3.0]);
        assert_eq!(c.needle_phantom.time.tau, 0.02);
        assert_eq!(c.needle_phantom.needle.length, 2.8);
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        assert!(matches!(ScenarioConfig::from_toml("[convergence]\nmesh = 3\n"), Err(Error::Config(_))));
    }

    #[test]
    fn default_configs_validate() {
        let c = ScenarioConfig::default();
        c.convergence.validate().unwrap();
        ConvergenceConfig::reduced().validate().unwrap();
        c.comparison.validate().unwrap();
        c.needle_phantom.validate().unwrap();
        c.fictitious.validate().unwrap();
    }

    #[test]
    fn needle_direction_is_inclined() {
        let n = NeedleSpec::default();
        let d = n.direction();
        assert!((d.dot(&n.axis()) - 3.5f64.to_radians().cos()).abs() < 1e-12);
        assert!(d.z > 0.0);
    }

    #[test]
    fn bad_probe_rejected() {
        let c = ComparisonConfig {
            probe: [7.0, 1.0, 1.0],
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }
}
