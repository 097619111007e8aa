//! Scene configuration: a versioned JSON document. Unknown keys are rejected
//! and every referenced file must exist when the config is loaded.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{io_error, CliError, CliResult};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub version: u32,
    pub mesh: MeshSpec,
    #[serde(default)]
    pub material: MaterialSpec,
    #[serde(default)]
    pub pins: PinSpec,
    /// Fixed `ε` for unpinned meshes; the automatic choice when absent.
    #[serde(default)]
    pub regularization: Option<f64>,
    #[serde(default)]
    pub prior: Option<PriorSpec>,
    #[serde(default)]
    pub mixture: Option<MixtureSpec>,
    pub subspace: SubspaceSpec,
    #[serde(default)]
    pub simulation: SimulationSpec,
    #[serde(default)]
    pub service: ServiceSpec,
    #[serde(default)]
    pub validation: ValidationSpec,
    /// Default seed for randomized steps; `--seed` overrides it.
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Tet,
    Box,
    Bar,
    Ball,
    Bear,
    Bat,
}

/// Either a mesh file or one of the built-in test shapes.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSpec {
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// `tetgen` or `gmsh`; guessed from the extension when absent.
    #[serde(default)]
    pub format: Option<String>,
    #[serde(default)]
    pub shape: Option<Shape>,
    #[serde(default)]
    pub cells: Option<[usize; 3]>,
    #[serde(default)]
    pub size: Option<[f64; 3]>,
    #[serde(default)]
    pub radius: Option<f64>,
    /// Uniform scale applied to the rest positions.
    #[serde(default = "one")]
    pub scale: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialSpec {
    #[serde(default = "default_youngs")]
    pub youngs_modulus: f64,
    #[serde(default = "default_poisson")]
    pub poisson_ratio: f64,
    #[serde(default = "default_density")]
    pub density: f64,
}

impl Default for MaterialSpec {
    fn default() -> Self {
        Self {
            youngs_modulus: default_youngs(),
            poisson_ratio: default_poisson(),
            density: default_density(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

/// Pins every vertex whose coordinate along `axis` is within the bounds.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PinRegion {
    pub axis: Axis,
    #[serde(default)]
    pub below: Option<f64>,
    #[serde(default)]
    pub above: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PinSpec {
    #[serde(default)]
    pub vertices: Vec<usize>,
    #[serde(default)]
    pub regions: Vec<PinRegion>,
}

/// A vertex given by index or by the point nearest to it.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum VertexRef {
    Index(usize),
    Point([f64; 3]),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxRegion {
    pub min: [f64; 3],
    pub max: [f64; 3],
    #[serde(default = "one")]
    pub value: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactPatchSpec {
    pub center: [f64; 3],
    pub radius: f64,
    pub normal: [f64; 3],
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PocketSpec {
    #[serde(default)]
    pub vertices: Option<Vec<usize>>,
    /// Surface vertices within `radius` of `center`.
    #[serde(default)]
    pub center: Option<[f64; 3]>,
    #[serde(default)]
    pub radius: Option<f64>,
}

/// Force prior constructors, tagged by `kind`.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorModel {
    /// `Σ_F = M`.
    Lma {},
    /// Per-vertex variance weights times the lumped mass. Weights come from
    /// a sidecar file (one value per vertex) and/or boxes painted over a
    /// background value.
    Painted {
        #[serde(default)]
        weights_file: Option<PathBuf>,
        #[serde(default)]
        boxes: Vec<BoxRegion>,
        #[serde(default)]
        background: f64,
    },
    /// Weight 1 within `radius` of `center`, `exp(-α (d - r)²)` outside.
    RadialDecay {
        center: VertexRef,
        radius: f64,
        #[serde(default = "default_decay")]
        alpha: f64,
    },
    Handle {
        handles: Vec<VertexRef>,
        #[serde(default = "default_handle_alpha")]
        alpha: f64,
    },
    Contact {
        patches: Vec<ContactPatchSpec>,
        #[serde(default)]
        normalize: bool,
    },
    Pneumatic {
        pockets: Vec<PocketSpec>,
    },
    /// Fibers in every element whose centroid lies in `region`.
    Muscle {
        region: BoxRegion,
        direction: [f64; 3],
    },
    Spring {
        edges: Vec<[VertexRef; 2]>,
    },
}

#[derive(Debug, Clone, Deserialize)]
pub struct PriorSpec {
    #[serde(flatten)]
    pub model: PriorModel,
    /// Standard-deviation scale applied to the covariance.
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default)]
    pub label: Option<String>,
    /// Actuation covariance `Σ_A` for low-rank models (identity if absent).
    #[serde(default)]
    pub actuation_covariance: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub actuation_mean: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureComponentSpec {
    pub prior: PriorSpec,
    #[serde(default = "one")]
    pub weight: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HysteresisSpec {
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "yes")]
    pub enabled: bool,
}

impl Default for HysteresisSpec {
    fn default() -> Self {
        Self {
            margin: default_margin(),
            window: default_window(),
            enabled: true,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    pub components: Vec<MixtureComponentSpec>,
    #[serde(default)]
    pub hysteresis: HysteresisSpec,
    #[serde(default)]
    pub support_limit: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathChoice {
    /// Diagonal or low-rank path by covariance form.
    #[default]
    Auto,
    Diagonal,
    Lowrank,
    Greens,
    Dense,
    Pca,
    Lma,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubspaceSpec {
    pub m: usize,
    #[serde(default)]
    pub path: PathChoice,
    #[serde(default)]
    pub skinning: bool,
    #[serde(default = "yes")]
    pub keep_mean: bool,
    /// Snapshot count for the `pca` path.
    #[serde(default = "default_pca_samples")]
    pub pca_samples: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    #[serde(default = "default_h")]
    pub h: f64,
    #[serde(default)]
    pub damping_mass: f64,
    #[serde(default)]
    pub damping_stiffness: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Acceleration applied as the constant load `M g`.
    #[serde(default)]
    pub gravity: Option<[f64; 3]>,
    #[serde(default)]
    pub schedule: Option<PathBuf>,
    /// Named vertices the schedule can refer to.
    #[serde(default)]
    pub handles: BTreeMap<String, VertexRef>,
    /// Spring strength per unit mass for dragged handles.
    #[serde(default = "default_handle_alpha")]
    pub handle_strength: f64,
    #[serde(default = "default_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Store full displacements in the trajectory as well.
    #[serde(default)]
    pub record_displacement: bool,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceSpec {
    #[serde(default = "default_bind")]
    pub bind: String,
    #[serde(default = "default_frame_rate")]
    pub frame_rate: f64,
    #[serde(default = "default_queue")]
    pub queue_capacity: usize,
    #[serde(default = "default_backlog")]
    pub client_backlog: usize,
}

impl Default for ServiceSpec {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PcaCheck {
    #[serde(default = "default_pca_counts")]
    pub counts: Vec<usize>,
    #[serde(default = "default_seed_count")]
    pub seeds: usize,
    #[serde(default = "default_pca_modes")]
    pub modes: usize,
    #[serde(default = "default_pca_angle")]
    pub max_angle: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationCheck {
    pub center: VertexRef,
    pub radii: Vec<f64>,
    #[serde(default = "default_decay")]
    pub alpha: f64,
    #[serde(default = "default_ablation_modes")]
    pub m: usize,
    /// Force per unit mass applied to the vertices within the tightest
    /// radius of `center`.
    pub load: [f64; 3],
    #[serde(default = "default_ratio")]
    pub min_ratio: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationSpec {
    #[serde(default = "default_validation_modes")]
    pub lma_modes: usize,
    #[serde(default = "default_lma_angle")]
    pub lma_max_angle: f64,
    #[serde(default = "default_tight")]
    pub containment_tolerance: f64,
    #[serde(default = "default_tight")]
    pub optimality_tolerance: f64,
    #[serde(default = "default_tight")]
    pub orthonormality_tolerance: f64,
    #[serde(default = "default_mc_samples")]
    pub monte_carlo_samples: usize,
    #[serde(default = "default_mc_tolerance")]
    pub monte_carlo_tolerance: f64,
    #[serde(default = "default_trials")]
    pub random_trials: usize,
    #[serde(default)]
    pub pca: Option<PcaCheck>,
    #[serde(default)]
    pub ablation: Option<AblationCheck>,
}

impl Default for ValidationSpec {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

fn one() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}
fn default_youngs() -> f64 {
    1e5
}
fn default_poisson() -> f64 {
    0.3
}
fn default_density() -> f64 {
    1000.0
}
fn default_decay() -> f64 {
    10.0
}
fn default_handle_alpha() -> f64 {
    50.0
}
fn default_margin() -> f64 {
    2.0
}
fn default_window() -> usize {
    3
}
fn default_pca_samples() -> usize {
    1000
}
fn default_h() -> f64 {
    1.0 / 60.0
}
fn default_steps() -> usize {
    120
}
fn default_iterations() -> usize {
    10
}
fn default_tolerance() -> f64 {
    1e-8
}
fn default_bind() -> String {
    "127.0.0.1:8765".into()
}
fn default_frame_rate() -> f64 {
    60.0
}
fn default_queue() -> usize {
    1024
}
fn default_backlog() -> usize {
    64
}
fn default_pca_counts() -> Vec<usize> {
    vec![50, 200, 1000, 10_000]
}
fn default_seed_count() -> usize {
    10
}
fn default_pca_modes() -> usize {
    10
}
fn default_pca_angle() -> f64 {
    0.05
}
fn default_ablation_modes() -> usize {
    10
}
fn default_ratio() -> f64 {
    10.0
}
fn default_validation_modes() -> usize {
    10
}
fn default_lma_angle() -> f64 {
    1e-6
}
fn default_tight() -> f64 {
    1e-8
}
fn default_mc_samples() -> usize {
    10_000
}
fn default_mc_tolerance() -> f64 {
    0.02
}
fn default_trials() -> usize {
    100
}

impl SceneConfig {
    /// Reads, validates and resolves relative paths against the config's
    /// directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).map_err(|e| e.context(&path.display().to_string()))
    }

    pub fn parse(text: &str, base: &Path) -> CliResult<Self> {
        let mut cfg: SceneConfig =
            serde_json::from_str(text).map_err(|e| CliError::input(format!("invalid config: {e}")))?;
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = &mut self.mesh.path {
            fix(p);
        }
        if let Some(p) = &mut self.simulation.schedule {
            fix(p);
        }
        for prior in self.priors_mut() {
            if let PriorModel::Painted { weights_file: Some(p), .. } = &mut prior.model {
                fix(p);
            }
        }
    }

    fn priors_mut(&mut self) -> Vec<&mut PriorSpec> {
        let mut out: Vec<&mut PriorSpec> = self.prior.iter_mut().collect();
        if let Some(mix) = &mut self.mixture {
            out.extend(mix.components.iter_mut().map(|c| &mut c.prior));
        }
        out
    }

    /// The single prior or the mixture components, in order.
    pub fn priors(&self) -> Vec<&PriorSpec> {
        let mut out: Vec<&PriorSpec> = self.prior.iter().collect();
        if let Some(mix) = &self.mixture {
            out.extend(mix.components.iter().map(|c| &c.prior));
        }
        out
    }

    fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Input(m));
        if self.version != CONFIG_VERSION {
            return bad(format!("unsupported config version {} (expected {CONFIG_VERSION})", self.version));
        }
        match (&self.mesh.path, &self.mesh.shape) {
            (Some(p), None) => {
                if !p.exists() && !tetgen_pair_exists(p) {
                    return bad(format!("mesh file {} does not exist", p.display()));
                }
            }
            (None, Some(_)) => {}
            _ => return bad("mesh needs exactly one of `path` or `shape`".into()),
        }
        if !(self.mesh.scale > 0.0 && self.mesh.scale.is_finite()) {
            return bad("mesh scale must be positive".into());
        }
        match (&self.prior, &self.mixture) {
            (Some(_), None) => {}
            (None, Some(mix)) => {
                if mix.components.is_empty() {
                    return bad("mixture needs at least one component".into());
                }
                if mix.hysteresis.window == 0 || !(mix.hysteresis.margin >= 0.0) {
                    return bad("hysteresis needs window >= 1 and margin >= 0".into());
                }
            }
            _ => return bad("config needs exactly one of `prior` or `mixture`".into()),
        }
        for prior in self.priors() {
            if let PriorModel::Painted { weights_file: Some(p), .. } = &prior.model {
                if !p.exists() {
                    return bad(format!("weights file {} does not exist", p.display()));
                }
            }
            if !(prior.scale > 0.0 && prior.scale.is_finite()) {
                return bad("prior scale must be positive".into());
            }
        }
        if let Some(p) = &self.simulation.schedule {
            if !p.exists() {
                return bad(format!("schedule {} does not exist", p.display()));
            }
        }
        if self.subspace.m == 0 {
            return bad("subspace.m must be at least 1".into());
        }
        let sim = &self.simulation;
        if !(sim.h > 0.0 && sim.h.is_finite()) {
            return bad("simulation.h must be positive".into());
        }
        if sim.damping_mass < 0.0 || sim.damping_stiffness < 0.0 {
            return bad("damping coefficients must be non-negative".into());
        }
        if !(sim.handle_strength > 0.0 && sim.handle_strength.is_finite()) {
            return bad("simulation.handle_strength must be positive".into());
        }
        if !(self.service.frame_rate > 0.0 && self.service.frame_rate.is_finite()) {
            return bad("service.frame_rate must be positive".into());
        }
        if let Some(eps) = self.regularization {
            if !(eps > 0.0 && eps.is_finite()) {
                return bad("regularization must be positive".into());
            }
        }
        Ok(())
    }
}

fn tetgen_pair_exists(p: &Path) -> bool {
    p.with_extension("node").exists() && p.with_extension("ele").exists()
}
