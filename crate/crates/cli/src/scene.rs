//! Turns a [`SceneConfig`] into meshes, operators, priors and subspaces.

use std::fs;
use std::path::Path;

use forcedual::fem::{element_jacobians, MaterialParams};
use forcedual::mesh::{shapes, TetMesh, Vec3};
use forcedual::mesh_io::{load_mesh, MeshFormat};
use forcedual::mixture::{HysteresisSelector, MixtureModel};
use forcedual::operators::{Regularization, SystemOperators};
use forcedual::oracle::{dense_optimal_basis, pca_from_samples, DenseModel};
use forcedual::priors::{
    contact_prior, handle_prior, lma_prior, muscle_prior, painted_prior, pneumatic_prior, radial_decay_weights,
    spring_prior, ContactFrame, ContactPatchSet, Covariance, ForcePrior, HandleSet, MuscleFiberSet,
    PneumaticPocketSet, SpringSet,
};
use forcedual::sim::StepSettings;
use forcedual::subspace::{build, build_diagonal, build_lowrank, greens_subspace, lma_subspace, skinning_subspace};
use forcedual::subspace::{BuildSettings, Subspace};
use forcedual_live::Scene;
use nalgebra::{DMatrix, DVector};

use crate::config::{BoxRegion, PathChoice, PriorModel, PriorSpec, SceneConfig, Shape, SubspaceSpec, VertexRef};
use crate::error::{io_error, CliError, CliResult};

pub struct Assembled {
    pub mesh: TetMesh,
    pub ops: SystemOperators,
}

pub fn load_scene_mesh(cfg: &SceneConfig) -> CliResult<TetMesh> {
    let spec = &cfg.mesh;
    let need = |what: &str| CliError::input(format!("mesh shape needs `{what}`"));
    let mesh = if let Some(path) = &spec.path {
        let format = match &spec.format {
            Some(id) => MeshFormat::from_id(id)?,
            None => MeshFormat::guess(path)
                .ok_or_else(|| CliError::input(format!("cannot tell the format of {}", path.display())))?,
        };
        load_mesh(path, format)?
    } else {
        match spec.shape.expect("validated: shape or path") {
            Shape::Tet => shapes::regular_tet(),
            Shape::Box => shapes::box_grid(spec.cells.ok_or_else(|| need("cells"))?, spec.size.ok_or_else(|| need("size"))?),
            Shape::Bar => shapes::bar(spec.cells.ok_or_else(|| need("cells"))?, spec.size.ok_or_else(|| need("size"))?),
            Shape::Ball => shapes::ball(
                spec.cells.ok_or_else(|| need("cells"))?[0],
                spec.radius.ok_or_else(|| need("radius"))?,
            ),
            Shape::Bear => shapes::bear_proxy(),
            Shape::Bat => shapes::bat_proxy(),
        }
    };
    if spec.scale == 1.0 {
        return Ok(mesh);
    }
    let vertices = mesh.vertices().iter().map(|v| v * spec.scale).collect();
    Ok(TetMesh::new(vertices, mesh.tets().to_vec())?)
}

pub fn pinned_vertices(cfg: &SceneConfig, mesh: &TetMesh) -> CliResult<Vec<usize>> {
    let n = mesh.num_vertices();
    if let Some(&v) = cfg.pins.vertices.iter().find(|&&v| v >= n) {
        return Err(CliError::input(format!("pinned vertex {v} does not exist ({n} vertices)")));
    }
    let (lo, hi) = mesh.bounds();
    let tol = 1e-9 * (hi - lo).norm().max(1.0);
    let mut pins = cfg.pins.vertices.clone();
    for region in &cfg.pins.regions {
        let k = region.axis.index();
        pins.extend(mesh.select_vertices(|p| {
            region.below.is_none_or(|b| p[k] <= b + tol) && region.above.is_none_or(|a| p[k] >= a - tol)
        }));
    }
    pins.sort_unstable();
    pins.dedup();
    Ok(pins)
}

pub fn assemble(cfg: &SceneConfig) -> CliResult<Assembled> {
    let mesh = load_scene_mesh(cfg)?;
    let m = &cfg.material;
    let mat = MaterialParams::uniform(m.youngs_modulus, m.poisson_ratio, m.density);
    mat.validate(&mesh)?;
    let pins = pinned_vertices(cfg, &mesh)?;
    let reg = cfg.regularization.map_or(Regularization::Auto, Regularization::Fixed);
    let ops = SystemOperators::assemble(&mesh, &mat, &pins, reg)?;
    log::info!(
        "assembled {} vertices, {} tets, {} pinned",
        mesh.num_vertices(),
        mesh.num_tets(),
        pins.len()
    );
    Ok(Assembled { mesh, ops })
}

pub fn resolve_vertex(mesh: &TetMesh, r: &VertexRef) -> CliResult<usize> {
    match *r {
        VertexRef::Index(v) if v < mesh.num_vertices() => Ok(v),
        VertexRef::Index(v) => Err(CliError::input(format!(
            "vertex {v} does not exist ({} vertices)",
            mesh.num_vertices()
        ))),
        VertexRef::Point(p) => Ok(mesh.nearest_vertex(&Vec3::from(p))),
    }
}

fn in_box(b: &BoxRegion, p: &Vec3) -> bool {
    (0..3).all(|k| p[k] >= b.min[k] && p[k] <= b.max[k])
}

fn read_weights(path: &Path, n: usize) -> CliResult<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let values = text
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|e| CliError::input(format!("{}: bad weight '{t}': {e}", path.display()))))
        .collect::<CliResult<Vec<f64>>>()?;
    if values.len() != n {
        return Err(CliError::input(format!("{}: {} weights for {n} vertices", path.display(), values.len())));
    }
    Ok(values)
}

fn actuation_stats(spec: &PriorSpec) -> CliResult<(Option<DMatrix<f64>>, Option<DVector<f64>>)> {
    let cov = match &spec.actuation_covariance {
        Some(rows) => {
            let r = rows.len();
            if rows.iter().any(|row| row.len() != r) {
                return Err(CliError::input("actuation_covariance must be square"));
            }
            Some(DMatrix::from_fn(r, r, |i, j| rows[i][j]))
        }
        None => None,
    };
    Ok((cov, spec.actuation_mean.as_ref().map(|m| DVector::from_column_slice(m))))
}

pub fn build_prior(mesh: &TetMesh, ops: &SystemOperators, spec: &PriorSpec) -> CliResult<ForcePrior> {
    let n = mesh.num_vertices();
    let (cov, mean) = actuation_stats(spec)?;
    if !matches!(
        spec.model,
        PriorModel::Handle { .. } | PriorModel::Contact { .. } | PriorModel::Pneumatic { .. } | PriorModel::Muscle { .. } | PriorModel::Spring { .. }
    ) && (cov.is_some() || mean.is_some())
    {
        return Err(CliError::input("actuation statistics only apply to low-rank priors"));
    }
    let mut prior = match &spec.model {
        PriorModel::Lma {} => lma_prior(ops),
        PriorModel::Painted { weights_file, boxes, background } => {
            let mut w = match weights_file {
                Some(p) => read_weights(p, n)?,
                None => vec![*background; n],
            };
            for b in boxes {
                for v in mesh.select_vertices(|p| in_box(b, p)) {
                    w[v] = b.value;
                }
            }
            painted_prior(mesh, ops, &w)?
        }
        PriorModel::RadialDecay { center, radius, alpha } => {
            let c = match center {
                VertexRef::Point(p) => Vec3::from(*p),
                VertexRef::Index(_) => mesh.vertices()[resolve_vertex(mesh, center)?],
            };
            painted_prior(mesh, ops, &radial_decay_weights(mesh, &c, *radius, *alpha))?
        }
        PriorModel::Handle { handles, alpha } => {
            let vs = handles.iter().map(|h| resolve_vertex(mesh, h)).collect::<CliResult<Vec<_>>>()?;
            handle_prior(ops, &HandleSet::new(vs, *alpha), cov, mean)?
        }
        PriorModel::Contact { patches, normalize } => {
            let frames = patches
                .iter()
                .map(|p| ContactFrame::spherical_patch(mesh, &Vec3::from(p.center), p.radius, Vec3::from(p.normal)))
                .collect();
            contact_prior(mesh, ops, &ContactPatchSet { frames, normalize: *normalize }, cov, mean)?
        }
        PriorModel::Pneumatic { pockets } => {
            let on_surface = mesh.is_surface_vertex_mask();
            let sets = pockets
                .iter()
                .map(|p| match (&p.vertices, p.center, p.radius) {
                    (Some(vs), None, None) => Ok(vs.clone()),
                    (None, Some(c), Some(r)) => {
                        let c = Vec3::from(c);
                        Ok((0..n).filter(|&i| on_surface[i] && (mesh.vertices()[i] - c).norm() <= r).collect())
                    }
                    _ => Err(CliError::input("a pocket needs either `vertices` or `center` and `radius`")),
                })
                .collect::<CliResult<Vec<_>>>()?;
            pneumatic_prior(mesh, &PneumaticPocketSet { pockets: sets }, cov, mean)?
        }
        PriorModel::Muscle { region, direction } => {
            let d = Vec3::from(*direction);
            if !(d.norm() > 0.0) {
                return Err(CliError::input("fiber direction must be nonzero"));
            }
            let elements: Vec<usize> = (0..mesh.num_tets()).filter(|&t| in_box(region, &mesh.centroid(t))).collect();
            if elements.is_empty() {
                return Err(CliError::input("muscle region contains no elements"));
            }
            let fibers = MuscleFiberSet { directions: vec![d.normalize(); elements.len()], elements };
            muscle_prior(mesh, &element_jacobians(mesh)?, &fibers, cov, mean)?
        }
        PriorModel::Spring { edges } => {
            let edges = edges
                .iter()
                .map(|[a, b]| Ok([resolve_vertex(mesh, a)?, resolve_vertex(mesh, b)?]))
                .collect::<CliResult<Vec<_>>>()?;
            spring_prior(mesh, &SpringSet::at_rest(mesh, edges), cov, mean)?
        }
    };
    if spec.scale != 1.0 {
        prior = prior.scaled(spec.scale);
    }
    if let Some(label) = &spec.label {
        prior.label = label.clone();
    }
    Ok(prior)
}

pub fn build_settings(spec: &SubspaceSpec, seed: u64) -> BuildSettings {
    let mut s = BuildSettings { keep_mean: spec.keep_mean, ..BuildSettings::default() };
    s.eigen.seed = seed;
    s
}

/// Builds the subspace for one prior following the configured path.
pub fn build_subspace(
    mesh: &TetMesh,
    ops: &SystemOperators,
    prior: &ForcePrior,
    spec: &SubspaceSpec,
    seed: u64,
) -> CliResult<Subspace> {
    let settings = build_settings(spec, seed);
    let m = spec.m;
    if prior.is_degenerate() {
        return Err(CliError::input(format!("prior '{}' has zero covariance", prior.label)));
    }
    if spec.skinning {
        return Ok(skinning_subspace(mesh.vertices(), ops, prior, m, &settings)?);
    }
    let low_rank = prior.is_low_rank();
    let sub = match spec.path {
        PathChoice::Auto => build(ops, prior, m, &settings)?,
        PathChoice::Diagonal if !low_rank => build_diagonal(ops, prior, m, &settings)?,
        PathChoice::Lowrank if low_rank => build_lowrank(ops, prior, m, &settings)?,
        PathChoice::Diagonal | PathChoice::Lowrank => {
            return Err(CliError::input(format!(
                "path {:?} does not match prior '{}' ({} covariance)",
                spec.path,
                prior.label,
                if low_rank { "low-rank" } else { "diagonal" }
            )))
        }
        PathChoice::Lma => lma_subspace(ops, m, &settings)?,
        PathChoice::Greens => {
            let Covariance::LowRank { factor, .. } = &prior.covariance else {
                return Err(CliError::input("the greens path needs a low-rank prior"));
            };
            let mut s = greens_subspace(ops, factor, m)?;
            if !spec.keep_mean {
                s = s.without_mean();
            }
            s
        }
        PathChoice::Dense => {
            let s = dense_optimal_basis(&DenseModel::new(ops, prior)?, m)?;
            if spec.keep_mean {
                s
            } else {
                s.without_mean()
            }
        }
        PathChoice::Pca => {
            let s = pca_from_samples(ops, prior, m, spec.pca_samples, seed)?;
            if spec.keep_mean {
                s
            } else {
                s.without_mean()
            }
        }
    };
    Ok(sub)
}

/// Priors, normalized-or-not mixture weights and labels, in config order.
pub fn scene_priors(cfg: &SceneConfig, a: &Assembled) -> CliResult<(Vec<ForcePrior>, Vec<f64>)> {
    let mut priors = Vec::new();
    let mut weights = Vec::new();
    if let Some(spec) = &cfg.prior {
        priors.push(build_prior(&a.mesh, &a.ops, spec).map_err(|e| e.context("prior"))?);
        weights.push(1.0);
    }
    if let Some(mix) = &cfg.mixture {
        for (k, c) in mix.components.iter().enumerate() {
            let mut p = build_prior(&a.mesh, &a.ops, &c.prior).map_err(|e| e.context(&format!("mixture component {k}")))?;
            if c.prior.label.is_none() {
                p.label = format!("{}-{k}", p.label);
            }
            priors.push(p);
            weights.push(c.weight);
        }
    }
    Ok((priors, weights))
}

pub fn build_all(cfg: &SceneConfig, a: &Assembled, priors: &[ForcePrior], seed: u64) -> CliResult<Vec<Subspace>> {
    priors
        .iter()
        .enumerate()
        .map(|(k, p)| {
            build_subspace(&a.mesh, &a.ops, p, &cfg.subspace, seed).map_err(|e| e.context(&format!("building subspace {k}")))
        })
        .collect()
}

pub fn mixture_model(cfg: &SceneConfig, priors: Vec<ForcePrior>, weights: Vec<f64>) -> CliResult<Option<MixtureModel>> {
    let Some(spec) = &cfg.mixture else { return Ok(None) };
    let mut mix = MixtureModel::new(priors, weights)?;
    if let Some(limit) = spec.support_limit {
        mix = mix.with_support_limit(limit);
    }
    Ok(Some(mix))
}

pub fn step_settings(cfg: &SceneConfig) -> StepSettings {
    let s = &cfg.simulation;
    StepSettings {
        h: s.h,
        damping_mass: s.damping_mass,
        damping_stiffness: s.damping_stiffness,
        max_iterations: s.max_iterations,
        tolerance: s.tolerance,
        ..StepSettings::default()
    }
}

/// Gravity as the constant load `M g`.
pub fn gravity_load(cfg: &SceneConfig, ops: &SystemOperators) -> Option<DVector<f64>> {
    let g = cfg.simulation.gravity?;
    let mut f = DVector::from_fn(ops.dim(), |i, _| ops.mass()[i] * g[i % 3]);
    ops.constrain(f.as_mut_slice());
    Some(f)
}

/// Live/scripted scene from the config, using `subspaces` if given and
/// building them otherwise.
pub fn live_scene(cfg: &SceneConfig, a: Assembled, subspaces: Option<Vec<Subspace>>, seed: u64) -> CliResult<Scene> {
    let (priors, weights) = scene_priors(cfg, &a)?;
    let subspaces = match subspaces {
        Some(s) => {
            if s.len() != priors.len() {
                return Err(CliError::input(format!(
                    "{} subspace files for {} priors",
                    s.len(),
                    priors.len()
                )));
            }
            if let Some(bad) = s.iter().find(|s| s.dim() != a.ops.dim()) {
                return Err(CliError::input(format!(
                    "subspace '{}' has dimension {} but the mesh has {}",
                    bad.provenance().label,
                    bad.dim(),
                    a.ops.dim()
                )));
            }
            s
        }
        None => build_all(cfg, &a, &priors, seed)?,
    };
    let labels = priors.iter().map(|p| p.label.clone()).collect();
    let hysteresis = cfg
        .mixture
        .as_ref()
        .map(|m| HysteresisSelector::new(m.hysteresis.margin, m.hysteresis.window, m.hysteresis.enabled))
        .unwrap_or_default();
    let base_load = gravity_load(cfg, &a.ops);
    let mixture = mixture_model(cfg, priors, weights)?;
    Ok(Scene {
        mesh: a.mesh,
        ops: a.ops,
        subspaces,
        mixture,
        labels,
        hysteresis,
        step: step_settings(cfg),
        handle_strength: cfg.simulation.handle_strength,
        base_load,
    })
}
