use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use forcedual::container::{save_subspace, Header};
use forcedual::operators::SystemOperators;
use forcedual::priors::{lma_prior, ForcePrior};
use forcedual::subspace::{propagate, BuildPath, Subspace};
use nalgebra::DVector;

use super::{Context, Manifest, ManifestEntry, MANIFEST};
use crate::config::PathChoice;
use crate::error::{CliError, CliResult};
use crate::scene::{assemble, build_subspace, scene_priors};

#[derive(Debug, Clone)]
pub struct BuildOutput {
    pub files: Vec<PathBuf>,
    pub manifest: Manifest,
    pub report: String,
}

/// `‖Σ_U M b_j − λ_j b_j‖_M` per column.
fn eigen_residuals(ops: &SystemOperators, prior: &ForcePrior, sub: &Subspace) -> CliResult<DVector<f64>> {
    let dist = propagate(ops, prior)?;
    let mut mb = sub.basis().clone();
    for (i, m) in ops.mass().iter().enumerate() {
        mb.row_mut(i).scale_mut(*m);
    }
    let applied = dist.apply_covariance(&mb);
    Ok(DVector::from_fn(sub.size(), |j, _| {
        let r = applied.column(j) - sub.basis().column(j) * sub.eigenvalues()[j];
        ops.mass_norm_squared(r.as_slice()).sqrt()
    }))
}

pub fn build(ctx: &Context) -> CliResult<BuildOutput> {
    let cfg = &ctx.config;
    ctx.ensure_out()?;
    let start = Instant::now();
    let scene = assemble(cfg)?;
    let t_assemble = start.elapsed();
    let (priors, weights) = scene_priors(cfg, &scene)?;
    let mixture = cfg.mixture.is_some();
    let mut report = String::new();
    let mut timings = vec![("assemble".to_string(), t_assemble.as_secs_f64())];
    let mut entries = Vec::new();
    let mut files = Vec::new();
    let mut modes = 0;
    let _ = writeln!(
        report,
        "mesh: {} vertices, {} tets, {} pinned; seed {}",
        scene.mesh.num_vertices(),
        scene.mesh.num_tets(),
        scene.ops.pinned().len(),
        ctx.seed
    );
    for (k, (prior, weight)) in priors.iter().zip(&weights).enumerate() {
        let t = Instant::now();
        let sub = build_subspace(&scene.mesh, &scene.ops, prior, &cfg.subspace, ctx.seed)
            .map_err(|e| e.context(&format!("component {k} ('{}')", prior.label)))?;
        timings.push((format!("component {k}"), t.elapsed().as_secs_f64()));
        modes = sub.size();
        let ortho = sub.orthonormality_error(scene.ops.mass());
        // the LMA path ignores the configured prior
        let reference = if cfg.subspace.path == PathChoice::Lma && !cfg.subspace.skinning {
            lma_prior(&scene.ops)
        } else {
            prior.clone()
        };
        let residuals = eigen_residuals(&scene.ops, &reference, &sub)?;
        let _ = writeln!(report, "\ncomponent {k} '{}'", sub.provenance().label);
        let _ = writeln!(report, "  path: {}", sub.provenance().path);
        let _ = writeln!(report, "  dimension: {}, modes: {}", sub.dim(), sub.size());
        let _ = writeln!(report, "  mean M-norm: {:.6e}", scene.ops.mass_norm_squared(sub.mean().as_slice()).sqrt());
        let _ = writeln!(report, "  mass-orthonormality residual: {ortho:.3e}");
        if sub.provenance().path != BuildPath::DiagonalGevp && sub.provenance().path != BuildPath::LowRankSvd {
            let _ = writeln!(report, "  note: {} columns need not be eigenvectors of the covariance", sub.provenance().path);
        }
        let _ = writeln!(report, "  {:>4}  {:>14}  {:>12}  {:>12}", "mode", "eigenvalue", "residual", "relative");
        for j in 0..sub.size() {
            let lambda = sub.eigenvalues()[j];
            let rel = if lambda > 0.0 { residuals[j] / lambda } else { f64::NAN };
            let _ = writeln!(report, "  {j:>4}  {lambda:>14.6e}  {:>12.3e}  {rel:>12.3e}", residuals[j]);
        }
        let file = if mixture { format!("component-{k}.fdm") } else { "subspace.fdm".to_string() };
        let path = ctx.out.join(&file);
        let mut extra = Header::new();
        extra.insert("component".into(), k.to_string());
        extra.insert("weight".into(), format!("{weight:e}"));
        extra.insert("seed".into(), ctx.seed.to_string());
        save_subspace(&path, &sub, &extra)?;
        log::info!("wrote {} ({}, m = {})", path.display(), sub.provenance().path, sub.size());
        entries.push(ManifestEntry {
            file,
            label: sub.provenance().label.clone(),
            path: sub.provenance().path.to_string(),
            weight: *weight,
        });
        files.push(path);
        if !(ortho <= 1e-8) {
            return Err(CliError::Numerical(format!(
                "component {k} basis is not mass-orthonormal (residual {ortho:.3e})"
            )));
        }
    }
    let _ = writeln!(report, "\n[timings: wall clock, not reproducible]");
    for (what, secs) in &timings {
        let _ = writeln!(report, "  {what}: {secs:.3} s");
    }
    let manifest = Manifest {
        version: 1,
        dim: scene.ops.dim(),
        m: modes,
        seed: ctx.seed,
        components: entries,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    ctx.write(MANIFEST, &(text + "\n"))?;
    ctx.write("report.txt", &report)?;
    Ok(BuildOutput { files, manifest, report })
}
