use std::fmt::Write as _;
use std::path::Path;

use forcedual::container::load_subspace;
use forcedual::mesh::Vec3;
use forcedual::operators::SystemOperators;
use forcedual::oracle::{containment_residuals, csv_table, pca_convergence, principal_angles, DenseModel};
use forcedual::priors::{lma_prior, painted_prior, radial_decay_weights, Covariance, ForcePrior};
use forcedual::sim::{reconstruction_error, ExternalLoad};
use forcedual::subspace::{build, build_diagonal, build_lowrank};
use forcedual::Error as CoreError;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Context;
use crate::config::{AblationCheck, PcaCheck, VertexRef};
use crate::error::{CliError, CliResult};
use crate::scene::{assemble, build_settings, build_subspace, resolve_vertex, scene_priors, Assembled};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationOutcome {
    pub checks: Vec<Check>,
}

impl ValidationOutcome {
    fn push(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        let check = Check { name: name.into(), passed, detail: detail.into() };
        log::info!("{} {}: {}", if check.passed { "PASS" } else { "FAIL" }, check.name, check.detail);
        self.checks.push(check);
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn report(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let _ = writeln!(s, "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        }
        s
    }

    /// `Err` listing the failed checks, for the exit code.
    pub fn into_result(self) -> CliResult<Self> {
        let failed: Vec<&str> = self.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        if failed.is_empty() {
            Ok(self)
        } else {
            Err(CliError::Validation(format!("failed checks: {}", failed.join(", "))))
        }
    }
}

/// Runs the oracle suite on the configured scene, or only checks the given
/// subspace file against the scene's mass matrix. Writes
/// `validation.txt` and any CSV tables into the output directory.
pub fn validate(ctx: &Context, subspace_file: Option<&Path>) -> CliResult<ValidationOutcome> {
    let cfg = &ctx.config;
    let scene = assemble(cfg)?;
    let mut out = ValidationOutcome::default();
    ctx.ensure_out()?;
    match subspace_file {
        Some(file) => check_file(&scene, file, cfg.validation.orthonormality_tolerance, &mut out)?,
        None => full_suite(ctx, &scene, &mut out)?,
    }
    ctx.write("validation.txt", &out.report())?;
    Ok(out)
}

fn check_file(scene: &Assembled, file: &Path, tol: f64, out: &mut ValidationOutcome) -> CliResult<()> {
    let (sub, _) = load_subspace(file)?;
    let dim = scene.ops.dim();
    if sub.dim() != dim {
        out.push("dimension", false, format!("file has {} rows, scene has {dim}", sub.dim()));
        return Ok(());
    }
    out.push("dimension", true, format!("{dim} rows, {} columns", sub.size()));
    let ortho = sub.orthonormality_error(scene.ops.mass());
    out.push("orthonormality", ortho <= tol, format!("|BtMB - I|_inf = {ortho:.3e} (limit {tol:.0e})"));
    let sorted = sub.eigenvalues().as_slice().windows(2).all(|w| w[0] >= w[1]) && sub.eigenvalues().iter().all(|l| *l >= 0.0);
    out.push("eigenvalue order", sorted, "non-negative and descending".to_string());
    Ok(())
}

fn oracle<T>(r: Result<T, CoreError>) -> CliResult<T> {
    r.map_err(|e| CliError::from(e).context("oracle"))
}

fn full_suite(ctx: &Context, scene: &Assembled, out: &mut ValidationOutcome) -> CliResult<()> {
    let cfg = &ctx.config;
    let v = &cfg.validation;
    let ops = &scene.ops;
    let settings = build_settings(&cfg.subspace, ctx.seed);
    let m = cfg.subspace.m;

    // modal analysis against the diagonal path with Σ_F = M
    let lma = lma_prior(ops);
    let k = v.lma_modes;
    let built = oracle(build_diagonal(ops, &lma, k, &settings))?;
    let dense = oracle(DenseModel::new(ops, &lma))?;
    let (_, modes) = oracle(dense.modal_basis(k))?;
    let angle = oracle(principal_angles(&modes, built.basis(), ops.mass()))?.max_angle();
    // a cut through a repeated frequency has no unique subspace
    let split = match dense.modal_basis(k + 1) {
        Ok((w, _)) if k > 0 && (w[k] - w[k - 1]).abs() <= 1e-8 * w[k].abs() => {
            log::warn!("lma_modes = {k} splits a repeated frequency; pick a cut at a spectral gap");
            "; the cut splits a repeated frequency"
        }
        _ => "",
    };
    out.push(
        "lma-equivalence",
        angle < v.lma_max_angle,
        format!("max principal angle {angle:.3e} rad at m = {k} (limit {:.0e}){split}", v.lma_max_angle),
    );

    let (priors, _) = scene_priors(cfg, scene)?;
    for (c, prior) in priors.iter().enumerate() {
        let tag = format!("[{c} {}]", prior.label);
        if let Covariance::LowRank { factor, .. } = &prior.covariance {
            let (worst, upto) = containment(ops, prior, factor, m, &settings)?;
            out.push(
                format!("containment {tag}"),
                upto > 0 && worst < v.containment_tolerance,
                format!("max M-norm residual {worst:.3e} over m = 1..={upto} (limit {:.0e})", v.containment_tolerance),
            );
        }
        optimality(ctx, ops, prior, m, &tag, out)?;
        let a = build_subspace(&scene.mesh, ops, prior, &cfg.subspace, ctx.seed)?;
        let b = build_subspace(&scene.mesh, ops, prior, &cfg.subspace, ctx.seed)?;
        let ortho = a.orthonormality_error(ops.mass());
        out.push(
            format!("orthonormality {tag}"),
            ortho <= v.orthonormality_tolerance,
            format!("{} basis: |BtMB - I|_inf = {ortho:.3e}", a.provenance().path),
        );
        out.push(format!("determinism {tag}"), a == b, "two builds compared bit for bit".to_string());
    }
    if let Some(pca) = &v.pca {
        pca_check(ctx, ops, &priors[0], pca, out)?;
    }
    if let Some(ab) = &v.ablation {
        ablation(ctx, scene, ab, out)?;
    }
    Ok(())
}

/// Largest containment residual over every `m' ≤ min(m, rank)`, and the
/// largest `m'` that could be built.
fn containment(
    ops: &SystemOperators,
    prior: &ForcePrior,
    factor: &DMatrix<f64>,
    m: usize,
    settings: &forcedual::subspace::BuildSettings,
) -> CliResult<(f64, usize)> {
    let mut worst: f64 = 0.0;
    let mut upto = 0;
    for k in 1..=m.min(factor.ncols()) {
        match build_lowrank(ops, prior, k, settings) {
            Ok(sub) => {
                worst = containment_residuals(ops, factor, sub.basis()).into_iter().fold(worst, f64::max);
                upto = k;
            }
            Err(CoreError::RankDeficient { .. }) => break,
            Err(e) => return Err(e.into()),
        }
    }
    Ok((worst, upto))
}

/// Random M-orthonormal `dim × m` basis.
fn random_basis(ops: &SystemOperators, m: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let n = ops.dim();
    let mut x = DMatrix::from_fn(n, m, |_, _| StandardNormal.sample(rng));
    ops.constrain_columns(&mut x);
    let q = ops.scale_by_sqrt_mass(&x).qr().q();
    ops.scale_by_inv_sqrt_mass(&q)
}

fn optimality(
    ctx: &Context,
    ops: &SystemOperators,
    prior: &ForcePrior,
    m: usize,
    tag: &str,
    out: &mut ValidationOutcome,
) -> CliResult<()> {
    let v = &ctx.config.validation;
    let settings = build_settings(&ctx.config.subspace, ctx.seed);
    let sub = match build(ops, prior, m, &settings) {
        Ok(s) => s,
        Err(CoreError::RankDeficient { requested, available }) => {
            out.push(
                format!("optimality {tag}"),
                false,
                format!("cannot build {requested} modes, only {available} available"),
            );
            return Ok(());
        }
        Err(e) => return Err(e.into()),
    };
    let model = oracle(DenseModel::new(ops, prior))?;
    let total: f64 = model.spectrum().iter().sum();
    let closed = model.expected_error(sub.basis());
    let discarded = model.discarded_sum(m);
    let scale = discarded.max(1e-12 * total);
    let rel = (closed - discarded).abs() / scale;
    out.push(
        format!("optimality {tag}"),
        rel <= v.optimality_tolerance,
        format!("expected error {closed:.6e} vs discarded eigenvalues {discarded:.6e} (relative {rel:.2e})"),
    );
    let mc = model.monte_carlo_error(prior, sub.basis(), v.monte_carlo_samples, ctx.seed);
    let mc_rel = (mc - discarded).abs() / scale;
    out.push(
        format!("monte-carlo {tag}"),
        mc_rel <= v.monte_carlo_tolerance,
        format!("{} samples: {mc:.6e} ({:.2}% off)", v.monte_carlo_samples, 100.0 * mc_rel),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let mut best = f64::INFINITY;
    for _ in 0..v.random_trials {
        best = best.min(model.expected_error(&random_basis(ops, m, &mut rng)));
    }
    out.push(
        format!("random-bases {tag}"),
        best >= closed - v.optimality_tolerance * scale,
        format!("best of {} random bases {best:.6e} vs built {closed:.6e}", v.random_trials),
    );
    Ok(())
}

fn pca_check(ctx: &Context, ops: &SystemOperators, prior: &ForcePrior, pca: &PcaCheck, out: &mut ValidationOutcome) -> CliResult<()> {
    let settings = build_settings(&ctx.config.subspace, ctx.seed);
    let reference = build(ops, prior, pca.modes, &settings)?;
    let seeds: Vec<u64> = (0..pca.seeds as u64).map(|s| ctx.seed.wrapping_add(s)).collect();
    let curve = oracle(pca_convergence(ops, prior, &reference, &pca.counts, &seeds))?;
    let rows: Vec<Vec<f64>> = curve.iter().map(|(c, a)| vec![*c as f64, *a]).collect();
    ctx.write("pca.csv", &csv_table(&["samples", "mean_max_angle"], &rows))?;
    let monotone = curve.windows(2).all(|w| w[1].1 <= w[0].1);
    let last = curve.last().map_or(f64::INFINITY, |c| c.1);
    let table: Vec<String> = curve.iter().map(|(c, a)| format!("{c}:{a:.4}")).collect();
    out.push(
        "pca-convergence",
        monotone && last < pca.max_angle,
        format!(
            "mean max angle [{}] rad over {} seeds, monotone {monotone} (limit {} at the largest count)",
            table.join(" "),
            pca.seeds,
            pca.max_angle
        ),
    );
    Ok(())
}

fn ablation(ctx: &Context, scene: &Assembled, ab: &AblationCheck, out: &mut ValidationOutcome) -> CliResult<()> {
    let (mesh, ops) = (&scene.mesh, &scene.ops);
    if ab.radii.is_empty() || ab.radii.iter().any(|r| !(*r > 0.0)) {
        return Err(CliError::input("ablation radii must be positive and non-empty"));
    }
    let center = match ab.center {
        VertexRef::Point(p) => Vec3::from(p),
        VertexRef::Index(_) => mesh.vertices()[resolve_vertex(mesh, &ab.center)?],
    };
    let tightest = ab.radii.iter().copied().fold(f64::INFINITY, f64::min);
    let mut f = DVector::zeros(ops.dim());
    for (i, p) in mesh.vertices().iter().enumerate() {
        if (p - center).norm() <= tightest {
            for k in 0..3 {
                f[3 * i + k] = ab.load[k] * ops.mass()[3 * i + k];
            }
        }
    }
    ops.constrain(f.as_mut_slice());
    if f.iter().all(|x| *x == 0.0) {
        return Err(CliError::input("ablation load touches no free vertex"));
    }
    let load = ExternalLoad::Full(f);
    let settings = build_settings(&ctx.config.subspace, ctx.seed);
    let e_lma = reconstruction_error(&build_diagonal(ops, &lma_prior(ops), ab.m, &settings)?, ops, &load)?;
    let mut rows = Vec::new();
    let mut tight_ratio = 0.0;
    for &r in &ab.radii {
        let prior = painted_prior(mesh, ops, &radial_decay_weights(mesh, &center, r, ab.alpha))?;
        let e = reconstruction_error(&build_diagonal(ops, &prior, ab.m, &settings)?, ops, &load)?;
        let ratio = e_lma / e;
        if r == tightest {
            tight_ratio = ratio;
        }
        rows.push(vec![r, e, e_lma, ratio]);
    }
    ctx.write("ablation.csv", &csv_table(&["radius", "error_localized", "error_lma", "ratio"], &rows))?;
    out.push(
        "localization-ablation",
        tight_ratio >= ab.min_ratio,
        format!(
            "m = {}: LMA error {e_lma:.3e}, {tight_ratio:.1}x larger than localized at radius {tightest} (need {}x)",
            ab.m, ab.min_ratio
        ),
    );
    Ok(())
}
