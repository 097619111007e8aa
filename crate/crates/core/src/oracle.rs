//! Dense brute-force references for validating the sparse pipeline.

use std::fmt::Write as _;
use std::f64::consts::FRAC_PI_2;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::eigen::{sorted_svd, symmetric_eigen_desc};
use crate::error::{Error, Result};
use crate::operators::SystemOperators;
use crate::priors::ForcePrior;
use crate::subspace::{canonicalize, BuildPath, Provenance, Subspace};

/// Largest `3n` materialized densely.
pub const DENSE_CAP: usize = 600;

/// Dense `H`, `M`, `Σ_F` and `Σ_U = H⁻¹ P Σ_F P H⁻¹`.
#[derive(Debug, Clone)]
pub struct DenseModel {
    pub hessian: DMatrix<f64>,
    pub mass: DVector<f64>,
    pub sigma_f: DMatrix<f64>,
    pub sigma_u: DMatrix<f64>,
    pub mean_u: DVector<f64>,
    pub free: Vec<usize>,
    pub label: String,
}

impl DenseModel {
    pub fn new(ops: &SystemOperators, prior: &ForcePrior) -> Result<Self> {
        let n = ops.dim();
        if n > DENSE_CAP {
            return Err(Error::SizeCap { size: n, limit: DENSE_CAP });
        }
        let hessian = ops.hessian().to_dense();
        let chol = hessian
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Factorization("dense hessian is not positive definite".into()))?;
        let inv = chol.inverse();
        let mask = ops.pinned_mask();
        let p = DMatrix::from_fn(n, n, |i, j| if i == j && !mask[i] { 1.0 } else { 0.0 });
        let sigma_f = &p * prior.dense_covariance() * &p;
        let sigma_u = &inv * &sigma_f * &inv;
        let sigma_u = (&sigma_u + sigma_u.transpose()) * 0.5;
        let mean_u = &inv * (&p * &prior.mean);
        Ok(Self {
            hessian,
            mass: DVector::from_column_slice(ops.mass()),
            sigma_f,
            sigma_u,
            mean_u,
            free: (0..n).filter(|&i| !mask[i]).collect(),
            label: prior.label.clone(),
        })
    }

    pub fn dim(&self) -> usize {
        self.mass.len()
    }

    fn sqrt_mass(&self) -> DVector<f64> {
        self.mass.map(f64::sqrt)
    }

    /// `N Σ_U N`, which shares its spectrum with `Σ_U M`.
    pub fn scaled_covariance(&self) -> DMatrix<f64> {
        let s = self.sqrt_mass();
        DMatrix::from_fn(self.dim(), self.dim(), |i, j| s[i] * self.sigma_u[(i, j)] * s[j])
    }

    /// Eigenvalues of `Σ_U M`, descending.
    pub fn spectrum(&self) -> DVector<f64> {
        symmetric_eigen_desc(&self.scaled_covariance()).0
    }

    pub fn discarded_sum(&self, m: usize) -> f64 {
        self.spectrum().iter().skip(m).sum()
    }

    /// `E‖u − Π_B u‖²_M` in closed form for an M-orthonormal `B`.
    pub fn expected_error(&self, basis: &DMatrix<f64>) -> f64 {
        let c = self.scaled_covariance();
        let s = self.sqrt_mass();
        let mut y = basis.clone();
        for (i, si) in s.iter().enumerate() {
            y.row_mut(i).scale_mut(*si);
        }
        c.trace() - (y.transpose() * &c * &y).trace()
    }

    /// Monte-Carlo estimate of the same quantity with forces drawn from the
    /// prior and solved densely.
    pub fn monte_carlo_error(&self, prior: &ForcePrior, basis: &DMatrix<f64>, samples: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let chol = self.hessian.clone().cholesky().expect("checked at construction");
        let n = self.dim();
        let mut forces = DMatrix::zeros(n, samples);
        let free_mask: Vec<bool> = {
            let mut m = vec![false; n];
            for &i in &self.free {
                m[i] = true;
            }
            m
        };
        for s in 0..samples {
            let f = prior.sample(&mut rng);
            for i in 0..n {
                forces[(i, s)] = if free_mask[i] { f[i] } else { 0.0 };
            }
        }
        let u = chol.solve(&forces);
        let mut mb = basis.clone();
        for i in 0..n {
            mb.row_mut(i).scale_mut(self.mass[i]);
        }
        let mut total = 0.0;
        for s in 0..samples {
            let d = u.column(s) - &self.mean_u;
            let r = &d - basis * (mb.transpose() * &d);
            total += r.iter().zip(self.mass.iter()).map(|(x, m)| x * x * m).sum::<f64>();
        }
        total / samples as f64
    }

    /// Lowest `m` modes of `H b = γ M b` on the free coordinates, with
    /// eigenvalues `γ` ascending.
    pub fn modal_basis(&self, m: usize) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let f = self.free.len();
        if m > f {
            return Err(Error::RankDeficient { requested: m, available: f });
        }
        let s = self.sqrt_mass();
        let a = DMatrix::from_fn(f, f, |i, j| {
            let (gi, gj) = (self.free[i], self.free[j]);
            self.hessian[(gi, gj)] / (s[gi] * s[gj])
        });
        let neg = -a;
        let (vals, vecs) = symmetric_eigen_desc(&neg);
        let mut basis = DMatrix::zeros(self.dim(), m);
        for j in 0..m {
            for (i, &g) in self.free.iter().enumerate() {
                basis[(g, j)] = vecs[(i, j)] / s[g];
            }
        }
        Ok((DVector::from_iterator(m, vals.iter().take(m).map(|v| -v)), basis))
    }
}

/// Top `m` eigenvectors of `Σ_U M` from a dense eigensolve.
pub fn dense_optimal_basis(model: &DenseModel, m: usize) -> Result<Subspace> {
    if m == 0 || m > model.dim() {
        return Err(Error::RankDeficient { requested: m, available: model.dim() });
    }
    let s = model.sqrt_mass();
    let (vals, vecs) = symmetric_eigen_desc(&model.scaled_covariance());
    let mut basis = vecs.columns(0, m).into_owned();
    for (i, si) in s.iter().enumerate() {
        basis.row_mut(i).scale_mut(1.0 / si);
    }
    let values = vals.rows(0, m).map(|v| v.max(0.0));
    canonicalize(&mut basis, &values, model.mass.as_slice());
    Subspace::from_parts(
        basis,
        values,
        model.mean_u.clone(),
        Provenance { label: model.label.clone(), path: BuildPath::DenseReference },
    )
}

/// M-weighted POD of sampled static responses (uncentered snapshots).
pub fn pca_from_samples(ops: &SystemOperators, prior: &ForcePrior, m: usize, count: usize, seed: u64) -> Result<Subspace> {
    if count < m || m == 0 {
        return Err(Error::RankDeficient { requested: m, available: count });
    }
    let n = ops.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut forces = DMatrix::zeros(n, count);
    for s in 0..count {
        let f = prior.sample(&mut rng);
        forces.column_mut(s).copy_from(&f);
    }
    let snaps = ops.scale_by_sqrt_mass(&ops.solve_columns(&forces));
    let (u, s2) = if count <= n {
        let (u, s, _) = sorted_svd(&snaps);
        (u, s.map(|x| x * x))
    } else {
        // same left factor via the Gram matrix; avoids an n × count SVD
        let (vals, vecs) = symmetric_eigen_desc(&(&snaps * snaps.transpose()));
        (vecs, vals.map(|v| v.max(0.0)))
    };
    let mut basis = ops.scale_by_inv_sqrt_mass(&u.columns(0, m).into_owned());
    let values = s2.rows(0, m) / count as f64;
    canonicalize(&mut basis, &values, ops.mass());
    Subspace::from_parts(
        basis,
        values,
        DVector::zeros(n),
        Provenance { label: prior.label.clone(), path: BuildPath::Pca },
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentReport {
    /// Radians in `[0, π/2]`, ascending.
    pub angles: Vec<f64>,
    /// `‖(I − Π_a) b_j‖_M / ‖b_j‖_M` per column of the second basis.
    pub residuals: Vec<f64>,
}

impl AlignmentReport {
    pub fn max_angle(&self) -> f64 {
        self.angles.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }
}

fn mass_orthonormal_frame(mass: &[f64], b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut y = b.clone();
    for (i, m) in mass.iter().enumerate() {
        y.row_mut(i).scale_mut(m.sqrt());
    }
    y.qr().q()
}

/// Principal angles in the M-inner product. Small angles come from sines of
/// the projection residual, large ones from cosines, so both ends stay
/// accurate.
pub fn principal_angles(a: &DMatrix<f64>, b: &DMatrix<f64>, mass: &[f64]) -> Result<AlignmentReport> {
    if a.nrows() != b.nrows() || a.nrows() != mass.len() {
        return Err(Error::invalid("subspaces live in different spaces"));
    }
    let qa = mass_orthonormal_frame(mass, a);
    let qb = mass_orthonormal_frame(mass, b);
    let (small, large) = if qa.ncols() >= qb.ncols() { (&qb, &qa) } else { (&qa, &qb) };
    let k = small.ncols();
    let cross = large.transpose() * small;
    let cos = sorted_svd(&cross).1;
    let resid = small - large * &cross;
    let mut sin: Vec<f64> = sorted_svd(&resid).1.iter().copied().take(k).collect();
    sin.reverse();
    let mut angles: Vec<f64> = (0..k)
        .map(|j| {
            let c = cos[j].clamp(0.0, 1.0);
            if c * c > 0.5 {
                sin[j].clamp(0.0, 1.0).asin()
            } else {
                c.acos()
            }
        })
        .map(|t| t.clamp(0.0, FRAC_PI_2))
        .collect();
    angles.sort_by(f64::total_cmp);

    let mut bm = b.clone();
    for (i, m) in mass.iter().enumerate() {
        bm.row_mut(i).scale_mut(m.sqrt());
    }
    let proj = &bm - &qa * (qa.transpose() * &bm);
    let residuals = (0..b.ncols())
        .map(|j| {
            let norm = bm.column(j).norm();
            if norm > 0.0 {
                proj.column(j).norm() / norm
            } else {
                0.0
            }
        })
        .collect();
    Ok(AlignmentReport { angles, residuals })
}

pub fn subspace_angles(a: &Subspace, b: &Subspace, mass: &[f64]) -> Result<AlignmentReport> {
    principal_angles(a.basis(), b.basis(), mass)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AppendixReport {
    /// Diagonal path with `Σ_F = M` against dense modal analysis.
    pub lma_max_angle: f64,
    /// Largest M-norm residual of low-rank basis columns against `Col(H⁻¹L)`.
    pub containment_residual: f64,
}

/// Relative M-norm residual of each column of `basis` against `Col(H⁻¹ L)`.
pub fn containment_residuals(ops: &SystemOperators, factor: &DMatrix<f64>, basis: &DMatrix<f64>) -> Vec<f64> {
    let g = ops.solve_columns(factor);
    principal_angles(&g, basis, ops.mass()).map(|r| r.residuals).unwrap_or_default()
}

pub fn appendix_checks(ops: &SystemOperators, low_rank: &ForcePrior, m: usize) -> Result<AppendixReport> {
    let settings = crate::subspace::BuildSettings::default();
    let lma = crate::priors::lma_prior(ops);
    let built = crate::subspace::build_diagonal(ops, &lma, m, &settings)?;
    let model = DenseModel::new(ops, &lma)?;
    let (_, modes) = model.modal_basis(m)?;
    let lma_max_angle = principal_angles(&modes, built.basis(), ops.mass())?.max_angle();
    let crate::priors::Covariance::LowRank { factor, .. } = &low_rank.covariance else {
        return Err(Error::invalid("containment check needs a low-rank prior"));
    };
    let lr = crate::subspace::build_lowrank(ops, low_rank, m.min(factor.ncols()), &settings)?;
    let containment_residual = containment_residuals(ops, factor, lr.basis()).into_iter().fold(0.0, f64::max);
    Ok(AppendixReport { lma_max_angle, containment_residual })
}

/// Mean over seeds of the largest principal angle between the sampled and
/// closed-form bases, per sample count.
pub fn pca_convergence(
    ops: &SystemOperators,
    prior: &ForcePrior,
    reference: &Subspace,
    counts: &[usize],
    seeds: &[u64],
) -> Result<Vec<(usize, f64)>> {
    let m = reference.size();
    counts
        .iter()
        .map(|&count| {
            let mut total = 0.0;
            for &seed in seeds {
                let pca = pca_from_samples(ops, prior, m, count, seed)?;
                total += subspace_angles(reference, &pca, ops.mass())?.max_angle();
            }
            Ok((count, total / seeds.len() as f64))
        })
        .collect()
}

/// Comma-separated table with a header row.
pub fn csv_table(header: &[&str], rows: &[Vec<f64>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|x| format!("{x:e}")).collect();
        let _ = writeln!(out, "{}", cells.join(","));
    }
    out
}
