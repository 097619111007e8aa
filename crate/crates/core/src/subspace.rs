//! Displacement distributions induced by force priors and the mass-orthonormal
//! bases extracted from them.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::eigen::{gram_top_eigenpairs, random_block, sorted_svd, IterationSettings};
use crate::error::{Error, Result};
use crate::mesh::Vec3;
use crate::operators::SystemOperators;
use crate::priors::{Covariance, ForcePrior};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BuildPath {
    DiagonalGevp,
    LowRankSvd,
    LmaReference,
    Greens,
    Skinning,
    DenseReference,
    Pca,
}

impl BuildPath {
    pub const ALL: [BuildPath; 7] = [
        BuildPath::DiagonalGevp,
        BuildPath::LowRankSvd,
        BuildPath::LmaReference,
        BuildPath::Greens,
        BuildPath::Skinning,
        BuildPath::DenseReference,
        BuildPath::Pca,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BuildPath::DiagonalGevp => "diagonal-GEVP",
            BuildPath::LowRankSvd => "lowrank-SVD",
            BuildPath::LmaReference => "lma-reference",
            BuildPath::Greens => "greens",
            BuildPath::Skinning => "skinning",
            BuildPath::DenseReference => "dense-reference",
            BuildPath::Pca => "pca",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.as_str() == s)
    }
}

impl fmt::Display for BuildPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub label: String,
    pub path: BuildPath,
}

/// `U ≈ B z + μ_U` with `BᵀMB = I` and `Λ` the displacement variance carried
/// by each column.
#[derive(Debug, Clone, PartialEq)]
pub struct Subspace {
    basis: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    mean: DVector<f64>,
    provenance: Provenance,
}

impl Subspace {
    /// Checks shapes and finiteness only; use [`Subspace::orthonormality_error`]
    /// to validate against a mass matrix.
    pub fn from_parts(
        basis: DMatrix<f64>,
        eigenvalues: DVector<f64>,
        mean: DVector<f64>,
        provenance: Provenance,
    ) -> Result<Self> {
        if eigenvalues.len() != basis.ncols() || mean.len() != basis.nrows() {
            return Err(Error::invalid(format!(
                "basis is {}x{} but {} eigenvalues and a mean of {} were given",
                basis.nrows(),
                basis.ncols(),
                eigenvalues.len(),
                mean.len()
            )));
        }
        if basis.iter().chain(eigenvalues.iter()).chain(mean.iter()).any(|x| !x.is_finite()) {
            return Err(Error::invalid("subspace contains non-finite values"));
        }
        Ok(Self {
            basis,
            eigenvalues,
            mean,
            provenance,
        })
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// Ambient dimension `3n`.
    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    /// Number of reduced coordinates `m`.
    pub fn size(&self) -> usize {
        self.basis.ncols()
    }

    pub fn without_mean(mut self) -> Self {
        self.mean.fill(0.0);
        self
    }

    /// First `m` columns (bases are nested by construction).
    pub fn truncated(&self, m: usize) -> Self {
        let m = m.min(self.size());
        Self {
            basis: self.basis.columns(0, m).into_owned(),
            eigenvalues: self.eigenvalues.rows(0, m).into_owned(),
            mean: self.mean.clone(),
            provenance: self.provenance.clone(),
        }
    }

    pub fn reconstruct(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.basis * z + &self.mean
    }

    pub fn reconstruct_velocity(&self, z_dot: &DVector<f64>) -> DVector<f64> {
        &self.basis * z_dot
    }

    /// `Bᵀ M (u − μ_U)`
    pub fn project(&self, mass: &[f64], u: &DVector<f64>) -> DVector<f64> {
        let d = DVector::from_iterator(u.len(), (0..u.len()).map(|i| mass[i] * (u[i] - self.mean[i])));
        self.basis.tr_mul(&d)
    }

    pub fn project_velocity(&self, mass: &[f64], v: &DVector<f64>) -> DVector<f64> {
        let d = DVector::from_iterator(v.len(), (0..v.len()).map(|i| mass[i] * v[i]));
        self.basis.tr_mul(&d)
    }

    /// `‖BᵀMB − I‖_∞` (max absolute row sum).
    pub fn orthonormality_error(&self, mass: &[f64]) -> f64 {
        let mut mb = self.basis.clone();
        for (i, m) in mass.iter().enumerate() {
            mb.row_mut(i).scale_mut(*m);
        }
        let mut gram = self.basis.tr_mul(&mb);
        for i in 0..gram.nrows() {
            gram[(i, i)] -= 1.0;
        }
        gram.row_iter().map(|r| r.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
    }

    /// `Γ = Λ^{-1/2}`; the generalized eigenvalues of `H b = γ M b` when the
    /// prior is `Σ_F = M`.
    pub fn modal_eigenvalues(&self) -> DVector<f64> {
        self.eigenvalues.map(|l| if l > 0.0 { l.powf(-0.5) } else { f64::INFINITY })
    }
}

/// `N(μ_U, Σ_U)` with `Σ_U = H⁻¹ Σ_F H⁻¹`, kept implicit.
#[derive(Debug)]
pub struct DisplacementDistribution<'a> {
    ops: &'a SystemOperators,
    prior: &'a ForcePrior,
    mean: DVector<f64>,
}

impl<'a> DisplacementDistribution<'a> {
    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn prior(&self) -> &ForcePrior {
        self.prior
    }

    pub fn ops(&self) -> &SystemOperators {
        self.ops
    }

    /// `Σ_U X` through two sparse solves.
    pub fn apply_covariance(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = self.ops.solve_columns(x);
        self.ops.constrain_columns(&mut y);
        let mut y = self.prior.apply_covariance(&y);
        self.ops.constrain_columns(&mut y);
        self.ops.solve_columns(&y)
    }
}

pub fn propagate<'a>(ops: &'a SystemOperators, prior: &'a ForcePrior) -> Result<DisplacementDistribution<'a>> {
    if prior.dim() != ops.dim() {
        return Err(Error::invalid(format!(
            "prior has dimension {} but the system has {}",
            prior.dim(),
            ops.dim()
        )));
    }
    Ok(DisplacementDistribution {
        ops,
        prior,
        mean: ops.solve(&prior.mean),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuildSettings {
    pub eigen: IterationSettings,
    /// Keep `μ_U` in the subspace; otherwise it is zeroed.
    pub keep_mean: bool,
}

impl Default for BuildSettings {
    fn default() -> Self {
        Self {
            eigen: IterationSettings::default(),
            keep_mean: true,
        }
    }
}

/// `C = G_opᵀ G_op = N Σ_U N` in factored form.
enum CovarianceOperator {
    Diagonal { sqrt_var: DVector<f64> },
    /// `K = N H⁻¹ L`
    LowRank { k: DMatrix<f64> },
}

impl CovarianceOperator {
    fn new(ops: &SystemOperators, prior: &ForcePrior) -> Result<Self> {
        if prior.dim() != ops.dim() {
            return Err(Error::invalid(format!(
                "prior has dimension {} but the system has {}",
                prior.dim(),
                ops.dim()
            )));
        }
        let mask = ops.pinned_mask();
        let degenerate = match &prior.covariance {
            Covariance::Diagonal(v) => v.iter().zip(mask).all(|(x, &p)| p || *x == 0.0),
            Covariance::LowRank { factor, .. } => factor
                .row_iter()
                .zip(mask)
                .all(|(r, &p)| p || r.iter().all(|x| *x == 0.0)),
        };
        if degenerate {
            return Err(Error::invalid(format!(
                "prior '{}' has zero covariance on the free coordinates",
                prior.label
            )));
        }
        Ok(match &prior.covariance {
            Covariance::Diagonal(v) => {
                let max = v.max();
                let floor = 1e-12 * max;
                CovarianceOperator::Diagonal {
                    sqrt_var: v.map(|x| if x > 0.0 { x.sqrt() } else { floor.sqrt() }),
                }
            }
            Covariance::LowRank { factor, .. } => CovarianceOperator::LowRank {
                k: ops.scale_by_sqrt_mass(&ops.solve_columns(factor)),
            },
        })
    }

    fn g(&self, ops: &SystemOperators, y: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            CovarianceOperator::Diagonal { sqrt_var } => {
                let mut w = ops.solve_columns(&ops.scale_by_sqrt_mass(y));
                for (i, s) in sqrt_var.iter().enumerate() {
                    w.row_mut(i).scale_mut(*s);
                }
                ops.constrain_columns(&mut w);
                w
            }
            CovarianceOperator::LowRank { k } => k.tr_mul(y),
        }
    }

    fn gt(&self, ops: &SystemOperators, w: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            CovarianceOperator::Diagonal { sqrt_var } => {
                let mut x = w.clone();
                for (i, s) in sqrt_var.iter().enumerate() {
                    x.row_mut(i).scale_mut(*s);
                }
                ops.scale_by_sqrt_mass(&ops.solve_columns(&x))
            }
            CovarianceOperator::LowRank { k } => k * w,
        }
    }
}

fn free_dofs(ops: &SystemOperators) -> usize {
    ops.pinned_mask().iter().filter(|p| !**p).count()
}

fn subspace_mean(ops: &SystemOperators, prior: &ForcePrior, keep: bool) -> DVector<f64> {
    if keep {
        ops.solve(&prior.mean)
    } else {
        DVector::zeros(ops.dim())
    }
}

/// Dispatches on the prior's covariance form.
pub fn build(ops: &SystemOperators, prior: &ForcePrior, m: usize, settings: &BuildSettings) -> Result<Subspace> {
    match prior.covariance {
        Covariance::Diagonal(_) => build_diagonal(ops, prior, m, settings),
        Covariance::LowRank { .. } => build_lowrank(ops, prior, m, settings),
    }
}

/// Top-`m` eigenvectors of `Σ_U M` for a diagonal prior, i.e. the bottom of
/// `H Σ_F⁻¹ H B = M B Λ⁻¹`, by shift-invert block iteration.
pub fn build_diagonal(
    ops: &SystemOperators,
    prior: &ForcePrior,
    m: usize,
    settings: &BuildSettings,
) -> Result<Subspace> {
    if !matches!(prior.covariance, Covariance::Diagonal(_)) {
        return Err(Error::invalid("build_diagonal needs a diagonal prior"));
    }
    build_iterative(ops, prior, m, settings, BuildPath::DiagonalGevp)
}

fn build_iterative(
    ops: &SystemOperators,
    prior: &ForcePrior,
    m: usize,
    settings: &BuildSettings,
    path: BuildPath,
) -> Result<Subspace> {
    let free = free_dofs(ops);
    if m == 0 {
        return Err(Error::invalid("subspace size must be at least 1"));
    }
    if m > free {
        return Err(Error::RankDeficient {
            requested: m,
            available: free,
        });
    }
    let op = CovarianceOperator::new(ops, prior)?;
    let p = (m + settings.eigen.oversampling).min(free);
    let start = random_block(ops.dim(), p, settings.eigen.seed, ops.pinned_mask());
    let pairs = gram_top_eigenpairs(start, m, free, &settings.eigen, |y| op.g(ops, y), |w| op.gt(ops, w))?;
    let mut basis = ops.scale_by_inv_sqrt_mass(&pairs.vectors);
    canonicalize(&mut basis, &pairs.values, ops.mass());
    Subspace::from_parts(
        basis,
        pairs.values,
        subspace_mean(ops, prior, settings.keep_mean),
        Provenance {
            label: prior.label.clone(),
            path,
        },
    )
}

/// Classical modal analysis: the diagonal path with `Σ_F = M`.
pub fn lma_subspace(ops: &SystemOperators, m: usize, settings: &BuildSettings) -> Result<Subspace> {
    let prior = crate::priors::lma_prior(ops);
    build_iterative(ops, &prior, m, settings, BuildPath::LmaReference)
}

/// `N H⁻¹ L = U S Vᵀ`, `B = N⁻¹ U_m`, `Λ = S²`.
pub fn build_lowrank(
    ops: &SystemOperators,
    prior: &ForcePrior,
    m: usize,
    settings: &BuildSettings,
) -> Result<Subspace> {
    if !prior.is_low_rank() {
        return Err(Error::invalid("build_lowrank needs a low-rank prior"));
    }
    let op = CovarianceOperator::new(ops, prior)?;
    let CovarianceOperator::LowRank { k } = op else { unreachable!() };
    let (basis, values) = truncated_left_factor(ops, &k, m)?;
    Subspace::from_parts(
        basis,
        values,
        subspace_mean(ops, prior, settings.keep_mean),
        Provenance {
            label: prior.label.clone(),
            path: BuildPath::LowRankSvd,
        },
    )
}

fn truncated_left_factor(ops: &SystemOperators, k: &DMatrix<f64>, m: usize) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let r = k.ncols();
    if m == 0 {
        return Err(Error::invalid("subspace size must be at least 1"));
    }
    if m > r {
        return Err(Error::RankDeficient {
            requested: m,
            available: r,
        });
    }
    let (u, s, _) = sorted_svd(k);
    let rank = s.iter().filter(|x| **x > 1e-10 * s[0]).count();
    if m > rank {
        return Err(Error::RankDeficient {
            requested: m,
            available: rank,
        });
    }
    let values = s.rows(0, m).map(|x| x * x);
    let mut basis = ops.scale_by_inv_sqrt_mass(&u.columns(0, m).into_owned());
    canonicalize(&mut basis, &values, ops.mass());
    Ok((basis, values))
}

/// Mass-orthonormal basis of the static responses `H⁻¹ D`, untruncated.
pub fn greens_subspace(ops: &SystemOperators, forces: &DMatrix<f64>, m: usize) -> Result<Subspace> {
    if forces.nrows() != ops.dim() {
        return Err(Error::invalid(format!(
            "force matrix has {} rows for a system of {}",
            forces.nrows(),
            ops.dim()
        )));
    }
    if m != forces.ncols() {
        return Err(Error::invalid(format!(
            "a Green's basis has one column per force ({} forces, {m} requested)",
            forces.ncols()
        )));
    }
    let k = ops.scale_by_sqrt_mass(&ops.solve_columns(forces));
    let (basis, values) = truncated_left_factor(ops, &k, m)?;
    Subspace::from_parts(
        basis,
        values,
        DVector::zeros(ops.dim()),
        Provenance {
            label: "greens".into(),
            path: BuildPath::Greens,
        },
    )
}

/// Makes each column's largest-magnitude entry positive (first index wins
/// ties) after fixing a canonical basis inside repeated-eigenvalue blocks.
pub fn canonicalize(basis: &mut DMatrix<f64>, values: &DVector<f64>, mass: &[f64]) {
    let m = basis.ncols();
    let mut start = 0;
    while start < m {
        let mut end = start + 1;
        while end < m && (values[end - 1] - values[end]).abs() <= 1e-8 * values[start].abs() {
            end += 1;
        }
        if end - start > 1 {
            canonicalize_block(basis, start, end, mass);
        }
        start = end;
    }
    for mut col in basis.column_iter_mut() {
        let mut best = 0;
        for i in 1..col.len() {
            if col[i].abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            col.neg_mut();
        }
    }
}

/// Replaces columns `start..end` by the M-Gram-Schmidt sequence of the block's
/// projections of ascending coordinate axes.
fn canonicalize_block(basis: &mut DMatrix<f64>, start: usize, end: usize, mass: &[f64]) {
    let k = end - start;
    let block = basis.columns(start, k).into_owned();
    // projection of e_i onto the block has coefficients m_i * block[i, :]
    let coeff = |i: usize| block.row(i).transpose() * mass[i];
    let largest = (0..block.nrows()).map(|i| coeff(i).norm()).fold(0.0, f64::max);
    let mut picked: Vec<DVector<f64>> = Vec::with_capacity(k);
    for i in 0..block.nrows() {
        if picked.len() == k {
            break;
        }
        let mut c = coeff(i);
        for _ in 0..2 {
            for q in &picked {
                let d = q.dot(&c);
                c -= q * d;
            }
        }
        let norm = c.norm();
        if norm > 1e-6 * largest {
            picked.push(c / norm);
        }
    }
    if picked.len() < k {
        return;
    }
    let rot = DMatrix::from_columns(&picked);
    let canon = &block * rot;
    basis.columns_mut(start, k).copy_from(&canon);
}

/// Per-vertex scalar weight fields from a collapsed displacement
/// distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct SkinningWeights {
    /// `n × m`, orthonormal in the scalar lumped mass.
    pub weights: DMatrix<f64>,
    pub eigenvalues: DVector<f64>,
    pub label: String,
}

fn expand_scalar(ops: &SystemOperators, x: &DMatrix<f64>) -> DMatrix<f64> {
    // [E_x N_s X | E_y N_s X | E_z N_s X]
    let n = ops.num_vertices();
    let p = x.ncols();
    let mut out = DMatrix::zeros(3 * n, 3 * p);
    for d in 0..3 {
        for c in 0..p {
            for i in 0..n {
                out[(3 * i + d, d * p + c)] = x[(i, c)];
            }
        }
    }
    ops.scale_by_sqrt_mass(&out)
}

fn collapse_scalar(ops: &SystemOperators, y: &DMatrix<f64>, p: usize) -> DMatrix<f64> {
    // Σ_d N_s E_dᵀ Y_d
    let n = ops.num_vertices();
    let y = ops.scale_by_sqrt_mass(y);
    DMatrix::from_fn(n, p, |i, c| (0..3).map(|d| y[(3 * i + d, d * p + c)]).sum())
}

/// Collapses `Σ_U` to scalar fields: `Σ_φ = Σ_Uxx + Σ_Uyy + Σ_Uzz` on the
/// diagonal path, `K_φ = K_x + K_y + K_z` on the low-rank path.
pub fn scalarize_skinning(
    ops: &SystemOperators,
    prior: &ForcePrior,
    m: usize,
    settings: &BuildSettings,
) -> Result<SkinningWeights> {
    let n = ops.num_vertices();
    let vertex_pinned: Vec<bool> = (0..n).map(|i| ops.pinned_mask()[3 * i]).collect();
    let free = vertex_pinned.iter().filter(|p| !**p).count();
    let op = CovarianceOperator::new(ops, prior)?;
    let scalar_sqrt_mass = DVector::from_iterator(n, (0..n).map(|i| ops.sqrt_mass()[3 * i]));
    let (y, values) = match &op {
        CovarianceOperator::Diagonal { sqrt_var } => {
            if m == 0 || m > free {
                return Err(Error::RankDeficient {
                    requested: m,
                    available: free,
                });
            }
            let p = (m + settings.eigen.oversampling).min(free);
            let start = random_block(n, p, settings.eigen.seed, &vertex_pinned);
            let g = |x: &DMatrix<f64>| {
                let p = x.ncols();
                let mut w = ops.solve_columns(&expand_scalar(ops, x));
                for (i, s) in sqrt_var.iter().enumerate() {
                    w.row_mut(i).scale_mut(*s);
                }
                ops.constrain_columns(&mut w);
                // stack the three coordinate blocks vertically
                let rows = w.nrows();
                DMatrix::from_fn(3 * rows, p, |r, c| w[(r % rows, (r / rows) * p + c)])
            };
            let gt = |w: &DMatrix<f64>| {
                let p = w.ncols();
                let rows = w.nrows() / 3;
                let mut x = DMatrix::from_fn(rows, 3 * p, |r, c| w[((c / p) * rows + r, c % p)]);
                for (i, s) in sqrt_var.iter().enumerate() {
                    x.row_mut(i).scale_mut(*s);
                }
                collapse_scalar(ops, &ops.solve_columns(&x), p)
            };
            let pairs = gram_top_eigenpairs(start, m, free, &settings.eigen, g, gt)?;
            (pairs.vectors, pairs.values)
        }
        CovarianceOperator::LowRank { k } => {
            let r = k.ncols();
            let kphi = DMatrix::from_fn(n, r, |i, c| (0..3).map(|d| k[(3 * i + d, c)]).sum());
            if m == 0 || m > r {
                return Err(Error::RankDeficient {
                    requested: m,
                    available: r,
                });
            }
            let (u, s, _) = sorted_svd(&kphi);
            let rank = s.iter().filter(|x| **x > 1e-10 * s[0]).count();
            if m > rank {
                return Err(Error::RankDeficient {
                    requested: m,
                    available: rank,
                });
            }
            (u.columns(0, m).into_owned(), s.rows(0, m).map(|x| x * x))
        }
    };
    let mut weights = y;
    for (i, s) in scalar_sqrt_mass.iter().enumerate() {
        weights.row_mut(i).scale_mut(1.0 / s);
    }
    let scalar_mass: Vec<f64> = scalar_sqrt_mass.iter().map(|s| s * s).collect();
    canonicalize(&mut weights, &values, &scalar_mass);
    Ok(SkinningWeights {
        weights,
        eigenvalues: values,
        label: prior.label.clone(),
    })
}

/// Affine-per-weight blend `w_ik [x_iᵀ ⊗ I₃ | I₃]` (12 columns per weight),
/// mass-orthonormalized; dependent directions are dropped.
pub fn lbs_basis(positions: &[Vec3], mass: &[f64], weights: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = positions.len();
    if weights.nrows() != n || mass.len() != 3 * n {
        return Err(Error::invalid("weights, positions and mass sizes differ"));
    }
    let total: f64 = (0..n).map(|i| mass[3 * i]).sum();
    let center = (0..n).fold(Vec3::zeros(), |acc, i| acc + positions[i] * mass[3 * i]) / total;
    let k = weights.ncols();
    let mut a = DMatrix::zeros(3 * n, 12 * k);
    for w in 0..k {
        for i in 0..n {
            let wi = weights[(i, w)];
            if wi == 0.0 {
                continue;
            }
            let x = positions[i] - center;
            let s = mass[3 * i].sqrt();
            for d in 0..3 {
                for c in 0..3 {
                    a[(3 * i + d, 12 * w + 3 * c + d)] = s * wi * x[c];
                }
                a[(3 * i + d, 12 * w + 9 + d)] = s * wi;
            }
        }
    }
    let (u, s, _) = sorted_svd(&a);
    if s.is_empty() || !(s[0] > 0.0) {
        return Err(Error::invalid("skinning weights are identically zero"));
    }
    let keep = s.iter().filter(|x| **x > 1e-10 * s[0]).count().min(3 * n);
    let mut basis = u.columns(0, keep).into_owned();
    for i in 0..3 * n {
        basis.row_mut(i).scale_mut(1.0 / mass[i].sqrt());
    }
    Ok(basis)
}

/// Skinning basis rotated to the Ritz vectors of `Σ_U` inside its span, so
/// `Λ` is the captured displacement variance per column (descending).
pub fn skinning_subspace(
    positions: &[Vec3],
    ops: &SystemOperators,
    prior: &ForcePrior,
    m: usize,
    settings: &BuildSettings,
) -> Result<Subspace> {
    let weights = scalarize_skinning(ops, prior, m, settings)?;
    let lbs = lbs_basis(positions, ops.mass(), &weights.weights)?;
    let op = CovarianceOperator::new(ops, prior)?;
    let y0 = ops.scale_by_sqrt_mass(&lbs);
    let (_, s, v) = sorted_svd(&op.g(ops, &y0));
    let values = DVector::from_iterator(lbs.ncols(), (0..lbs.ncols()).map(|j| s.get(j).map_or(0.0, |x| x * x)));
    let mut basis = lbs * v;
    canonicalize(&mut basis, &values, ops.mass());
    Subspace::from_parts(
        basis,
        values,
        subspace_mean(ops, prior, settings.keep_mean),
        Provenance {
            label: prior.label.clone(),
            path: BuildPath::Skinning,
        },
    )
}
