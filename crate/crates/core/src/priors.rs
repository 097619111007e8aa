//! Gaussian force priors `F ~ N(μ_F, Σ_F)` in diagonal and low-rank form,
//! and the constructors for the supported interaction models.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::fem::ElementJacobian;
use crate::mesh::{TetMesh, Vec3};
use crate::operators::SystemOperators;

#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    /// Per-coordinate variances (size `3n`).
    Diagonal(DVector<f64>),
    /// `Σ_F = L Lᵀ` where `L = D chol(Σ_A)` already absorbs the actuation
    /// covariance.
    LowRank {
        factor: DMatrix<f64>,
        actuation_mean: DVector<f64>,
        actuation_cov: DMatrix<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForcePrior {
    pub mean: DVector<f64>,
    pub covariance: Covariance,
    pub label: String,
}

impl ForcePrior {
    pub fn diagonal(mean: DVector<f64>, variances: DVector<f64>, label: impl Into<String>) -> Result<Self> {
        if mean.len() != variances.len() {
            return Err(Error::invalid("mean and variance sizes differ"));
        }
        if variances.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid("variances must be finite and nonnegative"));
        }
        Ok(Self {
            mean,
            covariance: Covariance::Diagonal(variances),
            label: label.into(),
        })
    }

    /// `F = D A` with `A ~ N(μ_A, Σ_A)`; both default to the standard normal.
    pub fn low_rank(
        actuation: DMatrix<f64>,
        actuation_cov: Option<DMatrix<f64>>,
        actuation_mean: Option<DVector<f64>>,
        label: impl Into<String>,
    ) -> Result<Self> {
        let r = actuation.ncols();
        let cov = actuation_cov.unwrap_or_else(|| DMatrix::identity(r, r));
        let mu = actuation_mean.unwrap_or_else(|| DVector::zeros(r));
        if cov.nrows() != r || cov.ncols() != r || mu.len() != r {
            return Err(Error::invalid(format!(
                "actuation statistics must be sized {r}, got cov {}x{} and mean {}",
                cov.nrows(),
                cov.ncols(),
                mu.len()
            )));
        }
        let root = psd_square_root(&cov)?;
        Ok(Self {
            mean: &actuation * &mu,
            covariance: Covariance::LowRank {
                factor: actuation * root,
                actuation_mean: mu,
                actuation_cov: cov,
            },
            label: label.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn is_low_rank(&self) -> bool {
        matches!(self.covariance, Covariance::LowRank { .. })
    }

    pub fn rank(&self) -> usize {
        match &self.covariance {
            Covariance::Diagonal(v) => v.iter().filter(|x| **x > 0.0).count(),
            Covariance::LowRank { factor, .. } => factor.ncols(),
        }
    }

    pub fn is_degenerate(&self) -> bool {
        match &self.covariance {
            Covariance::Diagonal(v) => v.iter().all(|x| *x == 0.0),
            Covariance::LowRank { factor, .. } => factor.iter().all(|x| *x == 0.0),
        }
    }

    /// Scales the covariance by `s²` (and the mean by `s`).
    pub fn scaled(&self, s: f64) -> Self {
        let covariance = match &self.covariance {
            Covariance::Diagonal(v) => Covariance::Diagonal(v * (s * s)),
            Covariance::LowRank {
                factor,
                actuation_mean,
                actuation_cov,
            } => Covariance::LowRank {
                factor: factor * s,
                actuation_mean: actuation_mean * s,
                actuation_cov: actuation_cov * (s * s),
            },
        };
        Self {
            mean: &self.mean * s,
            covariance,
            label: self.label.clone(),
        }
    }

    pub fn variances(&self) -> DVector<f64> {
        match &self.covariance {
            Covariance::Diagonal(v) => v.clone(),
            Covariance::LowRank { factor, .. } => {
                DVector::from_iterator(factor.nrows(), factor.row_iter().map(|r| r.norm_squared()))
            }
        }
    }

    pub fn trace(&self) -> f64 {
        self.variances().sum()
    }

    /// `Σ_F x`
    pub fn apply_covariance(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.covariance {
            Covariance::Diagonal(v) => {
                let mut out = x.clone();
                for (i, s) in v.iter().enumerate() {
                    out.row_mut(i).scale_mut(*s);
                }
                out
            }
            Covariance::LowRank { factor, .. } => factor * (factor.transpose() * x),
        }
    }

    pub fn dense_covariance(&self) -> DMatrix<f64> {
        match &self.covariance {
            Covariance::Diagonal(v) => DMatrix::from_diagonal(v),
            Covariance::LowRank { factor, .. } => factor * factor.transpose(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        match &self.covariance {
            Covariance::Diagonal(v) => DVector::from_iterator(
                v.len(),
                v.iter()
                    .zip(self.mean.iter())
                    .map(|(s, m)| m + s.sqrt() * rng.sample::<f64, _>(StandardNormal)),
            ),
            Covariance::LowRank { factor, .. } => {
                let xi = DVector::from_fn(factor.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
                &self.mean + factor * xi
            }
        }
    }

    /// Mean and covariance restricted to the given coordinates.
    pub fn marginal(&self, coords: &[usize]) -> (DVector<f64>, DMatrix<f64>) {
        let mean = DVector::from_iterator(coords.len(), coords.iter().map(|&c| self.mean[c]));
        let cov = match &self.covariance {
            Covariance::Diagonal(v) => {
                DMatrix::from_diagonal(&DVector::from_iterator(coords.len(), coords.iter().map(|&c| v[c])))
            }
            Covariance::LowRank { factor, .. } => {
                let rows = factor.select_rows(coords);
                &rows * rows.transpose()
            }
        };
        (mean, cov)
    }
}

/// Square-root factor `R` with `R Rᵀ = cov`; Cholesky when definite, an
/// eigen-factor when merely semidefinite.
fn psd_square_root(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = cov.nrows();
    if n == 0 {
        return Ok(cov.clone());
    }
    let asym = (cov - cov.transpose()).amax();
    let scale = cov.amax().max(f64::MIN_POSITIVE);
    if asym > 1e-12 * scale {
        return Err(Error::NotPositiveSemidefinite(format!(
            "actuation covariance is not symmetric (asymmetry {asym:.3e})"
        )));
    }
    if let Some(ch) = cov.clone().cholesky() {
        return Ok(ch.l());
    }
    let eig = SymmetricEigen::new(cov.clone());
    let min = eig.eigenvalues.min();
    if min < -1e-12 * scale {
        return Err(Error::NotPositiveSemidefinite(format!(
            "actuation covariance has eigenvalue {min:.3e}"
        )));
    }
    let mut root = eig.eigenvectors.clone();
    for (j, l) in eig.eigenvalues.iter().enumerate() {
        root.column_mut(j).scale_mut(l.max(0.0).sqrt());
    }
    Ok(root)
}

/// Uncorrelated forces with `Σ_F = M`: classical modal analysis.
pub fn lma_prior(ops: &SystemOperators) -> ForcePrior {
    ForcePrior {
        mean: DVector::zeros(ops.dim()),
        covariance: Covariance::Diagonal(DVector::from_column_slice(ops.mass())),
        label: "lma".into(),
    }
}

/// Per-vertex painted variance scale `w ∈ [0, 1]` times the lumped mass.
pub fn painted_prior(mesh: &TetMesh, ops: &SystemOperators, weights: &[f64]) -> Result<ForcePrior> {
    if weights.len() != mesh.num_vertices() {
        return Err(Error::invalid(format!(
            "weight field has {} entries for {} vertices",
            weights.len(),
            mesh.num_vertices()
        )));
    }
    if let Some(i) = weights.iter().position(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::invalid(format!(
            "weight at vertex {i} is {} (must be nonnegative)",
            weights[i]
        )));
    }
    let var = DVector::from_iterator(
        ops.dim(),
        ops.mass().iter().enumerate().map(|(i, m)| weights[i / 3] * m),
    );
    Ok(ForcePrior {
        mean: DVector::zeros(ops.dim()),
        covariance: Covariance::Diagonal(var),
        label: "painted".into(),
    })
}

/// Variance scale that is 1 within `radius` of `center` and decays as
/// `exp(-alpha (d - radius)²)` beyond it.
pub fn radial_decay_weights(mesh: &TetMesh, center: &Vec3, radius: f64, alpha: f64) -> Vec<f64> {
    mesh.vertices()
        .iter()
        .map(|p| {
            let d = (p - center).norm();
            if d <= radius {
                1.0
            } else {
                (-alpha * (d - radius).powi(2)).exp()
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct HandleSet {
    pub vertices: Vec<usize>,
    /// Spring strength per unit mass.
    pub alpha: f64,
}

impl HandleSet {
    pub fn new(vertices: Vec<usize>, alpha: f64) -> Self {
        Self { vertices, alpha }
    }

    pub fn validate(&self, num_vertices: usize) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::invalid("handle strength must be positive"));
        }
        let mut seen = self.vertices.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.vertices.len() {
            return Err(Error::invalid("handle vertices must be distinct"));
        }
        if let Some(v) = self.vertices.iter().find(|&&v| v >= num_vertices) {
            return Err(Error::invalid(format!("handle vertex {v} out of range")));
        }
        Ok(())
    }

    /// `D = α S N_h` (size `3n × 3h`).
    pub fn actuation(&self, ops: &SystemOperators) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(ops.dim(), 3 * self.vertices.len());
        for (h, &v) in self.vertices.iter().enumerate() {
            for k in 0..3 {
                d[(3 * v + k, 3 * h + k)] = self.alpha * ops.mass()[3 * v + k];
            }
        }
        d
    }
}

pub fn handle_prior(
    ops: &SystemOperators,
    handles: &HandleSet,
    actuation_cov: Option<DMatrix<f64>>,
    actuation_mean: Option<DVector<f64>>,
) -> Result<ForcePrior> {
    handles.validate(ops.num_vertices())?;
    ForcePrior::low_rank(handles.actuation(ops), actuation_cov, actuation_mean, "handle")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContactFrame {
    /// Patch weight per vertex (size `n`), zero away from the surface.
    pub weights: Vec<f64>,
    pub normal: Vec3,
    pub tangent: Vec3,
    pub bitangent: Vec3,
}

impl ContactFrame {
    /// Completes `normal` to a right-handed orthonormal frame.
    pub fn from_normal(weights: Vec<f64>, normal: Vec3) -> Self {
        let n = normal.normalize();
        let helper = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
        let t = (helper - n * n.dot(&helper)).normalize();
        let r = n.cross(&t);
        Self {
            weights,
            normal: n,
            tangent: t,
            bitangent: r,
        }
    }

    /// Smooth bump `1 - (d/R)²` over surface vertices within `radius`.
    pub fn spherical_patch(mesh: &TetMesh, center: &Vec3, radius: f64, normal: Vec3) -> Self {
        let on_surface = mesh.is_surface_vertex_mask();
        let weights = mesh
            .vertices()
            .iter()
            .zip(&on_surface)
            .map(|(p, &s)| {
                let d2 = (p - center).norm_squared() / (radius * radius);
                if s && d2 < 1.0 {
                    1.0 - d2
                } else {
                    0.0
                }
            })
            .collect();
        Self::from_normal(weights, normal)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ContactPatchSet {
    pub frames: Vec<ContactFrame>,
    /// Rescale each frame's weights to sum to one.
    pub normalize: bool,
}

pub fn contact_prior(
    mesh: &TetMesh,
    ops: &SystemOperators,
    patches: &ContactPatchSet,
    actuation_cov: Option<DMatrix<f64>>,
    actuation_mean: Option<DVector<f64>>,
) -> Result<ForcePrior> {
    let n = mesh.num_vertices();
    let on_surface = mesh.is_surface_vertex_mask();
    let mut d = DMatrix::zeros(3 * n, 3 * patches.frames.len());
    for (j, frame) in patches.frames.iter().enumerate() {
        let basis = [frame.normal, frame.tangent, frame.bitangent];
        for a in 0..3 {
            for b in 0..3 {
                let expect = if a == b { 1.0 } else { 0.0 };
                if (basis[a].dot(&basis[b]) - expect).abs() > 1e-10 {
                    return Err(Error::invalid(format!("contact frame {j} is not orthonormal")));
                }
            }
        }
        if frame.weights.len() != n {
            return Err(Error::invalid(format!("contact frame {j} weights must have {n} entries")));
        }
        if let Some(i) = (0..n).find(|&i| frame.weights[i] < 0.0 || (frame.weights[i] != 0.0 && !on_surface[i])) {
            return Err(Error::invalid(format!(
                "contact frame {j}: weight at vertex {i} is negative or off the surface"
            )));
        }
        let total: f64 = frame.weights.iter().sum();
        let norm = if patches.normalize && total > 0.0 { 1.0 / total } else { 1.0 };
        for i in 0..n {
            let w = frame.weights[i] * norm;
            if w == 0.0 {
                continue;
            }
            let scale = ops.vertex_mass(i) * w;
            for (c, axis) in basis.iter().enumerate() {
                for k in 0..3 {
                    d[(3 * i + k, 3 * j + c)] = scale * axis[k];
                }
            }
        }
    }
    ForcePrior::low_rank(d, actuation_cov, actuation_mean, "contact")
}

#[derive(Debug, Clone, PartialEq)]
pub struct PneumaticPocketSet {
    /// Surface vertices bounding each pocket.
    pub pockets: Vec<Vec<usize>>,
}

/// Column `j` holds `v_i n_i` (Voronoi area times area-averaged normal) on
/// the vertices of pocket `j`.
pub fn pneumatic_prior(
    mesh: &TetMesh,
    pockets: &PneumaticPocketSet,
    actuation_cov: Option<DMatrix<f64>>,
    actuation_mean: Option<DVector<f64>>,
) -> Result<ForcePrior> {
    let on_surface = mesh.is_surface_vertex_mask();
    let normals = mesh.vertex_normals();
    let areas = mesh.voronoi_areas();
    let mut d = DMatrix::zeros(mesh.num_dofs(), pockets.pockets.len());
    for (j, pocket) in pockets.pockets.iter().enumerate() {
        for &i in pocket {
            if i >= mesh.num_vertices() || !on_surface[i] {
                return Err(Error::invalid(format!("pocket {j}: vertex {i} is not on the surface")));
            }
            for k in 0..3 {
                d[(3 * i + k, j)] = areas[i] * normals[i][k];
            }
        }
    }
    ForcePrior::low_rank(d, actuation_cov, actuation_mean, "pneumatic")
}

#[derive(Debug, Clone, PartialEq)]
pub struct MuscleFiberSet {
    pub elements: Vec<usize>,
    /// Unit fiber direction per active element.
    pub directions: Vec<Vec3>,
}

/// Column `j` is `-v_j (d_j d_jᵀ) : ∂F_j/∂U` at rest.
pub fn muscle_prior(
    mesh: &TetMesh,
    jacobians: &[ElementJacobian],
    fibers: &MuscleFiberSet,
    actuation_cov: Option<DMatrix<f64>>,
    actuation_mean: Option<DVector<f64>>,
) -> Result<ForcePrior> {
    if fibers.elements.len() != fibers.directions.len() {
        return Err(Error::invalid("one fiber direction per active element is required"));
    }
    let mut d = DMatrix::zeros(mesh.num_dofs(), fibers.elements.len());
    for (j, (&t, dir)) in fibers.elements.iter().zip(&fibers.directions).enumerate() {
        let jac = jacobians.get(t).ok_or_else(|| {
            Error::invalid(format!("fiber {j} refers to element {t}, which does not exist"))
        })?;
        if (dir.norm() - 1.0).abs() > 1e-10 {
            return Err(Error::invalid(format!("fiber {j} direction is not unit length")));
        }
        let ddt = dir * dir.transpose();
        for (a, f) in jac.contract(&ddt).iter().enumerate() {
            let v = jac.vertices[a];
            for k in 0..3 {
                d[(3 * v + k, j)] = -jac.volume * f[k];
            }
        }
    }
    ForcePrior::low_rank(d, actuation_cov, actuation_mean, "muscle")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpringSet {
    pub edges: Vec<[usize; 2]>,
    pub rest_lengths: Vec<f64>,
}

impl SpringSet {
    /// Springs at their current (rest-pose) lengths.
    pub fn at_rest(mesh: &TetMesh, edges: Vec<[usize; 2]>) -> Self {
        let rest_lengths = edges
            .iter()
            .map(|[a, b]| (mesh.vertices()[*b] - mesh.vertices()[*a]).norm())
            .collect();
        Self { edges, rest_lengths }
    }
}

/// Edge-length Jacobian transposed, `D = (∂l/∂U)ᵀ`.
pub fn edge_length_jacobian(mesh: &TetMesh, springs: &SpringSet) -> Result<DMatrix<f64>> {
    if springs.edges.len() != springs.rest_lengths.len() {
        return Err(Error::invalid("one rest length per spring is required"));
    }
    let mut d = DMatrix::zeros(mesh.num_dofs(), springs.edges.len());
    for (e, &[a, b]) in springs.edges.iter().enumerate() {
        if a == b || a >= mesh.num_vertices() || b >= mesh.num_vertices() {
            return Err(Error::invalid(format!("spring {e} has invalid endpoints ({a}, {b})")));
        }
        if !(springs.rest_lengths[e] > 0.0) {
            return Err(Error::invalid(format!("spring {e} rest length must be positive")));
        }
        let edge = mesh.vertices()[b] - mesh.vertices()[a];
        let len = edge.norm();
        if len == 0.0 {
            return Err(Error::invalid(format!("spring {e} has zero length")));
        }
        let dir = edge / len;
        for k in 0..3 {
            d[(3 * a + k, e)] = -dir[k];
            d[(3 * b + k, e)] = dir[k];
        }
    }
    Ok(d)
}

pub fn spring_prior(
    mesh: &TetMesh,
    springs: &SpringSet,
    actuation_cov: Option<DMatrix<f64>>,
    actuation_mean: Option<DVector<f64>>,
) -> Result<ForcePrior> {
    ForcePrior::low_rank(edge_length_jacobian(mesh, springs)?, actuation_cov, actuation_mean, "spring")
}
