//! Reduced statics and implicit-Euler dynamics inside a subspace.

use std::time::{Duration, Instant};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::fem::{assemble_mass, assemble_stiffness, pinned_dofs, MaterialParams};
use crate::mesh::{TetMesh, Vec3};
use crate::operators::SystemOperators;
use crate::sparse::SparseCholesky;
use crate::subspace::Subspace;

/// Subspace sizes above this no longer count as reduced.
pub const DEFAULT_SIZE_CAP: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedState {
    pub z: DVector<f64>,
    pub z_dot: DVector<f64>,
    pub time: f64,
}

impl ReducedState {
    pub fn rest(m: usize) -> Self {
        Self {
            z: DVector::zeros(m),
            z_dot: DVector::zeros(m),
            time: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.z.iter().chain(self.z_dot.iter()).all(|x| x.is_finite()) && self.time.is_finite()
    }

    /// Carries the state into another subspace by reconstructing the full
    /// displacement and velocity and projecting them back.
    pub fn transfer(&self, from: &Subspace, to: &Subspace, mass: &[f64]) -> Self {
        let u = from.reconstruct(&self.z);
        let v = from.reconstruct_velocity(&self.z_dot);
        Self {
            z: to.project(mass, &u),
            z_dot: to.project_velocity(mass, &v),
            time: self.time,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExternalLoad {
    Full(DVector<f64>),
    /// `f = D a`
    Factored { d: DMatrix<f64>, a: DVector<f64> },
}

impl ExternalLoad {
    pub fn zero(dim: usize) -> Self {
        ExternalLoad::Full(DVector::zeros(dim))
    }

    /// Constant body force `M g`.
    pub fn gravity(ops: &SystemOperators, g: Vec3) -> Self {
        ExternalLoad::Full(DVector::from_iterator(
            ops.dim(),
            ops.mass().iter().enumerate().map(|(i, m)| m * g[i % 3]),
        ))
    }

    pub fn dim(&self) -> usize {
        match self {
            ExternalLoad::Full(f) => f.len(),
            ExternalLoad::Factored { d, .. } => d.nrows(),
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            ExternalLoad::Full(f) => f.iter().all(|x| x.is_finite()),
            ExternalLoad::Factored { d, a } => d.iter().chain(a.iter()).all(|x| x.is_finite()),
        }
    }

    pub fn to_full(&self) -> DVector<f64> {
        match self {
            ExternalLoad::Full(f) => f.clone(),
            ExternalLoad::Factored { d, a } => d * a,
        }
    }

    /// `Bᵀ f`
    pub fn project(&self, basis: &DMatrix<f64>) -> DVector<f64> {
        match self {
            ExternalLoad::Full(f) => basis.tr_mul(f),
            ExternalLoad::Factored { d, a } => basis.tr_mul(d) * a,
        }
    }

    pub fn add(&self, other: &ExternalLoad) -> ExternalLoad {
        ExternalLoad::Full(self.to_full() + other.to_full())
    }
}

/// Runtime handle spring `f = α S N (A − Sᵀ u)` over `(vertex, target)`
/// pairs, with `u` the current full displacement.
pub fn handle_force(ops: &SystemOperators, alpha: f64, handles: &[(usize, Vec3)], u: &DVector<f64>) -> DVector<f64> {
    let mut f = DVector::zeros(ops.dim());
    for &(v, target) in handles {
        for k in 0..3 {
            let i = 3 * v + k;
            f[i] += alpha * ops.mass()[i] * (target[k] - u[i]);
        }
    }
    ops.constrain(f.as_mut_slice());
    f
}

/// `H_r = BᵀHB`, `M_r = I` and the Galerkin mean term `BᵀHμ_U`.
#[derive(Debug, Clone)]
pub struct ReducedOperators {
    pub stiffness: DMatrix<f64>,
    pub mean_force: DVector<f64>,
    stiffness_factor: Cholesky<f64, Dyn>,
}

impl ReducedOperators {
    pub fn new(ops: &SystemOperators, sub: &Subspace) -> Result<Self> {
        Self::with_cap(ops, sub, DEFAULT_SIZE_CAP)
    }

    pub fn with_cap(ops: &SystemOperators, sub: &Subspace, cap: usize) -> Result<Self> {
        if sub.dim() != ops.dim() {
            return Err(Error::invalid(format!(
                "subspace dimension {} does not match the system ({})",
                sub.dim(),
                ops.dim()
            )));
        }
        if sub.size() > cap {
            log::warn!("subspace has {} columns, above the reduced-size cap of {cap}", sub.size());
        }
        let stiffness = ops.hessian().project(sub.basis());
        let stiffness_factor = stiffness
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Factorization("reduced stiffness is not positive definite".into()))?;
        let mean_force = sub.basis().tr_mul(&ops.hessian().mul_dvec(sub.mean()));
        Ok(Self {
            stiffness,
            mean_force,
            stiffness_factor,
        })
    }

    pub fn size(&self) -> usize {
        self.stiffness.nrows()
    }
}

pub fn reduce_operators(ops: &SystemOperators, sub: &Subspace) -> Result<ReducedOperators> {
    ReducedOperators::new(ops, sub)
}

/// `z = H_r⁻¹ Bᵀ(f − Hμ_U)`
pub fn static_solve(red: &ReducedOperators, sub: &Subspace, load: &ExternalLoad) -> Result<ReducedState> {
    if !load.is_finite() || load.dim() != sub.dim() {
        return Err(Error::invalid("load must be finite and sized to the system"));
    }
    let rhs = load.project(sub.basis()) - &red.mean_force;
    Ok(ReducedState {
        z: red.stiffness_factor.solve(&rhs),
        z_dot: DVector::zeros(red.size()),
        time: 0.0,
    })
}

/// `‖u* − u_c‖²_M` between the full static solve and the reduced one.
pub fn reconstruction_error(sub: &Subspace, ops: &SystemOperators, load: &ExternalLoad) -> Result<f64> {
    let red = ReducedOperators::new(ops, sub)?;
    let full = ops.solve(&load.to_full());
    let reduced = sub.reconstruct(&static_solve(&red, sub, load)?.z);
    let d = full - reduced;
    Ok(ops.mass_norm_squared(d.as_slice()))
}

/// Elastic potential in reduced coordinates.
pub trait ReducedEnergy {
    fn energy(&self, z: &DVector<f64>) -> f64;
    fn gradient(&self, z: &DVector<f64>) -> DVector<f64>;
    fn hessian(&self, z: &DVector<f64>) -> DMatrix<f64>;
    /// Constant Hessian lets the step system be factored once.
    fn is_quadratic(&self) -> bool {
        false
    }
}

/// Linear elasticity `½ zᵀH_r z + zᵀ BᵀHμ_U`.
#[derive(Debug, Clone, Copy)]
pub struct QuadraticEnergy<'a> {
    pub red: &'a ReducedOperators,
}

impl ReducedEnergy for QuadraticEnergy<'_> {
    fn energy(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.red.stiffness * z)) + z.dot(&self.red.mean_force)
    }

    fn gradient(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.red.stiffness * z + &self.red.mean_force
    }

    fn hessian(&self, _z: &DVector<f64>) -> DMatrix<f64> {
        self.red.stiffness.clone()
    }

    fn is_quadratic(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSettings {
    pub h: f64,
    /// Rayleigh damping `a M_r + b H_r`.
    pub damping_mass: f64,
    pub damping_stiffness: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub armijo: f64,
    pub max_halvings: usize,
}

impl Default for StepSettings {
    fn default() -> Self {
        Self {
            h: 1.0 / 60.0,
            damping_mass: 0.0,
            damping_stiffness: 0.0,
            max_iterations: 10,
            tolerance: 1e-8,
            armijo: 1e-4,
            max_halvings: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub iterations: usize,
    pub gradient_norm: f64,
    pub converged: bool,
}

/// Implicit-Euler stepper with the step system factored up front when the
/// energy is quadratic.
pub struct Stepper<'a, E: ReducedEnergy> {
    energy: E,
    red: &'a ReducedOperators,
    settings: StepSettings,
    damping: DMatrix<f64>,
    factor: Option<Cholesky<f64, Dyn>>,
}

impl<'a> Stepper<'a, QuadraticEnergy<'a>> {
    pub fn quadratic(red: &'a ReducedOperators, settings: StepSettings) -> Result<Self> {
        Stepper::new(QuadraticEnergy { red }, red, settings)
    }
}

impl<'a, E: ReducedEnergy> Stepper<'a, E> {
    pub fn new(energy: E, red: &'a ReducedOperators, settings: StepSettings) -> Result<Self> {
        if !(settings.h > 0.0) {
            return Err(Error::invalid("time step must be positive"));
        }
        if settings.damping_mass < 0.0 || settings.damping_stiffness < 0.0 {
            return Err(Error::invalid("damping coefficients must be nonnegative"));
        }
        let m = red.size();
        let damping = DMatrix::identity(m, m) * settings.damping_mass + &red.stiffness * settings.damping_stiffness;
        let factor = if energy.is_quadratic() {
            let a = Self::system(&energy, red, &settings, &damping, &DVector::zeros(m));
            Some(a.cholesky().ok_or_else(|| Error::Factorization("step system is not positive definite".into()))?)
        } else {
            None
        };
        Ok(Self {
            energy,
            red,
            settings,
            damping,
            factor,
        })
    }

    fn system(energy: &E, red: &ReducedOperators, s: &StepSettings, damping: &DMatrix<f64>, z: &DVector<f64>) -> DMatrix<f64> {
        let m = red.size();
        DMatrix::identity(m, m) / (s.h * s.h) + damping / s.h + energy.hessian(z)
    }

    pub fn settings(&self) -> &StepSettings {
        &self.settings
    }

    /// Advances one step under the reduced load `f_r = Bᵀ f`.
    pub fn step(&self, state: &ReducedState, f_r: &DVector<f64>) -> Result<(ReducedState, StepReport)> {
        let h = self.settings.h;
        let z0 = &state.z;
        let predicted = z0 + &state.z_dot * h;
        let objective = |z: &DVector<f64>| {
            let dz = z - &predicted;
            let dn = z - z0;
            0.5 * dz.norm_squared() / (h * h) + 0.5 * dn.dot(&(&self.damping * &dn)) / h + self.energy.energy(z) - z.dot(f_r)
        };
        let gradient = |z: &DVector<f64>| {
            (z - &predicted) / (h * h) + &self.damping * (z - z0) / h + self.energy.gradient(z) - f_r
        };
        let mut z = z0.clone();
        let mut phi = objective(&z);
        let mut g = gradient(&z);
        let mut iterations = 0;
        let converged = |g: &DVector<f64>, phi: f64| g.norm() <= self.settings.tolerance * (1.0 + phi.abs());
        while iterations < self.settings.max_iterations && g.norm() > 0.0 && !(iterations > 0 && converged(&g, phi)) {
            let dir = match &self.factor {
                Some(f) => -f.solve(&g),
                None => -Self::system(&self.energy, self.red, &self.settings, &self.damping, &z)
                    .cholesky()
                    .ok_or(Error::LineSearch(iterations))?
                    .solve(&g),
            };
            let slope = g.dot(&dir);
            if !(slope < 0.0) {
                return Err(Error::LineSearch(iterations));
            }
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..=self.settings.max_halvings {
                let trial = &z + &dir * t;
                let p = objective(&trial);
                if p <= phi + self.settings.armijo * t * slope {
                    z = trial;
                    phi = p;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                return Err(Error::LineSearch(iterations));
            }
            g = gradient(&z);
            iterations += 1;
        }
        let z_dot = (&z - z0) / h;
        let report = StepReport {
            iterations,
            gradient_norm: g.norm(),
            converged: g.norm() == 0.0 || converged(&g, phi),
        };
        Ok((
            ReducedState {
                z,
                z_dot,
                time: state.time + h,
            },
            report,
        ))
    }
}

/// One implicit-Euler step with a freshly factored quadratic stepper.
pub fn dynamic_step(
    red: &ReducedOperators,
    sub: &Subspace,
    state: &ReducedState,
    load: &ExternalLoad,
    settings: &StepSettings,
) -> Result<(ReducedState, StepReport)> {
    if !load.is_finite() || load.dim() != sub.dim() {
        return Err(Error::invalid("load must be finite and sized to the system"));
    }
    Stepper::quadratic(red, *settings)?.step(state, &load.project(sub.basis()))
}

/// Timings of one full-space Newton step of linear elastodynamics.
#[derive(Debug, Clone, Copy)]
pub struct FullStepTiming {
    pub assemble: Duration,
    pub factor: Duration,
    pub solve: Duration,
    pub total: Duration,
}

/// Full-space implicit-Euler Newton step: assemble `M/h² + K` with pins,
/// factor it and solve. Returns the new displacement and velocity.
pub fn full_newton_step(
    mesh: &TetMesh,
    mat: &MaterialParams,
    pins: &[usize],
    u: &DVector<f64>,
    v: &DVector<f64>,
    f: &DVector<f64>,
    h: f64,
) -> Result<(DVector<f64>, DVector<f64>, FullStepTiming)> {
    let start = Instant::now();
    let mass = assemble_mass(mesh, mat)?;
    let stiffness = assemble_stiffness(mesh, mat)?;
    let mask = pinned_dofs(mesh.num_vertices(), pins)?;
    let inertia: Vec<f64> = mass.iter().map(|m| m / (h * h)).collect();
    let system = stiffness.add_diagonal(1.0, &inertia).with_identity_rows(&mask);
    let assembled = Instant::now();
    let factor = SparseCholesky::factor(&system)?;
    let factored = Instant::now();
    // gradient at u of the step objective, starting from the previous state
    let predicted = u + v * h;
    let ku = stiffness.mul_dvec(u);
    let mut g = DVector::from_iterator(u.len(), (0..u.len()).map(|i| inertia[i] * (u[i] - predicted[i]) + ku[i] - f[i]));
    for (gi, &p) in g.iter_mut().zip(&mask) {
        if p {
            *gi = 0.0;
        }
    }
    let du = -factor.solve(&g);
    let un = u + du;
    let vn = (&un - u) / h;
    let done = Instant::now();
    Ok((
        un,
        vn,
        FullStepTiming {
            assemble: assembled - start,
            factor: factored - assembled,
            solve: done - factored,
            total: done - start,
        },
    ))
}
