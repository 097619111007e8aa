use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fem::{
    assemble_mass, assemble_stiffness, default_regularization, pinned_dofs, MaterialParams,
};
use crate::mesh::TetMesh;
use crate::sparse::{CsrMatrix, SparseCholesky};

/// How free-floating (unpinned) bodies are made invertible.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Regularization {
    /// `1e-4 · mean diag(H) / mean diag(M)`
    #[default]
    Auto,
    Fixed(f64),
}

/// Lumped mass, constrained stiffness Hessian and its factorization.
#[derive(Debug)]
pub struct SystemOperators {
    mass: Vec<f64>,
    sqrt_mass: Vec<f64>,
    hessian: CsrMatrix,
    pinned: Vec<usize>,
    pinned_mask: Vec<bool>,
    regularization: f64,
    factor: SparseCholesky,
}

impl SystemOperators {
    pub fn assemble(
        mesh: &TetMesh,
        mat: &MaterialParams,
        pins: &[usize],
        regularization: Regularization,
    ) -> Result<Self> {
        let mass = assemble_mass(mesh, mat)?;
        let stiffness = assemble_stiffness(mesh, mat)?;
        let mut pins = pins.to_vec();
        pins.sort_unstable();
        pins.dedup();
        let mask = pinned_dofs(mesh.num_vertices(), &pins)?;
        let (hessian, eps) = if pins.is_empty() {
            let eps = match regularization {
                Regularization::Auto => default_regularization(&stiffness, &mass),
                Regularization::Fixed(e) => e,
            };
            if !(eps > 0.0) {
                return Err(Error::invalid(
                    "unpinned meshes need a positive regularization weight",
                ));
            }
            (stiffness.add_diagonal(eps, &mass), eps)
        } else {
            (stiffness.with_identity_rows(&mask), 0.0)
        };
        Self::from_parts(mass, hessian, pins, eps)
    }

    /// Builds from an already constrained Hessian (pinned rows must already
    /// be identity rows).
    pub fn from_parts(
        mass: Vec<f64>,
        hessian: CsrMatrix,
        pinned: Vec<usize>,
        regularization: f64,
    ) -> Result<Self> {
        let n = mass.len();
        if hessian.dim() != n || n % 3 != 0 {
            return Err(Error::invalid(format!(
                "mass has {n} entries, hessian is {0}x{0}",
                hessian.dim()
            )));
        }
        if mass.iter().any(|m| !(*m > 0.0)) {
            return Err(Error::invalid("lumped mass must be strictly positive"));
        }
        let pinned_mask = pinned_dofs(n / 3, &pinned)?;
        let factor = SparseCholesky::factor(&hessian)?;
        Ok(Self {
            sqrt_mass: mass.iter().map(|m| m.sqrt()).collect(),
            mass,
            hessian,
            pinned,
            pinned_mask,
            regularization,
            factor,
        })
    }

    pub fn dim(&self) -> usize {
        self.mass.len()
    }

    pub fn num_vertices(&self) -> usize {
        self.mass.len() / 3
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    /// Diagonal of `N = sqrt(M)`.
    pub fn sqrt_mass(&self) -> &[f64] {
        &self.sqrt_mass
    }

    /// Lumped per-vertex mass.
    pub fn vertex_mass(&self, v: usize) -> f64 {
        self.mass[3 * v]
    }

    pub fn hessian(&self) -> &CsrMatrix {
        &self.hessian
    }

    pub fn factor(&self) -> &SparseCholesky {
        &self.factor
    }

    pub fn pinned(&self) -> &[usize] {
        &self.pinned
    }

    pub fn pinned_mask(&self) -> &[bool] {
        &self.pinned_mask
    }

    pub fn regularization(&self) -> f64 {
        self.regularization
    }

    /// Zeroes pinned coordinates in place.
    pub fn constrain(&self, v: &mut [f64]) {
        for (x, &p) in v.iter_mut().zip(&self.pinned_mask) {
            if p {
                *x = 0.0;
            }
        }
    }

    pub fn constrain_columns(&self, m: &mut DMatrix<f64>) {
        for mut col in m.column_iter_mut() {
            self.constrain(col.as_mut_slice());
        }
    }

    /// `u = H⁻¹ f` with forces on pinned coordinates discarded, so pinned
    /// displacements are exactly zero.
    pub fn solve(&self, f: &DVector<f64>) -> DVector<f64> {
        let mut x = f.clone();
        self.constrain(x.as_mut_slice());
        self.factor.solve_in_place(x.as_mut_slice(), 1);
        x
    }

    pub fn solve_columns(&self, f: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = f.clone();
        self.constrain_columns(&mut x);
        self.factor.solve_columns(&x)
    }

    /// `‖x‖²_M`
    pub fn mass_norm_squared(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.mass).map(|(a, m)| a * a * m).sum()
    }

    /// Scales rows by `N = sqrt(M)`.
    pub fn scale_by_sqrt_mass(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x.clone();
        for (i, s) in self.sqrt_mass.iter().enumerate() {
            out.row_mut(i).scale_mut(*s);
        }
        out
    }

    /// Scales rows by `N⁻¹`.
    pub fn scale_by_inv_sqrt_mass(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x.clone();
        for (i, s) in self.sqrt_mass.iter().enumerate() {
            out.row_mut(i).scale_mut(1.0 / *s);
        }
        out
    }

    /// `Bᵀ M B`
    pub fn mass_gram(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let nb = self.scale_by_sqrt_mass(b);
        nb.transpose() * nb
    }
}
