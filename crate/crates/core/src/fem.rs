//! Linear tetrahedral FEM: lumped mass, rest-state linear elasticity
//! Hessian and per-element deformation-gradient Jacobians.

use nalgebra::{Matrix3, SMatrix};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mesh::{edge_matrix, TetMesh, Vec3};
use crate::sparse::{CsrMatrix, TripletBuilder};

/// A per-element scalar, either uniform or one value per tet.
#[derive(Debug, Clone, PartialEq)]
pub enum ElementField {
    Uniform(f64),
    PerElement(Vec<f64>),
}

impl ElementField {
    pub fn at(&self, t: usize) -> f64 {
        match self {
            ElementField::Uniform(v) => *v,
            ElementField::PerElement(v) => v[t],
        }
    }

    fn check(&self, name: &str, tets: usize) -> Result<()> {
        let ok = match self {
            ElementField::Uniform(v) => *v > 0.0 && v.is_finite(),
            ElementField::PerElement(v) => {
                if v.len() != tets {
                    return Err(Error::invalid(format!(
                        "{name} has {} entries for {tets} elements",
                        v.len()
                    )));
                }
                v.iter().all(|x| *x > 0.0 && x.is_finite())
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("{name} must be positive and finite")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaterialParams {
    /// Pa
    pub youngs_modulus: ElementField,
    pub poisson_ratio: f64,
    /// kg/m³
    pub density: ElementField,
}

impl MaterialParams {
    pub fn uniform(youngs_modulus: f64, poisson_ratio: f64, density: f64) -> Self {
        Self {
            youngs_modulus: ElementField::Uniform(youngs_modulus),
            poisson_ratio,
            density: ElementField::Uniform(density),
        }
    }

    pub fn validate(&self, mesh: &TetMesh) -> Result<()> {
        self.youngs_modulus.check("youngs_modulus", mesh.num_tets())?;
        self.density.check("density", mesh.num_tets())?;
        if !(self.poisson_ratio > -1.0 && self.poisson_ratio < 0.5) {
            return Err(Error::invalid(format!(
                "poisson_ratio {} outside (-1, 0.5)",
                self.poisson_ratio
            )));
        }
        Ok(())
    }

    /// Lamé parameters `(mu, lambda)` of element `t`.
    pub fn lame(&self, t: usize) -> (f64, f64) {
        let e = self.youngs_modulus.at(t);
        let nu = self.poisson_ratio;
        (
            e / (2.0 * (1.0 + nu)),
            e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu)),
        )
    }
}

/// Lumped diagonal mass (size `3n`): each tet hands a quarter of its mass to
/// each of its vertices.
pub fn assemble_mass(mesh: &TetMesh, mat: &MaterialParams) -> Result<Vec<f64>> {
    mat.validate(mesh)?;
    let mut vertex_mass = vec![0.0; mesh.num_vertices()];
    for (t, tet) in mesh.tets().iter().enumerate() {
        let share = mat.density.at(t) * mesh.tet_volume(t) / 4.0;
        for &v in tet {
            vertex_mass[v] += share;
        }
    }
    Ok(vertex_mass.iter().flat_map(|&m| [m, m, m]).collect())
}

/// Shape-function gradients of a linear tet, one per vertex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementJacobian {
    pub vertices: [usize; 4],
    pub gradients: [Vec3; 4],
    pub volume: f64,
}

impl ElementJacobian {
    pub fn new(mesh: &TetMesh, t: usize) -> Result<Self> {
        let tet = mesh.tets()[t];
        let dm = edge_matrix(mesh.vertices(), &tet);
        let volume = dm.determinant() / 6.0;
        let inv = dm
            .try_inverse()
            .filter(|_| volume > 0.0)
            .ok_or_else(|| Error::InvertedElements(vec![t]))?;
        // rows of Dm⁻¹ are the gradients of the barycentric coordinates 1..3
        let g1 = inv.row(0).transpose();
        let g2 = inv.row(1).transpose();
        let g3 = inv.row(2).transpose();
        Ok(Self {
            vertices: tet,
            gradients: [-(g1 + g2 + g3), g1, g2, g3],
            volume,
        })
    }

    /// `F - I` for the displacement field `u` (flattened, size `3n`).
    pub fn displacement_gradient(&self, u: &[f64]) -> Matrix3<f64> {
        let mut g = Matrix3::zeros();
        for (a, &v) in self.vertices.iter().enumerate() {
            let ua = Vec3::new(u[3 * v], u[3 * v + 1], u[3 * v + 2]);
            g += ua * self.gradients[a].transpose();
        }
        g
    }

    pub fn deformation_gradient(&self, u: &[f64]) -> Matrix3<f64> {
        Matrix3::identity() + self.displacement_gradient(u)
    }

    /// Contracts a stress-like tensor with `∂F/∂U`: returns the 4 nodal
    /// vectors `P ∇N_a`.
    pub fn contract(&self, p: &Matrix3<f64>) -> [Vec3; 4] {
        self.gradients.map(|g| p * g)
    }
}

pub fn element_jacobians(mesh: &TetMesh) -> Result<Vec<ElementJacobian>> {
    (0..mesh.num_tets())
        .map(|t| ElementJacobian::new(mesh, t))
        .collect()
}

type Block12 = SMatrix<f64, 12, 12>;

/// `v [mu (δ_ik ∇N_a·∇N_b + ∂_k N_a ∂_i N_b) + lambda ∂_i N_a ∂_k N_b]`
fn element_stiffness(jac: &ElementJacobian, mu: f64, lambda: f64) -> Block12 {
    let mut k = Block12::zeros();
    for a in 0..4 {
        let ga = jac.gradients[a];
        for b in 0..4 {
            let gb = jac.gradients[b];
            let dot = ga.dot(&gb);
            for i in 0..3 {
                for kk in 0..3 {
                    let mut v = mu * ga[kk] * gb[i] + lambda * ga[i] * gb[kk];
                    if i == kk {
                        v += mu * dot;
                    }
                    k[(3 * a + i, 3 * b + kk)] = jac.volume * v;
                }
            }
        }
    }
    k
}

/// Unconstrained rest-state Hessian of linear isotropic elasticity.
pub fn assemble_stiffness(mesh: &TetMesh, mat: &MaterialParams) -> Result<CsrMatrix> {
    mat.validate(mesh)?;
    let jacobians = element_jacobians(mesh)?;
    let blocks: Vec<Block12> = jacobians
        .par_iter()
        .enumerate()
        .map(|(t, jac)| {
            let (mu, lambda) = mat.lame(t);
            element_stiffness(jac, mu, lambda)
        })
        .collect();
    let n = mesh.num_dofs();
    let mut b = TripletBuilder::with_capacity(n, 144 * blocks.len());
    for (jac, k) in jacobians.iter().zip(&blocks) {
        for a in 0..4 {
            for bb in 0..4 {
                for i in 0..3 {
                    for kk in 0..3 {
                        b.push(
                            3 * jac.vertices[a] + i,
                            3 * jac.vertices[bb] + kk,
                            k[(3 * a + i, 3 * bb + kk)],
                        );
                    }
                }
            }
        }
    }
    Ok(b.build())
}

/// Default regularization weight for free-floating bodies:
/// `1e-4 · mean diag(H) / mean diag(M)`.
pub fn default_regularization(stiffness: &CsrMatrix, mass: &[f64]) -> f64 {
    let mean_h = stiffness.diagonal().iter().sum::<f64>() / stiffness.dim() as f64;
    let mean_m = mass.iter().sum::<f64>() / mass.len() as f64;
    1e-4 * mean_h / mean_m
}

/// Per-coordinate pin mask from pinned vertex ids.
pub fn pinned_dofs(num_vertices: usize, pins: &[usize]) -> Result<Vec<bool>> {
    let mut mask = vec![false; 3 * num_vertices];
    for &p in pins {
        if p >= num_vertices {
            return Err(Error::invalid(format!(
                "pinned vertex {p} out of range ({num_vertices} vertices)"
            )));
        }
        mask[3 * p..3 * p + 3].fill(true);
    }
    Ok(mask)
}

/// Hessian with constraints applied: pinned rows and columns replaced by the
/// identity, or `H + εM` when nothing is pinned.
pub fn assemble_hessian(
    mesh: &TetMesh,
    mat: &MaterialParams,
    pins: &[usize],
    epsilon: f64,
) -> Result<CsrMatrix> {
    let k = assemble_stiffness(mesh, mat)?;
    if pins.is_empty() {
        if epsilon == 0.0 {
            return Ok(k);
        }
        let m = assemble_mass(mesh, mat)?;
        return Ok(k.add_diagonal(epsilon, &m));
    }
    let mask = pinned_dofs(mesh.num_vertices(), pins)?;
    Ok(k.with_identity_rows(&mask))
}
