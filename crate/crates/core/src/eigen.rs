//! Dense and iterative eigen helpers shared by the subspace builders.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationSettings {
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Extra block columns beyond the requested count.
    pub oversampling: usize,
    pub seed: u64,
}

impl Default for IterationSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 300,
            oversampling: 8,
            seed: 0x5eed_f04c_e0d0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EigenPairs {
    /// Descending.
    pub values: DVector<f64>,
    /// Orthonormal columns.
    pub vectors: DMatrix<f64>,
    pub iterations: usize,
    /// `‖C x_j − θ_j x_j‖` per returned pair.
    pub residuals: Vec<f64>,
}

/// Thin SVD with singular values sorted descending. Wide inputs are padded
/// with zero rows so `V` is always square.
pub fn sorted_svd(a: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let (rows, cols) = a.shape();
    let padded;
    let a = if rows < cols {
        padded = a.clone().resize_vertically(cols, 0.0);
        &padded
    } else {
        a
    };
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("left vectors requested");
    let vt = svd.v_t.expect("right vectors requested");
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]).then(i.cmp(&j)));
    let u = DMatrix::from_fn(rows, order.len(), |r, c| u[(r, order[c])]);
    let v = DMatrix::from_fn(vt.ncols(), order.len(), |r, c| vt[(order[c], r)]);
    let s = DVector::from_iterator(order.len(), order.iter().map(|&i| s[i]));
    (u, s, v)
}

/// Symmetric eigendecomposition with eigenvalues sorted descending.
pub fn symmetric_eigen_desc(a: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
    let values = DVector::from_iterator(order.len(), order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = DMatrix::from_fn(a.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Orthonormal basis of the column space (Householder thin Q).
pub fn orthonormalize(a: DMatrix<f64>) -> DMatrix<f64> {
    a.qr().q()
}

/// Seeded Gaussian block with rows in `mask` zeroed.
pub fn random_block(rows: usize, cols: usize, seed: u64, zero_rows: &[bool]) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = DMatrix::zeros(rows, cols);
    for c in 0..cols {
        for r in 0..rows {
            let v: f64 = rng.sample(StandardNormal);
            if !zero_rows.get(r).copied().unwrap_or(false) {
                x[(r, c)] = v;
            }
        }
    }
    x
}

/// Top-`m` eigenpairs of `C = Gᵀ G` by block subspace iteration.
///
/// `g` maps a block in the domain of `C` to `G X`; `gt` applies `Gᵀ`.
/// Ritz pairs come from the SVD of `G Q`, which keeps small eigenvalues
/// accurate relative to the largest.
pub fn gram_top_eigenpairs<G, Gt>(
    start: DMatrix<f64>,
    m: usize,
    free_dims: usize,
    settings: &IterationSettings,
    g: G,
    gt: Gt,
) -> Result<EigenPairs>
where
    G: Fn(&DMatrix<f64>) -> DMatrix<f64>,
    Gt: Fn(&DMatrix<f64>) -> DMatrix<f64>,
{
    let p = start.ncols();
    if m == 0 || m > p || p > free_dims.max(m) {
        return Err(Error::invalid(format!(
            "block of {p} columns cannot deliver {m} pairs in {free_dims} free dimensions"
        )));
    }
    let complete = p == free_dims;
    let mut q = orthonormalize(start);
    let mut worst = f64::INFINITY;
    for it in 1..=settings.max_iterations {
        let w = g(&q);
        let (_, s, v) = sorted_svd(&w);
        let x = &q * &v;
        let y = gt(&(w * &v));
        let theta: Vec<f64> = s.iter().map(|x| x * x).collect();
        if !(theta[0] > 0.0) || !theta[0].is_finite() {
            return Err(Error::invalid("covariance operator vanishes on the start block"));
        }
        // Residuals are judged in singular-value form, ‖Gᵀu_j − s_j x_j‖,
        // whose rounding noise scales with s_1 rather than θ_1.
        let floor = s[0] * 1e-13f64.max(8.0 * f64::EPSILON * (q.nrows() as f64).sqrt());
        let mut residuals = Vec::with_capacity(m);
        let mut converged = true;
        worst = 0.0f64;
        for j in 0..m {
            let r = (y.column(j) - x.column(j) * theta[j]).norm();
            residuals.push(r);
            let scaled = r / s[j].max(f64::MIN_POSITIVE);
            worst = worst.max(scaled / s[j].max(floor));
            if scaled > settings.tolerance * s[j] + floor {
                converged = false;
            }
        }
        if converged || complete {
            return Ok(EigenPairs {
                values: DVector::from_iterator(m, theta.into_iter().take(m)),
                vectors: x.columns(0, m).into_owned(),
                iterations: it,
                residuals,
            });
        }
        q = orthonormalize(y);
    }
    Err(Error::NoConvergence {
        iterations: settings.max_iterations,
        residual: worst,
    })
}
