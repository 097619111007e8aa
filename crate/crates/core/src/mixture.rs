//! Gaussian-mixture force priors and Bayes-rule component selection.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::operators::SystemOperators;
use crate::priors::{Covariance, ForcePrior};
use crate::subspace::{build, BuildSettings, Subspace};

/// Largest observation support (in vertices) scored by default.
pub const DEFAULT_SUPPORT_LIMIT: usize = 1024;
const CACHE_CAPACITY: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct ForceObservation {
    pub support: Vec<usize>,
    /// Forces on the support, three per vertex in support order.
    pub values: DVector<f64>,
}

impl ForceObservation {
    pub fn new(support: Vec<usize>, values: DVector<f64>) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::invalid("observation support is empty"));
        }
        if values.len() != 3 * support.len() {
            return Err(Error::invalid(format!(
                "{} values for {} support vertices",
                values.len(),
                support.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("observed forces must be finite"));
        }
        let mut sorted = support.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != support.len() {
            return Err(Error::invalid("observation support has repeated vertices"));
        }
        Ok(Self { support, values })
    }

    /// Reads the nonzero-support part of a full force vector.
    pub fn from_full(f: &DVector<f64>, support: Vec<usize>) -> Result<Self> {
        let values = DVector::from_iterator(
            3 * support.len(),
            support.iter().flat_map(|&v| (0..3).map(move |k| 3 * v + k)).map(|i| f[i]),
        );
        Self::new(support, values)
    }

    pub fn coordinates(&self) -> Vec<usize> {
        self.support.iter().flat_map(|&v| (0..3).map(move |k| 3 * v + k)).collect()
    }
}

/// `μ_F = Σ π_k μ_k`, `Σ_F = D + W Wᵀ` with the diagonal parts pooled in `D`
/// and the factors `√π_k L_k`, `√π_k (μ_k − μ_F)` stacked in `W`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureMoments {
    pub mean: DVector<f64>,
    pub diagonal: DVector<f64>,
    pub factor: DMatrix<f64>,
}

impl MixtureMoments {
    pub fn dense_covariance(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.diagonal) + &self.factor * self.factor.transpose()
    }

    pub fn apply_covariance(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = &self.factor * (self.factor.transpose() * x);
        for i in 0..x.nrows() {
            for j in 0..x.ncols() {
                out[(i, j)] += self.diagonal[i] * x[(i, j)];
            }
        }
        out
    }
}

#[derive(Debug)]
struct Marginal {
    mean: DVector<f64>,
    factor: Cholesky<f64, Dyn>,
    log_det: f64,
}

#[derive(Debug)]
pub struct MixtureModel {
    components: Vec<ForcePrior>,
    weights: Vec<f64>,
    subspaces: Vec<Subspace>,
    support_limit: usize,
    cache: RwLock<HashMap<(usize, Vec<usize>), Arc<Marginal>>>,
}

impl MixtureModel {
    /// `weights` are normalized; any positive rescaling gives the same model.
    pub fn new(components: Vec<ForcePrior>, weights: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::invalid("a mixture needs at least one component"));
        }
        if weights.len() != components.len() {
            return Err(Error::invalid(format!(
                "{} weights for {} components",
                weights.len(),
                components.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid("mixture weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::invalid("mixture weights sum to zero"));
        }
        let dim = components[0].dim();
        if components.iter().any(|c| c.dim() != dim) {
            return Err(Error::invalid("mixture components have different dimensions"));
        }
        Ok(Self {
            components,
            weights: weights.iter().map(|w| w / total).collect(),
            subspaces: Vec::new(),
            support_limit: DEFAULT_SUPPORT_LIMIT,
            cache: RwLock::new(HashMap::new()),
        })
    }

    pub fn with_support_limit(mut self, vertices: usize) -> Self {
        self.support_limit = vertices;
        self
    }

    /// Builds one subspace per component.
    pub fn build_subspaces(&mut self, ops: &SystemOperators, m: usize, settings: &BuildSettings) -> Result<()> {
        self.subspaces = self
            .components
            .iter()
            .map(|c| build(ops, c, m, settings))
            .collect::<Result<_>>()?;
        Ok(())
    }

    pub fn with_subspaces(mut self, subspaces: Vec<Subspace>) -> Result<Self> {
        if subspaces.len() != self.components.len() {
            return Err(Error::invalid("one subspace per component is required"));
        }
        self.subspaces = subspaces;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn components(&self) -> &[ForcePrior] {
        &self.components
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn subspaces(&self) -> &[Subspace] {
        &self.subspaces
    }

    pub fn labels(&self) -> Vec<String> {
        self.components.iter().map(|c| c.label.clone()).collect()
    }

    pub fn moments(&self) -> MixtureMoments {
        let dim = self.components[0].dim();
        let mut mean = DVector::zeros(dim);
        for (c, w) in self.components.iter().zip(&self.weights) {
            mean += &c.mean * *w;
        }
        let mut diagonal = DVector::zeros(dim);
        let mut cols: Vec<DVector<f64>> = Vec::new();
        for (c, &w) in self.components.iter().zip(&self.weights) {
            match &c.covariance {
                Covariance::Diagonal(v) => diagonal += v * w,
                Covariance::LowRank { factor, .. } => {
                    cols.extend(factor.column_iter().map(|col| col * w.sqrt()));
                }
            }
            if self.components.len() > 1 {
                let d = &c.mean - &mean;
                if d.iter().any(|x| *x != 0.0) {
                    cols.push(d * w.sqrt());
                }
            }
        }
        let factor = if cols.is_empty() {
            DMatrix::zeros(dim, 0)
        } else {
            DMatrix::from_columns(&cols)
        };
        MixtureMoments { mean, diagonal, factor }
    }

    fn marginal(&self, k: usize, coords: &[usize]) -> Result<Arc<Marginal>> {
        let key = (k, coords.to_vec());
        if let Some(m) = self.cache.read().expect("cache lock").get(&key) {
            return Ok(m.clone());
        }
        let prior = &self.components[k];
        let (mean, mut cov) = prior.marginal(coords);
        let s = coords.len() as f64;
        let mut ridge = 1e-8 * cov.trace() / s;
        if !(ridge > 0.0) {
            // nothing observed on this support: fall back to the prior's
            // average variance so the score is still defined
            ridge = 1e-8 * prior.trace() / prior.dim() as f64;
        }
        for i in 0..cov.nrows() {
            cov[(i, i)] += ridge;
        }
        let factor = cov.cholesky().ok_or_else(|| {
            Error::NotPositiveSemidefinite(format!("marginal of component {k} is singular after ridge"))
        })?;
        let log_det = 2.0 * factor.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let entry = Arc::new(Marginal { mean, factor, log_det });
        let mut cache = self.cache.write().expect("cache lock");
        if cache.len() >= CACHE_CAPACITY {
            cache.clear();
        }
        cache.insert(key, entry.clone());
        Ok(entry)
    }

    /// `−½ rᵀΣ_k⁻¹r − ½ log det Σ_k + log π_k` on the observed coordinates.
    pub fn log_posterior(&self, obs: &ForceObservation) -> Result<Vec<f64>> {
        if obs.support.len() > self.support_limit {
            return Err(Error::SizeCap {
                size: obs.support.len(),
                limit: self.support_limit,
            });
        }
        let dim = self.components[0].dim();
        if obs.support.iter().any(|&v| 3 * v + 2 >= dim) {
            return Err(Error::invalid("observation support is outside the mesh"));
        }
        let coords = obs.coordinates();
        (0..self.components.len())
            .map(|k| {
                let m = self.marginal(k, &coords)?;
                let r = &obs.values - &m.mean;
                let quad = r.dot(&m.factor.solve(&r));
                Ok(-0.5 * quad - 0.5 * m.log_det + self.weights[k].ln())
            })
            .collect()
    }

    /// Highest-scoring component (lowest index on ties) and its subspace.
    pub fn select_subspace(&self, obs: &ForceObservation) -> Result<(usize, &Subspace)> {
        let k = argmax(&self.log_posterior(obs)?);
        let sub = self
            .subspaces
            .get(k)
            .ok_or_else(|| Error::invalid("mixture subspaces have not been built"))?;
        Ok((k, sub))
    }
}

/// First index of the maximum; NaN never wins.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] || scores[best].is_nan() {
            best = i;
        }
    }
    best
}

/// Switches only when a challenger beats the incumbent by `margin` nats for
/// `window` consecutive observations.
#[derive(Debug, Clone, PartialEq)]
pub struct HysteresisSelector {
    pub margin: f64,
    pub window: usize,
    pub enabled: bool,
    active: usize,
    challenger: Option<usize>,
    streak: usize,
}

impl Default for HysteresisSelector {
    fn default() -> Self {
        Self::new(2.0, 3, true)
    }
}

impl HysteresisSelector {
    pub fn new(margin: f64, window: usize, enabled: bool) -> Self {
        Self {
            margin,
            window: window.max(1),
            enabled,
            active: 0,
            challenger: None,
            streak: 0,
        }
    }

    pub fn active(&self) -> usize {
        self.active
    }

    pub fn reset(&mut self, active: usize) {
        self.active = active;
        self.challenger = None;
        self.streak = 0;
    }

    /// Feeds one set of scores; returns the new index when a switch happens.
    pub fn observe(&mut self, scores: &[f64]) -> Option<usize> {
        let best = argmax(scores);
        if best == self.active {
            self.challenger = None;
            self.streak = 0;
            return None;
        }
        if !self.enabled {
            self.reset(best);
            return Some(best);
        }
        if scores[best] - scores[self.active] < self.margin {
            self.challenger = None;
            self.streak = 0;
            return None;
        }
        if self.challenger == Some(best) {
            self.streak += 1;
        } else {
            self.challenger = Some(best);
            self.streak = 1;
        }
        if self.streak >= self.window {
            self.reset(best);
            Some(best)
        } else {
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::MaterialParams;
    use crate::mesh::{shapes, Vec3};
    use crate::operators::Regularization;
    use crate::priors::{handle_prior, HandleSet};
    use crate::subspace::build_lowrank;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn diag(dim: usize, mean: f64, var: impl Fn(usize) -> f64, label: &str) -> ForcePrior {
        ForcePrior::diagonal(DVector::from_element(dim, mean), DVector::from_fn(dim, |i, _| var(i)), label).unwrap()
    }

    #[test]
    fn single_component_moments() {
        let p = diag(6, 0.5, |i| 1.0 + i as f64, "a");
        let mix = MixtureModel::new(vec![p.clone()], vec![3.0]).unwrap();
        let m = mix.moments();
        assert_eq!(m.mean, p.mean);
        assert_eq!(m.dense_covariance(), p.dense_covariance());
        assert_eq!(mix.weights(), &[1.0]);
    }

    #[test]
    fn equal_zero_mean_components_average() {
        let a = diag(6, 0.0, |i| 1.0 + i as f64, "a");
        let b = ForcePrior::low_rank(DMatrix::from_fn(6, 2, |i, j| (i + 2 * j) as f64 * 0.1), None, None, "b").unwrap();
        let mix = MixtureModel::new(vec![a.clone(), b.clone()], vec![1.0, 1.0]).unwrap();
        let want = (a.dense_covariance() + b.dense_covariance()) * 0.5;
        assert!((mix.moments().dense_covariance() - want).amax() < 1e-14);
        let x = DMatrix::from_fn(6, 2, |i, j| (i as f64) - (j as f64));
        assert!((mix.moments().apply_covariance(&x) - mix.moments().dense_covariance() * &x).amax() < 1e-12);
    }

    #[test]
    fn moments_match_sampling() {
        let a = diag(4, 1.0, |i| 0.5 + 0.1 * i as f64, "a");
        let b = ForcePrior::low_rank(
            DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.5, 0.2, 0.0, 1.0, 0.3, 0.3]),
            None,
            Some(DVector::from_vec(vec![-2.0, 1.0])),
            "b",
        )
        .unwrap();
        let mix = MixtureModel::new(vec![a.clone(), b.clone()], vec![0.3, 0.7]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 100_000;
        let samples: Vec<DVector<f64>> = (0..n)
            .map(|_| if rng.random::<f64>() < 0.3 { a.sample(&mut rng) } else { b.sample(&mut rng) })
            .collect();
        let mean = samples.iter().fold(DVector::zeros(4), |acc, s| acc + s) / n as f64;
        let cov = samples.iter().fold(DMatrix::zeros(4, 4), |acc, s| acc + (s - &mean) * (s - &mean).transpose()) / n as f64;
        let m = mix.moments();
        let truth = m.dense_covariance();
        assert!((cov - &truth).norm() < 0.02 * truth.norm());
        assert!((mean - &m.mean).norm() < 0.02 * m.mean.norm().max(1.0));
    }

    #[test]
    fn mean_match_wins() {
        let comps: Vec<ForcePrior> = (0..3).map(|k| diag(9, k as f64, |_| 1.0, &format!("c{k}"))).collect();
        let mix = MixtureModel::new(comps, vec![1.0; 3]).unwrap();
        let obs = ForceObservation::new(vec![1, 2], DVector::from_element(6, 2.0)).unwrap();
        let scores = mix.log_posterior(&obs).unwrap();
        assert_eq!(argmax(&scores), 2);
        // shifting or rescaling π leaves the argmax alone
        let mix2 = MixtureModel::new(mix.components().to_vec(), vec![5.0; 3]).unwrap();
        assert_eq!(argmax(&mix2.log_posterior(&obs).unwrap()), 2);
        let shifted: Vec<f64> = scores.iter().map(|s| s + 100.0).collect();
        assert_eq!(argmax(&shifted), 2);
    }

    #[test]
    fn disjoint_support_wins() {
        let a = diag(12, 0.0, |i| if i < 6 { 1.0 } else { 0.0 }, "left");
        let b = diag(12, 0.0, |i| if i >= 6 { 1.0 } else { 0.0 }, "right");
        let mix = MixtureModel::new(vec![a, b], vec![0.5, 0.5]).unwrap();
        let obs = ForceObservation::new(vec![0], DVector::from_vec(vec![0.7, -0.3, 0.2])).unwrap();
        assert_eq!(argmax(&mix.log_posterior(&obs).unwrap()), 0);
        let obs = ForceObservation::new(vec![3], DVector::from_vec(vec![0.7, -0.3, 0.2])).unwrap();
        assert_eq!(argmax(&mix.log_posterior(&obs).unwrap()), 1);
    }

    #[test]
    fn scores_match_dense_gaussian() {
        let b = ForcePrior::low_rank(DMatrix::from_fn(9, 4, |i, j| ((i * 5 + j * 3) % 7) as f64 - 3.0), None, Some(DVector::from_vec(vec![0.1, 0.2, 0.0, -0.1])), "b").unwrap();
        let a = diag(9, 0.3, |i| 1.0 + 0.2 * i as f64, "a");
        let mix = MixtureModel::new(vec![a.clone(), b.clone()], vec![0.25, 0.75]).unwrap();
        let obs = ForceObservation::new(vec![2, 0], DVector::from_vec(vec![0.5, 1.0, -1.0, 0.2, 0.0, 0.3])).unwrap();
        let coords = obs.coordinates();
        let scores = mix.log_posterior(&obs).unwrap();
        for (k, p) in [a, b].iter().enumerate() {
            let full = p.dense_covariance();
            let mut cov = DMatrix::from_fn(6, 6, |i, j| full[(coords[i], coords[j])]);
            let ridge = 1e-8 * cov.trace() / 6.0;
            for i in 0..6 {
                cov[(i, i)] += ridge;
            }
            let r = &obs.values - DVector::from_fn(6, |i, _| p.mean[coords[i]]);
            let inv = cov.clone().try_inverse().unwrap();
            let want = -0.5 * r.dot(&(&inv * &r)) - 0.5 * cov.determinant().ln() + mix.weights()[k].ln();
            assert!((scores[k] - want).abs() < 1e-8 * want.abs().max(1.0), "{k}");
        }
        // cached second call is identical
        assert_eq!(mix.log_posterior(&obs).unwrap(), scores);
    }

    #[test]
    fn observation_validation() {
        assert!(ForceObservation::new(vec![], DVector::zeros(0)).is_err());
        assert!(ForceObservation::new(vec![1], DVector::zeros(2)).is_err());
        assert!(ForceObservation::new(vec![1, 1], DVector::zeros(6)).is_err());
        assert!(ForceObservation::new(vec![1], DVector::from_vec(vec![0.0, f64::NAN, 0.0])).is_err());
        let mix = MixtureModel::new(vec![diag(6, 0.0, |_| 1.0, "a")], vec![1.0]).unwrap().with_support_limit(1);
        let obs = ForceObservation::new(vec![0, 1], DVector::zeros(6)).unwrap();
        assert!(matches!(mix.log_posterior(&obs), Err(Error::SizeCap { .. })));
        assert!(MixtureModel::new(vec![diag(6, 0.0, |_| 1.0, "a")], vec![-1.0]).is_err());
        assert!(MixtureModel::new(vec![diag(6, 0.0, |_| 1.0, "a")], vec![0.0]).is_err());
    }

    #[test]
    fn hysteresis_requires_margin_and_window() {
        let mut sel = HysteresisSelector::default();
        assert_eq!(sel.observe(&[0.0, 1.0]), None); // below margin
        assert_eq!(sel.observe(&[0.0, 3.0]), None);
        assert_eq!(sel.observe(&[0.0, 3.0]), None);
        assert_eq!(sel.observe(&[0.0, 3.0]), Some(1));
        assert_eq!(sel.active(), 1);
        // an interruption restarts the count
        assert_eq!(sel.observe(&[3.0, 0.0]), None);
        assert_eq!(sel.observe(&[0.0, 0.0]), None);
        assert_eq!(sel.observe(&[3.0, 0.0]), None);
        assert_eq!(sel.observe(&[3.0, 0.0]), None);
        assert_eq!(sel.observe(&[3.0, 0.0]), Some(0));
        let mut raw = HysteresisSelector::new(2.0, 3, false);
        assert_eq!(raw.observe(&[0.0, 0.1]), Some(1));
    }

    #[test]
    fn alternating_handles_are_tracked() {
        let mesh = shapes::bar([10, 2, 1], [1.0, 0.2, 0.1]);
        let mid = mesh.select_vertices(|p| (p.x - 0.5).abs() < 1e-9);
        let ops = SystemOperators::assemble(&mesh, &MaterialParams::uniform(1e5, 0.3, 1000.0), &mid, Regularization::Auto).unwrap();
        let left = mesh.nearest_vertex(&Vec3::new(0.0, 0.2, 0.1));
        let right = mesh.nearest_vertex(&Vec3::new(1.0, 0.2, 0.1));
        let pa = handle_prior(&ops, &HandleSet::new(vec![left], 5.0), None, None).unwrap();
        let pb = handle_prior(&ops, &HandleSet::new(vec![right], 5.0), None, None).unwrap();
        let settings = BuildSettings::default();
        let subs = vec![build_lowrank(&ops, &pa, 3, &settings).unwrap(), build_lowrank(&ops, &pb, 3, &settings).unwrap()];
        let mix = MixtureModel::new(vec![pa, pb], vec![0.5, 0.5]).unwrap().with_subspaces(subs).unwrap();
        let mut sel = HysteresisSelector::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut expected = 0;
        for phase in 0..6 {
            let (v, want) = if phase % 2 == 0 { (right, 1) } else { (left, 0) };
            let mut switched_at = None;
            for step in 0..5 {
                let mut f = DVector::zeros(ops.dim());
                for k in 0..3 {
                    f[3 * v + k] = 5.0 * ops.vertex_mass(v) * rng.random_range(-1.0..1.0);
                }
                let obs = ForceObservation::from_full(&f, vec![left, right]).unwrap();
                let (k, sub) = mix.select_subspace(&obs).unwrap();
                assert_eq!(k, want);
                assert_eq!(sub, &mix.subspaces()[want]);
                if let Some(n) = sel.observe(&mix.log_posterior(&obs).unwrap()) {
                    expected = n;
                    switched_at.get_or_insert(step);
                }
            }
            assert_eq!(expected, want);
            assert_eq!(switched_at, Some(2), "phase {phase}");
        }
    }
}
