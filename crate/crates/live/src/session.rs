//! Simulation state owned by the live loop. Everything here is
//! deterministic; timing and networking live in `server`.

use std::collections::BTreeMap;

use forcedual::mesh::{TetMesh, Vec3};
use forcedual::mixture::{ForceObservation, HysteresisSelector, MixtureModel};
use forcedual::operators::SystemOperators;
use forcedual::sim::{static_solve, ExternalLoad, ReducedOperators, ReducedState, StepSettings, Stepper};
use forcedual::subspace::Subspace;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::protocol::{FrameSnapshot, SurfaceTopology};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SessionError {
    #[error("vertex {0} does not exist")]
    InvalidVertex(u32),
    #[error("vertex {0} is pinned")]
    PinnedVertex(u32),
    #[error("vertex {0} has no handle assigned")]
    Unassigned(u32),
    #[error("target must be finite")]
    InvalidTarget,
    #[error("external load must be finite with one entry per degree of freedom")]
    InvalidLoad,
    #[error("{0}")]
    Numerical(String),
}

impl From<forcedual::Error> for SessionError {
    fn from(e: forcedual::Error) -> Self {
        SessionError::Numerical(e.to_string())
    }
}

/// Handle interaction. Targets are world-space positions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Event {
    Assign { vertex: u32, target: Vec3 },
    Move { vertex: u32, target: Vec3 },
    Release { vertex: u32 },
}

impl Event {
    pub fn name(&self) -> &'static str {
        match self {
            Event::Assign { .. } => "assign",
            Event::Move { .. } => "move",
            Event::Release { .. } => "release",
        }
    }

    pub fn vertex(&self) -> u32 {
        match *self {
            Event::Assign { vertex, .. } | Event::Move { vertex, .. } | Event::Release { vertex } => vertex,
        }
    }
}

/// Everything a session needs, prepared by the caller.
pub struct Scene {
    pub mesh: TetMesh,
    pub ops: SystemOperators,
    /// One subspace per mixture component (or a single one).
    pub subspaces: Vec<Subspace>,
    /// Scores components from handle forces; `None` pins component 0.
    pub mixture: Option<MixtureModel>,
    pub labels: Vec<String>,
    pub hysteresis: HysteresisSelector,
    pub step: StepSettings,
    /// Handle spring strength per unit mass.
    pub handle_strength: f64,
    /// Constant full-space load such as gravity.
    pub base_load: Option<DVector<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Handle {
    target: Vec3,
    moved: bool,
}

struct Component {
    sub: Subspace,
    red: ReducedOperators,
    base: DVector<f64>,
    /// Basis rows of the surface vertices.
    surface_basis: DMatrix<f64>,
    surface_mean: DVector<f64>,
}

pub struct Session {
    mesh: TetMesh,
    ops: SystemOperators,
    components: Vec<Component>,
    mixture: Option<MixtureModel>,
    labels: Vec<String>,
    selector: HysteresisSelector,
    step: StepSettings,
    alpha: f64,
    surface: Vec<usize>,
    rest_surface: Vec<f64>,
    state: ReducedState,
    active: usize,
    handles: BTreeMap<u32, Handle>,
    external: Option<DVector<f64>>,
    frame: u64,
}

fn rows_of(m: &DMatrix<f64>, vertices: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(3 * vertices.len(), m.ncols(), |r, c| m[(3 * vertices[r / 3] + r % 3, c)])
}

impl Session {
    pub fn new(scene: Scene) -> Result<Self, SessionError> {
        let Scene {
            mesh,
            ops,
            subspaces,
            mixture,
            labels,
            hysteresis,
            step,
            handle_strength,
            base_load,
        } = scene;
        let invalid = |msg: String| SessionError::Numerical(msg);
        if subspaces.is_empty() {
            return Err(invalid("scene has no subspaces".into()));
        }
        if let Some(mix) = &mixture {
            if mix.len() != subspaces.len() {
                return Err(invalid(format!(
                    "mixture has {} components but {} subspaces were given",
                    mix.len(),
                    subspaces.len()
                )));
            }
        }
        if !(handle_strength > 0.0 && handle_strength.is_finite()) {
            return Err(invalid("handle strength must be positive".into()));
        }
        let m = subspaces[0].size();
        if subspaces.iter().any(|s| s.size() != m) {
            return Err(invalid("all components must share one subspace size".into()));
        }
        let surface = mesh.surface_vertices();
        let base_full = base_load.unwrap_or_else(|| DVector::zeros(ops.dim()));
        let components = subspaces
            .into_iter()
            .map(|sub| {
                let red = ReducedOperators::new(&ops, &sub)?;
                let base = sub.basis().tr_mul(&base_full);
                let surface_basis = rows_of(sub.basis(), &surface);
                let surface_mean = rows_of(&DMatrix::from_column_slice(ops.dim(), 1, sub.mean().as_slice()), &surface).column(0).into_owned();
                Ok(Component { sub, red, base, surface_basis, surface_mean })
            })
            .collect::<Result<Vec<_>, SessionError>>()?;
        let rest_surface = surface.iter().flat_map(|&v| mesh.vertices()[v].iter().copied().collect::<Vec<_>>()).collect();
        // start at the static equilibrium of the constant load
        let first = &components[0];
        let z = static_solve(&first.red, &first.sub, &ExternalLoad::Full(base_full))?.z;
        let mut selector = hysteresis;
        selector.reset(0);
        let labels = if labels.len() == components.len() {
            labels
        } else {
            (0..components.len()).map(|k| format!("component-{k}")).collect()
        };
        Ok(Self {
            mesh,
            ops,
            components,
            mixture,
            labels,
            selector,
            step,
            alpha: handle_strength,
            surface,
            rest_surface,
            state: ReducedState { z, z_dot: DVector::zeros(m), time: 0.0 },
            active: 0,
            handles: BTreeMap::new(),
            external: None,
            frame: 0,
        })
    }

    pub fn modes(&self) -> usize {
        self.state.z.len()
    }

    pub fn active(&self) -> usize {
        self.active
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn state(&self) -> &ReducedState {
        &self.state
    }

    /// Id the next published frame will carry.
    pub fn next_frame(&self) -> u64 {
        self.frame + 1
    }

    pub fn handles(&self) -> Vec<(u32, Vec3)> {
        self.handles.iter().map(|(&v, h)| (v, h.target)).collect()
    }

    pub fn topology(&self) -> SurfaceTopology {
        let mut local = vec![u32::MAX; self.mesh.num_vertices()];
        for (i, &v) in self.surface.iter().enumerate() {
            local[v] = i as u32;
        }
        SurfaceTopology {
            vertices: self.surface.iter().map(|&v| v as u32).collect(),
            triangles: self.mesh.surface().iter().map(|t| t.map(|v| local[v])).collect(),
            positions: self.rest_surface.iter().map(|&x| x as f32).collect(),
        }
    }

    /// Extra full-space load applied on every following step, on top of the
    /// scene's constant load; `None` clears it.
    pub fn set_external_load(&mut self, load: Option<DVector<f64>>) -> Result<(), SessionError> {
        if let Some(f) = &load {
            if f.len() != self.ops.dim() || !f.iter().all(|x| x.is_finite()) {
                return Err(SessionError::InvalidLoad);
            }
        }
        self.external = load;
        Ok(())
    }

    pub fn handle_event(&mut self, event: Event) -> Result<(), SessionError> {
        let vertex = event.vertex();
        if vertex as usize >= self.mesh.num_vertices() {
            return Err(SessionError::InvalidVertex(vertex));
        }
        match event {
            Event::Assign { target, .. } => {
                if !target.iter().all(|x| x.is_finite()) {
                    return Err(SessionError::InvalidTarget);
                }
                if self.ops.pinned_mask()[3 * vertex as usize] {
                    return Err(SessionError::PinnedVertex(vertex));
                }
                // a second assign on the same vertex replaces the first
                self.handles.insert(vertex, Handle { target, moved: false });
            }
            Event::Move { target, .. } => {
                if !target.iter().all(|x| x.is_finite()) {
                    return Err(SessionError::InvalidTarget);
                }
                let h = self.handles.get_mut(&vertex).ok_or(SessionError::Unassigned(vertex))?;
                h.target = target;
                h.moved = true;
            }
            Event::Release { .. } => {
                self.handles.remove(&vertex).ok_or(SessionError::Unassigned(vertex))?;
            }
        }
        Ok(())
    }

    fn displacement_at(&self, k: usize, v: usize) -> Vec3 {
        let c = &self.components[k];
        let b = c.sub.basis();
        Vec3::from_fn(|i, _| c.sub.mean()[3 * v + i] + b.row(3 * v + i).dot(&self.state.z.transpose()))
    }

    /// Spring forces `α m_v (A_v − u_v)` on the handle vertices, stacked.
    pub fn handle_forces(&self) -> (Vec<usize>, DVector<f64>) {
        let support: Vec<usize> = self.handles.keys().map(|&v| v as usize).collect();
        let mut f = DVector::zeros(3 * support.len());
        for (j, (&v, h)) in self.handles.iter().enumerate() {
            let v = v as usize;
            let rest = self.mesh.vertices()[v];
            let u = self.displacement_at(self.active, v);
            for k in 0..3 {
                f[3 * j + k] = self.alpha * self.ops.mass()[3 * v + k] * (h.target[k] - rest[k] - u[k]);
            }
        }
        (support, f)
    }

    /// Handle forces plus any scripted external load, restricted to the
    /// vertices where the external load is nonzero.
    fn observation(&self) -> (Vec<usize>, DVector<f64>) {
        let (handles, hf) = self.handle_forces();
        let mut forces: BTreeMap<usize, Vec3> = handles
            .iter()
            .enumerate()
            .map(|(j, &v)| (v, Vec3::new(hf[3 * j], hf[3 * j + 1], hf[3 * j + 2])))
            .collect();
        if let Some(ext) = &self.external {
            for v in 0..self.mesh.num_vertices() {
                let f = Vec3::new(ext[3 * v], ext[3 * v + 1], ext[3 * v + 2]);
                if f != Vec3::zeros() {
                    *forces.entry(v).or_insert_with(Vec3::zeros) += f;
                }
            }
        }
        let support: Vec<usize> = forces.keys().copied().collect();
        let f = DVector::from_iterator(3 * support.len(), forces.values().flat_map(|f| f.iter().copied().collect::<Vec<_>>()));
        (support, f)
    }

    /// Component scoring on the observed forces. Runs only once a handle has
    /// been dragged or an external load is present: a freshly assigned
    /// handle exerts (almost) no force, and a zero observation would favour
    /// whichever component has the least variance there.
    fn select(&mut self) -> Result<(), SessionError> {
        let Some(mixture) = &self.mixture else { return Ok(()) };
        let loaded = self.external.as_ref().is_some_and(|f| f.iter().any(|x| *x != 0.0));
        if !loaded && !self.handles.values().any(|h| h.moved) {
            return Ok(());
        }
        let (support, f) = self.observation();
        let scores = mixture.log_posterior(&ForceObservation::new(support, f)?)?;
        if let Some(k) = self.selector.observe(&scores) {
            if k != self.active {
                let (from, to) = (&self.components[self.active].sub, &self.components[k].sub);
                self.state = self.state.transfer(from, to, self.ops.mass());
                log::debug!("switching from component {} to {k}", self.active);
                self.active = k;
            }
        }
        Ok(())
    }

    /// Advances one step and returns the frame to publish.
    pub fn tick(&mut self) -> Result<FrameSnapshot, SessionError> {
        self.select()?;
        let (support, f) = self.handle_forces();
        let c = &self.components[self.active];
        let mut f_r = c.base.clone();
        if let Some(ext) = &self.external {
            f_r += c.sub.basis().tr_mul(ext);
        }
        for (j, &v) in support.iter().enumerate() {
            let rows = c.sub.basis().rows(3 * v, 3);
            f_r += rows.tr_mul(&f.rows(3 * j, 3));
        }
        let stepper = Stepper::quadratic(&c.red, self.step)?;
        let (next, report) = stepper.step(&self.state, &f_r)?;
        if !next.is_finite() {
            return Err(SessionError::Numerical("reduced state diverged".into()));
        }
        if !report.converged {
            log::warn!("step did not converge (gradient {:.3e})", report.gradient_norm);
        }
        self.state = next;
        self.frame += 1;
        Ok(self.snapshot())
    }

    /// Frame for the current state without stepping.
    pub fn snapshot(&self) -> FrameSnapshot {
        let c = &self.components[self.active];
        let u = &c.surface_mean + &c.surface_basis * &self.state.z;
        FrameSnapshot {
            id: self.frame,
            component: self.active as u16,
            z: self.state.z.iter().map(|&x| x as f32).collect(),
            positions: self.rest_surface.iter().zip(u.iter()).map(|(x, d)| (x + d) as f32).collect(),
        }
    }

    /// Full displacement of the current state.
    pub fn displacement(&self) -> DVector<f64> {
        self.components[self.active].sub.reconstruct(&self.state.z)
    }
}
