use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use forcedual::container::{save_trajectory, Frame, Header, Trajectory};
use forcedual::mesh::Vec3;
use forcedual_live::{Event, Session};
use nalgebra::DVector;

use super::{load_built, Context};
use crate::error::CliResult;
use crate::scene::{assemble, live_scene, resolve_vertex};
use crate::schedule::{Action, Schedule};

#[derive(Debug, Clone)]
pub struct SimulateOutput {
    pub trajectory: PathBuf,
    pub components: Vec<u32>,
}

fn frame(session: &Session, time: f64, record: bool) -> Frame {
    Frame {
        time,
        component: session.active() as u32,
        z: session.state().z.clone(),
        displacement: record.then(|| session.displacement()),
    }
}

/// Runs the scripted scene. Subspaces come from `subspaces` (a `build`
/// output directory) or are built on the fly.
pub fn simulate(ctx: &Context, subspaces: Option<&Path>, schedule: Option<&Path>) -> CliResult<SimulateOutput> {
    let cfg = &ctx.config;
    let sim = &cfg.simulation;
    let scene = assemble(cfg)?;
    let mut names = BTreeMap::new();
    for (name, r) in &sim.handles {
        names.insert(name.clone(), resolve_vertex(&scene.mesh, r).map_err(|e| e.context(&format!("handle '{name}'")))?);
    }
    let schedule = match schedule.or(sim.schedule.as_deref()) {
        Some(p) => Schedule::load(p)?,
        None => Schedule::default(),
    };
    let compiled = schedule.compile(&names, sim.h)?;
    if let Some((&last, _)) = compiled.by_step.last_key_value() {
        if last >= sim.steps {
            log::warn!("schedule events after step {} are never applied", sim.steps);
        }
    }
    let prebuilt = subspaces.map(load_built).transpose()?;
    let rest: Vec<Vec3> = scene.mesh.vertices().to_vec();
    let dim = scene.ops.dim();
    let mut session = Session::new(live_scene(cfg, scene, prebuilt, ctx.seed)?)?;
    let record = sim.record_displacement;
    let mut traj = Trajectory::new(session.modes(), if record { dim } else { 0 });
    traj.push(frame(&session, 0.0, record))?;
    let mut loads: BTreeMap<usize, Vec3> = BTreeMap::new();
    for step in 0..sim.steps {
        if let Some(events) = compiled.by_step.get(&step) {
            for (v, action) in events {
                let vertex = *v as u32;
                match action {
                    Action::Load { force } => {
                        loads.insert(*v, Vec3::from(*force));
                    }
                    Action::Unload {} => {
                        loads.remove(v);
                    }
                    Action::Grab {} => session.handle_event(Event::Assign { vertex, target: rest[*v] })?,
                    Action::Drag { target, offset } => {
                        let target = match (target, offset) {
                            (Some(t), _) => Vec3::from(*t),
                            (None, Some(o)) => rest[*v] + Vec3::from(*o),
                            (None, None) => unreachable!("checked when compiling"),
                        };
                        session.handle_event(Event::Move { vertex, target })?
                    }
                    Action::Release {} => session.handle_event(Event::Release { vertex })?,
                }
            }
            let external = (!loads.is_empty()).then(|| {
                let mut f = DVector::zeros(dim);
                for (&v, load) in &loads {
                    for k in 0..3 {
                        f[3 * v + k] += load[k];
                    }
                }
                f
            });
            session.set_external_load(external)?;
        }
        session.tick()?;
        let time = (step + 1) as f64 * sim.h;
        traj.push(frame(&session, time, record))?;
        if cfg.mixture.is_some() {
            log::info!("step {} component {}", step + 1, session.active());
        }
    }
    ctx.ensure_out()?;
    let mut extra = Header::new();
    extra.insert("h".into(), format!("{:e}", sim.h));
    extra.insert("steps".into(), sim.steps.to_string());
    extra.insert("seed".into(), ctx.seed.to_string());
    extra.insert("labels".into(), session.labels().join(","));
    let path = ctx.out.join("trajectory.fdt");
    save_trajectory(&path, &traj, &extra)?;
    let components: Vec<u32> = traj.frames.iter().map(|f| f.component).collect();
    if cfg.mixture.is_some() {
        let mut log = String::from("step,time,component,label\n");
        for (i, f) in traj.frames.iter().enumerate() {
            let _ = writeln!(log, "{i},{:e},{},{}", f.time, f.component, session.labels()[f.component as usize]);
        }
        ctx.write("components.csv", &log)?;
    }
    Ok(SimulateOutput { trajectory: path, components })
}
