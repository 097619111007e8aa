use std::path::{Path, PathBuf};

use forcedual::container::load_trajectory;
use forcedual::mesh_io::surface_obj;

use super::{load_built, Context};
use crate::error::{CliError, CliResult};
use crate::scene::{assemble, build_all, scene_priors};

/// Writes `frame-NNNNN.obj` for every `every`-th trajectory frame.
/// Displacements stored in the trajectory are used as is; otherwise frames
/// are reconstructed from the subspace of their recorded component.
pub fn export_obj(ctx: &Context, trajectory: &Path, subspaces: Option<&Path>, every: usize) -> CliResult<Vec<PathBuf>> {
    if every == 0 {
        return Err(CliError::input("--every must be at least 1"));
    }
    let (traj, _) = load_trajectory(trajectory)?;
    let scene = assemble(&ctx.config)?;
    let dim = scene.ops.dim();
    if traj.full_dim != 0 && traj.full_dim != dim {
        return Err(CliError::input(format!(
            "trajectory stores {} displacement entries but the mesh has {dim}",
            traj.full_dim
        )));
    }
    let subs = if traj.full_dim == 0 {
        match subspaces {
            Some(dir) => load_built(dir)?,
            None => {
                let (priors, _) = scene_priors(&ctx.config, &scene)?;
                build_all(&ctx.config, &scene, &priors, ctx.seed)?
            }
        }
    } else {
        Vec::new()
    };
    ctx.ensure_out()?;
    let mut written = Vec::new();
    for (i, frame) in traj.frames.iter().enumerate().step_by(every) {
        let u = match &frame.displacement {
            Some(u) => u.clone(),
            None => {
                let sub = subs.get(frame.component as usize).ok_or_else(|| {
                    CliError::input(format!("frame {i} uses component {} which was not built", frame.component))
                })?;
                if sub.dim() != dim || sub.size() != frame.z.len() {
                    return Err(CliError::input(format!("frame {i} does not match its subspace")));
                }
                sub.reconstruct(&frame.z)
            }
        };
        written.push(ctx.write(&format!("frame-{i:05}.obj"), &surface_obj(&scene.mesh, Some(u.as_slice())))?);
    }
    log::info!("wrote {} surface meshes to {}", written.len(), ctx.out.display());
    Ok(written)
}
