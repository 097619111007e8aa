use std::path::Path;
use std::thread;
use std::time::Duration;

use forcedual_live::{ServiceConfig, Session};

use super::{load_built, Context};
use crate::error::{CliError, CliResult};
use crate::scene::{assemble, live_scene};

/// Hosts the live session until the process is stopped, or for `duration`
/// seconds when given.
pub fn serve(ctx: &Context, subspaces: Option<&Path>, bind: Option<&str>, duration: Option<f64>) -> CliResult<()> {
    let cfg = &ctx.config;
    let scene = assemble(cfg)?;
    let prebuilt = subspaces.map(load_built).transpose()?;
    let session = Session::new(live_scene(cfg, scene, prebuilt, ctx.seed)?)?;
    let config = ServiceConfig {
        bind: bind.unwrap_or(&cfg.service.bind).to_string(),
        frame_rate: cfg.service.frame_rate,
        queue_capacity: cfg.service.queue_capacity,
        client_backlog: cfg.service.client_backlog,
    };
    let handle = forcedual_live::serve(session, config.clone())
        .map_err(|e| CliError::input(format!("cannot bind {}: {e}", config.bind)))?;
    println!("listening on ws://{}", handle.local_addr());
    match duration {
        Some(secs) => {
            thread::sleep(Duration::from_secs_f64(secs.max(0.0)));
            let stats = handle.stats();
            handle.shutdown();
            println!(
                "served {} frames ({} skipped ticks, {} dropped events, {} dropped frames)",
                stats.frames, stats.skipped_ticks, stats.dropped_events, stats.dropped_frames
            );
        }
        None => handle.wait(),
    }
    Ok(())
}
