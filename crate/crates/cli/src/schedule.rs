//! Scripted loads for `simulate`: timed point forces and handle drags on
//! vertices named in the scene config.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::error::{io_error, CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum Action {
    /// Constant point force (N) until `unload`.
    Load { force: [f64; 3] },
    Unload {},
    /// Attaches a spring handle at the vertex's rest position.
    Grab {},
    /// Moves the handle target, absolute or relative to the rest position.
    Drag {
        #[serde(default)]
        target: Option<[f64; 3]>,
        #[serde(default)]
        offset: Option<[f64; 3]>,
    },
    Release {},
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ScheduleEvent {
    /// Seconds; applied before the first step that ends after this time.
    pub time: f64,
    pub handle: String,
    #[serde(flatten)]
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    #[serde(default)]
    pub events: Vec<ScheduleEvent>,
}

/// Schedule events keyed by the step before which they apply.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CompiledSchedule {
    pub by_step: BTreeMap<usize, Vec<(usize, Action)>>,
}

impl Schedule {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        Self::parse(&text).map_err(|e| e.context(&path.display().to_string()))
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::input(format!("invalid schedule: {e}")))
    }

    /// Resolves handle names to vertices and times to step indices
    /// (`round(time / h)`), keeping file order within a step.
    pub fn compile(&self, handles: &BTreeMap<String, usize>, h: f64) -> CliResult<CompiledSchedule> {
        let mut out = CompiledSchedule::default();
        for (i, ev) in self.events.iter().enumerate() {
            let vertex = *handles.get(&ev.handle).ok_or_else(|| {
                CliError::input(format!("schedule event {i} refers to unknown handle '{}'", ev.handle))
            })?;
            if !(ev.time >= 0.0 && ev.time.is_finite()) {
                return Err(CliError::input(format!("schedule event {i} has an invalid time")));
            }
            let finite = |v: &[f64; 3]| v.iter().all(|x| x.is_finite());
            let ok = match &ev.action {
                Action::Load { force } => finite(force),
                Action::Drag { target: Some(t), offset: None } => finite(t),
                Action::Drag { target: None, offset: Some(o) } => finite(o),
                Action::Drag { .. } => false,
                _ => true,
            };
            if !ok {
                return Err(CliError::input(format!(
                    "schedule event {i}: vectors must be finite and a drag needs exactly one of target or offset"
                )));
            }
            let step = (ev.time / h).round() as usize;
            out.by_step.entry(step).or_default().push((vertex, ev.action.clone()));
        }
        Ok(out)
    }
}
