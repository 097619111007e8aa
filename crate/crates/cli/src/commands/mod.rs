mod build;
mod export;
mod serve;
mod simulate;
mod validate;

use std::fs;
use std::path::{Path, PathBuf};

use forcedual::container::load_subspace;
use forcedual::subspace::Subspace;
use serde::{Deserialize, Serialize};

pub use build::{build, BuildOutput};
pub use export::export_obj;
pub use serve::serve;
pub use simulate::{simulate, SimulateOutput};
pub use validate::{validate, ValidationOutcome};

use crate::config::SceneConfig;
use crate::error::{io_error, CliError, CliResult};

/// Inputs shared by every command.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: SceneConfig,
    pub seed: u64,
    pub out: PathBuf,
}

impl Context {
    pub fn new(config: SceneConfig, seed: Option<u64>, out: PathBuf) -> Self {
        let seed = seed
            .or(config.seed)
            .unwrap_or_else(|| forcedual::eigen::IterationSettings::default().seed);
        Self { config, seed, out }
    }

    pub fn ensure_out(&self) -> CliResult<()> {
        fs::create_dir_all(&self.out).map_err(|e| io_error(&self.out, e))
    }

    pub fn write(&self, name: &str, contents: &str) -> CliResult<PathBuf> {
        let path = self.out.join(name);
        fs::write(&path, contents).map_err(|e| io_error(&path, e))?;
        Ok(path)
    }
}

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub file: String,
    pub label: String,
    pub path: String,
    pub weight: f64,
}

/// Index of the containers written by `build`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub dim: usize,
    pub m: usize,
    pub seed: u64,
    pub components: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(dir: &Path) -> CliResult<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| io_error(&path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
    }

    /// Loads every listed container, in order.
    pub fn subspaces(&self, dir: &Path) -> CliResult<Vec<Subspace>> {
        self.components
            .iter()
            .map(|c| {
                let (sub, _) = load_subspace(&dir.join(&c.file))?;
                if sub.dim() != self.dim {
                    return Err(CliError::input(format!("{} does not match the manifest dimension", c.file)));
                }
                Ok(sub)
            })
            .collect()
    }
}

/// Subspaces from a `build` output directory.
pub fn load_built(dir: &Path) -> CliResult<Vec<Subspace>> {
    Manifest::load(dir)?.subspaces(dir)
}
