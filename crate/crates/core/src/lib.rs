pub mod container;
pub mod eigen;
pub mod error;
pub mod fem;
pub mod mesh;
pub mod mesh_io;
pub mod mixture;
pub mod operators;
pub mod oracle;
pub mod priors;
pub mod sim;
pub mod subspace;
pub mod sparse;

pub use error::{Error, Result};
