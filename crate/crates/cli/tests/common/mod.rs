#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn run(dir: &Path, args: &[&str]) -> Run {
    let out: Output = Command::new(env!("CARGO_BIN_EXE_forcedual"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs");
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

/// Bar of 1 x 0.2 x 0.2 m clamped at x = 0; 10 x 2 x 2 cells, 99 vertices.
pub fn bar_config(prior: Value, m: usize) -> Value {
    json!({
        "version": 1,
        "mesh": {"shape": "bar", "cells": [10, 2, 2], "size": [1.0, 0.2, 0.15]},
        "material": {"youngs_modulus": 1e5, "poisson_ratio": 0.3, "density": 1000.0},
        "pins": {"regions": [{"axis": "x", "below": 0.0}]},
        "prior": prior,
        "subspace": {"m": m},
        "simulation": {"handles": {"tip": [1.0, 0.2, 0.15], "mid": [0.5, 0.2, 0.15]}}
    })
}

pub struct Workspace {
    pub dir: TempDir,
}

impl Workspace {
    pub fn new() -> Self {
        Self { dir: tempfile::tempdir().unwrap() }
    }

    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn write_json(&self, name: &str, value: &Value) -> PathBuf {
        let path = self.file(name);
        std::fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
        path
    }

    pub fn run(&self, args: &[&str]) -> Run {
        run(self.path(), args)
    }
}
