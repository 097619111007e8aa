mod common;

use common::{bar_config, Workspace};
use forcedual::container::load_subspace;
use forcedual_cli::commands::Manifest;
use forcedual_cli::scene::assemble;
use forcedual_cli::SceneConfig;
use serde_json::json;

#[test]
fn lma_build_writes_an_orthonormal_container() {
    let ws = Workspace::new();
    let cfg = ws.write_json("scene.json", &bar_config(json!({"kind": "lma"}), 6));
    let run = ws.run(&["build", "--config", cfg.to_str().unwrap(), "--out", "a"]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert!(run.stdout.contains("path: diagonal-GEVP"), "{}", run.stdout);

    let (sub, header) = load_subspace(&ws.file("a/subspace.fdm")).unwrap();
    assert_eq!(sub.size(), 6);
    assert_eq!(header["path"], "diagonal-GEVP");
    let scene = assemble(&SceneConfig::load(&cfg).unwrap()).unwrap();
    assert!(sub.orthonormality_error(scene.ops.mass()) < 1e-8);

    let report = std::fs::read_to_string(ws.file("a/report.txt")).unwrap();
    let line = report.lines().find(|l| l.contains("mass-orthonormality residual")).unwrap();
    let value: f64 = line.rsplit(' ').next().unwrap().parse().unwrap();
    assert!(value < 1e-8, "{line}");
    // eigen-residuals are tiny relative to each eigenvalue
    let rows: Vec<f64> = report
        .lines()
        .skip_while(|l| !l.contains("relative"))
        .skip(1)
        .take(6)
        .map(|l| l.split_whitespace().last().unwrap().parse().unwrap())
        .collect();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| *r < 1e-6), "{rows:?}");
    assert!(report.contains("[timings: wall clock, not reproducible]"));

    let manifest = Manifest::load(&ws.file("a")).unwrap();
    assert_eq!(manifest.components.len(), 1);
    assert_eq!(manifest.m, 6);
    assert_eq!(manifest.dim, 297);
}

#[test]
fn repeated_builds_are_byte_identical() {
    let ws = Workspace::new();
    let prior = json!({"kind": "radial_decay", "center": [1.0, 0.1, 0.1], "radius": 0.2});
    let cfg = ws.write_json("scene.json", &bar_config(prior, 5));
    for out in ["a", "b"] {
        let run = ws.run(&["build", "--config", cfg.to_str().unwrap(), "--out", out, "--seed", "9"]);
        assert_eq!(run.code, 0, "{}", run.stderr);
    }
    let a = std::fs::read(ws.file("a/subspace.fdm")).unwrap();
    let b = std::fs::read(ws.file("b/subspace.fdm")).unwrap();
    assert_eq!(a, b);
    assert_eq!(
        std::fs::read(ws.file("a/manifest.json")).unwrap(),
        std::fs::read(ws.file("b/manifest.json")).unwrap()
    );
}

#[test]
fn handle_prior_takes_the_low_rank_path() {
    let ws = Workspace::new();
    let prior = json!({"kind": "handle", "handles": [[1.0, 0.2, 0.15], [0.5, 0.0, 0.2]], "alpha": 4.0});
    let cfg = ws.write_json("scene.json", &bar_config(prior, 6));
    let run = ws.run(&["build", "--config", cfg.to_str().unwrap()]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    let report = std::fs::read_to_string(ws.file("out/report.txt")).unwrap();
    assert!(report.contains("path: lowrank-SVD"), "{report}");
    let (sub, _) = load_subspace(&ws.file("out/subspace.fdm")).unwrap();
    assert_eq!(sub.size(), 6);
}

#[test]
fn mixture_of_three_writes_three_containers() {
    let ws = Workspace::new();
    let mut cfg = bar_config(json!(null), 4);
    let obj = cfg.as_object_mut().unwrap();
    obj.remove("prior");
    obj.insert(
        "mixture".into(),
        json!({"components": [
            {"prior": {"kind": "lma"}, "weight": 1.0},
            {"prior": {"kind": "handle", "handles": [[1.0, 0.2, 0.15]], "label": "tip"}, "weight": 2.0},
            {"prior": {"kind": "painted", "boxes": [{"min": [0.5, -1, -1], "max": [2, 1, 1]}]}, "weight": 1.0}
        ]}),
    );
    // the single tip handle has rank 3
    obj["subspace"] = json!({"m": 3});
    let path = ws.write_json("scene.json", &cfg);
    let run = ws.run(&["build", "--config", path.to_str().unwrap()]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    let manifest = Manifest::load(&ws.file("out")).unwrap();
    let files: Vec<&str> = manifest.components.iter().map(|c| c.file.as_str()).collect();
    assert_eq!(files, ["component-0.fdm", "component-1.fdm", "component-2.fdm"]);
    let paths: Vec<&str> = manifest.components.iter().map(|c| c.path.as_str()).collect();
    assert_eq!(paths, ["diagonal-GEVP", "lowrank-SVD", "diagonal-GEVP"]);
    assert_eq!(manifest.components[1].label, "tip");
    assert_eq!(manifest.components[1].weight, 2.0);
    for f in files {
        let (sub, header) = load_subspace(&ws.file(&format!("out/{f}"))).unwrap();
        assert_eq!(sub.size(), 3);
        assert!(header.contains_key("component"));
    }
}

#[test]
fn exit_codes_classify_failures() {
    let ws = Workspace::new();
    // unknown key: input error
    let mut bad = bar_config(json!({"kind": "lma"}), 4);
    bad["subspace"]["solver"] = json!("arpack");
    let p = ws.write_json("bad.json", &bad);
    let run = ws.run(&["build", "--config", p.to_str().unwrap()]);
    assert_eq!(run.code, 3, "{}", run.stderr);
    assert!(run.stderr.contains("solver"), "{}", run.stderr);

    // missing config file
    assert_eq!(ws.run(&["build", "--config", "nope.json"]).code, 3);

    // more modes than the prior's rank
    let p = ws.write_json("rank.json", &bar_config(json!({"kind": "handle", "handles": [5]}), 4));
    let run = ws.run(&["build", "--config", p.to_str().unwrap()]);
    assert_eq!(run.code, 3, "{}", run.stderr);

    // indefinite actuation covariance fails numerically
    let prior = json!({"kind": "handle", "handles": [5], "actuation_covariance": [[1, 0, 0], [0, -1, 0], [0, 0, 1]]});
    let p = ws.write_json("psd.json", &bar_config(prior, 2));
    let run = ws.run(&["build", "--config", p.to_str().unwrap()]);
    assert_eq!(run.code, 4, "{}", run.stderr);
}
