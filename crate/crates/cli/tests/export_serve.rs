mod common;

use common::{bar_config, Workspace};
use serde_json::json;

fn obj_files(ws: &Workspace, dir: &str) -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(ws.file(dir))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".obj"))
        .collect();
    names.sort();
    names
}

#[test]
fn export_reconstructs_the_same_surfaces_as_recorded_displacements() {
    let ws = Workspace::new();
    let schedule = ws.write_json(
        "schedule.json",
        &json!({"events": [{"time": 0.0, "handle": "tip", "action": "load", "force": [0.0, -3.0, -10.0]}]}),
    );
    let mut cfg = bar_config(json!({"kind": "lma"}), 5);
    cfg["simulation"]["steps"] = json!(10);
    cfg["simulation"]["schedule"] = json!(schedule.to_str().unwrap());
    let plain = ws.write_json("plain.json", &cfg);
    cfg["simulation"]["record_displacement"] = json!(true);
    let recorded = ws.write_json("recorded.json", &cfg);

    for (config, out) in [(&plain, "p"), (&recorded, "r")] {
        let run = ws.run(&["simulate", "--config", config.to_str().unwrap(), "--out", out]);
        assert_eq!(run.code, 0, "{}", run.stderr);
        let traj = format!("{out}/trajectory.fdt");
        let run = ws.run(&[
            "export-obj", "--config", config.to_str().unwrap(), "--trajectory", &traj, "--every", "3", "--out",
            &format!("{out}/obj"),
        ]);
        assert_eq!(run.code, 0, "{}", run.stderr);
    }
    let files = obj_files(&ws, "p/obj");
    assert_eq!(files, ["frame-00000.obj", "frame-00003.obj", "frame-00006.obj", "frame-00009.obj"]);
    assert_eq!(obj_files(&ws, "r/obj"), files);
    for f in &files {
        let a = std::fs::read_to_string(ws.file(&format!("p/obj/{f}"))).unwrap();
        let b = std::fs::read_to_string(ws.file(&format!("r/obj/{f}"))).unwrap();
        assert_eq!(a, b, "{f}");
    }
    let last = std::fs::read_to_string(ws.file("p/obj/frame-00009.obj")).unwrap();
    let first = std::fs::read_to_string(ws.file("p/obj/frame-00000.obj")).unwrap();
    assert_ne!(first, last);
    assert!(last.lines().any(|l| l.starts_with("f ")));

    let run = ws.run(&["export-obj", "--config", plain.to_str().unwrap(), "--trajectory", "p/trajectory.fdt", "--every", "0"]);
    assert_eq!(run.code, 3);
}

#[test]
fn serve_for_a_fixed_duration_publishes_frames() {
    let ws = Workspace::new();
    let p = ws.write_json("scene.json", &bar_config(json!({"kind": "lma"}), 4));
    let run = ws.run(&["serve", "--config", p.to_str().unwrap(), "--bind", "127.0.0.1:0", "--duration", "1"]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert!(run.stdout.contains("listening on ws://127.0.0.1:"), "{}", run.stdout);
    let served = run.stdout.lines().find(|l| l.starts_with("served ")).expect("summary line");
    let frames: u64 = served.split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!(frames > 0, "{served}");
}
