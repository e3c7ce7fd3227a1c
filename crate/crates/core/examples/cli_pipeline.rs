//! The command-line workflow driven in-process: write a run config, then
//! generate, train, evaluate and render, exactly as `crm <subcommand>` would.
//!
//! cargo run --release --example cli_pipeline -- [work_dir]

use std::path::PathBuf;

fn main() {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "cli_pipeline_run".into()));
    std::fs::create_dir_all(&dir).expect("create work directory");
    let config = dir.join("run.json");
    std::fs::write(
        &config,
        r#"{
  "data": {"image_height": 48, "image_width": 80, "grid_height": 12, "grid_width": 20, "scenes": 100},
  "model": {"backbone_widths": [8, 12, 12, 12], "stages": 2,
            "phi_widths": [8, 8, 8, 8], "psi_widths": [8, 8, 8, 8], "zeta_widths": [8, 8, 8]},
  "train": {
    "phase1": {"schedule": [{"epochs": 6, "lr": 0.001}], "weights": {"activity": 1.0, "group": 0.0}},
    "phase2": {"schedule": [{"epochs": 4, "lr": 0.001}], "weights": {"activity": 0.0001, "group": 1.0}}
  },
  "ablation": "stage-k",
  "paths": {"dataset": "data/scenes.json", "out_dir": "out"}
}
"#,
    )
    .expect("write config");

    let s = |p: PathBuf| p.to_string_lossy().into_owned();
    let steps: Vec<Vec<String>> = vec![
        vec!["generate".into(), "--config".into(), s(config.clone())],
        vec!["train".into(), "--config".into(), s(config.clone())],
        vec![
            "eval".into(),
            "--checkpoint".into(),
            s(dir.join("out/checkpoint.crm")),
            "--subset".into(),
            "heldout".into(),
        ],
        vec![
            "render".into(),
            "--dataset".into(),
            s(dir.join("data/scenes.json")),
            "--scene".into(),
            "0".into(),
            "--out".into(),
            s(dir.join("renders")),
            "--checkpoint".into(),
            s(dir.join("out/checkpoint.crm")),
        ],
    ];
    for step in steps {
        println!("$ crm {}", step.join(" "));
        let code = crm::cli::run(std::iter::once("crm".to_string()).chain(step));
        if code != 0 {
            std::process::exit(code);
        }
    }
}
