use std::path::Path;
use std::process::{Command, Output};

fn camset(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_camset"))
        .current_dir(dir)
        .env_remove("CAMSET_CONFIG")
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

const SMALL: &str = r#"{"synthetic": {"scene_points": 300}}"#;

fn generate(dir: &Path, extra: &str) {
    let config = format!(r#"{{"synthetic": {{"scene_points": 300{extra}}}}}"#);
    std::fs::write(dir.join("config.json"), config).unwrap();
    ok(&camset(
        dir,
        &[
            "--config",
            "config.json",
            "--seed",
            "5",
            "generate",
            "--out",
            "data",
            "--queries",
            "3",
        ],
    ));
}

#[test]
fn generate_is_deterministic_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("config.json"), SMALL).unwrap();
    for out in ["a", "b"] {
        ok(&camset(
            dir,
            &[
                "--config",
                "config.json",
                "--seed",
                "9",
                "generate",
                "--out",
                out,
                "--queries",
                "2",
            ],
        ));
    }
    ok(&camset(
        dir,
        &[
            "--config",
            "config.json",
            "--seed",
            "10",
            "generate",
            "--out",
            "c",
            "--queries",
            "2",
        ],
    ));
    for file in ["scene.jsonl", "queries.jsonl", "truth.jsonl"] {
        let a = std::fs::read(dir.join("a").join(file)).unwrap();
        assert_eq!(
            a,
            std::fs::read(dir.join("b").join(file)).unwrap(),
            "{file}"
        );
        assert_ne!(
            a,
            std::fs::read(dir.join("c").join(file)).unwrap(),
            "{file}"
        );
    }
    let head = std::fs::read_to_string(dir.join("a/scene.jsonl")).unwrap();
    assert!(head.starts_with(r#"{"format":"camset-scene","version":1}"#));
}

#[test]
fn step_by_step_verbs_match_localize() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    generate(dir, r#", "corrupt_target": true"#);

    let index = ok(&camset(dir, &["index", "--scene", "data/scene.jsonl"]));
    let index: serde_json::Value = serde_json::from_str(&index).unwrap();
    assert_eq!(index["points"], 300);
    assert_eq!(index["dimension"], 128);

    ok(&camset(
        dir,
        &[
            "match",
            "--scene",
            "data/scene.jsonl",
            "--queries",
            "data/queries.jsonl",
            "--out",
            "matches.jsonl",
        ],
    ));
    ok(&camset(
        dir,
        &[
            "solve",
            "--scene",
            "data/scene.jsonl",
            "--queries",
            "data/queries.jsonl",
            "--matches",
            "matches.jsonl",
            "--out",
            "t.jsonl",
        ],
    ));
    ok(&camset(
        dir,
        &[
            "refine",
            "--scene",
            "data/scene.jsonl",
            "--queries",
            "data/queries.jsonl",
            "--matches",
            "matches.jsonl",
            "--transforms",
            "t.jsonl",
            "--out",
            "refined.jsonl",
        ],
    ));
    ok(&camset(
        dir,
        &[
            "evaluate",
            "--results",
            "refined.jsonl",
            "--truth",
            "data/truth.jsonl",
            "--out",
            "eval.json",
        ],
    ));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.join("eval.json")).unwrap()).unwrap();
    assert_eq!(report["registration"]["registered"], 3);
    assert!(report["location"]["max"].as_f64().unwrap() < 1e-6);

    ok(&camset(
        dir,
        &[
            "localize",
            "--scene",
            "data/scene.jsonl",
            "--queries",
            "data/queries.jsonl",
            "--out",
            "results.jsonl",
        ],
    ));
    let results = std::fs::read_to_string(dir.join("results.jsonl")).unwrap();
    assert_eq!(results.matches("image_set_success").count(), 3);
}

#[test]
fn failed_localization_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    generate(dir, r#", "corrupt_target": true"#);
    let out = camset(
        dir,
        &[
            "localize",
            "--scene",
            "data/scene.jsonl",
            "--queries",
            "data/queries.jsonl",
            "--out",
            "r.jsonl",
            "--mode",
            "single-image",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stdout).contains("0/3 registered"));
    // Failed results still evaluate: nothing registered.
    let eval = ok(&camset(
        dir,
        &[
            "evaluate",
            "--results",
            "r.jsonl",
            "--truth",
            "data/truth.jsonl",
        ],
    ));
    let report: serde_json::Value = serde_json::from_str(&eval).unwrap();
    assert_eq!(report["registration"]["registered"], 0);
}

#[test]
fn errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let out = camset(dir, &["index", "--scene", "missing.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.jsonl"));

    std::fs::write(
        dir.join("bad.json"),
        r#"{"synthetic": {"scene_points": 0}}"#,
    )
    .unwrap();
    let out = camset(dir, &["--config", "bad.json", "generate", "--out", "x"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("invalid config"));
}

#[test]
fn config_path_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(
        dir.join("bad.json"),
        r#"{"synthetic": {"scene_points": 0}}"#,
    )
    .unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_camset"))
        .current_dir(dir)
        .env("CAMSET_CONFIG", "bad.json")
        .args(["generate", "--out", "x"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn report_renders_both_formats() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    generate(dir, r#", "corrupt_target": true, "ray_noise": 0.001"#);
    for (mode, name) in [("single-image", "single"), ("image-set", "camset")] {
        let results = format!("{name}.jsonl");
        let _ = camset(
            dir,
            &[
                "localize",
                "--scene",
                "data/scene.jsonl",
                "--queries",
                "data/queries.jsonl",
                "--out",
                &results,
                "--mode",
                mode,
            ],
        );
        ok(&camset(
            dir,
            &[
                "evaluate",
                "--results",
                &results,
                "--truth",
                "data/truth.jsonl",
                "--out",
                &format!("{name}.json"),
            ],
        ));
    }
    let args = [
        "report",
        "--eval",
        "synthetic:single=single.json",
        "--eval",
        "synthetic:camset=camset.json",
    ];
    let text = ok(&camset(dir, &args));
    assert!(text.contains("0/3"), "{text}");
    assert!(text.contains("3/3"), "{text}");
    assert!(text.contains("100.00%"), "{text}");

    let mut csv_args = args.to_vec();
    csv_args.extend(["--format", "csv"]);
    let csv = ok(&camset(dir, &csv_args));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("synthetic,single,0,3,"));
    assert!(lines[2].starts_with("synthetic,camset,3,3,1.0,"));
}
