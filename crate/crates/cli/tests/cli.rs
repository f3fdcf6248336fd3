use std::path::Path;
use std::process::{Command, Output};

use clap::CommandFactory;
use serde_json::Value;
use slotaug::model::load_checkpoint;
use slotaug_cli::args::Cli;
use slotaug_cli::settings;

fn slotaug(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slotaug")).args(args).env("SLOTAUG_THREADS", "1").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = slotaug(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn lines(s: &str) -> Vec<Value> {
    s.lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY: &[&str] = &[
    "--steps",
    "2",
    "--batch-size",
    "2",
    "--image-size",
    "16",
    "--num-slots",
    "3",
    "--slot-dim",
    "8",
    "--hidden",
    "6",
    "--mlp-hidden",
    "12",
    "--iters",
    "2",
    "--log-every",
    "1",
    "--warmup-steps",
    "1",
];

#[test]
fn exit_codes() {
    assert_eq!(slotaug(&["--help"]).status.code(), Some(0));
    assert_eq!(slotaug(&["eval", "--bogus"]).status.code(), Some(2));
    assert_eq!(slotaug(&["gen-data"]).status.code(), Some(2), "missing --out");
    assert_eq!(slotaug(&["eval", "--ckpt", "/nonexistent", "--data", "/nonexistent"]).status.code(), Some(1));
    let out = slotaug(&["verify-decomposition", "--fixture", "nope"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn header_goes_to_stderr() {
    let out = slotaug(&["verify-decomposition", "--fixture", "disjoint", "--assert"]);
    assert!(out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("# slotaug verify-decomposition {"), "{err}");
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["relative_gap"].as_f64().unwrap() <= 1e-6);
    assert!(slotaug(&["verify-decomposition", "--fixture", "overlap", "--mode", "soft", "--assert"]).status.success());
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("v.json");
    std::fs::write(&cfg, r#"{"fixture": "overlap", "mode": "soft"}"#).unwrap();
    let out = slotaug(&["verify-decomposition", "--config", p(&cfg), "--fixture", "disjoint"]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["fixture"], "disjoint");
    assert_eq!(v["mode"], "soft");
    std::fs::write(&cfg, r#"{"fixtures": "overlap"}"#).unwrap();
    assert_eq!(slotaug(&["verify-decomposition", "--config", p(&cfg)]).status.code(), Some(2));
}

#[test]
fn pipeline_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("d.bin");
    ok(&["gen-data", "--out", p(&data), "--count", "5", "--seed", "3"]);
    let again = d.join("d2.bin");
    ok(&["gen-data", "--out", p(&again), "--count", "5", "--seed", "3"]);
    assert_eq!(std::fs::read(&data).unwrap(), std::fs::read(&again).unwrap());

    let train = |out: &Path, extra: &[&str]| {
        let mut a = vec!["train", "--data", p(&data), "--out", p(out), "--holdout", "1"];
        a.extend_from_slice(TINY);
        a.extend_from_slice(extra);
        lines(&ok(&a))
    };
    let (m1, m2) = (d.join("a.ckpt"), d.join("b.ckpt"));
    let log1 = train(&m1, &["--deterministic"]);
    let log2 = train(&m2, &[]);
    let n = log1.len();
    assert_eq!(log1[..n - 1], log2[..n - 1], "parallel and deterministic runs must agree");
    let (a, b) = (load_checkpoint(&m1).unwrap().0, load_checkpoint(&m2).unwrap().0);
    assert_eq!(a.params(), b.params());
    let events: Vec<&str> = log1.iter().map(|l| l["event"].as_str().unwrap()).collect();
    assert_eq!(events, ["holdout", "log", "log", "holdout", "done"]);

    let e1 = ok(&["eval", "--ckpt", p(&m1), "--data", p(&data), "--count", "2"]);
    let e2 = ok(&["--threads", "1", "eval", "--ckpt", p(&m1), "--data", p(&data), "--count", "2"]);
    assert_eq!(e1, e2);
    let r: Value = serde_json::from_str(&e1).unwrap();
    assert_eq!(r["scenes"].as_array().unwrap().len(), 2);
    let out = slotaug(&["eval", "--ckpt", p(&m1), "--data", p(&data), "--assert", "--min-fg-ari", "2"]);
    assert_eq!(out.status.code(), Some(1));

    let png = d.join("png");
    let w = ok(&["export-png", "--data", p(&data), "--ckpt", p(&m1), "--out", p(&png)]);
    assert_eq!(serde_json::from_str::<Value>(&w).unwrap()["written"].as_array().unwrap().len(), 3 + 2 * 3);
    let man = d.join("m.png");
    let inst = r#"{"scale":1.2,"dx":0,"dy":0,"dhue":30,"sat":1,"light":1}"#;
    let view = png.join("view.png");
    ok(&["manipulate", "--ckpt", p(&m1), "--image", p(&view), "--target", "0.5,0.5", "--inst", inst, "--out", p(&man)]);
    assert!(man.exists());
    let bad = slotaug(&[
        "manipulate",
        "--ckpt",
        p(&m1),
        "--image",
        p(&view),
        "--target",
        "2,0",
        "--inst",
        inst,
        "--out",
        p(&man),
    ]);
    assert_eq!(bad.status.code(), Some(1));

    let dur = ok(&[
        "durability",
        "--ckpt",
        p(&m1),
        "--baseline",
        p(&m2),
        "--data",
        p(&data),
        "--count",
        "2",
        "--rounds",
        "1",
    ]);
    let v: Value = serde_json::from_str(&dur).unwrap();
    assert_eq!(v["model"]["summary"]["rounds"].as_array().unwrap().len(), 2);
    // Identical checkpoints cannot beat each other.
    let out = slotaug(&[
        "durability",
        "--ckpt",
        p(&m1),
        "--baseline",
        p(&m2),
        "--data",
        p(&data),
        "--count",
        "1",
        "--rounds",
        "1",
        "--assert",
    ]);
    assert_eq!(out.status.code(), Some(1));

    let r = ok(&[
        "retrieve",
        "--ckpt",
        p(&m1),
        "--data",
        p(&data),
        "--query-index",
        "1",
        "--top",
        "2",
        "--metric",
        "cosine",
    ]);
    let v: Value = serde_json::from_str(&r).unwrap();
    assert_eq!(v["hits"].as_array().unwrap().len(), 2);

    let probe = ok(&["probe", "--ckpt", p(&m1), "--data", p(&data), "--epochs", "1", "--property", "color"]);
    let v: Value = serde_json::from_str(&probe).unwrap();
    assert!(v["color_f1"].is_f64() && v.get("shape_f1").is_none());

    let spec = d.join("c.json");
    std::fs::write(
        &spec,
        r#"{"sources":[{"image":"png/view.png"},{"image":"m.png","objects":[{"target":[0.5,0.5]}]}]}"#,
    )
    .unwrap();
    let c = ok(&["compose", "--ckpt", p(&m1), "--spec", p(&spec), "--out", p(&d.join("c.png"))]);
    assert_eq!(serde_json::from_str::<Value>(&c).unwrap()["slots"], 4);
}

/// Every "[default: X]" in the help text must match the settings default.
#[test]
fn help_defaults_match_settings() {
    let defaults: Vec<(&str, Value)> = vec![
        ("gen-data", serde_json::to_value(settings::GenData::default()).unwrap()),
        ("train", serde_json::to_value(settings::Train::default()).unwrap()),
        ("eval", serde_json::to_value(settings::Eval::default()).unwrap()),
        ("manipulate", serde_json::to_value(settings::Manipulate::default()).unwrap()),
        ("durability", serde_json::to_value(settings::Durability::default()).unwrap()),
        ("probe", serde_json::to_value(settings::Probe::default()).unwrap()),
        ("retrieve", serde_json::to_value(settings::Retrieve::default()).unwrap()),
        ("compose", serde_json::to_value(settings::Compose::default()).unwrap()),
        ("verify-decomposition", serde_json::to_value(settings::Verify::default()).unwrap()),
        ("export-png", serde_json::to_value(settings::Export::default()).unwrap()),
        ("serve", serde_json::to_value(settings::Serve::default()).unwrap()),
    ];
    let cli = Cli::command();
    let mut checked = 0;
    for (name, want) in &defaults {
        let sub = cli.find_subcommand(name).unwrap_or_else(|| panic!("no subcommand {name}"));
        for arg in sub.get_arguments() {
            let id = arg.get_id().as_str();
            if id == "config" || id == "threads" || id == "help" {
                continue;
            }
            assert!(want.get(id).is_some(), "{name} --{id} has no settings field");
            let help = arg.get_help().map(|h| h.to_string()).unwrap_or_default();
            let Some(start) = help.find("[default: ") else { continue };
            let shown = help[start + 10..].trim_end_matches(']');
            let actual = match &want[id] {
                Value::String(s) => s.clone(),
                v => v.to_string(),
            };
            assert_eq!(shown, actual, "{name} --{id}");
            checked += 1;
        }
    }
    assert!(checked > 40, "only {checked} defaults checked");
}

#[test]
fn help_matches_golden() {
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/help.txt");
    let mut text = String::new();
    let mut cli = Cli::command();
    text.push_str(&cli.render_long_help().to_string());
    for sub in cli.get_subcommands_mut() {
        text.push_str(&format!("\n==== {} ====\n", sub.get_name()));
        text.push_str(&sub.render_long_help().to_string());
    }
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&golden, &text).unwrap();
    }
    let want = std::fs::read_to_string(&golden).expect("run with UPDATE_GOLDEN=1 to create the golden file");
    assert_eq!(text, want);
}
