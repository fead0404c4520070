use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;

fn ssbench(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssbench"))
        .args(args)
        .current_dir(cwd)
        .env_remove("SSBENCH_SEED")
        .output()
        .unwrap()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// A small dataset and two trained models shared by the slower tests.
struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Workspace {
    fn path(&self, rel: &str) -> String {
        self.root.join(rel).display().to_string()
    }
}

fn workspace() -> &'static Workspace {
    static W: OnceLock<Workspace> = OnceLock::new();
    W.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let ws = Workspace { _dir: dir, root };
        ok(&ssbench(
            &[
                "gen-data",
                "--classes",
                "3",
                "--per-class",
                "12",
                "--points",
                "64",
                "--seed",
                "7",
                "--out",
                "data",
            ],
            &ws.root,
        ));
        for (model, out) in [("pointwise-maxpool", "pw"), ("edge-conv", "ec")] {
            ok(&ssbench(
                &[
                    "train", "--data", "data", "--model", model, "--widths", "16,32", "--head",
                    "32", "--knn-k", "5", "--epochs", "3", "--out", out,
                ],
                &ws.root,
            ));
        }
        ws
    })
}

#[test]
fn gen_data_writes_dataset_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = ssbench(
        &[
            "gen-data",
            "--classes",
            "8",
            "--per-class",
            "100",
            "--seed",
            "7",
            "--out",
            "d",
        ],
        dir.path(),
    );
    ok(&out);
    let d = dir.path().join("d");
    let count = |split: &str| {
        std::fs::read_dir(d.join(split))
            .unwrap()
            .filter(|e| {
                e.as_ref()
                    .unwrap()
                    .path()
                    .extension()
                    .is_some_and(|x| x == "xyzl")
            })
            .count()
    };
    assert_eq!(count("train"), 560);
    assert_eq!(count("test"), 240);
    let manifest = read_json(&d.join("manifest.json"));
    assert_eq!(manifest["command"], "gen-data");
    assert_eq!(manifest["config"]["seed"], 7);
    assert_eq!(manifest["config"]["classes"], 8);
    assert_eq!(manifest["config"]["per-class"], 100);
    let top: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
    assert_eq!(top.len(), 1, "wrote outside its output directory");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(ssbench(&["frobnicate"], dir.path()).status.code(), Some(1));
    let out = ssbench(&["gen-data", "--classes", "nine"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
    assert_eq!(
        ssbench(&["gen-data", "--classes", "9", "--out", "x"], dir.path())
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        ssbench(&["train", "--out", "x"], dir.path()).status.code(),
        Some(1)
    );
    let missing = ssbench(
        &["train", "--data", "no-such-dir", "--out", "x"],
        dir.path(),
    );
    assert_eq!(missing.status.code(), Some(2));
    assert_eq!(ssbench(&["--version"], dir.path()).status.code(), Some(0));
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("c.json"),
        r#"{"classes": 2, "colour": "red"}"#,
    )
    .unwrap();
    let out = ssbench(
        &["gen-data", "--config", "c.json", "--out", "d"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));
    assert!(!dir.path().join("d").exists());
}

#[test]
fn config_file_flags_and_env_seed() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("c.json"),
        r#"{"classes": 2, "per-class": 3, "points": 32, "seed": 5}"#,
    )
    .unwrap();
    ok(&ssbench(
        &[
            "gen-data",
            "--config",
            "c.json",
            "--per-class",
            "4",
            "--out",
            "a",
        ],
        dir.path(),
    ));
    let m = read_json(&dir.path().join("a/manifest.json"));
    assert_eq!(
        (
            m["config"]["classes"].as_u64(),
            m["config"]["per-class"].as_u64()
        ),
        (Some(2), Some(4))
    );
    assert_eq!(m["config"]["seed"], 5);

    let out = Command::new(env!("CARGO_BIN_EXE_ssbench"))
        .args(["gen-data", "--config", "c.json", "--out", "b"])
        .current_dir(dir.path())
        .env("SSBENCH_SEED", "11")
        .output()
        .unwrap();
    ok(&out);
    assert_eq!(
        read_json(&dir.path().join("b/manifest.json"))["config"]["seed"],
        11
    );

    let bad = Command::new(env!("CARGO_BIN_EXE_ssbench"))
        .args(["gen-data", "--out", "c"])
        .current_dir(dir.path())
        .env("SSBENCH_SEED", "seven")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn attack_records_policy_in_manifest() {
    let ws = workspace();
    ok(&ssbench(
        &[
            "attack",
            "--attack",
            "ss-knn",
            "--victim",
            "pw/model.ckpt",
            "--data",
            "data",
            "--pa",
            "0.7",
            "--ps",
            "0.7",
            "--iterations",
            "5",
            "--samples",
            "4",
            "--out",
            "atk",
        ],
        &ws.root,
    ));
    let m = read_json(&ws.root.join("atk/manifest.json"));
    assert_eq!(m["config"]["pa"], 0.7);
    assert_eq!(m["config"]["ps"], 0.7);
    let summary = read_json(&ws.root.join("atk/attack.json"));
    assert_eq!(summary["config"]["policy"]["p_a"], 0.7);
    assert_eq!(summary["config"]["policy"]["p_s"], 0.7);
    assert_eq!(summary["results"].as_array().unwrap().len(), 4);
    let adv = std::fs::read_dir(ws.root.join("atk/adv"))
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .path()
                .extension()
                .is_some_and(|x| x == "pcb")
        })
        .count();
    assert_eq!(adv, 4);
}

#[test]
fn advpc_without_autoencoder_is_a_usage_error() {
    let ws = workspace();
    let out = ssbench(
        &[
            "attack",
            "--attack",
            "advpc",
            "--victim",
            "pw/model.ckpt",
            "--data",
            "data",
            "--out",
            "advpc",
        ],
        &ws.root,
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn defend_keeps_half_under_srs() {
    let ws = workspace();
    ok(&ssbench(
        &[
            "defend",
            "--defense",
            "srs",
            "--input",
            &ws.path("data/test"),
            "--out",
            "def",
        ],
        &ws.root,
    ));
    let clouds = ssbench::dataset::load_clouds(&ws.root.join("def/defended")).unwrap();
    assert!(!clouds.is_empty());
    assert!(clouds.iter().all(|c| c.len() == 32));
}

#[test]
fn sweep_has_one_row_per_value() {
    let ws = workspace();
    ok(&ssbench(
        &[
            "sweep",
            "--param",
            "pa",
            "--values",
            "0.1:1.0:0.1",
            "--attack",
            "ss-3d-adv",
            "--iterations",
            "3",
            "--samples",
            "3",
            "--seeds",
            "0",
            "--victims",
            "pw",
            "--models",
            "pw/model.ckpt,ec/model.ckpt",
            "--data",
            "data",
            "--out",
            "sweep",
        ],
        &ws.root,
    ));
    let report =
        ssbench::evaluation::TransferReport::read_json(&ws.root.join("sweep/report.json")).unwrap();
    let black_box: Vec<f64> = report
        .entries
        .iter()
        .filter(|e| e.victim == "pw" && e.transfer == "ec")
        .map(|e| e.sweep_value.unwrap())
        .collect();
    let expected: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
    assert_eq!(black_box, expected);
    assert!(ws.root.join("sweep/sweep_pa.svg").exists());
    assert!(ws.root.join("sweep/report.csv").exists());
}

#[test]
fn eval_reruns_from_manifest() {
    let ws = workspace();
    ok(&ssbench(
        &[
            "eval",
            "--attacks",
            "knn,ss-knn",
            "--defenses",
            "none,srs",
            "--iterations",
            "5",
            "--samples",
            "4",
            "--seeds",
            "0,1",
            "--models",
            "pw/model.ckpt,ec/model.ckpt",
            "--data",
            "data",
            "--out",
            "eval",
        ],
        &ws.root,
    ));
    ok(&ssbench(
        &["eval", "--config", "eval/manifest.json", "--out", "eval2"],
        &ws.root,
    ));
    let a =
        ssbench::evaluation::TransferReport::read_json(&ws.root.join("eval/report.json")).unwrap();
    let b =
        ssbench::evaluation::TransferReport::read_json(&ws.root.join("eval2/report.json")).unwrap();
    assert_eq!(a.entries.len(), 2 * 2 * 2 * 2);
    assert_eq!(a.config_digest, b.config_digest);
    assert_eq!(a.entries, b.entries);

    ok(&ssbench(
        &[
            "report",
            "--report",
            "eval/report.json",
            "--formats",
            "csv",
            "--out",
            "rep",
        ],
        &ws.root,
    ));
    let csv = std::fs::read_to_string(ws.root.join("rep/report.csv")).unwrap();
    assert!(csv.starts_with("victim,transfer,attack,defense,metric,value,std,n"));
    let wrong = ssbench(
        &["train", "--config", "eval/manifest.json", "--out", "x"],
        &ws.root,
    );
    assert_eq!(wrong.status.code(), Some(1));
}
