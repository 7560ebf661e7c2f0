use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use cpdnet_cli::{run, EXIT_CONFIG, EXIT_FORMAT, EXIT_IO};
use cpdnet_core::geometry::io;
use cpdnet_core::losses::chamfer_per_point;
use cpdnet_core::report::RegistrationReport;

const TINY: &str = r#"
shape = "fish"
n_points = 24
train_level = 0.5
levels = [0.3, 0.5]
train_pairs = 12
test_pairs = 3
seed = 5

[[noise]]
kind = "po"
levels = [0.1]

[train]
batch_size = 4
epochs = 2
val_pairs = 3
record_timing = false

[cpd]
max_iters = 30
"#;

fn cli(args: &[&str]) -> i32 {
    run(std::iter::once("cpdnet").chain(args.iter().copied()))
}

fn write_spec(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("spec.toml");
    std::fs::write(&path, text).unwrap();
    path
}

/// Relative path -> bytes for every file below `root`.
fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn pipeline(dir: &Path) -> PathBuf {
    let spec = write_spec(dir, TINY);
    let out = dir.join("run");
    let (s, o) = (spec.to_str().unwrap(), out.to_str().unwrap());
    assert_eq!(cli(&["synth", "--spec", s, "--out", o]), 0);
    assert_eq!(cli(&["train", "--spec", s, "--out", o]), 0);
    assert_eq!(cli(&["eval", "--spec", s, "--out", o, "--threads", "2"]), 0);
    assert_eq!(cli(&["baseline", "--spec", s, "--out", o, "--threads", "2"]), 0);
    out
}

fn read_report(path: &Path) -> RegistrationReport {
    RegistrationReport::from_csv(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn synth_twice_writes_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(tmp.path(), TINY);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(cli(&["synth", "--spec", spec.to_str().unwrap(), "--out", a.to_str().unwrap()]), 0);
    assert_eq!(cli(&["synth", "--spec", spec.to_str().unwrap(), "--out", b.to_str().unwrap()]), 0);
    let (mut sa, mut sb) = (snapshot(&a.join("data")), snapshot(&b.join("data")));
    assert!(sa.keys().any(|k| k.ends_with("manifest.json")));
    assert!(sa.keys().any(|k| k.starts_with("cells/po_0.1")));
    assert_eq!(sa.len(), sb.len());
    assert_eq!(sa, sb);
    // a different seed changes the data
    let c = tmp.path().join("c");
    assert_eq!(cli(&["synth", "--spec", spec.to_str().unwrap(), "--out", c.to_str().unwrap(), "--seed", "6"]), 0);
    sa.retain(|k, _| k.extension().is_some_and(|e| e == "pts"));
    sb = snapshot(&c.join("data"));
    sb.retain(|k, _| k.extension().is_some_and(|e| e == "pts"));
    assert_ne!(sa, sb);
}

#[test]
fn pipeline_reports_pair_up_and_register_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let out = pipeline(tmp.path());
    for f in ["model.cpdn", "train_log.csv", "run.meta", "reports/learned_summary.csv", "reports/cpd_summary.csv"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let log = std::fs::read_to_string(out.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);

    let learned = read_report(&out.join("reports/learned.csv"));
    let cpd = read_report(&out.join("reports/cpd.csv"));
    assert_eq!(learned.len(), 9);
    let ids = |r: &RegistrationReport| r.rows.iter().map(|row| row.pair_id.clone()).collect::<Vec<_>>();
    assert_eq!(ids(&learned), ids(&cpd));
    for (a, b) in learned.rows.iter().zip(&cpd.rows) {
        assert_eq!(a.pre_cd, b.pre_cd);
        assert_eq!((a.level, a.noise_kind, a.noise_level), (b.level, b.noise_kind, b.noise_level));
    }

    // register the first noise-free pair by hand and compare with the report
    let row = learned.rows.iter().find(|r| r.pair_id.starts_with("level_0.3:")).unwrap();
    let id = row.pair_id.split_once(':').unwrap().1;
    let cell = out.join("data/cells/level_0.3/test");
    let src = cell.join(format!("{id}_src.pts"));
    let tgt = cell.join(format!("{id}_tgt.pts"));
    let reg = tmp.path().join("reg");
    let code = cli(&[
        "register",
        "--checkpoint",
        out.join("model.cpdn").to_str().unwrap(),
        "--source",
        src.to_str().unwrap(),
        "--target",
        tgt.to_str().unwrap(),
        "--out",
        reg.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let transformed = io::read(&reg.join("transformed.pts")).unwrap();
    let drifts = io::read(&reg.join("drifts.pts")).unwrap();
    let source = io::read(&src).unwrap();
    assert_eq!(drifts.len(), source.len());
    let post = chamfer_per_point(&transformed, &io::read(&tgt).unwrap()).unwrap();
    assert!((post - row.post_cd).abs() <= 1e-9, "{post} vs {}", row.post_cd);

    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("run.meta")).unwrap()).unwrap();
    for cmd in ["synth", "train", "eval", "baseline"] {
        let entry = &meta[cmd];
        assert_eq!(entry["seed"], 5, "{cmd}");
        assert!(entry["spec_crc32"].as_str().unwrap().len() == 8);
        assert!(entry["platform"].is_string() && entry["rng"].is_string() && entry["version"].is_string());
    }
    assert_eq!(meta["eval"]["threads"], 2);
    assert!(reg.join("run.meta").is_file());
}

#[test]
fn subsampled_registration_moves_only_the_kept_points() {
    let tmp = tempfile::tempdir().unwrap();
    let out = pipeline(tmp.path());
    let cell = out.join("data/cells/level_0.5/test");
    let first = std::fs::read_dir(&cell)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.to_string_lossy().ends_with("_src.pts"))
        .min()
        .unwrap();
    let tgt = PathBuf::from(first.to_string_lossy().replace("_src.pts", "_tgt.pts"));
    let reg = tmp.path().join("sub");
    let code = cli(&[
        "register",
        "--checkpoint",
        out.join("model.cpdn").to_str().unwrap(),
        "--source",
        first.to_str().unwrap(),
        "--target",
        tgt.to_str().unwrap(),
        "--out",
        reg.to_str().unwrap(),
        "--subsample",
        "8",
    ]);
    assert_eq!(code, 0);
    assert_eq!(io::read(&reg.join("transformed.pts")).unwrap().len(), 8);
    assert_eq!(cpdnet_cli::subsample_indices(24, 8), vec![0, 3, 6, 9, 12, 15, 18, 21]);
}

#[test]
fn report_merges_and_draws_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let out = pipeline(tmp.path());
    let reports = out.join("reports");
    let (learned, cpd) = (reports.join("learned.csv"), reports.join("cpd.csv"));
    let args = |dir: &Path| {
        vec![
            "report".to_string(),
            "--out".into(),
            dir.to_string_lossy().into_owned(),
            learned.to_string_lossy().into_owned(),
            cpd.to_string_lossy().into_owned(),
        ]
    };
    let (a, b) = (tmp.path().join("ra"), tmp.path().join("rb"));
    assert_eq!(run(std::iter::once("cpdnet".to_string()).chain(args(&a))), 0);
    assert_eq!(run(std::iter::once("cpdnet".to_string()).chain(args(&b))), 0);
    for f in ["merged.csv", "summary.csv", "chart.svg"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let merged = std::fs::read_to_string(a.join("merged.csv")).unwrap();
    assert_eq!(merged.lines().count(), 1 + 18);
    assert!(merged.lines().skip(1).any(|l| l.starts_with("learned,")));
    assert!(merged.lines().skip(1).any(|l| l.starts_with("cpd,")));
    let svg = std::fs::read_to_string(a.join("chart.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
}

#[test]
fn failures_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    // configuration errors
    let bad = dir.join("bad.toml");
    std::fs::write(&bad, "shape = \"fish\"\nlevels = [-1.0]\n").unwrap();
    assert_eq!(cli(&["synth", "--spec", bad.to_str().unwrap()]), EXIT_CONFIG);
    std::fs::write(&bad, "shape = \"teapot\"\n").unwrap();
    assert_eq!(cli(&["synth", "--spec", bad.to_str().unwrap()]), EXIT_CONFIG);
    std::fs::write(&bad, "bogus_key = 1\n").unwrap();
    assert_eq!(cli(&["synth", "--spec", bad.to_str().unwrap()]), EXIT_CONFIG);
    let spec = write_spec(dir, TINY);
    assert_eq!(cli(&["synth", "--spec", spec.to_str().unwrap(), "--noise", "xx:0.1"]), EXIT_CONFIG);
    assert_eq!(cli(&["synth", "--spec", spec.to_str().unwrap(), "--levels", "0.3,abc"]), EXIT_CONFIG);
    assert_eq!(cli(&["no-such-command"]), EXIT_CONFIG);

    // I/O errors
    let missing = dir.join("missing.toml");
    assert_eq!(cli(&["synth", "--spec", missing.to_str().unwrap()]), EXIT_IO);
    let out = dir.join("never_synthesized");
    assert_eq!(cli(&["eval", "--spec", spec.to_str().unwrap(), "--out", out.to_str().unwrap()]), EXIT_IO);

    // dimension / format errors
    let garbage = dir.join("garbage.cpdn");
    std::fs::write(&garbage, b"not a checkpoint").unwrap();
    let pts2 = dir.join("a.pts");
    let pts3 = dir.join("b.pts");
    std::fs::write(&pts2, "pointset 1 2 4\n0 0\n1 0\n0 1\n1 1\n").unwrap();
    std::fs::write(&pts3, "pointset 1 3 4\n0 0 0\n1 0 0\n0 1 0\n1 1 1\n").unwrap();
    let headerless = dir.join("c.pts");
    std::fs::write(&headerless, "0 0\n1 0\n").unwrap();
    let reg = dir.join("reg");
    let register = |ckpt: &Path, src: &Path, tgt: &Path| {
        cli(&[
            "register",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--source",
            src.to_str().unwrap(),
            "--target",
            tgt.to_str().unwrap(),
            "--out",
            reg.to_str().unwrap(),
        ])
    };
    assert_eq!(register(&garbage, &pts2, &pts2), EXIT_FORMAT);
    let model = dir.join("model.cpdn");
    let params = cpdnet_core::Params32::init(2, cpdnet_core::model::Activation::Relu, 0).unwrap();
    cpdnet_core::model::checkpoint::save(&params, &model).unwrap();
    assert_eq!(register(&model, &pts2, &pts3), EXIT_FORMAT);
    assert_eq!(register(&model, &pts3, &pts3), EXIT_FORMAT);
    assert_eq!(register(&model, &headerless, &pts2), EXIT_FORMAT);
    assert_eq!(register(&model, &pts2, &pts2), 0);
}

#[test]
fn binary_reports_errors_on_stderr_only() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.toml");
    let out = Command::new(env!("CARGO_BIN_EXE_cpdnet"))
        .args(["synth", "--spec", missing.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_IO));
    assert!(out.stdout.is_empty());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.toml"));
}
