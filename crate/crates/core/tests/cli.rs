use std::path::Path;
use std::process::{Command, Output};

fn adasparse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adasparse"))
        .args(args)
        .env("ADASPARSE_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL_SPEC: &str = "domain_field_cardinalities = [3]\ntotal_samples = 1200\n";

/// gen-data then a short fusion run; returns (data dir, run dir).
fn small_run(root: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let spec = root.join("spec.toml");
    std::fs::write(&spec, SMALL_SPEC).unwrap();
    let data = root.join("data");
    let o = adasparse(&["gen-data", "--config", p(&spec), "--seed", "3", "--out", p(&data)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "train=800 dev=200 test=200 domains=3");

    let run = root.join("run");
    let o = adasparse(&[
        "train", "--data", p(&data), "--out", p(&run), "--seed", "1", "--method", "fusion",
        "--epochs", "2", "--hidden", "8,4", "--embed-dim", "4", "--batch-size", "64",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    (data, run)
}

#[test]
fn missing_data_dir_fails_with_path() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = adasparse(&["train", "--data", "/definitely/not/here", "--out", p(&out)]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("/definitely/not/here"), "{}", stderr(&o));
}

#[test]
fn unknown_method_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let o = adasparse(&["train", "--data", p(tmp.path()), "--out", p(tmp.path()), "--method", "dropout"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("dropout"));
}

#[test]
fn invalid_boundary_flag_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let o = adasparse(&["train", "--data", p(tmp.path()), "--out", p(tmp.path()), "--r-min", "0.5", "--r-max", "0.2"]);
    assert!(!o.status.success());
}

#[test]
fn train_eval_and_masks_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, run) = small_run(tmp.path());
    for f in ["checkpoint.adsp", "history.csv", "factors.csv", "effective_config.toml"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let effective = std::fs::read_to_string(run.join("effective_config.toml")).unwrap();
    assert!(effective.contains("method = \"fusion\""), "{effective}");
    assert!(effective.contains("seed = 1"));

    let ckpt = run.join("checkpoint.adsp");
    let eval_dir = tmp.path().join("eval");
    let o = adasparse(&["eval", "--checkpoint", p(&ckpt), "--data", p(&data.join("test.csv")), "--out", p(&eval_dir)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(eval_dir.join("report.json")).unwrap()).unwrap();
    let auc = report["auc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&auc));
    assert_eq!(report["samples"].as_u64(), Some(200));

    let masks = tmp.path().join("masks");
    let o = adasparse(&[
        "inspect-masks", "--checkpoint", p(&ckpt), "--data", p(&data.join("test.csv")), "--out", p(&masks),
        "--domains", "0,1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let jaccard = std::fs::read_to_string(masks.join("jaccard.csv")).unwrap();
    // Two domains, three gated layers.
    assert_eq!(jaccard.lines().count(), 1 + 3);
    assert!(masks.join("mask_0.csv").is_file());

    let single = tmp.path().join("single");
    let o = adasparse(&[
        "inspect-masks", "--checkpoint", p(&ckpt), "--data", p(&data.join("test.csv")), "--out", p(&single),
        "--domains", "2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let jaccard = std::fs::read_to_string(single.join("jaccard.csv")).unwrap();
    assert_eq!(jaccard.lines().count(), 1);

    let o = adasparse(&[
        "inspect-masks", "--checkpoint", p(&ckpt), "--data", p(&data.join("test.csv")), "--out", p(&single),
        "--domains", "7",
    ]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("available"), "{}", stderr(&o));
}

#[test]
fn same_seed_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (_, run_a) = small_run(a.path());
    let (_, run_b) = small_run(b.path());
    for f in ["checkpoint.adsp", "history.csv", "factors.csv"] {
        assert_eq!(std::fs::read(run_a.join(f)).unwrap(), std::fs::read(run_b.join(f)).unwrap(), "{f}");
    }
    for f in ["train.csv", "test.csv"] {
        assert_eq!(
            std::fs::read(a.path().join("data").join(f)).unwrap(),
            std::fs::read(b.path().join("data").join(f)).unwrap()
        );
    }
}

#[test]
fn eval_on_single_class_data_reports_error() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, run) = small_run(tmp.path());
    let test = std::fs::read_to_string(data.join("test.csv")).unwrap();
    let mut lines = test.lines();
    let header = lines.next().unwrap();
    let label_col = header.split(',').position(|c| c == "label").unwrap();
    let negatives: Vec<&str> = lines.filter(|l| l.split(',').nth(label_col) == Some("0")).collect();
    let path = tmp.path().join("negatives.csv");
    std::fs::write(&path, format!("{header}\n{}\n", negatives.join("\n"))).unwrap();

    let o = adasparse(&[
        "eval", "--checkpoint", p(&run.join("checkpoint.adsp")), "--data", p(&path), "--out",
        p(&tmp.path().join("e")),
    ]);
    assert!(!o.status.success());
    assert!(stderr(&o).to_lowercase().contains("auc"), "{}", stderr(&o));
}
