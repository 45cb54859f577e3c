use std::path::Path;
use std::process::{Command, Output};

fn stylex(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stylex"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = stylex(dir, args);
    assert!(out.status.success(), "stylex {args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn smoke() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs/synth-smoke.conf")
        .canonicalize()
        .unwrap()
        .to_string_lossy()
        .into_owned()
}

fn lines(p: &Path) -> usize {
    std::fs::read_to_string(p).unwrap().lines().count()
}

#[test]
fn usage_and_data_errors_have_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(stylex(d, &["frobnicate"]).status.code(), Some(1));
    assert_eq!(stylex(d, &["train-bpe"]).status.code(), Some(1));
    std::fs::write(d.join("bad.conf"), "seeed = 3\n").unwrap();
    let out = stylex(d, &["--config", "bad.conf", "synth", "--out-dir", "x"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seeed"));
    let out = stylex(
        d,
        &["train-bpe", "--input-a", "missing.txt", "--input-b", "missing.txt", "--output", "b.txt"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(!d.join("b.txt").exists());
}

#[test]
fn pipeline_outputs_line_up_and_inputs_stay_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = smoke();
    let c = |rest: &[&str]| {
        let mut v = vec!["--config", cfg.as_str()];
        v.extend_from_slice(rest);
        ok(d, &v);
    };
    c(&["synth", "--out-dir", "data"]);
    let before = std::fs::read(d.join("data/train.pos.txt")).unwrap();
    c(&["train-bpe", "--input-a", "data/train.pos.txt", "--input-b", "data/train.neg.txt", "--output", "bpe.txt"]);
    c(&[
        "pretrain-dae", "--bpe", "bpe.txt", "--input-a", "data/train.pos.txt", "--input-b", "data/train.neg.txt", "--output", "dae.ckpt",
    ]);
    c(&[
        "--no-dae", "--no-bt", "train", "--bpe", "bpe.txt", "--input-a", "data/train.pos.txt", "--input-b", "data/train.neg.txt", "--dev-a",
        "data/dev.pos.txt", "--dev-b", "data/dev.neg.txt", "--output", "model.ckpt",
    ]);
    c(&[
        "transfer", "--bpe", "bpe.txt", "--model", "model.ckpt", "--target", "neg", "--in", "data/test.pos.txt", "--out", "pred.txt",
    ]);
    assert_eq!(lines(&d.join("pred.txt")), lines(&d.join("data/test.pos.txt")));
    assert_eq!(std::fs::read(d.join("data/train.pos.txt")).unwrap(), before);

    // the train manifest records the --no-* switches
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("model.ckpt.manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "train");
    assert_eq!(m["config"]["use_dae"], false);
    assert_eq!(m["config"]["use_bt"], false);
    assert_eq!(m["config"]["use_spe"], true);
    assert!(m["outputs"].as_array().unwrap().iter().any(|o| o.as_str().unwrap().ends_with("model.ckpt")));

    // copying the source gives full content preservation under the model proxy
    c(&[
        "evaluate", "--input-a", "data/train.pos.txt", "--input-b", "data/train.neg.txt", "--dev-a", "data/dev.pos.txt", "--dev-b",
        "data/dev.neg.txt", "--source", "data/test.pos.txt", "--prediction", "data/test.pos.txt", "--target", "neg", "--model", "dae.ckpt",
        "--bpe", "bpe.txt", "--output", "report.json",
    ]);
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("report.json")).unwrap()).unwrap();
    assert!((r["cp_mean"].as_f64().unwrap() - 1.0).abs() < 1e-12, "{r}");
    assert!(r["ata"].as_f64().unwrap() < 50.0, "{r}");
}

#[test]
fn stats_reports_agreement_success_and_test() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut ours = String::from("item_id,rater_id,cp,flu,ata\n");
    let mut base = ours.clone();
    for i in 0..12 {
        for r in 0..3 {
            let v = 3 + (i % 3);
            ours.push_str(&format!("s{i},r{r},{v},{v},{}\n", if r == 2 && i == 0 { "" } else { "5" }));
            base.push_str(&format!("s{i},r{r},2,{},2\n", 1 + (i + r) % 3));
        }
    }
    std::fs::write(d.join("ours.csv"), ours).unwrap();
    std::fs::write(d.join("base.csv"), base).unwrap();
    // one missing cell makes the success rate undefined
    let out = stylex(d, &["stats", "--ratings", "ours.csv", "--output", "s.json"]);
    assert_eq!(out.status.code(), Some(2));

    let filled = std::fs::read_to_string(d.join("ours.csv")).unwrap().replace("s0,r2,3,3,\n", "s0,r2,3,3,5\n");
    std::fs::write(d.join("ours.csv"), filled).unwrap();
    ok(d, &["stats", "--ratings", "ours.csv", "--baseline", "base.csv", "--output", "s.json"]);
    let s: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("s.json")).unwrap()).unwrap();
    assert_eq!(s["judgments"], 36);
    assert_eq!(s["items"], 12);
    // items with rating 4 or 5 throughout: i % 3 in {1, 2}
    assert!((s["success_rate"].as_f64().unwrap() - 100.0 * 24.0 / 36.0).abs() < 1e-9);
    assert_eq!(s["cp"]["alpha_ordinal"], 1.0);
    // all 5s leave no variation to agree on
    assert!(s["ata"]["alpha_ordinal"].is_null());
    assert!(s["wilcoxon"]["p_value"].as_f64().unwrap() < 0.01);
}
