use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn factlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_factlab"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = factlab(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn manifests(dir: &Path) -> Vec<serde_json::Value> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir.join("manifests")).unwrap() {
        let text = fs::read_to_string(e.unwrap().path()).unwrap();
        out.push(serde_json::from_str(&text).unwrap());
    }
    out
}

#[test]
fn gen_narrative_writes_passages_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["gen", "--style", "narrative", "--out", p(dir.path())]);
    let text = fs::read_to_string(dir.path().join("narrative.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 400);
    assert!(dir.path().join("narrative.audit.json").exists());
    let m = manifests(dir.path());
    assert_eq!(m.len(), 1);
    assert_eq!(m[0]["command"], "gen");
    assert_eq!(m[0]["config"]["seed"], 7);
    let hash = m[0]["outputs"]["narrative.jsonl"].as_str().unwrap();
    assert_eq!(hash, factlab::io::sha256_hex(text.as_bytes()));
}

#[test]
fn gen_eval_tasks_writes_five_files() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["gen", "--style", "eval-tasks", "--out", p(dir.path())]);
    let mut names: Vec<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".jsonl"))
        .collect();
    names.sort();
    assert_eq!(
        names,
        ["indirect.jsonl", "multiple_choice.jsonl", "qa.jsonl", "reverse_qa.jsonl", "two_hop.jsonl"]
    );
}

#[test]
fn missing_registry_is_an_io_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope/registry.json");
    let out = factlab(&["gen", "--style", "narrative", "--registry", p(&missing), "--out", p(dir.path())]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains(p(&missing)));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&factlab(&["gen", "--style", "sonnet", "--out", "x"])), 2);
    assert_eq!(code(&factlab(&["frobnicate"])), 2);
}

#[test]
fn refuses_to_overwrite_differing_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = p(dir.path());
    ok(&["gen", "--style", "referencing", "--out", d]);
    // Identical content is not a conflict.
    ok(&["gen", "--style", "referencing", "--out", d]);
    let before = fs::read(dir.path().join("referencing.jsonl")).unwrap();
    let out = factlab(&["gen", "--style", "referencing", "--seed", "99", "--out", d]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--force"));
    assert_eq!(fs::read(dir.path().join("referencing.jsonl")).unwrap(), before);
    ok(&["gen", "--style", "referencing", "--seed", "99", "--force", "--out", d]);
    assert_ne!(fs::read(dir.path().join("referencing.jsonl")).unwrap(), before);
}

/// gen, vocab, pretrain, train, eval, probe, ablate and report on a tiny
/// model, plus a lineage failure.
#[test]
fn tiny_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let data = root.join("data");
    let tasks = root.join("tasks");
    ok(&["gen", "--style", "narrative", "--out", p(&data)]);
    ok(&["gen", "--style", "eval-tasks", "--out", p(&tasks)]);
    let narrative = data.join("narrative.jsonl");
    ok(&[
        "vocab",
        "--corpus",
        p(&narrative),
        p(&tasks.join("qa.jsonl")),
        p(&tasks.join("multiple_choice.jsonl")),
        p(&tasks.join("reverse_qa.jsonl")),
        p(&tasks.join("indirect.jsonl")),
        p(&tasks.join("two_hop.jsonl")),
        "--out",
        p(&data),
    ]);
    let vocab = data.join("vocab.json");
    let shape = root.join("shape.json");
    fs::write(&shape, r#"{"n_layers":3,"d_model":8,"n_heads":2,"d_ff":16,"init_seed":1}"#).unwrap();
    let base_a = root.join("a");
    let base_b = root.join("b");
    // Same architecture, different shuffling.
    for (seed, out) in [("1", &base_a), ("2", &base_b)] {
        ok(&[
            "pretrain", "--corpus", p(&narrative), "--vocab", p(&vocab), "--model", p(&shape),
            "--epochs", "1", "--seed", seed, "--max-seq-len", "512", "--out", p(out),
        ]);
    }
    let ft = root.join("ft");
    ok(&[
        "train", "--base", p(&base_a.join("base.flab")), "--corpus", p(&narrative), "--vocab",
        p(&vocab), "--epochs", "1", "--out", p(&ft),
    ]);
    let loss = fs::read_to_string(ft.join("finetuned.loss.csv")).unwrap();
    assert!(loss.starts_with("step,epoch,lr,loss,floor"));

    let qa = tasks.join("qa.jsonl");
    let ev = root.join("eval");
    ok(&[
        "eval", "--checkpoint", p(&ft.join("finetuned.flab")), "--vocab", p(&vocab), "--evalset",
        p(&qa), "--k", "2", "--max-new-tokens", "2", "--out", p(&ev),
    ]);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(ev.join("eval.json")).unwrap()).unwrap();
    assert_eq!(report["metadata"]["k"], 2);

    let pr = root.join("probe");
    ok(&["probe", "--checkpoint", p(&ft.join("finetuned.flab")), "--vocab", p(&vocab), "--out", p(&pr)]);
    ok(&[
        "report", "--eval", &format!("narrative={}", p(&ev.join("eval.json"))), "--probe",
        &format!("narrative={}", p(&pr.join("probe.json"))), "--out", p(&root.join("report")),
    ]);
    assert!(root.join("report/report.txt").exists());

    // A finetune of base A is not a delta of base B.
    let out = factlab(&[
        "ablate", "--base", p(&base_b.join("base.flab")), "--finetuned", p(&ft.join("finetuned.flab")),
        "--vocab", p(&vocab), "--evalset", p(&qa), "--out", p(&root.join("abl")),
    ]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not a delta of this base"));
}
