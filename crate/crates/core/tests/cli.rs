//! End-to-end runs of the `dentvqa` binary.

use std::path::Path;
use std::process::{Command, Output};

use dentvqa::dataset::{read_corpus, write_corpus};

fn dentvqa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dentvqa")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = dentvqa(args);
    assert!(out.status.success(), "{args:?} exited {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Annotations for three patients built into a bilingual corpus.
fn corpus(dir: &Path) -> std::path::PathBuf {
    let ann = dir.join("ann.json");
    let corpus = dir.join("corpus.jsonl");
    ok(&["synth", "annotations", "--patients", "3", "--seed", "4", "--out", s(&ann)]);
    ok(&["build", "--annotations", s(&ann), "--seed", "4", "--out", s(&corpus)]);
    corpus
}

#[test]
fn eval_against_a_local_endpoint_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let full = corpus(dir.path());
    let small = dir.path().join("small.jsonl");
    let records = read_corpus(&full).unwrap();
    write_corpus(&small, &records[..20]).unwrap();

    let ep = dir.path().join("ep");
    ok(&["synth", "endpoint", "--corpus", s(&small), "--flip-rate", "0", "--out", s(&ep)]);
    let report = dir.path().join("report.json");
    let plots = dir.path().join("plots");
    let out = ok(&[
        "--json",
        "eval",
        "--corpus",
        s(&small),
        "--endpoint",
        s(&ep.join("endpoint.toml")),
        "--report",
        s(&report),
        "--plots",
        s(&plots),
    ]);
    let result: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(result["exit_code"], 0);
    assert_eq!(result["data"]["records"], 20);
    assert_eq!(result["data"]["failed"], serde_json::json!({}));
    if let Some(acc) = result["data"]["accuracy"].as_f64() {
        assert_eq!(acc, 1.0);
    }
    assert!(report.exists());
    assert!(report.with_extension("csv").exists());
    assert!(std::fs::read_dir(&plots).unwrap().count() > 0);

    let replot = dir.path().join("replot");
    ok(&["plot", "--report", s(&report), "--out", s(&replot)]);
    assert!(std::fs::read_dir(&replot).unwrap().count() > 0);
}

#[test]
fn two_step_protocol_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let full = corpus(dir.path());
    let ep = dir.path().join("ep");
    ok(&["synth", "endpoint", "--corpus", s(&full), "--flip-rate", "0.5", "--seed", "1", "--out", s(&ep)]);
    let report = dir.path().join("two.json");
    let out = ok(&[
        "eval",
        "--corpus",
        s(&full),
        "--endpoint",
        s(&ep.join("endpoint.toml")),
        "--protocol",
        "two-step",
        "--report",
        s(&report),
    ]);
    assert!(out.contains("accuracy"), "{out}");
    assert!(report.exists());
}

#[test]
fn build_names_a_missing_question_template() {
    let dir = tempfile::tempdir().unwrap();
    let ann = dir.path().join("ann.json");
    ok(&["synth", "annotations", "--patients", "2", "--out", s(&ann)]);
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/config/registry.toml")).unwrap();
    let broken = text.replacen(
        "questions_en = [\"Is there caries in this image?\", \"Does this image show caries?\"]",
        "questions_en = []",
        1,
    );
    assert_ne!(broken, text);
    let reg = dir.path().join("registry.toml");
    std::fs::write(&reg, broken).unwrap();

    let out =
        dentvqa(&["build", "--annotations", s(&ann), "--registry", s(&reg), "--out", s(&dir.path().join("c.jsonl"))]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("caries"), "{err}");
    assert!(!dir.path().join("c.jsonl").exists());
}

#[test]
fn screening_an_all_correct_cohort_scores_one() {
    let dir = tempfile::tempdir().unwrap();
    for (mode, strategy) in [("home", "majority"), ("hospital", "matching")] {
        let cohort = dir.path().join(format!("{mode}.jsonl"));
        ok(&["synth", "cohort", "--mode", mode, "--patients", "25", "--error-rate", "0", "--out", s(&cohort)]);
        let voted = dir.path().join(format!("{mode}.voted.jsonl"));
        let out = ok(&["screen", "--cohort", s(&cohort), "--mode", mode, "--strategy", strategy, "--voted", s(&voted)]);
        assert!(out.contains("matching score 1.0000 over 25 patients"), "{out}");
        assert!(voted.exists());
    }
}

#[test]
fn help_exits_zero_for_every_subcommand() {
    let subcommands: &[&[&str]] = &[
        &[],
        &["build"],
        &["eval"],
        &["screen"],
        &["study"],
        &["study", "serve"],
        &["study", "plan"],
        &["study", "export"],
        &["train-toy"],
        &["plot"],
        &["synth"],
        &["synth", "annotations"],
        &["synth", "cohort"],
        &["synth", "endpoint"],
        &["synth", "study-items"],
    ];
    for sub in subcommands {
        let mut args = sub.to_vec();
        args.push("--help");
        let out = ok(&args);
        assert!(out.contains("Usage"), "{args:?}: {out}");
    }
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(dentvqa(&[]).status.code(), Some(2));
    assert_eq!(dentvqa(&["build", "--annotations", "a.json"]).status.code(), Some(2));
    assert_eq!(dentvqa(&["screen", "--cohort", "c", "--strategy", "unanimous"]).status.code(), Some(2));
}

#[test]
fn same_seed_same_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let run = |tag: &str, seed: &str| {
        let ann = dir.path().join(format!("{tag}.json"));
        let corpus = dir.path().join(format!("{tag}.jsonl"));
        ok(&["synth", "annotations", "--patients", "4", "--seed", seed, "--out", s(&ann)]);
        ok(&["build", "--annotations", s(&ann), "--seed", seed, "--fraction", "0.5", "--out", s(&corpus)]);
        (std::fs::read(ann).unwrap(), std::fs::read(corpus).unwrap())
    };
    let a = run("a", "9");
    let b = run("b", "9");
    let c = run("c", "10");
    assert_eq!(a, b);
    assert_ne!(a.1, c.1);

    let trace = |tag: &str| {
        let p = dir.path().join(format!("{tag}.trace.json"));
        ok(&["train-toy", "--stage", "2", "--samples", "40", "--epochs", "2", "--seed", "3", "--trace", s(&p)]);
        std::fs::read(p).unwrap()
    };
    assert_eq!(trace("x"), trace("y"));
}

#[test]
fn study_plan_and_export_from_a_log() {
    let dir = tempfile::tempdir().unwrap();
    let items = dir.path().join("items.jsonl");
    ok(&["synth", "study-items", "--per-task", "100", "--out", s(&items)]);
    let out = ok(&["--json", "study", "plan", "--items", s(&items), "--seed", "1"]);
    let v: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(v["exit_code"], 0);
    assert!(out.contains("3312"), "{out}");

    let missing = dentvqa(&["study", "export", "--log", s(&dir.path().join("none.jsonl")), "--export", s(dir.path())]);
    assert_eq!(missing.status.code(), Some(1));
}
