use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Stdio};

use fairgap::metrics::BiasReport;
use fairgap_cli::manifest::{RunManifest, RunStatus};
use fairgap_cli::output::sha256_hex;

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn fairgap_with_stdin(dir: &Path, args: &[&str], stdin: &str) -> Run {
    let mut child = Command::new(env!("CARGO_BIN_EXE_fairgap"))
        .args(args)
        .current_dir(dir)
        .env_remove("FAIRGAP_LEXICON")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(stdin.as_bytes()).unwrap();
    let out = child.wait_with_output().unwrap();
    Run {
        code: out.status.code().unwrap(),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

fn fairgap(dir: &Path, args: &[&str]) -> Run {
    fairgap_with_stdin(dir, args, "")
}

fn ok(run: Run) -> Run {
    assert_eq!(run.code, 0, "stderr: {}", run.stderr);
    run
}

fn report(path: &Path) -> BiasReport {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

/// Synthesize a small corpus and train a model on it inside `dir`.
fn corpus_and_model(dir: &Path, synth: &str) {
    fs::write(dir.join("synth.json"), synth).unwrap();
    ok(fairgap(dir, &["synth", "--config", "synth.json", "--out", "corpus.jsonl"]));
    ok(fairgap(dir, &["train", "--input", "corpus.jsonl", "--classes", "class0,class1", "--out", "model.json"]));
}

const SMALL: &str = r#"{"docs_per_class": 150, "proxy_strength": 0.0, "seed": 5}"#;

#[test]
fn audit_writes_json_csv_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    corpus_and_model(d, SMALL);
    ok(fairgap(d, &["audit", "--model", "model.json", "--input", "corpus.jsonl"]));

    let r = report(&d.join("report.json"));
    assert!(!r.has_missing());
    let csv = fs::read_to_string(d.join("report.csv")).unwrap();
    // 2 classes x 4 per-class kinds, 4 RMS rows, accuracy, AUC.
    assert_eq!(csv.lines().count() - 1, 2 * 4 + 4 + 1 + 1);

    let manifest_name = r.metadata.manifest.clone().unwrap();
    let m = RunManifest::load(&d.join(&manifest_name)).unwrap();
    assert_eq!(m.command, "audit");
    assert_eq!(m.status, RunStatus::Complete);
    assert_eq!(m.inputs.len(), 2);
    for out in &m.outputs {
        assert_eq!(out.sha256, sha256_hex(&fs::read(d.join(&out.path)).unwrap()), "{}", out.path);
    }
    assert_eq!(m.config_digest.len(), 64);
}

#[test]
fn audit_with_positive_class_adds_ppr_rows() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    corpus_and_model(d, SMALL);
    ok(fairgap(d, &["audit", "--model", "model.json", "--input", "corpus.jsonl", "--positive-class", "1", "--name", "ppr"]));
    let csv = fs::read_to_string(d.join("ppr.csv")).unwrap();
    assert_eq!(csv.lines().count() - 1, 2 * 4 + 2 + 6 + 1 + 1);
    assert!(report(&d.join("ppr.json")).cg_ppr.unwrap().value.is_some());
}

#[test]
fn audit_with_single_gender_class_exits_2_and_still_writes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    corpus_and_model(d, SMALL);
    let lines = [
        r#"{"id":"1","text":"She c0w1 her c0w2 herself.","label":"class0","gender":"female"}"#,
        r#"{"id":"2","text":"He c0w1 his c0w2 himself.","label":"class0","gender":"male"}"#,
        r#"{"id":"3","text":"She c1w1 her c1w2 herself.","label":"class1","gender":"female"}"#,
        r#"{"id":"4","text":"Ms Vance c1w4 her c1w5.","label":"class1","gender":"female"}"#,
    ];
    fs::write(d.join("skewed.jsonl"), lines.join("\n")).unwrap();
    let run = fairgap(d, &["audit", "--model", "model.json", "--input", "skewed.jsonl"]);
    assert_eq!(run.code, 2, "{}", run.stderr);
    let r = report(&d.join("report.json"));
    assert!(r.has_missing());
    assert!(r.sg_tpr[1].missing.is_some());
}

#[test]
fn hard_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    corpus_and_model(d, SMALL);
    fs::write(d.join("other.jsonl"), r#"{"id":"1","text":"she","label":"zebra","gender":"female"}"#).unwrap();
    let mismatch = fairgap(d, &["audit", "--model", "model.json", "--input", "other.jsonl"]);
    assert_eq!(mismatch.code, 1);
    assert!(mismatch.stderr.contains("does not match the model's classes"), "{}", mismatch.stderr);
    assert!(!d.join("report.json").exists());

    assert_eq!(fairgap(d, &["audit", "--model", "missing.json", "--input", "corpus.jsonl"]).code, 1);
    assert_eq!(fairgap(d, &["debias", "--input", "corpus.jsonl", "--method", "bogus"]).code, 1);
    assert_eq!(fairgap(d, &["synth", "--lexicon", "nope.tsv"]).code, 1);
}

#[test]
fn lexicon_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("lex.tsv"), "he\tmale\tshe\tbi\n").unwrap();
    fs::write(d.join("in.jsonl"), r#"{"id":"1","text":"she saw her","label":"a","gender":"female"}"#).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_fairgap"))
        .args(["perturb", "--target", "male", "--input", "in.jsonl", "--out", "out.jsonl"])
        .current_dir(d)
        .env("FAIRGAP_LEXICON", "lex.tsv")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    // The custom lexicon has no rule for "her".
    assert!(fs::read_to_string(d.join("out.jsonl")).unwrap().contains("he saw her"));
    let m = RunManifest::load(&d.join("out.manifest.json")).unwrap();
    assert!(m.inputs.iter().any(|i| i.path == "lex.tsv"));
}

#[test]
fn perturb_streams_stdin_to_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let input = concat!(
        r#"{"id":"a","text":"Mr. Smith praised his work","label":"x","gender":"male"}"#,
        "\n",
        r#"{"id":"b","text":"nothing here","label":"y"}"#,
        "\n"
    );
    let run = ok(fairgap_with_stdin(dir.path(), &["perturb", "--target", "flip"], input));
    let lines: Vec<serde_json::Value> = run.stdout.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["text"], "Ms. Smith praised her work");
    assert_eq!(lines[0]["gender"], "female");
    assert_eq!(lines[0]["source_id"], "a");
    assert_eq!(lines[1]["text"], "nothing here");
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn debias_leaves_its_input_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    corpus_and_model(d, SMALL);
    let before = fs::read(d.join("corpus.jsonl")).unwrap();
    ok(fairgap(d, &["debias", "--input", "corpus.jsonl", "--method", "os-cda", "--seed", "3", "--out", "os.jsonl"]));
    assert_eq!(fs::read(d.join("corpus.jsonl")).unwrap(), before);
    let out = fs::read_to_string(d.join("os.jsonl")).unwrap();
    assert!(out.lines().count() > before.iter().filter(|b| **b == b'\n').count());
    let m = RunManifest::load(&d.join("os.manifest.json")).unwrap();
    assert_eq!(m.seeds["debias"], 3);

    let clash = fairgap(d, &["debias", "--input", "corpus.jsonl", "--method", "cda", "--out", "corpus.jsonl"]);
    assert_eq!(clash.code, 1);
    assert_eq!(fs::read(d.join("corpus.jsonl")).unwrap(), before);
}

#[test]
fn eval_reports_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    corpus_and_model(d, SMALL);
    ok(fairgap(d, &["eval", "--model", "model.json", "--input", "corpus.jsonl", "--format", "json"]));
    let v: serde_json::Value = serde_json::from_slice(&fs::read(d.join("eval.json")).unwrap()).unwrap();
    assert_eq!(v["documents"], 300);
    let acc = v["accuracy"].as_f64().unwrap();
    assert!((0.5..=1.0).contains(&acc), "{acc}");
    ok(fairgap(d, &["eval", "--model", "model.json", "--input", "corpus.jsonl"]));
    assert!(fs::read_to_string(d.join("eval.csv")).unwrap().starts_with("metric,value\ndocuments,300\n"));
}

#[test]
fn adjusting_by_zero_removes_causal_gaps() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    corpus_and_model(d, SMALL);
    ok(fairgap(d, &["adjust-weights", "--model", "model.json", "--w", "0", "--out", "blind.json"]));
    ok(fairgap(d, &["audit", "--model", "blind.json", "--input", "corpus.jsonl"]));
    let r = report(&d.join("report.json"));
    assert!(r.cg_tpr.iter().chain(&r.cg_fpr).all(|e| e.value == Some(0.0)));
}

fn sweep_rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn sweep_at_zero_has_no_causal_gap() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    corpus_and_model(d, SMALL);
    ok(fairgap(d, &["sweep", "--input", "corpus.jsonl", "--model", "model.json", "--grid", "0"]));
    let rows = sweep_rows(&fs::read_to_string(d.join("sweep.csv")).unwrap());
    let cg: Vec<_> = rows.iter().filter(|r| r[1].starts_with("cg_") || r[1].starts_with("rms_cg_")).collect();
    assert_eq!(cg.len(), 2 * 2 + 2);
    assert!(cg.iter().all(|r| r[3] == "0"), "{cg:?}");
}

#[test]
fn sweep_at_one_matches_the_audit() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    corpus_and_model(d, SMALL);
    ok(fairgap(d, &["audit", "--model", "model.json", "--input", "corpus.jsonl", "--positive-class", "1"]));
    ok(fairgap(d, &["sweep", "--input", "corpus.jsonl", "--model", "model.json", "--grid", "1", "--positive-class", "1"]));
    let audit = fs::read_to_string(d.join("report.csv")).unwrap();
    let sweep = fs::read_to_string(d.join("sweep.csv")).unwrap();
    let stripped: Vec<&str> = sweep.lines().skip(1).map(|l| l.strip_prefix("1,").unwrap()).collect();
    let audit_rows: Vec<&str> = audit.lines().skip(1).collect();
    assert_eq!(stripped, audit_rows);
}

#[test]
fn sweep_sign_table_flips_between_minus_and_plus_three() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    corpus_and_model(d, SMALL);
    ok(fairgap(d, &["sweep", "--input", "corpus.jsonl", "--model", "model.json", "--grid", "-3,3"]));
    let rows = sweep_rows(&fs::read_to_string(d.join("sweep.csv")).unwrap());
    let value = |w: &str, class: &str| -> f64 {
        rows.iter()
            .find(|r| r[0] == w && r[1] == "cg_tpr" && r[2] == class)
            .map(|r| r[3].parse().unwrap())
            .unwrap()
    };
    let mut compared = 0;
    for class in ["class0", "class1"] {
        let (lo, hi) = (value("-3", class), value("3", class));
        if lo.abs() > 0.01 && hi.abs() > 0.01 {
            assert!(lo * hi < 0.0, "{class}: {lo} vs {hi}");
            compared += 1;
        }
    }
    assert!(compared > 0);
}

#[test]
fn sweep_trains_when_no_model_is_given_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    corpus_and_model(d, SMALL);
    let args = ["sweep", "--input", "corpus.jsonl", "--grid", "0,0.5,1,2", "--max-iters", "300", "--name", "a"];
    ok(fairgap(d, &args));
    let first = fs::read(d.join("a.csv")).unwrap();
    ok(fairgap(d, &args));
    assert_eq!(fs::read(d.join("a.csv")).unwrap(), first);
    assert!(d.join("a.model.json").exists());
    let rows = sweep_rows(&String::from_utf8(first).unwrap());
    for w in ["0", "0.5", "1", "2"] {
        assert_eq!(rows.iter().filter(|r| r[0] == w).count(), 2 * 4 + 4 + 1 + 1);
    }
    ok(fairgap(d, &["sweep", "--input", "corpus.jsonl", "--model", "model.json", "--grid", "1", "--format", "json"]));
    let v: serde_json::Value = serde_json::from_slice(&fs::read(d.join("sweep.json")).unwrap()).unwrap();
    assert_eq!(v[0]["w"], 1.0);
}

const PIPELINE: &str = r#"{
  "source": {"synth": {"docs_per_class": 300, "seed": 8}},
  "seed": 8,
  "plans": [{"method": "none"}, {"method": "cda"}],
  "train": {"max_iters": 2000},
  "report": {"positive_class": 1}
}"#;

#[test]
fn pipeline_cda_shrinks_the_causal_ppr_gap() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("exp.json"), PIPELINE).unwrap();
    ok(fairgap(d, &["pipeline", "--config", "exp.json", "--out-dir", "run1"]));
    let none = report(&d.join("run1/plans/none/report.json")).cg_ppr.unwrap().value.unwrap();
    let cda = report(&d.join("run1/plans/cda/report.json")).cg_ppr.unwrap().value.unwrap();
    assert!(cda.abs() < none.abs(), "cda {cda} none {none}");

    let csv = fs::read_to_string(d.join("run1/comparison.csv")).unwrap();
    assert!(csv.starts_with("plan,metric,value\n"));
    // Per plan: six RMS rows, accuracy, AUC.
    assert_eq!(csv.lines().count() - 1, 2 * 8);
    for split in ["train", "val", "test"] {
        assert!(d.join(format!("run1/data/{split}.jsonl")).exists());
    }
    let m = RunManifest::load(&d.join("run1/manifest.json")).unwrap();
    assert_eq!(m.status, RunStatus::Complete);
    assert_eq!(m.plans.len(), 2);
    assert_eq!(m.seeds["split"], 8);

    ok(fairgap(d, &["pipeline", "--config", "exp.json", "--out-dir", "run2"]));
    for f in ["comparison.csv", "plans/cda/report.json", "plans/none/model.json", "data/test.jsonl"] {
        assert_eq!(fs::read(d.join("run1").join(f)).unwrap(), fs::read(d.join("run2").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn empty_pipeline_writes_only_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("exp.json"), r#"{"source": {"synth": {}}, "plans": []}"#).unwrap();
    ok(fairgap(d, &["pipeline", "--config", "exp.json", "--out-dir", "out"]));
    let names: Vec<_> = fs::read_dir(d.join("out")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names, vec!["manifest.json"]);
}

#[test]
fn failing_plan_is_isolated_and_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut lines = Vec::new();
    for i in 0..40 {
        let (label, text, gender) = match i % 3 {
            0 => ("a", "He wrote code himself", "male"),
            1 => ("a", "She wrote code herself", "female"),
            _ => ("b", "She tended the ward", "female"),
        };
        lines.push(format!(r#"{{"id":"{i}","text":"{text}","label":"{label}","gender":"{gender}"}}"#));
    }
    fs::write(d.join("data.jsonl"), lines.join("\n")).unwrap();
    let cfg = r#"{
      "source": {"jsonl": {"path": "data.jsonl"}},
      "plans": [{"method": "us"}, {"method": "cda"}],
      "train": {"max_iters": 200}
    }"#;
    fs::write(d.join("exp.json"), cfg).unwrap();
    let run = fairgap(d, &["pipeline", "--config", "exp.json", "--out-dir", "out"]);
    assert_eq!(run.code, 1, "{}", run.stderr);
    let m = RunManifest::load(&d.join("out/manifest.json")).unwrap();
    assert_eq!(m.status, RunStatus::Partial);
    assert!(!m.plans[0].completed && m.plans[0].error.is_some());
    assert!(m.plans[1].completed);
    assert!(d.join("out/plans/cda/report.json").exists());
    let csv = fs::read_to_string(d.join("out/comparison.csv")).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.starts_with("cda,")));
}
