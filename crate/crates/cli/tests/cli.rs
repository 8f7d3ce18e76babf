use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

fn lingolab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lingolab"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn synth(dir: &Path) {
    let out = lingolab(&[
        "synth",
        dir.to_str().unwrap(),
        "--words",
        "30000",
        "--vocab",
        "200",
        "--similar",
        "3",
        "--dissimilar",
        "3",
        "--seed",
        "4",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn write_config(dir: &Path, preset: &str, mono: &[usize], multi: &[usize], seeds: &[u64]) -> String {
    let config = serde_json::json!({
        "pool": ["qaa_Latn", "qab_Latn", "qac_Latn", "qad_Latn", "qae_Cyrl", "qaf_Cyrl", "qag_Cyrl"],
        "target_languages": ["qaa_Latn"],
        "mono_budgets": mono,
        "multi_budgets": multi,
        "conditions": ["similar"],
        "k_added": 3,
        "model_presets": [preset],
        "seeds": seeds,
        "eval_size": 2000,
        "paths": {"corpus_dir": "corpora", "features": "features.csv", "tokenizer_dir": "tokenizers"},
        "tokenizer": {"max_vocab": 500, "sample_lines": 2000},
    });
    let path = dir.join("grid.json");
    fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

fn run_ids(store: &Path) -> Vec<String> {
    fs::read_to_string(store)
        .unwrap_or_default()
        .lines()
        .filter_map(|l| serde_json::from_str::<serde_json::Value>(l).ok())
        .map(|v| v["run_id"].as_str().unwrap().to_string())
        .collect()
}

#[test]
fn synth_select_grid_and_report() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    assert!(dir.path().join("genomes.jsonl").exists());
    let config = write_config(dir.path(), "ngram2", &[2000, 4000, 8000, 16000], &[0, 6000], &[0, 1]);

    let out = lingolab(&["select", "qaa_Latn", "--config", &config, "--k", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let picked: Vec<String> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| l.split('\t').next().unwrap().to_string())
        .collect();
    assert_eq!(picked.len(), 3);
    assert!(picked.iter().all(|l| l.ends_with("_Latn")), "{picked:?}");

    let out = lingolab(&["run-grid", "--config", &config]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(run_ids(&dir.path().join("results.jsonl")).len(), 16);

    let report_dir = dir.path().join("report");
    let out = lingolab(&["report", report_dir.to_str().unwrap(), "--config", &config]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let refs = fs::read_to_string(report_dir.join("references.csv")).unwrap();
    assert_eq!(refs.lines().count(), 5);
    for name in ["runs.csv", "conditions.csv", "similarity.csv", "correlations.csv"] {
        assert!(report_dir.join(name).exists(), "{name}");
    }
    // one condition means identical added sets, so no partition is possible
    assert!(!report_dir.join("partition.csv").exists());
    let notes = fs::read_to_string(report_dir.join("notes.txt")).unwrap();
    assert!(notes.contains("variance partition"), "{notes}");
}

#[test]
fn killed_grid_resumes_without_duplicates() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let config = write_config(dir.path(), "micro", &[2000, 4000], &[0, 4000], &[0, 1]);
    let store = dir.path().join("results.jsonl");

    let mut child = Command::new(env!("CARGO_BIN_EXE_lingolab"))
        .args(["run-grid", "--config", &config])
        .env("RUST_LOG", "warn")
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let start = Instant::now();
    // past the baseline group, so the kill lands mid-grid
    while run_ids(&store).len() < 3 && start.elapsed() < Duration::from_secs(300) {
        if child.try_wait().unwrap().is_some() {
            break;
        }
        std::thread::sleep(Duration::from_millis(20));
    }
    child.kill().ok();
    child.wait().unwrap();
    let before = run_ids(&store).len();
    assert!(before < 8, "grid finished before the kill");

    let out = lingolab(&["run-grid", "--config", &config]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let ids = run_ids(&store);
    assert_eq!(ids.len(), 8, "killed after {before} records");
    assert_eq!(ids.iter().collect::<BTreeSet<_>>().len(), 8);

    // a completed grid does no more work
    lingolab(&["run-grid", "--config", &config]);
    assert_eq!(run_ids(&store).len(), 8);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = lingolab(&["run-grid", "--config", dir.path().join("none.json").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(1));

    synth(dir.path());
    let bad = write_config(dir.path(), "ngram2", &[2000], &[0], &[]);
    let out = lingolab(&["run-grid", "--config", &bad]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seeds"));

    // the larger budget exceeds the corpus
    let partial = write_config(dir.path(), "ngram2", &[2000, 50_000_000], &[0], &[0]);
    assert_eq!(lingolab(&["run-grid", "--config", &partial]).status.code(), Some(2));
    // failures stay recorded, so a rerun still reports them
    assert_eq!(lingolab(&["run-grid", "--config", &partial]).status.code(), Some(2));
}

#[test]
fn prep_tokenize_train_eval_fit() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let d = |p: &str| dir.path().join(p).to_str().unwrap().to_string();

    let raw = dir.path().join("raw.txt");
    let mut text = fs::read_to_string(d("corpora/qaa_Latn.txt")).unwrap();
    text.push_str(&text.clone());
    fs::write(&raw, text).unwrap();
    let out = lingolab(&["prep", raw.to_str().unwrap(), &d("clean.txt"), "--lang", "qaa_Latn"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(fs::metadata(d("clean.txt")).unwrap().len() < fs::metadata(&raw).unwrap().len());

    let out = lingolab(&["tokenize", &d("corpora/qaa_Latn.txt"), &d("qaa.vocab"), "--lang", "qaa_Latn", "--max-vocab", "400"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let common = ["--lang", "qaa_Latn", "--tokenizer", &d("qaa.vocab"), "--mono-tokens", "2000", "--eval-size", "2000"];
    let (ckpt, corpus) = (d("m.ckpt"), d("corpora/qaa_Latn.txt"));
    let mut args = vec!["train", &corpus, "--output", &ckpt, "--epochs", "2"];
    args.extend_from_slice(&common);
    let trained = lingolab(&args);
    assert!(trained.status.success(), "{}", String::from_utf8_lossy(&trained.stderr));
    assert!(dir.path().join("m.loss.csv").exists());

    let mut args = vec!["eval", &ckpt, &corpus];
    args.extend_from_slice(&common);
    let evaluated = lingolab(&args);
    assert!(evaluated.status.success(), "{}", String::from_utf8_lossy(&evaluated.stderr));
    let a: serde_json::Value = serde_json::from_slice(&trained.stdout).unwrap();
    let b: serde_json::Value = serde_json::from_slice(&evaluated.stdout).unwrap();
    assert_eq!(a, b);

    // two curves on a known power law
    let mut points = String::from("language,model_preset,log10_tokens,relative_ll\n");
    for (lang, c) in [("qaa_Latn", 2.0), ("qab_Latn", 2.5)] {
        for x in [5.0f64, 6.0, 7.0, 8.0, 9.0] {
            points.push_str(&format!("{lang},micro,{x},{}\n", -3.0 * x.powf(-0.5) + c));
        }
    }
    fs::write(d("points.csv"), points).unwrap();
    let out = lingolab(&["fit", &d("points.csv"), &d("fits.csv"), "--priors-out", &d("priors.json")]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let fits = fs::read_to_string(d("fits.csv")).unwrap();
    assert_eq!(fits.lines().count(), 3);
    assert!(fits.lines().skip(1).all(|l| l.contains(",free,")), "{fits}");
    assert!(dir.path().join("priors.json").exists());
}
