//! End-to-end runner behaviour on a tiny synthetic task: hash chain,
//! write-once outputs, report formats and sweep output.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use seqadv::error::Error;
use seqadv::evaluation::MetricsReport;
use seqadv::runner::{
    cmd_attack, cmd_evaluate, cmd_sweep, cmd_train, evaluate_results, load_run, read_results, report_paths,
    sweep_rows, write_results, ExperimentConfig, LmKind,
};

const TINY: &str = r#"
seed = 3

[dataset]
source = "synthetic"
n_classes = 2
vocab_size = 10
min_len = 4
max_len = 7
n_train = 160
n_test = 40

[dataset.rule]
kind = "marker_presence"
marker = 3

[seq2seq]
d_emb = 8
d_hidden = 16
epochs = 2
batch_size = 16

[surrogate]
d_emb = 8
d_hidden = 8
epochs = 2
state_hidden = 8
state_epochs = 2

[deep_lev]
d_hidden = 16
d_out = 8
n_pairs = 400
epochs = 2

[lm]
d_emb = 8
d_hidden = 8
epochs = 1

[attack]
method = "random_walk"
n = 6
n_examples = 12
sigma_scale = 1.0

[sweep]
strategy = "grid"
budget = 3
grid_levels = 2
"#;

fn tiny(dir: &Path, extra: &[&str]) -> ExperimentConfig {
    let mut overrides = vec![format!("output_dir={:?}", dir.display().to_string())];
    overrides.extend(extra.iter().map(|s| s.to_string()));
    ExperimentConfig::from_toml_str(TINY, &overrides).unwrap()
}

struct Shared {
    _tmp: tempfile::TempDir,
    dir: PathBuf,
    results: PathBuf,
}

fn shared() -> &'static Shared {
    static RUN: OnceLock<Shared> = OnceLock::new();
    RUN.get_or_init(|| {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("run");
        let cfg = tiny(&dir, &[]);
        cmd_train(&cfg).unwrap();
        let results = cmd_attack(&cfg, true, None).unwrap();
        Shared { _tmp: tmp, dir, results }
    })
}

fn root_cause(e: &Error) -> &Error {
    match e {
        Error::Stage { source, .. } => root_cause(source),
        e => e,
    }
}

fn copy_dir(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for entry in fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let dest = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_dir(&entry.path(), &dest);
        } else {
            fs::copy(entry.path(), dest).unwrap();
        }
    }
}

#[test]
fn training_writes_a_manifest_and_refuses_to_overwrite() {
    let s = shared();
    let run = load_run(&s.dir, Some(&tiny(&s.dir, &[]))).unwrap();
    let mut kinds: Vec<&str> = run.manifest.artifacts.iter().map(|a| a.name.as_str()).collect();
    kinds.sort_unstable();
    for name in ["deep_lev", "lm", "seq2seq", "surrogate", "target"] {
        assert!(kinds.contains(&name), "{name} missing from {kinds:?}");
    }
    let err = cmd_train(&tiny(&s.dir, &[])).err().expect("second train must fail");
    assert!(matches!(root_cause(&err), Error::OutputExists(_)), "{err}");
}

#[test]
fn attack_lines_carry_traces_and_are_reproducible() {
    let s = shared();
    let lines = read_results(&s.results).unwrap();
    assert_eq!(lines.len(), 12);
    for (i, l) in lines.iter().enumerate() {
        assert_eq!(l.result.index, i);
        assert_eq!(l.result.trace.len(), 6);
    }
    let again = s.dir.join("again.jsonl");
    cmd_attack(&tiny(&s.dir, &[]), true, Some(&again)).unwrap();
    assert_eq!(fs::read(&s.results).unwrap(), fs::read(&again).unwrap());

    let err = cmd_attack(&tiny(&s.dir, &[]), true, Some(&again)).unwrap_err();
    assert!(matches!(root_cause(&err), Error::OutputExists(_)), "{err}");
}

#[test]
fn attack_refuses_checkpoints_from_another_training_config() {
    let s = shared();
    let cfg = tiny(&s.dir, &["seq2seq.epochs=3"]);
    let err = cmd_attack(&cfg, false, Some(&s.dir.join("never.jsonl"))).unwrap_err();
    assert!(matches!(root_cause(&err), Error::HashChain(_)), "{err}");
    assert!(!s.dir.join("never.jsonl").exists());
}

#[test]
fn evaluate_writes_agreeing_json_and_csv() {
    let s = shared();
    // Evaluate a private copy so report files don't collide with other tests.
    let path = s.dir.join("eval_copy.jsonl");
    fs::copy(&s.results, &path).unwrap();
    let report = cmd_evaluate(&tiny(&s.dir, &[]), &path).unwrap();
    let [json, csv, scatter] = report_paths(&path);

    let from_json: MetricsReport = serde_json::from_str(&fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(from_json, report);
    let mut rdr = csv::Reader::from_path(csv).unwrap();
    let rows: Vec<MetricsReport> = rdr.deserialize().collect::<Result<_, _>>().unwrap();
    assert_eq!(rows, vec![report.clone()]);
    let scatter_rows = csv::Reader::from_path(scatter).unwrap().records().count();
    assert_eq!(scatter_rows, report.n_examples);

    let err = cmd_evaluate(&tiny(&s.dir, &[]), &path).unwrap_err();
    assert!(matches!(root_cause(&err), Error::OutputExists(_)), "{err}");
}

#[test]
fn identity_attack_reports_no_damage() {
    let s = shared();
    let run = load_run(&s.dir, None).unwrap();
    let results: Vec<_> = read_results(&s.results)
        .unwrap()
        .into_iter()
        .map(|l| {
            let mut r = l.result;
            r.adversarial = r.original.clone();
            r.wer = 0;
            r
        })
        .collect();
    let report = evaluate_results(&run, &results, LmKind::Uniform, "identity").unwrap();
    assert_eq!(report.accuracy_drop, 0.0);
    assert_eq!(report.roc_auc_drop, 0.0);
    assert_eq!(report.probability_drop, 0.0);
    assert_eq!(report.normalized_wer, 0.0);
    assert_eq!(report.nad, 0.0);
}

#[test]
fn evaluate_rejects_broken_and_mixed_files() {
    let s = shared();
    let text = fs::read_to_string(&s.results).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();

    let broken = s.dir.join("broken.jsonl");
    let mut bad = lines.clone();
    bad[2] = "{not json".into();
    fs::write(&broken, bad.join("\n")).unwrap();
    match read_results(&broken).unwrap_err() {
        Error::Parse { line, .. } => assert_eq!(line, 3),
        e => panic!("expected a parse error, got {e}"),
    }

    let first = read_results(&s.results).unwrap().remove(0);
    let mixed = s.dir.join("mixed.jsonl");
    lines[1] = lines[1].replace(&first.config_hash, "0000");
    fs::write(&mixed, lines.join("\n")).unwrap();
    let err = cmd_evaluate(&tiny(&s.dir, &[]), &mixed).unwrap_err();
    assert!(matches!(root_cause(&err), Error::HashChain(_)), "{err}");

    let foreign = s.dir.join("foreign.jsonl");
    let run = load_run(&s.dir, None).unwrap();
    let results: Vec<_> = read_results(&s.results).unwrap().into_iter().map(|l| l.result).collect();
    write_results(&foreign, &results, &first.config_hash, "ffff", false).unwrap();
    let err = cmd_evaluate(&tiny(&s.dir, &[]), &foreign).unwrap_err();
    assert!(matches!(root_cause(&err), Error::HashChain(_)), "{err}");
    assert_eq!(run.manifest.training_hash, first.training_hash);
}

#[test]
fn tampered_runs_fail_to_load() {
    let s = shared();
    let tmp = tempfile::tempdir().unwrap();

    let ckpt = tmp.path().join("ckpt");
    copy_dir(&s.dir, &ckpt);
    let target = ckpt.join("checkpoints/target.ckpt");
    let mut bytes = fs::read(&target).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    fs::write(&target, bytes).unwrap();
    assert!(load_run(&ckpt, None).is_err());

    let vocab = tmp.path().join("vocab");
    copy_dir(&s.dir, &vocab);
    let path = vocab.join("vocab.txt");
    let mut text = fs::read_to_string(&path).unwrap();
    text.push_str("intruder\n");
    fs::write(&path, text).unwrap();
    let err = load_run(&vocab, None).err().expect("tampered vocab must fail");
    assert!(matches!(root_cause(&err), Error::VocabMismatch { .. }), "{err}");
}

#[test]
fn missing_dataset_fails_before_training() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let text = r#"
[dataset]
source = "file"
path = "/nonexistent/train.csv"
format = "agnews_csv"
"#;
    let cfg = ExperimentConfig::from_toml_str(text, &[format!("output_dir={:?}", dir.display().to_string())]).unwrap();
    let err = cmd_train(&cfg).err().expect("missing dataset must fail");
    assert!(err.to_string().contains("/nonexistent/train.csv"), "{err}");
    assert!(!dir.join("manifest.json").exists());
    assert!(!dir.join("checkpoints").exists());
}

#[test]
fn sweep_visits_the_budgeted_grid() {
    let s = shared();
    let cfg = tiny(&s.dir, &["attack.n=4", "attack.n_examples=6"]);
    let out = s.dir.join("sweep.csv");
    let (path, rows) = cmd_sweep(&cfg, Some(&out)).unwrap();
    assert_eq!(path, out);
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.error.is_none() && r.n_examples == 6));
    assert_eq!(csv::Reader::from_path(&out).unwrap().records().count(), 3);
    // Grid order varies the last parameter fastest.
    assert_eq!(rows[0].step_size, rows[2].step_size);
    assert_ne!(rows[0].sigma_class, rows[1].sigma_class);

    let run = load_run(&s.dir, Some(&cfg)).unwrap();
    assert_eq!(sweep_rows(&run, &cfg).unwrap(), rows);
}
