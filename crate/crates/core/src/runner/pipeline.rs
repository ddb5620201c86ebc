use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::checkpoint::{self, Checkpoint};
use super::config::{AttackSpec, DatasetSpec, ExperimentConfig, GuidanceKind, LmKind, Split, SweepStrategy};
use crate::attacks::{run_attack, AttackModels, AttackResult, Method};
use crate::classifiers::{
    accuracy, train_surrogate, train_target, SequenceClassifier, Surrogate, TargetClassifier,
};
use crate::data::{generate_synthetic, load_dataset, LabeledExample, LoadOptions, TokenSequence, Vocabulary};
use crate::editdist::{generate_pairs, train_deep_lev, wer_norm, DeepLev};
use crate::error::{Error, Result};
use crate::evaluation::{metric_suite, roc_auc_macro, train_lm, LanguageModel, MetricsReport, TokenLm, UniformLm};
use crate::seq2seq::{reconstruction_accuracy, train_seq2seq, MaskerSet, Seq2Seq};
use crate::Real;

pub const MANIFEST_VERSION: u32 = 1;

/// File layout of a run directory.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn vocab(&self) -> PathBuf {
        self.root.join("vocab.txt")
    }

    pub fn split(&self, split: Split) -> PathBuf {
        match split {
            Split::Train => self.root.join("data/train.jsonl"),
            Split::Test => self.root.join("data/test.jsonl"),
        }
    }

    pub fn checkpoint(&self, name: &str) -> PathBuf {
        self.root.join("checkpoints").join(format!("{name}.ckpt"))
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn attack_output(&self, method: Method, split: Split) -> PathBuf {
        let split = match split {
            Split::Train => "train",
            Split::Test => "test",
        };
        self.root.join("attacks").join(format!("{method}_{split}.jsonl"))
    }

    pub fn sweep_output(&self, method: Method) -> PathBuf {
        self.root.join("sweeps").join(format!("{method}.csv"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub name: String,
    pub kind: String,
    /// Relative to the run directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub seq2seq_final_loss: f64,
    pub seq2seq_token_accuracy: f64,
    pub seq2seq_exact_match: f64,
    pub target_test_accuracy: f64,
    pub target_test_roc_auc: f64,
    pub surrogate_test_accuracy: f64,
    pub surrogate_state_heldout_accuracy: f64,
    pub deep_lev_heldout_mae: f64,
    pub lm_heldout_log_perplexity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub dataset: String,
    pub config_hash: String,
    pub training_hash: String,
    pub vocab_hash: String,
    pub n_classes: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Mean per-dimension std of encoder states on the training split.
    pub state_std: f64,
    pub artifacts: Vec<ArtifactEntry>,
    pub metrics: TrainingSummary,
}

/// A labelled corpus ready for training.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub name: String,
    pub vocab: Vocabulary,
    pub train: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
    pub n_classes: usize,
}

pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    match &cfg.dataset {
        DatasetSpec::Synthetic(s) => {
            let data = generate_synthetic(s)?;
            Ok(PreparedData {
                name: "synthetic".into(),
                n_classes: s.n_classes,
                vocab: data.vocab,
                train: data.train,
                test: data.test,
            })
        }
        DatasetSpec::File(f) => {
            for p in std::iter::once(&f.path).chain(&f.test_path) {
                if !p.is_file() {
                    return Err(Error::Config(format!("dataset file {} not found", p.display())));
                }
            }
            let opts = LoadOptions {
                min_freq: f.min_freq,
                max_len: f.max_len,
                ..LoadOptions::default()
            };
            let name = f
                .path
                .file_stem()
                .map_or_else(|| "dataset".into(), |s| s.to_string_lossy().into_owned());
            match &f.test_path {
                Some(test_path) => {
                    let train = load_dataset(&f.path, f.format, &opts)?;
                    let test_opts = LoadOptions {
                        vocab: Some(train.vocab.clone()),
                        bins: train.bins.clone(),
                        ..opts
                    };
                    let test = load_dataset(test_path, f.format, &test_opts)?;
                    Ok(PreparedData {
                        name,
                        n_classes: train.n_classes.max(test.n_classes),
                        vocab: train.vocab,
                        train: train.examples,
                        test: test.examples,
                    })
                }
                None => {
                    if !(0.0 < f.test_fraction && f.test_fraction < 1.0) {
                        return Err(Error::Config("test_fraction must lie in (0, 1)".into()));
                    }
                    let all = load_dataset(&f.path, f.format, &opts)?;
                    let mut examples = all.examples;
                    examples.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5b11_7000));
                    let n_test = ((examples.len() as f64 * f.test_fraction).round() as usize).clamp(1, examples.len() - 1);
                    let test = examples.split_off(examples.len() - n_test);
                    Ok(PreparedData {
                        name,
                        n_classes: all.n_classes,
                        vocab: all.vocab,
                        train: examples,
                        test,
                    })
                }
            }
        }
    }
}

/// Opens `path` for writing, failing if it exists.
fn create_new(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    match OpenOptions::new().write(true).create_new(true).open(path) {
        Ok(f) => Ok(BufWriter::new(f)),
        Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::OutputExists(path.to_path_buf())),
        Err(e) => Err(e.into()),
    }
}

fn write_new(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut w = create_new(path)?;
    w.write_all(bytes)?;
    w.flush()?;
    Ok(())
}

fn file_sha256(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path).map_err(Error::at(path))?)))
}

fn write_examples(path: &Path, examples: &[LabeledExample]) -> Result<()> {
    let mut w = create_new(path)?;
    for e in examples {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn read_examples(path: &Path) -> Result<Vec<LabeledExample>> {
    let reader = BufReader::new(File::open(path).map_err(Error::at(path))?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?);
    }
    Ok(out)
}

fn sequences(examples: &[LabeledExample]) -> Vec<TokenSequence> {
    examples.iter().map(|e| e.sequence.clone()).collect()
}

/// Everything a finished `train` leaves behind, in memory.
pub struct TrainedRun {
    pub paths: RunPaths,
    pub manifest: Manifest,
    pub vocab: Vocabulary,
    pub train: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
    pub seq2seq: Seq2Seq<Real>,
    pub target: TargetClassifier<Real>,
    pub surrogate: Surrogate<Real>,
    pub deep_lev: DeepLev<Real>,
    pub lm: LanguageModel<Real>,
}

impl TrainedRun {
    pub fn examples(&self, split: Split) -> &[LabeledExample] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    /// Attack models for the given guidance. The target appears only in
    /// the white-box ablation.
    pub fn attack_models(&self, guidance: GuidanceKind) -> AttackModels<'_, Real> {
        AttackModels {
            seq2seq: &self.seq2seq,
            guidance: match guidance {
                GuidanceKind::Surrogate => &self.surrogate.token,
                GuidanceKind::Target => &self.target,
            },
            state_head: Some(&self.surrogate.state),
            deep_lev: Some(&self.deep_lev),
            token_surrogate: Some(&self.surrogate.token),
        }
    }
}

/// Trains all five models and writes them with a manifest under the
/// resolved output directory. The dataset is loaded before any training.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainedRun> {
    let paths = RunPaths::new(cfg.resolved_output_dir());
    if paths.manifest().exists() {
        return Err(Error::OutputExists(paths.manifest()));
    }
    let data = prepare_data(cfg).map_err(|e| e.in_stage("data"))?;
    if data.train.len() < 2 || data.test.is_empty() {
        return Err(Error::EmptyCorpus.in_stage("data"));
    }
    let train_seqs = sequences(&data.train);
    let vocab_hash = data.vocab.hash();
    let start = Instant::now();

    info!("training seq2seq on {} sequences", train_seqs.len());
    let seq2seq = train_seq2seq::<Real>(&train_seqs, &data.vocab, cfg.seq2seq.clone()).map_err(|e| e.in_stage("seq2seq"))?;
    let recon = reconstruction_accuracy(&seq2seq, &sequences(&data.test), &MaskerSet::all(), cfg.attack.beam);
    let state_std = seq2seq.state_std(&train_seqs, &MaskerSet::all());
    info!("seq2seq done in {:.1?}; reconstruction {recon:?}, state std {state_std:.4}", start.elapsed());

    let target = train_target::<Real>(&data.train, data.vocab.len(), &cfg.target).map_err(|e| e.in_stage("target"))?;
    let test_probs: Vec<Vec<f64>> = data.test.iter().map(|e| target.predict_proba(&e.sequence)).collect();
    let test_labels: Vec<usize> = data.test.iter().map(|e| e.label).collect();

    info!("training surrogate");
    let surrogate = train_surrogate(&data.train, &seq2seq, &cfg.surrogate).map_err(|e| e.in_stage("surrogate"))?;

    info!("training deep levenshtein");
    let dl = &cfg.deep_lev;
    let mut pair_rng = ChaCha8Rng::seed_from_u64(dl.seed ^ 0x9a12_5eed);
    let deep_lev = generate_pairs(
        &train_seqs,
        dl.n_pairs,
        &dl.masker,
        dl.corruption_rate,
        dl.distant_fraction,
        data.vocab.regular_ids(),
        &mut pair_rng,
    )
    .and_then(|pairs| train_deep_lev(&pairs, &seq2seq, dl.clone()))
    .map_err(|e| e.in_stage("deep_lev"))?;

    info!("training language model");
    let lm = train_lm::<Real>(&train_seqs, data.vocab.len(), &cfg.lm).map_err(|e| e.in_stage("lm"))?;
    info!("training finished in {:.1?}", start.elapsed());

    let metrics = TrainingSummary {
        seq2seq_final_loss: seq2seq.history.last().copied().unwrap_or(f64::NAN),
        seq2seq_token_accuracy: recon.token_accuracy,
        seq2seq_exact_match: recon.exact_match,
        target_test_accuracy: accuracy(&target, &data.test),
        target_test_roc_auc: roc_auc_macro(&test_probs, &test_labels),
        surrogate_test_accuracy: accuracy(&surrogate.token, &data.test),
        surrogate_state_heldout_accuracy: surrogate.report.state_heldout_accuracy,
        deep_lev_heldout_mae: deep_lev.heldout_mae.unwrap_or(f64::NAN),
        lm_heldout_log_perplexity: lm.heldout_log_perplexity.unwrap_or(f64::NAN),
    };

    write_new(&paths.config(), cfg.to_run_toml()?.as_bytes())?;
    write_new(&paths.vocab(), data.vocab.to_text().as_bytes())?;
    write_examples(&paths.split(Split::Train), &data.train)?;
    write_examples(&paths.split(Split::Test), &data.test)?;

    std::fs::create_dir_all(paths.root.join("checkpoints"))?;
    let mut artifacts = Vec::new();
    let mut save = |name: &str, kind: &str, f: &dyn Fn(&Path) -> Result<()>| -> Result<()> {
        let path = paths.checkpoint(name);
        f(&path)?;
        artifacts.push(ArtifactEntry {
            name: name.into(),
            kind: kind.into(),
            path: format!("checkpoints/{name}.ckpt"),
            sha256: file_sha256(&path)?,
        });
        Ok(())
    };
    save("seq2seq", <Seq2Seq<Real> as Checkpoint<Real>>::KIND, &|p| checkpoint::save(p, &seq2seq, &vocab_hash))?;
    save("target", <TargetClassifier<Real> as Checkpoint<Real>>::KIND, &|p| {
        checkpoint::save(p, &target, &vocab_hash)
    })?;
    save("surrogate", <Surrogate<Real> as Checkpoint<Real>>::KIND, &|p| {
        checkpoint::save(p, &surrogate, &vocab_hash)
    })?;
    save("deep_lev", <DeepLev<Real> as Checkpoint<Real>>::KIND, &|p| {
        checkpoint::save(p, &deep_lev, &vocab_hash)
    })?;
    save("lm", <LanguageModel<Real> as Checkpoint<Real>>::KIND, &|p| checkpoint::save(p, &lm, &vocab_hash))?;

    let manifest = Manifest {
        version: MANIFEST_VERSION,
        dataset: data.name,
        config_hash: cfg.config_hash(),
        training_hash: cfg.training_hash(),
        vocab_hash,
        n_classes: data.n_classes,
        n_train: data.train.len(),
        n_test: data.test.len(),
        state_std,
        artifacts,
        metrics,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    write_new(&paths.manifest(), text.as_bytes())?;
    Ok(TrainedRun {
        paths,
        manifest,
        vocab: data.vocab,
        train: data.train,
        test: data.test,
        seq2seq,
        target,
        surrogate,
        deep_lev,
        lm,
    })
}

/// Loads a finished run. When `cfg` is given, its training hash must match
/// the one the checkpoints were trained under.
pub fn load_run(dir: &Path, cfg: Option<&ExperimentConfig>) -> Result<TrainedRun> {
    let paths = RunPaths::new(dir);
    let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(paths.manifest()).map_err(Error::at(&paths.manifest()))?)?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::Checkpoint(format!("unsupported manifest version {}", manifest.version)));
    }
    if let Some(cfg) = cfg {
        let h = cfg.training_hash();
        if h != manifest.training_hash {
            return Err(Error::HashChain(format!(
                "config trains {h} but {} holds {}",
                dir.display(),
                manifest.training_hash
            )));
        }
    }
    let vocab = Vocabulary::load(&paths.vocab()).map_err(|e| match e {
        Error::Io(io) => Error::at(&paths.vocab())(io),
        e => e,
    })?;
    let vocab_hash = vocab.hash();
    if vocab_hash != manifest.vocab_hash {
        return Err(Error::VocabMismatch {
            expected: manifest.vocab_hash,
            actual: vocab_hash,
        });
    }
    for a in &manifest.artifacts {
        let actual = file_sha256(&dir.join(&a.path))?;
        if actual != a.sha256 {
            return Err(Error::HashChain(format!("artifact {} changed since training", a.path)));
        }
    }
    let h = Some(vocab_hash.as_str());
    Ok(TrainedRun {
        train: read_examples(&paths.split(Split::Train))?,
        test: read_examples(&paths.split(Split::Test))?,
        seq2seq: checkpoint::load(&paths.checkpoint("seq2seq"), h)?,
        target: checkpoint::load(&paths.checkpoint("target"), h)?,
        surrogate: checkpoint::load(&paths.checkpoint("surrogate"), h)?,
        deep_lev: checkpoint::load(&paths.checkpoint("deep_lev"), h)?,
        lm: checkpoint::load(&paths.checkpoint("lm"), h)?,
        vocab,
        manifest,
        paths,
    })
}

/// One line of an attack JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultLine {
    pub config_hash: String,
    pub training_hash: String,
    #[serde(flatten)]
    pub result: AttackResult,
}

/// Runs `spec` over the first `spec.n_examples` of its split, in example
/// order. Nothing is written.
pub fn run_attacks(run: &TrainedRun, spec: &AttackSpec, seed: u64) -> Result<Vec<AttackResult>> {
    let cfg = spec.resolve(run.manifest.state_std, seed)?;
    let models = run.attack_models(spec.guidance);
    let examples = run.examples(spec.split);
    let n = spec.n_examples.map_or(examples.len(), |k| k.min(examples.len()));
    let start = Instant::now();
    let mut out = Vec::with_capacity(n);
    for (i, e) in examples[..n].iter().enumerate() {
        out.push(run_attack(i, &e.sequence, e.label, spec.method, &models, &cfg)?);
        if (i + 1) % 50 == 0 || i + 1 == n {
            info!("{}: {}/{n} examples, {:.1?}", spec.method, i + 1, start.elapsed());
        }
    }
    Ok(out)
}

pub fn write_results(
    path: &Path,
    results: &[AttackResult],
    config_hash: &str,
    training_hash: &str,
    keep_trace: bool,
) -> Result<()> {
    let mut w = create_new(path)?;
    for r in results {
        let mut result = r.clone();
        if !keep_trace {
            result.trace.clear();
        }
        let line = ResultLine {
            config_hash: config_hash.into(),
            training_hash: training_hash.into(),
            result,
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results(path: &Path) -> Result<Vec<ResultLine>> {
    let reader = BufReader::new(File::open(path).map_err(Error::at(path))?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?);
    }
    if out.is_empty() {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    Ok(out)
}

/// Attacks the configured split and writes one JSONL line per example.
/// Returns the output path (`output`, or the run's default for the method).
pub fn cmd_attack(cfg: &ExperimentConfig, keep_trace: bool, output: Option<&Path>) -> Result<PathBuf> {
    let run = load_run(&cfg.resolved_output_dir(), Some(cfg))?;
    let path = output.map_or_else(|| run.paths.attack_output(cfg.attack.method, cfg.attack.split), Path::to_path_buf);
    if path.exists() {
        return Err(Error::OutputExists(path));
    }
    let results = run_attacks(&run, &cfg.attack, cfg.seed).map_err(|e| e.in_stage("attack"))?;
    write_results(&path, &results, &cfg.config_hash(), &run.manifest.training_hash, keep_trace)?;
    Ok(path)
}

/// Builds the report for `results` against the run's target classifier.
pub fn evaluate_results(
    run: &TrainedRun,
    results: &[AttackResult],
    lm_kind: LmKind,
    config_hash: &str,
) -> Result<MetricsReport> {
    let labels: Vec<usize> = results.iter().map(|r| r.label).collect();
    let uniform = UniformLm::new(run.vocab.len());
    let lm: &dyn TokenLm = match lm_kind {
        LmKind::Trained => &run.lm,
        LmKind::Uniform => &uniform,
    };
    let mut report = metric_suite(results, &run.target, &labels, lm)?;
    report.dataset = run.manifest.dataset.clone();
    report.attack = results.first().map(|r| r.method.to_string()).unwrap_or_default();
    report.config_hash = config_hash.into();
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub index: usize,
    pub wer: usize,
    pub normalized_wer: f64,
    pub label: usize,
    pub target_before: usize,
    pub target_after: usize,
    /// Target probability of the true label, before minus after.
    pub probability_drop: f64,
}

pub fn scatter_rows<C: SequenceClassifier + ?Sized>(results: &[AttackResult], target: &C) -> Vec<ScatterRow> {
    results
        .iter()
        .map(|r| {
            let (pb, cb) = target.classify(&r.original);
            let (pa, ca) = target.classify(&r.adversarial);
            ScatterRow {
                index: r.index,
                wer: r.wer,
                normalized_wer: wer_norm(r.original.ids(), r.adversarial.ids()),
                label: r.label,
                target_before: cb,
                target_after: ca,
                probability_drop: pb[r.label] - pa[r.label],
            }
        })
        .collect()
}

fn csv_bytes<S: Serialize>(rows: &[S]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Output paths of `cmd_evaluate` for a results file `x.jsonl`:
/// `x.metrics.json`, `x.metrics.csv` and `x.scatter.csv`.
pub fn report_paths(results: &Path) -> [PathBuf; 3] {
    let stem = results.with_extension("");
    let with = |suffix: &str| {
        let mut s = stem.clone().into_os_string();
        s.push(suffix);
        PathBuf::from(s)
    };
    [with(".metrics.json"), with(".metrics.csv"), with(".scatter.csv")]
}

/// Scores a results file against the target of the configured run and
/// writes the JSON report, the same report as CSV, and the per-example
/// scatter CSV next to it.
pub fn cmd_evaluate(cfg: &ExperimentConfig, results_path: &Path) -> Result<MetricsReport> {
    let lines = read_results(results_path)?;
    let first = &lines[0];
    for (i, l) in lines.iter().enumerate() {
        if l.config_hash != first.config_hash || l.training_hash != first.training_hash {
            return Err(Error::HashChain(format!(
                "{}:{}: hashes differ from the first line",
                results_path.display(),
                i + 1
            )));
        }
    }
    let run = load_run(&cfg.resolved_output_dir(), None)?;
    if first.training_hash != run.manifest.training_hash {
        return Err(Error::HashChain(format!(
            "results were produced by checkpoints {} but the run holds {}",
            first.training_hash, run.manifest.training_hash
        )));
    }
    let results: Vec<AttackResult> = lines.iter().map(|l| l.result.clone()).collect();
    let report = evaluate_results(&run, &results, cfg.metrics.lm, &first.config_hash)?;
    let [json_path, csv_path, scatter_path] = report_paths(results_path);
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    write_new(&json_path, json.as_bytes())?;
    write_new(&csv_path, &csv_bytes(std::slice::from_ref(&report))?)?;
    write_new(&scatter_path, &csv_bytes(&scatter_rows(&results, &run.target))?)?;
    Ok(report)
}

/// One sampled configuration of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub step_size: f64,
    pub lambda: f64,
    pub beam: usize,
    pub sigma_scale: f64,
    pub sigma_wer: f64,
    pub sigma_class: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub point: usize,
    pub method: Method,
    pub step_size: f64,
    pub lambda: f64,
    pub beam: usize,
    pub sigma_scale: f64,
    pub sigma_wer: f64,
    pub sigma_class: f64,
    pub n_examples: usize,
    pub normalized_wer: Option<f64>,
    pub accuracy_drop: Option<f64>,
    pub nad: Option<f64>,
    pub error: Option<String>,
}

fn log_uniform(rng: &mut impl Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        (rng.gen_range(lo.ln()..hi.ln())).exp()
    }
}

fn levels(range: [f64; 2], k: usize, log: bool) -> Vec<f64> {
    let [lo, hi] = range;
    if k <= 1 || lo == hi {
        return vec![lo];
    }
    (0..k)
        .map(|i| {
            let t = i as f64 / (k - 1) as f64;
            if log && lo > 0.0 {
                (lo.ln() + t * (hi.ln() - lo.ln())).exp()
            } else {
                lo + t * (hi - lo)
            }
        })
        .collect()
}

/// The configurations a sweep visits: `budget` random draws, or the first
/// `budget` points of the grid in row-major order.
pub fn sweep_points(cfg: &ExperimentConfig) -> Result<Vec<SweepPoint>> {
    let s = &cfg.sweep;
    s.validate()?;
    match s.strategy {
        SweepStrategy::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eee_9000);
            Ok((0..s.budget)
                .map(|_| SweepPoint {
                    step_size: log_uniform(&mut rng, s.step_size),
                    lambda: rng.gen_range(s.lambda[0]..=s.lambda[1]),
                    beam: *s.beam.choose(&mut rng).expect("validated non-empty"),
                    sigma_scale: log_uniform(&mut rng, s.sigma_scale),
                    sigma_wer: log_uniform(&mut rng, s.sigma_wer),
                    sigma_class: log_uniform(&mut rng, s.sigma_class),
                })
                .collect())
        }
        SweepStrategy::Grid => {
            let k = s.grid_levels;
            let mut points = Vec::new();
            'outer: for &step_size in &levels(s.step_size, k, true) {
                for &lambda in &levels(s.lambda, k, false) {
                    for &beam in &s.beam {
                        for &sigma_scale in &levels(s.sigma_scale, k, true) {
                            for &sigma_wer in &levels(s.sigma_wer, k, true) {
                                for &sigma_class in &levels(s.sigma_class, k, true) {
                                    if points.len() == s.budget {
                                        break 'outer;
                                    }
                                    points.push(SweepPoint {
                                        step_size,
                                        lambda,
                                        beam,
                                        sigma_scale,
                                        sigma_wer,
                                        sigma_class,
                                    });
                                }
                            }
                        }
                    }
                }
            }
            Ok(points)
        }
    }
}

/// Runs attack and evaluation for every sweep point in memory. A failing
/// point becomes a row with its error instead of aborting the sweep.
pub fn sweep_rows(run: &TrainedRun, cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    let points = sweep_points(cfg)?;
    let config_hash = cfg.config_hash();
    Ok(points
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            let spec = AttackSpec {
                step_size: p.step_size,
                lambda: p.lambda,
                beam: p.beam,
                sigma: None,
                sigma_scale: p.sigma_scale,
                sigma_wer: p.sigma_wer,
                sigma_class: p.sigma_class,
                ..cfg.attack.clone()
            };
            let outcome = run_attacks(run, &spec, cfg.seed)
                .and_then(|results| evaluate_results(run, &results, cfg.metrics.lm, &config_hash));
            info!("sweep point {}/{}: {:?}", i + 1, cfg.sweep.budget, outcome.as_ref().map(|r| r.accuracy_drop));
            let (report, error) = match outcome {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e.to_string())),
            };
            SweepRow {
                point: i,
                method: spec.method,
                step_size: p.step_size,
                lambda: p.lambda,
                beam: p.beam,
                sigma_scale: p.sigma_scale,
                sigma_wer: p.sigma_wer,
                sigma_class: p.sigma_class,
                n_examples: report.as_ref().map_or(0, |r| r.n_examples),
                normalized_wer: report.as_ref().map(|r| r.normalized_wer),
                accuracy_drop: report.as_ref().map(|r| r.accuracy_drop),
                nad: report.as_ref().map(|r| r.nad),
                error,
            }
        })
        .collect())
}

pub fn cmd_sweep(cfg: &ExperimentConfig, output: Option<&Path>) -> Result<(PathBuf, Vec<SweepRow>)> {
    cfg.sweep.validate()?;
    let run = load_run(&cfg.resolved_output_dir(), Some(cfg))?;
    let path = output.map_or_else(|| run.paths.sweep_output(cfg.attack.method), Path::to_path_buf);
    if path.exists() {
        return Err(Error::OutputExists(path));
    }
    let rows = sweep_rows(&run, cfg)?;
    write_new(&path, &csv_bytes(&rows)?)?;
    Ok((path, rows))
}

/// Renders original/adversarial pairs of a results file as text, with the
/// target's prediction on each.
pub fn show_examples(cfg: &ExperimentConfig, results_path: &Path, limit: usize) -> Result<String> {
    let lines = read_results(results_path)?;
    let run = load_run(&cfg.resolved_output_dir(), None)?;
    let mut out = String::new();
    for l in lines.iter().take(limit) {
        let r = &l.result;
        let (pb, cb) = run.target.classify(&r.original);
        let (pa, ca) = run.target.classify(&r.adversarial);
        out.push_str(&format!(
            "#{} {} label {} wer {}\n  original    [{cb} p={:.3}] {}\n  adversarial [{ca} p={:.3}] {}\n",
            r.index,
            r.method,
            r.label,
            r.wer,
            pb[cb],
            run.vocab.decode(&r.original).join(" "),
            pa[ca],
            run.vocab.decode(&r.adversarial).join(" "),
        ));
    }
    Ok(out)
}
