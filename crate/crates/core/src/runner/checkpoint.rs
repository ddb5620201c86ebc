//! Versioned checkpoint container: a magic line, a one-line JSON header
//! describing the model and its tensors, then every tensor as row-major
//! little-endian `f64`.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::autodiff::Mat;
use crate::classifiers::{StateHead, Surrogate, SurrogateConfig, SurrogateReport, TargetClassifier, TfIdf, TokenSurrogate};
use crate::editdist::{DeepLev, DeepLevConfig};
use crate::error::{Error, Result};
use crate::evaluation::{LanguageModel, LmConfig};
use crate::scalar::Scalar;
use crate::seq2seq::{Seq2Seq, Seq2SeqConfig};

pub const MAGIC: &str = "SEQADV-CKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: String,
    pub version: u32,
    /// Scalar type the model was trained in.
    pub scalar: String,
    pub vocab_hash: String,
    pub meta: Value,
    pub tensors: Vec<TensorInfo>,
}

/// A model that round-trips through the container.
pub trait Checkpoint<T: Scalar>: Sized {
    const KIND: &'static str;

    fn meta(&self) -> Value;

    fn tensors(&self) -> Vec<(&str, &Mat<T>)>;

    fn restore(meta: Value, tensors: Vec<(String, Mat<T>)>) -> Result<Self>;
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn field<D: serde::de::DeserializeOwned>(meta: &Value, key: &str) -> Result<D> {
    let v = meta.get(key).ok_or_else(|| bad(format!("missing meta field {key:?}")))?;
    serde_json::from_value(v.clone()).map_err(|e| bad(format!("meta field {key:?}: {e}")))
}

/// Writes `model`; refuses to replace an existing file.
pub fn save<T: Scalar, M: Checkpoint<T>>(path: &Path, model: &M, vocab_hash: &str) -> Result<()> {
    let tensors = model.tensors();
    let header = CheckpointHeader {
        kind: M::KIND.to_string(),
        version: VERSION,
        scalar: T::KIND.to_string(),
        vocab_hash: vocab_hash.to_string(),
        meta: model.meta(),
        tensors: tensors
            .iter()
            .map(|(name, m)| TensorInfo {
                name: name.to_string(),
                shape: [m.nrows(), m.ncols()],
            })
            .collect(),
    };
    let file = OpenOptions::new().write(true).create_new(true).open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::AlreadyExists {
            Error::OutputExists(path.to_path_buf())
        } else {
            e.into()
        }
    })?;
    let mut out = BufWriter::new(file);
    writeln!(out, "{MAGIC} {VERSION}")?;
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for (_, m) in tensors {
        for v in m.iter() {
            out.write_all(&v.as_f64().to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn open(path: &Path) -> Result<(CheckpointHeader, BufReader<File>)> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let expected = format!("{MAGIC} {VERSION}");
    if line.trim_end() != expected {
        return Err(bad(format!("{}: not a version {VERSION} checkpoint", path.display())));
    }
    line.clear();
    reader.read_line(&mut line)?;
    let header: CheckpointHeader = serde_json::from_str(&line)?;
    Ok((header, reader))
}

pub fn read_header(path: &Path) -> Result<CheckpointHeader> {
    open(path).map(|(h, _)| h)
}

/// Reads a model of kind `M::KIND`. With `vocab_hash` set, the checkpoint
/// must have been written against that vocabulary.
pub fn load<T: Scalar, M: Checkpoint<T>>(path: &Path, vocab_hash: Option<&str>) -> Result<M> {
    let (header, mut reader) = open(path)?;
    if header.kind != M::KIND {
        return Err(bad(format!("{}: expected a {} checkpoint, found {}", path.display(), M::KIND, header.kind)));
    }
    if let Some(expected) = vocab_hash {
        if header.vocab_hash != expected {
            return Err(Error::VocabMismatch {
                expected: header.vocab_hash,
                actual: expected.to_string(),
            });
        }
    }
    let mut tensors = Vec::with_capacity(header.tensors.len());
    let mut buf = [0u8; 8];
    for info in &header.tensors {
        let [r, c] = info.shape;
        let mut data = Vec::with_capacity(r * c);
        for _ in 0..r * c {
            reader.read_exact(&mut buf).map_err(|_| bad("truncated tensor data"))?;
            data.push(T::of(f64::from_le_bytes(buf)));
        }
        let m = Mat::from_shape_vec((r, c), data).map_err(|e| bad(e.to_string()))?;
        tensors.push((info.name.clone(), m));
    }
    if reader.read(&mut buf)? != 0 {
        return Err(bad("trailing bytes after tensor data"));
    }
    M::restore(header.meta, tensors)
}

fn load_params<T: Scalar>(params: &mut crate::nn::ParamSet<T>, tensors: Vec<(String, Mat<T>)>) -> Result<()> {
    let (names, values): (Vec<String>, Vec<Mat<T>>) = tensors.into_iter().unzip();
    params.load(&names, values).map_err(bad)
}

fn named<T: Scalar>(params: &crate::nn::ParamSet<T>) -> Vec<(&str, &Mat<T>)> {
    params.names().iter().map(String::as_str).zip(params.values()).collect()
}

impl<T: Scalar> Checkpoint<T> for Seq2Seq<T> {
    const KIND: &'static str = "seq2seq";

    fn meta(&self) -> Value {
        json!({
            "config": self.config(),
            "vocab_size": self.vocab_size(),
            "vocab_hash": self.vocab_hash(),
            "history": self.history,
        })
    }

    fn tensors(&self) -> Vec<(&str, &Mat<T>)> {
        named(self.params())
    }

    fn restore(meta: Value, tensors: Vec<(String, Mat<T>)>) -> Result<Self> {
        let config: Seq2SeqConfig = field(&meta, "config")?;
        let mut model = Seq2Seq::build(config, field(&meta, "vocab_size")?, field(&meta, "vocab_hash")?);
        load_params(model.params_mut(), tensors)?;
        model.history = field(&meta, "history")?;
        Ok(model)
    }
}

impl<T: Scalar> Checkpoint<T> for TargetClassifier<T> {
    const KIND: &'static str = "target_tfidf_logreg";

    fn meta(&self) -> Value {
        json!({ "tfidf": self.tfidf, "history": self.history })
    }

    fn tensors(&self) -> Vec<(&str, &Mat<T>)> {
        named(self.params())
    }

    fn restore(meta: Value, tensors: Vec<(String, Mat<T>)>) -> Result<Self> {
        let tfidf: TfIdf = field(&meta, "tfidf")?;
        let mut it = tensors.into_iter();
        let (Some((_, w)), Some((_, b)), None) = (it.next(), it.next(), it.next()) else {
            return Err(bad("target checkpoint needs exactly two tensors"));
        };
        let mut clf = TargetClassifier::from_parts(tfidf, w, b)?;
        clf.history = field(&meta, "history")?;
        Ok(clf)
    }
}

impl<T: Scalar> Checkpoint<T> for Surrogate<T> {
    const KIND: &'static str = "surrogate";

    fn meta(&self) -> Value {
        json!({
            "config": self.config,
            "vocab_size": self.token.vocab_size(),
            "n_classes": self.state.n_classes(),
            "state_width": self.state.state_width(),
            "report": self.report,
            "token_history": self.token.history,
            "state_history": self.state.history,
        })
    }

    fn tensors(&self) -> Vec<(&str, &Mat<T>)> {
        let mut t = named(self.token.params());
        t.extend(named(self.state.params()));
        t
    }

    fn restore(meta: Value, mut tensors: Vec<(String, Mat<T>)>) -> Result<Self> {
        let config: SurrogateConfig = field(&meta, "config")?;
        let k: usize = field(&meta, "n_classes")?;
        let mut token = TokenSurrogate::new(&config, field(&meta, "vocab_size")?, k);
        let mut state = StateHead::new(&config, field(&meta, "state_width")?, k);
        let n_token = token.params().len();
        if tensors.len() < n_token {
            return Err(bad("surrogate checkpoint is missing tensors"));
        }
        let state_tensors = tensors.split_off(n_token);
        load_params(token.params_mut(), tensors)?;
        load_params(state.params_mut(), state_tensors)?;
        token.history = field(&meta, "token_history")?;
        state.history = field(&meta, "state_history")?;
        let report: SurrogateReport = field(&meta, "report")?;
        Ok(Surrogate {
            token,
            state,
            report,
            config,
        })
    }
}

impl<T: Scalar> Checkpoint<T> for DeepLev<T> {
    const KIND: &'static str = "deep_levenshtein";

    fn meta(&self) -> Value {
        json!({
            "config": self.config(),
            "state_width": self.state_width(),
            "history": self.history,
            "heldout_mae": self.heldout_mae,
        })
    }

    fn tensors(&self) -> Vec<(&str, &Mat<T>)> {
        named(self.params())
    }

    fn restore(meta: Value, tensors: Vec<(String, Mat<T>)>) -> Result<Self> {
        let config: DeepLevConfig = field(&meta, "config")?;
        let mut model = DeepLev::new(config, field(&meta, "state_width")?);
        load_params(model.params_mut(), tensors)?;
        model.history = field(&meta, "history")?;
        model.heldout_mae = field(&meta, "heldout_mae")?;
        Ok(model)
    }
}

impl<T: Scalar> Checkpoint<T> for LanguageModel<T> {
    const KIND: &'static str = "language_model";

    fn meta(&self) -> Value {
        json!({
            "config": self.config(),
            "vocab_size": self.vocab_size(),
            "history": self.history,
            "heldout_log_perplexity": self.heldout_log_perplexity,
        })
    }

    fn tensors(&self) -> Vec<(&str, &Mat<T>)> {
        named(self.params())
    }

    fn restore(meta: Value, tensors: Vec<(String, Mat<T>)>) -> Result<Self> {
        let config: LmConfig = field(&meta, "config")?;
        let mut model = LanguageModel::new(config, field(&meta, "vocab_size")?);
        load_params(model.params_mut(), tensors)?;
        model.history = field(&meta, "history")?;
        model.heldout_log_perplexity = field(&meta, "heldout_log_perplexity")?;
        Ok(model)
    }
}
