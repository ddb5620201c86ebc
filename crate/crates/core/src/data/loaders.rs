use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{encode_transaction, DecileBinning, LabeledExample, Vocabulary};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    AgnewsCsv,
    TransactionsCsv,
    VisitsCsv,
    SyntheticJsonl,
}

impl std::str::FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "agnews_csv" => Ok(Self::AgnewsCsv),
            "transactions_csv" => Ok(Self::TransactionsCsv),
            "visits_csv" => Ok(Self::VisitsCsv),
            "synthetic_jsonl" => Ok(Self::SyntheticJsonl),
            other => Err(Error::Config(format!("unknown dataset format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub min_freq: usize,
    /// Reuse an existing vocabulary (test splits) instead of building one.
    pub vocab: Option<Vocabulary>,
    /// Most recent events kept per client/patient.
    pub max_len: usize,
    /// Reuse amount bins fitted on the training split.
    pub bins: Option<DecileBinning>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            min_freq: 1,
            vocab: None,
            max_len: 20,
            bins: None,
        }
    }
}

/// Example before vocabulary lookup.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawExample {
    pub tokens: Vec<String>,
    pub label: usize,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub examples: Vec<LabeledExample>,
    pub vocab: Vocabulary,
    pub n_classes: usize,
    pub bins: Option<DecileBinning>,
}

pub fn load_dataset(path: &Path, format: DatasetFormat, opts: &LoadOptions) -> Result<Dataset> {
    let (raw, bins) = load_raw(path, format, opts)?;
    let vocab = match &opts.vocab {
        Some(v) => v.clone(),
        None => {
            let corpus: Vec<Vec<String>> = raw.iter().map(|r| r.tokens.clone()).collect();
            Vocabulary::build(&corpus, opts.min_freq)?
        }
    };
    let examples = raw
        .iter()
        .map(|r| {
            Ok(LabeledExample {
                sequence: vocab.encode(&r.tokens)?,
                label: r.label,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n_classes = match format {
        DatasetFormat::AgnewsCsv => 4,
        _ => super::num_classes(&examples),
    };
    Ok(Dataset {
        examples,
        vocab,
        n_classes,
        bins,
    })
}

/// Parses a file into token strings and labels. Amount-based formats also
/// return the bins used (fitted here unless supplied in `opts`).
pub fn load_raw(
    path: &Path,
    format: DatasetFormat,
    opts: &LoadOptions,
) -> Result<(Vec<RawExample>, Option<DecileBinning>)> {
    let meta = std::fs::metadata(path)?;
    if meta.len() == 0 {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    let out = match format {
        DatasetFormat::AgnewsCsv => (load_agnews(path)?, None),
        DatasetFormat::TransactionsCsv => {
            let (ex, bins) = load_transactions(path, opts)?;
            (ex, Some(bins))
        }
        DatasetFormat::VisitsCsv => {
            let (ex, bins) = load_visits(path, opts)?;
            (ex, Some(bins))
        }
        DatasetFormat::SyntheticJsonl => (load_jsonl(path)?, None),
    };
    if out.0.is_empty() {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    Ok(out)
}

/// Lowercase, punctuation to whitespace, whitespace split.
pub fn preprocess_text(text: &str) -> Vec<String> {
    let cleaned: String = text
        .to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    cleaned.split_whitespace().map(str::to_string).collect()
}

fn csv_reader(path: &Path, headers: bool) -> Result<csv::Reader<std::fs::File>> {
    Ok(csv::ReaderBuilder::new()
        .has_headers(headers)
        .flexible(true)
        .from_path(path)?)
}

fn record_line(rec: &csv::StringRecord) -> usize {
    rec.position().map(|p| p.line() as usize).unwrap_or(0)
}

fn load_agnews(path: &Path) -> Result<Vec<RawExample>> {
    let mut rdr = csv_reader(path, false)?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        let line = record_line(&rec);
        if i == 0 && rec.get(0).map(str::trim) == Some("label") {
            continue;
        }
        if rec.len() != 3 {
            return Err(Error::parse(path, line, format!("expected 3 columns, got {}", rec.len())));
        }
        let label = match rec[0].trim() {
            "1" => 0,
            "2" => 1,
            "3" => 2,
            "4" => 3,
            other => {
                return Err(Error::UnknownLabel {
                    label: other.to_string(),
                    line,
                })
            }
        };
        let tokens = preprocess_text(&format!("{} {}", &rec[1], &rec[2]));
        if tokens.is_empty() {
            return Err(Error::parse(path, line, "no tokens after preprocessing"));
        }
        out.push(RawExample { tokens, label });
    }
    Ok(out)
}

fn parse_label(raw: &str, line: usize) -> Result<usize> {
    raw.trim().parse::<usize>().map_err(|_| Error::UnknownLabel {
        label: raw.to_string(),
        line,
    })
}

fn parse_amount(path: &Path, raw: &str, line: usize) -> Result<f64> {
    match raw.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::parse(path, line, format!("bad amount {raw:?}"))),
    }
}

/// Compares strings treating digit runs as numbers ("9 ..." < "10 ...").
fn natural_cmp(a: &str, b: &str) -> Ordering {
    fn chunks(s: &str) -> Vec<(bool, &str)> {
        let mut out = Vec::new();
        let mut start = 0;
        let bytes = s.as_bytes();
        for i in 1..=bytes.len() {
            if i == bytes.len() || bytes[i].is_ascii_digit() != bytes[start].is_ascii_digit() {
                out.push((bytes[start].is_ascii_digit(), &s[start..i]));
                start = i;
            }
        }
        out
    }
    let (ca, cb) = (chunks(a), chunks(b));
    for ((da, sa), (db, sb)) in ca.iter().zip(&cb) {
        let ord = if *da && *db {
            let (ta, tb) = (sa.trim_start_matches('0'), sb.trim_start_matches('0'));
            ta.len().cmp(&tb.len()).then_with(|| ta.cmp(tb))
        } else {
            sa.cmp(sb)
        };
        if ord != Ordering::Equal {
            return ord;
        }
    }
    ca.len().cmp(&cb.len())
}

struct Event {
    order_key: String,
    token_parts: (String, String),
    amount: f64,
    line: usize,
}

struct Group {
    events: Vec<Event>,
    label: Option<(usize, usize)>,
}

fn column_index(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::parse(path, 1, format!("missing column {name:?}")))
}

fn group_events(
    path: &Path,
    key_col: &str,
    order_col: &str,
    part_cols: (&str, &str),
    label_required: bool,
) -> Result<BTreeMap<String, Group>> {
    let mut rdr = csv_reader(path, true)?;
    let headers = rdr.headers()?.clone();
    let key_i = column_index(&headers, key_col, path)?;
    let order_i = column_index(&headers, order_col, path)?;
    let p0 = column_index(&headers, part_cols.0, path)?;
    let p1 = column_index(&headers, part_cols.1, path)?;
    let amount_i = column_index(&headers, "amount", path)?;
    let label_i = match column_index(&headers, "label", path) {
        Ok(i) => Some(i),
        Err(e) if label_required => return Err(e),
        Err(_) => None,
    };
    let mut groups: BTreeMap<String, Group> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = record_line(&rec);
        if rec.len() != headers.len() {
            return Err(Error::parse(
                path,
                line,
                format!("expected {} columns, got {}", headers.len(), rec.len()),
            ));
        }
        let amount = parse_amount(path, &rec[amount_i], line)?;
        let label = label_i.map(|i| parse_label(&rec[i], line)).transpose()?;
        let group = groups.entry(rec[key_i].trim().to_string()).or_insert(Group {
            events: Vec::new(),
            label: None,
        });
        if let Some(l) = label {
            match group.label {
                Some((prev, _)) if prev != l => {
                    return Err(Error::parse(path, line, format!("label {l} conflicts with earlier label {prev}")))
                }
                None => group.label = Some((l, line)),
                _ => {}
            }
        }
        group.events.push(Event {
            order_key: rec[order_i].trim().to_string(),
            token_parts: (rec[p0].trim().to_string(), rec[p1].trim().to_string()),
            amount,
            line,
        });
    }
    Ok(groups)
}

fn fitted_bins(groups: &BTreeMap<String, Group>, opts: &LoadOptions) -> Result<DecileBinning> {
    match &opts.bins {
        Some(b) => Ok(b.clone()),
        None => {
            let amounts: Vec<f64> = groups.values().flat_map(|g| g.events.iter().map(|e| e.amount)).collect();
            DecileBinning::fit(&amounts)
        }
    }
}

fn load_transactions(path: &Path, opts: &LoadOptions) -> Result<(Vec<RawExample>, DecileBinning)> {
    let mut groups = group_events(path, "client_id", "timestamp", ("tx_type", "mcc"), false)?;
    let bins = fitted_bins(&groups, opts)?;
    let mut out = Vec::with_capacity(groups.len());
    for (client, group) in groups.iter_mut() {
        let (label, _) = group.label.ok_or_else(|| {
            Error::parse(
                path,
                group.events[0].line,
                format!("no label for client {client}: add a `label` column"),
            )
        })?;
        group.events.sort_by(|a, b| natural_cmp(&a.order_key, &b.order_key));
        let start = group.events.len().saturating_sub(opts.max_len.max(1));
        let tokens = group.events[start..]
            .iter()
            .map(|e| encode_transaction(&e.token_parts.0, &e.token_parts.1, e.amount, &bins))
            .collect();
        out.push(RawExample { tokens, label });
    }
    Ok((out, bins))
}

fn load_visits(path: &Path, opts: &LoadOptions) -> Result<(Vec<RawExample>, DecileBinning)> {
    let mut groups = group_events(path, "patient_id", "visit_index", ("drug_code", "drug_code"), true)?;
    let bins = fitted_bins(&groups, opts)?;
    let mut out = Vec::with_capacity(groups.len());
    for group in groups.values_mut() {
        for e in &group.events {
            if e.order_key.parse::<f64>().is_err() {
                return Err(Error::parse(path, e.line, format!("bad visit_index {:?}", e.order_key)));
            }
        }
        group.events.sort_by(|a, b| {
            let (x, y) = (a.order_key.parse::<f64>().unwrap(), b.order_key.parse::<f64>().unwrap());
            x.total_cmp(&y)
        });
        let start = group.events.len().saturating_sub(opts.max_len.max(1));
        let tokens = group.events[start..]
            .iter()
            .map(|e| format!("{}_{}", e.token_parts.0, bins.bin(e.amount)))
            .collect();
        let (label, _) = group.label.expect("label column is required for visits");
        out.push(RawExample { tokens, label });
    }
    Ok((out, bins))
}

#[derive(Deserialize)]
struct JsonlRow {
    tokens: Vec<String>,
    label: serde_json::Value,
}

fn load_jsonl(path: &Path) -> Result<Vec<RawExample>> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let row: JsonlRow = serde_json::from_str(&line).map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        let label = row
            .label
            .as_u64()
            .ok_or_else(|| Error::UnknownLabel {
                label: row.label.to_string(),
                line: lineno,
            })? as usize;
        if row.tokens.is_empty() {
            return Err(Error::parse(path, lineno, "empty token list"));
        }
        out.push(RawExample {
            tokens: row.tokens,
            label,
        });
    }
    Ok(out)
}
