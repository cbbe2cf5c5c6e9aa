//! JSONL and CSV formats.
//!
//! Hypotheses: one object per line,
//! `{"input_id": str, "model_tag": str, "text": str, "logprob": f64?, "sample_index": u64}`,
//! with `text` whitespace-tokenized (`\ ` escapes a literal space, `\\` a
//! backslash) and `(input_id, model_tag, sample_index)` unique per file.
//! References and prompts: `{"input_id": str, "text": str}`.
//! CSV files carry a single header line; fields containing commas, quotes or
//! newlines are quoted.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seqcore::{split_tokens, Hypothesis, HypothesisCollection, Vocabulary, BOS_TOKEN, EOS_TOKEN};

/// Hypothesis sets per input id, one collection per model.
pub type InputSets = BTreeMap<String, Vec<HypothesisCollection>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisRecord {
    pub input_id: String,
    pub model_tag: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprob: Option<f64>,
    pub sample_index: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextRecord {
    pub input_id: String,
    pub text: String,
}

/// Hypothesis sets grouped by input id, then by model tag.
#[derive(Clone, Debug, PartialEq)]
pub struct Ingested {
    pub vocab: Arc<Vocabulary>,
    pub inputs: InputSets,
}

impl Ingested {
    pub fn total_records(&self) -> u64 {
        self.inputs.values().flatten().map(HypothesisCollection::total_count).sum()
    }
}

fn data_err(path: Option<&Path>, line: Option<usize>, message: impl Into<String>) -> Error {
    Error::Data {
        path: path.map(Path::to_path_buf),
        line,
        message: message.into(),
    }
}

/// Parses JSONL from a reader; blank lines are skipped.
fn read_jsonl<T, R>(reader: R, path: Option<&Path>) -> Result<Vec<(usize, T)>>
where
    T: for<'de> Deserialize<'de>,
    R: BufRead,
{
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| match path {
            Some(p) => Error::io(p, e),
            None => data_err(None, Some(lineno), e.to_string()),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| data_err(path, Some(lineno), e.to_string()))?;
        out.push((lineno, rec));
    }
    Ok(out)
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

/// Reads a hypothesis file. Without `vocab` the vocabulary is induced from
/// the file (content tokens in sorted order); with it, unknown tokens are
/// reported together.
pub fn ingest(path: &Path, vocab: Option<Arc<Vocabulary>>) -> Result<Ingested> {
    let records = read_jsonl(open(path)?, Some(path))?;
    group_records(records, vocab, Some(path))
}

/// [`ingest`] over in-memory JSONL text.
pub fn ingest_str(text: &str, vocab: Option<Arc<Vocabulary>>) -> Result<Ingested> {
    let records = read_jsonl(text.as_bytes(), None)?;
    group_records(records, vocab, None)
}

fn group_records(
    records: Vec<(usize, HypothesisRecord)>,
    vocab: Option<Arc<Vocabulary>>,
    path: Option<&Path>,
) -> Result<Ingested> {
    let mut seen = BTreeMap::new();
    let mut tokenized = Vec::with_capacity(records.len());
    for (line, r) in records {
        let key = (r.input_id.clone(), r.model_tag.clone(), r.sample_index);
        if let Some(first) = seen.insert(key, line) {
            return Err(data_err(
                path,
                Some(line),
                format!(
                    "duplicate (input_id, model_tag, sample_index) = ({:?}, {:?}, {}), first on line {first}",
                    r.input_id, r.model_tag, r.sample_index
                ),
            ));
        }
        if r.logprob.is_some_and(|lp| lp.is_nan() || lp > 0.0) {
            return Err(data_err(path, Some(line), "logprob must be a number ≤ 0"));
        }
        let tokens = split_tokens(&r.text);
        if let Some(t) = tokens.iter().find(|t| *t == BOS_TOKEN || *t == EOS_TOKEN) {
            return Err(data_err(path, Some(line), format!("reserved token {t:?} in text")));
        }
        tokenized.push((line, r, tokens));
    }

    let vocab = match vocab {
        Some(v) => {
            let unknown: BTreeSet<&str> = tokenized
                .iter()
                .flat_map(|(_, _, ts)| ts.iter())
                .filter(|t| v.id(t).is_none())
                .map(String::as_str)
                .collect();
            if !unknown.is_empty() {
                return Err(data_err(
                    path,
                    None,
                    format!("tokens not in vocabulary: {}", unknown.into_iter().collect::<Vec<_>>().join(", ")),
                ));
            }
            v
        }
        None => {
            let words: BTreeSet<&str> = tokenized.iter().flat_map(|(_, _, ts)| ts.iter()).map(String::as_str).collect();
            Arc::new(Vocabulary::new(words)?)
        }
    };

    let mut grouped: BTreeMap<String, BTreeMap<String, Vec<(u64, Hypothesis)>>> = BTreeMap::new();
    for (line, r, tokens) in tokenized {
        let seq = vocab.encode(&tokens).map_err(|e| data_err(path, Some(line), e.to_string()))?;
        let mut h = Hypothesis::new(seq);
        h.logprob = r.logprob;
        grouped
            .entry(r.input_id)
            .or_default()
            .entry(r.model_tag)
            .or_default()
            .push((r.sample_index, h));
    }
    let mut inputs = BTreeMap::new();
    for (id, by_tag) in grouped {
        let mut cs = Vec::with_capacity(by_tag.len());
        for (tag, mut items) in by_tag {
            items.sort_by_key(|(i, _)| *i);
            cs.push(HypothesisCollection::single(
                vocab.clone(),
                tag,
                items.into_iter().map(|(_, h)| h).collect(),
            )?);
        }
        inputs.insert(id, cs);
    }
    Ok(Ingested { vocab, inputs })
}

/// Flattens collections into records. Weighted entries expand to one record
/// per draw; sample indices count draws within each collection.
pub fn to_records(inputs: &InputSets) -> Vec<HypothesisRecord> {
    let mut out = Vec::new();
    for (id, cs) in inputs {
        for (ci, c) in cs.iter().enumerate() {
            let tag = c.tag().map(str::to_string).unwrap_or_else(|| format!("set{ci}"));
            let mut index = 0;
            for h in c.items() {
                for _ in 0..h.weight {
                    out.push(HypothesisRecord {
                        input_id: id.clone(),
                        model_tag: h.model_tag.clone().unwrap_or_else(|| tag.clone()),
                        text: c.vocab().render(&h.seq),
                        logprob: h.logprob,
                        sample_index: index,
                    });
                    index += 1;
                }
            }
        }
    }
    out
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::data(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes hypothesis sets in the ingest format.
pub fn emit(path: &Path, inputs: &InputSets) -> Result<()> {
    write_jsonl(path, &to_records(inputs))
}

/// Reads `{input_id, text}` lines into a map; duplicate ids are rejected.
pub fn read_texts(path: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (line, r) in read_jsonl::<TextRecord, _>(open(path)?, Some(path))? {
        if out.insert(r.input_id.clone(), r.text).is_some() {
            return Err(data_err(Some(path), Some(line), format!("duplicate input_id {:?}", r.input_id)));
        }
    }
    Ok(out)
}

pub fn write_texts(path: &Path, texts: &BTreeMap<String, String>) -> Result<()> {
    let recs: Vec<_> = texts
        .iter()
        .map(|(k, v)| TextRecord {
            input_id: k.clone(),
            text: v.clone(),
        })
        .collect();
    write_jsonl(path, &recs)
}

/// Quotes a CSV field when needed.
pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Builds a CSV document from a header and rows of already-formatted fields.
pub fn csv<I, R>(header: &str, rows: I) -> String
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut out = format!("{header}\n");
    for row in rows {
        let fields: Vec<String> = row.into_iter().map(|f| csv_field(&f)).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn write_file(path: &Path, contents: &str) -> Result<PathBuf> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}
