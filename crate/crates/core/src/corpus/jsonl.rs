use std::collections::HashSet;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, Document, LabelSpace, Span, Split, SubwordVocab, DEFAULT_MAX_WORDS};
use crate::error::{Error, Result};

/// One line of the corpus file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub id: String,
    pub split: Split,
    pub words: Vec<String>,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence: Option<Vec<[usize; 2]>>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub truncated: bool,
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub max_words: usize,
    pub tokenizer: Option<SubwordVocab>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            max_words: DEFAULT_MAX_WORDS,
            tokenizer: None,
        }
    }
}

pub fn load_jsonl(path: impl AsRef<Path>, labels: &LabelSpace, opts: &LoadOptions) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    read_jsonl(BufReader::new(file), labels, opts)
}

pub fn read_jsonl<R: BufRead>(reader: R, labels: &LabelSpace, opts: &LoadOptions) -> Result<Dataset> {
    let mut ds = Dataset::new(labels.clone());
    ds.tokenizer = opts.tokenizer.clone();
    let mut ids = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            line: line_no,
            msg: e.to_string(),
        })?;
        let (split, doc) = record_to_document(rec, labels, opts, line_no)?;
        if !ids.insert(doc.id.clone()) {
            return Err(Error::DuplicateId {
                line: line_no,
                id: doc.id,
            });
        }
        ds.split_mut(split).push(doc);
    }
    Ok(ds)
}

fn record_to_document(
    rec: Record,
    labels: &LabelSpace,
    opts: &LoadOptions,
    line: usize,
) -> Result<(Split, Document)> {
    let malformed = |msg: String| Error::MalformedRecord { line, msg };
    if rec.words.is_empty() {
        return Err(malformed("record has no words".into()));
    }
    if let Some(i) = rec.words.iter().position(String::is_empty) {
        return Err(malformed(format!("empty word at position {i}")));
    }
    let label = labels.index_of(&rec.label).ok_or_else(|| Error::UnknownLabel {
        line,
        label: rec.label.clone(),
    })?;
    let n = rec.words.len();
    let evidence = match rec.evidence {
        Some(spans) => {
            let mut out = Vec::with_capacity(spans.len());
            for [start, end] in spans {
                if start >= end || end > n {
                    return Err(Error::SpanOutOfBounds {
                        line,
                        start,
                        end,
                        len: n,
                    });
                }
                out.push(Span::new(start, end));
            }
            Some(out)
        }
        None => None,
    };
    let mut doc = Document::new(rec.id, rec.words, label, evidence);
    doc.retokenize(opts.tokenizer.as_ref())?;
    doc.truncate(opts.max_words);
    doc.truncated |= rec.truncated;
    Ok((rec.split, doc))
}

pub fn document_to_record(doc: &Document, split: Split, labels: &LabelSpace) -> Record {
    Record {
        id: doc.id.clone(),
        split,
        words: doc.words.clone(),
        label: labels.name(doc.label).unwrap_or_default().to_string(),
        evidence: doc
            .evidence
            .as_ref()
            .map(|ev| ev.iter().map(|&s| s.into()).collect()),
        truncated: doc.truncated,
    }
}

pub fn write_jsonl<W: Write>(ds: &Dataset, mut out: W) -> Result<()> {
    for (split, doc) in ds.documents() {
        serde_json::to_writer(&mut out, &document_to_record(doc, split, &ds.labelspace))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_jsonl(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_jsonl(ds, &mut buf)?;
    crate::io::write_atomic(path, &buf)
}
