//! Labeled documents, optional human evidence spans, and ingestion.

mod jsonl;
pub mod synth;
mod tokenize;

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use jsonl::{load_jsonl, read_jsonl, save_jsonl, write_jsonl, LoadOptions, Record};
pub use tokenize::{strip_marker, tokenize_subwords, SubwordVocab, CONTINUATION};

pub const DEFAULT_MAX_WORDS: usize = 256;

/// Word span `[start, end)`. Serialized as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

impl From<[usize; 2]> for Span {
    fn from([start, end]: [usize; 2]) -> Self {
        Self { start, end }
    }
}

impl From<Span> for [usize; 2] {
    fn from(s: Span) -> Self {
        [s.start, s.end]
    }
}

/// Ordered set of class names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct LabelSpace {
    names: Vec<String>,
}

impl LabelSpace {
    pub fn new<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.len() < 2 {
            return Err(Error::LabelSpace(format!(
                "need at least 2 labels, got {}",
                names.len()
            )));
        }
        let mut seen = HashSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(Error::LabelSpace(format!("duplicate label {n:?}")));
            }
        }
        Ok(Self { names })
    }

    /// `positive` = 0, `negative` = 1.
    pub fn sentiment() -> Self {
        Self::new(["positive", "negative"]).expect("valid")
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.names.get(index).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

impl TryFrom<Vec<String>> for LabelSpace {
    type Error = Error;
    fn try_from(names: Vec<String>) -> Result<Self> {
        Self::new(names)
    }
}

impl From<LabelSpace> for Vec<String> {
    fn from(l: LabelSpace) -> Self {
        l.names
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub words: Vec<String>,
    pub subtokens: Vec<String>,
    /// Word index of each subtoken.
    pub alignment: Vec<usize>,
    pub label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence: Option<Vec<Span>>,
    /// Set when ingestion cut the document to the configured word limit.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub truncated: bool,
}

impl Document {
    /// Document whose subtokens are its words.
    pub fn new(
        id: impl Into<String>,
        words: Vec<String>,
        label: usize,
        evidence: Option<Vec<Span>>,
    ) -> Self {
        let alignment = (0..words.len()).collect();
        Self {
            id: id.into(),
            subtokens: words.clone(),
            words,
            alignment,
            label,
            evidence,
            truncated: false,
        }
    }

    pub fn n_words(&self) -> usize {
        self.words.len()
    }

    pub fn n_subtokens(&self) -> usize {
        self.subtokens.len()
    }

    /// Re-derives subtokens; `None` means one subtoken per word.
    pub fn retokenize(&mut self, vocab: Option<&SubwordVocab>) -> Result<()> {
        match vocab {
            Some(v) => {
                let (subtokens, alignment) = tokenize_subwords(&self.words, v)?;
                self.subtokens = subtokens;
                self.alignment = alignment;
            }
            None => {
                if let Some(i) = self.words.iter().position(String::is_empty) {
                    return Err(Error::EmptyWord(i));
                }
                self.subtokens = self.words.clone();
                self.alignment = (0..self.words.len()).collect();
            }
        }
        Ok(())
    }

    /// Keeps the first `max_words` words, clipping evidence to match.
    pub fn truncate(&mut self, max_words: usize) {
        if self.words.len() <= max_words {
            return;
        }
        self.words.truncate(max_words);
        let keep = self.alignment.iter().take_while(|&&w| w < max_words).count();
        self.subtokens.truncate(keep);
        self.alignment.truncate(keep);
        if let Some(ev) = self.evidence.as_mut() {
            *ev = ev
                .iter()
                .filter(|s| s.start < max_words)
                .map(|s| Span::new(s.start, s.end.min(max_words)))
                .collect();
        }
        self.truncated = true;
    }

    /// Union of evidence spans as a word mask.
    pub fn gold_mask(&self) -> Option<Vec<bool>> {
        let ev = self.evidence.as_ref()?;
        let mut mask = vec![false; self.n_words()];
        for s in ev {
            for m in &mut mask[s.start.min(self.n_words())..s.end.min(self.n_words())] {
                *m = true;
            }
        }
        Some(mask)
    }
}

/// One broken [`Document`] invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    NoWords,
    EmptyWord(usize),
    EmptySubtoken(usize),
    AlignmentLength { subtokens: usize, alignment: usize },
    AlignmentStart(usize),
    AlignmentEnd { last: usize, expected: usize },
    AlignmentOrder(usize),
    AlignmentRange(usize),
    AlignmentCoverage(Vec<usize>),
    SpanOutOfBounds(Span),
    LabelOutOfRange(usize),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoWords => write!(f, "document has no words"),
            Violation::EmptyWord(i) => write!(f, "word {i} is empty"),
            Violation::EmptySubtoken(i) => write!(f, "subtoken {i} is empty"),
            Violation::AlignmentLength {
                subtokens,
                alignment,
            } => write!(f, "alignment has {alignment} entries for {subtokens} subtokens"),
            Violation::AlignmentStart(s) => write!(f, "alignment starts at {s}, not 0"),
            Violation::AlignmentEnd { last, expected } => {
                write!(f, "alignment ends at {last}, expected {expected}")
            }
            Violation::AlignmentOrder(i) => write!(f, "alignment decreases at subtoken {i}"),
            Violation::AlignmentRange(i) => {
                write!(f, "alignment entry {i} points past the last word")
            }
            Violation::AlignmentCoverage(missing) => {
                write!(f, "alignment coverage: words {missing:?} have no subtoken")
            }
            Violation::SpanOutOfBounds(s) => {
                write!(f, "evidence span [{}, {}) out of bounds", s.start, s.end)
            }
            Violation::LabelOutOfRange(l) => write!(f, "label index {l} out of range"),
        }
    }
}

/// Every violated document invariant; empty when the document is valid.
pub fn validate(doc: &Document, labels: &LabelSpace) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = doc.n_words();
    if n == 0 {
        out.push(Violation::NoWords);
    }
    for (i, w) in doc.words.iter().enumerate() {
        if w.is_empty() {
            out.push(Violation::EmptyWord(i));
        }
    }
    for (i, s) in doc.subtokens.iter().enumerate() {
        if strip_marker(s).is_empty() {
            out.push(Violation::EmptySubtoken(i));
        }
    }
    let a = &doc.alignment;
    if a.len() != doc.subtokens.len() {
        out.push(Violation::AlignmentLength {
            subtokens: doc.subtokens.len(),
            alignment: a.len(),
        });
    }
    if n > 0 {
        if let Some(&first) = a.first() {
            if first != 0 {
                out.push(Violation::AlignmentStart(first));
            }
        }
        if let Some(&last) = a.last() {
            if last != n - 1 {
                out.push(Violation::AlignmentEnd {
                    last,
                    expected: n - 1,
                });
            }
        }
        for i in 1..a.len() {
            if a[i] < a[i - 1] {
                out.push(Violation::AlignmentOrder(i));
            }
        }
        for (i, &w) in a.iter().enumerate() {
            if w >= n {
                out.push(Violation::AlignmentRange(i));
            }
        }
        let mut covered = vec![false; n];
        for &w in a.iter().filter(|&&w| w < n) {
            covered[w] = true;
        }
        let missing: Vec<usize> = (0..n).filter(|&w| !covered[w]).collect();
        if !missing.is_empty() {
            out.push(Violation::AlignmentCoverage(missing));
        }
    }
    if let Some(ev) = &doc.evidence {
        for s in ev {
            if s.start >= s.end || s.end > n {
                out.push(Violation::SpanOutOfBounds(*s));
            }
        }
    }
    if doc.label >= labels.len() {
        out.push(Violation::LabelOutOfRange(doc.label));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub labelspace: LabelSpace,
    pub train: Vec<Document>,
    pub val: Vec<Document>,
    pub test: Vec<Document>,
    /// Subword vocabulary the documents were tokenized with; `None` means
    /// one subtoken per word.
    #[serde(default)]
    pub tokenizer: Option<SubwordVocab>,
}

impl Dataset {
    pub fn new(labelspace: LabelSpace) -> Self {
        Self {
            labelspace,
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
            tokenizer: None,
        }
    }

    pub fn split(&self, split: Split) -> &[Document] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn split_mut(&mut self, split: Split) -> &mut Vec<Document> {
        match split {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
        }
    }

    pub fn documents(&self) -> impl Iterator<Item = (Split, &Document)> {
        Split::ALL
            .into_iter()
            .flat_map(move |s| self.split(s).iter().map(move |d| (s, d)))
    }

    pub fn find(&self, id: &str) -> Option<&Document> {
        self.documents().map(|(_, d)| d).find(|d| d.id == id)
    }

    /// Checks split disjointness and every document.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for (_, doc) in self.documents() {
            if !seen.insert(doc.id.as_str()) {
                return Err(Error::DuplicateId {
                    line: 0,
                    id: doc.id.clone(),
                });
            }
            let v = validate(doc, &self.labelspace);
            if !v.is_empty() {
                return Err(Error::InvalidDocument {
                    id: doc.id.clone(),
                    violations: v.iter().map(ToString::to_string).collect(),
                });
            }
        }
        Ok(())
    }

    /// Tokenizes every document with `vocab` and remembers it.
    pub fn retokenize(&mut self, vocab: Option<SubwordVocab>) -> Result<()> {
        for split in Split::ALL {
            for doc in self.split_mut(split) {
                doc.retokenize(vocab.as_ref())?;
            }
        }
        self.tokenizer = vocab;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let ds: Dataset = serde_json::from_reader(std::io::BufReader::new(file))?;
        ds.validate()?;
        Ok(ds)
    }
}

#[cfg(test)]
mod tests;
