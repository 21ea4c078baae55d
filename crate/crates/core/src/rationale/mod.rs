//! Word-level rationales: extraction from a checkpoint, the matched random
//! baseline and masked-text rendering.

use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Span};
use crate::error::{Error, Result};
use crate::io;
use crate::method::Method;
use crate::model::{hard_topk, target_k, Mode};
use crate::rng::{self, Stream};
use crate::trainer::Checkpoint;

/// Glyph standing in for hidden words.
pub const ELLIPSIS: char = '…';
/// Bounds of the number of glyphs per hidden run.
pub const ELLIPSIS_RUN: (usize, usize) = (1, 5);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rationale {
    pub doc_id: String,
    pub method: Method,
    pub length_level: f64,
    #[serde(with = "bits")]
    pub mask: Vec<bool>,
    pub spans: Vec<Span>,
}

mod bits {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(mask: &[bool], s: S) -> Result<S::Ok, S::Error> {
        mask.iter().map(|&b| u8::from(b)).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<bool>, D::Error> {
        Vec::<u8>::deserialize(d)?
            .into_iter()
            .map(|v| match v {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(serde::de::Error::custom(format!("mask entry {other} is not 0 or 1"))),
            })
            .collect()
    }
}

impl Rationale {
    pub fn new(doc_id: impl Into<String>, method: Method, length_level: f64, mask: Vec<bool>) -> Self {
        Self {
            doc_id: doc_id.into(),
            method,
            length_level,
            spans: spans_from_mask(&mask),
            mask,
        }
    }

    pub fn word_count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    /// Checks that the spans are the maximal runs of the mask.
    pub fn check(&self) -> Result<()> {
        if self.spans != spans_from_mask(&self.mask) {
            return Err(Error::MalformedRecord {
                line: 0,
                msg: format!("spans of {:?} do not match its mask", self.doc_id),
            });
        }
        Ok(())
    }
}

/// Maximal runs of `true`.
pub fn spans_from_mask(mask: &[bool]) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, &b) in mask.iter().chain(std::iter::once(&false)).enumerate() {
        match (b, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                spans.push(Span::new(s, i));
                start = None;
            }
            _ => {}
        }
    }
    spans
}

/// Word score = maximum of its subtoken scores. `alignment[i]` is the word
/// of subtoken `i`.
pub fn aggregate_word_scores(scores: &[f64], alignment: &[usize], n_words: usize) -> Result<Vec<f64>> {
    if scores.len() != alignment.len() {
        return Err(Error::LengthMismatch(scores.len(), alignment.len()));
    }
    let mut out = vec![f64::NEG_INFINITY; n_words];
    for (&s, &w) in scores.iter().zip(alignment) {
        let slot = out.get_mut(w).ok_or(Error::IndexOutOfRange {
            index: w,
            len: n_words,
        })?;
        *slot = slot.max(s);
    }
    Ok(out)
}

/// Per-word scores of `doc` under the checkpoint's identifier.
pub fn word_scores(ckpt: &Checkpoint, doc: &Document) -> Result<Vec<f64>> {
    if doc.n_words() == 0 {
        return Err(Error::EmptyDocument);
    }
    // Eval mode does not draw from the rng.
    let scores = ckpt
        .model
        .identifier_logits(doc, Mode::Eval, &mut rng::stream(0, Stream::Dropout))?;
    aggregate_word_scores(&scores, &doc.alignment, doc.n_words())
}

/// The `ceil(level * n)` highest-scoring words of `doc`.
pub fn extract(ckpt: &Checkpoint, doc: &Document, length_level: f64) -> Result<Rationale> {
    let scores = word_scores(ckpt, doc)?;
    let k = target_k(length_level, scores.len())?;
    Ok(Rationale::new(
        doc.id.clone(),
        ckpt.config.method,
        length_level,
        hard_topk(&scores, k)?,
    ))
}

/// Mean number of spans per rationale.
pub fn avg_segment_count(rationales: &[Rationale]) -> Result<f64> {
    if rationales.is_empty() {
        return Err(Error::EmptyInput("rationales"));
    }
    Ok(rationales.iter().map(|r| r.spans.len()).sum::<usize>() as f64 / rationales.len() as f64)
}

/// A random rationale plus the segment count actually used.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomDraw {
    pub rationale: Rationale,
    pub requested_segments: usize,
    pub segments: usize,
}

impl RandomDraw {
    pub fn reduced(&self) -> bool {
        self.segments != self.requested_segments
    }
}

/// Largest segment count that fits `k` words into `n` with gaps between runs.
pub fn max_segments(n: usize, k: usize) -> usize {
    k.min(n + 1 - k)
}

/// `k` of `n` positions in `s` runs. Run lengths are a uniform composition
/// of `k`; run positions are uniform over all placements with at least one
/// gap between runs. `s` is clamped into the feasible range.
pub fn random_mask<R: Rng + ?Sized>(n: usize, k: usize, s: usize, rng: &mut R) -> Result<(Vec<bool>, usize)> {
    if k == 0 || k > n {
        return Err(Error::KOutOfRange { k, n });
    }
    let s = s.clamp(1, max_segments(n, k));
    // Composition: s - 1 distinct cuts among the k - 1 inner positions.
    let mut cuts: Vec<usize> = sample(rng, k - 1, s - 1).into_iter().map(|c| c + 1).collect();
    cuts.sort_unstable();
    cuts.push(k);
    let mut lengths = Vec::with_capacity(s);
    let mut prev = 0;
    for c in cuts {
        lengths.push(c - prev);
        prev = c;
    }
    // Placement: the free zeros go into s + 1 gaps by stars and bars.
    let free = n - k - (s - 1);
    let mut slots: Vec<usize> = sample(rng, free + s, s).into_vec();
    slots.sort_unstable();
    let mut mask = vec![false; n];
    let mut placed = 0;
    for (&slot, &len) in slots.iter().zip(&lengths) {
        // slot - j free zeros, j mandatory gaps and the earlier runs precede
        // run j.
        let start = slot + placed;
        mask[start..start + len].iter_mut().for_each(|b| *b = true);
        placed += len;
    }
    Ok((mask, s))
}

/// Random rationale of `k` words in `s` runs. Only the document's length
/// and id are used.
pub fn random_rationale<R: Rng + ?Sized>(
    doc: &Document,
    length_level: f64,
    k: usize,
    s: usize,
    rng: &mut R,
) -> Result<RandomDraw> {
    let (mask, used) = random_mask(doc.n_words(), k, s, rng)?;
    Ok(RandomDraw {
        rationale: Rationale::new(doc.id.clone(), Method::Random, length_level, mask),
        requested_segments: s,
        segments: used,
    })
}

/// Random rationales matched to a reference set at one length level: same
/// per-document word budget and the reference's mean segment count, rounded.
/// Each document draws from its own stream, keyed by its id.
pub fn matched_random_baseline(
    docs: &[&Document],
    reference: &[Rationale],
    length_level: f64,
    seed: u64,
) -> Result<Vec<RandomDraw>> {
    let s = (avg_segment_count(reference)?.round() as usize).max(1);
    docs.iter()
        .map(|doc| {
            let k = target_k(length_level, doc.n_words())?;
            let mut rng = rng::substream(seed, Stream::RandomBaseline, rng::hash_str(&doc.id));
            random_rationale(doc, length_level, k, s, &mut rng)
        })
        .collect()
}

/// Shows the rationale words in order and replaces each hidden run with
/// 1 to 5 ellipsis glyphs, so the text length gives nothing away.
pub fn render_masked<R: Rng + ?Sized>(doc: &Document, rationale: &Rationale, rng: &mut R) -> Result<String> {
    if rationale.mask.len() != doc.n_words() {
        return Err(Error::LengthMismatch(rationale.mask.len(), doc.n_words()));
    }
    let mut parts: Vec<String> = Vec::new();
    let mut hidden = false;
    for (word, &keep) in doc.words.iter().zip(&rationale.mask) {
        if keep {
            parts.push(word.clone());
            hidden = false;
        } else if !hidden {
            let r = rng.gen_range(ELLIPSIS_RUN.0..=ELLIPSIS_RUN.1);
            parts.push(std::iter::repeat(ELLIPSIS).take(r).collect());
            hidden = true;
        }
    }
    Ok(parts.join(" "))
}

pub fn save_rationales(path: impl AsRef<Path>, rationales: &[Rationale]) -> Result<()> {
    io::write_jsonl(path, rationales)
}

pub fn load_rationales(path: impl AsRef<Path>) -> Result<Vec<Rationale>> {
    let rs: Vec<Rationale> = io::read_jsonl(path)?;
    for (i, r) in rs.iter().enumerate() {
        r.check().map_err(|_| Error::MalformedRecord {
            line: i + 1,
            msg: format!("spans of {:?} do not match its mask", r.doc_id),
        })?;
    }
    Ok(rs)
}
