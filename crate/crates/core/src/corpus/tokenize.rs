use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Prefix marking a subtoken that continues the previous word piece.
pub const CONTINUATION: &str = "##";

pub fn strip_marker(s: &str) -> &str {
    s.strip_prefix(CONTINUATION).unwrap_or(s)
}

/// Greedy longest-match subword vocabulary with per-character fallback.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SubwordVocab {
    pieces: BTreeSet<String>,
}

impl SubwordVocab {
    /// Pieces may be given with or without the continuation marker.
    pub fn from_pieces<I, S>(pieces: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self {
            pieces: pieces
                .into_iter()
                .map(|p| strip_marker(p.as_ref()).to_string())
                .filter(|p| !p.is_empty())
                .collect(),
        }
    }

    /// Whole words seen at least `min_count` times.
    pub fn from_corpus<'a, I>(words: I, min_count: usize) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for w in words {
            *counts.entry(w).or_default() += 1;
        }
        Self::from_pieces(
            counts
                .into_iter()
                .filter(|&(_, c)| c >= min_count)
                .map(|(w, _)| w),
        )
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn contains(&self, piece: &str) -> bool {
        self.pieces.contains(strip_marker(piece))
    }

    pub fn pieces(&self) -> impl Iterator<Item = &str> {
        self.pieces.iter().map(String::as_str)
    }

    /// Splits one word. Pieces after the first carry [`CONTINUATION`].
    pub fn tokenize_word(&self, word: &str) -> Vec<String> {
        let bounds: Vec<usize> = word
            .char_indices()
            .map(|(i, _)| i)
            .chain(std::iter::once(word.len()))
            .collect();
        let mut out = Vec::new();
        let mut at = 0;
        while at + 1 < bounds.len() {
            let start = bounds[at];
            let mut next = at + 1;
            for end in (at + 1..bounds.len()).rev() {
                if self.pieces.contains(&word[start..bounds[end]]) {
                    next = end;
                    break;
                }
            }
            let piece = &word[start..bounds[next]];
            out.push(if out.is_empty() {
                piece.to_string()
            } else {
                format!("{CONTINUATION}{piece}")
            });
            at = next;
        }
        out
    }
}

/// Subtokens of `words` and the word index of each subtoken.
pub fn tokenize_subwords(words: &[String], vocab: &SubwordVocab) -> Result<(Vec<String>, Vec<usize>)> {
    if words.is_empty() {
        return Err(Error::EmptyDocument);
    }
    let mut subtokens = Vec::with_capacity(words.len());
    let mut alignment = Vec::with_capacity(words.len());
    for (i, w) in words.iter().enumerate() {
        if w.is_empty() {
            return Err(Error::EmptyWord(i));
        }
        for piece in vocab.tokenize_word(w) {
            subtokens.push(piece);
            alignment.push(i);
        }
    }
    Ok((subtokens, alignment))
}
