//! Planted-keyword review corpus.
//!
//! Each review is neutral filler with a few planted polarity phrases drawn
//! only from the keywords of its label, so the label is a deterministic
//! function of the planted words and the phrases are the gold evidence.

use rand::seq::SliceRandom;
use rand::Rng;

use super::{Dataset, Document, LabelSpace, Span, Split};
use crate::rng::{self, Stream};

pub const POSITIVE_KEYWORDS: &[&str] = &[
    "wonderful",
    "brilliant",
    "superb",
    "delightful",
    "charming",
    "masterful",
    "gripping",
    "stunning",
    "excellent",
    "moving",
    "hilarious",
    "beautiful",
];

pub const NEGATIVE_KEYWORDS: &[&str] = &[
    "terrible",
    "boring",
    "awful",
    "dreadful",
    "clumsy",
    "tedious",
    "lifeless",
    "painful",
    "mediocre",
    "predictable",
    "annoying",
    "forgettable",
];

const FILLER: &[&str] = &[
    "the", "a", "an", "film", "movie", "story", "plot", "scene", "scenes", "actor", "actress",
    "director", "camera", "script", "dialogue", "character", "characters", "ending", "opening",
    "music", "score", "setting", "city", "house", "night", "day", "family", "friend", "friends",
    "with", "and", "but", "or", "of", "in", "on", "at", "to", "from", "for", "about", "after",
    "before", "during", "while", "then", "when", "where", "it", "its", "this", "that", "these",
    "those", "is", "was", "were", "are", "has", "had", "have", "seems", "feels", "looks", "runs",
    "follows", "shows", "tells", "takes", "makes", "goes", "comes", "turns", "keeps", "minutes",
    "hours", "time", "year", "sequel", "original", "version", "studio", "budget", "cast",
    "crew", "role", "roles", "screen", "theater", "audience", "viewer", "viewers", "critic",
    "critics", "trailer", "poster", "genre", "drama", "comedy", "thriller", "western",
    "romance", "mystery", "journey", "village", "train", "road", "car", "letter", "phone",
    "window", "door", "morning", "evening", "summer", "winter", "again", "also", "just",
    "still", "mostly", "some", "many", "few", "two", "three", "first", "second", "last",
    "other", "another", "each", "every", "between", "through", "over", "under", "into",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub min_phrases: usize,
    pub max_phrases: usize,
    pub phrase_len: usize,
    pub seed: u64,
}

impl SynthConfig {
    /// Reviews of 30-60 words with 1-3 planted single-word keywords. The
    /// test split leaves room to draw 100 correctly classified reviews.
    pub fn study(seed: u64) -> Self {
        Self {
            n_train: 400,
            n_val: 100,
            n_test: 200,
            min_words: 30,
            max_words: 60,
            min_phrases: 1,
            max_phrases: 3,
            phrase_len: 1,
            seed,
        }
    }

    /// Reviews whose planted three-word phrases cover roughly a fifth of
    /// the text, so token agreement at the 20% level is meaningful.
    pub fn evidence(seed: u64) -> Self {
        Self {
            n_train: 400,
            n_val: 100,
            n_test: 200,
            min_words: 30,
            max_words: 60,
            min_phrases: 2,
            max_phrases: 4,
            phrase_len: 3,
            seed,
        }
    }
}

pub fn keywords(label: usize) -> &'static [&'static str] {
    if label == 0 {
        POSITIVE_KEYWORDS
    } else {
        NEGATIVE_KEYWORDS
    }
}

/// Builds the train/val/test splits under the sentiment label space.
pub fn generate(cfg: &SynthConfig) -> Dataset {
    let mut rng = rng::stream(cfg.seed, Stream::Synth);
    let mut ds = Dataset::new(LabelSpace::sentiment());
    for (split, count) in [
        (Split::Train, cfg.n_train),
        (Split::Val, cfg.n_val),
        (Split::Test, cfg.n_test),
    ] {
        let mut labels: Vec<usize> = (0..count).map(|i| i % 2).collect();
        labels.shuffle(&mut rng);
        for (i, label) in labels.into_iter().enumerate() {
            let id = format!("{}-{:04}", split.as_str(), i);
            ds.split_mut(split).push(review(&id, label, cfg, &mut rng));
        }
    }
    ds
}

fn review<R: Rng>(id: &str, label: usize, cfg: &SynthConfig, rng: &mut R) -> Document {
    let n = rng.gen_range(cfg.min_words..=cfg.max_words);
    let phrases = rng.gen_range(cfg.min_phrases..=cfg.max_phrases);
    let plen = cfg.phrase_len.max(1);
    // Phrases sit in disjoint slots separated by at least one filler word.
    let filler_count = n - phrases * plen;
    let mut gaps = vec![1usize; phrases + 1];
    gaps[0] = 0;
    gaps[phrases] = 0;
    let spare = filler_count - (phrases - 1);
    for _ in 0..spare {
        let g = rng.gen_range(0..=phrases);
        gaps[g] += 1;
    }
    let pool = keywords(label);
    let mut words = Vec::with_capacity(n);
    let mut evidence = Vec::with_capacity(phrases);
    for (p, &gap) in gaps.iter().enumerate() {
        for _ in 0..gap {
            words.push(FILLER.choose(rng).expect("non-empty").to_string());
        }
        if p < phrases {
            let start = words.len();
            for _ in 0..plen {
                words.push(pool.choose(rng).expect("non-empty").to_string());
            }
            evidence.push(Span::new(start, words.len()));
        }
    }
    debug_assert_eq!(words.len(), n);
    Document::new(id, words, label, Some(evidence))
}
