use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{rationale_index, AssignmentPlan, Response};
use crate::corpus::synth::{NEGATIVE_KEYWORDS, POSITIVE_KEYWORDS};
use crate::corpus::{Document, LabelSpace};
use crate::error::{Error, Result};
use crate::method::level_percent;
use crate::rationale::Rationale;
use crate::rng::{self, Stream};

/// Fraction of assignment slots completed in the original study
/// (1169 of 1400).
pub const DEFAULT_PARTICIPATION: f64 = 0.835;

/// Stand-in participant. Answers correctly with full confidence when a
/// keyword of the true label is visible, otherwise guesses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimAnnotator {
    pub labels: LabelSpace,
    /// Indexed by label.
    pub keywords: Vec<Vec<String>>,
    /// Chance of a correct guess when nothing informative is visible.
    pub guess_accuracy: f64,
    /// Chance that a worker drawn for a HIT completes it.
    pub participation: f64,
}

impl SimAnnotator {
    pub fn new(labels: LabelSpace, keywords: Vec<Vec<String>>) -> Result<Self> {
        let a = Self {
            labels,
            keywords,
            guess_accuracy: 0.5,
            participation: DEFAULT_PARTICIPATION,
        };
        a.validate()?;
        Ok(a)
    }

    /// Knows the planted keywords of the synthetic sentiment corpus.
    pub fn planted() -> Self {
        let kw = |ws: &[&str]| ws.iter().map(|w| w.to_string()).collect();
        Self::new(
            LabelSpace::sentiment(),
            vec![kw(POSITIVE_KEYWORDS), kw(NEGATIVE_KEYWORDS)],
        )
        .expect("valid")
    }

    pub fn validate(&self) -> Result<()> {
        if self.keywords.len() != self.labels.len() {
            return Err(Error::Config(format!(
                "{} keyword sets for {} labels",
                self.keywords.len(),
                self.labels.len()
            )));
        }
        for (name, p) in [("guess accuracy", self.guess_accuracy), ("participation", self.participation)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} {p} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Label index and confidence for a document shown through `mask`.
    pub fn answer<R: Rng + ?Sized>(&self, doc: &Document, mask: &[bool], rng: &mut R) -> (usize, u8) {
        let keys = &self.keywords[doc.label];
        let visible = doc
            .words
            .iter()
            .zip(mask)
            .any(|(w, &shown)| shown && keys.contains(w));
        if visible {
            return (doc.label, 5);
        }
        let confidence = rng.gen_range(1..=2);
        if rng.gen_bool(self.guess_accuracy) {
            (doc.label, confidence)
        } else {
            let others: Vec<usize> = (0..self.labels.len()).filter(|&l| l != doc.label).collect();
            (*others.choose(rng).expect("at least two labels"), confidence)
        }
    }
}

/// Runs the plan with simulated workers. Each HIT draws its assignees from
/// its group on its own stream, so HITs are independent and parallel.
pub fn simulate(
    plan: &AssignmentPlan,
    docs: &[Document],
    rationales: &[Rationale],
    annotator: &SimAnnotator,
    seed: u64,
) -> Result<Vec<Response>> {
    annotator.validate()?;
    plan.check()?;
    let by_id: HashMap<&str, &Document> = docs.iter().map(|d| (d.id.as_str(), d)).collect();
    let index = rationale_index(rationales);
    let lookup = |review: &str, method, level: f64| -> Result<(&Document, &Rationale)> {
        let doc = by_id
            .get(review)
            .copied()
            .ok_or_else(|| Error::UnknownReview(review.to_string()))?;
        let r = index
            .get(&(review.to_string(), method, level_percent(level)))
            .copied()
            .ok_or_else(|| Error::MissingRationale {
                review_id: review.to_string(),
                method: method.to_string(),
                level,
            })?;
        if r.mask.len() != doc.n_words() {
            return Err(Error::LengthMismatch(r.mask.len(), doc.n_words()));
        }
        Ok((doc, r))
    };
    // Fail on a missing rationale even if no simulated worker would need it.
    for h in &plan.hits {
        for item in &h.items {
            lookup(&item.review_id, h.method, item.length_level)?;
        }
    }

    let per_hit: Vec<Vec<Response>> = plan
        .hits
        .par_iter()
        .map(|h| {
            let mut rng = rng::substream(seed, Stream::Simulate, rng::hash_str(&h.hit_id));
            let group = &plan.groups[h.group];
            let take = plan.assignments_per_hit.min(group.len());
            let assignees: Vec<&String> = group.choose_multiple(&mut rng, take).collect();
            let mut out = Vec::new();
            for (slot, worker) in assignees.into_iter().enumerate() {
                if !rng.gen_bool(annotator.participation) {
                    continue;
                }
                for (pos, item) in h.items.iter().enumerate() {
                    let (doc, r) = lookup(&item.review_id, h.method, item.length_level)?;
                    let (label, confidence) = annotator.answer(doc, &r.mask, &mut rng);
                    out.push(Response {
                        worker_id: worker.clone(),
                        review_id: item.review_id.clone(),
                        hit_id: h.hit_id.clone(),
                        method: h.method,
                        length_level: item.length_level,
                        label: annotator.labels.name(label).expect("in range").to_string(),
                        confidence,
                        timestamp: ((h.batch * 10 + h.index) * plan.assignments_per_hit + slot) as u64
                            * 10
                            + pos as u64,
                    });
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(per_hit.into_iter().flatten().collect())
}
