//! Human-study machinery: the counterbalanced assignment plan, a simulated
//! annotator and the analysis of collected responses.

mod analysis;
mod simulate;
mod ttest;

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::method::{level_percent, Method, LENGTH_LEVELS};

pub use analysis::{analyze, CellStats, ClassStats, Gold, StudyReport};
pub use simulate::{simulate, SimAnnotator, DEFAULT_PARTICIPATION};
pub use ttest::{regularized_incomplete_beta, student_t_two_sided, two_sample_t, TTest};

pub const N_REVIEWS: usize = 100;
pub const REVIEWS_PER_BATCH: usize = 5;
pub const N_BATCHES: usize = N_REVIEWS / REVIEWS_PER_BATCH;
pub const N_GROUPS: usize = 10;
pub const GROUP_SIZE: usize = 20;
pub const N_WORKERS: usize = N_GROUPS * GROUP_SIZE;
/// Workers who may take each HIT.
pub const ASSIGNMENTS_PER_HIT: usize = 7;
/// HIT indices `0..5` use the first method, `5..10` the second.
pub const STUDY_METHODS: [Method; 2] = [Method::LimitedInk, Method::Random];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitItem {
    pub review_id: String,
    pub length_level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitSpec {
    pub hit_id: String,
    pub batch: usize,
    /// Position within the batch, `0..10`.
    pub index: usize,
    pub method: Method,
    pub group: usize,
    pub items: Vec<HitItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentPlan {
    pub batches: Vec<Vec<String>>,
    /// Batch-major, ten per batch.
    pub hits: Vec<HitSpec>,
    pub groups: Vec<Vec<String>>,
    pub assignments_per_hit: usize,
}

/// One participant answer. Labels are class names; `code` gives the
/// 1-based numeric encoding used by the significance test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub worker_id: String,
    pub review_id: String,
    pub hit_id: String,
    pub method: Method,
    pub length_level: f64,
    pub label: String,
    pub confidence: u8,
    /// Milliseconds since the Unix epoch, or a sequence number in
    /// simulations.
    pub timestamp: u64,
}

pub fn default_worker_ids() -> Vec<String> {
    (0..N_WORKERS).map(|i| format!("w{i:03}")).collect()
}

fn hit_id(batch: usize, index: usize) -> String {
    format!("b{batch:02}-h{index}")
}

/// Level of the `i`-th review of a batch in the `j`-th HIT of a method.
pub fn latin_level(i: usize, j: usize) -> f64 {
    LENGTH_LEVELS[(i + j) % REVIEWS_PER_BATCH]
}

/// Worker group paired with HIT `index` of `batch`. The rotation makes each
/// group take one HIT per batch and move between methods over the batches.
pub fn group_for(batch: usize, index: usize) -> usize {
    (index + batch) % N_GROUPS
}

fn distinct(ids: &[String], expected: usize, what: &str) -> Result<()> {
    if ids.len() != expected {
        return Err(Error::Plan(format!("expected {expected} {what}, got {}", ids.len())));
    }
    let mut seen = HashSet::new();
    if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
        return Err(Error::Plan(format!("duplicate {what} {dup:?}")));
    }
    Ok(())
}

/// Shuffles reviews into batches and workers into groups, then lays out a
/// cyclic Latin square per batch and method.
pub fn build_plan<R: Rng + ?Sized>(
    review_ids: &[String],
    worker_ids: &[String],
    rng: &mut R,
) -> Result<AssignmentPlan> {
    distinct(review_ids, N_REVIEWS, "review ids")?;
    distinct(worker_ids, N_WORKERS, "worker ids")?;
    let mut reviews = review_ids.to_vec();
    reviews.shuffle(rng);
    let mut workers = worker_ids.to_vec();
    workers.shuffle(rng);

    let batches: Vec<Vec<String>> = reviews.chunks(REVIEWS_PER_BATCH).map(<[String]>::to_vec).collect();
    let groups: Vec<Vec<String>> = workers.chunks(GROUP_SIZE).map(<[String]>::to_vec).collect();
    let mut hits = Vec::with_capacity(N_BATCHES * 2 * REVIEWS_PER_BATCH);
    for (b, batch) in batches.iter().enumerate() {
        for (m, &method) in STUDY_METHODS.iter().enumerate() {
            for j in 0..REVIEWS_PER_BATCH {
                let index = m * REVIEWS_PER_BATCH + j;
                hits.push(HitSpec {
                    hit_id: hit_id(b, index),
                    batch: b,
                    index,
                    method,
                    group: group_for(b, index),
                    items: batch
                        .iter()
                        .enumerate()
                        .map(|(i, id)| HitItem {
                            review_id: id.clone(),
                            length_level: latin_level(i, j),
                        })
                        .collect(),
                });
            }
        }
    }
    let plan = AssignmentPlan {
        batches,
        hits,
        groups,
        assignments_per_hit: ASSIGNMENTS_PER_HIT,
    };
    plan.check()?;
    Ok(plan)
}

impl AssignmentPlan {
    pub fn review_ids(&self) -> impl Iterator<Item = &String> {
        self.batches.iter().flatten()
    }

    pub fn hit(&self, hit_id: &str) -> Option<&HitSpec> {
        self.hits.iter().find(|h| h.hit_id == hit_id)
    }

    pub fn group_of(&self, worker_id: &str) -> Option<usize> {
        self.groups.iter().position(|g| g.iter().any(|w| w == worker_id))
    }

    /// HITs of one group in batch order.
    pub fn hits_for_group(&self, group: usize) -> impl Iterator<Item = &HitSpec> {
        self.hits.iter().filter(move |h| h.group == group)
    }

    /// Total assignment slots: HITs times assignments per HIT.
    pub fn slot_count(&self) -> usize {
        self.hits.len() * self.assignments_per_hit
    }

    /// Every broken invariant, described. Empty for a valid plan.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.batches.len() != N_BATCHES {
            out.push(format!("{} batches", self.batches.len()));
        }
        let mut seen = HashSet::new();
        for (b, batch) in self.batches.iter().enumerate() {
            if batch.len() != REVIEWS_PER_BATCH {
                out.push(format!("batch {b} has {} reviews", batch.len()));
            }
            for id in batch {
                if !seen.insert(id) {
                    out.push(format!("review {id:?} in more than one batch"));
                }
            }
        }
        let mut workers = HashSet::new();
        for (g, group) in self.groups.iter().enumerate() {
            for w in group {
                if !workers.insert(w) {
                    out.push(format!("worker {w:?} in more than one group (group {g})"));
                }
            }
        }

        // (review, method, level) -> HITs containing it.
        let mut cover: HashMap<(&str, Method, u32), usize> = HashMap::new();
        // (group, batch) -> HIT count.
        let mut pairing: HashMap<(usize, usize), usize> = HashMap::new();
        for h in &self.hits {
            let batch = self.batches.get(h.batch);
            let mut levels: Vec<u32> = h.items.iter().map(|i| level_percent(i.length_level)).collect();
            levels.sort_unstable();
            if levels != LENGTH_LEVELS.map(level_percent) {
                out.push(format!("{}: levels {levels:?} are not a permutation", h.hit_id));
            }
            for item in &h.items {
                if batch.map_or(true, |b| !b.contains(&item.review_id)) {
                    out.push(format!("{}: review {:?} outside its batch", h.hit_id, item.review_id));
                }
                *cover
                    .entry((item.review_id.as_str(), h.method, level_percent(item.length_level)))
                    .or_default() += 1;
            }
            if h.group >= self.groups.len() {
                out.push(format!("{}: no group {}", h.hit_id, h.group));
            }
            *pairing.entry((h.group, h.batch)).or_default() += 1;
        }
        for id in self.review_ids() {
            for method in STUDY_METHODS {
                for level in LENGTH_LEVELS {
                    let c = cover.get(&(id.as_str(), method, level_percent(level))).copied().unwrap_or(0);
                    if c != 1 {
                        out.push(format!("({id:?}, {method}, {}%) covered {c} times", level_percent(level)));
                    }
                }
            }
        }
        for g in 0..self.groups.len() {
            for b in 0..self.batches.len() {
                let c = pairing.get(&(g, b)).copied().unwrap_or(0);
                if c != 1 {
                    out.push(format!("group {g} has {c} HITs in batch {b}"));
                }
            }
        }
        out
    }

    pub fn check(&self) -> Result<()> {
        match self.violations().into_iter().next() {
            None => Ok(()),
            Some(v) => Err(Error::Plan(v)),
        }
    }
}

/// Draws `n` reviews whose model prediction matches the gold label, so
/// accuracy against gold equals agreement with the model.
pub fn sample_reviews<'a, R: Rng + ?Sized>(
    docs: &'a [Document],
    predictions: &[usize],
    n: usize,
    rng: &mut R,
) -> Result<Vec<&'a Document>> {
    if docs.len() != predictions.len() {
        return Err(Error::LengthMismatch(docs.len(), predictions.len()));
    }
    let correct: Vec<&Document> = docs
        .iter()
        .zip(predictions)
        .filter(|(d, &p)| d.label == p)
        .map(|(d, _)| d)
        .collect();
    if correct.len() < n {
        return Err(Error::Plan(format!(
            "need {n} correctly predicted reviews, have {}",
            correct.len()
        )));
    }
    let mut picked: Vec<&Document> = correct.choose_multiple(rng, n).copied().collect();
    picked.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(picked)
}

/// Per-level lookup key for rationales.
pub(crate) type RationaleKey = (String, Method, u32);

pub(crate) fn rationale_index(
    rationales: &[crate::rationale::Rationale],
) -> BTreeMap<RationaleKey, &crate::rationale::Rationale> {
    rationales
        .iter()
        .map(|r| ((r.doc_id.clone(), r.method, level_percent(r.length_level)), r))
        .collect()
}
