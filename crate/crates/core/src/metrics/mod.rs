//! Token-level agreement with annotated evidence, end-task label metrics and
//! the ablation report.

mod ablation;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, LabelSpace};
use crate::error::{Error, Result};
use crate::method::Method;
use crate::rationale::Rationale;

pub use ablation::{ablation_report, AblationReport, AblationRow, Variant};

/// Precision, recall and F1 of one comparison.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    /// Builds a triple from counts. Empty denominators give 0.
    pub fn from_counts(overlap: usize, predicted: usize, gold: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(overlap, predicted);
        let recall = ratio(overlap, gold);
        Self {
            precision,
            recall,
            f1: harmonic(precision, recall),
        }
    }
}

/// `2PR / (P + R)`, or 0 when both are 0.
pub fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Token precision, recall and F1 of a predicted word mask against gold.
pub fn token_prf(pred: &[bool], gold: &[bool]) -> Result<Prf> {
    if pred.len() != gold.len() {
        return Err(Error::LengthMismatch(pred.len(), gold.len()));
    }
    let count = |m: &[bool]| m.iter().filter(|&&b| b).count();
    let overlap = pred.iter().zip(gold).filter(|(&p, &g)| p && g).count();
    Ok(Prf::from_counts(overlap, count(pred), count(gold)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocAgreement {
    pub doc_id: String,
    #[serde(flatten)]
    pub prf: Prf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub method: Option<Method>,
    pub length_level: Option<f64>,
    /// Unweighted mean over documents.
    pub mean: Prf,
    pub documents: Vec<DocAgreement>,
    /// Rationales whose document has no annotated evidence.
    pub skipped_without_evidence: usize,
}

/// Macro-averaged token agreement of `rationales` with the evidence in `ds`.
///
/// Method and length level are reported when all rationales share them.
pub fn dataset_agreement(rationales: &[Rationale], ds: &Dataset) -> Result<AgreementReport> {
    let index: HashMap<&str, _> = ds.documents().map(|(_, d)| (d.id.as_str(), d)).collect();
    let mut documents = Vec::new();
    let mut skipped = 0;
    for r in rationales {
        let doc = index
            .get(r.doc_id.as_str())
            .ok_or_else(|| Error::UnknownDocument(r.doc_id.clone()))?;
        let Some(gold) = doc.gold_mask() else {
            skipped += 1;
            continue;
        };
        documents.push(DocAgreement {
            doc_id: r.doc_id.clone(),
            prf: token_prf(&r.mask, &gold)?,
        });
    }
    let n = documents.len().max(1) as f64;
    let mean = Prf {
        precision: documents.iter().map(|d| d.prf.precision).sum::<f64>() / n,
        recall: documents.iter().map(|d| d.prf.recall).sum::<f64>() / n,
        f1: documents.iter().map(|d| d.prf.f1).sum::<f64>() / n,
    };
    let method = rationales
        .first()
        .map(|r| r.method)
        .filter(|m| rationales.iter().all(|r| r.method == *m));
    let length_level = rationales
        .first()
        .map(|r| r.length_level)
        .filter(|l| rationales.iter().all(|r| r.length_level == *l));
    Ok(AgreementReport {
        method,
        length_level,
        mean,
        documents,
        skipped_without_evidence: skipped,
    })
}

/// Per-label metrics of a label prediction task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelPrf {
    pub label: String,
    pub support: usize,
    #[serde(flatten)]
    pub prf: Prf,
}

pub fn per_label_prf(predictions: &[usize], golds: &[usize], labels: &LabelSpace) -> Result<Vec<LabelPrf>> {
    if predictions.len() != golds.len() {
        return Err(Error::LengthMismatch(predictions.len(), golds.len()));
    }
    if golds.is_empty() {
        return Err(Error::EmptyInput("predictions"));
    }
    Ok((0..labels.len())
        .map(|l| {
            let predicted = predictions.iter().filter(|&&p| p == l).count();
            let support = golds.iter().filter(|&&g| g == l).count();
            let overlap = predictions
                .iter()
                .zip(golds)
                .filter(|(&p, &g)| p == l && g == l)
                .count();
            LabelPrf {
                label: labels.name(l).unwrap_or_default().to_string(),
                support,
                prf: Prf::from_counts(overlap, predicted, support),
            }
        })
        .collect())
}

/// Per-label F1 weighted by gold support.
pub fn weighted_f1(predictions: &[usize], golds: &[usize], labels: &LabelSpace) -> Result<f64> {
    let rows = per_label_prf(predictions, golds, labels)?;
    let n = golds.len() as f64;
    Ok(rows.iter().map(|r| r.prf.f1 * r.support as f64 / n).sum())
}

/// Support-weighted precision, recall and F1.
pub fn weighted_prf(rows: &[LabelPrf]) -> Prf {
    let n: usize = rows.iter().map(|r| r.support).sum();
    let w = |f: fn(&Prf) -> f64| {
        rows.iter()
            .map(|r| f(&r.prf) * r.support as f64)
            .sum::<f64>()
            / n.max(1) as f64
    };
    Prf {
        precision: w(|p| p.precision),
        recall: w(|p| p.recall),
        f1: w(|p| p.f1),
    }
}
