use std::collections::{BTreeMap, HashMap};
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{two_sample_t, Response, TTest};
use crate::corpus::{Document, LabelSpace};
use crate::error::{Error, Result};
use crate::method::{level_percent, Method};
use crate::metrics::{per_label_prf, LabelPrf};

/// True labels of the study reviews.
#[derive(Debug, Clone, PartialEq)]
pub struct Gold {
    pub labels: LabelSpace,
    pub by_review: HashMap<String, usize>,
}

impl Gold {
    pub fn from_documents<'a>(labels: LabelSpace, docs: impl IntoIterator<Item = &'a Document>) -> Self {
        Self {
            labels,
            by_review: docs.into_iter().map(|d| (d.id.clone(), d.label)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub method: Method,
    pub length_level: f64,
    pub responses: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub mean_confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub method: Method,
    pub length_level: f64,
    #[serde(flatten)]
    pub row: LabelPrf,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StudyReport {
    /// Sorted by method, then level.
    pub cells: Vec<CellStats>,
    pub classes: Vec<ClassStats>,
    /// Predicted label codes (first label = 1) of the two methods,
    /// compared by a pooled t-test. Absent when undefined.
    pub label_code_test: Option<TTest>,
}

/// Accuracy and confidence per (method, level) and per-class P/R/F1.
/// An empty response set gives an empty report.
pub fn analyze(responses: &[Response], gold: &Gold) -> Result<StudyReport> {
    let mut cells: BTreeMap<(Method, u32), Vec<(usize, usize, u8)>> = BTreeMap::new();
    let mut levels: HashMap<u32, f64> = HashMap::new();
    for (i, r) in responses.iter().enumerate() {
        let truth = *gold
            .by_review
            .get(&r.review_id)
            .ok_or_else(|| Error::UnknownReview(r.review_id.clone()))?;
        let predicted = gold.labels.index_of(&r.label).ok_or_else(|| Error::UnknownLabel {
            line: i + 1,
            label: r.label.clone(),
        })?;
        let pct = level_percent(r.length_level);
        levels.insert(pct, r.length_level);
        cells.entry((r.method, pct)).or_default().push((predicted, truth, r.confidence));
    }

    let mut report = StudyReport::default();
    for ((method, pct), rows) in &cells {
        let length_level = levels[pct];
        let correct = rows.iter().filter(|(p, t, _)| p == t).count();
        let n = rows.len() as f64;
        report.cells.push(CellStats {
            method: *method,
            length_level,
            responses: rows.len(),
            correct,
            accuracy: correct as f64 / n,
            mean_confidence: rows.iter().map(|r| f64::from(r.2)).sum::<f64>() / n,
        });
        let preds: Vec<usize> = rows.iter().map(|r| r.0).collect();
        let truths: Vec<usize> = rows.iter().map(|r| r.1).collect();
        for row in per_label_prf(&preds, &truths, &gold.labels)? {
            report.classes.push(ClassStats {
                method: *method,
                length_level,
                row,
            });
        }
    }

    let codes = |m: Method| -> Vec<f64> {
        cells
            .iter()
            .filter(|((method, _), _)| *method == m)
            .flat_map(|(_, rows)| rows.iter().map(|r| (r.0 + 1) as f64))
            .collect()
    };
    report.label_code_test = two_sample_t(&codes(Method::LimitedInk), &codes(Method::Random)).ok();
    Ok(report)
}

impl StudyReport {
    pub fn cell(&self, method: Method, length_level: f64) -> Option<&CellStats> {
        self.cells
            .iter()
            .find(|c| c.method == method && level_percent(c.length_level) == level_percent(length_level))
    }

    /// Accuracy and confidence by level, one column pair per method.
    pub fn to_text(&self) -> String {
        let mut methods: Vec<Method> = self.cells.iter().map(|c| c.method).collect();
        methods.dedup();
        let mut pcts: Vec<u32> = self.cells.iter().map(|c| level_percent(c.length_level)).collect();
        pcts.sort_unstable();
        pcts.dedup();

        let mut out = format!("{:<6}", "level");
        for m in &methods {
            let _ = write!(out, " {:>14} {:>10}", format!("{m} acc"), "conf");
        }
        out.push('\n');
        for pct in &pcts {
            let _ = write!(out, "{:<6}", format!("{pct}%"));
            for &m in &methods {
                match self.cells.iter().find(|c| c.method == m && level_percent(c.length_level) == *pct) {
                    Some(c) => {
                        let _ = write!(out, " {:>14.3} {:>10.2}", c.accuracy, c.mean_confidence);
                    }
                    None => {
                        let _ = write!(out, " {:>14} {:>10}", "-", "-");
                    }
                }
            }
            out.push('\n');
        }

        out.push('\n');
        let _ = writeln!(
            out,
            "{:<12} {:<6} {:<10} {:>9} {:>9} {:>9} {:>8}",
            "method", "level", "label", "precision", "recall", "f1", "support"
        );
        for c in &self.classes {
            let _ = writeln!(
                out,
                "{:<12} {:<6} {:<10} {:>9.3} {:>9.3} {:>9.3} {:>8}",
                c.method.as_str(),
                format!("{}%", level_percent(c.length_level)),
                c.row.label,
                c.row.prf.precision,
                c.row.prf.recall,
                c.row.prf.f1,
                c.row.support
            );
        }
        if let Some(t) = &self.label_code_test {
            let _ = writeln!(out, "\nlabel codes: t({}) = {:.3}, p = {:.4}", t.df, t.t, t.p);
        }
        out
    }

    /// `level,method,accuracy,confidence` rows for external plotting.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("level,method,accuracy,confidence\n");
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                c.length_level, c.method, c.accuracy, c.mean_confidence
            );
        }
        out
    }
}
