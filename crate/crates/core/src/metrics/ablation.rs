use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::method::Method;
use crate::trainer::{evaluate, train, EvalReport, TrainConfig};

/// One row of the ablation table, each switching off one ingredient of the
/// full objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    /// Task term trained on random labels.
    NoSufficiency,
    /// `lambda1 = 0`.
    NoContinuity,
    /// `lambda2 = 0`.
    NoSparsity,
    /// Convolution window 1.
    NoContextual,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::NoSufficiency,
        Variant::NoContinuity,
        Variant::NoSparsity,
        Variant::NoContextual,
    ];

    pub fn title(self) -> &'static str {
        match self {
            Variant::Full => "Full model",
            Variant::NoSufficiency => "No Sufficiency",
            Variant::NoContinuity => "No Continuity",
            Variant::NoSparsity => "No Sparsity",
            Variant::NoContextual => "No Contextual",
        }
    }

    pub fn apply(self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        match self {
            Variant::Full => {}
            Variant::NoSufficiency => cfg.random_labels = true,
            Variant::NoContinuity => cfg.weights.lambda1 = 0.0,
            Variant::NoSparsity => cfg.weights.lambda2 = 0.0,
            Variant::NoContextual => cfg.model.window = 1,
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub eval: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub method: Method,
    pub length_level: f64,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, v: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == v)
    }

    /// Aligned text table of test precision, recall, F1 and accuracy.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{:<16} {:>9} {:>9} {:>9} {:>9}\n",
            "variant", "precision", "recall", "f1", "accuracy"
        );
        for r in &self.rows {
            let w = &r.eval.weighted;
            let _ = writeln!(
                out,
                "{:<16} {:>9.3} {:>9.3} {:>9.3} {:>9.3}",
                r.variant.title(),
                w.precision,
                w.recall,
                w.f1,
                r.eval.accuracy
            );
        }
        out
    }
}

/// Trains the full model and each variant from `base`, then evaluates every
/// run on the test split. The full model is added when missing.
pub fn ablation_report(ds: &Dataset, base: &TrainConfig, variants: &[Variant]) -> Result<AblationReport> {
    if ds.test.is_empty() {
        return Err(Error::EmptySplit("test"));
    }
    let mut wanted = vec![Variant::Full];
    for &v in variants {
        if !wanted.contains(&v) {
            wanted.push(v);
        }
    }
    let rows = wanted
        .par_iter()
        .map(|&variant| {
            let ckpt = train(ds, &variant.apply(base))?;
            Ok(AblationRow {
                variant,
                eval: evaluate(&ckpt, &ds.test)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationReport {
        method: base.method,
        length_level: base.length_level(),
        rows,
    })
}
