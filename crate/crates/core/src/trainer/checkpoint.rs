use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::corpus::{Dataset, LabelSpace, SubwordVocab};
use crate::error::{Error, Result};
use crate::io;
use crate::model::Model;
use crate::objectives::LossBreakdown;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean over training documents.
    pub loss: LossBreakdown,
    pub val_weighted_f1: f64,
    pub val_accuracy: f64,
}

/// Trained parameters plus everything needed to apply them to new text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: TrainConfig,
    pub labelspace: LabelSpace,
    /// Subword vocabulary of the training corpus, if it used one.
    pub tokenizer: Option<SubwordVocab>,
    pub vocab_hash: String,
    pub model: Model,
    pub best_val_f1: f64,
    /// `None` when no epoch ran and the checkpoint holds the initialization.
    pub best_epoch: Option<usize>,
    pub history: Vec<EpochStats>,
}

impl Checkpoint {
    pub fn new(
        config: TrainConfig,
        ds: &Dataset,
        model: Model,
        best_val_f1: f64,
        best_epoch: Option<usize>,
    ) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            config,
            labelspace: ds.labelspace.clone(),
            tokenizer: ds.tokenizer.clone(),
            vocab_hash: model.vocab.hash(),
            model,
            best_val_f1,
            best_epoch,
            history: Vec::new(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        io::write_json(path, self)
    }

    /// Loads and checks version and vocabulary hash.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ckpt: Checkpoint = io::read_json(path)?;
        ckpt.check()?;
        Ok(ckpt)
    }

    pub fn check(&self) -> Result<()> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        if self.model.vocab.hash() != self.vocab_hash {
            return Err(Error::Checkpoint("vocabulary hash mismatch".into()));
        }
        if self.labelspace.len() != self.model.classifier.output_bias.len() {
            return Err(Error::Checkpoint(
                "label space does not match the classifier".into(),
            ));
        }
        Ok(())
    }
}
