//! Joint training of identifier and classifier, the length-level sweep and
//! evaluation.
//!
//! Every method trains both networks on the classification loss of the
//! masked input plus its own regularizer. LimitedInk draws a relaxed top-k
//! mask and adds the continuity and length-control terms; the norm-penalty
//! baselines draw an independent relaxed Bernoulli mask per subtoken and add
//! their penalty scaled by `lambda`. Inference is the same for all methods:
//! hard top-k of eval-mode identifier scores at the checkpoint's level.

mod adam;
mod checkpoint;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Document, LabelSpace};
use crate::diff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::method::{Method, LENGTH_LEVELS};
use crate::metrics::{per_label_prf, weighted_prf, LabelPrf, Prf};
use crate::model::{
    gumbel_noise, gumbel_topk_mask_with_noise, hard_topk, logistic_noise, relaxed_bernoulli,
    relaxed_topk, target_k, MaskSample, Mode, Model, ModelConfig, ModelVars, ModelVocab,
    SamplerConfig,
};
use crate::objectives::{graph, LossBreakdown, LossWeights};
use crate::rng::{self, Stream};

pub use adam::{clip_global_norm, Adam};
pub use checkpoint::{Checkpoint, EpochStats, CHECKPOINT_VERSION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub method: Method,
    pub epochs: usize,
    /// 1e-3 suits the small from-scratch encoder. Fine-tuning a pretrained
    /// transformer would use 2e-5.
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub weights: LossWeights,
    /// Temperature, length level and the seed of the sampling noise.
    pub sampler: SamplerConfig,
    pub model: ModelConfig,
    /// Global gradient-norm bound.
    pub clip_norm: f64,
    /// Train the task term against uniformly random labels, which removes
    /// any pressure for the rationale to be sufficient.
    #[serde(default)]
    pub random_labels: bool,
}

impl TrainConfig {
    pub fn new(method: Method, length_level: f64, seed: u64) -> Self {
        Self {
            method,
            epochs: 6,
            learning_rate: 1e-3,
            batch_size: 8,
            seed,
            weights: LossWeights::default(),
            sampler: SamplerConfig {
                length_level,
                seed,
                ..SamplerConfig::default()
            },
            model: ModelConfig::default(),
            clip_norm: 5.0,
            random_labels: false,
        }
    }

    pub fn length_level(&self) -> f64 {
        self.sampler.length_level
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.sampler.seed = seed;
        self
    }

    pub fn with_length_level(mut self, level: f64) -> Self {
        self.sampler.length_level = level;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.method == Method::Random {
            return Err(Error::Config("the random baseline is not trainable".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.clip_norm > 0.0) {
            return Err(Error::Config(
                "learning rate and clip norm must be positive".into(),
            ));
        }
        let level = self.sampler.length_level;
        if !(level > 0.0 && level <= 1.0) {
            return Err(Error::Config(format!(
                "length level must be in (0, 1], got {level}"
            )));
        }
        if !(self.sampler.temperature > 0.0) {
            return Err(Error::InvalidTemperature(self.sampler.temperature));
        }
        self.weights.validate()
    }
}

/// Builds the per-document objective on `tape`. Returns the scalar total and
/// the unweighted components.
#[allow(clippy::too_many_arguments)]
fn document_loss<R: Rng + ?Sized>(
    tape: &mut Tape,
    model: &Model,
    vars: &ModelVars,
    doc: &Document,
    gold: usize,
    cfg: &TrainConfig,
    noise_rng: &mut R,
    dropout_rng: &mut R,
) -> Result<(Var, [Var; 4])> {
    let ids = model.ids(doc);
    let n = ids.len();
    let tau = cfg.sampler.temperature;
    let level = cfg.sampler.length_level;
    let zero = tape.scalar(0.0);
    let (mask, continuity, length, penalty) = match cfg.method {
        Method::FullText => (tape.constant(Tensor::full(&[n], 1.0)), zero, zero, zero),
        Method::LimitedInk => {
            let logits =
                model
                    .identifier
                    .forward(tape, &vars.identifier, &ids, Mode::Train, dropout_rng)?;
            let k = target_k(level, n)?;
            let noise = gumbel_noise(noise_rng, n);
            let m = relaxed_topk(tape, logits, &noise, k, tau)?.mask;
            let c = graph::fused_lasso(tape, m)?;
            let l = graph::vecsort_penalty(tape, m, k)?;
            (m, c, l, zero)
        }
        Method::SparseN | Method::SparseC | Method::SparseIb => {
            let logits =
                model
                    .identifier
                    .forward(tape, &vars.identifier, &ids, Mode::Train, dropout_rng)?;
            let noise = logistic_noise(noise_rng, n);
            let m = relaxed_bernoulli(tape, logits, &noise, tau)?;
            let p = match cfg.method {
                Method::SparseN => graph::sparse_n_penalty(tape, m),
                Method::SparseC => graph::sparse_c_penalty(tape, m, level)?,
                _ => {
                    let post = tape.sigmoid(logits);
                    graph::sparse_ib_kl(tape, post, level)?
                }
            };
            (m, zero, zero, p)
        }
        Method::Random => unreachable!("rejected by TrainConfig::validate"),
    };
    let probs = model
        .classifier
        .forward(tape, &vars.classifier, &ids, mask)?;
    let task = graph::task_loss(tape, probs, gold)?;
    let w = &cfg.weights;
    let mut total = task;
    for (term, weight) in [(continuity, w.lambda1), (length, w.lambda2), (penalty, w.lambda)] {
        if term != zero && weight != 0.0 {
            let t = tape.scale(term, weight);
            total = tape.add(total, t)?;
        }
    }
    Ok((total, [task, continuity, length, penalty]))
}

/// Trains a fresh model on the train split, keeping the parameters of the
/// epoch with the best validation weighted F1.
pub fn train(ds: &Dataset, cfg: &TrainConfig) -> Result<Checkpoint> {
    cfg.validate()?;
    if ds.train.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    if ds.val.is_empty() {
        return Err(Error::EmptySplit("val"));
    }
    let n_labels = ds.labelspace.len();
    let vocab = ModelVocab::from_documents(ds.train.iter());
    let mut model = Model::init(
        cfg.model.clone(),
        vocab,
        n_labels,
        &mut rng::stream(cfg.seed, Stream::Init),
    )?;
    let golds: Vec<usize> = if cfg.random_labels {
        let mut r = rng::stream(cfg.seed, Stream::Labels);
        ds.train.iter().map(|_| r.gen_range(0..n_labels)).collect()
    } else {
        ds.train.iter().map(|d| d.label).collect()
    };

    let initial = evaluate_model(&model, cfg.method, cfg.length_level(), &ds.val, &ds.labelspace)?;
    let mut ckpt = Checkpoint::new(cfg.clone(), ds, model.clone(), initial.weighted.f1, None);
    if cfg.epochs == 0 {
        return Ok(ckpt);
    }

    let mut order: Vec<usize> = (0..ds.train.len()).collect();
    let mut shuffle_rng = rng::stream(cfg.seed, Stream::Shuffle);
    let mut noise_rng = rng::stream(cfg.sampler.seed, Stream::Sampler);
    let mut dropout_rng = rng::stream(cfg.seed, Stream::Dropout);
    let mut adam = Adam::new(cfg.learning_rate);
    let mut best: Option<(f64, usize, Model)> = None;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut sums = [0.0f64; 5];
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut tape = Tape::new();
            let vars = model.bind(&mut tape, true)?;
            let mut batch_total: Option<Var> = None;
            for &i in batch {
                let (total, parts) = document_loss(
                    &mut tape,
                    &model,
                    &vars,
                    &ds.train[i],
                    golds[i],
                    cfg,
                    &mut noise_rng,
                    &mut dropout_rng,
                )?;
                batch_total = Some(match batch_total {
                    None => total,
                    Some(t) => tape.add(t, total)?,
                });
                for (s, v) in sums.iter_mut().zip([total, parts[0], parts[1], parts[2], parts[3]]) {
                    *s += tape.value(v).item();
                }
            }
            let loss = tape.scale(batch_total.expect("chunks are non-empty"), 1.0 / batch.len() as f64);
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    docs: batch.iter().map(|&i| ds.train[i].id.clone()).collect(),
                });
            }
            let grads = tape.backward(loss)?;
            let mut g: Vec<Vec<f64>> = vars.all().iter().map(|&v| grads.of(v)).collect();
            clip_global_norm(&mut g, cfg.clip_norm);
            adam.step(model.params_mut(), &g);
        }
        let n = ds.train.len() as f64;
        let val = evaluate_model(&model, cfg.method, cfg.length_level(), &ds.val, &ds.labelspace)?;
        let stats = EpochStats {
            epoch,
            loss: LossBreakdown {
                total: sums[0] / n,
                task: sums[1] / n,
                continuity: sums[2] / n,
                length_control: sums[3] / n,
                baseline_penalty: sums[4] / n,
            },
            val_weighted_f1: val.weighted.f1,
            val_accuracy: val.accuracy,
        };
        debug!(
            "{} level {} epoch {epoch}: loss {:.4} val f1 {:.4}",
            cfg.method,
            cfg.length_level(),
            stats.loss.total,
            stats.val_weighted_f1
        );
        ckpt.history.push(stats);
        // Ties go to the later, longer-trained epoch.
        if best.as_ref().map_or(true, |(f1, _, _)| val.weighted.f1 >= *f1) {
            best = Some((val.weighted.f1, epoch, model.clone()));
        }
    }
    let (f1, epoch, m) = best.expect("at least one epoch ran");
    info!(
        "{} level {}: best val f1 {f1:.4} at epoch {epoch}",
        cfg.method,
        cfg.length_level()
    );
    ckpt.model = m;
    ckpt.best_val_f1 = f1;
    ckpt.best_epoch = Some(epoch);
    Ok(ckpt)
}

/// One run per length level, in parallel. Run `i` uses a seed derived from
/// the base seed and `i`.
pub fn sweep(ds: &Dataset, base: &TrainConfig) -> Result<Vec<Checkpoint>> {
    LENGTH_LEVELS
        .par_iter()
        .enumerate()
        .map(|(i, &level)| {
            let cfg = base
                .clone()
                .with_length_level(level)
                .with_seed(rng::derive(base.seed, i as u64));
            train(ds, &cfg)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: Method,
    pub length_level: f64,
    pub documents: usize,
    pub accuracy: f64,
    /// Support-weighted precision, recall and F1.
    pub weighted: Prf,
    pub per_label: Vec<LabelPrf>,
}

/// Subtoken mask used at inference: hard top-k of eval-mode scores, or all
/// ones for the unmasked classifier.
pub fn inference_mask(model: &Model, method: Method, level: f64, doc: &Document) -> Result<Vec<bool>> {
    let n = doc.n_subtokens();
    if n == 0 {
        return Err(Error::EmptyDocument);
    }
    if method == Method::FullText {
        return Ok(vec![true; n]);
    }
    // Eval mode never draws from the rng.
    let scores = model.identifier_logits(doc, Mode::Eval, &mut rng::stream(0, Stream::Dropout))?;
    hard_topk(&scores, target_k(level, n)?)
}

/// Predicted label index, ties toward the lower index.
pub fn predict(model: &Model, method: Method, level: f64, doc: &Document) -> Result<usize> {
    let mask: Vec<f64> = inference_mask(model, method, level, doc)?
        .into_iter()
        .map(f64::from)
        .collect();
    let probs = model.classify(doc, &mask)?;
    Ok(argmax(&probs))
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

fn evaluate_model(
    model: &Model,
    method: Method,
    level: f64,
    docs: &[Document],
    labels: &LabelSpace,
) -> Result<EvalReport> {
    if docs.is_empty() {
        return Err(Error::EmptyInput("evaluation documents"));
    }
    let predictions = docs
        .par_iter()
        .map(|d| predict(model, method, level, d))
        .collect::<Result<Vec<_>>>()?;
    let golds: Vec<usize> = docs.iter().map(|d| d.label).collect();
    let per_label = per_label_prf(&predictions, &golds, labels)?;
    let correct = predictions.iter().zip(&golds).filter(|(p, g)| p == g).count();
    Ok(EvalReport {
        method,
        length_level: level,
        documents: docs.len(),
        accuracy: correct as f64 / docs.len() as f64,
        weighted: weighted_prf(&per_label),
        per_label,
    })
}

/// End-task metrics of `ckpt` on `docs` with hard top-k rationales at the
/// checkpoint's length level.
pub fn evaluate(ckpt: &Checkpoint, docs: &[Document]) -> Result<EvalReport> {
    evaluate_model(
        &ckpt.model,
        ckpt.config.method,
        ckpt.config.length_level(),
        docs,
        &ckpt.labelspace,
    )
}

/// Relaxed top-k mask drawn from eval-mode scores of a trained checkpoint.
pub fn soft_mask<R: Rng + ?Sized>(ckpt: &Checkpoint, doc: &Document, rng: &mut R) -> Result<MaskSample> {
    let scores = ckpt.model.identifier_logits(doc, Mode::Eval, rng)?;
    let k = target_k(ckpt.config.length_level(), scores.len())?;
    let noise = gumbel_noise(rng, scores.len());
    gumbel_topk_mask_with_noise(&scores, &noise, k, ckpt.config.sampler.temperature)
}
