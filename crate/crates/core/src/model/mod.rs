//! Identifier and classifier networks plus the top-k samplers.
//!
//! The identifier scores every subtoken from a local window of embeddings
//! (embedding, depthwise convolution, two linear layers with relu and
//! dropout). The classifier pools mask-weighted embeddings and predicts a
//! label distribution from the pooled vector alone.

mod sampler;
mod vocab;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::diff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

pub use sampler::{
    gumbel_noise, gumbel_topk_mask, gumbel_topk_mask_with_noise, hard_topk, logistic_noise,
    relaxed_bernoulli, relaxed_topk, target_k, MaskSample, SamplerConfig, TapeMask,
    DEFAULT_TEMPERATURE,
};
pub use vocab::{ModelVocab, UNK};

/// Guards the pooled mean when the mask is all zeros.
pub const POOL_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dim: usize,
    pub hidden: usize,
    /// Odd convolution window; 1 disables context.
    pub window: usize,
    pub dropout: f64,
    pub share_embeddings: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            hidden: 32,
            window: 5,
            dropout: 0.1,
            share_embeddings: false,
        }
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-bound..bound)).collect(),
    )
    .expect("shape matches")
}

fn xavier<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor {
    uniform(rng, &[fan_in, fan_out], (6.0 / (fan_in + fan_out) as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifierNet {
    pub embedding: Tensor,
    pub conv_kernel: Tensor,
    pub conv_bias: Tensor,
    pub hidden: Tensor,
    pub hidden_bias: Tensor,
    pub output: Tensor,
    pub output_bias: Tensor,
    pub dropout: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct IdentifierVars {
    pub embedding: Var,
    pub conv_kernel: Var,
    pub conv_bias: Var,
    pub hidden: Var,
    pub hidden_bias: Var,
    pub output: Var,
    pub output_bias: Var,
}

impl IdentifierNet {
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, vocab_size: usize, rng: &mut R) -> Result<Self> {
        if cfg.window % 2 == 0 {
            return Err(Error::Config(format!(
                "convolution window must be odd, got {}",
                cfg.window
            )));
        }
        if !(0.0..1.0).contains(&cfg.dropout) {
            return Err(Error::InvalidDropout(cfg.dropout));
        }
        let (d, h, w) = (cfg.dim, cfg.hidden, cfg.window);
        // Centre tap starts near identity so early logits track embeddings.
        let mut kernel = uniform(rng, &[w, d], 0.1);
        for c in 0..d {
            kernel.values_mut()[(w / 2) * d + c] += 1.0;
        }
        Ok(Self {
            embedding: uniform(rng, &[vocab_size, d], 0.5),
            conv_kernel: kernel,
            conv_bias: Tensor::zeros(&[d]),
            hidden: xavier(rng, d, h),
            hidden_bias: Tensor::zeros(&[h]),
            output: xavier(rng, h, 1),
            output_bias: Tensor::zeros(&[1]),
            dropout: cfg.dropout,
        })
    }

    pub fn window(&self) -> usize {
        self.conv_kernel.shape()[0]
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> IdentifierVars {
        let mut leaf = |t: &Tensor| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        IdentifierVars {
            embedding: leaf(&self.embedding),
            conv_kernel: leaf(&self.conv_kernel),
            conv_bias: leaf(&self.conv_bias),
            hidden: leaf(&self.hidden),
            hidden_bias: leaf(&self.hidden_bias),
            output: leaf(&self.output),
            output_bias: leaf(&self.output_bias),
        }
    }

    /// One logit per id, shape `[n]`.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        vars: &IdentifierVars,
        ids: &[usize],
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        let e = tape.gather(vars.embedding, ids)?;
        let c = tape.depthwise_conv1d(e, vars.conv_kernel)?;
        let c = tape.add(c, vars.conv_bias)?;
        let h = tape.matmul(c, vars.hidden)?;
        let h = tape.add(h, vars.hidden_bias)?;
        let h = tape.relu(h);
        let h = tape.dropout(h, self.dropout, mode == Mode::Train, rng)?;
        let o = tape.matmul(h, vars.output)?;
        let o = tape.add(o, vars.output_bias)?;
        tape.reshape(o, &[ids.len()])
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 7] {
        [
            &mut self.embedding,
            &mut self.conv_kernel,
            &mut self.conv_bias,
            &mut self.hidden,
            &mut self.hidden_bias,
            &mut self.output,
            &mut self.output_bias,
        ]
    }
}

impl IdentifierVars {
    fn all(&self) -> [Var; 7] {
        [
            self.embedding,
            self.conv_kernel,
            self.conv_bias,
            self.hidden,
            self.hidden_bias,
            self.output,
            self.output_bias,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierNet {
    /// `None` when the identifier's table is shared.
    pub embedding: Option<Tensor>,
    pub output: Tensor,
    pub output_bias: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct ClassifierVars {
    pub embedding: Var,
    pub output: Var,
    pub output_bias: Var,
    owns_embedding: bool,
}

impl ClassifierNet {
    pub fn init<R: Rng + ?Sized>(
        cfg: &ModelConfig,
        vocab_size: usize,
        n_labels: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            embedding: (!cfg.share_embeddings).then(|| uniform(rng, &[vocab_size, cfg.dim], 0.5)),
            output: xavier(rng, cfg.dim, n_labels),
            output_bias: Tensor::zeros(&[n_labels]),
        }
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool, shared: Option<Var>) -> Result<ClassifierVars> {
        let mut leaf = |t: &Tensor| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        let (embedding, owns_embedding) = match (&self.embedding, shared) {
            (Some(e), _) => (leaf(e), true),
            (None, Some(v)) => (v, false),
            (None, None) => {
                return Err(Error::Config(
                    "classifier shares embeddings but none were supplied".into(),
                ))
            }
        };
        Ok(ClassifierVars {
            embedding,
            output: leaf(&self.output),
            output_bias: leaf(&self.output_bias),
            owns_embedding,
        })
    }

    /// Label distribution, shape `[labels]`. `mask` has shape `[n]`.
    pub fn forward(&self, tape: &mut Tape, vars: &ClassifierVars, ids: &[usize], mask: Var) -> Result<Var> {
        let n = ids.len();
        if tape.value(mask).len() != n {
            return Err(Error::LengthMismatch(tape.value(mask).len(), n));
        }
        let e = tape.gather(vars.embedding, ids)?;
        let row = tape.reshape(mask, &[1, n])?;
        let pooled = tape.matmul(row, e)?;
        let total = tape.sum(mask);
        let eps = tape.scalar(POOL_EPS);
        let denom = tape.max(total, eps)?;
        let pooled = tape.div(pooled, denom)?;
        let logits = tape.matmul(pooled, vars.output)?;
        let logits = tape.add(logits, vars.output_bias)?;
        let probs = tape.softmax(logits)?;
        let labels = tape.value(probs).len();
        tape.reshape(probs, &[labels])
    }
}

/// Both networks and the vocabulary mapping subtokens to embedding rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: ModelVocab,
    pub identifier: IdentifierNet,
    pub classifier: ClassifierNet,
}

#[derive(Debug, Clone, Copy)]
pub struct ModelVars {
    pub identifier: IdentifierVars,
    pub classifier: ClassifierVars,
}

impl ModelVars {
    /// Trainable leaves in the same order as [`Model::params_mut`].
    pub fn all(&self) -> Vec<Var> {
        let mut v = self.identifier.all().to_vec();
        if self.classifier.owns_embedding {
            v.push(self.classifier.embedding);
        }
        v.push(self.classifier.output);
        v.push(self.classifier.output_bias);
        v
    }
}

impl Model {
    pub fn init<R: Rng + ?Sized>(
        config: ModelConfig,
        vocab: ModelVocab,
        n_labels: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let identifier = IdentifierNet::init(&config, vocab.len(), rng)?;
        let classifier = ClassifierNet::init(&config, vocab.len(), n_labels, rng);
        Ok(Self {
            config,
            vocab,
            identifier,
            classifier,
        })
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<ModelVars> {
        let identifier = self.identifier.bind(tape, trainable);
        let classifier = self
            .classifier
            .bind(tape, trainable, Some(identifier.embedding))?;
        Ok(ModelVars {
            identifier,
            classifier,
        })
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = self.identifier.tensors_mut().into_iter().collect();
        if let Some(e) = self.classifier.embedding.as_mut() {
            v.push(e);
        }
        v.push(&mut self.classifier.output);
        v.push(&mut self.classifier.output_bias);
        v
    }

    pub fn ids(&self, doc: &Document) -> Vec<usize> {
        self.vocab.ids(&doc.subtokens)
    }

    /// Per-subtoken identifier scores.
    pub fn identifier_logits<R: Rng + ?Sized>(
        &self,
        doc: &Document,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars = self.identifier.bind(&mut tape, false);
        let ids = self.ids(doc);
        let out = self.identifier.forward(&mut tape, &vars, &ids, mode, rng)?;
        Ok(tape.values(out).to_vec())
    }

    /// Label distribution for `doc` seen through `mask` (one weight per subtoken).
    pub fn classify(&self, doc: &Document, mask: &[f64]) -> Result<Vec<f64>> {
        if mask.len() != doc.n_subtokens() {
            return Err(Error::LengthMismatch(mask.len(), doc.n_subtokens()));
        }
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false)?;
        let m = tape.constant(Tensor::vector(mask.to_vec()));
        let ids = self.ids(doc);
        let out = self.classifier.forward(&mut tape, &vars.classifier, &ids, m)?;
        Ok(tape.values(out).to_vec())
    }
}

#[cfg(test)]
mod tests;
