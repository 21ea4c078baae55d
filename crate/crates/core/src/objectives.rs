//! Training losses: the prediction term, the continuity and length-control
//! regularizers, and the three norm-style baseline penalties.
//!
//! Each loss exists twice: as a plain function over values (for reporting
//! and as a reference) and in [`graph`] as a differentiable tape expression.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probability floor before taking the log of the gold-label probability.
pub const PROB_FLOOR: f64 = 1e-12;
/// Bernoulli posteriors and priors are clipped into `[ε, 1 - ε]`.
pub const BERNOULLI_CLIP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Scales the baseline penalties only.
    pub lambda: f64,
    /// Continuity (fused lasso).
    pub lambda1: f64,
    /// Length control (sorted-mask distance).
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda: 1e-4,
            lambda1: 0.5,
            lambda2: 0.3,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.lambda, self.lambda1, self.lambda2]
            .iter()
            .any(|w| !(*w >= 0.0))
        {
            return Err(Error::Config(format!("loss weights must be >= 0: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub task: f64,
    pub continuity: f64,
    pub length_control: f64,
    pub baseline_penalty: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(task: f64, continuity: f64, length_control: f64, baseline_penalty: f64, w: &LossWeights) -> Self {
        Self {
            task,
            continuity,
            length_control,
            baseline_penalty,
            total: task + w.lambda1 * continuity + w.lambda2 * length_control + w.lambda * baseline_penalty,
        }
    }
}

/// `-ln p[gold]` with `p[gold]` floored at [`PROB_FLOOR`].
pub fn task_loss(probs: &[f64], gold: usize) -> Result<f64> {
    let p = *probs.get(gold).ok_or(Error::IndexOutOfRange {
        index: gold,
        len: probs.len(),
    })?;
    Ok(-p.max(PROB_FLOOR).ln())
}

/// Sum of absolute differences between neighbours.
pub fn fused_lasso(mask: &[f64]) -> f64 {
    mask.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

/// `n - k` zeros followed by `k` ones.
pub fn reference_mask(n: usize, k: usize) -> Vec<f64> {
    (0..n).map(|i| if i + k >= n { 1.0 } else { 0.0 }).collect()
}

/// Squared distance between the ascending-sorted mask and [`reference_mask`].
pub fn vecsort_penalty(mask: &[f64], k: usize) -> Result<f64> {
    let n = mask.len();
    if k == 0 || k > n {
        return Err(Error::KOutOfRange { k, n });
    }
    let mut sorted = mask.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted
        .iter()
        .zip(reference_mask(n, k))
        .map(|(a, b)| (a - b) * (a - b))
        .sum())
}

/// L1 norm of the mask.
pub fn sparse_n_penalty(mask: &[f64]) -> f64 {
    mask.iter().map(|v| v.abs()).sum()
}

/// `max(0, ‖m‖₁ / N - α)` with `N` the mask length.
pub fn sparse_c_penalty(mask: &[f64], alpha: f64) -> f64 {
    if mask.is_empty() {
        return 0.0;
    }
    (sparse_n_penalty(mask) / mask.len() as f64 - alpha).max(0.0)
}

fn clip(p: f64) -> f64 {
    p.clamp(BERNOULLI_CLIP, 1.0 - BERNOULLI_CLIP)
}

/// KL divergence of independent Bernoulli posteriors from a Bernoulli(π) prior.
pub fn sparse_ib_kl(posteriors: &[f64], prior: f64) -> f64 {
    let pi = clip(prior);
    posteriors
        .iter()
        .map(|&p| {
            let p = clip(p);
            p * (p / pi).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - pi)).ln()
        })
        .sum()
}

/// Combined objective for a relaxed top-k mask; the baseline penalty is zero.
pub fn limitedink_loss(
    mask: &[f64],
    probs: &[f64],
    gold: usize,
    k: usize,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    Ok(LossBreakdown::new(
        task_loss(probs, gold)?,
        fused_lasso(mask),
        vecsort_penalty(mask, k)?,
        0.0,
        weights,
    ))
}

/// Differentiable versions.
pub mod graph {
    use super::*;
    use crate::diff::{Tape, Tensor, Var};

    pub fn task_loss(tape: &mut Tape, probs: Var, gold: usize) -> Result<Var> {
        let n = tape.value(probs).len();
        if gold >= n {
            return Err(Error::IndexOutOfRange { index: gold, len: n });
        }
        let p = tape.narrow(probs, gold, 1)?;
        let floor = tape.scalar(PROB_FLOOR);
        let p = tape.max(p, floor)?;
        let l = tape.ln(p);
        let l = tape.sum(l);
        Ok(tape.scale(l, -1.0))
    }

    pub fn fused_lasso(tape: &mut Tape, mask: Var) -> Result<Var> {
        let n = tape.value(mask).len();
        if n < 2 {
            let z = tape.scale(mask, 0.0);
            return Ok(tape.sum(z));
        }
        let tail = tape.narrow(mask, 1, n - 1)?;
        let head = tape.narrow(mask, 0, n - 1)?;
        let d = tape.sub(tail, head)?;
        let a = tape.abs(d);
        Ok(tape.sum(a))
    }

    pub fn vecsort_penalty(tape: &mut Tape, mask: Var, k: usize) -> Result<Var> {
        let n = tape.value(mask).len();
        if k == 0 || k > n {
            return Err(Error::KOutOfRange { k, n });
        }
        let (sorted, _) = tape.sort_ascending(mask);
        let reference = tape.constant(Tensor::vector(reference_mask(n, k)));
        let d = tape.sub(sorted, reference)?;
        let sq = tape.mul(d, d)?;
        Ok(tape.sum(sq))
    }

    pub fn sparse_n_penalty(tape: &mut Tape, mask: Var) -> Var {
        let a = tape.abs(mask);
        tape.sum(a)
    }

    pub fn sparse_c_penalty(tape: &mut Tape, mask: Var, alpha: f64) -> Result<Var> {
        let n = tape.value(mask).len().max(1);
        let norm = sparse_n_penalty(tape, mask);
        let frac = tape.scale(norm, 1.0 / n as f64);
        let a = tape.scalar(alpha);
        let over = tape.sub(frac, a)?;
        Ok(tape.relu(over))
    }

    /// `posteriors` are probabilities in `[0, 1]`, clipped before use.
    pub fn sparse_ib_kl(tape: &mut Tape, posteriors: Var, prior: f64) -> Result<Var> {
        let pi = clip(prior);
        let n = tape.value(posteriors).len();
        let p = tape.clamp(posteriors, BERNOULLI_CLIP, 1.0 - BERNOULLI_CLIP);
        let ones = tape.constant(Tensor::full(&[n], 1.0));
        let q = tape.sub(ones, p)?;
        let lp = tape.ln(p);
        let lq = tape.ln(q);
        let lpi = tape.scalar(pi.ln());
        let lqi = tape.scalar((1.0 - pi).ln());
        let a = tape.sub(lp, lpi)?;
        let a = tape.mul(p, a)?;
        let b = tape.sub(lq, lqi)?;
        let b = tape.mul(q, b)?;
        let s = tape.add(a, b)?;
        Ok(tape.sum(s))
    }
}
