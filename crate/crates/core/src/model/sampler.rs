//! Differentiable top-k subset sampling and its hard counterpart.
//!
//! The relaxed sampler perturbs the logits once with Gumbel noise and then
//! draws `k` concrete distributions in sequence. After each draw the mass it
//! took is removed from the logits (`alpha += ln(1 - c)`), so later draws
//! land on features not yet picked. The mask is the elementwise maximum of
//! the `k` draws. At low temperature the picked set equals the exact top-k
//! of the perturbed logits.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const DEFAULT_TEMPERATURE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub temperature: f64,
    pub length_level: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            length_level: 0.2,
            seed: 0,
        }
    }
}

/// Number of features kept at `level` out of `n`: `ceil(level * n)`, at least 1.
pub fn target_k(level: f64, n: usize) -> Result<usize> {
    let raw = level * n as f64;
    if !(level > 0.0 && level <= 1.0) || n == 0 {
        return Err(Error::KOutOfRange {
            k: raw.max(0.0).ceil() as usize,
            n,
        });
    }
    // 0.3 * 10 is 3.0000000000000004 in binary; do not round that up to 4.
    Ok(((raw - 1e-9).ceil() as usize).clamp(1, n))
}

/// A relaxed mask and the concrete draws it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSample {
    pub mask: Vec<f64>,
    pub draws: Vec<Vec<f64>>,
    pub k: usize,
}

/// Tape handles for a relaxed mask.
#[derive(Debug, Clone)]
pub struct TapeMask {
    pub mask: Var,
    pub draws: Vec<Var>,
    pub k: usize,
}

/// Standard Gumbel samples.
pub fn gumbel_noise<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let u: f64 = rng.gen::<f64>().clamp(1e-300, 1.0 - 1e-16);
            -(-u.ln()).ln()
        })
        .collect()
}

/// Standard logistic samples, `ln u - ln(1 - u)`.
pub fn logistic_noise<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let u: f64 = rng.gen::<f64>().clamp(1e-300, 1.0 - 1e-16);
            u.ln() - (1.0 - u).ln()
        })
        .collect()
}

fn check(n: usize, k: usize, tau: f64) -> Result<()> {
    if tau <= 0.0 || tau.is_nan() {
        return Err(Error::InvalidTemperature(tau));
    }
    if k == 0 || k > n {
        return Err(Error::KOutOfRange { k, n });
    }
    Ok(())
}

/// Relaxed top-k mask on the tape, differentiable w.r.t. `logits` (shape `[n]`).
pub fn relaxed_topk(
    tape: &mut Tape,
    logits: Var,
    noise: &[f64],
    k: usize,
    tau: f64,
) -> Result<TapeMask> {
    let n = tape.value(logits).len();
    check(n, k, tau)?;
    if noise.len() != n {
        return Err(Error::LengthMismatch(noise.len(), n));
    }
    let g = tape.constant(Tensor::vector(noise.to_vec()));
    let mut alpha = tape.add(logits, g)?;
    let mut draws = Vec::with_capacity(k);
    let mut mask: Option<Var> = None;
    for j in 0..k {
        let scaled = tape.scale(alpha, 1.0 / tau);
        let c = tape.softmax(scaled)?;
        draws.push(c);
        mask = Some(match mask {
            None => c,
            Some(m) => tape.max(m, c)?,
        });
        if j + 1 < k {
            let log_rest = tape.log1m_softmax(scaled)?;
            alpha = tape.add(alpha, log_rest)?;
        }
    }
    Ok(TapeMask {
        mask: mask.expect("k >= 1"),
        draws,
        k,
    })
}

/// Relaxed top-k mask with explicit Gumbel noise.
pub fn gumbel_topk_mask_with_noise(
    logits: &[f64],
    noise: &[f64],
    k: usize,
    tau: f64,
) -> Result<MaskSample> {
    let mut tape = Tape::new();
    let l = tape.constant(Tensor::vector(logits.to_vec()));
    let tm = relaxed_topk(&mut tape, l, noise, k, tau)?;
    Ok(MaskSample {
        mask: tape.values(tm.mask).to_vec(),
        draws: tm.draws.iter().map(|&d| tape.values(d).to_vec()).collect(),
        k,
    })
}

/// Relaxed top-k mask with `k = ceil(level * n)` and fresh noise from `rng`.
pub fn gumbel_topk_mask<R: Rng + ?Sized>(
    logits: &[f64],
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<MaskSample> {
    let k = target_k(cfg.length_level, logits.len())?;
    if cfg.temperature <= 0.0 {
        return Err(Error::InvalidTemperature(cfg.temperature));
    }
    let noise = gumbel_noise(rng, logits.len());
    gumbel_topk_mask_with_noise(logits, &noise, k, cfg.temperature)
}

/// Relaxed Bernoulli mask `sigmoid((logit + logistic) / tau)`, used by the
/// norm-penalty baselines.
pub fn relaxed_bernoulli(tape: &mut Tape, logits: Var, noise: &[f64], tau: f64) -> Result<Var> {
    if tau <= 0.0 {
        return Err(Error::InvalidTemperature(tau));
    }
    let n = tape.value(logits).len();
    if noise.len() != n {
        return Err(Error::LengthMismatch(noise.len(), n));
    }
    let l = tape.constant(Tensor::vector(noise.to_vec()));
    let x = tape.add(logits, l)?;
    let x = tape.scale(x, 1.0 / tau);
    Ok(tape.sigmoid(x))
}

/// Boolean mask of the `k` largest scores; ties go to the lower index.
pub fn hard_topk(scores: &[f64], k: usize) -> Result<Vec<bool>> {
    let n = scores.len();
    if k == 0 || k > n {
        return Err(Error::KOutOfRange { k, n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut mask = vec![false; n];
    for &i in &order[..k] {
        mask[i] = true;
    }
    Ok(mask)
}
