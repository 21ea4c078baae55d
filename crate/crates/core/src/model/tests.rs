use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::diff::grad_check;

fn doc(n: usize) -> Document {
    Document::new(
        "d",
        (0..n).map(|i| format!("t{i}")).collect(),
        0,
        None,
    )
}

fn model_for(d: &Document, cfg: ModelConfig, seed: u64) -> Model {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Model::init(cfg, ModelVocab::from_documents([d]), 2, &mut rng).unwrap()
}

#[test]
fn identifier_output_has_one_logit_per_subtoken() {
    let d = doc(5);
    let m = model_for(&d, ModelConfig::default(), 1);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = m.identifier_logits(&d, Mode::Eval, &mut rng).unwrap();
    assert_eq!(a.len(), 5);
    let b = m.identifier_logits(&d, Mode::Eval, &mut rng).unwrap();
    assert_eq!(a, b);
    // Train mode applies dropout and generally differs.
    let c = m.identifier_logits(&d, Mode::Train, &mut rng).unwrap();
    assert_eq!(c.len(), 5);
}

#[test]
fn identifier_logits_depend_only_on_the_window() {
    let d = doc(12);
    let cfg = ModelConfig::default();
    let half = cfg.window / 2;
    let base = model_for(&d, cfg, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let before = base.identifier_logits(&d, Mode::Eval, &mut rng).unwrap();
    for j in 0..d.n_subtokens() {
        let mut m = base.clone();
        let row = m.vocab.id(&d.subtokens[j]);
        let dim = m.config.dim;
        for v in &mut m.identifier.embedding.values_mut()[row * dim..(row + 1) * dim] {
            *v += 0.1;
        }
        let after = m.identifier_logits(&d, Mode::Eval, &mut rng).unwrap();
        for i in 0..d.n_subtokens() {
            let delta = (after[i] - before[i]).abs();
            if i.abs_diff(j) <= half {
                assert!(delta > 1e-9, "logit {i} should react to token {j}");
            } else {
                assert!(delta <= 1e-12, "logit {i} reacted to distant token {j}");
            }
        }
    }
}

#[test]
fn window_one_has_no_context() {
    let d = doc(6);
    let cfg = ModelConfig {
        window: 1,
        ..ModelConfig::default()
    };
    let base = model_for(&d, cfg, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let before = base.identifier_logits(&d, Mode::Eval, &mut rng).unwrap();
    let mut m = base.clone();
    let row = m.vocab.id(&d.subtokens[2]);
    let dim = m.config.dim;
    m.identifier.embedding.values_mut()[row * dim] += 0.5;
    let after = m.identifier_logits(&d, Mode::Eval, &mut rng).unwrap();
    for i in [0, 1, 3, 4, 5] {
        assert_eq!(before[i], after[i]);
    }
}

#[test]
fn all_ones_mask_is_plain_mean_pooling() {
    let d = doc(4);
    let m = model_for(&d, ModelConfig::default(), 4);
    let probs = m.classify(&d, &[1.0; 4]).unwrap();
    // Independent computation of mean embedding -> linear -> softmax.
    let dim = m.config.dim;
    let emb = m.classifier.embedding.as_ref().unwrap().values();
    let mut pooled = vec![0.0; dim];
    for t in &d.subtokens {
        let r = m.vocab.id(t);
        for c in 0..dim {
            pooled[c] += emb[r * dim + c] / 4.0;
        }
    }
    let w = m.classifier.output.values();
    let logits: Vec<f64> = (0..2)
        .map(|l| (0..dim).map(|c| pooled[c] * w[c * 2 + l]).sum::<f64>())
        .collect();
    let z: f64 = logits.iter().map(|v| v.exp()).sum();
    for l in 0..2 {
        assert!((probs[l] - logits[l].exp() / z).abs() < 1e-12);
    }
}

#[test]
fn all_zero_mask_gives_softmax_of_bias() {
    let d = doc(4);
    let mut m = model_for(&d, ModelConfig::default(), 5);
    m.classifier.output_bias = Tensor::vector(vec![0.7, -0.2]);
    let probs = m.classify(&d, &[0.0; 4]).unwrap();
    let z = 0.7f64.exp() + (-0.2f64).exp();
    assert!((probs[0] - 0.7f64.exp() / z).abs() < 1e-12);
    assert!((probs[1] - (-0.2f64).exp() / z).abs() < 1e-12);
}

#[test]
fn classify_rejects_length_mismatch_and_normalizes() {
    let d = doc(4);
    let m = model_for(&d, ModelConfig::default(), 6);
    assert!(matches!(
        m.classify(&d, &[1.0; 3]),
        Err(Error::LengthMismatch(3, 4))
    ));
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let mask: Vec<f64> = (0..4).map(|_| rng.gen::<f64>()).collect();
        let p = m.classify(&d, &mask).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn shared_embeddings_bind_one_table() {
    let d = doc(4);
    let cfg = ModelConfig {
        share_embeddings: true,
        ..ModelConfig::default()
    };
    let mut m = model_for(&d, cfg, 7);
    assert!(m.classifier.embedding.is_none());
    let mut tape = Tape::new();
    let vars = m.bind(&mut tape, true).unwrap();
    assert_eq!(vars.all().len(), m.params_mut().len());
    assert_eq!(vars.classifier.embedding, vars.identifier.embedding);
    let p = m.classify(&d, &[1.0; 4]).unwrap();
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

/// Classification loss through the relaxed sampler, as a function of the
/// identifier logits.
fn sampled_loss<'a>(
    m: &'a Model,
    d: &Document,
    noise: Vec<f64>,
    k: usize,
) -> impl Fn(&mut Tape, Var) -> crate::Result<Var> + 'a {
    let ids = m.ids(d);
    move |tape, logits| {
        let vars = m.bind(tape, false)?;
        let mask = relaxed_topk(tape, logits, &noise, k, 0.1)?;
        let probs = m.classifier.forward(tape, &vars.classifier, &ids, mask.mask)?;
        let gold = tape.narrow(probs, 0, 1)?;
        let l = tape.ln(gold);
        let l = tape.scale(l, -1.0);
        Ok(tape.sum(l))
    }
}

#[test]
fn gradient_flows_through_the_sampler() {
    let d = doc(8);
    let m = model_for(&d, ModelConfig::default(), 8);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for trial in 0..5 {
        let logits: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let noise = gumbel_noise(&mut rng, 8);
        let f = sampled_loss(&m, &d, noise, 3);
        let x = Tensor::vector(logits);
        let mut tape = Tape::new();
        let leaf = tape.param(x.clone());
        let loss = f(&mut tape, leaf).unwrap();
        let g = tape.backward(loss).unwrap().of(leaf);
        assert!(g.iter().any(|v| v.abs() > 1e-12), "trial {trial}: zero gradient");
        let err = grad_check(&f, &x, 1e-6).unwrap();
        assert!(err < 1e-5, "trial {trial}: err {err}");
    }
}

#[test]
fn sampler_is_permutation_equivariant_with_attached_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let logits: Vec<f64> = (0..7).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let noise = gumbel_noise(&mut rng, 7);
        let mut perm: Vec<usize> = (0..7).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
        let a = gumbel_topk_mask_with_noise(&logits, &noise, 3, 0.1).unwrap();
        let pl: Vec<f64> = perm.iter().map(|&i| logits[i]).collect();
        let pn: Vec<f64> = perm.iter().map(|&i| noise[i]).collect();
        let b = gumbel_topk_mask_with_noise(&pl, &pn, 3, 0.1).unwrap();
        for (pos, &src) in perm.iter().enumerate() {
            assert!((b.mask[pos] - a.mask[src]).abs() < 1e-12);
        }
    }
}
