//! Training objectives: the stage-1 classification loss, the stage-2
//! anchor loss (two exponential-cosine kernel terms plus classification on
//! the noisy sample), and the joint-learning combination used as a baseline.
//!
//! Forward-only entry points compute values; the `*_batch` functions also
//! produce analytic gradients, averaged over the batch. Every gradient here
//! is covered by finite-difference checks in the tests.

use crate::data::{Condition, Utterance};
use crate::error::{Error, Result};
use crate::linalg::{self, Mat64};
use crate::model::{aam_phi_dc, BranchState, ExtractorParams, HeadParams, LossMode};

/// The three terms of the stage-2 objective, plus the optional clean-sample
/// classification term (zero under the default configuration).
/// `total` always equals the sum of the other four fields exactly.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct Stage2Terms {
    pub k_clean_noise: f64,
    pub k_clean_clean: f64,
    pub ce_noisy: f64,
    pub ce_clean: f64,
    pub total: f64,
}

impl Stage2Terms {
    fn new(k_clean_noise: f64, k_clean_clean: f64, ce_noisy: f64, ce_clean: f64) -> Self {
        Stage2Terms {
            k_clean_noise,
            k_clean_clean,
            ce_noisy,
            ce_clean,
            total: k_clean_noise + k_clean_clean + ce_noisy + ce_clean,
        }
    }
}

/// Gradients for one branch, shaped exactly like its parameters.
pub struct BranchGrads {
    pub extractor: ExtractorParams,
    pub head: HeadParams,
}

impl BranchGrads {
    pub fn zeros_like(branch: &BranchState) -> Self {
        BranchGrads {
            extractor: branch.extractor().zeros_like(),
            head: branch.head().zeros_like(),
        }
    }

    pub fn scale(&mut self, s: f64) {
        for block in self.extractor.blocks_mut() {
            for v in block {
                *v *= s;
            }
        }
        for v in self.head.weight.data_mut() {
            *v *= s;
        }
        for v in self.head.bias.iter_mut() {
            *v *= s;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.extractor.is_finite()
            && self.head.weight.is_finite()
            && self.head.bias.iter().all(|v| v.is_finite())
    }

    /// Flattened in the same canonical order as [`BranchState::flat`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (_, block) in self.extractor.blocks() {
            out.extend_from_slice(block);
        }
        out.extend_from_slice(self.head.weight.data());
        out.extend_from_slice(&self.head.bias);
        out
    }
}

/// Cross-entropy of stable softmax at `label`: `logsumexp(z) - z[label]`.
pub fn ce_from_logits(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

/// Stage-1 classification loss `-log p(label | emb)` for a single embedding.
pub fn loss_stage1(head: &HeadParams, emb: &[f64], label: usize, mode: &LossMode) -> Result<f64> {
    let logits = head.logits(emb, mode, Some(label))?;
    Ok(ce_from_logits(&logits, label))
}

/// Stage-2 loss for one (clean, noisy) pair derived from the same utterance.
///
/// `k_clean_noise` and `k_clean_clean` are anchor kernels between the frozen
/// branch's clean embedding and the trainable branch's noisy/clean
/// embeddings; `ce_noisy` is the classification loss on the trainable noisy
/// embedding. With `clean_ce` the classification loss is also applied to the
/// trainable clean embedding (off by default).
pub fn loss_stage2(
    anchor: &BranchState,
    trainable: &BranchState,
    clean: &Utterance,
    noisy: &Utterance,
    label: usize,
    m: f64,
    mode: &LossMode,
    clean_ce: bool,
) -> Result<Stage2Terms> {
    check_stage2_pair(anchor, clean, noisy)?;
    let e_anchor = anchor.extractor().embed(clean)?;
    let e_noisy = trainable.extractor().embed(noisy)?;
    let e_clean = trainable.extractor().embed(clean)?;
    let k_cn = linalg::anchor_kernel(&e_anchor, &e_noisy, m)?;
    let k_cc = linalg::anchor_kernel(&e_anchor, &e_clean, m)?;
    let ce_n = loss_stage1(trainable.head(), &e_noisy, label, mode)?;
    let ce_c = if clean_ce {
        loss_stage1(trainable.head(), &e_clean, label, mode)?
    } else {
        0.0
    };
    Ok(Stage2Terms::new(k_cn, k_cc, ce_n, ce_c))
}

fn check_stage2_pair(anchor: &BranchState, clean: &Utterance, noisy: &Utterance) -> Result<()> {
    if !anchor.frozen() {
        return Err(Error::AnchorNotFrozen);
    }
    if clean.id != noisy.id {
        return Err(Error::InvalidArg(format!(
            "clean and noisy must derive from the same utterance, got {} vs {}",
            clean.id, noisy.id
        )));
    }
    if clean.condition != Condition::Clean {
        return Err(Error::InvalidArg(format!(
            "anchor-side sample of {} must be clean, got {}",
            clean.id, clean.condition
        )));
    }
    Ok(())
}

/// Joint-learning loss: classification on clean and noisy plus
/// `weight * K(g(clean), g(noisy))` where both kernel arguments come from
/// the same trainable model (gradients flow into both).
pub fn loss_joint(
    model: &BranchState,
    clean: &Utterance,
    noisy: &Utterance,
    label: usize,
    m: f64,
    weight: f64,
    mode: &LossMode,
) -> Result<f64> {
    if !(weight >= 0.0) {
        return Err(Error::InvalidArg(format!(
            "joint weight must be >= 0, got {weight}"
        )));
    }
    let e_clean = model.extractor().embed(clean)?;
    let e_noisy = model.extractor().embed(noisy)?;
    let ce_c = loss_stage1(model.head(), &e_clean, label, mode)?;
    let ce_n = loss_stage1(model.head(), &e_noisy, label, mode)?;
    let kernel = if weight > 0.0 {
        weight * linalg::anchor_kernel(&e_clean, &e_noisy, m)?
    } else {
        0.0
    };
    Ok(ce_c + ce_n + kernel)
}

/// Classification loss and gradient for one embedding. Accumulates the head
/// gradient into `g_head` and the embedding gradient into `d_emb`.
fn ce_backward(
    head: &HeadParams,
    emb: &[f64],
    label: usize,
    mode: &LossMode,
    g_head: &mut HeadParams,
    d_emb: &mut [f64],
) -> Result<f64> {
    let logits = head.logits(emb, mode, Some(label))?;
    let loss = ce_from_logits(&logits, label);
    let p = linalg::softmax(&logits);
    match mode {
        LossMode::Softmax => {
            for j in 0..head.n_classes() {
                let dz = p[j] - if j == label { 1.0 } else { 0.0 };
                linalg::add_scaled(g_head.weight.row_mut(j), emb, dz);
                g_head.bias[j] += dz;
                linalg::add_scaled(d_emb, head.weight.row(j), dz);
            }
        }
        LossMode::Aam { margin, scale } => {
            let e_norm = linalg::norm(emb);
            if e_norm <= linalg::EPS_NORM {
                return Err(Error::ZeroVector);
            }
            let e_hat: Vec<f64> = emb.iter().map(|v| v / e_norm).collect();
            for j in 0..head.n_classes() {
                let w = head.weight.row(j);
                let w_norm = linalg::norm(w);
                if w_norm <= linalg::EPS_NORM {
                    return Err(Error::ZeroVector);
                }
                let c = linalg::cosine(emb, w)?;
                let dphi = if j == label { aam_phi_dc(c, *margin) } else { 1.0 };
                let dz = p[j] - if j == label { 1.0 } else { 0.0 };
                let g = dz * scale * dphi;
                // d cos / d emb = (w_hat - c e_hat) / |emb|
                for (k, d) in d_emb.iter_mut().enumerate() {
                    let w_hat_k = w[k] / w_norm;
                    *d += g * (w_hat_k - c * e_hat[k]) / e_norm;
                }
                // d cos / d w = (e_hat - c w_hat) / |w|
                let gw = g_head.weight.row_mut(j);
                for (k, d) in gw.iter_mut().enumerate() {
                    let w_hat_k = w[k] / w_norm;
                    *d += g * (e_hat[k] - c * w_hat_k) / w_norm;
                }
            }
        }
    }
    Ok(loss)
}

/// Kernel value and gradient with respect to the live argument only
/// (the anchor side is a constant). Adds `d_scale * dK/d(live)` into `d_live`.
fn kernel_backward_live(
    anchor_emb: &[f64],
    live_emb: &[f64],
    m: f64,
    d_scale: f64,
    d_live: &mut [f64],
) -> Result<f64> {
    let k = linalg::anchor_kernel(anchor_emb, live_emb, m)?;
    let c = linalg::cosine(anchor_emb, live_emb)?;
    let na = linalg::norm(anchor_emb);
    let nl = linalg::norm(live_emb);
    let factor = -m * k * d_scale;
    for (i, d) in d_live.iter_mut().enumerate() {
        let a_hat = anchor_emb[i] / na;
        let l_hat = live_emb[i] / nl;
        *d += factor * (a_hat - c * l_hat) / nl;
    }
    Ok(k)
}

/// Kernel value and gradient with both arguments live (joint learning).
fn kernel_backward_both(
    a: &[f64],
    b: &[f64],
    m: f64,
    d_scale: f64,
    d_a: &mut [f64],
    d_b: &mut [f64],
) -> Result<f64> {
    let k = linalg::anchor_kernel(a, b, m)?;
    let c = linalg::cosine(a, b)?;
    let na = linalg::norm(a);
    let nb = linalg::norm(b);
    let factor = -m * k * d_scale;
    for i in 0..a.len() {
        let a_hat = a[i] / na;
        let b_hat = b[i] / nb;
        d_a[i] += factor * (b_hat - c * a_hat) / na;
        d_b[i] += factor * (a_hat - c * b_hat) / nb;
    }
    Ok(k)
}

/// Mean stage-1 loss and gradients over a batch of (frames, label) items.
pub fn stage1_batch(
    branch: &BranchState,
    items: &[(&Mat64, usize)],
    mode: &LossMode,
) -> Result<(f64, BranchGrads)> {
    if items.is_empty() {
        return Err(Error::Degenerate("empty batch".into()));
    }
    let mut grads = BranchGrads::zeros_like(branch);
    let mut loss_sum = 0.0;
    for (frames, label) in items {
        let cache = branch.extractor().forward(frames)?;
        let mut d_emb = vec![0.0; cache.embedding.len()];
        loss_sum += ce_backward(
            branch.head(),
            &cache.embedding,
            *label,
            mode,
            &mut grads.head,
            &mut d_emb,
        )?;
        branch
            .extractor()
            .backward(frames, &cache, &d_emb, &mut grads.extractor);
    }
    let inv = 1.0 / items.len() as f64;
    grads.scale(inv);
    let loss = loss_sum * inv;
    if !loss.is_finite() || !grads.is_finite() {
        return Err(Error::NonFinite("stage-1 batch loss or gradient".into()));
    }
    Ok((loss, grads))
}

/// One stage-2 batch item: clean frames, noisy frames, speaker label.
pub type Stage2Item<'a> = (&'a Mat64, &'a Mat64, usize);

/// Mean stage-2 terms and gradients for the trainable branch only.
/// The anchor branch must be frozen; its parameters receive no gradient.
pub fn stage2_batch(
    anchor: &BranchState,
    trainable: &BranchState,
    items: &[Stage2Item<'_>],
    m: f64,
    mode: &LossMode,
    clean_ce: bool,
) -> Result<(Stage2Terms, BranchGrads)> {
    if !anchor.frozen() {
        return Err(Error::AnchorNotFrozen);
    }
    if items.is_empty() {
        return Err(Error::Degenerate("empty batch".into()));
    }
    let mut grads = BranchGrads::zeros_like(trainable);
    let (mut k_cn_sum, mut k_cc_sum, mut ce_n_sum, mut ce_c_sum) = (0.0, 0.0, 0.0, 0.0);
    for (clean_frames, noisy_frames, label) in items {
        let e_anchor = anchor.extractor().embed_frames(clean_frames)?;
        let cache_noisy = trainable.extractor().forward(noisy_frames)?;
        let cache_clean = trainable.extractor().forward(clean_frames)?;
        let mut d_noisy = vec![0.0; cache_noisy.embedding.len()];
        let mut d_clean = vec![0.0; cache_clean.embedding.len()];

        k_cn_sum +=
            kernel_backward_live(&e_anchor, &cache_noisy.embedding, m, 1.0, &mut d_noisy)?;
        k_cc_sum +=
            kernel_backward_live(&e_anchor, &cache_clean.embedding, m, 1.0, &mut d_clean)?;
        ce_n_sum += ce_backward(
            trainable.head(),
            &cache_noisy.embedding,
            *label,
            mode,
            &mut grads.head,
            &mut d_noisy,
        )?;
        if clean_ce {
            ce_c_sum += ce_backward(
                trainable.head(),
                &cache_clean.embedding,
                *label,
                mode,
                &mut grads.head,
                &mut d_clean,
            )?;
        }
        trainable
            .extractor()
            .backward(noisy_frames, &cache_noisy, &d_noisy, &mut grads.extractor);
        trainable
            .extractor()
            .backward(clean_frames, &cache_clean, &d_clean, &mut grads.extractor);
    }
    let inv = 1.0 / items.len() as f64;
    grads.scale(inv);
    let terms = Stage2Terms::new(
        k_cn_sum * inv,
        k_cc_sum * inv,
        ce_n_sum * inv,
        ce_c_sum * inv,
    );
    if !terms.total.is_finite() || !grads.is_finite() {
        return Err(Error::NonFinite("stage-2 batch loss or gradient".into()));
    }
    Ok((terms, grads))
}

/// Mean joint loss and gradients over (clean, noisy, label) items; the
/// kernel term pulls on both embeddings of each pair.
pub fn joint_batch(
    model: &BranchState,
    items: &[Stage2Item<'_>],
    m: f64,
    weight: f64,
    mode: &LossMode,
) -> Result<(f64, BranchGrads)> {
    if items.is_empty() {
        return Err(Error::Degenerate("empty batch".into()));
    }
    if !(weight >= 0.0) {
        return Err(Error::InvalidArg(format!(
            "joint weight must be >= 0, got {weight}"
        )));
    }
    let mut grads = BranchGrads::zeros_like(model);
    let mut loss_sum = 0.0;
    for (clean_frames, noisy_frames, label) in items {
        let cache_clean = model.extractor().forward(clean_frames)?;
        let cache_noisy = model.extractor().forward(noisy_frames)?;
        let mut d_clean = vec![0.0; cache_clean.embedding.len()];
        let mut d_noisy = vec![0.0; cache_noisy.embedding.len()];
        loss_sum += ce_backward(
            model.head(),
            &cache_clean.embedding,
            *label,
            mode,
            &mut grads.head,
            &mut d_clean,
        )?;
        loss_sum += ce_backward(
            model.head(),
            &cache_noisy.embedding,
            *label,
            mode,
            &mut grads.head,
            &mut d_noisy,
        )?;
        if weight > 0.0 {
            loss_sum += weight
                * kernel_backward_both(
                    &cache_clean.embedding,
                    &cache_noisy.embedding,
                    m,
                    weight,
                    &mut d_clean,
                    &mut d_noisy,
                )?;
        }
        model
            .extractor()
            .backward(clean_frames, &cache_clean, &d_clean, &mut grads.extractor);
        model
            .extractor()
            .backward(noisy_frames, &cache_noisy, &d_noisy, &mut grads.extractor);
    }
    let inv = 1.0 / items.len() as f64;
    grads.scale(inv);
    let loss = loss_sum * inv;
    if !loss.is_finite() || !grads.is_finite() {
        return Err(Error::NonFinite("joint batch loss or gradient".into()));
    }
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_corpus, NoiseKind};
    use crate::linalg::grad_check;
    use crate::model::ModelConfig;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            input_dim: 4,
            hidden_dim: 5,
            embed_dim: 6,
            n_speakers: 3,
        }
    }

    fn toy_pairs(seed: u64) -> (Vec<(String, Mat64, Mat64, usize)>, ModelConfig) {
        let cfg = tiny_cfg();
        let ds = synth_corpus(seed, cfg.n_speakers, 2, 5, cfg.input_dim, 0.3, 0.1).unwrap();
        let mut pairs = Vec::new();
        for (i, utt) in ds.utterances.iter().enumerate() {
            let noise = crate::data::gen_noise(
                seed.wrapping_add(i as u64),
                utt.frames.rows(),
                utt.frames.cols(),
                NoiseKind::White,
            );
            let noisy = crate::data::mix_at_snr(&utt.frames, &noise, 5.0).unwrap();
            pairs.push((utt.id.clone(), utt.frames.clone(), noisy, utt.speaker));
        }
        (pairs, cfg)
    }

    #[test]
    fn stage1_uniform_logits_give_log_s() {
        // A head with all-zero rows in Softmax mode yields uniform logits.
        let cfg = ModelConfig {
            input_dim: 2,
            hidden_dim: 2,
            embed_dim: 3,
            n_speakers: 4,
        };
        let mut branch = BranchState::init(&cfg, 0);
        {
            let (_, head) = branch.params_mut().unwrap();
            for v in head.weight.data_mut() {
                *v = 0.0;
            }
        }
        let loss = loss_stage1(branch.head(), &[0.1, 0.2, 0.3], 2, &LossMode::Softmax).unwrap();
        assert!((loss - 4.0f64.ln()).abs() < 1e-12);
        assert!((loss - 1.3862943611).abs() < 1e-9);
    }

    #[test]
    fn stage1_logit_example() {
        // logits [1, 0], label 0: loss = -log(e/(e+1)).
        let loss = ce_from_logits(&[1.0, 0.0], 0);
        assert!((loss - 0.3132616875).abs() < 1e-9);
    }

    #[test]
    fn stage1_loss_vanishes_with_dominant_logit() {
        let mut prev = f64::INFINITY;
        for gap in [2.0, 5.0, 10.0, 20.0] {
            let loss = ce_from_logits(&[gap, 0.0, 0.0], 0);
            assert!(loss < prev);
            prev = loss;
        }
        assert!(prev < 1e-8);
    }

    #[test]
    fn stage2_identical_branches_give_unit_kernels() {
        let (pairs, cfg) = toy_pairs(3);
        let base = BranchState::init(&cfg, 9);
        let anchor = base.clone_frozen();
        let trainable = base.clone_trainable();
        let clean = Utterance {
            id: pairs[0].0.clone(),
            speaker: pairs[0].3,
            frames: pairs[0].1.clone(),
            condition: Condition::Clean,
        };
        // noisy = clean: both kernel terms are exactly 1.
        let terms = loss_stage2(
            &anchor,
            &trainable,
            &clean,
            &clean,
            clean.speaker,
            5.0,
            &LossMode::Softmax,
            false,
        )
        .unwrap();
        assert_eq!(terms.k_clean_noise, 1.0);
        assert_eq!(terms.k_clean_clean, 1.0);
        assert_eq!(terms.total, 2.0 + terms.ce_noisy);
        // noisy differs: k_clean_clean still exactly 1 at step 0.
        let noisy = Utterance {
            id: pairs[0].0.clone(),
            speaker: pairs[0].3,
            frames: pairs[0].2.clone(),
            condition: Condition::Noisy {
                snr_db: 5.0,
                kind: NoiseKind::White,
            },
        };
        let terms = loss_stage2(
            &anchor,
            &trainable,
            &clean,
            &noisy,
            clean.speaker,
            5.0,
            &LossMode::Softmax,
            false,
        )
        .unwrap();
        assert_eq!(terms.k_clean_clean, 1.0);
        assert!(terms.k_clean_noise >= 1.0);
        assert!(terms.k_clean_noise + terms.k_clean_clean >= 2.0);
    }

    #[test]
    fn stage2_requires_frozen_anchor() {
        let (pairs, cfg) = toy_pairs(4);
        let base = BranchState::init(&cfg, 1);
        let clean = Utterance {
            id: pairs[0].0.clone(),
            speaker: pairs[0].3,
            frames: pairs[0].1.clone(),
            condition: Condition::Clean,
        };
        let err = loss_stage2(
            &base,
            &base,
            &clean,
            &clean,
            0,
            5.0,
            &LossMode::Softmax,
            false,
        );
        assert!(matches!(err, Err(Error::AnchorNotFrozen)));
    }

    #[test]
    fn stage2_anchor_scale_invariance() {
        // Scaling the anchor branch projection scales its embeddings, which
        // must leave both kernel terms unchanged (cosine scale invariance).
        let (pairs, cfg) = toy_pairs(5);
        let base = BranchState::init(&cfg, 2);
        let anchor = base.clone_frozen();
        let mut scaled_base = base.clone_trainable();
        {
            let (ext, _) = scaled_base.params_mut().unwrap();
            for v in ext.proj_w.data_mut() {
                *v *= 3.0;
            }
            for v in ext.proj_b.iter_mut() {
                *v *= 3.0;
            }
        }
        let anchor_scaled = scaled_base.clone_frozen();
        let trainable = BranchState::init(&cfg, 77);
        let clean = Utterance {
            id: pairs[1].0.clone(),
            speaker: pairs[1].3,
            frames: pairs[1].1.clone(),
            condition: Condition::Clean,
        };
        let noisy = Utterance {
            id: pairs[1].0.clone(),
            speaker: pairs[1].3,
            frames: pairs[1].2.clone(),
            condition: Condition::Noisy {
                snr_db: 5.0,
                kind: NoiseKind::White,
            },
        };
        let t0 = loss_stage2(&anchor, &trainable, &clean, &noisy, clean.speaker, 5.0, &LossMode::Softmax, false).unwrap();
        let t1 = loss_stage2(&anchor_scaled, &trainable, &clean, &noisy, clean.speaker, 5.0, &LossMode::Softmax, false).unwrap();
        assert!((t0.k_clean_noise - t1.k_clean_noise).abs() < 1e-12 * t0.k_clean_noise.max(1.0));
        assert!((t0.k_clean_clean - t1.k_clean_clean).abs() < 1e-12 * t0.k_clean_clean.max(1.0));
    }

    #[test]
    fn stage2_decreasing_in_noisy_cosine() {
        // For fixed embeddings, the loss falls as cos(anchor, noisy) rises.
        let anchor_emb = vec![1.0, 0.0];
        let m = 5.0;
        let mut prev = f64::INFINITY;
        for angle in [1.5f64, 1.0, 0.5, 0.1] {
            let live = vec![angle.cos(), angle.sin()];
            let k = linalg::anchor_kernel(&anchor_emb, &live, m).unwrap();
            assert!(k < prev);
            prev = k;
        }
    }

    #[test]
    fn joint_weight_zero_is_plain_classification() {
        let (pairs, cfg) = toy_pairs(6);
        let model = BranchState::init(&cfg, 3);
        let mk = |frames: &Mat64, cond| Utterance {
            id: pairs[0].0.clone(),
            speaker: pairs[0].3,
            frames: frames.clone(),
            condition: cond,
        };
        let clean = mk(&pairs[0].1, Condition::Clean);
        let noisy = mk(
            &pairs[0].2,
            Condition::Noisy {
                snr_db: 5.0,
                kind: NoiseKind::White,
            },
        );
        let mode = LossMode::Aam {
            margin: 0.2,
            scale: 30.0,
        };
        let joint = loss_joint(&model, &clean, &noisy, clean.speaker, 5.0, 0.0, &mode).unwrap();
        let e_c = model.extractor().embed(&clean).unwrap();
        let e_n = model.extractor().embed(&noisy).unwrap();
        let separate = loss_stage1(model.head(), &e_c, clean.speaker, &mode).unwrap()
            + loss_stage1(model.head(), &e_n, clean.speaker, &mode).unwrap();
        assert!((joint - separate).abs() < 1e-12);
    }

    #[test]
    fn joint_identical_inputs_reach_kernel_floor() {
        let (pairs, cfg) = toy_pairs(7);
        let model = BranchState::init(&cfg, 4);
        let clean = Utterance {
            id: pairs[2].0.clone(),
            speaker: pairs[2].3,
            frames: pairs[2].1.clone(),
            condition: Condition::Clean,
        };
        let mode = LossMode::Softmax;
        let with_kernel =
            loss_joint(&model, &clean, &clean, clean.speaker, 5.0, 1.0, &mode).unwrap();
        let without =
            loss_joint(&model, &clean, &clean, clean.speaker, 5.0, 0.0, &mode).unwrap();
        // Identical inputs: the kernel term contributes exactly its floor, 1.
        assert!((with_kernel - without - 1.0).abs() < 1e-12);
    }

    // Gradient checks: every analytic gradient against central differences
    // through the full network.

    fn grad_check_branch<L>(branch: &BranchState, loss_and_grad: L, seeds: std::ops::Range<u64>)
    where
        L: Fn(&BranchState) -> (f64, BranchGrads),
    {
        for seed in seeds {
            let mut b = branch.clone_trainable();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut flat = b.flat();
            for v in flat.iter_mut() {
                use rand::Rng;
                *v += rng.random_range(-0.05..0.05);
            }
            b.assign_flat(&flat).unwrap();
            let (_, grads) = loss_and_grad(&b);
            let analytic = grads.flat();
            let x = b.flat();
            let err = grad_check(
                |p| {
                    let mut probe = b.clone_trainable();
                    probe.assign_flat(p).unwrap();
                    loss_and_grad(&probe).0
                },
                &x,
                &analytic,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-4, "seed {seed}: gradient error {err}");
        }
    }

    use rand::SeedableRng;

    #[test]
    fn stage1_softmax_gradients_match_finite_differences() {
        let (pairs, cfg) = toy_pairs(8);
        let branch = BranchState::init(&cfg, 5);
        let items: Vec<(&Mat64, usize)> =
            pairs.iter().map(|(_, c, _, y)| (c, *y)).take(3).collect();
        grad_check_branch(
            &branch,
            |b| stage1_batch(b, &items, &LossMode::Softmax).unwrap(),
            0..5,
        );
    }

    #[test]
    fn stage1_aam_gradients_match_finite_differences() {
        let (pairs, cfg) = toy_pairs(9);
        let branch = BranchState::init(&cfg, 6);
        let items: Vec<(&Mat64, usize)> =
            pairs.iter().map(|(_, c, _, y)| (c, *y)).take(3).collect();
        let mode = LossMode::Aam {
            margin: 0.2,
            scale: 30.0,
        };
        grad_check_branch(&branch, |b| stage1_batch(b, &items, &mode).unwrap(), 0..5);
    }

    #[test]
    fn stage2_gradients_match_finite_differences() {
        let (pairs, cfg) = toy_pairs(10);
        let base = BranchState::init(&cfg, 7);
        let anchor = base.clone_frozen();
        let items: Vec<Stage2Item<'_>> = pairs
            .iter()
            .map(|(_, c, n, y)| (c, n, *y))
            .take(2)
            .collect();
        let mode = LossMode::Aam {
            margin: 0.2,
            scale: 30.0,
        };
        grad_check_branch(
            &base,
            |b| {
                let (terms, grads) = stage2_batch(&anchor, b, &items, 5.0, &mode, false).unwrap();
                (terms.total, grads)
            },
            0..5,
        );
    }

    #[test]
    fn joint_gradients_match_finite_differences() {
        let (pairs, cfg) = toy_pairs(11);
        let model = BranchState::init(&cfg, 8);
        let items: Vec<Stage2Item<'_>> = pairs
            .iter()
            .map(|(_, c, n, y)| (c, n, *y))
            .take(2)
            .collect();
        grad_check_branch(
            &model,
            |b| joint_batch(b, &items, 5.0, 1.0, &LossMode::Softmax).unwrap(),
            0..5,
        );
    }

    #[test]
    fn stage2_gradient_is_zero_where_loss_is_constant() {
        // The anchor branch gets no gradient at all (it is not even part of
        // the trainable gradient struct); additionally, with Softmax-mode CE
        // the *bias* gradient of classes never observed still moves through
        // softmax probabilities, so instead check a parameter the loss
        // genuinely ignores: clean-CE off means the head bias gradient comes
        // only from the noisy term; kernel terms must contribute zero to it.
        let (pairs, cfg) = toy_pairs(12);
        let base = BranchState::init(&cfg, 9);
        let anchor = base.clone_frozen();
        let items: Vec<Stage2Item<'_>> = vec![(&pairs[0].1, &pairs[0].1, pairs[0].3)];
        // clean == noisy and Softmax CE: kernel grads at the minimum are 0,
        // so extractor gradients come from CE only. Verify the kernel's
        // contribution is exactly zero by comparing against stage-1 grads.
        let (_, g2) = stage2_batch(&anchor, &base, &items, 5.0, &LossMode::Softmax, false).unwrap();
        let s1_items: Vec<(&Mat64, usize)> = vec![(&pairs[0].1, pairs[0].3)];
        let (_, g1) = stage1_batch(&base, &s1_items, &LossMode::Softmax).unwrap();
        for (a, b) in g2.flat().iter().zip(g1.flat().iter()) {
            assert!((a - b).abs() < 1e-12, "kernel at its minimum must add no gradient");
        }
    }

    #[test]
    fn batch_total_decomposes_exactly() {
        let (pairs, cfg) = toy_pairs(13);
        let base = BranchState::init(&cfg, 10);
        let anchor = base.clone_frozen();
        let items: Vec<Stage2Item<'_>> = pairs.iter().map(|(_, c, n, y)| (c, n, *y)).collect();
        let (terms, _) =
            stage2_batch(&anchor, &base, &items, 5.0, &LossMode::Softmax, false).unwrap();
        let sum = terms.k_clean_noise + terms.k_clean_clean + terms.ce_noisy + terms.ce_clean;
        assert_eq!(terms.total, sum);
        assert_eq!(terms.ce_clean, 0.0);
    }
}
