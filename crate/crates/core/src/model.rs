//! The embedding extractor (frame MLP, statistics pooling, projection), the
//! speaker classification head, branch freezing, and checkpoint I/O.
//!
//! Forward and backward passes are written out explicitly so every gradient
//! can be verified against central finite differences.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::data::Utterance;
use crate::error::{Error, Result};
use crate::linalg::{self, Mat64};

/// Epsilon under the square root in statistics pooling, keeping the std
/// differentiable at zero variance.
pub const STD_EPS: f64 = 1e-8;

/// Architecture of one branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub n_speakers: usize,
}

/// Classification-head flavor. `Aam` applies an additive angular margin to
/// the true-class cosine logit during training and plain scaled cosines at
/// inference.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LossMode {
    Softmax,
    Aam { margin: f64, scale: f64 },
}

impl LossMode {
    pub fn validate(&self) -> Result<()> {
        if let LossMode::Aam { margin, scale } = self {
            if !(0.0..=0.5).contains(margin) {
                return Err(Error::InvalidArg(format!(
                    "aam margin must be in [0, 0.5], got {margin}"
                )));
            }
            if !(*scale > 0.0) {
                return Err(Error::InvalidArg(format!(
                    "aam scale must be positive, got {scale}"
                )));
            }
        }
        Ok(())
    }
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossMode::Softmax => f.write_str("softmax"),
            LossMode::Aam { margin, scale } => write!(f, "aam {margin} {scale}"),
        }
    }
}

impl FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split_whitespace();
        match parts.next() {
            Some("softmax") => Ok(LossMode::Softmax),
            Some("aam") => {
                let margin = parts
                    .next()
                    .unwrap_or("0.2")
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidArg(format!("bad aam margin: {e}")))?;
                let scale = parts
                    .next()
                    .unwrap_or("30")
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidArg(format!("bad aam scale: {e}")))?;
                let mode = LossMode::Aam { margin, scale };
                mode.validate()?;
                Ok(mode)
            }
            _ => Err(Error::InvalidArg(format!("unknown loss mode {s:?}"))),
        }
    }
}

/// Frame encoder (input -> hidden -> hidden, tanh), statistics pooling
/// (mean ++ std over frames), and a linear projection to the embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtractorParams {
    pub enc1_w: Mat64,
    pub enc1_b: Vec<f64>,
    pub enc2_w: Mat64,
    pub enc2_b: Vec<f64>,
    pub proj_w: Mat64,
    pub proj_b: Vec<f64>,
}

/// Class weight matrix, one row per speaker, plus a bias used only in
/// `Softmax` mode (cosine logits carry no bias).
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    pub weight: Mat64,
    pub bias: Vec<f64>,
}

/// Intermediate activations kept for the backward pass.
pub struct ForwardCache {
    pub a1: Mat64,
    pub a2: Mat64,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub pooled: Vec<f64>,
    pub embedding: Vec<f64>,
}

impl ExtractorParams {
    pub fn init(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.input_dim;
        let h = cfg.hidden_dim;
        let e = cfg.embed_dim;
        ExtractorParams {
            enc1_w: init_matrix(rng, h, d),
            enc1_b: vec![0.0; h],
            enc2_w: init_matrix(rng, h, h),
            enc2_b: vec![0.0; h],
            proj_w: init_matrix(rng, e, 2 * h),
            proj_b: vec![0.0; e],
        }
    }

    pub fn zeros_like(&self) -> Self {
        ExtractorParams {
            enc1_w: Mat64::zeros(self.enc1_w.rows(), self.enc1_w.cols()),
            enc1_b: vec![0.0; self.enc1_b.len()],
            enc2_w: Mat64::zeros(self.enc2_w.rows(), self.enc2_w.cols()),
            enc2_b: vec![0.0; self.enc2_b.len()],
            proj_w: Mat64::zeros(self.proj_w.rows(), self.proj_w.cols()),
            proj_b: vec![0.0; self.proj_b.len()],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.enc1_w.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.enc1_w.rows()
    }

    pub fn embed_dim(&self) -> usize {
        self.proj_w.rows()
    }

    /// Embed one utterance: per-frame MLP, mean/std pooling, projection.
    /// No normalization is applied to the embedding itself; cosine happens
    /// at use sites, so scaling the projection scales the embedding.
    pub fn embed(&self, utt: &Utterance) -> Result<Vec<f64>> {
        Ok(self.forward(&utt.frames)?.embedding)
    }

    /// Embed a raw frame matrix.
    pub fn embed_frames(&self, frames: &Mat64) -> Result<Vec<f64>> {
        Ok(self.forward(frames)?.embedding)
    }

    pub(crate) fn forward(&self, frames: &Mat64) -> Result<ForwardCache> {
        let t_frames = frames.rows();
        let d = frames.cols();
        if d != self.input_dim() {
            return Err(Error::shape(
                format!("frames with dim {}", self.input_dim()),
                format!("dim {d}"),
            ));
        }
        if t_frames < 2 {
            return Err(Error::shape(
                "at least 2 frames",
                format!("{t_frames} frames"),
            ));
        }
        let h = self.hidden_dim();
        let mut a1 = Mat64::zeros(t_frames, h);
        let mut a2 = Mat64::zeros(t_frames, h);
        for t in 0..t_frames {
            let mut z1 = self.enc1_w.matvec(frames.row(t));
            linalg::add_scaled(&mut z1, &self.enc1_b, 1.0);
            for (o, z) in a1.row_mut(t).iter_mut().zip(&z1) {
                *o = z.tanh();
            }
            let mut z2 = self.enc2_w.matvec(a1.row(t));
            linalg::add_scaled(&mut z2, &self.enc2_b, 1.0);
            for (o, z) in a2.row_mut(t).iter_mut().zip(&z2) {
                *o = z.tanh();
            }
        }

        // Statistics pooling with canonical summation order, so the pooled
        // vector is bit-identical under any frame permutation.
        let tf = t_frames as f64;
        let mut mean = vec![0.0; h];
        let mut std = vec![0.0; h];
        let mut column = vec![0.0; t_frames];
        for j in 0..h {
            for t in 0..t_frames {
                column[t] = a2.get(t, j);
            }
            mean[j] = linalg::sorted_sum(&mut column) / tf;
            for t in 0..t_frames {
                let dv = a2.get(t, j) - mean[j];
                column[t] = dv * dv;
            }
            let var = linalg::sorted_sum(&mut column) / tf;
            std[j] = (var + STD_EPS).sqrt();
        }
        let mut pooled = Vec::with_capacity(2 * h);
        pooled.extend_from_slice(&mean);
        pooled.extend_from_slice(&std);

        let mut embedding = self.proj_w.matvec(&pooled);
        linalg::add_scaled(&mut embedding, &self.proj_b, 1.0);
        Ok(ForwardCache {
            a1,
            a2,
            mean,
            std,
            pooled,
            embedding,
        })
    }

    /// Accumulate parameter gradients for `d_embedding` flowing back through
    /// the forward pass cached in `cache`.
    pub(crate) fn backward(
        &self,
        frames: &Mat64,
        cache: &ForwardCache,
        d_embedding: &[f64],
        grads: &mut ExtractorParams,
    ) {
        let t_frames = frames.rows();
        let tf = t_frames as f64;
        let h = self.hidden_dim();

        grads.proj_w.add_outer(d_embedding, &cache.pooled);
        linalg::add_scaled(&mut grads.proj_b, d_embedding, 1.0);
        let d_pooled = self.proj_w.tr_matvec(d_embedding);

        // Pooling backward: d_mean spreads uniformly; d_std goes through the
        // variance. Sum over frames of (a2 - mean) is zero, so the mean's
        // appearance inside the variance contributes nothing.
        let mut d_a2 = Mat64::zeros(t_frames, h);
        for j in 0..h {
            let d_mean = d_pooled[j];
            let d_std = d_pooled[h + j];
            let d_var = d_std / (2.0 * cache.std[j]);
            for t in 0..t_frames {
                let dev = cache.a2.get(t, j) - cache.mean[j];
                d_a2.set(t, j, d_mean / tf + d_var * 2.0 / tf * dev);
            }
        }

        let mut d_z2 = vec![0.0; h];
        let mut d_z1 = vec![0.0; h];
        for t in 0..t_frames {
            for j in 0..h {
                let a = cache.a2.get(t, j);
                d_z2[j] = d_a2.get(t, j) * (1.0 - a * a);
            }
            grads.enc2_w.add_outer(&d_z2, cache.a1.row(t));
            linalg::add_scaled(&mut grads.enc2_b, &d_z2, 1.0);
            let d_a1 = self.enc2_w.tr_matvec(&d_z2);
            for j in 0..h {
                let a = cache.a1.get(t, j);
                d_z1[j] = d_a1[j] * (1.0 - a * a);
            }
            grads.enc1_w.add_outer(&d_z1, frames.row(t));
            linalg::add_scaled(&mut grads.enc1_b, &d_z1, 1.0);
        }
    }

    pub fn blocks(&self) -> [(&'static str, &[f64]); 6] {
        [
            ("enc1.w", self.enc1_w.data()),
            ("enc1.b", &self.enc1_b),
            ("enc2.w", self.enc2_w.data()),
            ("enc2.b", &self.enc2_b),
            ("proj.w", self.proj_w.data()),
            ("proj.b", &self.proj_b),
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.enc1_w.data_mut(),
            &mut self.enc1_b,
            self.enc2_w.data_mut(),
            &mut self.enc2_b,
            self.proj_w.data_mut(),
            &mut self.proj_b,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|(_, b)| b.iter().all(|v| v.is_finite()))
    }
}

impl HeadParams {
    pub fn init(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        HeadParams {
            weight: init_matrix(rng, cfg.n_speakers, cfg.embed_dim),
            bias: vec![0.0; cfg.n_speakers],
        }
    }

    pub fn zeros_like(&self) -> Self {
        HeadParams {
            weight: Mat64::zeros(self.weight.rows(), self.weight.cols()),
            bias: vec![0.0; self.bias.len()],
        }
    }

    pub fn n_classes(&self) -> usize {
        self.weight.rows()
    }

    pub fn embed_dim(&self) -> usize {
        self.weight.cols()
    }

    /// Class logits for an embedding.
    ///
    /// `Softmax` mode: `W e + b`. `Aam` mode: `scale * cos(e, w_j)` with
    /// `cos(theta + margin)` substituted at `true_label` when given (training);
    /// pass `None` at inference so no margin is applied.
    pub fn logits(
        &self,
        emb: &[f64],
        mode: &LossMode,
        true_label: Option<usize>,
    ) -> Result<Vec<f64>> {
        if emb.len() != self.embed_dim() {
            return Err(Error::shape(
                format!("embedding of dim {}", self.embed_dim()),
                format!("{}", emb.len()),
            ));
        }
        if let Some(y) = true_label {
            if y >= self.n_classes() {
                return Err(Error::InvalidArg(format!(
                    "label {y} out of range for {} classes",
                    self.n_classes()
                )));
            }
        }
        mode.validate()?;
        match mode {
            LossMode::Softmax => {
                let mut z = self.weight.matvec(emb);
                linalg::add_scaled(&mut z, &self.bias, 1.0);
                Ok(z)
            }
            LossMode::Aam { margin, scale } => {
                let mut z = Vec::with_capacity(self.n_classes());
                for j in 0..self.n_classes() {
                    let c = linalg::cosine(emb, self.weight.row(j))?;
                    let phi = match true_label {
                        Some(y) if y == j => aam_phi(c, *margin),
                        _ => c,
                    };
                    z.push(scale * phi);
                }
                Ok(z)
            }
        }
    }
}

/// `cos(theta + margin)` written in terms of `c = cos(theta)`.
pub(crate) fn aam_phi(c: f64, margin: f64) -> f64 {
    let s = (1.0 - c * c).max(0.0).sqrt();
    c * margin.cos() - s * margin.sin()
}

/// Derivative of [`aam_phi`] with respect to `c`. Unbounded as `|c| -> 1`;
/// callers surface the resulting non-finite gradients as errors.
pub(crate) fn aam_phi_dc(c: f64, margin: f64) -> f64 {
    let s = (1.0 - c * c).max(0.0).sqrt();
    margin.cos() + margin.sin() * c / s
}

fn init_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat64 {
    let scale = 1.0 / (cols as f64).sqrt();
    let mut m = Mat64::zeros(rows, cols);
    for v in m.data_mut() {
        let g: f64 = rng.sample(StandardNormal);
        *v = scale * g;
    }
    m
}

/// One branch: extractor plus head plus the frozen flag. Mutation goes
/// through [`BranchState::params_mut`], which refuses on a frozen branch.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchState {
    extractor: ExtractorParams,
    head: HeadParams,
    frozen: bool,
}

impl BranchState {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        BranchState {
            extractor: ExtractorParams::init(cfg, &mut rng),
            head: HeadParams::init(cfg, &mut rng),
            frozen: false,
        }
    }

    pub fn from_parts(extractor: ExtractorParams, head: HeadParams, frozen: bool) -> Result<Self> {
        if extractor.embed_dim() != head.embed_dim() {
            return Err(Error::shape(
                format!("head rows of dim {}", extractor.embed_dim()),
                format!("{}", head.embed_dim()),
            ));
        }
        Ok(BranchState {
            extractor,
            head,
            frozen,
        })
    }

    pub fn extractor(&self) -> &ExtractorParams {
        &self.extractor
    }

    pub fn head(&self) -> &HeadParams {
        &self.head
    }

    pub fn frozen(&self) -> bool {
        self.frozen
    }

    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            input_dim: self.extractor.input_dim(),
            hidden_dim: self.extractor.hidden_dim(),
            embed_dim: self.extractor.embed_dim(),
            n_speakers: self.head.n_classes(),
        }
    }

    /// Deep copy with `frozen = true`; the anchor branch of stage 2.
    pub fn clone_frozen(&self) -> BranchState {
        BranchState {
            extractor: self.extractor.clone(),
            head: self.head.clone(),
            frozen: true,
        }
    }

    /// Deep copy with `frozen = false`; the trainable branch of stage 2.
    pub fn clone_trainable(&self) -> BranchState {
        BranchState {
            extractor: self.extractor.clone(),
            head: self.head.clone(),
            frozen: false,
        }
    }

    /// Mutable access to both parameter sets; errors on a frozen branch.
    pub fn params_mut(&mut self) -> Result<(&mut ExtractorParams, &mut HeadParams)> {
        if self.frozen {
            return Err(Error::FrozenBranch);
        }
        Ok((&mut self.extractor, &mut self.head))
    }

    /// Replace the head (stage-2 `head_reinit` option); errors when frozen.
    pub fn replace_head(&mut self, head: HeadParams) -> Result<()> {
        if self.frozen {
            return Err(Error::FrozenBranch);
        }
        if head.embed_dim() != self.extractor.embed_dim() {
            return Err(Error::shape(
                format!("head of embed dim {}", self.extractor.embed_dim()),
                format!("{}", head.embed_dim()),
            ));
        }
        self.head = head;
        Ok(())
    }

    /// SHA-256 over all parameter bits in canonical block order. Used for
    /// the freeze guarantee and for run manifests.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for (name, block) in self.param_blocks() {
            hasher.update(name.as_bytes());
            for v in block {
                hasher.update(v.to_bits().to_le_bytes());
            }
        }
        hex_string(&hasher.finalize())
    }

    pub fn param_blocks(&self) -> Vec<(&'static str, &[f64])> {
        let mut blocks: Vec<(&'static str, &[f64])> = self.extractor.blocks().to_vec();
        blocks.push(("head.w", self.head.weight.data()));
        blocks.push(("head.b", &self.head.bias));
        blocks
    }

    /// All parameters flattened in canonical block order.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (_, block) in self.param_blocks() {
            out.extend_from_slice(block);
        }
        out
    }

    /// Overwrite all parameters from a flat vector in canonical block order.
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if self.frozen {
            return Err(Error::FrozenBranch);
        }
        let expected: usize = self.param_blocks().iter().map(|(_, b)| b.len()).sum();
        if flat.len() != expected {
            return Err(Error::shape(
                format!("{expected} parameters"),
                format!("{}", flat.len()),
            ));
        }
        let mut offset = 0;
        let mut assign = |dst: &mut [f64]| {
            dst.copy_from_slice(&flat[offset..offset + dst.len()]);
            offset += dst.len();
        };
        for block in self.extractor.blocks_mut() {
            assign(block);
        }
        assign(self.head.weight.data_mut());
        assign(&mut self.head.bias);
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.param_blocks()
            .iter()
            .all(|(_, b)| b.iter().all(|v| v.is_finite()))
    }
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Checkpoint header metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointMeta {
    pub stage: String,
    pub seed: u64,
}

const CKPT_MAGIC: &str = "anchorsv-checkpoint v1";

/// Save a branch as a versioned text checkpoint. Values are written in
/// shortest round-trip decimal, so load/save is bit-exact.
pub fn save_checkpoint(branch: &BranchState, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    let cfg = branch.config();
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{CKPT_MAGIC}")?;
    writeln!(
        f,
        "arch {} {} {} {}",
        cfg.input_dim, cfg.hidden_dim, cfg.embed_dim, cfg.n_speakers
    )?;
    writeln!(f, "stage {}", meta.stage)?;
    writeln!(f, "seed {}", meta.seed)?;
    writeln!(f, "frozen {}", branch.frozen())?;
    for (name, block) in branch.param_blocks() {
        writeln!(f, "param {name} {}", block.len())?;
        let vals: Vec<String> = block.iter().map(|v| format!("{v}")).collect();
        writeln!(f, "{}", vals.join(" "))?;
    }
    Ok(())
}

/// Load a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<(BranchState, CheckpointMeta)> {
    let text = std::fs::read_to_string(path)?;
    let perr = |msg: String| Error::parse(path.display().to_string(), msg);
    let mut lines = text.lines();
    if lines.next() != Some(CKPT_MAGIC) {
        return Err(perr(format!("missing {CKPT_MAGIC:?} header")));
    }
    let arch_line = lines.next().ok_or_else(|| perr("missing arch line".into()))?;
    let dims: Vec<usize> = arch_line
        .strip_prefix("arch ")
        .ok_or_else(|| perr("missing arch line".into()))?
        .split_whitespace()
        .map(|v| v.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| perr(e.to_string()))?;
    if dims.len() != 4 {
        return Err(perr("arch line needs 4 dims".into()));
    }
    let cfg = ModelConfig {
        input_dim: dims[0],
        hidden_dim: dims[1],
        embed_dim: dims[2],
        n_speakers: dims[3],
    };
    let stage = lines
        .next()
        .and_then(|l| l.strip_prefix("stage "))
        .ok_or_else(|| perr("missing stage line".into()))?
        .to_string();
    let seed: u64 = lines
        .next()
        .and_then(|l| l.strip_prefix("seed "))
        .ok_or_else(|| perr("missing seed line".into()))?
        .parse()
        .map_err(|e: std::num::ParseIntError| perr(e.to_string()))?;
    let frozen: bool = lines
        .next()
        .and_then(|l| l.strip_prefix("frozen "))
        .ok_or_else(|| perr("missing frozen line".into()))?
        .parse()
        .map_err(|e: std::str::ParseBoolError| perr(e.to_string()))?;

    let mut blocks: Vec<(String, Vec<f64>)> = Vec::new();
    while let Some(header) = lines.next() {
        if header.trim().is_empty() {
            continue;
        }
        let mut h = header.split_whitespace();
        if h.next() != Some("param") {
            return Err(perr(format!("expected param header, got {header:?}")));
        }
        let name = h.next().ok_or_else(|| perr("param missing name".into()))?;
        let len: usize = h
            .next()
            .ok_or_else(|| perr("param missing length".into()))?
            .parse()
            .map_err(|e: std::num::ParseIntError| perr(e.to_string()))?;
        let data_line = lines.next().ok_or_else(|| perr("param missing data".into()))?;
        let vals: Vec<f64> = data_line
            .split_whitespace()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| perr(e.to_string()))?;
        if vals.len() != len {
            return Err(perr(format!(
                "param {name} declares {len} values but has {}",
                vals.len()
            )));
        }
        blocks.push((name.to_string(), vals));
    }

    let (d, h, e, s) = (cfg.input_dim, cfg.hidden_dim, cfg.embed_dim, cfg.n_speakers);
    let expected: [(&str, usize, usize); 8] = [
        ("enc1.w", h, d),
        ("enc1.b", 1, h),
        ("enc2.w", h, h),
        ("enc2.b", 1, h),
        ("proj.w", e, 2 * h),
        ("proj.b", 1, e),
        ("head.w", s, e),
        ("head.b", 1, s),
    ];
    if blocks.len() != expected.len() {
        return Err(perr(format!(
            "expected {} parameter blocks, found {}",
            expected.len(),
            blocks.len()
        )));
    }
    let take = |idx: usize| -> Result<Vec<f64>> {
        let (name, rows, cols) = expected[idx];
        let (got_name, vals) = &blocks[idx];
        if got_name != name || vals.len() != rows * cols {
            return Err(perr(format!(
                "block {idx}: expected {name} with {} values, got {got_name} with {}",
                rows * cols,
                vals.len()
            )));
        }
        Ok(vals.clone())
    };
    let extractor = ExtractorParams {
        enc1_w: Mat64::from_vec(h, d, take(0)?)?,
        enc1_b: take(1)?,
        enc2_w: Mat64::from_vec(h, h, take(2)?)?,
        enc2_b: take(3)?,
        proj_w: Mat64::from_vec(e, 2 * h, take(4)?)?,
        proj_b: take(5)?,
    };
    let head = HeadParams {
        weight: Mat64::from_vec(s, e, take(6)?)?,
        bias: take(7)?,
    };
    let branch = BranchState::from_parts(extractor, head, frozen)?;
    if !branch.is_finite() {
        return Err(Error::NonFinite(format!(
            "checkpoint {} contains non-finite parameters",
            path.display()
        )));
    }
    Ok((branch, CheckpointMeta { stage, seed }))
}
