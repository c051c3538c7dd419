//! Synthetic corpus generation, noise synthesis, exact-SNR mixing,
//! speaker-disjoint splitting, and trial-list construction.
//!
//! Everything here is a pure function of `(seed, parameters)`; identical
//! calls produce bitwise-identical results. Noise lives in feature space
//! (same frames-by-dims shape as the utterances it is mixed into).

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::Mat64;
use crate::seeds;

/// Synthetic noise families. White is broadband, Babble averages a few
/// speaker-like prototypes (speech-shaped interference), Tonal lays down
/// sinusoidal rows (music-like structure).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    White,
    Babble,
    Tonal,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 3] = [NoiseKind::White, NoiseKind::Babble, NoiseKind::Tonal];

    pub fn index(self) -> u64 {
        match self {
            NoiseKind::White => 0,
            NoiseKind::Babble => 1,
            NoiseKind::Tonal => 2,
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            NoiseKind::White => "white",
            NoiseKind::Babble => "babble",
            NoiseKind::Tonal => "tonal",
        };
        f.write_str(s)
    }
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "white" => Ok(NoiseKind::White),
            "babble" => Ok(NoiseKind::Babble),
            "tonal" => Ok(NoiseKind::Tonal),
            other => Err(Error::InvalidArg(format!(
                "unknown noise kind {other:?} (expected white, babble, or tonal)"
            ))),
        }
    }
}

/// Provenance of an utterance's frames.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Condition {
    Clean,
    Noisy { snr_db: f64, kind: NoiseKind },
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::Clean => f.write_str("clean"),
            Condition::Noisy { snr_db, kind } => write!(f, "noisy:{kind}:{snr_db}"),
        }
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "clean" {
            return Ok(Condition::Clean);
        }
        let mut parts = s.split(':');
        match (parts.next(), parts.next(), parts.next(), parts.next()) {
            (Some("noisy"), Some(kind), Some(snr), None) => Ok(Condition::Noisy {
                kind: kind.parse()?,
                snr_db: snr
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidArg(format!("bad snr in condition {s:?}: {e}")))?,
            }),
            _ => Err(Error::InvalidArg(format!("bad condition {s:?}"))),
        }
    }
}

/// One synthetic utterance: a frames-by-dims feature matrix plus label.
#[derive(Clone, Debug)]
pub struct Utterance {
    pub id: String,
    pub speaker: usize,
    pub frames: Mat64,
    pub condition: Condition,
}

/// Which side of a speaker-disjoint split a dataset belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArg(format!("unknown split {other:?}"))),
        }
    }
}

/// A labeled utterance collection with dense speaker labels `[0, n_speakers)`.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub utterances: Vec<Utterance>,
    pub n_speakers: usize,
    pub split: Split,
    pub dim: usize,
}

impl Dataset {
    /// Check the structural invariants: dense labels, unique ids, T >= 2,
    /// consistent dims, finite entries.
    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for utt in &self.utterances {
            if utt.speaker >= self.n_speakers {
                return Err(Error::InvalidArg(format!(
                    "utterance {} has speaker {} >= n_speakers {}",
                    utt.id, utt.speaker, self.n_speakers
                )));
            }
            if !ids.insert(utt.id.as_str()) {
                return Err(Error::InvalidArg(format!("duplicate utterance id {}", utt.id)));
            }
            if utt.frames.rows() < 2 {
                return Err(Error::shape(
                    "at least 2 frames per utterance",
                    format!("{} in {}", utt.frames.rows(), utt.id),
                ));
            }
            if utt.frames.cols() != self.dim {
                return Err(Error::shape(
                    format!("feature dim {}", self.dim),
                    format!("{} in {}", utt.frames.cols(), utt.id),
                ));
            }
            if !utt.frames.is_finite() {
                return Err(Error::NonFinite(format!("frames of {}", utt.id)));
            }
        }
        Ok(())
    }

    pub fn utterance(&self, id: &str) -> Option<&Utterance> {
        self.utterances.iter().find(|u| u.id == id)
    }

    /// Speaker labels present, as a sorted set.
    pub fn speaker_set(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self
            .utterances
            .iter()
            .map(|u| u.speaker)
            .collect::<HashSet<_>>()
            .into_iter()
            .collect();
        s.sort_unstable();
        s
    }
}

/// A verification trial: two utterance ids plus the same-speaker label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trial {
    pub utt_a: String,
    pub utt_b: String,
    pub target: bool,
}

/// Generate a deterministic synthetic corpus.
///
/// Each speaker gets a unit-norm prototype direction. Each utterance is the
/// prototype plus a per-utterance offset (`intra_spread`) plus per-frame
/// jitter (`channel_spread`). With both spreads zero every frame equals the
/// prototype bitwise.
pub fn synth_corpus(
    seed: u64,
    n_speakers: usize,
    utts_per_speaker: usize,
    frames: usize,
    dim: usize,
    intra_spread: f64,
    channel_spread: f64,
) -> Result<Dataset> {
    if n_speakers < 1 || utts_per_speaker < 1 || dim < 1 {
        return Err(Error::InvalidArg(
            "speakers, utterances per speaker, and dim must be >= 1".into(),
        ));
    }
    if frames < 2 {
        return Err(Error::InvalidArg(
            "frames must be >= 2 (statistics pooling needs a std)".into(),
        ));
    }
    if !(intra_spread >= 0.0) || !(channel_spread >= 0.0) {
        return Err(Error::InvalidArg("spreads must be >= 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::mix_seed(seed, &[seeds::CORPUS]));
    let mut utterances = Vec::with_capacity(n_speakers * utts_per_speaker);
    for s in 0..n_speakers {
        let proto = unit_vector(&mut rng, dim);
        for u in 0..utts_per_speaker {
            let mut offset = vec![0.0; dim];
            for o in offset.iter_mut() {
                let g: f64 = rng.sample(StandardNormal);
                *o = intra_spread * g;
            }
            let mut data = Vec::with_capacity(frames * dim);
            for _t in 0..frames {
                for d in 0..dim {
                    let g: f64 = rng.sample(StandardNormal);
                    data.push(proto[d] + offset[d] + channel_spread * g);
                }
            }
            utterances.push(Utterance {
                id: format!("s{s:03}_u{u:03}"),
                speaker: s,
                frames: Mat64::from_vec(frames, dim, data)?,
                condition: Condition::Clean,
            });
        }
    }
    let ds = Dataset {
        utterances,
        n_speakers,
        split: Split::Train,
        dim,
    };
    ds.validate()?;
    Ok(ds)
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = crate::linalg::norm(&v);
        if n > 1e-6 {
            return v.iter().map(|x| x / n).collect();
        }
    }
}

const BABBLE_SPEAKERS: usize = 3;
const BABBLE_JITTER: f64 = 0.1;
const WHITE_FLUCTUATION: f64 = 0.25;

/// Generate a zero-mean noise matrix of the given shape, deterministic in
/// `seed`.
///
/// Every kind carries a stationary per-matrix component plus per-frame
/// fluctuation, the way a steady noise source biases every frame of a
/// feature matrix; purely independent entries would average out under
/// statistics pooling and leave nothing to be robust against. The global
/// mean is subtracted, so a 1x1 matrix degenerates to zero power (and
/// mixing with it errors).
pub fn gen_noise(seed: u64, frames: usize, dim: usize, kind: NoiseKind) -> Mat64 {
    assert!(frames >= 1 && dim >= 1, "noise shape must be at least 1x1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = Mat64::zeros(frames, dim);
    match kind {
        NoiseKind::White => {
            // Broadband: random unit profile plus strong iid fluctuation.
            let profile = unit_vector(&mut rng, dim);
            for t in 0..frames {
                for d in 0..dim {
                    let g: f64 = rng.sample(StandardNormal);
                    m.set(t, d, profile[d] + WHITE_FLUCTUATION * g);
                }
            }
        }
        NoiseKind::Babble => {
            // Speech-shaped: average a few random speaker-like prototypes
            // (the same distribution speaker prototypes are drawn from),
            // then add per-frame jitter.
            let mut base = vec![0.0; dim];
            for _ in 0..BABBLE_SPEAKERS {
                let p = unit_vector(&mut rng, dim);
                for (b, v) in base.iter_mut().zip(&p) {
                    *b += v / BABBLE_SPEAKERS as f64;
                }
            }
            for t in 0..frames {
                for d in 0..dim {
                    let g: f64 = rng.sample(StandardNormal);
                    m.set(t, d, base[d] + BABBLE_JITTER * g);
                }
            }
        }
        NoiseKind::Tonal => {
            // Music-like: each row is a sampled sinusoid over the feature
            // index with an integer period (so autocorrelation peaks at the
            // period); the phase drifts slowly over frames.
            let max_period = (dim / 2).max(2);
            let period = rng.random_range(2..=max_period);
            let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let omega: f64 = rng.random_range(0.02..0.3);
            for t in 0..frames {
                for d in 0..dim {
                    let x = std::f64::consts::TAU * d as f64 / period as f64
                        + phase
                        + omega * t as f64;
                    m.set(t, d, x.sin());
                }
            }
        }
    }
    let n = m.data().len() as f64;
    let mean = m.data().iter().sum::<f64>() / n;
    for v in m.data_mut() {
        *v -= mean;
    }
    m
}

/// Measured SNR in dB between a signal and a noise matrix of equal shape.
pub fn snr_db(signal: &Mat64, noise: &Mat64) -> Result<f64> {
    check_same_shape(signal, noise)?;
    let ps = signal.power();
    let pn = noise.power();
    if ps == 0.0 || pn == 0.0 {
        return Err(Error::ZeroPower);
    }
    Ok(10.0 * (ps / pn).log10())
}

/// Mix `signal + g * noise` with `g` chosen so the noise component sits
/// exactly `snr_db` decibels below the signal (powers are mean squared
/// entries).
pub fn mix_at_snr(signal: &Mat64, noise: &Mat64, snr_db: f64) -> Result<Mat64> {
    check_same_shape(signal, noise)?;
    if !snr_db.is_finite() {
        return Err(Error::InvalidArg(format!("snr_db must be finite, got {snr_db}")));
    }
    let ps = signal.power();
    let pn = noise.power();
    if ps == 0.0 || pn == 0.0 {
        return Err(Error::ZeroPower);
    }
    let g = (ps / (pn * 10f64.powf(snr_db / 10.0))).sqrt();
    let mut out = signal.clone();
    out.add_scaled(noise, g);
    Ok(out)
}

fn check_same_shape(a: &Mat64, b: &Mat64) -> Result<()> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(Error::shape(
            format!("{}x{}", a.rows(), a.cols()),
            format!("{}x{}", b.rows(), b.cols()),
        ));
    }
    Ok(())
}

/// Split off the highest `n_test_speakers` labels into a Test dataset.
/// Labels are re-densified on both sides; ids are untouched, so provenance
/// stays visible. Train and Test speaker sets are disjoint by construction.
pub fn split_speakers(ds: &Dataset, n_test_speakers: usize) -> Result<(Dataset, Dataset)> {
    if n_test_speakers == 0 || n_test_speakers >= ds.n_speakers {
        return Err(Error::InvalidArg(format!(
            "need 1 <= test speakers < {} total, got {n_test_speakers}",
            ds.n_speakers
        )));
    }
    let n_train = ds.n_speakers - n_test_speakers;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for utt in &ds.utterances {
        if utt.speaker < n_train {
            train.push(utt.clone());
        } else {
            let mut u = utt.clone();
            u.speaker -= n_train;
            test.push(u);
        }
    }
    let train = Dataset {
        utterances: train,
        n_speakers: n_train,
        split: Split::Train,
        dim: ds.dim,
    };
    let test = Dataset {
        utterances: test,
        n_speakers: n_test_speakers,
        split: Split::Test,
        dim: ds.dim,
    };
    train.validate()?;
    test.validate()?;
    Ok((train, test))
}

/// Sample exactly `n_target` same-speaker and `n_nontarget` cross-speaker
/// trials without duplicates, deterministic in `seed`.
pub fn make_trials(
    ds: &Dataset,
    seed: u64,
    n_target: usize,
    n_nontarget: usize,
) -> Result<Vec<Trial>> {
    let mut by_speaker: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, utt) in ds.utterances.iter().enumerate() {
        by_speaker.entry(utt.speaker).or_default().push(i);
    }
    if by_speaker.len() < 2 || by_speaker.values().all(|v| v.len() < 2) {
        return Err(Error::Infeasible(
            "need >= 2 speakers and >= 2 utterances for some speaker".into(),
        ));
    }

    let mut target_pairs = Vec::new();
    for idxs in by_speaker.values() {
        for (a, &i) in idxs.iter().enumerate() {
            for &j in &idxs[a + 1..] {
                target_pairs.push((i, j));
            }
        }
    }
    let mut nontarget_pairs = Vec::new();
    for i in 0..ds.utterances.len() {
        for j in (i + 1)..ds.utterances.len() {
            if ds.utterances[i].speaker != ds.utterances[j].speaker {
                nontarget_pairs.push((i, j));
            }
        }
    }
    if n_target > target_pairs.len() {
        return Err(Error::Infeasible(format!(
            "requested {n_target} target trials but only {} distinct pairs exist",
            target_pairs.len()
        )));
    }
    if n_nontarget > nontarget_pairs.len() {
        return Err(Error::Infeasible(format!(
            "requested {n_nontarget} nontarget trials but only {} distinct pairs exist",
            nontarget_pairs.len()
        )));
    }

    let mut rng_t = ChaCha8Rng::seed_from_u64(seeds::mix_seed(seed, &[seeds::TRIALS, 0]));
    let mut rng_n = ChaCha8Rng::seed_from_u64(seeds::mix_seed(seed, &[seeds::TRIALS, 1]));
    target_pairs.shuffle(&mut rng_t);
    nontarget_pairs.shuffle(&mut rng_n);

    let mut trials = Vec::with_capacity(n_target + n_nontarget);
    for &(i, j) in target_pairs.iter().take(n_target) {
        trials.push(Trial {
            utt_a: ds.utterances[i].id.clone(),
            utt_b: ds.utterances[j].id.clone(),
            target: true,
        });
    }
    for &(i, j) in nontarget_pairs.iter().take(n_nontarget) {
        trials.push(Trial {
            utt_a: ds.utterances[i].id.clone(),
            utt_b: ds.utterances[j].id.clone(),
            target: false,
        });
    }
    Ok(trials)
}

/// Write a trial list: one `1|0 <utt_a> <utt_b>` line per trial.
pub fn save_trials(trials: &[Trial], path: &Path) -> Result<()> {
    let mut out = String::new();
    for t in trials {
        out.push_str(if t.target { "1 " } else { "0 " });
        out.push_str(&t.utt_a);
        out.push(' ');
        out.push_str(&t.utt_b);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_trials(path: &Path) -> Result<Vec<Trial>> {
    let text = std::fs::read_to_string(path)?;
    let mut trials = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (label, a, b) = match (parts.next(), parts.next(), parts.next(), parts.next()) {
            (Some(l), Some(a), Some(b), None) => (l, a, b),
            _ => {
                return Err(Error::parse(
                    path.display().to_string(),
                    format!("line {}: expected '1|0 <utt_a> <utt_b>'", lineno + 1),
                ))
            }
        };
        let target = match label {
            "1" => true,
            "0" => false,
            other => {
                return Err(Error::parse(
                    path.display().to_string(),
                    format!("line {}: bad label {other:?}", lineno + 1),
                ))
            }
        };
        if a == b {
            return Err(Error::parse(
                path.display().to_string(),
                format!("line {}: trial pairs an utterance with itself", lineno + 1),
            ));
        }
        trials.push(Trial {
            utt_a: a.to_string(),
            utt_b: b.to_string(),
            target,
        });
    }
    Ok(trials)
}

const MANIFEST_MAGIC: &str = "anchorsv-corpus v1";
const MATRIX_MAGIC: &str = "mat64";

impl Dataset {
    /// Export to `<dir>/<name>.manifest` plus one matrix blob per utterance
    /// under `<dir>/<name>_blobs/`, or inline matrices in the manifest when
    /// `inline_blobs` is set. Round-trips bit-exactly.
    pub fn save_manifest(&self, dir: &Path, name: &str, inline_blobs: bool) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let manifest_path = dir.join(format!("{name}.manifest"));
        let blob_dir_name = format!("{name}_blobs");
        let mut out = String::new();
        out.push_str(MANIFEST_MAGIC);
        out.push('\n');
        out.push_str(&format!("split {}\n", self.split));
        out.push_str(&format!("n_speakers {}\n", self.n_speakers));
        out.push_str(&format!("dim {}\n", self.dim));
        out.push_str(&format!("utterances {}\n", self.utterances.len()));
        if !inline_blobs {
            std::fs::create_dir_all(dir.join(&blob_dir_name))?;
        }
        for utt in &self.utterances {
            if inline_blobs {
                out.push_str(&format!(
                    "utt {} {} {} inline {} {}",
                    utt.id,
                    utt.speaker,
                    utt.condition,
                    utt.frames.rows(),
                    utt.frames.cols()
                ));
                for v in utt.frames.data() {
                    out.push(' ');
                    out.push_str(&format!("{v}"));
                }
                out.push('\n');
            } else {
                let rel = format!("{blob_dir_name}/{}.mat", utt.id);
                out.push_str(&format!(
                    "utt {} {} {} path {rel}\n",
                    utt.id, utt.speaker, utt.condition
                ));
                write_matrix(&dir.join(&rel), &utt.frames)?;
            }
        }
        std::fs::write(&manifest_path, out)?;
        Ok(manifest_path)
    }

    /// Load a corpus manifest written by [`Dataset::save_manifest`].
    pub fn load_manifest(path: &Path) -> Result<Dataset> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let perr = |msg: String| Error::parse(path.display().to_string(), msg);
        let mut lines = text.lines();
        if lines.next() != Some(MANIFEST_MAGIC) {
            return Err(perr(format!("missing {MANIFEST_MAGIC:?} header")));
        }
        let mut split = None;
        let mut n_speakers = None;
        let mut dim = None;
        let mut count = None;
        let mut utterances = Vec::new();
        for line in lines {
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            let (key, rest) = line
                .split_once(' ')
                .ok_or_else(|| perr(format!("bad line {line:?}")))?;
            match key {
                "split" => split = Some(rest.parse::<Split>()?),
                "n_speakers" => {
                    n_speakers = Some(rest.parse::<usize>().map_err(|e| perr(e.to_string()))?)
                }
                "dim" => dim = Some(rest.parse::<usize>().map_err(|e| perr(e.to_string()))?),
                "utterances" => {
                    count = Some(rest.parse::<usize>().map_err(|e| perr(e.to_string()))?)
                }
                "utt" => {
                    let mut f = rest.split_whitespace();
                    let id = f.next().ok_or_else(|| perr("utt line missing id".into()))?;
                    let speaker: usize = f
                        .next()
                        .ok_or_else(|| perr("utt line missing speaker".into()))?
                        .parse()
                        .map_err(|e: std::num::ParseIntError| perr(e.to_string()))?;
                    let condition: Condition = f
                        .next()
                        .ok_or_else(|| perr("utt line missing condition".into()))?
                        .parse()?;
                    let mode = f.next().ok_or_else(|| perr("utt line missing mode".into()))?;
                    let frames = match mode {
                        "path" => {
                            let rel = f.next().ok_or_else(|| perr("missing blob path".into()))?;
                            read_matrix(&base.join(rel))?
                        }
                        "inline" => {
                            let rows: usize = f
                                .next()
                                .ok_or_else(|| perr("missing rows".into()))?
                                .parse()
                                .map_err(|e: std::num::ParseIntError| perr(e.to_string()))?;
                            let cols: usize = f
                                .next()
                                .ok_or_else(|| perr("missing cols".into()))?
                                .parse()
                                .map_err(|e: std::num::ParseIntError| perr(e.to_string()))?;
                            let vals: Vec<f64> = f
                                .map(|v| v.parse::<f64>())
                                .collect::<std::result::Result<_, _>>()
                                .map_err(|e| perr(e.to_string()))?;
                            Mat64::from_vec(rows, cols, vals)?
                        }
                        other => return Err(perr(format!("unknown storage mode {other:?}"))),
                    };
                    utterances.push(Utterance {
                        id: id.to_string(),
                        speaker,
                        frames,
                        condition,
                    });
                }
                other => return Err(perr(format!("unknown manifest key {other:?}"))),
            }
        }
        let ds = Dataset {
            utterances,
            n_speakers: n_speakers.ok_or_else(|| perr("missing n_speakers".into()))?,
            split: split.ok_or_else(|| perr("missing split".into()))?,
            dim: dim.ok_or_else(|| perr("missing dim".into()))?,
        };
        if let Some(c) = count {
            if c != ds.utterances.len() {
                return Err(perr(format!(
                    "manifest declares {c} utterances but lists {}",
                    ds.utterances.len()
                )));
            }
        }
        ds.validate()?;
        Ok(ds)
    }
}

fn write_matrix(path: &Path, m: &Mat64) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{MATRIX_MAGIC} {} {}", m.rows(), m.cols())?;
    for r in 0..m.rows() {
        let row: Vec<String> = m.row(r).iter().map(|v| format!("{v}")).collect();
        writeln!(f, "{}", row.join(" "))?;
    }
    Ok(())
}

fn read_matrix(path: &Path) -> Result<Mat64> {
    let text = std::fs::read_to_string(path)?;
    let perr = |msg: String| Error::parse(path.display().to_string(), msg);
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| perr("empty matrix file".into()))?;
    let mut h = header.split_whitespace();
    if h.next() != Some(MATRIX_MAGIC) {
        return Err(perr("missing mat64 header".into()));
    }
    let rows: usize = h
        .next()
        .ok_or_else(|| perr("missing rows".into()))?
        .parse()
        .map_err(|e: std::num::ParseIntError| perr(e.to_string()))?;
    let cols: usize = h
        .next()
        .ok_or_else(|| perr("missing cols".into()))?
        .parse()
        .map_err(|e: std::num::ParseIntError| perr(e.to_string()))?;
    let mut data = Vec::with_capacity(rows * cols);
    for line in lines {
        for v in line.split_whitespace() {
            data.push(v.parse::<f64>().map_err(|e| perr(e.to_string()))?);
        }
    }
    Mat64::from_vec(rows, cols, data)
}
