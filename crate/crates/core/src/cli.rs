//! Command-line pipeline: corpus generation, the three training modes,
//! evaluation, and plot-data export. Every command writes its primary
//! outputs plus one `manifest.json` run record; reruns with identical inputs
//! and seeds produce byte-identical primary outputs (manifests differ only
//! in their timestamp and duration fields).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::data::{
    load_trials, make_trials, save_trials, split_speakers, synth_corpus, Condition, Dataset,
    NoiseKind,
};
use crate::error::{Error, Result};
use crate::eval::{full_eval, geometry_stats, project_2d};
use crate::model::{load_checkpoint, save_checkpoint, CheckpointMeta};
use crate::trainer::{train_joint, train_stage1, train_stage2, Stage, TrainConfig};

/// Exit codes: 0 success, 2 usage, 3 i/o, 4 numeric failure, 5 degenerate
/// data. Stable contract for scripts.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidArg(_) | Error::ShapeMismatch { .. } => 2,
        Error::Io(_) | Error::Parse { .. } => 3,
        Error::NonFinite(_) | Error::ZeroVector | Error::AnchorNotFrozen | Error::FrozenBranch => 4,
        Error::Degenerate(_) | Error::Infeasible(_) | Error::ZeroPower => 5,
        Error::UnknownId(_) => 5,
    }
}

#[derive(Parser)]
#[command(
    name = "anchorsv",
    version,
    about = "Anchor-guided robust speaker-embedding training and evaluation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus (train + test splits) and a trial list.
    Gen(GenArgs),
    /// Train stage 1, stage 2, or the joint baseline.
    Train(TrainArgs),
    /// Evaluate a checkpoint over clean and noisy conditions.
    Eval(EvalArgs),
    /// Export a 2-D projection of embeddings plus geometry stats.
    Plotdata(PlotArgs),
}

#[derive(Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Training-split speakers.
    #[arg(long, default_value_t = 32)]
    pub speakers: usize,
    /// Extra held-out speakers for the test split.
    #[arg(long, default_value_t = 8)]
    pub test_speakers: usize,
    /// Utterances per speaker.
    #[arg(long, default_value_t = 20)]
    pub utts: usize,
    /// Frames per utterance.
    #[arg(long, default_value_t = 50)]
    pub frames: usize,
    /// Feature dimension.
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    /// Per-utterance offset scale.
    #[arg(long, default_value_t = 0.3)]
    pub intra_spread: f64,
    /// Per-frame jitter scale.
    #[arg(long, default_value_t = 0.1)]
    pub channel_spread: f64,
    /// Same-speaker trials to sample from the test split.
    #[arg(long, default_value_t = 500)]
    pub targets: usize,
    /// Cross-speaker trials to sample from the test split.
    #[arg(long, default_value_t = 500)]
    pub nontargets: usize,
    /// Embed matrices in the manifest instead of one blob file each.
    #[arg(long, default_value_t = false)]
    pub inline_blobs: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TrainArgs {
    /// 1, 2, or joint.
    #[arg(long)]
    pub stage: String,
    /// Optional key = value config file; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training corpus manifest.
    #[arg(long)]
    pub data: PathBuf,
    /// Stage-1 checkpoint to fine-tune from (stage 2 only).
    #[arg(long)]
    pub base: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub joint_weight: Option<f64>,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Checkpoint to evaluate.
    #[arg(long)]
    pub model: PathBuf,
    /// Test corpus manifest.
    #[arg(long)]
    pub data: PathBuf,
    /// Trial list file.
    #[arg(long)]
    pub trials: PathBuf,
    /// Comma-separated SNR grid in dB.
    #[arg(long, default_value = "0,5,10,15,20")]
    pub snrs: String,
    /// Comma-separated noise kinds.
    #[arg(long, default_value = "white,babble,tonal")]
    pub noise: String,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Noise kind for the overlaid noisy copies.
    #[arg(long, default_value = "white")]
    pub noise_kind: String,
    /// SNR for the noisy copies, in dB.
    #[arg(long, default_value_t = 5.0)]
    pub snr: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Skip the noisy overlay and export clean embeddings only.
    #[arg(long, default_value_t = false)]
    pub clean_only: bool,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Plotdata(args) => cmd_plotdata(args),
    }
}

#[derive(Serialize)]
struct FileRecord {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct RunManifest {
    tool: String,
    version: String,
    command: String,
    config_digest: String,
    seeds: BTreeMap<String, u64>,
    inputs: Vec<FileRecord>,
    outputs: Vec<FileRecord>,
    started_unix_ms: u128,
    duration_ms: u128,
}

struct RunRecorder {
    command: String,
    config_digest: String,
    seeds: BTreeMap<String, u64>,
    inputs: Vec<FileRecord>,
    outputs: Vec<FileRecord>,
    started: Instant,
    started_unix_ms: u128,
}

impl RunRecorder {
    fn new(command: &str, config_text: &str) -> Self {
        RunRecorder {
            command: command.to_string(),
            config_digest: sha256_hex(config_text.as_bytes()),
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: Instant::now(),
            started_unix_ms: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis())
                .unwrap_or(0),
        }
    }

    fn seed(&mut self, name: &str, value: u64) {
        self.seeds.insert(name.to_string(), value);
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(FileRecord {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    fn input_digest(&mut self, name: &str, digest: String) {
        self.inputs.push(FileRecord {
            path: name.to_string(),
            sha256: digest,
        });
    }

    /// Record an output file; the stored path is relative to the manifest.
    fn output(&mut self, dir: &Path, name: &str) -> Result<()> {
        self.outputs.push(FileRecord {
            path: name.to_string(),
            sha256: sha256_file(&dir.join(name))?,
        });
        Ok(())
    }

    fn write(self, dir: &Path) -> Result<()> {
        let manifest = RunManifest {
            tool: "anchorsv".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: self.command,
            config_digest: self.config_digest,
            seeds: self.seeds,
            inputs: self.inputs,
            outputs: self.outputs,
            started_unix_ms: self.started_unix_ms,
            duration_ms: self.started.elapsed().as_millis(),
        };
        let json = serde_json::to_string_pretty(&manifest)
            .map_err(|e| Error::InvalidArg(format!("manifest serialization: {e}")))?;
        std::fs::write(dir.join("manifest.json"), json + "\n")?;
        Ok(())
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    crate::model::hex_string(&Sha256::digest(bytes))
}

fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

/// One run per output directory: `.anchorsv.lock` is created exclusively and
/// removed when the run finishes. A stale lock (crashed run) must be deleted
/// by hand.
struct DirLock {
    path: PathBuf,
}

impl DirLock {
    fn acquire(dir: &Path) -> Result<DirLock> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(".anchorsv.lock");
        match std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(_) => Ok(DirLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Io(
                std::io::Error::new(
                    std::io::ErrorKind::AlreadyExists,
                    format!(
                        "lockfile {} exists; another run owns this directory (delete it if stale)",
                        path.display()
                    ),
                ),
            )),
            Err(e) => Err(Error::Io(e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

fn cmd_gen(args: GenArgs) -> Result<()> {
    if args.speakers == 0 {
        return Err(Error::InvalidArg("--speakers must be >= 1".into()));
    }
    if args.test_speakers == 0 {
        return Err(Error::InvalidArg("--test-speakers must be >= 1".into()));
    }
    if args.utts == 0 {
        return Err(Error::InvalidArg("--utts must be >= 1".into()));
    }
    if args.frames < 2 {
        return Err(Error::InvalidArg("--frames must be >= 2".into()));
    }
    if args.dim == 0 {
        return Err(Error::InvalidArg("--dim must be >= 1".into()));
    }
    let _lock = DirLock::acquire(&args.out)?;
    let config_text = format!(
        "command = gen\nseed = {}\nspeakers = {}\ntest_speakers = {}\nutts = {}\nframes = {}\ndim = {}\nintra_spread = {}\nchannel_spread = {}\ntargets = {}\nnontargets = {}\ninline_blobs = {}\n",
        args.seed,
        args.speakers,
        args.test_speakers,
        args.utts,
        args.frames,
        args.dim,
        args.intra_spread,
        args.channel_spread,
        args.targets,
        args.nontargets,
        args.inline_blobs
    );
    let mut rec = RunRecorder::new("gen", &config_text);
    rec.seed("corpus", args.seed);

    let total = args.speakers + args.test_speakers;
    let corpus = synth_corpus(
        args.seed,
        total,
        args.utts,
        args.frames,
        args.dim,
        args.intra_spread,
        args.channel_spread,
    )?;
    let (train, test) = split_speakers(&corpus, args.test_speakers)?;
    train.save_manifest(&args.out, "train", args.inline_blobs)?;
    test.save_manifest(&args.out, "test", args.inline_blobs)?;
    let trials = make_trials(&test, args.seed, args.targets, args.nontargets)?;
    save_trials(&trials, &args.out.join("trials.txt"))?;

    rec.output(&args.out, "train.manifest")?;
    rec.output(&args.out, "test.manifest")?;
    rec.output(&args.out, "trials.txt")?;
    rec.write(&args.out)?;
    println!(
        "gen: {} train speakers, {} test speakers, {} trials -> {}",
        train.n_speakers,
        test.n_speakers,
        trials.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let stage: Stage = args.stage.parse()?;
    let mut cfg = match &args.config {
        Some(path) => TrainConfig::from_config_file(path)?,
        None => TrainConfig::reference(stage),
    };
    cfg.stage = stage;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(epochs) = args.epochs {
        cfg.epochs = epochs;
    }
    if let Some(batch) = args.batch_size {
        cfg.batch_size = batch;
    }
    if let Some(lr) = args.lr {
        cfg.learning_rate = lr;
    }
    if let Some(w) = args.joint_weight {
        cfg.joint_weight = w;
    }
    cfg.validate()?;
    if stage == Stage::Two && args.base.is_none() {
        return Err(Error::InvalidArg("--base is required for --stage 2".into()));
    }

    let ds = Dataset::load_manifest(&args.data)?;
    if ds.dim != cfg.input_dim {
        // Follow the data rather than fail: dims in the config exist for
        // model sizing, and the corpus fixes the input side.
        cfg.input_dim = ds.dim;
    }

    let _lock = DirLock::acquire(&args.out)?;
    let resolved = cfg.canonical_text();
    let mut rec = RunRecorder::new("train", &resolved);
    rec.seed("train", cfg.seed);
    rec.input(&args.data)?;

    let (branch, log) = match stage {
        Stage::One => train_stage1(&cfg, &ds)?,
        Stage::Two => {
            let base_path = args.base.as_ref().expect("checked above");
            let (base, _meta) = load_checkpoint(base_path)?;
            rec.input(base_path)?;
            rec.input_digest("base_params", base.digest());
            train_stage2(&cfg, &ds, &base)?
        }
        Stage::Joint => train_joint(&cfg, &ds)?,
    };

    std::fs::write(args.out.join("config.txt"), &resolved)?;
    let meta = CheckpointMeta {
        stage: stage.to_string(),
        seed: cfg.seed,
    };
    save_checkpoint(&branch, &meta, &args.out.join("checkpoint.ckpt"))?;
    std::fs::write(args.out.join("train_log.csv"), log.to_csv())?;

    rec.input_digest("final_params", branch.digest());
    rec.output(&args.out, "config.txt")?;
    rec.output(&args.out, "checkpoint.ckpt")?;
    rec.output(&args.out, "train_log.csv")?;
    rec.write(&args.out)?;
    let final_loss = log.records.last().map(|r| r.loss).unwrap_or(f64::NAN);
    println!(
        "train stage {stage}: {} epochs, final loss {final_loss:.6} -> {}",
        log.records.len(),
        args.out.display()
    );
    Ok(())
}

fn parse_snrs(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            let v = v.trim();
            if v.eq_ignore_ascii_case("inf") {
                Ok(f64::INFINITY)
            } else {
                v.parse::<f64>()
                    .map_err(|e| Error::InvalidArg(format!("bad --snrs entry {v:?}: {e}")))
            }
        })
        .collect()
}

fn parse_kinds(s: &str) -> Result<Vec<NoiseKind>> {
    s.split(',').map(|k| k.trim().parse::<NoiseKind>()).collect()
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let snrs = parse_snrs(&args.snrs)?;
    let kinds = parse_kinds(&args.noise)?;
    let (branch, _meta) = load_checkpoint(&args.model)?;
    let ds = Dataset::load_manifest(&args.data)?;
    let trials = load_trials(&args.trials)?;

    let _lock = DirLock::acquire(&args.out)?;
    let config_text = format!(
        "command = eval\nmodel = {}\nsnrs = {}\nnoise = {}\nseed = {}\n",
        args.model.display(),
        args.snrs,
        args.noise,
        args.seed
    );
    let mut rec = RunRecorder::new("eval", &config_text);
    rec.seed("eval", args.seed);
    rec.input(&args.model)?;
    rec.input(&args.data)?;
    rec.input(&args.trials)?;

    let report = full_eval(branch.extractor(), &ds, &trials, &snrs, &kinds, args.seed)?;
    std::fs::write(args.out.join("report.csv"), report.to_csv())?;
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::InvalidArg(format!("report serialization: {e}")))?;
    std::fs::write(args.out.join("report.json"), json + "\n")?;

    rec.output(&args.out, "report.csv")?;
    rec.output(&args.out, "report.json")?;
    rec.write(&args.out)?;
    println!(
        "eval: clean EER {:.4}, noisy average {:.4} -> {}",
        report.clean_eer,
        report.avg_noisy_eer,
        args.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct PlotSidecar {
    variance_share: f64,
    clean: crate::eval::GeometryStats,
    noisy: Option<crate::eval::GeometryStats>,
}

fn cmd_plotdata(args: PlotArgs) -> Result<()> {
    let (branch, _meta) = load_checkpoint(&args.model)?;
    let ds = Dataset::load_manifest(&args.data)?;
    if ds.utterances.is_empty() {
        return Err(Error::Degenerate("empty dataset".into()));
    }
    let kind: NoiseKind = args.noise_kind.parse()?;

    let _lock = DirLock::acquire(&args.out)?;
    let config_text = format!(
        "command = plotdata\nmodel = {}\nnoise_kind = {}\nsnr = {}\nseed = {}\nclean_only = {}\n",
        args.model.display(),
        kind,
        args.snr,
        args.seed,
        args.clean_only
    );
    let mut rec = RunRecorder::new("plotdata", &config_text);
    rec.seed("plot", args.seed);
    rec.input(&args.model)?;
    rec.input(&args.data)?;

    // Rows: every clean utterance, then (unless clean-only) a noisy copy of
    // each, projected together so the two clouds share axes.
    let mut rows: Vec<(String, usize, Condition)> = Vec::new();
    let mut embeddings: Vec<Vec<f64>> = Vec::new();
    let mut clean_labeled = Vec::new();
    let mut noisy_labeled = Vec::new();
    for utt in &ds.utterances {
        let e = branch.extractor().embed(utt)?;
        rows.push((utt.id.clone(), utt.speaker, Condition::Clean));
        clean_labeled.push((e.clone(), utt.speaker));
        embeddings.push(e);
    }
    if !args.clean_only {
        for (ui, utt) in ds.utterances.iter().enumerate() {
            let noise_seed = crate::seeds::mix_seed(
                args.seed,
                &[crate::seeds::NOISE_EVAL, kind.index(), 0, ui as u64],
            );
            let noise = gen_noise_for(utt, noise_seed, kind);
            let mixed = crate::data::mix_at_snr(&utt.frames, &noise, args.snr)?;
            let e = branch.extractor().embed_frames(&mixed)?;
            rows.push((
                utt.id.clone(),
                utt.speaker,
                Condition::Noisy {
                    snr_db: args.snr,
                    kind,
                },
            ));
            noisy_labeled.push((e.clone(), utt.speaker));
            embeddings.push(e);
        }
    }

    let projection = project_2d(&embeddings)?;
    let mut csv = String::from("utt_id,speaker,condition,x,y\n");
    for (row, point) in rows.iter().zip(&projection.points) {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            row.0, row.1, row.2, point[0], point[1]
        ));
    }
    std::fs::write(args.out.join("projection.csv"), csv)?;

    let sidecar = PlotSidecar {
        variance_share: projection.variance_share,
        clean: geometry_stats(&clean_labeled)?,
        noisy: if noisy_labeled.is_empty() {
            None
        } else {
            Some(geometry_stats(&noisy_labeled)?)
        },
    };
    let json = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| Error::InvalidArg(format!("sidecar serialization: {e}")))?;
    std::fs::write(args.out.join("geometry.json"), json + "\n")?;

    rec.output(&args.out, "projection.csv")?;
    rec.output(&args.out, "geometry.json")?;
    rec.write(&args.out)?;
    println!(
        "plotdata: {} points, top-2 variance share {:.3} -> {}",
        rows.len(),
        projection.variance_share,
        args.out.display()
    );
    Ok(())
}

fn gen_noise_for(utt: &crate::data::Utterance, seed: u64, kind: NoiseKind) -> crate::linalg::Mat64 {
    crate::data::gen_noise(seed, utt.frames.rows(), utt.frames.cols(), kind)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_stable() {
        assert_eq!(exit_code(&Error::InvalidArg("x".into())), 2);
        assert_eq!(exit_code(&Error::shape("a", "b")), 2);
        assert_eq!(
            exit_code(&Error::Io(std::io::Error::other("x"))),
            3
        );
        assert_eq!(exit_code(&Error::parse("f", "m")), 3);
        assert_eq!(exit_code(&Error::NonFinite("x".into())), 4);
        assert_eq!(exit_code(&Error::ZeroVector), 4);
        assert_eq!(exit_code(&Error::AnchorNotFrozen), 4);
        assert_eq!(exit_code(&Error::Degenerate("x".into())), 5);
        assert_eq!(exit_code(&Error::Infeasible("x".into())), 5);
        assert_eq!(exit_code(&Error::ZeroPower), 5);
    }

    #[test]
    fn snr_list_parsing() {
        assert_eq!(parse_snrs("0,5,10").unwrap(), vec![0.0, 5.0, 10.0]);
        assert!(parse_snrs("0,inf").unwrap()[1].is_infinite());
        assert!(parse_snrs("0,abc").is_err());
    }

    #[test]
    fn kind_list_parsing() {
        assert_eq!(
            parse_kinds("white, babble").unwrap(),
            vec![NoiseKind::White, NoiseKind::Babble]
        );
        assert!(parse_kinds("white,bogus").is_err());
    }

    #[test]
    fn dir_lock_excludes_second_run() {
        let dir = tempfile::tempdir().unwrap();
        let lock = DirLock::acquire(dir.path()).unwrap();
        assert!(DirLock::acquire(dir.path()).is_err());
        drop(lock);
        assert!(DirLock::acquire(dir.path()).is_ok());
    }
}
