use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use avsep_core::audio::{dump_spectrogram, read_wav, write_wav};
use avsep_core::checkpoint::Checkpoint;
use avsep_core::config::TrainConfig;
use avsep_core::data::{generate_synthetic_dataset, Dataset, Split, SyntheticDatasetSpec};
use avsep_core::generative::{SamplerConfig, Variant};
use avsep_core::pipeline::{write_sweep_csv, ConditionSource, Separator, SWEEP_STEPS};
use avsep_core::train::{Trainer, LOG_HEADER};
use avsep_core::visual::read_embeddings;

#[derive(Parser)]
#[command(name = "avsep", version, about = "Visually conditioned generative audio source separation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic multi-category dataset.
    SynthData(SynthArgs),
    /// Train a model on a dataset directory.
    Train(TrainArgs),
    /// Separate sources from a mixture WAV.
    Separate(SeparateArgs),
    /// Score a checkpoint on dataset mixtures.
    Evaluate(EvaluateArgs),
    /// Evaluate across sampler step counts and write the sweep CSV.
    SweepSteps(SweepArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    categories: usize,
    #[arg(long, default_value_t = 4)]
    clips_per_category: usize,
    /// Clips per category placed in the test split.
    #[arg(long, default_value_t = 0)]
    test_per_category: usize,
    /// Clip length in samples.
    #[arg(long, default_value_t = 4286)]
    duration: usize,
    #[arg(long, default_value_t = 0.0001)]
    noise_floor: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// One optional flag per configuration key; flags override `--config`.
#[derive(Args)]
struct ConfigFlags {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    loss: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    beta1: Option<String>,
    #[arg(long)]
    beta2: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    steps: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    geometry: Option<String>,
    #[arg(long)]
    base_channels: Option<String>,
    #[arg(long)]
    fim: Option<String>,
    #[arg(long)]
    tf_attention: Option<String>,
    #[arg(long)]
    time_attention: Option<String>,
    #[arg(long)]
    frames: Option<String>,
    #[arg(long)]
    diffusion_steps: Option<String>,
    #[arg(long)]
    schedule: Option<String>,
    #[arg(long)]
    encoder_seed: Option<String>,
    #[arg(long)]
    checkpoint_every: Option<String>,
}

impl ConfigFlags {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        if let Some(p) = &self.config {
            cfg.apply_file(p)?;
        }
        let flags = [
            ("variant", &self.variant),
            ("loss", &self.loss),
            ("lr", &self.lr),
            ("beta1", &self.beta1),
            ("beta2", &self.beta2),
            ("batch_size", &self.batch_size),
            ("steps", &self.steps),
            ("seed", &self.seed),
            ("geometry", &self.geometry),
            ("base_channels", &self.base_channels),
            ("fim", &self.fim),
            ("tf_attention", &self.tf_attention),
            ("time_attention", &self.time_attention),
            ("frames", &self.frames),
            ("diffusion_steps", &self.diffusion_steps),
            ("schedule", &self.schedule),
            ("encoder_seed", &self.encoder_seed),
            ("checkpoint_every", &self.checkpoint_every),
        ];
        debug_assert_eq!(flags.len(), TrainConfig::KEYS.len());
        for (k, v) in flags {
            if let Some(v) = v {
                cfg.set(k, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Output directory for checkpoints and the loss log.
    #[arg(long)]
    out: PathBuf,
    /// Continue from this checkpoint; its stored configuration is used.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[command(flatten)]
    cfg: ConfigFlags,
}

#[derive(Args)]
struct SamplerFlags {
    /// Sampler steps (default 15 for DDPM, 2 for FM).
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, default_value_t = 0.002)]
    silence_threshold: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    no_guidance: bool,
    /// Keep raw DDIM x0 estimates instead of clipping them to [0, 1].
    #[arg(long)]
    no_clip_denoised: bool,
}

impl SamplerFlags {
    fn config(&self, variant: Variant) -> SamplerConfig {
        let mut s = SamplerConfig::new(variant);
        if let Some(n) = self.steps {
            s.steps = n;
        }
        s.silence_threshold = self.silence_threshold;
        s.seed = self.seed;
        s.guidance = !self.no_guidance;
        s.clip_denoised = !self.no_clip_denoised;
        s
    }
}

#[derive(Args)]
struct SeparateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    mixture: PathBuf,
    /// Output directory for `source-<k>.wav`.
    #[arg(long)]
    out: PathBuf,
    /// Category id of a source to extract (repeatable).
    #[arg(long)]
    category: Vec<usize>,
    /// Frame-embedding file of a source to extract (repeatable).
    #[arg(long)]
    condition_embedding: Vec<PathBuf>,
    /// Also write the predicted scaled spectrograms.
    #[arg(long)]
    dump_spectrograms: bool,
    #[command(flatten)]
    sampler: SamplerFlags,
}

#[derive(Args)]
struct EvalData {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// train, test or all.
    #[arg(long, default_value = "all")]
    split: String,
    /// Number of mixtures formed from clip pairs.
    #[arg(long, default_value_t = 12)]
    mixtures: usize,
    #[arg(long, default_value_t = 0)]
    pair_seed: u64,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: EvalData,
    /// Per-row metrics CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run the step sweep instead and write its CSV to `--out`.
    #[arg(long)]
    sweep_steps: bool,
    #[command(flatten)]
    sampler: SamplerFlags,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    data: EvalData,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated step counts.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<usize>>,
    #[command(flatten)]
    sampler: SamplerFlags,
}

fn synth(a: &SynthArgs) -> Result<()> {
    let mut spec = SyntheticDatasetSpec::new(a.categories, a.clips_per_category, a.duration, a.seed)?;
    spec.test_per_category = a.test_per_category;
    spec.noise_floor = a.noise_floor;
    let meta = generate_synthetic_dataset(&spec, &a.out)?;
    println!("wrote {} clips to {}", meta.len(), a.out.display());
    Ok(())
}

fn train(a: &TrainArgs) -> Result<()> {
    fs::create_dir_all(&a.out)?;
    let (mut trainer, target) = match &a.resume {
        Some(p) => {
            let ckpt = Checkpoint::load(p).with_context(|| format!("loading {}", p.display()))?;
            let audio = ckpt.header.audio.clone();
            let data = Dataset::load(&a.data, Some(Split::Train), audio.sample_rate, audio.segment_len, ckpt.header.train.seed)?;
            let steps = ckpt.header.train.steps;
            (Trainer::resume(&ckpt, data)?, steps)
        }
        None => {
            let cfg = a.cfg.resolve()?;
            let audio = cfg.audio();
            let data = Dataset::load(&a.data, Some(Split::Train), audio.sample_rate, audio.segment_len, cfg.seed)?;
            let steps = cfg.steps;
            (Trainer::new(cfg, data)?, steps)
        }
    };
    let log_path = a.out.join("loss.csv");
    let fresh = trainer.step == 0 || !log_path.exists();
    let mut log = BufWriter::new(fs::OpenOptions::new().create(true).append(!fresh).write(true).truncate(fresh).open(&log_path)?);
    if fresh {
        writeln!(log, "{LOG_HEADER}")?;
    }
    let remaining = target.saturating_sub(trainer.step);
    println!(
        "training {} for {remaining} steps on {} clips ({} parameters)",
        trainer.cfg.variant,
        trainer.data.len(),
        trainer.model.params.numel()
    );
    let stats = trainer.run(remaining, &mut log, Some(&a.out))?;
    log.flush()?;
    let out = a.out.join("final.ckpt");
    trainer.checkpoint().save(&out)?;
    if let Some(last) = stats.last() {
        println!("step {} loss {:.5}", last.step, last.loss);
    }
    println!("checkpoint {}", out.display());
    Ok(())
}

fn separate(a: &SeparateArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let sep = Separator::from_checkpoint(&ckpt)?;
    let mut conds: Vec<ConditionSource> = a.category.iter().map(|&c| ConditionSource::Category(c)).collect();
    for p in &a.condition_embedding {
        let (emb, _) = read_embeddings(p).with_context(|| format!("reading {}", p.display()))?;
        conds.push(ConditionSource::Embeddings(emb));
    }
    if conds.is_empty() {
        bail!("give at least one --category or --condition-embedding");
    }
    let mixture = read_wav(&a.mixture, sep.audio.sample_rate)?;
    let out = sep.separate(&mixture, &conds, &a.sampler.config(sep.variant))?;
    fs::create_dir_all(&a.out)?;
    for (k, r) in out.iter().enumerate() {
        let p = a.out.join(format!("source-{k}.wav"));
        write_wav(&p, &r.waveform)?;
        if a.dump_spectrograms {
            dump_spectrogram(&a.out.join(format!("source-{k}.spec")), &r.predicted_magnitude, "predicted")?;
        }
        println!("{}", p.display());
    }
    Ok(())
}

fn load_eval(d: &EvalData) -> Result<(Separator, Dataset, Vec<(usize, usize)>)> {
    let ckpt = Checkpoint::load(&d.checkpoint)?;
    let sep = Separator::from_checkpoint(&ckpt)?;
    let split = match d.split.as_str() {
        "train" => Some(Split::Train),
        "test" => Some(Split::Test),
        "all" => None,
        s => bail!("unknown split {s} (expected train, test or all)"),
    };
    let data = Dataset::load(&d.data, split, sep.audio.sample_rate, sep.audio.segment_len, d.pair_seed)?;
    let pairs = data.eval_pairs(d.mixtures, d.pair_seed)?;
    Ok((sep, data, pairs))
}

fn sweep(d: &EvalData, sampler: &SamplerFlags, grid: &[usize], out: &Path) -> Result<()> {
    let (sep, data, pairs) = load_eval(d)?;
    let rows = sep.sweep(&data, &pairs, &sampler.config(sep.variant), grid)?;
    write_sweep_csv(&rows, fs::File::create(out)?)?;
    for r in &rows {
        println!("{:>3} steps  SDR {:7.2}  SIR {:7.2}  SAR {:7.2}", r.steps, r.sdr, r.sir, r.sar);
    }
    Ok(())
}

fn evaluate(a: &EvaluateArgs) -> Result<ExitCode> {
    if a.sweep_steps {
        let out = a.out.as_deref().context("--sweep-steps needs --out")?;
        sweep(&a.data, &a.sampler, &SWEEP_STEPS, out)?;
        return Ok(ExitCode::SUCCESS);
    }
    let (sep, data, pairs) = load_eval(&a.data)?;
    let report = sep.evaluate(&data, &pairs, &a.sampler.config(sep.variant), &sep.variant.to_string());
    if let Some(p) = &a.out {
        report.write_csv(fs::File::create(p)?)?;
    }
    print!("{}", report.table());
    Ok(if report.errors.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match &cli.command {
        Command::SynthData(a) => synth(a)?,
        Command::Train(a) => train(a)?,
        Command::Separate(a) => separate(a)?,
        Command::Evaluate(a) => return evaluate(a),
        Command::SweepSteps(a) => sweep(&a.data, &a.sampler, a.grid.as_deref().unwrap_or(&SWEEP_STEPS), &a.out)?,
    }
    Ok(ExitCode::SUCCESS)
}
