//! Mix-and-separate training loop for either generative variant.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use avsep_autograd::{Adam, AdamConfig, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::audio::{mix_and_separate, AudioConfig, MixturePair};
use crate::checkpoint::{Checkpoint, CheckpointHeader, ScheduleInfo, FORMAT_VERSION};
use crate::config::TrainConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::generative::{
    loss_with_draws, make_schedule, sample_draws, Draws, NoiseSchedule, ScheduleKind, TrainingBatch, Variant,
};
use crate::grid::Grid;
use crate::model::{Condition, SeparationModel};
use crate::visual::{embeddings_tensor, encode_frames, CategoryEncoder, VisualClip};

/// `(1, 1, H, W)` tensor from a grid.
pub fn grid_tensor(g: &Grid) -> Tensor<f32> {
    Tensor::from_vec(&[1, 1, g.rows(), g.cols()], g.data().iter().map(|&v| v as f32).collect())
        .expect("grid size matches")
}

pub fn stack(parts: &[Tensor<f32>]) -> Result<Tensor<f32>> {
    Ok(Tensor::stack_outer(parts)?)
}

/// Frame embeddings `(K, C)` for a clip of category `category`.
pub fn category_frames(encoder: &CategoryEncoder, category: usize, frames: usize) -> Result<Tensor<f32>> {
    let clip = VisualClip::category(category, frames)?;
    embeddings_tensor(&encode_frames(&clip, encoder)?)
}

pub fn schedule_for(variant: Variant, steps: usize, kind: ScheduleKind) -> Result<(NoiseSchedule, Option<ScheduleInfo>)> {
    let s = make_schedule(steps, kind)?;
    let info = (variant == Variant::Ddpm).then_some(ScheduleInfo { steps, kind });
    Ok((s, info))
}

/// Losses of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub step: u64,
    pub loss: f64,
    pub loss_1: f64,
    pub loss_2: f64,
}

/// Everything sampled for one step, kept so tests can re-evaluate it.
#[derive(Clone, Debug)]
pub struct StepBatch {
    pub sources: [TrainingBatch<f32>; 2],
    pub draws: [Draws<f32>; 2],
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub audio: AudioConfig,
    pub model: SeparationModel<f32>,
    pub adam: Adam<f32>,
    pub rng: ChaCha8Rng,
    pub step: u64,
    pub schedule: NoiseSchedule,
    pub encoder: CategoryEncoder,
    pub data: Dataset,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, data: Dataset) -> Result<Self> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(Error::invalid("training dataset is empty"));
        }
        let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let model = SeparationModel::new(cfg.model(), &mut init_rng)?;
        let adam = Adam::new(
            AdamConfig {
                lr: cfg.lr,
                beta1: cfg.beta1,
                beta2: cfg.beta2,
                eps: 1e-8,
            },
            model.params.tensors(),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        Self::assemble(cfg, data, model, adam, rng, 0)
    }

    fn assemble(
        cfg: TrainConfig,
        data: Dataset,
        model: SeparationModel<f32>,
        adam: Adam<f32>,
        rng: ChaCha8Rng,
        step: u64,
    ) -> Result<Self> {
        if let Some(c) = data.clips.iter().find(|c| c.meta.category >= ENCODER_CATEGORIES) {
            return Err(Error::invalid(format!(
                "category {} out of range 0..{ENCODER_CATEGORIES}",
                c.meta.category
            )));
        }
        let encoder = CategoryEncoder::new(ENCODER_CATEGORIES, model.cond_dim(), cfg.encoder_seed);
        let (schedule, _) = schedule_for(cfg.variant, cfg.diffusion_steps, cfg.schedule)?;
        Ok(Self {
            audio: cfg.audio(),
            cfg,
            model,
            adam,
            rng,
            step,
            schedule,
            encoder,
            data,
        })
    }

    /// Restores model, optimizer, RNG and step count.
    pub fn resume(ckpt: &Checkpoint, data: Dataset) -> Result<Self> {
        let cfg = ckpt.header.train.clone();
        let mut model = SeparationModel::new(ckpt.header.model.clone(), &mut ChaCha8Rng::seed_from_u64(0))?;
        model.params.load_from(&ckpt.params)?;
        let mut adam = Adam::new(
            AdamConfig {
                lr: cfg.lr,
                beta1: cfg.beta1,
                beta2: cfg.beta2,
                eps: 1e-8,
            },
            model.params.tensors(),
        );
        adam.state = ckpt.adam.clone();
        Self::assemble(cfg, data, model, adam, ckpt.header.rng.clone(), ckpt.header.step)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let (_, schedule) = schedule_for(self.cfg.variant, self.cfg.diffusion_steps, self.cfg.schedule).expect("validated");
        Checkpoint {
            header: CheckpointHeader {
                format_version: FORMAT_VERSION,
                variant: self.cfg.variant,
                model: self.model.config.clone(),
                audio: self.audio.clone(),
                schedule,
                train: self.cfg.clone(),
                step: self.step,
                rng: self.rng.clone(),
                adam_step: self.adam.state.step,
                tensors: Vec::new(),
            },
            params: self.model.params.clone(),
            adam: self.adam.state.clone(),
        }
    }

    pub fn mixture(&self, i: usize, j: usize) -> Result<MixturePair> {
        mix_and_separate(&self.data.clips[i].audio, &self.data.clips[j].audio, &self.audio)
    }

    pub fn frames_for(&self, clip: usize) -> Result<Tensor<f32>> {
        category_frames(&self.encoder, self.data.clips[clip].meta.category, self.cfg.frames)
    }

    /// Samples the pairs and noise of the next step.
    pub fn sample_batch(&mut self) -> Result<StepBatch> {
        let n = self.cfg.batch_size;
        let (mut t1, mut t2, mut mix) = (Vec::new(), Vec::new(), Vec::new());
        let (mut c1, mut c2) = (Vec::new(), Vec::new());
        for _ in 0..n {
            let (i, j) = self.data.sample_pair(&mut self.rng)?;
            let p = self.mixture(i, j)?;
            t1.push(grid_tensor(&p.x_1.grid));
            t2.push(grid_tensor(&p.x_2.grid));
            mix.push(grid_tensor(&p.x_mix.grid));
            c1.push(self.frames_for(i)?);
            c2.push(self.frames_for(j)?);
        }
        let x_mix = stack(&mix)?;
        let b1 = TrainingBatch {
            x_target: stack(&t1)?,
            x_mix: x_mix.clone(),
            cond: Condition::Frames(c1),
        };
        let b2 = TrainingBatch {
            x_target: stack(&t2)?,
            x_mix,
            cond: Condition::Frames(c2),
        };
        let shape = b1.x_target.shape().to_vec();
        let d1 = sample_draws(self.cfg.variant, &shape, &self.schedule, &mut self.rng);
        let d2 = sample_draws(self.cfg.variant, &shape, &self.schedule, &mut self.rng);
        Ok(StepBatch {
            sources: [b1, b2],
            draws: [d1, d2],
        })
    }

    /// One optimizer step on the summed loss of both sources, computed as
    /// two forward/backward passes.
    pub fn train_step(&mut self) -> Result<StepStats> {
        let batch = self.sample_batch()?;
        self.apply_batch(&batch)
    }

    pub fn apply_batch(&mut self, batch: &StepBatch) -> Result<StepStats> {
        let mut total: Vec<Option<Tensor<f32>>> = vec![None; self.model.params.len()];
        let mut losses = [0.0; 2];
        for k in 0..2 {
            let out = loss_with_draws(
                &self.model,
                self.cfg.variant,
                &batch.sources[k],
                &batch.draws[k],
                &self.schedule,
                self.cfg.loss,
                true,
            )?;
            losses[k] = out.loss;
            for (acc, g) in total.iter_mut().zip(out.grads.unwrap_or_default()) {
                match (acc.as_mut(), g) {
                    (Some(a), Some(g)) => a.add_assign(&g)?,
                    (None, Some(g)) => *acc = Some(g),
                    _ => {}
                }
            }
        }
        self.adam.step(self.model.params.tensors_mut(), &total)?;
        self.step += 1;
        Ok(StepStats {
            step: self.step,
            loss: losses[0] + losses[1],
            loss_1: losses[0],
            loss_2: losses[1],
        })
    }

    /// Loss on a fixed batch without updating anything.
    pub fn evaluate_batch(&self, batch: &StepBatch) -> Result<f64> {
        let mut sum = 0.0;
        for k in 0..2 {
            sum += loss_with_draws(
                &self.model,
                self.cfg.variant,
                &batch.sources[k],
                &batch.draws[k],
                &self.schedule,
                self.cfg.loss,
                false,
            )?
            .loss;
        }
        Ok(sum)
    }

    /// Runs `steps` steps, logging `step,loss,lr,wall_time` rows and writing
    /// periodic checkpoints into `out_dir` when given.
    pub fn run<W: Write>(&mut self, steps: u64, log: &mut W, out_dir: Option<&Path>) -> Result<Vec<StepStats>> {
        let start = Instant::now();
        let mut stats = Vec::with_capacity(steps as usize);
        for _ in 0..steps {
            let s = self.train_step()?;
            writeln!(log, "{},{},{},{:.3}", s.step, s.loss, self.cfg.lr, start.elapsed().as_secs_f64())?;
            if let (Some(dir), true) = (out_dir, self.cfg.checkpoint_every > 0) {
                if s.step % self.cfg.checkpoint_every == 0 {
                    self.checkpoint().save(&dir.join(format!("step-{:06}.ckpt", s.step)))?;
                }
            }
            stats.push(s);
        }
        Ok(stats)
    }
}

/// Rows of the category projection; fixed so inference can rebuild it from
/// the seed alone.
pub const ENCODER_CATEGORIES: usize = 16;

pub const LOG_HEADER: &str = "step,loss,lr,wall_time";
