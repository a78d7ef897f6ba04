//! Inference path: mixture waveform and conditions in, separated waveforms out.

use std::io::Write;

use avsep_autograd::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{istft, scale_magnitude, stft, unscale_magnitude, AudioConfig, ScaledSpectrogram, Waveform};
use crate::checkpoint::Checkpoint;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::generative::{make_schedule, sample, ConditionedModel, NoiseSchedule, SamplerConfig, ScheduleKind, Variant};
use crate::grid::Grid;
use crate::metrics::{bss_eval, MetricReport};
use crate::model::{Condition, SeparationModel};
use crate::train::{grid_tensor, stack, ENCODER_CATEGORIES};
use crate::visual::{embeddings_tensor, encode_frames, CategoryEncoder, VisualClip};

/// Step grid of the sampler sweep.
pub const SWEEP_STEPS: [usize; 9] = [1, 2, 3, 4, 5, 10, 15, 20, 25];

/// Where the visual condition of one source comes from.
#[derive(Clone, Debug)]
pub enum ConditionSource {
    Category(usize),
    Frames(VisualClip),
    /// Per-frame embeddings, e.g. read from an embedding file.
    Embeddings(Vec<Vec<f64>>),
    /// An already aggregated condition vector.
    Vector(Vec<f64>),
}

#[derive(Clone, Debug)]
pub struct SeparationResult {
    pub predicted_magnitude: ScaledSpectrogram,
    pub waveform: Waveform,
}

pub struct Separator {
    pub model: SeparationModel<f32>,
    pub variant: Variant,
    pub audio: AudioConfig,
    pub schedule: Option<NoiseSchedule>,
    pub encoder: CategoryEncoder,
    pub frames: usize,
}

impl Separator {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let h = &ckpt.header;
        let mut model = SeparationModel::new(h.model.clone(), &mut ChaCha8Rng::seed_from_u64(0))?;
        model.params.load_from(&ckpt.params)?;
        let schedule = match (h.variant, h.schedule.as_ref()) {
            (Variant::Ddpm, Some(s)) => Some(make_schedule(s.steps, s.kind)?),
            (Variant::Ddpm, None) => return Err(Error::Format("DDPM checkpoint without a noise schedule".into())),
            (Variant::Fm, _) => None,
        };
        let encoder = CategoryEncoder::new(ENCODER_CATEGORIES, model.cond_dim(), h.train.encoder_seed);
        Ok(Self {
            model,
            variant: h.variant,
            audio: h.audio.clone(),
            schedule,
            encoder,
            frames: h.train.frames,
        })
    }

    /// `(1, C)` condition vector for one source.
    pub fn condition_vector(&self, src: &ConditionSource) -> Result<Tensor<f32>> {
        let c = self.model.cond_dim();
        let frames = match src {
            ConditionSource::Vector(v) => {
                if v.len() != c {
                    return Err(Error::invalid(format!("condition vector has {} values, model expects {c}", v.len())));
                }
                return Ok(Tensor::from_vec(&[1, c], v.iter().map(|&x| x as f32).collect())?);
            }
            ConditionSource::Category(k) => {
                if *k >= ENCODER_CATEGORIES {
                    return Err(Error::invalid(format!("category {k} out of range 0..{ENCODER_CATEGORIES}")));
                }
                encode_frames(&VisualClip::category(*k, self.frames)?, &self.encoder)?
            }
            ConditionSource::Frames(clip) => encode_frames(clip, &self.encoder)?,
            ConditionSource::Embeddings(e) => e.clone(),
        };
        if let Some(row) = frames.iter().find(|r| r.len() != c) {
            return Err(Error::invalid(format!("frame embedding has {} values, model expects {c}", row.len())));
        }
        let t = embeddings_tensor::<f32>(&frames)?;
        self.model.pooled_condition(&Condition::Frames(vec![t]))
    }

    /// Separates one source per condition from `mixture`, sampling all of
    /// them as one batch.
    pub fn separate(
        &self,
        mixture: &Waveform,
        conditions: &[ConditionSource],
        sampler: &SamplerConfig,
    ) -> Result<Vec<SeparationResult>> {
        if sampler.variant != self.variant {
            return Err(Error::invalid(format!(
                "sampler variant {} does not match checkpoint variant {}",
                sampler.variant, self.variant
            )));
        }
        if conditions.is_empty() {
            return Err(Error::invalid("no conditions given"));
        }
        let spec = stft(mixture, &self.audio)?;
        let native = spec.magnitude.shape();
        let x_mix = scale_magnitude(&spec.magnitude, &self.audio)?;
        let n = conditions.len();
        let mix_t = stack(&vec![grid_tensor(&x_mix.grid); n])?;
        let vectors: Vec<Tensor<f32>> = conditions
            .iter()
            .map(|c| self.condition_vector(c))
            .collect::<Result<_>>()?;
        let cond = Condition::Vectors(Tensor::stack_outer(&vectors)?.reshape(&[n, self.model.cond_dim()])?);
        let denoiser = ConditionedModel::new(&self.model, self.variant, mix_t.clone(), &cond)?;
        // The flow path ignores the schedule.
        let dummy;
        let sched = match &self.schedule {
            Some(s) => s,
            None => {
                dummy = make_schedule(1, ScheduleKind::default())?;
                &dummy
            }
        };
        let out = sample(&denoiser, &mix_t, sched, sampler)?;
        let (h, w) = (self.audio.grid_rows, self.audio.grid_cols);
        let mut results = Vec::with_capacity(n);
        for i in 0..n {
            let item = out.data()[i * h * w..(i + 1) * h * w].iter().map(|&v| v as f64).collect();
            let pred = ScaledSpectrogram {
                grid: Grid::from_vec(h, w, item)?,
                sigma: self.audio.sigma,
            };
            let mag = unscale_magnitude(&pred, native);
            let waveform = istft(&mag, &spec.phase, &self.audio)?;
            results.push(SeparationResult {
                predicted_magnitude: pred,
                waveform,
            });
        }
        Ok(results)
    }

    /// Separates both sources of each pair and scores them against the clean
    /// clips, alongside the mixture-as-estimate baseline.
    pub fn evaluate(&self, data: &Dataset, pairs: &[(usize, usize)], sampler: &SamplerConfig, method: &str) -> MetricReport {
        let mut report = MetricReport::default();
        for &(i, j) in pairs {
            let name = format!("{}+{}", data.clips[i].meta.clip, data.clips[j].meta.clip);
            if let Err(e) = self.evaluate_pair(data, i, j, sampler, method, &name, &mut report) {
                report.errors.push((name, e.to_string()));
            }
        }
        report
    }

    #[allow(clippy::too_many_arguments)]
    fn evaluate_pair(
        &self,
        data: &Dataset,
        i: usize,
        j: usize,
        sampler: &SamplerConfig,
        method: &str,
        name: &str,
        report: &mut MetricReport,
    ) -> Result<()> {
        let (a, b) = (&data.clips[i], &data.clips[j]);
        let mixture = a.audio.add(&b.audio)?;
        let conds = [ConditionSource::Category(a.meta.category), ConditionSource::Category(b.meta.category)];
        let out = self.separate(&mixture, &conds, sampler)?;
        let len = out[0].waveform.len().min(mixture.len());
        let refs = [&a.audio.samples()[..len], &b.audio.samples()[..len]];
        let mut rows = Vec::new();
        for (k, r) in out.iter().enumerate() {
            rows.push((k, method, bss_eval(&r.waveform.samples()[..len], &refs, k)?));
            rows.push((k, "mixture", bss_eval(&mixture.samples()[..len], &refs, k)?));
        }
        for (k, m, v) in rows {
            report.push(name, k, m, v);
        }
        Ok(())
    }

    /// Mean metrics over `pairs` for every step count of `steps`.
    pub fn sweep(&self, data: &Dataset, pairs: &[(usize, usize)], base: &SamplerConfig, steps: &[usize]) -> Result<Vec<SweepRow>> {
        let mut rows = Vec::with_capacity(steps.len());
        for &n in steps {
            let cfg = SamplerConfig { steps: n, ..base.clone() };
            let report = self.evaluate(data, pairs, &cfg, "model");
            if let Some((mix, err)) = report.errors.first() {
                return Err(Error::invalid(format!("sweep at {n} steps failed on {mix}: {err}")));
            }
            let s = report.summary("model").ok_or_else(|| Error::invalid("sweep produced no rows"))?;
            rows.push(SweepRow {
                variant: self.variant.to_string(),
                steps: n,
                sdr: s.mean.sdr,
                sir: s.mean.sir,
                sar: s.mean.sar,
            });
        }
        Ok(rows)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub variant: String,
    pub steps: usize,
    pub sdr: f64,
    pub sir: f64,
    pub sar: f64,
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}
