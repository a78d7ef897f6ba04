//! DDPM and flow-matching objectives and samplers over the scaled `[0, 1]`
//! spectrogram domain, plus silence-mask guidance shared by both.

use avsep_autograd::{Real, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Condition, SeparationModel};
use crate::nn::{ParamStore, Session};

/// FM times are stretched by this factor before the sinusoidal encoding so
/// both variants cover the same frequency range.
pub const FM_TIME_SCALE: f64 = 1000.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Ddpm,
    Fm,
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ddpm" | "ddpm_ddim" => Ok(Self::Ddpm),
            "fm" | "fm_euler" => Ok(Self::Fm),
            _ => Err(Error::invalid(format!("unknown variant {s} (expected ddpm or fm)"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Ddpm => "ddpm",
            Self::Fm => "fm",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    L1,
    L2,
}

impl std::str::FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" => Ok(Self::L1),
            "l2" => Ok(Self::L2),
            _ => Err(Error::invalid(format!("unknown loss {s} (expected l1 or l2)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ScheduleKind {
    Linear { start: f64, end: f64 },
    /// `alpha_bar` follows a squared cosine with a small time offset; betas
    /// are capped at 0.999.
    Cosine { offset: f64 },
}

impl ScheduleKind {
    pub fn cosine() -> Self {
        Self::Cosine { offset: 0.008 }
    }
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::default()),
            "cosine" => Ok(Self::cosine()),
            _ => Err(Error::invalid(format!("unknown schedule {s} (expected linear or cosine)"))),
        }
    }
}

impl Default for ScheduleKind {
    fn default() -> Self {
        Self::Linear {
            start: 1e-4,
            end: 0.02,
        }
    }
}

/// Variance schedule tables, stored 0-based for steps `1..=T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    beta_tilde: Vec<f64>,
}

pub fn make_schedule(steps: usize, kind: ScheduleKind) -> Result<NoiseSchedule> {
    if steps < 1 {
        return Err(Error::invalid("schedule needs at least one step"));
    }
    let betas = match kind {
        ScheduleKind::Linear { start, .. } if steps == 1 => vec![start],
        ScheduleKind::Linear { start, end } => (0..steps)
            .map(|i| start + (end - start) * i as f64 / (steps - 1) as f64)
            .collect(),
        ScheduleKind::Cosine { offset } => {
            let f = |t: usize| (((t as f64 / steps as f64) + offset) / (1.0 + offset) * std::f64::consts::FRAC_PI_2).cos().powi(2);
            (1..=steps).map(|t| (1.0 - f(t) / f(t - 1)).clamp(1e-8, 0.999)).collect()
        }
    };
    NoiseSchedule::from_betas(betas)
}

impl NoiseSchedule {
    pub fn from_betas(beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() || beta.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(Error::invalid("every beta must lie in (0, 1)"));
        }
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(beta.len());
        let mut acc = 1.0;
        for a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        let beta_tilde = (0..beta.len())
            .map(|i| {
                let prev = if i == 0 { 1.0 } else { alpha_bar[i - 1] };
                (1.0 - prev) / (1.0 - alpha_bar[i]) * beta[i]
            })
            .collect();
        Ok(Self {
            beta,
            alpha,
            alpha_bar,
            beta_tilde,
        })
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    fn check(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.steps() {
            return Err(Error::invalid(format!(
                "timestep {t} outside 1..={}",
                self.steps()
            )));
        }
        Ok(t - 1)
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        Ok(self.beta[self.check(t)?])
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        Ok(self.alpha[self.check(t)?])
    }

    /// Cumulative product up to `t`; `alpha_bar(0)` is 1 by convention.
    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        if t == 0 {
            return Ok(1.0);
        }
        Ok(self.alpha_bar[self.check(t)?])
    }

    pub fn beta_tilde(&self, t: usize) -> Result<f64> {
        Ok(self.beta_tilde[self.check(t)?])
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn beta_tildes(&self) -> &[f64] {
        &self.beta_tilde
    }
}

pub fn gaussian<T: Real, R: Rng>(shape: &[usize], rng: &mut R) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::lit(rng.sample(StandardNormal)))
}

/// `sqrt(ab) * x0 + sqrt(1 - ab) * eps`.
pub fn forward_with_alpha_bar<T: Real>(x0: &Tensor<T>, alpha_bar: f64, eps: &Tensor<T>) -> Result<Tensor<T>> {
    let (a, b) = (T::lit(alpha_bar.sqrt()), T::lit((1.0 - alpha_bar).sqrt()));
    Ok(x0.zip_map(eps, |x, e| a * x + b * e)?)
}

pub fn ddpm_forward_sample<T: Real>(
    x0: &Tensor<T>,
    t: usize,
    eps: &Tensor<T>,
    sched: &NoiseSchedule,
) -> Result<Tensor<T>> {
    forward_with_alpha_bar(x0, sched.alpha_bar(t)?, eps)
}

/// `t * x1 + (1 - t) * x0` for `t` in `[0, 1]`.
pub fn fm_path_sample<T: Real>(x0_noise: &Tensor<T>, x1_target: &Tensor<T>, t: f64) -> Result<Tensor<T>> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("flow time {t} outside [0, 1]")));
    }
    // Exact endpoints, including signed zeros.
    if t == 0.0 {
        return Ok(x0_noise.clone());
    }
    if t == 1.0 {
        return Ok(x1_target.clone());
    }
    let (a, b) = (T::lit(t), T::lit(1.0 - t));
    Ok(x0_noise.zip_map(x1_target, |x0, x1| a * x1 + b * x0)?)
}

/// Value fed to the sinusoidal time encoding.
pub fn network_time(variant: Variant, t: f64) -> f64 {
    match variant {
        Variant::Ddpm => t,
        Variant::Fm => t * FM_TIME_SCALE,
    }
}

/// Anything that can record a prediction on a tape: the real model or an
/// oracle stub in tests.
pub trait Network<T: Real> {
    fn params(&self) -> &ParamStore<T>;
    /// `time` holds the raw variant time per item (step index or flow time).
    fn forward(
        &self,
        s: &mut Session<T>,
        variant: Variant,
        x_t: &Tensor<T>,
        x_mix: &Tensor<T>,
        time: &[f64],
        cond: &Condition<T>,
    ) -> Result<Var>;
}

impl<T: Real> Network<T> for SeparationModel<T> {
    fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    fn forward(
        &self,
        s: &mut Session<T>,
        variant: Variant,
        x_t: &Tensor<T>,
        x_mix: &Tensor<T>,
        time: &[f64],
        cond: &Condition<T>,
    ) -> Result<Var> {
        let nt: Vec<f64> = time.iter().map(|&t| network_time(variant, t)).collect();
        SeparationModel::forward(self, s, x_t, x_mix, &nt, cond)
    }
}

/// Clean targets, mixtures and conditions for `N` items, grids `(N, 1, H, W)`.
#[derive(Clone, Debug)]
pub struct TrainingBatch<T> {
    pub x_target: Tensor<T>,
    pub x_mix: Tensor<T>,
    pub cond: Condition<T>,
}

impl<T: Real> TrainingBatch<T> {
    pub fn validate(&self) -> Result<()> {
        let s = self.x_target.shape();
        if s.len() != 4 || s[1] != 1 || self.x_mix.shape() != s || self.cond.len() != s[0] {
            return Err(Error::invalid(format!(
                "batch misaligned: target {:?}, mixture {:?}, {} conditions",
                s,
                self.x_mix.shape(),
                self.cond.len()
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.x_target.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Random quantities of one loss evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct Draws<T> {
    /// Raw variant time per item.
    pub time: Vec<f64>,
    /// DDPM noise `eps`, or the FM source sample `x0`.
    pub noise: Tensor<T>,
}

pub fn sample_draws<T: Real, R: Rng>(
    variant: Variant,
    shape: &[usize],
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Draws<T> {
    let n = shape[0];
    let time = match variant {
        Variant::Ddpm => (0..n).map(|_| rng.gen_range(1..=sched.steps()) as f64).collect(),
        Variant::Fm => (0..n).map(|_| rng.gen_range(0.0..=1.0)).collect(),
    };
    Draws {
        time,
        noise: gaussian(shape, rng),
    }
}

/// Network input and regression target for the given draws.
pub fn loss_inputs<T: Real>(
    variant: Variant,
    x_target: &Tensor<T>,
    draws: &Draws<T>,
    sched: &NoiseSchedule,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let shape = x_target.shape().to_vec();
    let item = shape[1..].iter().product::<usize>();
    if draws.noise.shape() != shape.as_slice() || draws.time.len() != shape[0] {
        return Err(Error::invalid("draws do not match the batch shape"));
    }
    let mut x_t = Vec::with_capacity(x_target.len());
    for (i, &t) in draws.time.iter().enumerate() {
        let x1 = Tensor::from_vec(&shape[1..], x_target.data()[i * item..(i + 1) * item].to_vec())?;
        let nz = Tensor::from_vec(&shape[1..], draws.noise.data()[i * item..(i + 1) * item].to_vec())?;
        let xi = match variant {
            Variant::Ddpm => ddpm_forward_sample(&x1, t as usize, &nz, sched)?,
            Variant::Fm => fm_path_sample(&nz, &x1, t)?,
        };
        x_t.extend(xi.into_vec());
    }
    let target = match variant {
        Variant::Ddpm => draws.noise.clone(),
        Variant::Fm => x_target.zip_map(&draws.noise, |x1, x0| x1 - x0)?,
    };
    Ok((Tensor::from_vec(&shape, x_t)?, target))
}

#[derive(Clone, Debug)]
pub struct LossOutput<T> {
    pub loss: f64,
    /// Per-parameter gradients when requested.
    pub grads: Option<Vec<Option<Tensor<T>>>>,
}

/// Loss for explicit draws; differentiates when `with_grads`.
#[allow(clippy::too_many_arguments)]
pub fn loss_with_draws<T: Real, N: Network<T> + ?Sized>(
    net: &N,
    variant: Variant,
    batch: &TrainingBatch<T>,
    draws: &Draws<T>,
    sched: &NoiseSchedule,
    kind: LossKind,
    with_grads: bool,
) -> Result<LossOutput<T>> {
    batch.validate()?;
    let (x_t, target) = loss_inputs(variant, &batch.x_target, draws, sched)?;
    let mut s = Session::new(net.params(), with_grads);
    let pred = net.forward(&mut s, variant, &x_t, &batch.x_mix, &draws.time, &batch.cond)?;
    let tgt = s.input(target);
    let loss = match kind {
        LossKind::L1 => s.g.l1_loss(pred, tgt)?,
        LossKind::L2 => s.g.l2_loss(pred, tgt)?,
    };
    let value = s.value(loss).data()[0].as_f64();
    let grads = if with_grads && s.g.requires_grad(loss) {
        Some(s.param_grads(loss)?)
    } else if with_grads {
        Some(vec![None; net.params().len()])
    } else {
        None
    };
    Ok(LossOutput { loss: value, grads })
}

/// Samples `t` and noise, then evaluates the variant's objective.
pub fn variant_loss<T: Real, N: Network<T> + ?Sized, R: Rng>(
    net: &N,
    variant: Variant,
    batch: &TrainingBatch<T>,
    sched: &NoiseSchedule,
    kind: LossKind,
    rng: &mut R,
    with_grads: bool,
) -> Result<LossOutput<T>> {
    batch.validate()?;
    let draws = sample_draws(variant, batch.x_target.shape(), sched, rng);
    loss_with_draws(net, variant, batch, &draws, sched, kind, with_grads)
}

/// Noise-prediction objective `mean |eps - eps_theta(x_t, t, c)|` (or squared).
pub fn ddpm_loss<T: Real, N: Network<T> + ?Sized, R: Rng>(
    net: &N,
    batch: &TrainingBatch<T>,
    sched: &NoiseSchedule,
    kind: LossKind,
    rng: &mut R,
) -> Result<f64> {
    Ok(variant_loss(net, Variant::Ddpm, batch, sched, kind, rng, false)?.loss)
}

/// Flow-matching objective `mean |v_theta(x_t, t, c) - (x1 - x0)|` (or squared).
pub fn fm_loss<T: Real, N: Network<T> + ?Sized, R: Rng>(
    net: &N,
    batch: &TrainingBatch<T>,
    kind: LossKind,
    rng: &mut R,
) -> Result<f64> {
    // The schedule is unused on the flow path; any valid one will do.
    let sched = NoiseSchedule::from_betas(vec![0.5])?;
    Ok(variant_loss(net, Variant::Fm, batch, &sched, kind, rng, false)?.loss)
}

/// Inference-time predictor with the mixture and condition already bound.
pub trait Denoiser<T: Real> {
    /// `t` is the raw variant time (DDPM step or flow time).
    fn predict(&self, x: &Tensor<T>, t: f64) -> Result<Tensor<T>>;
}

impl<T: Real, F: Fn(&Tensor<T>, f64) -> Result<Tensor<T>>> Denoiser<T> for F {
    fn predict(&self, x: &Tensor<T>, t: f64) -> Result<Tensor<T>> {
        self(x, t)
    }
}

/// The trained model bound to a mixture and pooled condition vectors.
pub struct ConditionedModel<'a, T> {
    pub model: &'a SeparationModel<T>,
    pub variant: Variant,
    pub x_mix: Tensor<T>,
    pub cond: Condition<T>,
}

impl<'a, T: Real> ConditionedModel<'a, T> {
    /// Aggregates frame conditions once up front.
    pub fn new(model: &'a SeparationModel<T>, variant: Variant, x_mix: Tensor<T>, cond: &Condition<T>) -> Result<Self> {
        let pooled = model.pooled_condition(cond)?;
        Ok(Self {
            model,
            variant,
            x_mix,
            cond: Condition::Vectors(pooled),
        })
    }
}

impl<T: Real> Denoiser<T> for ConditionedModel<'_, T> {
    fn predict(&self, x: &Tensor<T>, t: f64) -> Result<Tensor<T>> {
        let n = x.shape()[0];
        let time = vec![network_time(self.variant, t); n];
        self.model.predict(x, &self.x_mix, &time, &self.cond)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub variant: Variant,
    pub steps: usize,
    pub silence_threshold: f64,
    pub seed: u64,
    pub guidance: bool,
    /// Clamp the final sample to `[0, 1]`.
    pub clamp: bool,
    /// Clip each DDIM `x0` estimate to `[0, 1]` and re-derive the noise
    /// from it. No effect on the flow sampler.
    pub clip_denoised: bool,
}

impl SamplerConfig {
    /// 15 DDIM steps or 2 Euler steps, threshold 0.002, guidance on.
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            steps: match variant {
                Variant::Ddpm => 15,
                Variant::Fm => 2,
            },
            silence_threshold: 0.002,
            seed: 0,
            guidance: true,
            clamp: true,
            clip_denoised: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            return Err(Error::invalid("sampler needs at least one step"));
        }
        if !(self.silence_threshold >= 0.0) {
            return Err(Error::invalid("silence threshold must be nonnegative"));
        }
        Ok(())
    }
}

/// Indicator of `x_mix < delta`.
pub fn silence_mask<T: Real>(x_mix: &Tensor<T>, delta: f64) -> Result<Tensor<T>> {
    if !(delta >= 0.0) {
        return Err(Error::invalid("silence threshold must be nonnegative"));
    }
    let d = T::lit(delta);
    Ok(x_mix.map(|v| if v < d { T::one() } else { T::zero() }))
}

/// Noise level at which guidance perturbs the mixture.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NoiseLevel {
    /// Cumulative `alpha_bar` of the DDPM forward process.
    AlphaBar(f64),
    /// Flow time in `[0, 1]`.
    FlowTime(f64),
}

/// Blends `mask * x_mix_t + (1 - mask) * x_pred`, where `x_mix_t` is the
/// mixture pushed through the active forward process with fresh noise.
pub fn apply_silence_guidance<T: Real, R: Rng>(
    x_pred: &Tensor<T>,
    x_mix: &Tensor<T>,
    mask: &Tensor<T>,
    level: NoiseLevel,
    rng: &mut R,
) -> Result<Tensor<T>> {
    if x_pred.shape() != x_mix.shape() || mask.shape() != x_mix.shape() {
        return Err(Error::invalid("guidance inputs must share one shape"));
    }
    let noise: Tensor<T> = gaussian(x_mix.shape(), rng);
    let x_mix_t = match level {
        NoiseLevel::AlphaBar(ab) => forward_with_alpha_bar(x_mix, ab, &noise)?,
        NoiseLevel::FlowTime(t) => fm_path_sample(&noise, x_mix, t)?,
    };
    let out = x_pred
        .data()
        .iter()
        .zip(x_mix_t.data())
        .zip(mask.data())
        .map(|((&p, &m_t), &m)| m * m_t + (T::one() - m) * p)
        .collect();
    Ok(Tensor::from_vec(x_pred.shape(), out)?)
}

/// Starting noise for a sampler run.
pub fn initial_noise<T: Real>(shape: &[usize], seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    gaussian(shape, &mut rng)
}

fn guidance_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// `N` evenly spaced DDIM steps in `1..=T`, descending, always including `T`.
pub fn ddim_timesteps(total: usize, n: usize) -> Vec<usize> {
    let n = n.clamp(1, total);
    let mut ts: Vec<usize> = (1..=n)
        .map(|i| ((i as f64 * total as f64 / n as f64).round() as usize).clamp(1, total))
        .collect();
    ts.dedup();
    ts.reverse();
    ts
}

fn finish<T: Real>(x: Tensor<T>, clamp: bool) -> Tensor<T> {
    if clamp {
        x.map(|v| v.max(T::zero()).min(T::one()))
    } else {
        x
    }
}

/// Deterministic DDIM from seeded noise.
pub fn ddim_sample<T: Real, D: Denoiser<T> + ?Sized>(
    model: &D,
    x_mix: &Tensor<T>,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
) -> Result<Tensor<T>> {
    let x = initial_noise(x_mix.shape(), cfg.seed);
    ddim_sample_from(model, x, x_mix, sched, cfg)
}

/// DDIM (`eta = 0`) from a given `x_T`.
pub fn ddim_sample_from<T: Real, D: Denoiser<T> + ?Sized>(
    model: &D,
    mut x: Tensor<T>,
    x_mix: &Tensor<T>,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
) -> Result<Tensor<T>> {
    cfg.validate()?;
    let mask = silence_mask(x_mix, cfg.silence_threshold)?;
    let mut grng = guidance_rng(cfg.seed);
    let ts = ddim_timesteps(sched.steps(), cfg.steps);
    for (i, &t) in ts.iter().enumerate() {
        let prev = ts.get(i + 1).copied().unwrap_or(0);
        let (ab, ab_prev) = (sched.alpha_bar(t)?, sched.alpha_bar(prev)?);
        let eps = model.predict(&x, t as f64)?;
        let (sa, sb) = (T::lit(ab.sqrt()), T::lit((1.0 - ab).sqrt()));
        let (pa, pb) = (T::lit(ab_prev.sqrt()), T::lit((1.0 - ab_prev).sqrt()));
        let clip = cfg.clip_denoised;
        x = x.zip_map(&eps, |xv, e| {
            let mut x0 = (xv - sb * e) / sa;
            let mut e = e;
            if clip {
                x0 = x0.max(T::zero()).min(T::one());
                e = (xv - sa * x0) / sb;
            }
            pa * x0 + pb * e
        })?;
        if cfg.guidance {
            x = apply_silence_guidance(&x, x_mix, &mask, NoiseLevel::AlphaBar(ab_prev), &mut grng)?;
        }
    }
    Ok(finish(x, cfg.clamp))
}

/// Euler integration of the learned flow from seeded noise.
pub fn euler_solve<T: Real, D: Denoiser<T> + ?Sized>(
    model: &D,
    x_mix: &Tensor<T>,
    cfg: &SamplerConfig,
) -> Result<Tensor<T>> {
    let x = initial_noise(x_mix.shape(), cfg.seed);
    euler_solve_from(model, x, x_mix, cfg)
}

/// `x += v(x, k/N) / N` for `k = 0..N`, from a given `x_0`.
pub fn euler_solve_from<T: Real, D: Denoiser<T> + ?Sized>(
    model: &D,
    mut x: Tensor<T>,
    x_mix: &Tensor<T>,
    cfg: &SamplerConfig,
) -> Result<Tensor<T>> {
    cfg.validate()?;
    let mask = silence_mask(x_mix, cfg.silence_threshold)?;
    let mut grng = guidance_rng(cfg.seed);
    let n = cfg.steps;
    let dt = T::lit(1.0 / n as f64);
    for k in 0..n {
        let t = k as f64 / n as f64;
        let v = model.predict(&x, t)?;
        x = x.zip_map(&v, |xv, vv| xv + vv * dt)?;
        if cfg.guidance {
            let next = (k + 1) as f64 / n as f64;
            x = apply_silence_guidance(&x, x_mix, &mask, NoiseLevel::FlowTime(next), &mut grng)?;
        }
    }
    Ok(finish(x, cfg.clamp))
}

/// Dispatches on the configured variant.
pub fn sample<T: Real, D: Denoiser<T> + ?Sized>(
    model: &D,
    x_mix: &Tensor<T>,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
) -> Result<Tensor<T>> {
    match cfg.variant {
        Variant::Ddpm => ddim_sample(model, x_mix, sched, cfg),
        Variant::Fm => euler_solve(model, x_mix, cfg),
    }
}
