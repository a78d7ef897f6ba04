//! The separation U-Net: five convolution-attention blocks per side, a
//! feature-interaction bottleneck that is the only consumer of the visual
//! condition, and a timestep embedding fed to every residual block.

use avsep_autograd::{Real, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Conv2d, ConvTranspose2d, GroupNorm, LayerNorm, Linear, MultiHeadAttention, ParamStore, Session};

pub const LEVELS: usize = 5;

/// Bottleneck fusion variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FimVariant {
    /// Concatenation followed only by the projection back to `C`.
    Concat,
    /// Three-layer pointwise MLP.
    PointWise,
    /// Three residual blocks.
    Local,
    /// Three time-frequency attention blocks.
    Global,
    /// Two residual blocks then time-frequency attention.
    LocalGlobal,
}

impl std::str::FromStr for FimVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "concat" => Self::Concat,
            "point-wise" | "pointwise" => Self::PointWise,
            "local" => Self::Local,
            "global" => Self::Global,
            "local-global" => Self::LocalGlobal,
            _ => return Err(Error::invalid(format!("unknown FIM variant {s}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UNetConfig {
    pub base_channels: usize,
    pub channel_multipliers: Vec<usize>,
    pub groups: usize,
    pub heads: usize,
    /// Dimension of the visual condition vector.
    pub cond_dim: usize,
    pub tf_attention: bool,
    pub time_attention: bool,
    pub fim: FimVariant,
    /// Zero the output projections of attention sub-blocks at init.
    pub zero_init_attention: bool,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self::with_base(32)
    }
}

impl UNetConfig {
    /// Standard layout for a given base width; the condition dimension
    /// matches the bottleneck width.
    pub fn with_base(base: usize) -> Self {
        Self {
            base_channels: base,
            channel_multipliers: vec![1, 2, 4, 8, 8],
            groups: 8,
            heads: 4,
            cond_dim: 8 * base,
            tf_attention: true,
            time_attention: true,
            fim: FimVariant::LocalGlobal,
            zero_init_attention: true,
        }
    }

    pub fn channels(&self) -> Vec<usize> {
        self.channel_multipliers
            .iter()
            .map(|m| m * self.base_channels)
            .collect()
    }

    pub fn bottleneck_channels(&self) -> usize {
        self.channels().last().copied().unwrap_or(0)
    }

    pub fn time_dim(&self) -> usize {
        4 * self.base_channels
    }

    pub fn validate(&self) -> Result<()> {
        if self.channel_multipliers.len() != LEVELS {
            return Err(Error::invalid(format!(
                "U-Net needs {LEVELS} levels, got {}",
                self.channel_multipliers.len()
            )));
        }
        if self.base_channels == 0 || self.base_channels % 2 != 0 {
            return Err(Error::invalid("base channels must be positive and even"));
        }
        let wide = self.bottleneck_channels() + self.cond_dim;
        let widths = self.channels().into_iter().chain([self.base_channels, wide]);
        for c in widths {
            if c == 0 || c % self.groups != 0 || c % self.heads != 0 {
                return Err(Error::invalid(format!(
                    "width {c} must be a positive multiple of {} groups and {} heads",
                    self.groups, self.heads
                )));
            }
        }
        Ok(())
    }
}

/// Half-sine, half-cosine features over geometric frequencies.
pub fn sinusoidal_features(t: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let freqs: Vec<f64> = (0..half)
        .map(|i| (-(10_000f64).ln() * i as f64 / half as f64).exp())
        .collect();
    freqs
        .iter()
        .map(|f| (t * f).sin())
        .chain(freqs.iter().map(|f| (t * f).cos()))
        .collect()
}

#[derive(Clone, Debug)]
pub(crate) struct ResnetBlock {
    conv1: Conv2d,
    norm1: GroupNorm,
    film: Linear,
    conv2: Conv2d,
    norm2: GroupNorm,
    skip: Option<Conv2d>,
    out: usize,
}

impl ResnetBlock {
    fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: &UNetConfig,
        input: usize,
        out: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            conv1: Conv2d::new(store, &format!("{name}.conv1"), input, out, 3, 1, 1, true, false, rng),
            norm1: GroupNorm::new(store, &format!("{name}.norm1"), out, cfg.groups),
            film: Linear::new(store, &format!("{name}.film"), cfg.time_dim(), 2 * out, true, false, rng),
            conv2: Conv2d::new(store, &format!("{name}.conv2"), out, out, 3, 1, 1, true, false, rng),
            norm2: GroupNorm::new(store, &format!("{name}.norm2"), out, cfg.groups),
            skip: (input != out)
                .then(|| Conv2d::new(store, &format!("{name}.skip"), input, out, 1, 1, 0, false, false, rng)),
            out,
        }
    }

    fn forward<T: Real>(&self, s: &mut Session<T>, x: Var, temb: Var) -> Result<Var> {
        let n = s.g.shape(x)[0];
        let h = self.conv1.forward(s, x)?;
        let h = self.norm1.forward(s, h)?;
        let act = s.g.silu(temb);
        let ss = self.film.forward(s, act)?;
        let ss = s.g.reshape(ss, &[n, 2 * self.out, 1, 1])?;
        let scale = s.g.narrow(ss, 1, 0, self.out)?;
        let scale = s.g.add_scalar(scale, T::one());
        let shift = s.g.narrow(ss, 1, self.out, self.out)?;
        let h = s.g.mul(h, scale)?;
        let h = s.g.add(h, shift)?;
        let h = s.g.silu(h);
        let h = self.conv2.forward(s, h)?;
        let h = self.norm2.forward(s, h)?;
        let h = s.g.silu(h);
        let res = match &self.skip {
            Some(c) => c.forward(s, x)?,
            None => x,
        };
        Ok(s.g.add(h, res)?)
    }
}

/// Linear-complexity attention over all positions of the grid: queries are
/// normalized over features, keys over positions.
#[derive(Clone, Debug)]
pub(crate) struct TfAttention {
    norm: GroupNorm,
    qkv: Conv2d,
    out: Conv2d,
    heads: usize,
    channels: usize,
}

impl TfAttention {
    fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: &UNetConfig,
        channels: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            norm: GroupNorm::new(store, &format!("{name}.norm"), channels, cfg.groups),
            qkv: Conv2d::new(store, &format!("{name}.qkv"), channels, 3 * channels, 1, 1, 0, false, false, rng),
            out: Conv2d::new(
                store,
                &format!("{name}.out"),
                channels,
                channels,
                1,
                1,
                0,
                false,
                cfg.zero_init_attention,
                rng,
            ),
            heads: cfg.heads,
            channels,
        }
    }

    fn forward<T: Real>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let shape = s.g.shape(x).to_vec();
        let (n, h, w) = (shape[0], shape[2], shape[3]);
        let l = h * w;
        let d = self.channels / self.heads;
        let bh = n * self.heads;
        let normed = self.norm.forward(s, x)?;
        let qkv = self.qkv.forward(s, normed)?;
        let qkv = s.g.reshape(qkv, &[n, 3, self.heads, d, l])?;
        let part = |s: &mut Session<T>, i: usize| -> Result<Var> {
            let p = s.g.narrow(qkv, 1, i, 1)?;
            Ok(s.g.reshape(p, &[bh, d, l])?)
        };
        let (q, k, v) = (part(s, 0)?, part(s, 1)?, part(s, 2)?);
        let qt = s.g.permute(q, &[0, 2, 1])?;
        let qt = s.g.softmax(qt)?;
        let k = s.g.softmax(k)?;
        // context[d, e] = sum_l k[d, l] v[e, l]
        let context = s.g.matmul(k, v, false, true)?;
        // out[l, e] = sum_d q[l, d] context[d, e]
        let o = s.g.matmul(qt, context, false, false)?;
        let o = s.g.permute(o, &[0, 2, 1])?;
        let o = s.g.reshape(o, &[n, self.channels, h, w])?;
        let o = self.out.forward(s, o)?;
        Ok(s.g.add(x, o)?)
    }
}

/// Pre-norm multi-head self-attention along the time (column) axis, applied
/// independently to every frequency row.
#[derive(Clone, Debug)]
pub(crate) struct TimeAttention {
    norm: LayerNorm,
    attn: MultiHeadAttention,
    channels: usize,
}

impl TimeAttention {
    fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: &UNetConfig,
        channels: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            norm: LayerNorm::new(store, &format!("{name}.norm"), channels),
            attn: MultiHeadAttention::new(
                store,
                &format!("{name}.attn"),
                channels,
                cfg.heads,
                cfg.zero_init_attention,
                rng,
            ),
            channels,
        }
    }

    fn forward<T: Real>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let shape = s.g.shape(x).to_vec();
        let (n, f, t) = (shape[0], shape[2], shape[3]);
        let seq = s.g.permute(x, &[0, 2, 3, 1])?;
        let seq = s.g.reshape(seq, &[n * f, t, self.channels])?;
        let h = self.norm.forward(s, seq)?;
        let a = self.attn.forward(s, h, h)?;
        let a = s.g.reshape(a, &[n, f, t, self.channels])?;
        let a = s.g.permute(a, &[0, 3, 1, 2])?;
        Ok(s.g.add(x, a)?)
    }
}

/// Convolution-attention block: residual block, then optional
/// time-frequency and time attention.
#[derive(Clone, Debug)]
pub struct CaBlock {
    res: ResnetBlock,
    tf: Option<TfAttention>,
    time: Option<TimeAttention>,
    input: usize,
}

impl CaBlock {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: &UNetConfig,
        input: usize,
        out: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            res: ResnetBlock::new(store, &format!("{name}.res"), cfg, input, out, rng),
            tf: cfg
                .tf_attention
                .then(|| TfAttention::new(store, &format!("{name}.tf"), cfg, out, rng)),
            time: cfg
                .time_attention
                .then(|| TimeAttention::new(store, &format!("{name}.time"), cfg, out, rng)),
            input,
        }
    }

    pub fn forward<T: Real>(&self, s: &mut Session<T>, x: Var, temb: Var) -> Result<Var> {
        let c = s.g.shape(x).get(1).copied();
        if c != Some(self.input) {
            return Err(Error::invalid(format!(
                "CA block expects {} channels, got {:?}",
                self.input,
                s.g.shape(x)
            )));
        }
        self.forward_residual_only(s, x, temb).and_then(|h| self.forward_attention(s, h))
    }

    /// Output of the residual sub-block alone.
    pub fn forward_residual_only<T: Real>(&self, s: &mut Session<T>, x: Var, temb: Var) -> Result<Var> {
        self.res.forward(s, x, temb)
    }

    fn forward_attention<T: Real>(&self, s: &mut Session<T>, mut h: Var) -> Result<Var> {
        if let Some(tf) = &self.tf {
            h = tf.forward(s, h)?;
        }
        if let Some(ta) = &self.time {
            h = ta.forward(s, h)?;
        }
        Ok(h)
    }
}

#[derive(Clone, Debug)]
enum FimStage {
    Res(ResnetBlock),
    Attn(TfAttention),
    Pointwise(Conv2d),
}

/// Feature interaction module: tiles the condition over the bottleneck,
/// concatenates, processes at width `C + cond`, projects back to `C`.
#[derive(Clone, Debug)]
pub struct Fim {
    stages: Vec<FimStage>,
    proj: Conv2d,
    channels: usize,
    cond_dim: usize,
}

impl Fim {
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, name: &str, cfg: &UNetConfig, rng: &mut R) -> Self {
        let c = cfg.bottleneck_channels();
        let wide = c + cfg.cond_dim;
        let mut stages = Vec::new();
        let res = |store: &mut ParamStore<T>, i: usize, rng: &mut R| {
            FimStage::Res(ResnetBlock::new(store, &format!("{name}.res{i}"), cfg, wide, wide, rng))
        };
        match cfg.fim {
            FimVariant::Concat => {}
            FimVariant::PointWise => {
                for i in 0..2 {
                    stages.push(FimStage::Pointwise(Conv2d::new(
                        store,
                        &format!("{name}.mlp{i}"),
                        wide,
                        wide,
                        1,
                        1,
                        0,
                        false,
                        false,
                        rng,
                    )));
                }
            }
            FimVariant::Local => {
                for i in 0..3 {
                    stages.push(res(store, i, rng));
                }
            }
            FimVariant::Global => {
                for i in 0..3 {
                    stages.push(FimStage::Attn(TfAttention::new(
                        store,
                        &format!("{name}.attn{i}"),
                        cfg,
                        wide,
                        rng,
                    )));
                }
            }
            FimVariant::LocalGlobal => {
                stages.push(res(store, 0, rng));
                stages.push(res(store, 1, rng));
                stages.push(FimStage::Attn(TfAttention::new(store, &format!("{name}.attn"), cfg, wide, rng)));
            }
        }
        Self {
            stages,
            proj: Conv2d::new(store, &format!("{name}.proj"), wide, c, 1, 1, 0, false, false, rng),
            channels: c,
            cond_dim: cfg.cond_dim,
        }
    }

    /// `fa: (N, C, h, w)`, `v: (N, cond)`, `temb: (N, time_dim)`.
    pub fn forward<T: Real>(&self, s: &mut Session<T>, fa: Var, v: Var, temb: Var) -> Result<Var> {
        let shape = s.g.shape(fa).to_vec();
        if shape.len() != 4 || shape[1] != self.channels {
            return Err(Error::invalid(format!(
                "FIM expects {} bottleneck channels, got {shape:?}",
                self.channels
            )));
        }
        if s.g.shape(v) != [shape[0], self.cond_dim] {
            return Err(Error::invalid(format!(
                "condition must be ({}, {}), got {:?}",
                shape[0],
                self.cond_dim,
                s.g.shape(v)
            )));
        }
        let (n, h, w) = (shape[0], shape[2], shape[3]);
        let v4 = s.g.reshape(v, &[n, self.cond_dim, 1, 1])?;
        let fv = s.g.broadcast_to(v4, &[n, self.cond_dim, h, w])?;
        let mut x = s.g.concat(&[fa, fv], 1)?;
        for stage in &self.stages {
            x = match stage {
                FimStage::Res(r) => r.forward(s, x, temb)?,
                FimStage::Attn(a) => a.forward(s, x)?,
                FimStage::Pointwise(c) => {
                    let y = c.forward(s, x)?;
                    s.g.silu(y)
                }
            };
        }
        self.proj.forward(s, x)
    }
}

#[derive(Clone, Debug)]
struct EncoderLevel {
    block: CaBlock,
    down: Conv2d,
}

#[derive(Clone, Debug)]
struct DecoderLevel {
    up: ConvTranspose2d,
    block: CaBlock,
}

#[derive(Clone, Debug)]
pub struct UNet {
    pub config: UNetConfig,
    stem: Conv2d,
    time1: Linear,
    time2: Linear,
    encoder: Vec<EncoderLevel>,
    fim: Fim,
    decoder: Vec<DecoderLevel>,
    head: Conv2d,
}

/// Network inputs for a batch of `N` items.
pub struct UNetInputs {
    pub x_t: Var,
    pub x_mix: Var,
    /// Per-item time value fed to the sinusoidal encoding.
    pub time: Vec<f64>,
    /// `(N, cond_dim)` condition vectors.
    pub cond: Var,
}

impl UNet {
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, config: UNetConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let b = config.base_channels;
        let ch = config.channels();
        let td = config.time_dim();
        let stem = Conv2d::new(store, "unet.stem", 2, b, 1, 1, 0, false, false, rng);
        let time1 = Linear::new(store, "unet.time1", b, td, true, false, rng);
        let time2 = Linear::new(store, "unet.time2", td, td, true, false, rng);
        let mut encoder = Vec::new();
        let mut prev = b;
        for (i, &c) in ch.iter().enumerate() {
            encoder.push(EncoderLevel {
                block: CaBlock::new(store, &format!("unet.enc{i}"), &config, prev, c, rng),
                down: Conv2d::new(store, &format!("unet.down{i}"), c, c, 3, 2, 1, false, false, rng),
            });
            prev = c;
        }
        let fim = Fim::new(store, "unet.fim", &config, rng);
        let mut decoder = Vec::new();
        for i in (0..LEVELS).rev() {
            let out = if i == 0 { b } else { ch[i - 1] };
            decoder.push(DecoderLevel {
                up: ConvTranspose2d::new(store, &format!("unet.up{i}"), ch[i], 4, 2, 1, rng),
                block: CaBlock::new(store, &format!("unet.dec{i}"), &config, 2 * ch[i], out, rng),
            });
        }
        let head = Conv2d::new(store, "unet.head", b, 1, 1, 1, 0, false, false, rng);
        Ok(Self {
            config,
            stem,
            time1,
            time2,
            encoder,
            fim,
            decoder,
            head,
        })
    }

    /// Sinusoidal features followed by the two-layer SiLU MLP: `(N, 4 base)`.
    pub fn time_embedding<T: Real>(&self, s: &mut Session<T>, time: &[f64]) -> Result<Var> {
        let b = self.config.base_channels;
        let feats: Vec<T> = time
            .iter()
            .flat_map(|&t| sinusoidal_features(t, b))
            .map(T::lit)
            .collect();
        let x = s.input(Tensor::from_vec(&[time.len(), b], feats)?);
        let h = self.time1.forward(s, x)?;
        let h = s.g.silu(h);
        self.time2.forward(s, h)
    }

    pub fn forward<T: Real>(&self, s: &mut Session<T>, inputs: &UNetInputs) -> Result<Var> {
        self.forward_traced(s, inputs, None)
    }

    /// Forward pass that optionally records encoder activations (each level's
    /// skip tensor and the bottleneck input to the FIM).
    pub fn forward_traced<T: Real>(
        &self,
        s: &mut Session<T>,
        inputs: &UNetInputs,
        mut trace: Option<&mut Vec<Tensor<T>>>,
    ) -> Result<Var> {
        let xs = s.g.shape(inputs.x_t).to_vec();
        if xs.len() != 4 || xs[1] != 1 || s.g.shape(inputs.x_mix) != xs.as_slice() {
            return Err(Error::invalid(format!(
                "x_t and x_mix must both be (N, 1, H, W); got {:?} and {:?}",
                xs,
                s.g.shape(inputs.x_mix)
            )));
        }
        if inputs.time.len() != xs[0] {
            return Err(Error::LengthMismatch {
                left: xs[0],
                right: inputs.time.len(),
            });
        }
        let temb = self.time_embedding(s, &inputs.time)?;
        let x = s.g.concat(&[inputs.x_t, inputs.x_mix], 1)?;
        let mut h = self.stem.forward(s, x)?;
        let mut skips = Vec::with_capacity(LEVELS);
        for level in &self.encoder {
            h = level.block.forward(s, h, temb)?;
            skips.push(h);
            h = level.down.forward(s, h)?;
        }
        if let Some(tr) = trace.as_deref_mut() {
            tr.extend(skips.iter().map(|&v| s.value(v).clone()));
            tr.push(s.value(h).clone());
        }
        h = self.fim.forward(s, h, inputs.cond, temb)?;
        for level in &self.decoder {
            let skip = skips.pop().expect("one skip per level");
            let up = level.up.forward(s, h)?;
            let up = crop_to(s, up, skip)?;
            let cat = s.g.concat(&[up, skip], 1)?;
            h = level.block.forward(s, cat, temb)?;
        }
        self.head.forward(s, h)
    }
}

/// Trims the spatial axes of `x` to those of `like` (an upsampled odd-sized
/// level is one pixel larger than its skip).
fn crop_to<T: Real>(s: &mut Session<T>, x: Var, like: Var) -> Result<Var> {
    let (xs, ls) = (s.g.shape(x).to_vec(), s.g.shape(like).to_vec());
    let mut y = x;
    for axis in [2, 3] {
        if xs[axis] < ls[axis] {
            return Err(Error::invalid(format!("cannot crop {xs:?} to {ls:?}")));
        }
        if xs[axis] > ls[axis] {
            y = s.g.narrow(y, axis, 0, ls[axis])?;
        }
    }
    Ok(y)
}

/// Closed-form parameter count of a [`UNet`] built from `cfg`.
pub fn parameter_count(cfg: &UNetConfig) -> usize {
    let b = cfg.base_channels;
    let td = cfg.time_dim();
    let ch = cfg.channels();
    let conv = |i: usize, o: usize, k: usize| i * o * k * k + o;
    let lin = |i: usize, o: usize| i * o + o;
    let res = |i: usize, o: usize| {
        conv(i, o, 3) + 2 * o + lin(td, 2 * o) + conv(o, o, 3) + 2 * o + if i != o { conv(i, o, 1) } else { 0 }
    };
    let tf = |c: usize| 2 * c + conv(c, 3 * c, 1) + conv(c, c, 1);
    let time = |c: usize| 2 * c + 4 * lin(c, c);
    let ca = |i: usize, o: usize| {
        res(i, o) + if cfg.tf_attention { tf(o) } else { 0 } + if cfg.time_attention { time(o) } else { 0 }
    };
    let mut n = conv(2, b, 1) + lin(b, td) + lin(td, td);
    let mut prev = b;
    for &c in &ch {
        n += ca(prev, c) + conv(c, c, 3);
        prev = c;
    }
    let c = cfg.bottleneck_channels();
    let wide = c + cfg.cond_dim;
    n += match cfg.fim {
        FimVariant::Concat => 0,
        FimVariant::PointWise => 2 * conv(wide, wide, 1),
        FimVariant::Local => 3 * res(wide, wide),
        FimVariant::Global => 3 * tf(wide),
        FimVariant::LocalGlobal => 2 * res(wide, wide) + tf(wide),
    } + conv(wide, c, 1);
    for i in 0..LEVELS {
        let out = if i == 0 { b } else { ch[i - 1] };
        n += ch[i] * ch[i] * 16 + ch[i] + ca(2 * ch[i], out);
    }
    n + conv(b, 1, 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sinusoid_at_zero_and_time_scaling() {
        let f = sinusoidal_features(0.0, 16);
        assert!(f[..8].iter().all(|&v| v == 0.0));
        assert!(f[8..].iter().all(|&v| v == 1.0));
        // Continuous t = 0.5 scaled by 1000 encodes exactly like step 500.
        assert_eq!(sinusoidal_features(0.5 * 1000.0, 32), sinusoidal_features(500.0, 32));
        let half = 16usize;
        let f = sinusoidal_features(500.0, 32);
        for i in 0..half {
            let w = (-(10_000f64).ln() * i as f64 / half as f64).exp();
            assert!((f[i] - (500.0 * w).sin()).abs() < 1e-12);
            assert!((f[half + i] - (500.0 * w).cos()).abs() < 1e-12);
        }
    }

    #[test]
    fn closed_form_count_matches_built_store() {
        for fim in [
            FimVariant::Concat,
            FimVariant::PointWise,
            FimVariant::Local,
            FimVariant::Global,
            FimVariant::LocalGlobal,
        ] {
            for (tf, time) in [(true, true), (false, true), (true, false), (false, false)] {
                let cfg = UNetConfig {
                    fim,
                    tf_attention: tf,
                    time_attention: time,
                    ..UNetConfig::with_base(8)
                };
                let mut store = ParamStore::<f32>::new();
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                UNet::new(&mut store, cfg.clone(), &mut rng).unwrap();
                assert_eq!(store.numel(), parameter_count(&cfg), "{cfg:?}");
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(UNetConfig::with_base(32).validate().is_ok());
        let bad = UNetConfig {
            channel_multipliers: vec![1, 2, 4, 8],
            ..UNetConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(UNetConfig::with_base(4).validate().is_err());
    }
}
