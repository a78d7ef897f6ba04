//! Frame encoders and the temporal transformer that pools K frame embeddings
//! into one condition vector.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use avsep_autograd::{Real, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn::{Linear, LayerNorm, MultiHeadAttention, ParamId, ParamStore, Session};

pub const THUMBNAIL_SIDE: usize = 8;

/// One visual frame, in whichever representation the data source provides.
#[derive(Clone, Debug, PartialEq)]
pub enum Frame {
    /// Category label of a synthetic clip.
    Category(usize),
    /// Row-major 8x8 greyscale thumbnail.
    Thumbnail(Vec<f64>),
    /// Precomputed embedding; passes through encoders unchanged.
    Embedding(Vec<f64>),
}

impl Frame {
    fn kind(&self) -> u8 {
        match self {
            Frame::Category(_) => 0,
            Frame::Thumbnail(_) => 1,
            Frame::Embedding(_) => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VisualClip {
    frames: Vec<Frame>,
}

impl VisualClip {
    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::invalid("visual clip has no frames"))?;
        if frames.iter().any(|f| f.kind() != first.kind()) {
            return Err(Error::invalid("visual clip mixes frame representations"));
        }
        Ok(Self { frames })
    }

    /// `k` copies of a category frame.
    pub fn category(category: usize, k: usize) -> Result<Self> {
        Self::new(vec![Frame::Category(category); k])
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Maps a single frame to a `dim()`-dimensional vector.
pub trait FrameEncoder {
    fn dim(&self) -> usize;
    fn name(&self) -> &str;
    fn encode(&self, frame: &Frame) -> Result<Vec<f64>>;
}

fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect()
}

/// One-hot category IDs through a fixed seeded Gaussian projection.
#[derive(Clone, Debug)]
pub struct CategoryEncoder {
    dim: usize,
    categories: usize,
    proj: Vec<f64>,
}

impl CategoryEncoder {
    pub fn new(categories: usize, dim: usize, seed: u64) -> Self {
        Self {
            dim,
            categories,
            proj: gaussian_matrix(categories, dim, seed),
        }
    }
}

impl FrameEncoder for CategoryEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn name(&self) -> &str {
        "category"
    }

    fn encode(&self, frame: &Frame) -> Result<Vec<f64>> {
        match frame {
            Frame::Category(c) if *c < self.categories => {
                Ok(self.proj[c * self.dim..(c + 1) * self.dim].to_vec())
            }
            Frame::Category(c) => Err(Error::invalid(format!(
                "category {c} out of range for {} categories",
                self.categories
            ))),
            Frame::Embedding(e) => passthrough(e, self.dim),
            Frame::Thumbnail(_) => Err(Error::invalid("category encoder cannot read thumbnails")),
        }
    }
}

/// Flattened 8x8 thumbnails through a seeded linear projection.
#[derive(Clone, Debug)]
pub struct ThumbnailEncoder {
    dim: usize,
    proj: Vec<f64>,
}

impl ThumbnailEncoder {
    pub fn new(dim: usize, seed: u64) -> Self {
        let n = THUMBNAIL_SIDE * THUMBNAIL_SIDE;
        let scale = 1.0 / (n as f64).sqrt();
        Self {
            dim,
            proj: gaussian_matrix(dim, n, seed).into_iter().map(|v| v * scale).collect(),
        }
    }
}

impl FrameEncoder for ThumbnailEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn name(&self) -> &str {
        "thumbnail8"
    }

    fn encode(&self, frame: &Frame) -> Result<Vec<f64>> {
        let n = THUMBNAIL_SIDE * THUMBNAIL_SIDE;
        match frame {
            Frame::Thumbnail(px) if px.len() == n => Ok(self
                .proj
                .chunks(n)
                .map(|row| row.iter().zip(px).map(|(a, b)| a * b).sum())
                .collect()),
            Frame::Thumbnail(px) => Err(Error::invalid(format!(
                "thumbnail must have {n} pixels, got {}",
                px.len()
            ))),
            Frame::Embedding(e) => passthrough(e, self.dim),
            Frame::Category(_) => Err(Error::invalid("thumbnail encoder cannot read category IDs")),
        }
    }
}

fn passthrough(e: &[f64], dim: usize) -> Result<Vec<f64>> {
    if e.len() != dim {
        return Err(Error::invalid(format!(
            "embedding has dimension {}, expected {dim}",
            e.len()
        )));
    }
    Ok(e.to_vec())
}

/// Encodes every frame of `clip`, preserving order.
pub fn encode_frames(clip: &VisualClip, encoder: &dyn FrameEncoder) -> Result<Vec<Vec<f64>>> {
    if clip.is_empty() {
        return Err(Error::invalid("visual clip has no frames"));
    }
    clip.frames.iter().map(|f| encoder.encode(f)).collect()
}

/// Packs K embeddings into a `(K, C)` tensor.
pub fn embeddings_tensor<T: Real>(embeddings: &[Vec<f64>]) -> Result<Tensor<T>> {
    let k = embeddings.len();
    let c = embeddings.first().map_or(0, |e| e.len());
    if k == 0 || embeddings.iter().any(|e| e.len() != c) {
        return Err(Error::invalid("embeddings must be a non-empty K x C array"));
    }
    let data = embeddings.iter().flatten().map(|&v| T::lit(v)).collect();
    Ok(Tensor::from_vec(&[k, c], data)?)
}

/// Writes K x C embeddings as a one-line text header followed by
/// little-endian `f32` values.
pub fn write_embeddings(path: &Path, embeddings: &[Vec<f64>], encoder: &str) -> Result<()> {
    let k = embeddings.len();
    let c = embeddings.first().map_or(0, |e| e.len());
    if k == 0 || embeddings.iter().any(|e| e.len() != c) {
        return Err(Error::invalid("embeddings must be a non-empty K x C array"));
    }
    let mut f = fs::File::create(path)?;
    writeln!(f, "AVSEP-EMB K={k} C={c} encoder={}", encoder.replace(char::is_whitespace, "_"))?;
    for v in embeddings.iter().flatten() {
        f.write_all(&(*v as f32).to_le_bytes())?;
    }
    Ok(())
}

/// Reads a file written by [`write_embeddings`]; returns the rows and the
/// encoder name.
pub fn read_embeddings(path: &Path) -> Result<(Vec<Vec<f64>>, String)> {
    let bytes = fs::read(path)?;
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("embedding file lacks a header line".into()))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|e| Error::Format(e.to_string()))?;
    let mut fields = header.split_whitespace();
    if fields.next() != Some("AVSEP-EMB") {
        return Err(Error::Format("not an embedding file".into()));
    }
    let (mut k, mut c, mut name) = (None, None, String::new());
    for f in fields {
        match f.split_once('=') {
            Some(("K", v)) => k = v.parse::<usize>().ok(),
            Some(("C", v)) => c = v.parse::<usize>().ok(),
            Some(("encoder", v)) => name = v.to_string(),
            _ => {}
        }
    }
    let (k, c) = k
        .zip(c)
        .ok_or_else(|| Error::Format("embedding header needs K and C".into()))?;
    let body = &bytes[nl + 1..];
    if body.len() != k * c * 4 || k == 0 {
        return Err(Error::Format(format!(
            "expected {} bytes for {k} x {c} embeddings, found {}",
            k * c * 4,
            body.len()
        )));
    }
    let flat: Vec<f64> = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    Ok((flat.chunks(c).map(|r| r.to_vec()).collect(), name))
}

#[derive(Clone, Debug)]
struct FeedForward {
    up: Linear,
    down: Linear,
}

impl FeedForward {
    fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, name: &str, dim: usize, rng: &mut R) -> Self {
        Self {
            up: Linear::new(store, &format!("{name}.up"), dim, 2 * dim, true, false, rng),
            down: Linear::new(store, &format!("{name}.down"), 2 * dim, dim, true, false, rng),
        }
    }

    fn forward<T: Real>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let h = self.up.forward(s, x)?;
        let h = s.g.relu(h);
        self.down.forward(s, h)
    }
}

#[derive(Clone, Debug)]
struct EncoderLayer {
    norm1: LayerNorm,
    attn: MultiHeadAttention,
    norm2: LayerNorm,
    ffn: FeedForward,
}

#[derive(Clone, Debug)]
struct DecoderLayer {
    norm1: LayerNorm,
    self_attn: MultiHeadAttention,
    norm2: LayerNorm,
    cross_attn: MultiHeadAttention,
    norm3: LayerNorm,
    ffn: FeedForward,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AggregatorConfig {
    pub dim: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub max_frames: usize,
}

impl AggregatorConfig {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            heads: 4,
            encoder_layers: 3,
            max_frames: 32,
        }
    }
}

/// Pre-norm transformer: encoder layers over the frames, one decoder layer
/// with a single learned query whose output is added to every frame before
/// the mean over frames.
#[derive(Clone, Debug)]
pub struct TemporalAggregator {
    pub config: AggregatorConfig,
    pos: ParamId,
    query: ParamId,
    encoder: Vec<EncoderLayer>,
    decoder: DecoderLayer,
}

impl TemporalAggregator {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        config: AggregatorConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let (c, h) = (config.dim, config.heads);
        if c == 0 || h == 0 || c % h != 0 || config.max_frames == 0 {
            return Err(Error::invalid(format!(
                "aggregator dim {c} must be a positive multiple of {h} heads"
            )));
        }
        let pos = store.add(
            format!("{name}.pos"),
            Tensor::from_fn(&[config.max_frames, c], |_| T::lit(0.02 * rng.sample::<f64, _>(StandardNormal))),
        );
        let query = store.add(
            format!("{name}.query"),
            Tensor::from_fn(&[1, 1, c], |_| T::lit(0.02 * rng.sample::<f64, _>(StandardNormal))),
        );
        let encoder = (0..config.encoder_layers)
            .map(|i| {
                let n = format!("{name}.enc{i}");
                EncoderLayer {
                    norm1: LayerNorm::new(store, &format!("{n}.norm1"), c),
                    attn: MultiHeadAttention::new(store, &format!("{n}.attn"), c, h, false, rng),
                    norm2: LayerNorm::new(store, &format!("{n}.norm2"), c),
                    ffn: FeedForward::new(store, &format!("{n}.ffn"), c, rng),
                }
            })
            .collect();
        let n = format!("{name}.dec");
        let decoder = DecoderLayer {
            norm1: LayerNorm::new(store, &format!("{n}.norm1"), c),
            self_attn: MultiHeadAttention::new(store, &format!("{n}.self_attn"), c, h, false, rng),
            norm2: LayerNorm::new(store, &format!("{n}.norm2"), c),
            cross_attn: MultiHeadAttention::new(store, &format!("{n}.cross_attn"), c, h, false, rng),
            norm3: LayerNorm::new(store, &format!("{n}.norm3"), c),
            ffn: FeedForward::new(store, &format!("{n}.ffn"), c, rng),
        };
        Ok(Self {
            config,
            pos,
            query,
            encoder,
            decoder,
        })
    }

    /// Per-frame outputs `(1, K, C)` before pooling.
    pub fn frame_outputs<T: Real>(&self, s: &mut Session<T>, embeddings: Var) -> Result<Var> {
        let shape = s.g.shape(embeddings).to_vec();
        if shape.len() != 2 || shape[1] != self.config.dim || shape[0] == 0 {
            return Err(Error::invalid(format!(
                "aggregator expects K x {} embeddings, got {shape:?}",
                self.config.dim
            )));
        }
        let (k, c) = (shape[0], shape[1]);
        if k > self.config.max_frames {
            return Err(Error::invalid(format!(
                "{k} frames exceed the positional table of {}",
                self.config.max_frames
            )));
        }
        let pos = s.param(self.pos);
        let pos = s.g.narrow(pos, 0, 0, k)?;
        let x = s.g.add(embeddings, pos)?;
        let mut x = s.g.reshape(x, &[1, k, c])?;
        for layer in &self.encoder {
            let h = layer.norm1.forward(s, x)?;
            let a = layer.attn.forward(s, h, h)?;
            x = s.g.add(x, a)?;
            let h = layer.norm2.forward(s, x)?;
            let f = layer.ffn.forward(s, h)?;
            x = s.g.add(x, f)?;
        }
        let d = &self.decoder;
        let mut q = s.param(self.query);
        let h = d.norm1.forward(s, q)?;
        let a = d.self_attn.forward(s, h, h)?;
        q = s.g.add(q, a)?;
        let h = d.norm2.forward(s, q)?;
        let a = d.cross_attn.forward(s, h, x)?;
        q = s.g.add(q, a)?;
        let h = d.norm3.forward(s, q)?;
        let f = d.ffn.forward(s, h)?;
        q = s.g.add(q, f)?;
        Ok(s.g.add(x, q)?)
    }

    /// Pools `(K, C)` frame embeddings into a `(1, C)` condition vector.
    pub fn aggregate<T: Real>(&self, s: &mut Session<T>, embeddings: Var) -> Result<Var> {
        let frames = self.frame_outputs(s, embeddings)?;
        Ok(s.g.mean_axis(frames, 1)?)
    }
}
