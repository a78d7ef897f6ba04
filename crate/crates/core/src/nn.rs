//! Parameter storage and the layer building blocks shared by the U-Net and the
//! temporal transformer.

use std::collections::HashMap;

use avsep_autograd::{Graph, Real, Tensor, Var};
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of learnable tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Registers a tensor. Panics on a duplicate name, which would be a
    /// construction bug.
    pub fn add(&mut self, name: impl Into<String>, t: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.all_finite())
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| t.cast()).collect(),
            index: self.index.clone(),
        }
    }

    /// Replaces every tensor by name from `other`, checking shapes.
    pub fn load_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::Format(format!(
                "expected {} parameter tensors, found {}",
                self.len(),
                other.len()
            )));
        }
        for (i, name) in self.names.iter().enumerate() {
            let j = other
                .index
                .get(name)
                .ok_or_else(|| Error::Format(format!("missing parameter {name}")))?;
            if other.tensors[*j].shape() != self.tensors[i].shape() {
                return Err(Error::Format(format!(
                    "parameter {name}: shape {:?} != {:?}",
                    other.tensors[*j].shape(),
                    self.tensors[i].shape()
                )));
            }
            self.tensors[i] = other.tensors[*j].clone();
        }
        Ok(())
    }
}

/// One forward evaluation: the graph plus lazily bound parameter leaves.
pub struct Session<'a, T> {
    pub g: Graph<T>,
    params: &'a ParamStore<T>,
    bound: Vec<Option<Var>>,
    trainable: bool,
    /// Leaves to differentiate besides parameters, for testing.
    pub watch: Vec<Var>,
}

impl<'a, T: Real> Session<'a, T> {
    /// `trainable` selects whether parameters are recorded as variables.
    pub fn new(params: &'a ParamStore<T>, trainable: bool) -> Self {
        Self {
            g: Graph::new(),
            params,
            bound: vec![None; params.len()],
            trainable,
            watch: Vec::new(),
        }
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let t = self.params.get(id).clone();
        let v = if self.trainable {
            self.g.variable(t)
        } else {
            self.g.constant(t)
        };
        self.bound[id.0] = Some(v);
        v
    }

    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.g.constant(t)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.g.value(v)
    }

    /// Gradient of `loss` for every parameter of the store (`None` if unused).
    pub fn param_grads(&self, loss: Var) -> Result<Vec<Option<Tensor<T>>>> {
        let mut grads = self.g.backward(loss)?;
        Ok(self
            .bound
            .iter()
            .map(|b| b.and_then(|v| grads.take(v)))
            .collect())
    }
}

/// Uniform `±1/sqrt(fan_in)` initialisation.
pub fn uniform_init<T: Real, R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| T::lit(rng.gen_range(-bound..bound)))
}

/// Fully connected layer applied to the last axis.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        output: usize,
        bias: bool,
        zero: bool,
        rng: &mut R,
    ) -> Self {
        let wt = if zero {
            Tensor::zeros(&[output, input])
        } else {
            uniform_init(&[output, input], input, rng)
        };
        let w = store.add(format!("{name}.weight"), wt);
        let b = bias.then(|| {
            let bt = if zero {
                Tensor::zeros(&[output])
            } else {
                uniform_init(&[output], input, rng)
            };
            store.add(format!("{name}.bias"), bt)
        });
        Self {
            w,
            b,
            input,
            output,
        }
    }

    pub fn forward<T: Real>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let shape = s.g.shape(x).to_vec();
        if shape.last() != Some(&self.input) {
            return Err(Error::invalid(format!(
                "linear expects last axis {}, got {shape:?}",
                self.input
            )));
        }
        let rows: usize = shape[..shape.len() - 1].iter().product();
        let flat = s.g.reshape(x, &[rows, self.input])?;
        let w = s.param(self.w);
        let mut y = s.g.matmul(flat, w, false, true)?;
        if let Some(b) = self.b {
            let b = s.param(b);
            let b = s.g.reshape(b, &[1, self.output])?;
            y = s.g.add(y, b)?;
        }
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = self.output;
        Ok(s.g.reshape(y, &out_shape)?)
    }
}

/// 2-D convolution, optionally weight-standardized.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub standardize: bool,
}

pub const WS_EPS: f64 = 1e-5;

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        output: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        standardize: bool,
        zero: bool,
        rng: &mut R,
    ) -> Self {
        let fan_in = input * kernel * kernel;
        let shape = [output, input, kernel, kernel];
        let (wt, bt) = if zero {
            (Tensor::zeros(&shape), Tensor::zeros(&[output]))
        } else {
            (uniform_init(&shape, fan_in, rng), uniform_init(&[output], fan_in, rng))
        };
        Self {
            w: store.add(format!("{name}.weight"), wt),
            b: store.add(format!("{name}.bias"), bt),
            input,
            output,
            kernel,
            stride,
            pad,
            standardize,
        }
    }

    pub fn forward<T: Real>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let shape = s.g.shape(x);
        if shape.len() != 4 || shape[1] != self.input {
            return Err(Error::invalid(format!(
                "conv expects {} input channels, got shape {shape:?}",
                self.input
            )));
        }
        let mut w = s.param(self.w);
        if self.standardize {
            let k2 = self.input * self.kernel * self.kernel;
            let flat = s.g.reshape(w, &[self.output, k2])?;
            let normed = s.g.layer_norm(flat, None, None, T::lit(WS_EPS))?;
            w = s.g.reshape(normed, &[self.output, self.input, self.kernel, self.kernel])?;
        }
        let b = s.param(self.b);
        Ok(s.g.conv2d(x, w, Some(b), self.stride, self.pad)?)
    }
}

/// Transposed convolution, used for 2x upsampling.
#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    pub w: ParamId,
    pub b: ParamId,
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvTranspose2d {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = channels * kernel * kernel;
        Self {
            w: store.add(
                format!("{name}.weight"),
                uniform_init(&[channels, channels, kernel, kernel], fan_in, rng),
            ),
            b: store.add(format!("{name}.bias"), uniform_init(&[channels], fan_in, rng)),
            channels,
            kernel,
            stride,
            pad,
        }
    }

    pub fn forward<T: Real>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let w = s.param(self.w);
        let b = s.param(self.b);
        Ok(s.g.conv_transpose2d(x, w, Some(b), self.stride, self.pad)?)
    }
}

#[derive(Clone, Debug)]
pub struct GroupNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub groups: usize,
}

impl GroupNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize, groups: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(&[channels])),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[channels])),
            groups,
        }
    }

    pub fn forward<T: Real>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let (g, b) = (s.param(self.gamma), s.param(self.beta));
        Ok(s.g.group_norm(x, g, b, self.groups, T::lit(1e-5))?)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(&[dim])),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[dim])),
        }
    }

    pub fn forward<T: Real>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let (g, b) = (s.param(self.gamma), s.param(self.beta));
        Ok(s.g.layer_norm(x, Some(g), Some(b), T::lit(1e-5))?)
    }
}

/// Scaled dot-product multi-head attention over `(B, L, C)` sequences.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        heads: usize,
        zero_out: bool,
        rng: &mut R,
    ) -> Self {
        assert!(heads > 0 && dim % heads == 0, "dim {dim} not divisible by {heads} heads");
        Self {
            q: Linear::new(store, &format!("{name}.q"), dim, dim, true, false, rng),
            k: Linear::new(store, &format!("{name}.k"), dim, dim, true, false, rng),
            v: Linear::new(store, &format!("{name}.v"), dim, dim, true, false, rng),
            out: Linear::new(store, &format!("{name}.out"), dim, dim, true, zero_out, rng),
            heads,
            dim,
        }
    }

    /// `query: (B, Lq, C)`, `context: (B, Lk, C)` -> `(B, Lq, C)`.
    pub fn forward<T: Real>(&self, s: &mut Session<T>, query: Var, context: Var) -> Result<Var> {
        let (b, lq) = (s.g.shape(query)[0], s.g.shape(query)[1]);
        let lk = s.g.shape(context)[1];
        let (h, d) = (self.heads, self.dim / self.heads);
        let q = self.q.forward(s, query)?;
        let k = self.k.forward(s, context)?;
        let v = self.v.forward(s, context)?;
        let split = |s: &mut Session<T>, x: Var, l: usize| -> Result<Var> {
            let x = s.g.reshape(x, &[b, l, h, d])?;
            let x = s.g.permute(x, &[0, 2, 1, 3])?;
            Ok(s.g.reshape(x, &[b * h, l, d])?)
        };
        let (q, k, v) = (split(s, q, lq)?, split(s, k, lk)?, split(s, v, lk)?);
        let scores = s.g.matmul(q, k, false, true)?;
        let scores = s.g.scale(scores, T::lit(1.0 / (d as f64).sqrt()));
        let att = s.g.softmax(scores)?;
        let o = s.g.matmul(att, v, false, false)?;
        let o = s.g.reshape(o, &[b, h, lq, d])?;
        let o = s.g.permute(o, &[0, 2, 1, 3])?;
        let o = s.g.reshape(o, &[b, lq, self.dim])?;
        self.out.forward(s, o)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn weight_standardization_normalizes_each_filter() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f64>::new();
        let conv = Conv2d::new(&mut store, "c", 3, 4, 3, 1, 1, true, false, &mut rng);
        let mut s = Session::new(&store, false);
        // A one-hot input at the centre reads the kernel back out.
        let mut x = Tensor::zeros(&[1, 3, 3, 3]);
        x.data_mut()[4] = 1.0;
        let xv = s.input(x);
        let y = conv.forward(&mut s, xv).unwrap();
        let w = store.get(conv.w).data();
        let b = store.get(conv.b).data();
        for o in 0..4 {
            let filt = &w[o * 27..(o + 1) * 27];
            let mean = filt.iter().sum::<f64>() / 27.0;
            let var = filt.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 27.0;
            let expect = (filt[4] - mean) / (var + WS_EPS).sqrt() + b[o];
            assert!((s.value(y).data()[o * 9 + 4] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_matches_manual_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::<f64>::new();
        let lin = Linear::new(&mut store, "l", 3, 2, true, false, &mut rng);
        let mut s = Session::new(&store, false);
        let x = s.input(Tensor::from_vec(&[1, 1, 3], vec![1.0, -2.0, 0.5]).unwrap());
        let y = lin.forward(&mut s, x).unwrap();
        assert_eq!(s.value(y).shape(), &[1, 1, 2]);
        let w = store.get(lin.w).data();
        let b = store.get(lin.b.unwrap()).data();
        for o in 0..2 {
            let e = w[o * 3] - 2.0 * w[o * 3 + 1] + 0.5 * w[o * 3 + 2] + b[o];
            assert!((s.value(y).data()[o] - e).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_with_one_key_returns_projected_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::<f64>::new();
        let att = MultiHeadAttention::new(&mut store, "a", 4, 2, false, &mut rng);
        let mut s = Session::new(&store, false);
        let q = s.input(Tensor::from_fn(&[1, 3, 4], |i| i as f64 * 0.1));
        let c = s.input(Tensor::from_vec(&[1, 1, 4], vec![0.3, -0.1, 0.2, 0.5]).unwrap());
        let y = att.forward(&mut s, q, c).unwrap();
        let v = att.v.forward(&mut s, c).unwrap();
        let o = att.out.forward(&mut s, v).unwrap();
        let out = s.value(o).data().to_vec();
        for row in s.value(y).data().chunks(4) {
            for (a, b) in row.iter().zip(&out) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn store_load_checks_names_and_shapes() {
        let mut a = ParamStore::<f32>::new();
        a.add("x", Tensor::ones(&[2]));
        let mut b = ParamStore::<f32>::new();
        b.add("x", Tensor::zeros(&[2]));
        a.load_from(&b).unwrap();
        assert_eq!(a.get(ParamId(0)).data(), &[0.0, 0.0]);
        let mut c = ParamStore::<f32>::new();
        c.add("x", Tensor::zeros(&[3]));
        assert!(a.load_from(&c).is_err());
    }
}
