use crate::error::{invalid, mismatch, Result};
use crate::kernels::{self, ConvGeom};
use crate::{Real, Tensor};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Offset(Var),
    Silu(Var),
    Relu(Var),
    Abs(Var),
    Square(Var),
    MatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
    },
    Conv2d {
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    },
    ConvT2d {
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    },
    GroupNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
        stats: Vec<(T, T)>,
    },
    LayerNorm {
        x: Var,
        gamma: Option<Var>,
        beta: Option<Var>,
        stats: Vec<(T, T)>,
    },
    Softmax(Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    Sum(Var),
    Mean(Var),
    MeanAxis {
        x: Var,
        axis: usize,
    },
    BroadcastTo(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// A recording of tensor operations for reverse-mode differentiation.
///
/// Each forward operation appends a node; [`Graph::backward`] walks the tape
/// in reverse. Nodes that do not depend on any [`Graph::variable`] are not
/// differentiated.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar with respect to every node that required one.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn axes_outer_inner(shape: &[usize], axis: usize) -> (usize, usize) {
    (
        shape[..axis].iter().product(),
        shape[axis + 1..].iter().product(),
    )
}

fn norm_stats<T: Real>(x: &[T], eps: T) -> (T, T) {
    let n = T::lit(x.len() as f64);
    let mean = x.iter().copied().sum::<T>() / n;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    (mean, T::one() / (var + eps).sqrt())
}

/// Gradient of `xhat = (x - mean) * rstd` given `dxhat`, over one group.
fn norm_backward<T: Real>(x: &[T], dxhat: &[T], mean: T, rstd: T, dx: &mut [T]) {
    let n = T::lit(x.len() as f64);
    let mut s1 = T::zero();
    let mut s2 = T::zero();
    for (&xi, &di) in x.iter().zip(dxhat) {
        s1 += di;
        s2 += di * (xi - mean) * rstd;
    }
    let (m1, m2) = (s1 / n, s2 / n);
    for ((o, &xi), &di) in dx.iter_mut().zip(x).zip(dxhat) {
        *o += rstd * (di - m1 - (xi - mean) * rstd * m2);
    }
}

fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a.len() != b.len() {
        return Err(mismatch(op, a, b));
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Ok(x),
            (1, _) => Ok(y),
            (_, 1) => Ok(x),
            _ => Err(mismatch(op, a, b)),
        })
        .collect()
}

/// Sums `grad` (shaped `out`) down to `shape` along broadcast axes.
fn reduce_to<T: Real>(grad: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if grad.shape() == shape {
        return grad.clone();
    }
    let mut out = Tensor::zeros(shape);
    let sa = kernels::broadcast_strides(shape, grad.shape());
    let zero = vec![0; shape.len()];
    let g = grad.data();
    let o = out.data_mut();
    kernels::for_each_broadcast(grad.shape(), &sa, &zero, |i, a, _| o[a] += g[i]);
    out
}

fn check_matmul(
    sa: &[usize],
    sb: &[usize],
    ta: bool,
    tb: bool,
) -> Result<(usize, usize, usize, usize)> {
    if sa.len() != sb.len() || !(sa.len() == 2 || sa.len() == 3) {
        return Err(mismatch("matmul", sa, sb));
    }
    let r = sa.len();
    let batch = if r == 3 { sa[0] } else { 1 };
    if r == 3 && sb[0] != batch {
        return Err(mismatch("matmul", sa, sb));
    }
    let (m, k) = if ta {
        (sa[r - 1], sa[r - 2])
    } else {
        (sa[r - 2], sa[r - 1])
    };
    let (k2, n) = if tb {
        (sb[r - 1], sb[r - 2])
    } else {
        (sb[r - 2], sb[r - 1])
    };
    if k != k2 {
        return Err(mismatch("matmul", sa, sb));
    }
    Ok((batch, m, k, n))
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a tensor that is not differentiated.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Records a tensor whose gradient is wanted.
    pub fn variable(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn binary(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let out_shape = broadcast_shape(op_name, va.shape(), vb.shape())?;
        let data = if va.shape() == vb.shape() {
            va.data()
                .iter()
                .zip(vb.data())
                .map(|(&x, &y)| f(x, y))
                .collect()
        } else {
            let sa = kernels::broadcast_strides(va.shape(), &out_shape);
            let sb = kernels::broadcast_strides(vb.shape(), &out_shape);
            let n: usize = out_shape.iter().product();
            let mut out = vec![T::zero(); n];
            let (da, db) = (va.data(), vb.data());
            kernels::for_each_broadcast(&out_shape, &sa, &sb, |o, i, j| out[o] = f(da[i], db[j]));
            out
        };
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_vec(&out_shape, data)?, op, rg))
    }

    /// Broadcasting addition; operands must have equal rank.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let value = self.value(a).map(f);
        let rg = self.rg(&[a]);
        self.push(value, op, rg)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        self.unary(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        self.unary(a, |x| x + c, Op::Offset(a))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x / (T::one() + (-x).exp()), Op::Silu(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(T::zero()), Op::Relu(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.abs(), Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    /// Matrix product of rank-2 or equal-batch rank-3 operands, with optional
    /// transposition of the two trailing axes of either side.
    pub fn matmul(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let (batch, m, k, n) = check_matmul(va.shape(), vb.shape(), ta, tb)?;
        let mut out = vec![T::zero(); batch * m * n];
        for bi in 0..batch {
            kernels::gemm(
                m,
                k,
                n,
                T::one(),
                &va.data()[bi * m * k..],
                ta,
                &vb.data()[bi * k * n..],
                tb,
                T::zero(),
                &mut out[bi * m * n..(bi + 1) * m * n],
            );
        }
        let shape = if va.rank() == 3 {
            vec![batch, m, n]
        } else {
            vec![m, n]
        };
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_vec(&shape, out)?, Op::MatMul { a, b, ta, tb }, rg))
    }

    fn conv_shapes(
        &self,
        op: &'static str,
        x: Var,
        w: Var,
        bias: Option<Var>,
    ) -> Result<([usize; 4], [usize; 4])> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 4 || sw.len() != 4 {
            return Err(mismatch(op, sx, sw));
        }
        let sx = [sx[0], sx[1], sx[2], sx[3]];
        let sw = [sw[0], sw[1], sw[2], sw[3]];
        if let Some(b) = bias {
            let out_ch = if op == "conv2d" { sw[0] } else { sw[1] };
            if self.shape(b) != [out_ch] {
                return Err(mismatch(op, self.shape(b), &[out_ch]));
            }
        }
        Ok((sx, sw))
    }

    fn add_channel_bias(out: &mut [T], bias: &[T], plane: usize) {
        for (chunk, &b) in out.chunks_mut(plane).zip(bias.iter().cycle()) {
            for v in chunk {
                *v += b;
            }
        }
    }

    /// 2-D convolution. `x: (N, C, H, W)`, `w: (O, C, kh, kw)`, `bias: (O)`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let ([n, c, h, wd], [o, wc, kh, kw]) = self.conv_shapes("conv2d", x, w, bias)?;
        if c != wc {
            return Err(mismatch("conv2d", self.shape(x), self.shape(w)));
        }
        let g = ConvGeom::new(c, h, wd, kh, kw, stride, pad)
            .ok_or_else(|| invalid("conv2d", "kernel larger than padded input"))?;
        let (rows, plane) = (g.col_rows(), g.col_cols());
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut out = vec![T::zero(); n * o * plane];
        let mut cols = if g.is_pointwise() {
            Vec::new()
        } else {
            vec![T::zero(); rows * plane]
        };
        for bi in 0..n {
            let img = &xv[bi * c * h * wd..(bi + 1) * c * h * wd];
            let src: &[T] = if g.is_pointwise() {
                img
            } else {
                kernels::im2col(img, &g, &mut cols);
                &cols
            };
            kernels::gemm(
                o,
                rows,
                plane,
                T::one(),
                wv,
                false,
                src,
                false,
                T::zero(),
                &mut out[bi * o * plane..(bi + 1) * o * plane],
            );
        }
        if let Some(b) = bias {
            Self::add_channel_bias(&mut out, self.value(b).data(), plane);
        }
        let mut deps = vec![x, w];
        deps.extend(bias);
        let rg = self.rg(&deps);
        let value = Tensor::from_vec(&[n, o, g.oh, g.ow], out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                x,
                w,
                bias,
                stride,
                pad,
            },
            rg,
        ))
    }

    /// Transposed 2-D convolution (adjoint of [`Graph::conv2d`]).
    /// `x: (N, Ci, H, W)`, `w: (Ci, Co, kh, kw)`, `bias: (Co)`; output spatial
    /// size is `(H - 1) * stride - 2 * pad + k`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let ([n, ci, h, wd], [wci, co, kh, kw]) = self.conv_shapes("conv_transpose2d", x, w, bias)?;
        if ci != wci || stride == 0 {
            return Err(mismatch("conv_transpose2d", self.shape(x), self.shape(w)));
        }
        let oh = ((h - 1) * stride + kh)
            .checked_sub(2 * pad)
            .ok_or_else(|| invalid("conv_transpose2d", "padding too large"))?;
        let ow = ((wd - 1) * stride + kw)
            .checked_sub(2 * pad)
            .ok_or_else(|| invalid("conv_transpose2d", "padding too large"))?;
        let g = ConvGeom::new(co, oh, ow, kh, kw, stride, pad)
            .filter(|g| g.oh == h && g.ow == wd)
            .ok_or_else(|| invalid("conv_transpose2d", "inconsistent geometry"))?;
        let (rows, plane) = (g.col_rows(), g.col_cols());
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut out = vec![T::zero(); n * co * oh * ow];
        let mut cols = vec![T::zero(); rows * plane];
        for bi in 0..n {
            kernels::gemm(
                rows,
                ci,
                plane,
                T::one(),
                wv,
                true,
                &xv[bi * ci * plane..(bi + 1) * ci * plane],
                false,
                T::zero(),
                &mut cols,
            );
            kernels::col2im(&cols, &g, &mut out[bi * co * oh * ow..(bi + 1) * co * oh * ow]);
        }
        if let Some(b) = bias {
            Self::add_channel_bias(&mut out, self.value(b).data(), oh * ow);
        }
        let mut deps = vec![x, w];
        deps.extend(bias);
        let rg = self.rg(&deps);
        let value = Tensor::from_vec(&[n, co, oh, ow], out)?;
        Ok(self.push(
            value,
            Op::ConvT2d {
                x,
                w,
                bias,
                stride,
                pad,
            },
            rg,
        ))
    }

    /// Group normalization over `(N, C, ...)` with per-channel affine.
    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize, eps: T) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 || groups == 0 || shape[1] % groups != 0 {
            return Err(invalid(
                "group_norm",
                format!("{groups} groups incompatible with shape {shape:?}"),
            ));
        }
        let c = shape[1];
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(mismatch("group_norm", self.shape(gamma), &[c]));
        }
        let spatial: usize = shape[2..].iter().product();
        let per_group = c / groups * spatial;
        let xv = self.value(x).data();
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let mut out = vec![T::zero(); xv.len()];
        let mut stats = Vec::with_capacity(shape[0] * groups);
        for (gi, (src, dst)) in xv
            .chunks(per_group)
            .zip(out.chunks_mut(per_group))
            .enumerate()
        {
            let (mean, rstd) = norm_stats(src, eps);
            stats.push((mean, rstd));
            let c0 = (gi % groups) * (c / groups);
            for (j, (&s, d)) in src.iter().zip(dst.iter_mut()).enumerate() {
                let ch = c0 + j / spatial;
                *d = (s - mean) * rstd * gv[ch] + bv[ch];
            }
        }
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            Tensor::from_vec(&shape, out)?,
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                stats,
            },
            rg,
        ))
    }

    /// Normalizes each row along the last axis, with optional affine.
    pub fn layer_norm(
        &mut self,
        x: Var,
        gamma: Option<Var>,
        beta: Option<Var>,
        eps: T,
    ) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape
            .last()
            .ok_or_else(|| invalid("layer_norm", "rank-0 input"))?;
        for p in gamma.iter().chain(beta.iter()) {
            if self.shape(*p) != [d] {
                return Err(mismatch("layer_norm", self.shape(*p), &[d]));
            }
        }
        let xv = self.value(x).data();
        let gv = gamma.map(|g| self.value(g).data());
        let bv = beta.map(|b| self.value(b).data());
        let mut out = vec![T::zero(); xv.len()];
        let mut stats = Vec::with_capacity(xv.len() / d.max(1));
        for (src, dst) in xv.chunks(d).zip(out.chunks_mut(d)) {
            let (mean, rstd) = norm_stats(src, eps);
            stats.push((mean, rstd));
            for (j, (&s, o)) in src.iter().zip(dst.iter_mut()).enumerate() {
                let mut y = (s - mean) * rstd;
                if let Some(g) = gv {
                    y *= g[j];
                }
                if let Some(b) = bv {
                    y += b[j];
                }
                *o = y;
            }
        }
        let mut deps = vec![x];
        deps.extend(gamma);
        deps.extend(beta);
        let rg = self.rg(&deps);
        Ok(self.push(
            Tensor::from_vec(&shape, out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                stats,
            },
            rg,
        ))
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape
            .last()
            .ok_or_else(|| invalid("softmax", "rank-0 input"))?;
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(d) {
            let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
            let mut s = T::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_vec(&shape, out)?, Op::Softmax(x), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Reorders axes so that output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x);
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= seen.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(invalid("permute", format!("bad permutation {perm:?}")));
        }
        let (data, out_shape) = kernels::permute(self.value(x).data(), shape, perm);
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::from_vec(&out_shape, data)?,
            Op::Permute(x, perm.to_vec()),
            rg,
        ))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(*parts.first().ok_or_else(|| invalid("concat", "no inputs"))?)
            .to_vec();
        if axis >= first.len() {
            return Err(invalid("concat", "axis out of range"));
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            if s.len() != first.len()
                || s.iter()
                    .zip(&first)
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(mismatch("concat", &first, s));
            }
            total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let (outer, inner) = axes_outer_inner(&shape, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let v = self.value(*p);
                let block = v.dim(axis) * inner;
                out.extend_from_slice(&v.data()[o * block..(o + 1) * block]);
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(
            Tensor::from_vec(&shape, out)?,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let src = self.shape(x).to_vec();
        if axis >= src.len() || start + len > src[axis] {
            return Err(invalid("narrow", format!("{start}+{len} on axis {axis} of {src:?}")));
        }
        let (outer, inner) = axes_outer_inner(&src, axis);
        let v = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * src[axis] + start) * inner;
            out.extend_from_slice(&v[base..base + len * inner]);
        }
        let mut shape = src;
        shape[axis] = len;
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::from_vec(&shape, out)?,
            Op::Narrow { x, axis, start },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let s = self.value(x).mean();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// Mean along `axis`; the axis is removed from the output shape.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let src = self.shape(x).to_vec();
        if axis >= src.len() || src[axis] == 0 {
            return Err(invalid("mean_axis", format!("axis {axis} of {src:?}")));
        }
        let (outer, inner) = axes_outer_inner(&src, axis);
        let d = src[axis];
        let v = self.value(x).data();
        let scale = T::one() / T::lit(d as f64);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for k in 0..d {
                let row = &v[(o * d + k) * inner..(o * d + k + 1) * inner];
                for (acc, &r) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc += r * scale;
                }
            }
        }
        let mut shape = src;
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_vec(&shape, out)?, Op::MeanAxis { x, axis }, rg))
    }

    /// Repeats size-1 axes of `x` to reach `shape` (same rank).
    pub fn broadcast_to(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let src = self.shape(x).to_vec();
        if broadcast_shape("broadcast_to", &src, shape)? != shape {
            return Err(mismatch("broadcast_to", &src, shape));
        }
        let sa = kernels::broadcast_strides(&src, shape);
        let zero = vec![0; shape.len()];
        let v = self.value(x).data();
        let mut out = vec![T::zero(); shape.iter().product()];
        kernels::for_each_broadcast(shape, &sa, &zero, |o, a, _| out[o] = v[a]);
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_vec(shape, out)?, Op::BroadcastTo(x), rg))
    }

    /// Mean absolute difference.
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let d = self.sub(pred, target)?;
        let a = self.abs(d);
        Ok(self.mean(a))
    }

    /// Mean squared difference.
    pub fn l2_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let d = self.sub(pred, target)?;
        let a = self.square(d);
        Ok(self.mean(a))
    }

    /// Reverse pass from a scalar node, seeded with `d loss = 1`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(invalid("backward", "loss must be a scalar"));
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::ones(self.shape(loss)));
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            self.backward_node(node, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) -> Result<()> {
        if !self.nodes[v.0].requires_grad {
            return Ok(());
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => {
                *slot = Some(g);
                Ok(())
            }
        }
    }

    fn backward_node(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, reduce_to(g, val(*a).shape()))?;
                self.accumulate(grads, *b, reduce_to(g, val(*b).shape()))?;
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, reduce_to(g, val(*a).shape()))?;
                let nb = reduce_to(g, val(*b).shape()).map(|v| -v);
                self.accumulate(grads, *b, nb)?;
            }
            Op::Mul(a, b) => {
                let out = g.shape();
                let (va, vb) = (val(*a), val(*b));
                let sa = kernels::broadcast_strides(va.shape(), out);
                let sb = kernels::broadcast_strides(vb.shape(), out);
                let gd = g.data();
                if self.requires_grad(*a) {
                    let mut ga = Tensor::zeros(va.shape());
                    let (o, bd) = (ga.data_mut(), vb.data());
                    kernels::for_each_broadcast(out, &sa, &sb, |i, ia, ib| o[ia] += gd[i] * bd[ib]);
                    self.accumulate(grads, *a, ga)?;
                }
                if self.requires_grad(*b) {
                    let mut gb = Tensor::zeros(vb.shape());
                    let (o, ad) = (gb.data_mut(), va.data());
                    kernels::for_each_broadcast(out, &sa, &sb, |i, ia, ib| o[ib] += gd[i] * ad[ia]);
                    self.accumulate(grads, *b, gb)?;
                }
            }
            Op::Scale(a, c) => {
                let c = *c;
                self.accumulate(grads, *a, g.map(|v| v * c))?;
            }
            Op::Offset(a) => self.accumulate(grads, *a, g.clone())?,
            Op::Silu(a) => {
                let d = g.zip_map(val(*a), |gv, x| {
                    let s = T::one() / (T::one() + (-x).exp());
                    gv * s * (T::one() + x * (T::one() - s))
                })?;
                self.accumulate(grads, *a, d)?;
            }
            Op::Relu(a) => {
                let d = g.zip_map(val(*a), |gv, x| if x > T::zero() { gv } else { T::zero() })?;
                self.accumulate(grads, *a, d)?;
            }
            Op::Abs(a) => {
                let d = g.zip_map(val(*a), |gv, x| {
                    if x > T::zero() {
                        gv
                    } else if x < T::zero() {
                        -gv
                    } else {
                        T::zero()
                    }
                })?;
                self.accumulate(grads, *a, d)?;
            }
            Op::Square(a) => {
                let two = T::lit(2.0);
                let d = g.zip_map(val(*a), |gv, x| two * gv * x)?;
                self.accumulate(grads, *a, d)?;
            }
            Op::MatMul { a, b, ta, tb } => self.matmul_backward(*a, *b, *ta, *tb, g, grads)?,
            Op::Conv2d {
                x,
                w,
                bias,
                stride,
                pad,
            } => self.conv2d_backward(*x, *w, *bias, *stride, *pad, g, grads)?,
            Op::ConvT2d {
                x,
                w,
                bias,
                stride,
                pad,
            } => self.conv_t2d_backward(*x, *w, *bias, *stride, *pad, g, grads)?,
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                stats,
            } => {
                let xv = val(*x);
                let shape = xv.shape();
                let c = shape[1];
                let spatial: usize = shape[2..].iter().product();
                let per_group = c / groups * spatial;
                let gam = val(*gamma).data();
                let mut dx = Tensor::zeros(shape);
                let mut dgamma = Tensor::zeros(&[c]);
                let mut dbeta = Tensor::zeros(&[c]);
                let mut dxhat = vec![T::zero(); per_group];
                for (gi, ((src, gsrc), dst)) in xv
                    .data()
                    .chunks(per_group)
                    .zip(g.data().chunks(per_group))
                    .zip(dx.data_mut().chunks_mut(per_group))
                    .enumerate()
                {
                    let (mean, rstd) = stats[gi];
                    let c0 = (gi % groups) * (c / groups);
                    for j in 0..per_group {
                        let ch = c0 + j / spatial;
                        dxhat[j] = gsrc[j] * gam[ch];
                        dgamma.data_mut()[ch] += gsrc[j] * (src[j] - mean) * rstd;
                        dbeta.data_mut()[ch] += gsrc[j];
                    }
                    norm_backward(src, &dxhat, mean, rstd, dst);
                }
                self.accumulate(grads, *x, dx)?;
                self.accumulate(grads, *gamma, dgamma)?;
                self.accumulate(grads, *beta, dbeta)?;
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                stats,
            } => {
                let xv = val(*x);
                let d = *xv.shape().last().unwrap_or(&1);
                let gam = gamma.map(|p| val(p).data());
                let mut dx = Tensor::zeros(xv.shape());
                let mut dgamma = Tensor::zeros(&[d]);
                let mut dbeta = Tensor::zeros(&[d]);
                let mut dxhat = vec![T::zero(); d];
                for (ri, ((src, gsrc), dst)) in xv
                    .data()
                    .chunks(d)
                    .zip(g.data().chunks(d))
                    .zip(dx.data_mut().chunks_mut(d))
                    .enumerate()
                {
                    let (mean, rstd) = stats[ri];
                    for j in 0..d {
                        dxhat[j] = gsrc[j] * gam.map_or(T::one(), |gm| gm[j]);
                        dgamma.data_mut()[j] += gsrc[j] * (src[j] - mean) * rstd;
                        dbeta.data_mut()[j] += gsrc[j];
                    }
                    norm_backward(src, &dxhat, mean, rstd, dst);
                }
                self.accumulate(grads, *x, dx)?;
                if let Some(p) = gamma {
                    self.accumulate(grads, *p, dgamma)?;
                }
                if let Some(p) = beta {
                    self.accumulate(grads, *p, dbeta)?;
                }
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let d = *y.shape().last().unwrap_or(&1);
                let mut dx = Tensor::zeros(y.shape());
                for ((yr, gr), dr) in y
                    .data()
                    .chunks(d)
                    .zip(g.data().chunks(d))
                    .zip(dx.data_mut().chunks_mut(d))
                {
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for ((o, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                        *o = yv * (gv - dot);
                    }
                }
                self.accumulate(grads, *a, dx)?;
            }
            Op::Reshape(a) => {
                let d = g.clone().reshape(val(*a).shape())?;
                self.accumulate(grads, *a, d)?;
            }
            Op::Permute(a, perm) => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                let (data, shape) = kernels::permute(g.data(), g.shape(), &inv);
                self.accumulate(grads, *a, Tensor::from_vec(&shape, data)?)?;
            }
            Op::Concat { parts, axis } => {
                let (outer, inner) = axes_outer_inner(g.shape(), *axis);
                let total = g.shape()[*axis];
                let mut offset = 0;
                for p in parts {
                    let shape = val(*p).shape();
                    let d = shape[*axis];
                    if self.requires_grad(*p) {
                        let mut gp = Vec::with_capacity(outer * d * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            gp.extend_from_slice(&g.data()[base..base + d * inner]);
                        }
                        self.accumulate(grads, *p, Tensor::from_vec(shape, gp)?)?;
                    }
                    offset += d;
                }
            }
            Op::Narrow { x, axis, start } => {
                let shape = val(*x).shape();
                let (outer, inner) = axes_outer_inner(shape, *axis);
                let len = g.shape()[*axis];
                let mut dx = Tensor::zeros(shape);
                for o in 0..outer {
                    let dst = (o * shape[*axis] + start) * inner;
                    let src = o * len * inner;
                    dx.data_mut()[dst..dst + len * inner]
                        .copy_from_slice(&g.data()[src..src + len * inner]);
                }
                self.accumulate(grads, *x, dx)?;
            }
            Op::Sum(a) => {
                let s = g.data()[0];
                self.accumulate(grads, *a, Tensor::full(val(*a).shape(), s))?;
            }
            Op::Mean(a) => {
                let v = val(*a);
                let s = g.data()[0] / T::lit(v.len().max(1) as f64);
                self.accumulate(grads, *a, Tensor::full(v.shape(), s))?;
            }
            Op::MeanAxis { x, axis } => {
                let shape = val(*x).shape();
                let (outer, inner) = axes_outer_inner(shape, *axis);
                let d = shape[*axis];
                let scale = T::one() / T::lit(d as f64);
                let mut dx = Tensor::zeros(shape);
                for o in 0..outer {
                    let src = &g.data()[o * inner..(o + 1) * inner];
                    for k in 0..d {
                        let dst = &mut dx.data_mut()[(o * d + k) * inner..(o * d + k + 1) * inner];
                        for (t, &s) in dst.iter_mut().zip(src) {
                            *t = s * scale;
                        }
                    }
                }
                self.accumulate(grads, *x, dx)?;
            }
            Op::BroadcastTo(a) => {
                self.accumulate(grads, *a, reduce_to(g, val(*a).shape()))?;
            }
        }
        Ok(())
    }

    fn matmul_backward(
        &self,
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        let (va, vb) = (self.value(a), self.value(b));
        let (batch, m, k, n) = check_matmul(va.shape(), vb.shape(), ta, tb)?;
        let gd = g.data();
        if self.requires_grad(a) {
            let mut da = vec![T::zero(); batch * m * k];
            for bi in 0..batch {
                let gb = &gd[bi * m * n..];
                let bb = &vb.data()[bi * k * n..];
                let out = &mut da[bi * m * k..(bi + 1) * m * k];
                if ta {
                    kernels::gemm(k, n, m, T::one(), bb, tb, gb, true, T::zero(), out);
                } else {
                    kernels::gemm(m, n, k, T::one(), gb, false, bb, !tb, T::zero(), out);
                }
            }
            self.accumulate(grads, a, Tensor::from_vec(va.shape(), da)?)?;
        }
        if self.requires_grad(b) {
            let mut db = vec![T::zero(); batch * k * n];
            for bi in 0..batch {
                let gb = &gd[bi * m * n..];
                let ab = &va.data()[bi * m * k..];
                let out = &mut db[bi * k * n..(bi + 1) * k * n];
                if tb {
                    kernels::gemm(n, m, k, T::one(), gb, true, ab, ta, T::zero(), out);
                } else {
                    kernels::gemm(k, m, n, T::one(), ab, !ta, gb, false, T::zero(), out);
                }
            }
            self.accumulate(grads, b, Tensor::from_vec(vb.shape(), db)?)?;
        }
        Ok(())
    }

    fn bias_grad(g: &Tensor<T>) -> Tensor<T> {
        let s = g.shape();
        let (c, plane) = (s[1], s[2] * s[3]);
        let mut db = Tensor::zeros(&[c]);
        for (i, chunk) in g.data().chunks(plane).enumerate() {
            db.data_mut()[i % c] += chunk.iter().copied().sum::<T>();
        }
        db
    }

    #[allow(clippy::too_many_arguments)]
    fn conv2d_backward(
        &self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        let (xv, wv) = (self.value(x), self.value(w));
        let [n, c, h, wd] = [xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3)];
        let o = wv.dim(0);
        let geom = ConvGeom::new(c, h, wd, wv.dim(2), wv.dim(3), stride, pad)
            .ok_or_else(|| invalid("conv2d", "geometry"))?;
        let (rows, plane) = (geom.col_rows(), geom.col_cols());
        let need_x = self.requires_grad(x);
        let need_w = self.requires_grad(w);
        let mut dx = if need_x { vec![T::zero(); xv.len()] } else { Vec::new() };
        let mut dw = if need_w { vec![T::zero(); wv.len()] } else { Vec::new() };
        let mut cols = vec![T::zero(); if geom.is_pointwise() { 0 } else { rows * plane }];
        let mut dcols = vec![T::zero(); if need_x { rows * plane } else { 0 }];
        let img_len = c * h * wd;
        for bi in 0..n {
            let gout = &g.data()[bi * o * plane..(bi + 1) * o * plane];
            if need_w {
                let img = &xv.data()[bi * img_len..(bi + 1) * img_len];
                let src: &[T] = if geom.is_pointwise() {
                    img
                } else {
                    kernels::im2col(img, &geom, &mut cols);
                    &cols
                };
                kernels::gemm(o, plane, rows, T::one(), gout, false, src, true, T::one(), &mut dw);
            }
            if need_x {
                let dimg = &mut dx[bi * img_len..(bi + 1) * img_len];
                if geom.is_pointwise() {
                    kernels::gemm(rows, o, plane, T::one(), wv.data(), true, gout, false, T::zero(), dimg);
                } else {
                    kernels::gemm(rows, o, plane, T::one(), wv.data(), true, gout, false, T::zero(), &mut dcols);
                    kernels::col2im(&dcols, &geom, dimg);
                }
            }
        }
        if need_x {
            self.accumulate(grads, x, Tensor::from_vec(xv.shape(), dx)?)?;
        }
        if need_w {
            self.accumulate(grads, w, Tensor::from_vec(wv.shape(), dw)?)?;
        }
        if let Some(b) = bias {
            self.accumulate(grads, b, Self::bias_grad(g))?;
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_t2d_backward(
        &self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        let (xv, wv) = (self.value(x), self.value(w));
        let [n, ci, h, wd] = [xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3)];
        let (co, oh, ow) = (g.dim(1), g.dim(2), g.dim(3));
        let geom = ConvGeom::new(co, oh, ow, wv.dim(2), wv.dim(3), stride, pad)
            .ok_or_else(|| invalid("conv_transpose2d", "geometry"))?;
        let (rows, plane) = (geom.col_rows(), geom.col_cols());
        debug_assert_eq!(plane, h * wd);
        let need_x = self.requires_grad(x);
        let need_w = self.requires_grad(w);
        let mut dx = if need_x { vec![T::zero(); xv.len()] } else { Vec::new() };
        let mut dw = if need_w { vec![T::zero(); wv.len()] } else { Vec::new() };
        let mut dcols = vec![T::zero(); rows * plane];
        for bi in 0..n {
            let gout = &g.data()[bi * co * oh * ow..(bi + 1) * co * oh * ow];
            kernels::im2col(gout, &geom, &mut dcols);
            if need_x {
                let out = &mut dx[bi * ci * plane..(bi + 1) * ci * plane];
                kernels::gemm(ci, rows, plane, T::one(), wv.data(), false, &dcols, false, T::zero(), out);
            }
            if need_w {
                let img = &xv.data()[bi * ci * plane..(bi + 1) * ci * plane];
                kernels::gemm(ci, plane, rows, T::one(), img, false, &dcols, true, T::one(), &mut dw);
            }
        }
        if need_x {
            self.accumulate(grads, x, Tensor::from_vec(xv.shape(), dx)?)?;
        }
        if need_w {
            self.accumulate(grads, w, Tensor::from_vec(wv.shape(), dw)?)?;
        }
        if let Some(b) = bias {
            self.accumulate(grads, b, Self::bias_grad(g))?;
        }
        Ok(())
    }
}
