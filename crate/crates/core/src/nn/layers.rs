use rand::Rng;

use super::tensor::{axpy, dot, Tensor};
use crate::scalar::Scalar;

pub const NORM_EPS: f64 = 1e-5;

/// Named-parameter traversal in a fixed canonical order.
pub trait Params<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>);
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>);
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

macro_rules! impl_params {
    ($ty:ident { $($field:ident),* }) => {
        impl<T> Params<T> for $ty<T> {
            fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
                $( out.push((join(prefix, stringify!($field)), &self.$field)); )*
            }
            fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
                $( out.push((join(prefix, stringify!($field)), &mut self.$field)); )*
            }
        }
    };
}

pub(crate) fn child(prefix: &str, name: &str) -> String {
    join(prefix, name)
}

/// Affine map applied independently to each row: `y = W x + b`, `W: [out, in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}
impl_params!(Linear { weight, bias });

impl<T: Scalar> Linear<T> {
    pub fn new<R: Rng>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        Linear {
            weight: Tensor::uniform(&[output, input], bound, rng),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Linear {
            weight: Tensor::zeros(&[output, input]),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Linear::zeros(self.input_dim(), self.output_dim())
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape[0]
    }

    /// `x: [rows, in]` -> `[rows, out]`.
    pub fn forward(&self, x: &[T]) -> Vec<T> {
        let (n_in, n_out) = (self.input_dim(), self.output_dim());
        let rows = x.len() / n_in;
        let mut y = Vec::with_capacity(rows * n_out);
        for r in 0..rows {
            let xr = &x[r * n_in..(r + 1) * n_in];
            for o in 0..n_out {
                y.push(self.bias.data[o] + dot(self.weight.row(o), xr));
            }
        }
        y
    }

    /// Accumulates parameter gradients into `grad` (if any) and returns `dx`
    /// when `need_dx`.
    pub fn backward(&self, x: &[T], dy: &[T], grad: Option<&mut Linear<T>>, need_dx: bool) -> Vec<T> {
        let (n_in, n_out) = (self.input_dim(), self.output_dim());
        let rows = x.len() / n_in;
        if let Some(g) = grad {
            for r in 0..rows {
                let xr = &x[r * n_in..(r + 1) * n_in];
                for o in 0..n_out {
                    let d = dy[r * n_out + o];
                    if d != T::zero() {
                        axpy(d, xr, g.weight.row_mut(o));
                        g.bias.data[o] += d;
                    }
                }
            }
        }
        if !need_dx {
            return Vec::new();
        }
        let mut dx = vec![T::zero(); x.len()];
        for r in 0..rows {
            let dxr = &mut dx[r * n_in..(r + 1) * n_in];
            for o in 0..n_out {
                let d = dy[r * n_out + o];
                if d != T::zero() {
                    axpy(d, self.weight.row(o), dxr);
                }
            }
        }
        dx
    }
}

/// 3x3 convolution with zero padding on the 8x8 board. `weight: [out, in * 9]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv3x3<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}
impl_params!(Conv3x3 { weight, bias });

/// Lowers `[c, 64]` to `[c * 9, 64]` patches.
pub fn im2col<T: Scalar>(x: &[T], channels: usize) -> Vec<T> {
    let mut col = vec![T::zero(); channels * 9 * 64];
    for c in 0..channels {
        let plane = &x[c * 64..(c + 1) * 64];
        for ky in 0..3 {
            for kx in 0..3 {
                let k = c * 9 + ky * 3 + kx;
                let dst = &mut col[k * 64..(k + 1) * 64];
                for r in 0..8i32 {
                    let sr = r + ky as i32 - 1;
                    if !(0..8).contains(&sr) {
                        continue;
                    }
                    for f in 0..8i32 {
                        let sf = f + kx as i32 - 1;
                        if (0..8).contains(&sf) {
                            dst[(r * 8 + f) as usize] = plane[(sr * 8 + sf) as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

fn col2im<T: Scalar>(col: &[T], channels: usize) -> Vec<T> {
    let mut x = vec![T::zero(); channels * 64];
    for c in 0..channels {
        for ky in 0..3 {
            for kx in 0..3 {
                let k = c * 9 + ky * 3 + kx;
                let src = &col[k * 64..(k + 1) * 64];
                for r in 0..8i32 {
                    let sr = r + ky as i32 - 1;
                    if !(0..8).contains(&sr) {
                        continue;
                    }
                    for f in 0..8i32 {
                        let sf = f + kx as i32 - 1;
                        if (0..8).contains(&sf) {
                            x[c * 64 + (sr * 8 + sf) as usize] += src[(r * 8 + f) as usize];
                        }
                    }
                }
            }
        }
    }
    x
}

impl<T: Scalar> Conv3x3<T> {
    pub fn new<R: Rng>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = 1.0 / ((input * 9) as f64).sqrt();
        Conv3x3 {
            weight: Tensor::uniform(&[output, input * 9], bound, rng),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Conv3x3 {
            weight: self.weight.zeros_like(),
            bias: self.bias.zeros_like(),
        }
    }

    pub fn input_channels(&self) -> usize {
        self.weight.shape[1] / 9
    }

    pub fn output_channels(&self) -> usize {
        self.weight.shape[0]
    }

    /// Returns `(output [out, 64], im2col cache)`.
    pub fn forward(&self, x: &[T]) -> (Vec<T>, Vec<T>) {
        let cin = self.input_channels();
        let col = im2col(x, cin);
        let k_len = cin * 9;
        let mut y = vec![T::zero(); self.output_channels() * 64];
        for (co, out) in y.chunks_exact_mut(64).enumerate() {
            out.iter_mut().for_each(|v| *v = self.bias.data[co]);
            let w = self.weight.row(co);
            for k in 0..k_len {
                let wk = w[k];
                if wk != T::zero() {
                    axpy(wk, &col[k * 64..(k + 1) * 64], out);
                }
            }
        }
        (y, col)
    }

    pub fn backward(&self, col: &[T], dy: &[T], grad: Option<&mut Conv3x3<T>>, need_dx: bool) -> Vec<T> {
        let cin = self.input_channels();
        let k_len = cin * 9;
        if let Some(g) = grad {
            for (co, d) in dy.chunks_exact(64).enumerate() {
                g.bias.data[co] += d.iter().copied().sum::<T>();
                let gw = g.weight.row_mut(co);
                for k in 0..k_len {
                    gw[k] += dot(d, &col[k * 64..(k + 1) * 64]);
                }
            }
        }
        if !need_dx {
            return Vec::new();
        }
        let mut dcol = vec![T::zero(); col.len()];
        for (co, d) in dy.chunks_exact(64).enumerate() {
            let w = self.weight.row(co);
            for k in 0..k_len {
                axpy(w[k], d, &mut dcol[k * 64..(k + 1) * 64]);
            }
        }
        col2im(&dcol, cin)
    }
}

/// Normalized values and inverse standard deviations kept for backward.
#[derive(Clone, Debug)]
pub struct NormCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

/// Normalizes `values` in `groups` contiguous chunks.
fn normalize_chunks<T: Scalar>(x: &[T], chunk: usize) -> NormCache<T> {
    let eps = T::of(NORM_EPS);
    let n = T::of(chunk as f64);
    let mut xhat = Vec::with_capacity(x.len());
    let mut inv_std = Vec::with_capacity(x.len() / chunk);
    for c in x.chunks_exact(chunk) {
        let mean = c.iter().copied().sum::<T>() / n;
        let var = c.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let inv = T::one() / (var + eps).sqrt();
        xhat.extend(c.iter().map(|&v| (v - mean) * inv));
        inv_std.push(inv);
    }
    NormCache { xhat, inv_std }
}

/// Backward through chunk normalization given `dxhat`.
fn normalize_chunks_backward<T: Scalar>(cache: &NormCache<T>, dxhat: &[T], chunk: usize) -> Vec<T> {
    let n = T::of(chunk as f64);
    let mut dx = Vec::with_capacity(dxhat.len());
    for ((dh, xh), &inv) in dxhat.chunks_exact(chunk).zip(cache.xhat.chunks_exact(chunk)).zip(&cache.inv_std) {
        let sum_d = dh.iter().copied().sum::<T>();
        let sum_dx = dot(dh, xh);
        for (&d, &h) in dh.iter().zip(xh) {
            dx.push(inv * (n * d - sum_d - h * sum_dx) / n);
        }
    }
    dx
}

/// Group normalization over `[c, 64]` maps with a per-channel affine.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupNorm<T> {
    pub scale: Tensor<T>,
    pub offset: Tensor<T>,
    groups: usize,
}

impl<T> Params<T> for GroupNorm<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        out.push((join(prefix, "scale"), &self.scale));
        out.push((join(prefix, "offset"), &self.offset));
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        out.push((join(prefix, "scale"), &mut self.scale));
        out.push((join(prefix, "offset"), &mut self.offset));
    }
}

/// Largest divisor of `channels` not exceeding 8.
pub fn norm_groups(channels: usize) -> usize {
    (1..=8.min(channels)).rev().find(|g| channels % g == 0).unwrap_or(1)
}

impl<T: Scalar> GroupNorm<T> {
    pub fn new(channels: usize) -> Self {
        GroupNorm {
            scale: Tensor::filled(&[channels], T::one()),
            offset: Tensor::zeros(&[channels]),
            groups: norm_groups(channels),
        }
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }

    fn group_len(&self) -> usize {
        self.channels() / self.groups.max(1) * 64
    }

    pub fn forward(&self, x: &[T]) -> (Vec<T>, NormCache<T>) {
        let cache = normalize_chunks(x, self.group_len());
        let mut y = cache.xhat.clone();
        for (c, plane) in y.chunks_exact_mut(64).enumerate() {
            let (s, o) = (self.scale.data[c], self.offset.data[c]);
            plane.iter_mut().for_each(|v| *v = *v * s + o);
        }
        (y, cache)
    }

    pub fn backward(&self, cache: &NormCache<T>, dy: &[T], grad: Option<&mut GroupNorm<T>>) -> Vec<T> {
        if let Some(g) = grad {
            for c in 0..self.channels() {
                let d = &dy[c * 64..(c + 1) * 64];
                g.scale.data[c] += dot(d, &cache.xhat[c * 64..(c + 1) * 64]);
                g.offset.data[c] += d.iter().copied().sum::<T>();
            }
        }
        let mut dxhat = dy.to_vec();
        for (c, plane) in dxhat.chunks_exact_mut(64).enumerate() {
            let s = self.scale.data[c];
            plane.iter_mut().for_each(|v| *v *= s);
        }
        normalize_chunks_backward(cache, &dxhat, self.group_len())
    }

    pub fn zeros_like(&self) -> Self {
        GroupNorm {
            scale: self.scale.zeros_like(),
            offset: self.offset.zeros_like(),
            groups: self.groups,
        }
    }
}

/// Layer normalization over the last dimension of `[rows, dim]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm<T> {
    pub scale: Tensor<T>,
    pub offset: Tensor<T>,
}
impl_params!(LayerNorm { scale, offset });

impl<T: Scalar> LayerNorm<T> {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            scale: Tensor::filled(&[dim], T::one()),
            offset: Tensor::zeros(&[dim]),
        }
    }

    pub fn zeros_like(&self) -> Self {
        LayerNorm {
            scale: self.scale.zeros_like(),
            offset: self.offset.zeros_like(),
        }
    }

    pub fn forward(&self, x: &[T]) -> (Vec<T>, NormCache<T>) {
        let dim = self.scale.len();
        let cache = normalize_chunks(x, dim);
        let mut y = cache.xhat.clone();
        for row in y.chunks_exact_mut(dim) {
            for ((v, &s), &o) in row.iter_mut().zip(&self.scale.data).zip(&self.offset.data) {
                *v = *v * s + o;
            }
        }
        (y, cache)
    }

    pub fn backward(&self, cache: &NormCache<T>, dy: &[T], grad: Option<&mut LayerNorm<T>>) -> Vec<T> {
        let dim = self.scale.len();
        if let Some(g) = grad {
            for (d, h) in dy.chunks_exact(dim).zip(cache.xhat.chunks_exact(dim)) {
                for i in 0..dim {
                    g.scale.data[i] += d[i] * h[i];
                    g.offset.data[i] += d[i];
                }
            }
        }
        let mut dxhat = dy.to_vec();
        for row in dxhat.chunks_exact_mut(dim) {
            for (v, &s) in row.iter_mut().zip(&self.scale.data) {
                *v *= s;
            }
        }
        normalize_chunks_backward(cache, &dxhat, dim)
    }
}

pub fn relu<T: Scalar>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| v.max(T::zero())).collect()
}

/// Gradient through a rectifier given its input.
pub fn relu_backward<T: Scalar>(x: &[T], dy: &[T]) -> Vec<T> {
    x.iter().zip(dy).map(|(&v, &d)| if v > T::zero() { d } else { T::zero() }).collect()
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

/// Tanh approximation of GELU.
pub fn gelu<T: Scalar>(x: &[T]) -> Vec<T> {
    let (c, a, half) = (T::of(GELU_C), T::of(0.044715), T::of(0.5));
    x.iter()
        .map(|&v| half * v * (T::one() + (c * (v + a * v * v * v)).tanh()))
        .collect()
}

pub fn gelu_backward<T: Scalar>(x: &[T], dy: &[T]) -> Vec<T> {
    let (c, a, half) = (T::of(GELU_C), T::of(0.044715), T::of(0.5));
    let three_a = T::of(3.0 * 0.044715);
    x.iter()
        .zip(dy)
        .map(|(&v, &d)| {
            let t = (c * (v + a * v * v * v)).tanh();
            let dt = (T::one() - t * t) * c * (T::one() + three_a * v * v);
            d * (half * (T::one() + t) + half * v * dt)
        })
        .collect()
}
