use rand::Rng;

use super::layers::{child, gelu, gelu_backward, LayerNorm, Linear, NormCache, Params};
use super::tensor::{axpy, dot, softmax_in_place, Tensor};
use crate::scalar::Scalar;

/// Post-norm transformer block: multi-head self-attention with Add & Norm,
/// then a GELU feed-forward with Add & Norm.
///
/// An optional prefix token joins the key/value sequence and is dropped
/// from the output, so the output length always equals the input length.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionBlock<T> {
    pub query: Linear<T>,
    pub key: Linear<T>,
    pub value: Linear<T>,
    pub out: Linear<T>,
    pub norm1: LayerNorm<T>,
    pub ffn1: Linear<T>,
    pub ffn2: Linear<T>,
    pub norm2: LayerNorm<T>,
    pub heads: usize,
}

impl<T> Params<T> for AttentionBlock<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        self.query.visit(&child(prefix, "query"), out);
        self.key.visit(&child(prefix, "key"), out);
        self.value.visit(&child(prefix, "value"), out);
        self.out.visit(&child(prefix, "out"), out);
        self.norm1.visit(&child(prefix, "norm1"), out);
        self.ffn1.visit(&child(prefix, "ffn1"), out);
        self.ffn2.visit(&child(prefix, "ffn2"), out);
        self.norm2.visit(&child(prefix, "norm2"), out);
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        self.query.visit_mut(&child(prefix, "query"), out);
        self.key.visit_mut(&child(prefix, "key"), out);
        self.value.visit_mut(&child(prefix, "value"), out);
        self.out.visit_mut(&child(prefix, "out"), out);
        self.norm1.visit_mut(&child(prefix, "norm1"), out);
        self.ffn1.visit_mut(&child(prefix, "ffn1"), out);
        self.ffn2.visit_mut(&child(prefix, "ffn2"), out);
        self.norm2.visit_mut(&child(prefix, "norm2"), out);
    }
}

pub struct AttentionCache<T> {
    x: Vec<T>,
    seq: Vec<T>,
    prefix_rows: usize,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    /// `[heads, n, seq_len]`
    probs: Vec<T>,
    ctx: Vec<T>,
    norm1: NormCache<T>,
    h1: Vec<T>,
    f1: Vec<T>,
    g: Vec<T>,
    norm2: NormCache<T>,
}

impl<T: Scalar> AttentionBlock<T> {
    pub fn new<R: Rng>(dim: usize, heads: usize, ffn_dim: usize, rng: &mut R) -> Self {
        AttentionBlock {
            query: Linear::new(dim, dim, rng),
            key: Linear::new(dim, dim, rng),
            value: Linear::new(dim, dim, rng),
            out: Linear::new(dim, dim, rng),
            norm1: LayerNorm::new(dim),
            ffn1: Linear::new(dim, ffn_dim, rng),
            ffn2: Linear::new(ffn_dim, dim, rng),
            norm2: LayerNorm::new(dim),
            heads,
        }
    }

    pub fn dim(&self) -> usize {
        self.query.output_dim()
    }

    pub fn zeros_like(&self) -> Self {
        AttentionBlock {
            query: self.query.zeros_like(),
            key: self.key.zeros_like(),
            value: self.value.zeros_like(),
            out: self.out.zeros_like(),
            norm1: self.norm1.zeros_like(),
            ffn1: self.ffn1.zeros_like(),
            ffn2: self.ffn2.zeros_like(),
            norm2: self.norm2.zeros_like(),
            heads: self.heads,
        }
    }

    /// `x: [n, dim]`, `prefix: [dim]` -> `[n, dim]`.
    pub fn forward(&self, x: &[T], prefix: Option<&[T]>) -> (Vec<T>, AttentionCache<T>) {
        let dim = self.dim();
        let n = x.len() / dim;
        let prefix_rows = usize::from(prefix.is_some());
        let mut seq = Vec::with_capacity((n + prefix_rows) * dim);
        if let Some(p) = prefix {
            seq.extend_from_slice(p);
        }
        seq.extend_from_slice(x);
        let s_len = n + prefix_rows;

        let q = self.query.forward(x);
        let k = self.key.forward(&seq);
        let v = self.value.forward(&seq);

        let hd = dim / self.heads;
        let scale = T::one() / T::of(hd as f64).sqrt();
        let mut probs = vec![T::zero(); self.heads * n * s_len];
        let mut ctx = vec![T::zero(); n * dim];
        for h in 0..self.heads {
            let off = h * hd;
            for i in 0..n {
                let qi = &q[i * dim + off..i * dim + off + hd];
                let row = &mut probs[(h * n + i) * s_len..(h * n + i + 1) * s_len];
                for (j, p) in row.iter_mut().enumerate() {
                    *p = dot(qi, &k[j * dim + off..j * dim + off + hd]) * scale;
                }
                softmax_in_place(row);
                let ci = &mut ctx[i * dim + off..i * dim + off + hd];
                for (j, &p) in row.iter().enumerate() {
                    axpy(p, &v[j * dim + off..j * dim + off + hd], ci);
                }
            }
        }
        let a = self.out.forward(&ctx);
        let r1: Vec<T> = x.iter().zip(&a).map(|(&u, &w)| u + w).collect();
        let (h1, norm1) = self.norm1.forward(&r1);
        let f1 = self.ffn1.forward(&h1);
        let g = gelu(&f1);
        let f2 = self.ffn2.forward(&g);
        let r2: Vec<T> = h1.iter().zip(&f2).map(|(&u, &w)| u + w).collect();
        let (y, norm2) = self.norm2.forward(&r2);
        let cache = AttentionCache {
            x: x.to_vec(),
            seq,
            prefix_rows,
            q,
            k,
            v,
            probs,
            ctx,
            norm1,
            h1,
            f1,
            g,
            norm2,
        };
        (y, cache)
    }

    /// Returns `(dx, dprefix)`; `dprefix` is empty without a prefix token.
    pub fn backward(&self, cache: &AttentionCache<T>, dy: &[T], mut grad: Option<&mut AttentionBlock<T>>) -> (Vec<T>, Vec<T>) {
        let dim = self.dim();
        let n = cache.x.len() / dim;
        let s_len = n + cache.prefix_rows;
        let hd = dim / self.heads;
        let scale = T::one() / T::of(hd as f64).sqrt();

        let dr2 = self.norm2.backward(&cache.norm2, dy, grad.as_deref_mut().map(|g| &mut g.norm2));
        let dg = self.ffn2.backward(&cache.g, &dr2, grad.as_deref_mut().map(|g| &mut g.ffn2), true);
        let df1 = gelu_backward(&cache.f1, &dg);
        let mut dh1 = self.ffn1.backward(&cache.h1, &df1, grad.as_deref_mut().map(|g| &mut g.ffn1), true);
        axpy(T::one(), &dr2, &mut dh1);
        let dr1 = self.norm1.backward(&cache.norm1, &dh1, grad.as_deref_mut().map(|g| &mut g.norm1));
        let dctx = self.out.backward(&cache.ctx, &dr1, grad.as_deref_mut().map(|g| &mut g.out), true);

        let mut dq = vec![T::zero(); n * dim];
        let mut dk = vec![T::zero(); s_len * dim];
        let mut dv = vec![T::zero(); s_len * dim];
        let mut dp = vec![T::zero(); s_len];
        for h in 0..self.heads {
            let off = h * hd;
            for i in 0..n {
                let p = &cache.probs[(h * n + i) * s_len..(h * n + i + 1) * s_len];
                let dci = &dctx[i * dim + off..i * dim + off + hd];
                for j in 0..s_len {
                    dp[j] = dot(dci, &cache.v[j * dim + off..j * dim + off + hd]);
                    axpy(p[j], dci, &mut dv[j * dim + off..j * dim + off + hd]);
                }
                let weighted: T = p.iter().zip(&dp).map(|(&a, &b)| a * b).sum();
                let qi = &cache.q[i * dim + off..i * dim + off + hd];
                for j in 0..s_len {
                    let ds = p[j] * (dp[j] - weighted) * scale;
                    if ds != T::zero() {
                        axpy(ds, &cache.k[j * dim + off..j * dim + off + hd], &mut dq[i * dim + off..i * dim + off + hd]);
                        axpy(ds, qi, &mut dk[j * dim + off..j * dim + off + hd]);
                    }
                }
            }
        }
        let mut dx = self.query.backward(&cache.x, &dq, grad.as_deref_mut().map(|g| &mut g.query), true);
        let mut dseq = self.key.backward(&cache.seq, &dk, grad.as_deref_mut().map(|g| &mut g.key), true);
        let dseq_v = self.value.backward(&cache.seq, &dv, grad.as_deref_mut().map(|g| &mut g.value), true);
        axpy(T::one(), &dseq_v, &mut dseq);
        axpy(T::one(), &dr1, &mut dx);
        let split = cache.prefix_rows * dim;
        axpy(T::one(), &dseq[split..], &mut dx);
        (dx, dseq[..split].to_vec())
    }
}
