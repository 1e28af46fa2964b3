use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::config::ModelConfig;
use crate::chess::{encode_position, vocabulary, MoveLabel, Position, INPUT_LEN};
use crate::error::{Error, Result};
use crate::nn::attention::{AttentionBlock, AttentionCache};
use crate::nn::layers::{child, relu, relu_backward, Conv3x3, GroupNorm, Linear, NormCache, Params};
use crate::nn::tensor::{argmax, Tensor};
use crate::scalar::Scalar;

/// Pre-activation residual block: `x + conv(relu(norm(conv(relu(norm(x))))))`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResBlock<T> {
    pub norm1: GroupNorm<T>,
    pub conv1: Conv3x3<T>,
    pub norm2: GroupNorm<T>,
    pub conv2: Conv3x3<T>,
}

/// Convolutional position encoder: input convolution, residual blocks and a
/// final norm + rectifier. Also used as the frozen feature tower of the
/// prototype matcher.
#[derive(Clone, Debug, PartialEq)]
pub struct Backbone<T> {
    pub input: Conv3x3<T>,
    pub blocks: Vec<ResBlock<T>>,
    pub norm: GroupNorm<T>,
}

/// Skill projection feeding one transformer block's prefix token.
#[derive(Clone, Debug, PartialEq)]
pub struct SkillBlock<T> {
    pub skill: Linear<T>,
    pub attention: AttentionBlock<T>,
}

/// Universal parameters of the policy network (embedding tables excluded).
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState<T> {
    pub config: ModelConfig,
    pub backbone: Backbone<T>,
    pub patch: Linear<T>,
    pub blocks: Vec<SkillBlock<T>>,
    pub head: Linear<T>,
}

impl<T> Params<T> for ResBlock<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        self.norm1.visit(&child(prefix, "norm1"), out);
        self.conv1.visit(&child(prefix, "conv1"), out);
        self.norm2.visit(&child(prefix, "norm2"), out);
        self.conv2.visit(&child(prefix, "conv2"), out);
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        self.norm1.visit_mut(&child(prefix, "norm1"), out);
        self.conv1.visit_mut(&child(prefix, "conv1"), out);
        self.norm2.visit_mut(&child(prefix, "norm2"), out);
        self.conv2.visit_mut(&child(prefix, "conv2"), out);
    }
}

impl<T> Params<T> for Backbone<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        self.input.visit(&child(prefix, "input"), out);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&child(prefix, &format!("res.{i}")), out);
        }
        self.norm.visit(&child(prefix, "norm"), out);
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        self.input.visit_mut(&child(prefix, "input"), out);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&child(prefix, &format!("res.{i}")), out);
        }
        self.norm.visit_mut(&child(prefix, "norm"), out);
    }
}

impl<T> Params<T> for ModelState<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        self.backbone.visit(&child(prefix, "backbone"), out);
        self.patch.visit(&child(prefix, "patch"), out);
        for (i, b) in self.blocks.iter().enumerate() {
            let p = child(prefix, &format!("blocks.{i}"));
            b.skill.visit(&child(&p, "skill"), out);
            b.attention.visit(&child(&p, "attention"), out);
        }
        self.head.visit(&child(prefix, "head"), out);
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        self.backbone.visit_mut(&child(prefix, "backbone"), out);
        self.patch.visit_mut(&child(prefix, "patch"), out);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let p = child(prefix, &format!("blocks.{i}"));
            b.skill.visit_mut(&child(&p, "skill"), out);
            b.attention.visit_mut(&child(&p, "attention"), out);
        }
        self.head.visit_mut(&child(prefix, "head"), out);
    }
}

/// Hex SHA-256 over `(name, shape, little-endian values)` in canonical order.
pub fn checksum_tensors<T: Scalar>(tensors: &[(String, &Tensor<T>)]) -> String {
    let mut h = Sha256::new();
    let mut buf = Vec::new();
    for (name, t) in tensors {
        h.update(name.as_bytes());
        for s in &t.shape {
            h.update((*s as u64).to_le_bytes());
        }
        buf.clear();
        for &x in &t.data {
            x.extend_le_bytes(&mut buf);
        }
        h.update(&buf);
    }
    hex::encode(h.finalize())
}

struct ResCache<T> {
    n1: NormCache<T>,
    t1: Vec<T>,
    col1: Vec<T>,
    n2: NormCache<T>,
    t2: Vec<T>,
    col2: Vec<T>,
}

pub struct BackboneCache<T> {
    input_col: Vec<T>,
    blocks: Vec<ResCache<T>>,
    norm: NormCache<T>,
    pre_relu: Vec<T>,
}

impl<T: Scalar> Backbone<T> {
    fn new(config: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        Backbone {
            input: Conv3x3::new(config.c_input, config.c_mid, rng),
            blocks: (0..config.k_conv)
                .map(|_| ResBlock {
                    norm1: GroupNorm::new(config.c_mid),
                    conv1: Conv3x3::new(config.c_mid, config.c_mid, rng),
                    norm2: GroupNorm::new(config.c_mid),
                    conv2: Conv3x3::new(config.c_mid, config.c_mid, rng),
                })
                .collect(),
            norm: GroupNorm::new(config.c_mid),
        }
    }

    fn zeros_like(&self) -> Self {
        Backbone {
            input: self.input.zeros_like(),
            blocks: self
                .blocks
                .iter()
                .map(|b| ResBlock {
                    norm1: b.norm1.zeros_like(),
                    conv1: b.conv1.zeros_like(),
                    norm2: b.norm2.zeros_like(),
                    conv2: b.conv2.zeros_like(),
                })
                .collect(),
            norm: self.norm.zeros_like(),
        }
    }

    pub fn channels(&self) -> usize {
        self.input.output_channels()
    }

    /// `x: [18 * 64]` -> `[c_mid * 64]`.
    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: &[T]) -> Result<(Vec<T>, BackboneCache<T>)> {
        if x.len() != INPUT_LEN {
            return Err(Error::Shape(format!("backbone input has {} values, expected {INPUT_LEN}", x.len())));
        }
        let (mut h, input_col) = self.input.forward(x);
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (t1, n1) = b.norm1.forward(&h);
            let (c1, col1) = b.conv1.forward(&relu(&t1));
            let (t2, n2) = b.norm2.forward(&c1);
            let (c2, col2) = b.conv2.forward(&relu(&t2));
            for (hv, cv) in h.iter_mut().zip(&c2) {
                *hv += *cv;
            }
            blocks.push(ResCache { n1, t1, col1, n2, t2, col2 });
        }
        let (pre_relu, norm) = self.norm.forward(&h);
        let out = relu(&pre_relu);
        Ok((out, BackboneCache { input_col, blocks, norm, pre_relu }))
    }

    pub fn backward(&self, cache: &BackboneCache<T>, dout: &[T], mut grad: Option<&mut Backbone<T>>) {
        let dpre = relu_backward(&cache.pre_relu, dout);
        let mut dh = self.norm.backward(&cache.norm, &dpre, grad.as_mut().map(|g| &mut g.norm));
        for (i, (b, c)) in self.blocks.iter().zip(&cache.blocks).enumerate().rev() {
            let mut gb = grad.as_mut().map(|g| &mut g.blocks[i]);
            let da2 = b.conv2.backward(&c.col2, &dh, gb.as_mut().map(|g| &mut g.conv2), true);
            let dt2 = relu_backward(&c.t2, &da2);
            let dc1 = b.norm2.backward(&c.n2, &dt2, gb.as_mut().map(|g| &mut g.norm2));
            let da1 = b.conv1.backward(&c.col1, &dc1, gb.as_mut().map(|g| &mut g.conv1), true);
            let dt1 = relu_backward(&c.t1, &da1);
            let dskip = b.norm1.backward(&c.n1, &dt1, gb.as_mut().map(|g| &mut g.norm1));
            for (d, s) in dh.iter_mut().zip(&dskip) {
                *d += *s;
            }
        }
        self.input.backward(&cache.input_col, &dh, grad.map(|g| &mut g.input), false);
    }

    /// Channel means of the backbone output, `[c_mid]`.
    pub fn pooled_features(&self, x: &[T]) -> Result<Vec<T>> {
        let f = self.forward(x)?;
        let n = T::of(64.0);
        Ok(f.chunks_exact(64).map(|c| c.iter().copied().sum::<T>() / n).collect())
    }

    pub fn checksum(&self) -> String {
        let mut v = Vec::new();
        self.visit("", &mut v);
        checksum_tensors(&v)
    }

    pub fn cast<U: Scalar>(&self) -> Backbone<U> {
        let mut out = Backbone::<U> {
            input: Conv3x3::new(self.input.input_channels(), self.channels(), &mut ChaCha8Rng::seed_from_u64(0)),
            blocks: Vec::new(),
            norm: GroupNorm::new(self.channels()),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = self.channels();
        out.blocks = (0..self.blocks.len())
            .map(|_| ResBlock {
                norm1: GroupNorm::new(c),
                conv1: Conv3x3::new(c, c, &mut rng),
                norm2: GroupNorm::new(c),
                conv2: Conv3x3::new(c, c, &mut rng),
            })
            .collect();
        let src = {
            let mut v = Vec::new();
            self.visit("", &mut v);
            v
        };
        let mut dst = Vec::new();
        out.visit_mut("", &mut dst);
        for ((_, d), (_, s)) in dst.into_iter().zip(src) {
            *d = s.cast();
        }
        out
    }
}

pub struct ForwardCache<T> {
    backbone: BackboneCache<T>,
    features: Vec<T>,
    skill: Vec<T>,
    attention: Vec<AttentionCache<T>>,
    pooled: Vec<T>,
}

impl<T: Scalar> ModelState<T> {
    /// Fan-in uniform weights, unit norm scales, zero offsets and biases.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let backbone = Backbone::new(&config, &mut rng);
        let patch = Linear::new(config.c_patch * 64, config.d_att, &mut rng);
        let blocks = (0..config.k_att)
            .map(|_| SkillBlock {
                skill: Linear::new(2 * config.d, config.d_att, &mut rng),
                attention: AttentionBlock::new(config.d_att, config.heads, config.d_ffn, &mut rng),
            })
            .collect();
        let head = Linear::new(config.d_att, config.vocab_size, &mut rng);
        Ok(ModelState {
            config,
            backbone,
            patch,
            blocks,
            head,
        })
    }

    pub fn zeros_like(&self) -> Self {
        ModelState {
            config: self.config.clone(),
            backbone: self.backbone.zeros_like(),
            patch: self.patch.zeros_like(),
            blocks: self
                .blocks
                .iter()
                .map(|b| SkillBlock {
                    skill: b.skill.zeros_like(),
                    attention: b.attention.zeros_like(),
                })
                .collect(),
            head: self.head.zeros_like(),
        }
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut v = Vec::new();
        self.visit("", &mut v);
        v
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut v = Vec::new();
        self.visit_mut("", &mut v);
        v
    }

    pub fn num_params(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }

    /// Content hash over all universal parameters in canonical order.
    pub fn parameter_checksum(&self) -> String {
        checksum_tensors(&self.named_params())
    }

    pub fn max_abs(&self) -> T {
        self.named_params().iter().fold(T::zero(), |m, (_, t)| m.max(t.max_abs()))
    }

    pub fn add_assign(&mut self, other: &ModelState<T>) {
        let src = other.named_params();
        for ((_, dst), (_, s)) in self.named_params_mut().into_iter().zip(src) {
            dst.add_assign(s);
        }
    }

    pub fn cast<U: Scalar>(&self) -> ModelState<U> {
        let mut out = ModelState::<U>::init(self.config.clone(), 0).expect("config already validated");
        for ((_, dst), (_, src)) in out.named_params_mut().into_iter().zip(self.named_params()) {
            *dst = src.cast();
        }
        out
    }

    pub fn backbone_forward(&self, x: &[T]) -> Result<Vec<T>> {
        self.backbone.forward(x)
    }

    /// Groups consecutive `c_patch` channels into tokens and projects each to `d_att`.
    pub fn patchify(&self, features: &[T]) -> Result<Vec<T>> {
        let want = self.config.c_mid * 64;
        if features.len() != want {
            return Err(Error::Shape(format!("feature map has {} values, expected {want}", features.len())));
        }
        Ok(self.patch.forward(features))
    }

    fn check_skill(&self, e: &[T], what: &str) -> Result<()> {
        if e.len() != self.config.d {
            return Err(Error::Shape(format!("{what} embedding has dim {}, expected {}", e.len(), self.config.d)));
        }
        Ok(())
    }

    pub fn forward_cached(&self, x: &[T], e_a: &[T], e_o: &[T]) -> Result<(Vec<T>, ForwardCache<T>)> {
        self.check_skill(e_a, "active")?;
        self.check_skill(e_o, "opponent")?;
        let (features, backbone) = self.backbone.forward_cached(x)?;
        let mut tokens = self.patchify(&features)?;
        let mut skill = Vec::with_capacity(2 * self.config.d);
        skill.extend_from_slice(e_a);
        skill.extend_from_slice(e_o);
        let mut attention = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let prefix = b.skill.forward(&skill);
            let (next, cache) = b.attention.forward(&tokens, Some(&prefix));
            tokens = next;
            attention.push(cache);
        }
        let d_att = self.config.d_att;
        let n = T::of(self.config.tokens() as f64);
        let mut pooled = vec![T::zero(); d_att];
        for row in tokens.chunks_exact(d_att) {
            for (p, &v) in pooled.iter_mut().zip(row) {
                *p += v;
            }
        }
        pooled.iter_mut().for_each(|p| *p /= n);
        let logits = self.head.forward(&pooled);
        Ok((
            logits,
            ForwardCache {
                backbone,
                features,
                skill,
                attention,
                pooled,
            },
        ))
    }

    /// Logits over the policy vocabulary.
    pub fn forward(&self, x: &[T], e_a: &[T], e_o: &[T]) -> Result<Vec<T>> {
        Ok(self.forward_cached(x, e_a, e_o)?.0)
    }

    /// Backpropagates `dlogits`; accumulates parameter gradients into `grad`
    /// when given. Returns the gradient with respect to `(e_a, e_o)`.
    pub fn backward(&self, cache: &ForwardCache<T>, dlogits: &[T], mut grad: Option<&mut ModelState<T>>) -> (Vec<T>, Vec<T>) {
        let d_att = self.config.d_att;
        let n_tokens = self.config.tokens();
        let dpooled = self.head.backward(&cache.pooled, dlogits, grad.as_mut().map(|g| &mut g.head), true);
        let inv = T::one() / T::of(n_tokens as f64);
        let mut dtokens: Vec<T> = (0..n_tokens * d_att).map(|i| dpooled[i % d_att] * inv).collect();
        let mut dskill = vec![T::zero(); cache.skill.len()];
        for (i, b) in self.blocks.iter().enumerate().rev() {
            let mut gb = grad.as_mut().map(|g| &mut g.blocks[i]);
            let (dx, dprefix) = b.attention.backward(&cache.attention[i], &dtokens, gb.as_mut().map(|g| &mut g.attention));
            let ds = b.skill.backward(&cache.skill, &dprefix, gb.map(|g| &mut g.skill), true);
            for (a, v) in dskill.iter_mut().zip(&ds) {
                *a += *v;
            }
            dtokens = dx;
        }
        let dfeat = self.patch.backward(&cache.features, &dtokens, grad.as_mut().map(|g| &mut g.patch), true);
        self.backbone.backward(&cache.backbone, &dfeat, grad.map(|g| &mut g.backbone));
        let d = self.config.d;
        (dskill[..d].to_vec(), dskill[d..].to_vec())
    }

    /// Logits for a white-to-move position.
    pub fn position_logits(&self, p: &Position, e_a: &[T], e_o: &[T]) -> Result<Vec<T>> {
        let x = encode_position(p)?.to_tensor();
        self.forward(&x, e_a, e_o)
    }

    /// Argmax move with `e` used for both players; ties go to the smaller index.
    pub fn predict_move(&self, p: &Position, e: &[T]) -> Result<MoveLabel> {
        let logits = self.position_logits(p, e, e)?;
        index_to_label(argmax(&logits))
    }
}

pub(crate) fn index_to_label(i: usize) -> Result<MoveLabel> {
    vocabulary()
        .index_to_move(i)
        .ok_or_else(|| Error::Shape(format!("policy index {i} is outside the move vocabulary")))
}

/// One skill-aware transformer block applied to `tokens` with prefix skill
/// vector `skill_vec = e_a ‖ e_o`.
pub fn skill_aware_block<T: Scalar>(tokens: &[T], skill_vec: &[T], block: &SkillBlock<T>) -> Result<Vec<T>> {
    if skill_vec.len() != block.skill.input_dim() {
        return Err(Error::Shape(format!(
            "skill vector has dim {}, expected {}",
            skill_vec.len(),
            block.skill.input_dim()
        )));
    }
    if tokens.is_empty() || tokens.len() % block.attention.dim() != 0 {
        return Err(Error::Shape(format!("token buffer of {} values is not a multiple of {}", tokens.len(), block.attention.dim())));
    }
    let prefix = block.skill.forward(skill_vec);
    Ok(block.attention.forward(tokens, Some(&prefix)).0)
}
