//! Prototype matching network: classifies a move history as one of the
//! prototype players.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chess::{encode_position, make_move, Color, Position};
use crate::embeddings::top_k_weights;
use crate::error::{Error, Result};
use crate::net::{read_arrays, Backbone, CheckpointWriter, ModelConfig, ModelState};
use crate::nn::attention::AttentionBlock;
use crate::nn::layers::{child, Linear, Params};
use crate::nn::tensor::{argmax, log_softmax_at, softmax, Tensor};
use crate::pgn::{PrototypeSet, TrainSplit, TrainingExample};
use crate::scalar::Scalar;
use crate::train::{decays, AdamW, AdamWConfig, ParamSlot};

pub const PMN_KIND: &str = "pmn";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PmnConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_h: usize,
    pub d_ffn: usize,
    /// Most recent moves consumed per inference.
    pub max_history: usize,
    /// Moves per training sample.
    pub window: usize,
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub eval_every: usize,
    /// Tail fraction of each prototype's history held out for validation.
    pub validation_fraction: f64,
    /// Earliest training moves used per prototype.
    pub max_moves: usize,
    pub seed: u64,
}

impl Default for PmnConfig {
    fn default() -> Self {
        PmnConfig {
            layers: 2,
            heads: 4,
            d_h: 64,
            d_ffn: 1024,
            max_history: 800,
            window: 32,
            batch_size: 32,
            steps: 500,
            learning_rate: 1e-3,
            weight_decay: 1e-5,
            eval_every: 50,
            validation_fraction: 0.2,
            max_moves: 4096,
            seed: 0,
        }
    }
}

impl PmnConfig {
    /// Attention dimensions copied from a policy network config.
    pub fn mirroring(model: &ModelConfig) -> Self {
        PmnConfig {
            heads: model.heads,
            d_h: model.d_h,
            d_ffn: model.d_ffn,
            ..PmnConfig::default()
        }
    }

    pub fn d_model(&self) -> usize {
        self.heads * self.d_h
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("layers", self.layers),
            ("heads", self.heads),
            ("d_h", self.d_h),
            ("d_ffn", self.d_ffn),
            ("max_history", self.max_history),
            ("window", self.window),
            ("batch_size", self.batch_size),
            ("eval_every", self.eval_every),
            ("max_moves", self.max_moves),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("pmn.{name} must be at least 1")));
            }
        }
        if !(self.learning_rate >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("pmn rates must be non-negative".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config("pmn.validation_fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Trainable part of the matcher.
#[derive(Clone, Debug, PartialEq)]
pub struct PmnParams<T> {
    pub input: Linear<T>,
    pub layers: Vec<AttentionBlock<T>>,
    pub head: Linear<T>,
}

impl<T> Params<T> for PmnParams<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        self.input.visit(&child(prefix, "input"), out);
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&child(prefix, &format!("layers.{i}")), out);
        }
        self.head.visit(&child(prefix, "head"), out);
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        self.input.visit_mut(&child(prefix, "input"), out);
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&child(prefix, &format!("layers.{i}")), out);
        }
        self.head.visit_mut(&child(prefix, "head"), out);
    }
}

impl<T: Scalar> PmnParams<T> {
    fn zeros_like(&self) -> Self {
        PmnParams {
            input: self.input.zeros_like(),
            layers: self.layers.iter().map(AttentionBlock::zeros_like).collect(),
            head: self.head.zeros_like(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pmn<T> {
    pub config: PmnConfig,
    /// Frozen feature tower.
    pub tower: Backbone<T>,
    pub params: PmnParams<T>,
    pub prototype_ids: Vec<String>,
}

/// `concat(pool(tower(before)), pool(tower(after)))`; both positions must be
/// white to move.
pub fn extract_move_features<T: Scalar>(before: &Position, after: &Position, tower: &Backbone<T>) -> Result<Vec<T>> {
    for (p, which) in [(before, "before"), (after, "after")] {
        if p.side_to_move() != Color::White {
            return Err(Error::Contract(format!("{which} position must be white to move")));
        }
    }
    let mut f = tower.pooled_features(&encode_position(before)?.to_tensor())?;
    f.extend(tower.pooled_features(&encode_position(after)?.to_tensor())?);
    Ok(f)
}

/// The acting player's board before and after their move, both seen from the
/// mover's side.
pub fn move_pair(ex: &TrainingExample) -> Result<(Position, Position)> {
    let mv = crate::net::index_to_label(ex.target)?;
    let after = make_move(&ex.position, mv)?.flip();
    Ok((ex.position.clone(), after))
}

pub fn move_pairs(examples: &[TrainingExample]) -> Result<Vec<(Position, Position)>> {
    examples.iter().map(move_pair).collect()
}

struct PmnCache<T> {
    x: Vec<T>,
    layers: Vec<crate::nn::attention::AttentionCache<T>>,
    pooled: Vec<T>,
    n: usize,
}

impl<T: Scalar> Pmn<T> {
    pub fn new(config: PmnConfig, tower: Backbone<T>, prototypes: &PrototypeSet) -> Result<Self> {
        config.validate()?;
        if prototypes.is_empty() {
            return Err(Error::Data("matcher needs at least one prototype".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.d_model();
        let params = PmnParams {
            input: Linear::new(2 * tower.channels(), d, &mut rng),
            layers: (0..config.layers)
                .map(|_| AttentionBlock::new(d, config.heads, config.d_ffn, &mut rng))
                .collect(),
            head: Linear::new(d, prototypes.len(), &mut rng),
        };
        Ok(Pmn {
            config,
            tower,
            params,
            prototype_ids: prototypes.ids().to_vec(),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.prototype_ids.len()
    }

    pub fn feature_dim(&self) -> usize {
        2 * self.tower.channels()
    }

    pub fn prototype_hash(&self) -> String {
        crate::pgn::hash_ids(&self.prototype_ids)
    }

    pub fn features(&self, history: &[(Position, Position)]) -> Result<Vec<Vec<T>>> {
        let start = history.len().saturating_sub(self.config.max_history);
        history[start..]
            .iter()
            .map(|(b, a)| extract_move_features(b, a, &self.tower))
            .collect()
    }

    fn window<'a>(&self, features: &'a [Vec<T>]) -> Result<&'a [Vec<T>]> {
        if features.is_empty() {
            return Err(Error::Data("history is empty".into()));
        }
        let dim = self.feature_dim();
        if let Some(f) = features.iter().find(|f| f.len() != dim) {
            return Err(Error::Shape(format!("move feature has dim {}, expected {dim}", f.len())));
        }
        let start = features.len().saturating_sub(self.config.max_history);
        Ok(&features[start..])
    }

    fn forward_cached(&self, features: &[Vec<T>]) -> Result<(Vec<T>, PmnCache<T>)> {
        let features = self.window(features)?;
        let x: Vec<T> = features.iter().flatten().copied().collect();
        let n = features.len();
        let mut h = self.params.input.forward(&x);
        let mut layers = Vec::with_capacity(self.params.layers.len());
        for l in &self.params.layers {
            let (y, c) = l.forward(&h, None);
            h = y;
            layers.push(c);
        }
        let d = self.config.d_model();
        let inv = T::one() / T::of(n as f64);
        let mut pooled = vec![T::zero(); d];
        for row in h.chunks_exact(d) {
            for (p, &v) in pooled.iter_mut().zip(row) {
                *p += v;
            }
        }
        pooled.iter_mut().for_each(|p| *p *= inv);
        Ok((pooled.clone(), PmnCache { x, layers, pooled, n }))
    }

    /// Mean-pooled history representation, `[d_model]`.
    pub fn encode_history(&self, features: &[Vec<T>]) -> Result<Vec<T>> {
        Ok(self.forward_cached(features)?.0)
    }

    /// Prototype-similarity logits for precomputed move features.
    pub fn classify(&self, features: &[Vec<T>]) -> Result<Vec<T>> {
        let h = self.encode_history(features)?;
        Ok(self.params.head.forward(&h))
    }

    pub fn classify_pairs(&self, history: &[(Position, Position)]) -> Result<Vec<T>> {
        if history.is_empty() {
            return Err(Error::Data("history is empty".into()));
        }
        self.classify(&self.features(history)?)
    }

    fn loss_backward(&self, features: &[Vec<T>], class: usize, scale: T, grad: &mut PmnParams<T>) -> Result<(T, usize)> {
        let (_, cache) = self.forward_cached(features)?;
        let logits = self.params.head.forward(&cache.pooled);
        let loss = -log_softmax_at(&logits, class);
        let pred = argmax(&logits);
        let mut dl = softmax(&logits);
        dl[class] -= T::one();
        dl.iter_mut().for_each(|v| *v *= scale);
        let dpool = self.params.head.backward(&cache.pooled, &dl, Some(&mut grad.head), true);
        let inv = T::one() / T::of(cache.n as f64);
        let d = self.config.d_model();
        let mut dh: Vec<T> = (0..cache.n * d).map(|i| dpool[i % d] * inv).collect();
        for (i, l) in self.params.layers.iter().enumerate().rev() {
            dh = l.backward(&cache.layers[i], &dh, Some(&mut grad.layers[i])).0;
        }
        self.params.input.backward(&cache.x, &dh, Some(&mut grad.input), false);
        Ok((loss, pred))
    }

    /// Top-`k` prototypes with softmax weights, descending.
    pub fn match_features(&self, features: &[Vec<T>], k: usize, temperature: f64) -> Result<Vec<(String, f64)>> {
        let logits: Vec<f64> = self.classify(features)?.into_iter().map(Scalar::f64).collect();
        Ok(top_k_weights(&logits, k, temperature)?
            .into_iter()
            .map(|(row, w)| (self.prototype_ids[row].clone(), w))
            .collect())
    }

    pub fn match_prototypes(&self, history: &[(Position, Position)], k: usize, temperature: f64) -> Result<Vec<(String, f64)>> {
        if history.is_empty() {
            return Err(Error::Data("history is empty".into()));
        }
        self.match_features(&self.features(history)?, k, temperature)
    }

    /// Most similar prototype row.
    pub fn identify_features(&self, features: &[Vec<T>]) -> Result<usize> {
        Ok(argmax(&self.classify(features)?))
    }

    pub fn stylometry_identify(&self, history: &[(Position, Position)]) -> Result<String> {
        if history.is_empty() {
            return Err(Error::Data("history is empty".into()));
        }
        let row = self.identify_features(&self.features(history)?)?;
        Ok(self.prototype_ids[row].clone())
    }

    pub fn save(&self, dir: &Path, model_config: &ModelConfig) -> Result<()> {
        let mut arrays = Vec::new();
        self.params.visit("pmn", &mut arrays);
        self.tower.visit("tower", &mut arrays);
        let mut extra = BTreeMap::new();
        extra.insert("prototype_hash".into(), serde_json::json!(self.prototype_hash()));
        extra.insert("prototype_ids".into(), serde_json::json!(self.prototype_ids));
        extra.insert("tower_config".into(), serde_json::to_value(model_config)?);
        extra.insert("tower_checksum".into(), serde_json::json!(self.tower.cast::<f32>().checksum()));
        let mut seeds = BTreeMap::new();
        seeds.insert("pmn".into(), self.config.seed);
        CheckpointWriter {
            kind: PMN_KIND,
            config: serde_json::to_value(&self.config)?,
            checksummed: arrays.len(),
            arrays,
            seeds,
            extra,
        }
        .write(dir)?;
        Ok(())
    }

    /// Loads a matcher and checks it was trained for `prototypes`.
    pub fn load(dir: &Path, prototypes: Option<&PrototypeSet>) -> Result<Self> {
        let mut ck = read_arrays::<T>(dir, PMN_KIND)?;
        let config: PmnConfig = serde_json::from_value(ck.manifest.config.clone())?;
        let ids: Vec<String> = ck.extra("prototype_ids")?;
        let hash: String = ck.extra("prototype_hash")?;
        if let Some(p) = prototypes {
            if p.hash() != hash {
                return Err(Error::Checkpoint("matcher was trained for a different prototype set".into()));
            }
        }
        let tower_config: ModelConfig = ck.extra("tower_config")?;
        let mut shell = ModelState::<T>::init(tower_config, 0)?.backbone;
        for (name, dst) in {
            let mut v = Vec::new();
            shell.visit_mut("tower", &mut v);
            v
        } {
            let src = ck.take(&name)?;
            if src.shape != dst.shape {
                return Err(Error::Checkpoint(format!("array '{name}' has shape {:?}, expected {:?}", src.shape, dst.shape)));
            }
            *dst = src;
        }
        let set = PrototypeSet::from_bins(vec![ids.clone()], &ids.iter().map(|i| (i.clone(), 0)).collect())?;
        let mut pmn = Pmn::new(config, shell, &set)?;
        for (name, dst) in {
            let mut v = Vec::new();
            pmn.params.visit_mut("pmn", &mut v);
            v
        } {
            let src = ck.take(&name)?;
            if src.shape != dst.shape {
                return Err(Error::Checkpoint(format!("array '{name}' has shape {:?}, expected {:?}", src.shape, dst.shape)));
            }
            *dst = src;
        }
        pmn.prototype_ids = ids;
        Ok(pmn)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PmnEpoch {
    pub step: usize,
    pub loss: f64,
    pub train_accuracy: f64,
    pub validation_accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PmnReport {
    pub epochs: Vec<PmnEpoch>,
    pub tower_checksum_before: String,
    pub tower_checksum_after: String,
}

/// Per-class move features split into a training head and a validation tail.
pub struct PmnCorpus<T> {
    pub train: Vec<Vec<Vec<T>>>,
    pub validation: Vec<Vec<Vec<T>>>,
}

impl<T: Scalar> PmnCorpus<T> {
    /// `features[c]` is prototype row `c`'s chronological move features.
    pub fn split(features: Vec<Vec<Vec<T>>>, validation_fraction: f64, ids: &[String]) -> Result<Self> {
        let mut train = Vec::with_capacity(features.len());
        let mut validation = Vec::with_capacity(features.len());
        for (c, mut f) in features.into_iter().enumerate() {
            if f.len() < 2 {
                return Err(Error::Data(format!(
                    "prototype '{}' needs at least 2 moves for separate train and validation samples, has {}",
                    ids.get(c).map_or("?", String::as_str),
                    f.len()
                )));
            }
            let val = ((f.len() as f64 * validation_fraction).ceil() as usize).clamp(1, f.len() - 1);
            let tail = f.split_off(f.len() - val);
            train.push(f);
            validation.push(tail);
        }
        Ok(PmnCorpus { train, validation })
    }
}

/// Computes move features for each prototype's training split, in row order.
pub fn prototype_features<T: Scalar>(tower: &Backbone<T>, splits: &[TrainSplit<'_>], prototypes: &PrototypeSet) -> Result<Vec<Vec<Vec<T>>>> {
    let mut by_row: Vec<Option<Vec<Vec<T>>>> = vec![None; prototypes.len()];
    for s in splits {
        let Some(row) = prototypes.row(s.player_id) else { continue };
        let feats = s
            .examples
            .iter()
            .map(|ex| {
                let (b, a) = move_pair(ex)?;
                extract_move_features(&b, &a, tower)
            })
            .collect::<Result<Vec<_>>>()?;
        by_row[row] = Some(feats);
    }
    by_row
        .into_iter()
        .enumerate()
        .map(|(row, f)| f.ok_or_else(|| Error::Data(format!("prototype '{}' has no training data", prototypes.id(row).unwrap_or("?")))))
        .collect()
}

/// Non-overlapping windows covering a history (at least one).
fn eval_windows<T>(history: &[Vec<T>], window: usize, limit: usize) -> Vec<&[Vec<T>]> {
    let w = window.min(history.len()).max(1);
    history.chunks(w).filter(|c| c.len() == w || history.len() < w).take(limit).collect()
}

fn accuracy<T: Scalar>(pmn: &Pmn<T>, classes: &[Vec<Vec<T>>], limit: usize) -> Result<f64> {
    let (mut right, mut total) = (0usize, 0usize);
    for (c, h) in classes.iter().enumerate() {
        for w in eval_windows(h, pmn.config.window, limit) {
            right += usize::from(pmn.identify_features(w)? == c);
            total += 1;
        }
    }
    Ok(if total == 0 { 0.0 } else { right as f64 / total as f64 })
}

/// Trains the classifier on random fixed-length windows with class-balanced
/// batches. The tower is not updated.
pub fn train_pmn_on_corpus<T: Scalar>(mut pmn: Pmn<T>, corpus: &PmnCorpus<T>) -> Result<(Pmn<T>, PmnReport)> {
    let n_classes = pmn.num_classes();
    if corpus.train.len() != n_classes {
        return Err(Error::Data(format!("{} classes of data for {n_classes} prototypes", corpus.train.len())));
    }
    if let Some(c) = corpus.train.iter().position(Vec::is_empty) {
        return Err(Error::Data(format!("prototype '{}' has no training samples", pmn.prototype_ids[c])));
    }
    let cfg = pmn.config.clone();
    let tower_before = pmn.tower.checksum();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut opt = AdamW::<T>::new(AdamWConfig {
        weight_decay: cfg.weight_decay,
        ..AdamWConfig::default()
    });
    let mut report = PmnReport::default();
    let scale = T::one() / T::of(cfg.batch_size as f64);
    let mut running = 0.0;
    let mut running_n = 0usize;
    for step in 1..=cfg.steps {
        let mut grad = pmn.params.zeros_like();
        let offset = rng.gen_range(0..n_classes);
        let mut batch_loss = T::zero();
        for i in 0..cfg.batch_size {
            let class = (offset + i) % n_classes;
            let h = &corpus.train[class];
            let w = cfg.window.min(h.len());
            let start = rng.gen_range(0..=h.len() - w);
            let (loss, _) = pmn.loss_backward(&h[start..start + w], class, scale, &mut grad)?;
            batch_loss += loss;
        }
        running += (batch_loss * scale).f64();
        running_n += 1;
        {
            let grads = {
                let mut v = Vec::new();
                grad.visit("", &mut v);
                v
            };
            let params = {
                let mut v = Vec::new();
                pmn.params.visit_mut("", &mut v);
                v
            };
            let mut slots: Vec<ParamSlot<'_, T>> = params
                .into_iter()
                .zip(grads)
                .map(|((name, p), (_, g))| ParamSlot {
                    decay: decays(&name),
                    name,
                    param: p,
                    grad: g,
                    lr: cfg.learning_rate,
                })
                .collect();
            opt.update(&mut slots)?;
        }
        if step % cfg.eval_every == 0 || step == cfg.steps {
            report.epochs.push(PmnEpoch {
                step,
                loss: running / running_n.max(1) as f64,
                train_accuracy: accuracy(&pmn, &corpus.train, 8)?,
                validation_accuracy: accuracy(&pmn, &corpus.validation, usize::MAX)?,
            });
            log::info!(
                "pmn step {step}: loss {:.4} train acc {:.3} val acc {:.3}",
                report.epochs.last().unwrap().loss,
                report.epochs.last().unwrap().train_accuracy,
                report.epochs.last().unwrap().validation_accuracy
            );
            running = 0.0;
            running_n = 0;
        }
    }
    report.tower_checksum_before = tower_before;
    report.tower_checksum_after = pmn.tower.checksum();
    Ok((pmn, report))
}

/// Builds and trains a matcher from the prototypes' training splits.
pub fn train_pmn<T: Scalar>(
    tower: &Backbone<T>,
    splits: &[TrainSplit<'_>],
    prototypes: &PrototypeSet,
    cfg: &PmnConfig,
) -> Result<(Pmn<T>, PmnReport)> {
    let pmn = Pmn::new(cfg.clone(), tower.clone(), prototypes)?;
    let capped: Vec<TrainSplit<'_>> = splits
        .iter()
        .map(|s| TrainSplit {
            examples: &s.examples[..s.examples.len().min(cfg.max_moves)],
            ..*s
        })
        .collect();
    let features = prototype_features(tower, &capped, prototypes)?;
    let corpus = PmnCorpus::split(features, cfg.validation_fraction, prototypes.ids())?;
    train_pmn_on_corpus(pmn, &corpus)
}

/// Validation accuracy of a matcher on a corpus (whole validation tails).
pub fn validation_accuracy<T: Scalar>(pmn: &Pmn<T>, corpus: &PmnCorpus<T>) -> Result<f64> {
    accuracy(pmn, &corpus.validation, usize::MAX)
}
