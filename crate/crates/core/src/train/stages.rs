use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{decays, AdamW, AdamWConfig, ParamSlot};
use crate::chess::encode_position;
use crate::embeddings::{IndividualTable, PopulationTable, Provenance, UnseenEmbedding};
use crate::error::{Error, Result};
use crate::net::{checksum_tensors, loss_and_gradients, EmbeddingRef, EmbeddingSet, GradMode, ModelState};
use crate::nn::tensor::{argmax, log_softmax_at, Tensor};
use crate::pgn::{rating_to_bin, PrototypeSet, TrainSplit, TrainingExample};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub seed: u64,
    /// Single-threaded, fixed-order reductions. The implementation is always
    /// sequential, so this only records intent in reports.
    pub deterministic: bool,
    pub eval_every: usize,
    /// Defaults to `learning_rate`.
    pub embedding_learning_rate: Option<f64>,
    pub grad_clip: Option<f64>,
    /// Cosine decay of the learning rate to zero over `max_steps`.
    pub cosine: bool,
    /// Evaluations without validation improvement before stopping
    /// (embedding adaptation only).
    pub patience: usize,
    /// Tail of the adaptation split held out for early stopping.
    pub validation_fraction: f64,
    /// Examples scored at each evaluation during pre-training and enrichment.
    pub eval_examples: usize,
    /// Smallest training split a prototype may have.
    pub min_prototype_examples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            weight_decay: 1e-5,
            batch_size: 256,
            max_steps: 1000,
            seed: 0,
            deterministic: true,
            eval_every: 100,
            embedding_learning_rate: None,
            grad_clip: Some(1.0),
            cosine: false,
            patience: 5,
            validation_fraction: 0.1,
            eval_examples: 512,
            min_prototype_examples: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let rate_ok = |x: f64| x >= 0.0 && x.is_finite();
        if !rate_ok(self.learning_rate) || !self.embedding_learning_rate.map_or(true, rate_ok) {
            return Err(Error::Config("learning rates must be finite and non-negative".into()));
        }
        if !rate_ok(self.weight_decay) {
            return Err(Error::Config("weight_decay must be finite and non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be at least 1".into()));
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::Config("grad_clip must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("validation_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn embedding_lr(&self) -> f64 {
        self.embedding_learning_rate.unwrap_or(self.learning_rate)
    }

    fn lr_scale(&self, step: usize) -> f64 {
        if self.cosine && self.max_steps > 0 {
            0.5 * (1.0 + (std::f64::consts::PI * (step - 1) as f64 / self.max_steps as f64).cos())
        } else {
            1.0
        }
    }

    fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            weight_decay: self.weight_decay,
            grad_clip: self.grad_clip,
            ..AdamWConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub perplexity: f64,
}

/// Loss curve and checksums of one optimization stage.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
    /// Not written by [`StageReport::write_jsonl`] so that reports from
    /// identical runs compare equal byte for byte.
    #[serde(skip)]
    pub wall_time_seconds: f64,
    pub stopped_early: bool,
    pub best_step: Option<usize>,
    pub phi_checksum: String,
    pub embedding_checksums: BTreeMap<String, String>,
}

impl StageReport {
    pub fn initial_loss(&self) -> Option<f64> {
        self.steps.first().map(|s| s.loss)
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.steps.last().map(|s| s.loss)
    }

    /// One JSON object per step and per evaluation, then a summary line.
    pub fn write_jsonl<W: Write>(&self, out: &mut W) -> Result<()> {
        for s in &self.steps {
            serde_json::to_writer(&mut *out, &serde_json::json!({"stage": self.stage, "step": s.step, "loss": s.loss}))?;
            out.write_all(b"\n")?;
        }
        for e in &self.evals {
            serde_json::to_writer(
                &mut *out,
                &serde_json::json!({"stage": self.stage, "eval_step": e.step, "loss": e.loss, "accuracy": e.accuracy, "perplexity": e.perplexity}),
            )?;
            out.write_all(b"\n")?;
        }
        serde_json::to_writer(
            &mut *out,
            &serde_json::json!({
                "stage": self.stage,
                "summary": true,
                "stopped_early": self.stopped_early,
                "best_step": self.best_step,
                "phi_checksum": self.phi_checksum,
                "embedding_checksums": self.embedding_checksums,
            }),
        )?;
        out.write_all(b"\n")?;
        Ok(())
    }
}

/// Which arrays a stage updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Updates {
    phi: bool,
    population: bool,
    individual: bool,
    unseen: bool,
}

struct StageState<'a, T> {
    model: &'a mut ModelState<T>,
    population: &'a mut PopulationTable<T>,
    individual: Option<&'a mut IndividualTable<T>>,
    unseen: Option<&'a mut Tensor<T>>,
}

impl<'a, T: Scalar> StageState<'a, T> {
    fn set(&self) -> EmbeddingSet<'_, T> {
        EmbeddingSet {
            population: self.population,
            individual: self.individual.as_deref(),
            unseen: self.unseen.as_deref().map(|t| t.data.as_slice()),
        }
    }

    fn embedding_checksums(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("population".into(), checksum_tensors(&[("embeddings.population".into(), &self.population.rows)]));
        if let Some(t) = &self.individual {
            m.insert("individual".into(), checksum_tensors(&[("embeddings.individual".into(), &t.rows)]));
        }
        if let Some(t) = &self.unseen {
            m.insert("unseen".into(), checksum_tensors(&[("embeddings.unseen".into(), &**t)]));
        }
        m
    }
}

/// Loss and top-1 accuracy over `examples`.
pub fn score<T, F>(model: &ModelState<T>, examples: &[&TrainingExample], resolve: &F, set: &EmbeddingSet<'_, T>) -> Result<(f64, f64)>
where
    T: Scalar,
    F: Fn(&TrainingExample) -> Result<(EmbeddingRef, EmbeddingRef)>,
{
    if examples.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let (mut nll, mut right) = (0.0, 0usize);
    for ex in examples {
        let (ra, ro) = resolve(ex)?;
        let x = encode_position(&ex.position)?.to_tensor::<T>();
        let logits = model.forward(&x, set.lookup(ra)?, set.lookup(ro)?)?;
        nll -= log_softmax_at(&logits, ex.target).f64();
        right += usize::from(argmax(&logits) == ex.target);
    }
    let n = examples.len() as f64;
    Ok((nll / n, right as f64 / n))
}

/// Everything a stage produces besides the updated arrays.
pub struct StageOutput<T> {
    pub report: StageReport,
    pub optimizer: AdamW<T>,
}

#[allow(clippy::too_many_arguments)]
fn run_stage<T, F>(
    name: &str,
    state: &mut StageState<'_, T>,
    train: &[&TrainingExample],
    validation: &[&TrainingExample],
    resolve: F,
    updates: Updates,
    cfg: &TrainConfig,
    early_stopping: bool,
) -> Result<StageOutput<T>>
where
    T: Scalar,
    F: Fn(&TrainingExample) -> Result<(EmbeddingRef, EmbeddingRef)>,
{
    cfg.validate()?;
    let started = Instant::now();
    let mut report = StageReport {
        stage: name.to_string(),
        ..StageReport::default()
    };
    let mut opt = AdamW::<T>::new(cfg.adamw());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut cursor = order.len();
    let mode = if updates.phi { GradMode::Full } else { GradMode::EmbeddingsOnly };
    let mut best: Option<(f64, usize, Option<Tensor<T>>)> = None;
    let mut since_best = 0usize;
    let emb_lr = cfg.embedding_lr();
    for step in 1..=cfg.max_steps {
        let mut batch = Vec::with_capacity(cfg.batch_size.min(train.len()));
        while batch.len() < cfg.batch_size.min(train.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(train[order[cursor]]);
            cursor += 1;
        }
        let (loss, grads) = loss_and_gradients(state.model, &batch, &resolve, &state.set(), mode)?;
        let loss = loss.f64();
        if !loss.is_finite() {
            return Err(Error::Numeric {
                step: step as u64,
                param: "loss".into(),
            });
        }
        report.steps.push(StepRecord { step, loss });
        let scale = cfg.lr_scale(step);
        {
            let mut slots: Vec<ParamSlot<'_, T>> = Vec::new();
            let phi_grads;
            if updates.phi {
                phi_grads = grads.phi.as_ref().expect("full mode computes universal gradients").named_params();
                for ((name, p), (_, g)) in state.model.named_params_mut().into_iter().zip(phi_grads) {
                    slots.push(ParamSlot {
                        decay: decays(&name),
                        name,
                        param: p,
                        grad: g,
                        lr: cfg.learning_rate * scale,
                    });
                }
            }
            if updates.population {
                slots.push(ParamSlot {
                    name: "embeddings.population".into(),
                    param: &mut state.population.rows,
                    grad: &grads.population,
                    lr: emb_lr * scale,
                    decay: false,
                });
            }
            if updates.individual {
                if let (Some(t), Some(g)) = (state.individual.as_deref_mut(), grads.individual.as_ref()) {
                    slots.push(ParamSlot {
                        name: "embeddings.individual".into(),
                        param: &mut t.rows,
                        grad: g,
                        lr: emb_lr * scale,
                        decay: false,
                    });
                }
            }
            let unseen_grad;
            if updates.unseen {
                if let (Some(t), Some(g)) = (state.unseen.as_deref_mut(), grads.unseen.as_ref()) {
                    unseen_grad = Tensor::from_vec(&t.shape.clone(), g.clone());
                    slots.push(ParamSlot {
                        name: "embeddings.unseen".into(),
                        param: t,
                        grad: &unseen_grad,
                        lr: emb_lr * scale,
                        decay: false,
                    });
                }
            }
            opt.update(&mut slots)?;
        }
        if step % cfg.eval_every == 0 || step == cfg.max_steps {
            let (vloss, acc) = score(state.model, validation, &resolve, &state.set())?;
            if !validation.is_empty() {
                report.evals.push(EvalRecord {
                    step,
                    loss: vloss,
                    accuracy: acc,
                    perplexity: vloss.exp(),
                });
                log::debug!("{name} step {step}: loss {loss:.4} eval loss {vloss:.4} acc {acc:.3}");
            }
            if early_stopping && !validation.is_empty() {
                let improved = best.as_ref().map_or(true, |(b, _, _)| vloss < *b);
                if improved {
                    best = Some((vloss, step, state.unseen.as_deref().cloned()));
                    since_best = 0;
                } else {
                    since_best += 1;
                    if since_best >= cfg.patience {
                        report.stopped_early = true;
                        break;
                    }
                }
            }
        }
    }
    if let Some((_, step, snapshot)) = best {
        report.best_step = Some(step);
        if let (Some(dst), Some(src)) = (state.unseen.as_deref_mut(), snapshot) {
            *dst = src;
        }
    }
    report.phi_checksum = state.model.parameter_checksum();
    report.embedding_checksums = state.embedding_checksums();
    report.wall_time_seconds = started.elapsed().as_secs_f64();
    log::info!(
        "{name}: {} steps, loss {:.4} -> {:.4} in {:.1}s",
        report.steps.len(),
        report.initial_loss().unwrap_or(f64::NAN),
        report.final_loss().unwrap_or(f64::NAN),
        report.wall_time_seconds
    );
    Ok(StageOutput { report, optimizer: opt })
}

fn population_refs(ex: &TrainingExample) -> Result<(EmbeddingRef, EmbeddingRef)> {
    Ok((
        EmbeddingRef::Population(rating_to_bin(ex.active_rating)),
        EmbeddingRef::Population(rating_to_bin(ex.opponent_rating)),
    ))
}

fn opponent_ref(ex: &TrainingExample) -> EmbeddingRef {
    EmbeddingRef::Population(rating_to_bin(ex.opponent_rating))
}

fn eval_subset<'a>(train: &[&'a TrainingExample], n: usize) -> Vec<&'a TrainingExample> {
    if train.len() <= n {
        return train.to_vec();
    }
    let stride = train.len() as f64 / n as f64;
    (0..n).map(|i| train[(i as f64 * stride) as usize]).collect()
}

/// Trains the universal parameters and the population table with bin-level
/// embeddings for both players.
pub fn pretrain_population<T: Scalar>(
    model: &mut ModelState<T>,
    population: &mut PopulationTable<T>,
    splits: &[TrainSplit<'_>],
    cfg: &TrainConfig,
) -> Result<StageOutput<T>> {
    let train: Vec<&TrainingExample> = splits.iter().flat_map(|s| s.examples.iter()).collect();
    if train.is_empty() {
        return Err(Error::Data("population pre-training needs at least one example".into()));
    }
    let eval = eval_subset(&train, cfg.eval_examples);
    let mut state = StageState {
        model,
        population,
        individual: None,
        unseen: None,
    };
    let updates = Updates {
        phi: true,
        population: true,
        individual: false,
        unseen: false,
    };
    run_stage("pretrain", &mut state, &train, &eval, population_refs, updates, cfg, false)
}

fn individual_resolver<'p>(prototypes: &'p PrototypeSet) -> impl Fn(&TrainingExample) -> Result<(EmbeddingRef, EmbeddingRef)> + 'p {
    move |ex| {
        let row = prototypes
            .row(&ex.player_id)
            .ok_or_else(|| Error::Data(format!("player '{}' is not a prototype", ex.player_id)))?;
        Ok((EmbeddingRef::Individual(row), opponent_ref(ex)))
    }
}

fn prototype_examples<'a>(splits: &[TrainSplit<'a>], prototypes: &PrototypeSet, min: usize) -> Result<Vec<&'a TrainingExample>> {
    let mut seen = vec![0usize; prototypes.len()];
    let mut out = Vec::new();
    for s in splits {
        let row = prototypes
            .row(s.player_id)
            .ok_or_else(|| Error::Data(format!("player '{}' is not a prototype", s.player_id)))?;
        seen[row] += s.examples.len();
        out.extend(s.examples.iter());
    }
    for (row, &n) in seen.iter().enumerate() {
        if n < min.max(1) {
            return Err(Error::Data(format!(
                "prototype '{}' has {n} training positions, fewer than the required {}",
                prototypes.id(row).unwrap_or("?"),
                min.max(1)
            )));
        }
    }
    Ok(out)
}

/// Jointly trains the universal parameters and the prototype embeddings.
/// Population rows (used for opponents) stay fixed. Batches are drawn
/// uniformly over all prototype positions, so the objective is the mean over
/// positions rather than a mean of per-player means.
pub fn enrich<T: Scalar>(
    model: &mut ModelState<T>,
    population: &PopulationTable<T>,
    individual: &mut IndividualTable<T>,
    splits: &[TrainSplit<'_>],
    prototypes: &PrototypeSet,
    cfg: &TrainConfig,
) -> Result<StageOutput<T>> {
    if individual.ids.as_slice() != prototypes.ids() {
        return Err(Error::Data("individual table rows do not follow the prototype set".into()));
    }
    let train = prototype_examples(splits, prototypes, cfg.min_prototype_examples)?;
    let eval = eval_subset(&train, cfg.eval_examples);
    let mut pop = population.clone();
    let mut state = StageState {
        model,
        population: &mut pop,
        individual: Some(individual),
        unseen: None,
    };
    let updates = Updates {
        phi: true,
        population: false,
        individual: true,
        unseen: false,
    };
    run_stage("enrich", &mut state, &train, &eval, individual_resolver(prototypes), updates, cfg, false)
}

/// Exact enrichment objective: total negative log-likelihood over every
/// prototype position divided by the total position count.
pub fn enrichment_objective<T: Scalar>(
    model: &ModelState<T>,
    population: &PopulationTable<T>,
    individual: &IndividualTable<T>,
    splits: &[TrainSplit<'_>],
    prototypes: &PrototypeSet,
) -> Result<f64> {
    let train = prototype_examples(splits, prototypes, 1)?;
    let set = EmbeddingSet {
        population,
        individual: Some(individual),
        unseen: None,
    };
    Ok(score(model, &train, &individual_resolver(prototypes), &set)?.0)
}

fn unseen_refs(ex: &TrainingExample) -> Result<(EmbeddingRef, EmbeddingRef)> {
    Ok((EmbeddingRef::Unseen, opponent_ref(ex)))
}

fn adaptation_split<'a>(split: &TrainSplit<'a>, cfg: &TrainConfig) -> (Vec<&'a TrainingExample>, Vec<&'a TrainingExample>) {
    let all: Vec<&TrainingExample> = split.examples.iter().collect();
    let held = ((all.len() as f64) * cfg.validation_fraction).floor() as usize;
    if held == 0 || held >= all.len() {
        return (all, Vec::new());
    }
    let cut = all.len() - held;
    (all[..cut].to_vec(), all[cut..].to_vec())
}

/// Result of adapting one unseen player's embedding.
pub struct Adapted<T> {
    pub embedding: UnseenEmbedding<T>,
    pub output: Option<StageOutput<T>>,
}

/// Fine-tunes only `e_u` on the player's training split; the universal
/// parameters are never written. An empty split returns `e_u` unchanged.
pub fn democratize<T: Scalar>(
    model: &ModelState<T>,
    population: &PopulationTable<T>,
    e_u: &UnseenEmbedding<T>,
    split: TrainSplit<'_>,
    cfg: &TrainConfig,
) -> Result<Adapted<T>> {
    if split.examples.is_empty() {
        log::warn!("player '{}' has no adaptation data; keeping the initial embedding", e_u.player_id);
        return Ok(Adapted {
            embedding: e_u.clone(),
            output: None,
        });
    }
    let before = model.parameter_checksum();
    let mut frozen = model.clone();
    let mut pop = population.clone();
    let mut vec = Tensor::from_vec(&[e_u.vector.len()], e_u.vector.clone());
    let (train, validation) = adaptation_split(&split, cfg);
    let mut state = StageState {
        model: &mut frozen,
        population: &mut pop,
        individual: None,
        unseen: Some(&mut vec),
    };
    let updates = Updates {
        phi: false,
        population: false,
        individual: false,
        unseen: true,
    };
    let output = run_stage("democratize", &mut state, &train, &validation, unseen_refs, updates, cfg, true)?;
    if frozen.parameter_checksum() != before || output.report.phi_checksum != before {
        return Err(Error::Contract("universal parameters changed during embedding-only adaptation".into()));
    }
    Ok(Adapted {
        embedding: trained(e_u, vec.data),
        output: Some(output),
    })
}

fn trained<T: Clone>(e_u: &UnseenEmbedding<T>, vector: Vec<T>) -> UnseenEmbedding<T> {
    UnseenEmbedding {
        player_id: e_u.player_id.clone(),
        vector,
        provenance: Provenance::Trained,
        sources: e_u.sources.clone(),
    }
}

/// Like [`democratize`] but the universal parameters are trained as well.
/// Returns the adapted copy of the model.
pub fn democratize_full<T: Scalar>(
    model: &ModelState<T>,
    population: &PopulationTable<T>,
    e_u: &UnseenEmbedding<T>,
    split: TrainSplit<'_>,
    cfg: &TrainConfig,
) -> Result<(ModelState<T>, Adapted<T>)> {
    if split.examples.is_empty() {
        log::warn!("player '{}' has no adaptation data; keeping the initial embedding", e_u.player_id);
        return Ok((
            model.clone(),
            Adapted {
                embedding: e_u.clone(),
                output: None,
            },
        ));
    }
    let mut tuned = model.clone();
    let mut pop = population.clone();
    let mut vec = Tensor::from_vec(&[e_u.vector.len()], e_u.vector.clone());
    let (train, validation) = adaptation_split(&split, cfg);
    let mut state = StageState {
        model: &mut tuned,
        population: &mut pop,
        individual: None,
        unseen: Some(&mut vec),
    };
    let updates = Updates {
        phi: true,
        population: false,
        individual: false,
        unseen: true,
    };
    let output = run_stage("democratize-full", &mut state, &train, &validation, unseen_refs, updates, cfg, false)?;
    Ok((
        tuned,
        Adapted {
            embedding: trained(e_u, vec.data),
            output: Some(output),
        },
    ))
}
