use crate::chess::encode_position;
use crate::embeddings::{IndividualTable, PopulationTable};
use crate::error::{Error, Result};
use crate::nn::tensor::{log_softmax_at, softmax, Tensor};
use crate::pgn::TrainingExample;
use crate::scalar::Scalar;

use super::model::ModelState;

/// Which embedding row feeds one side of the skill vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbeddingRef {
    Population(usize),
    Individual(usize),
    Unseen,
}

/// Embedding sources available to the resolver.
#[derive(Clone, Copy, Debug)]
pub struct EmbeddingSet<'a, T> {
    pub population: &'a PopulationTable<T>,
    pub individual: Option<&'a IndividualTable<T>>,
    pub unseen: Option<&'a [T]>,
}

impl<'a, T: Scalar> EmbeddingSet<'a, T> {
    pub fn population(population: &'a PopulationTable<T>) -> Self {
        EmbeddingSet {
            population,
            individual: None,
            unseen: None,
        }
    }

    pub fn lookup(&self, r: EmbeddingRef) -> Result<&'a [T]> {
        match r {
            EmbeddingRef::Population(bin) => {
                if bin >= self.population.rows.shape[0] {
                    return Err(Error::Shape(format!("population bin {bin} out of range")));
                }
                Ok(self.population.row(bin))
            }
            EmbeddingRef::Individual(row) => {
                let t = self
                    .individual
                    .ok_or_else(|| Error::Contract("individual embedding requested but no table loaded".into()))?;
                if row >= t.len() {
                    return Err(Error::Shape(format!("individual row {row} out of range")));
                }
                Ok(t.row(row))
            }
            EmbeddingRef::Unseen => self
                .unseen
                .ok_or_else(|| Error::Contract("unseen-player embedding requested but none given".into())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradMode {
    /// Universal parameters and embeddings.
    Full,
    /// Embeddings only; no gradient is computed for any universal parameter.
    EmbeddingsOnly,
}

#[derive(Clone, Debug)]
pub struct Gradients<T> {
    /// `None` in embeddings-only mode.
    pub phi: Option<ModelState<T>>,
    pub population: Tensor<T>,
    pub individual: Option<Tensor<T>>,
    pub unseen: Option<Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Largest absolute universal-parameter gradient (zero when not computed).
    pub fn phi_max_abs(&self) -> T {
        self.phi.as_ref().map_or(T::zero(), |g| g.max_abs())
    }
}

/// Mean negative log-likelihood of the targets and its gradients.
pub fn loss_and_gradients<T, F>(
    model: &ModelState<T>,
    batch: &[&TrainingExample],
    resolve: F,
    tables: &EmbeddingSet<'_, T>,
    mode: GradMode,
) -> Result<(T, Gradients<T>)>
where
    T: Scalar,
    F: Fn(&TrainingExample) -> Result<(EmbeddingRef, EmbeddingRef)>,
{
    if batch.is_empty() {
        return Err(Error::Data("loss requested on an empty batch".into()));
    }
    let mut grads = Gradients {
        phi: match mode {
            GradMode::Full => Some(model.zeros_like()),
            GradMode::EmbeddingsOnly => None,
        },
        population: tables.population.rows.zeros_like(),
        individual: tables.individual.map(|t| t.rows.zeros_like()),
        unseen: tables.unseen.map(|u| vec![T::zero(); u.len()]),
    };
    let scale = T::one() / T::of(batch.len() as f64);
    let mut total = T::zero();
    for ex in batch {
        let (ra, ro) = resolve(ex)?;
        let (e_a, e_o) = (tables.lookup(ra)?, tables.lookup(ro)?);
        let x = encode_position(&ex.position)?.to_tensor::<T>();
        let (logits, cache) = model.forward_cached(&x, e_a, e_o)?;
        if ex.target >= logits.len() {
            return Err(Error::Shape(format!("target index {} outside {} logits", ex.target, logits.len())));
        }
        total += -log_softmax_at(&logits, ex.target);
        let mut dlogits = softmax(&logits);
        dlogits[ex.target] -= T::one();
        dlogits.iter_mut().for_each(|v| *v *= scale);
        let (da, d_o) = model.backward(&cache, &dlogits, grads.phi.as_mut());
        accumulate(&mut grads, ra, &da);
        accumulate(&mut grads, ro, &d_o);
    }
    Ok((total * scale, grads))
}

fn accumulate<T: Scalar>(g: &mut Gradients<T>, r: EmbeddingRef, d: &[T]) {
    let dst: &mut [T] = match r {
        EmbeddingRef::Population(bin) => g.population.row_mut(bin),
        EmbeddingRef::Individual(row) => g.individual.as_mut().expect("resolved above").row_mut(row),
        EmbeddingRef::Unseen => g.unseen.as_mut().expect("resolved above"),
    };
    for (a, &b) in dst.iter_mut().zip(d) {
        *a += b;
    }
}

/// Mean negative log-likelihood without gradients.
pub fn mean_loss<T, F>(model: &ModelState<T>, batch: &[&TrainingExample], resolve: F, tables: &EmbeddingSet<'_, T>) -> Result<T>
where
    T: Scalar,
    F: Fn(&TrainingExample) -> Result<(EmbeddingRef, EmbeddingRef)>,
{
    if batch.is_empty() {
        return Err(Error::Data("loss requested on an empty batch".into()));
    }
    let mut total = T::zero();
    for ex in batch {
        let (ra, ro) = resolve(ex)?;
        let x = encode_position(&ex.position)?.to_tensor::<T>();
        let logits = model.forward(&x, tables.lookup(ra)?, tables.lookup(ro)?)?;
        total += -log_softmax_at(&logits, ex.target);
    }
    Ok(total / T::of(batch.len() as f64))
}
