//! Population and individual skill embeddings and their initializers.

use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chess::Position;
use crate::error::{Error, Result};
use crate::nn::tensor::{softmax, Tensor};
use crate::pgn::{rating_to_bin, PrototypeSet, NUM_BINS};
use crate::pmn::Pmn;
use crate::scalar::Scalar;

pub const DEFAULT_TOP_K: usize = 2;
pub const DEFAULT_TEMPERATURE: f64 = 0.5;

/// One embedding row per rating bin.
#[derive(Clone, Debug, PartialEq)]
pub struct PopulationTable<T> {
    pub rows: Tensor<T>,
}

impl<T: Scalar> PopulationTable<T> {
    pub fn init(d: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PopulationTable {
            rows: Tensor::uniform(&[NUM_BINS, d], 1.0 / (d as f64).sqrt(), &mut rng),
        }
    }

    pub fn from_tensor(rows: Tensor<T>) -> Result<Self> {
        if rows.shape.len() != 2 || rows.shape[0] != NUM_BINS {
            return Err(Error::Shape(format!("population table must be [{NUM_BINS}, d], got {:?}", rows.shape)));
        }
        check_finite(&rows.data, "population table")?;
        Ok(PopulationTable { rows })
    }

    pub fn dim(&self) -> usize {
        self.rows.shape[1]
    }

    pub fn row(&self, bin: usize) -> &[T] {
        self.rows.row(bin)
    }

    pub fn for_rating(&self, rating: u32) -> &[T] {
        self.rows.row(rating_to_bin(rating))
    }
}

/// One embedding row per prototype player, in prototype-set row order.
#[derive(Clone, Debug, PartialEq)]
pub struct IndividualTable<T> {
    pub rows: Tensor<T>,
    pub ids: Vec<String>,
}

impl<T: Scalar> IndividualTable<T> {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows.shape[1]
    }

    pub fn row(&self, i: usize) -> &[T] {
        self.rows.row(i)
    }

    pub fn row_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }
}

/// Row `i` is a copy of the population row for prototype `i`'s rating bin.
pub fn init_individual_from_population<T: Scalar>(population: &PopulationTable<T>, prototypes: &PrototypeSet) -> Result<IndividualTable<T>> {
    let d = population.dim();
    let mut data = Vec::with_capacity(prototypes.len() * d);
    for row in 0..prototypes.len() {
        let bin = rating_to_bin(prototypes.rating(row));
        if bin >= NUM_BINS {
            return Err(Error::Data(format!("prototype row {row} has no rating bin")));
        }
        data.extend_from_slice(population.row(bin));
    }
    Ok(IndividualTable {
        rows: Tensor::from_vec(&[prototypes.len(), d], data),
        ids: prototypes.ids().to_vec(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    StrengthInit,
    PrototypeInit,
    Trained,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::StrengthInit => "strength-init",
            Provenance::PrototypeInit => "prototype-init",
            Provenance::Trained => "trained",
        }
    }
}

/// Embedding of a player outside the prototype set.
#[derive(Clone, Debug, PartialEq)]
pub struct UnseenEmbedding<T> {
    pub player_id: String,
    pub vector: Vec<T>,
    pub provenance: Provenance,
    /// `(prototype row, weight)` pairs for prototype-informed vectors.
    pub sources: Option<Vec<(usize, f64)>>,
}

pub fn strength_init<T: Scalar>(player_id: &str, rating: u32, population: &PopulationTable<T>) -> UnseenEmbedding<T> {
    UnseenEmbedding {
        player_id: player_id.to_string(),
        vector: population.for_rating(rating).to_vec(),
        provenance: Provenance::StrengthInit,
        sources: None,
    }
}

/// Top-`k` rows of `softmax(logits / temperature)`, renormalized. Ties go to
/// the smaller row.
pub fn top_k_weights(logits: &[f64], k: usize, temperature: f64) -> Result<Vec<(usize, f64)>> {
    if k == 0 {
        return Err(Error::Config("top-k must be at least 1".into()));
    }
    if k > logits.len() {
        return Err(Error::Config(format!("top-k {k} exceeds the {} prototypes", logits.len())));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
    }
    let scaled: Vec<f64> = logits.iter().map(|l| l / temperature).collect();
    let p = softmax(&scaled);
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    order.truncate(k);
    let total: f64 = order.iter().map(|&i| p[i]).sum();
    let mut out: Vec<(usize, f64)> = order.iter().map(|&i| (i, p[i] / total)).collect();
    if !total.is_finite() || total <= 0.0 {
        // every selected probability underflowed; fall back to equal weights
        let w = 1.0 / k as f64;
        out.iter_mut().for_each(|(_, x)| *x = w);
    }
    Ok(out)
}

/// Weighted average of prototype rows chosen from PMN logits.
pub fn prototype_init_from_logits<T: Scalar>(
    player_id: &str,
    logits: &[f64],
    table: &IndividualTable<T>,
    k: usize,
    temperature: f64,
) -> Result<UnseenEmbedding<T>> {
    if logits.len() != table.len() {
        return Err(Error::Shape(format!(
            "matcher scores {} prototypes but the embedding table has {}",
            logits.len(),
            table.len()
        )));
    }
    let weights = top_k_weights(logits, k, temperature)?;
    let mut vector = vec![T::zero(); table.dim()];
    for &(row, w) in &weights {
        let w = T::of(w);
        for (v, &x) in vector.iter_mut().zip(table.row(row)) {
            *v += w * x;
        }
    }
    Ok(UnseenEmbedding {
        player_id: player_id.to_string(),
        vector,
        provenance: Provenance::PrototypeInit,
        sources: Some(weights),
    })
}

/// Matches a move history against the prototypes and averages the top-`k` rows.
pub fn prototype_init<T: Scalar>(
    player_id: &str,
    history: &[(Position, Position)],
    pmn: &Pmn<T>,
    table: &IndividualTable<T>,
    k: usize,
    temperature: f64,
) -> Result<UnseenEmbedding<T>> {
    if history.is_empty() {
        return Err(Error::Data(format!("player '{player_id}' has no moves to match")));
    }
    if pmn.prototype_hash() != pmn_table_hash(table) {
        return Err(Error::Config("matcher and embedding table were built from different prototype sets".into()));
    }
    let logits: Vec<f64> = pmn.classify_pairs(history)?.into_iter().map(Scalar::f64).collect();
    prototype_init_from_logits(player_id, &logits, table, k, temperature)
}

fn pmn_table_hash<T>(table: &IndividualTable<T>) -> String {
    crate::pgn::hash_ids(&table.ids)
}

fn check_finite<T: Scalar>(v: &[T], what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Data(format!("{what} contains non-finite values")))
    }
}

/// One line of the embedding export.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub player_id: String,
    pub provenance: String,
    pub vector: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sources: Option<Vec<(usize, f64)>>,
}

impl<T: Scalar> From<&UnseenEmbedding<T>> for EmbeddingRecord {
    fn from(e: &UnseenEmbedding<T>) -> Self {
        EmbeddingRecord {
            player_id: e.player_id.clone(),
            provenance: e.provenance.as_str().to_string(),
            vector: e.vector.iter().map(|x| x.f64()).collect(),
            sources: e.sources.clone(),
        }
    }
}

impl<T: Scalar> UnseenEmbedding<T> {
    pub fn from_record(r: &EmbeddingRecord) -> Result<Self> {
        let provenance = match r.provenance.as_str() {
            "strength-init" => Provenance::StrengthInit,
            "prototype-init" => Provenance::PrototypeInit,
            "trained" => Provenance::Trained,
            other => return Err(Error::Data(format!("unknown embedding provenance '{other}'"))),
        };
        let vector: Vec<T> = r.vector.iter().map(|&x| T::of(x)).collect();
        check_finite(&vector, "embedding")?;
        Ok(UnseenEmbedding {
            player_id: r.player_id.clone(),
            vector,
            provenance,
            sources: r.sources.clone(),
        })
    }
}

/// Writes one JSON object per line.
pub fn write_embeddings<W: Write>(out: &mut W, records: &[EmbeddingRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_embeddings<R: BufRead>(input: R) -> Result<Vec<EmbeddingRecord>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// Export records for every row of the individual table.
pub fn individual_records<T: Scalar>(table: &IndividualTable<T>) -> Vec<EmbeddingRecord> {
    table
        .ids
        .iter()
        .enumerate()
        .map(|(i, id)| EmbeddingRecord {
            player_id: id.clone(),
            provenance: Provenance::Trained.as_str().to_string(),
            vector: table.row(i).iter().map(|x| x.f64()).collect(),
            sources: None,
        })
        .collect()
}
