use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::dataset::{rating_to_bin, NUM_BINS};
use crate::error::{Error, Result};

pub const DEFAULT_MIN_HISTORY: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlayerStats {
    pub player_id: String,
    /// Retained positions.
    pub examples: usize,
    pub rating: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionStrategy {
    Uniform,
    LowOnly,
    MidOnly,
    HighOnly,
}

impl SelectionStrategy {
    pub const ALL: [SelectionStrategy; 4] = [
        SelectionStrategy::Uniform,
        SelectionStrategy::LowOnly,
        SelectionStrategy::MidOnly,
        SelectionStrategy::HighOnly,
    ];

    pub fn bins(self) -> std::ops::Range<usize> {
        match self {
            SelectionStrategy::Uniform => 0..NUM_BINS,
            SelectionStrategy::LowOnly => 0..4,
            SelectionStrategy::MidOnly => 4..8,
            SelectionStrategy::HighOnly => 8..NUM_BINS,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SelectionStrategy::Uniform => "uniform",
            SelectionStrategy::LowOnly => "low-only",
            SelectionStrategy::MidOnly => "mid-only",
            SelectionStrategy::HighOnly => "high-only",
        }
    }
}

impl std::str::FromStr for SelectionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SelectionStrategy::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown prototype strategy '{s}'")))
    }
}

/// Selected prototype players. Rows of the individual embedding table follow
/// bin order, and within a bin descending example count.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrototypeSet {
    pub bins: Vec<Vec<String>>,
    pub ratings: Vec<u32>,
    ids: Vec<String>,
    #[serde(skip)]
    id_to_row: HashMap<String, usize>,
}

impl PrototypeSet {
    pub fn from_bins(bins: Vec<Vec<String>>, ratings_by_id: &HashMap<String, u32>) -> Result<PrototypeSet> {
        let ids: Vec<String> = bins.iter().flatten().cloned().collect();
        let mut ratings = Vec::with_capacity(ids.len());
        for id in &ids {
            ratings.push(
                *ratings_by_id
                    .get(id)
                    .ok_or_else(|| Error::Data(format!("prototype '{id}' has no rating")))?,
            );
        }
        let mut set = PrototypeSet {
            bins,
            ratings,
            ids,
            id_to_row: HashMap::new(),
        };
        set.reindex()?;
        Ok(set)
    }

    /// Rebuilds the id lookup (needed after deserialization).
    pub fn reindex(&mut self) -> Result<()> {
        self.id_to_row.clear();
        for (row, id) in self.ids.iter().enumerate() {
            if self.id_to_row.insert(id.clone(), row).is_some() {
                return Err(Error::Data(format!("prototype '{id}' listed twice")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, id: &str) -> Option<usize> {
        self.id_to_row.get(id).copied()
    }

    pub fn id(&self, row: usize) -> Option<&str> {
        self.ids.get(row).map(String::as_str)
    }

    pub fn rating(&self, row: usize) -> u32 {
        self.ratings[row]
    }

    /// Hex SHA-256 over the row-ordered ids.
    pub fn hash(&self) -> String {
        hash_ids(&self.ids)
    }
}

pub fn hash_ids(ids: &[String]) -> String {
    let mut h = Sha256::new();
    for id in ids {
        h.update(id.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

/// Picks the most frequent qualifying players per bin.
///
/// `Uniform` takes `n` per bin from all 11 bins. Biased strategies draw
/// `11 * n` players from their bin subset, split as evenly as possible with
/// remainders going to the lower bins. Ties on count go to the smaller id.
pub fn select_prototypes(
    stats: &[PlayerStats],
    n: usize,
    strategy: SelectionStrategy,
    min_history: usize,
) -> Result<PrototypeSet> {
    if stats.is_empty() {
        return Err(Error::Data("no player statistics to select prototypes from".into()));
    }
    if n == 0 {
        return Err(Error::Config("prototypes per bin must be at least 1".into()));
    }
    let mut per_bin: Vec<Vec<&PlayerStats>> = vec![Vec::new(); NUM_BINS];
    for s in stats.iter().filter(|s| s.examples >= min_history) {
        per_bin[rating_to_bin(s.rating)].push(s);
    }
    for bin in &mut per_bin {
        bin.sort_by(|a, b| b.examples.cmp(&a.examples).then_with(|| a.player_id.cmp(&b.player_id)));
    }

    let range = strategy.bins();
    let total = NUM_BINS * n;
    let width = range.len();
    let mut quotas = vec![0usize; NUM_BINS];
    for (k, b) in range.clone().enumerate() {
        quotas[b] = total / width + usize::from(k < total % width);
    }

    let deficient: Vec<String> = (0..NUM_BINS)
        .filter(|&b| per_bin[b].len() < quotas[b])
        .map(|b| format!("bin {b} ({} of {})", per_bin[b].len(), quotas[b]))
        .collect();
    if !deficient.is_empty() {
        return Err(Error::Data(format!(
            "not enough qualifying prototype players: {}",
            deficient.join(", ")
        )));
    }

    let bins: Vec<Vec<String>> = (0..NUM_BINS)
        .map(|b| per_bin[b][..quotas[b]].iter().map(|s| s.player_id.clone()).collect())
        .collect();
    let ratings: HashMap<String, u32> = stats.iter().map(|s| (s.player_id.clone(), s.rating)).collect();
    PrototypeSet::from_bins(bins, &ratings)
}
