use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};

use super::filter::{filter_game, reject_reason, FilterConfig, Filtered, RejectReason, TrainingExample};
use super::reader::GameRecord;
use crate::error::{Error, Result};

pub const NUM_BINS: usize = 11;
pub const DEFAULT_TEST_SIZE: usize = 2048;

/// Rating bin: 0 for `<= 1100`, `k` for `(1000 + 100k, 1100 + 100k]`,
/// 10 for `> 2000`.
pub fn rating_to_bin(rating: u32) -> usize {
    if rating <= 1100 {
        0
    } else if rating > 2000 {
        10
    } else {
        ((rating - 1001) / 100) as usize
    }
}

/// Player-major example store with a chronological train/test split.
#[derive(Clone, Debug)]
pub struct PlayerDataset {
    pub player_id: String,
    /// Rating recorded in the player's most recent retained game.
    pub rating: u32,
    examples: Vec<TrainingExample>,
    train_len: usize,
    test_len: usize,
    requested_test: usize,
}

/// Read handle for the training portion. Training code only accepts this type.
#[derive(Clone, Copy, Debug)]
pub struct TrainSplit<'a> {
    pub player_id: &'a str,
    pub rating: u32,
    pub examples: &'a [TrainingExample],
}

/// Read handle for the held-out portion, consumed by evaluation.
#[derive(Clone, Copy, Debug)]
pub struct TestSplit<'a> {
    pub player_id: &'a str,
    pub rating: u32,
    pub examples: &'a [TrainingExample],
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub available: usize,
    pub train: usize,
    pub test: usize,
    pub truncated_test: bool,
}

impl PlayerDataset {
    /// Splits chronologically ordered examples: train is the first
    /// `min(train_size, available - test)`, test the last
    /// `min(test_size, available - train_size)`.
    pub fn from_examples(
        player_id: impl Into<String>,
        rating: u32,
        examples: Vec<TrainingExample>,
        train_size: usize,
        test_size: usize,
    ) -> Result<PlayerDataset> {
        let player_id = player_id.into();
        if examples.is_empty() {
            return Err(Error::Data(format!("player '{player_id}' has no retained examples")));
        }
        let available = examples.len();
        let test_len = test_size.min(available.saturating_sub(train_size));
        let train_len = train_size.min(available - test_len);
        if test_len < test_size {
            warn!(
                "player '{player_id}': {available} examples cannot hold {train_size} train + {test_size} test; test truncated to {test_len}"
            );
        }
        Ok(PlayerDataset {
            player_id,
            rating,
            examples,
            train_len,
            test_len,
            requested_test: test_size,
        })
    }

    pub fn resplit(&self, train_size: usize, test_size: usize) -> PlayerDataset {
        PlayerDataset::from_examples(self.player_id.clone(), self.rating, self.examples.clone(), train_size, test_size)
            .expect("dataset is nonempty")
    }

    pub fn train(&self) -> TrainSplit<'_> {
        TrainSplit {
            player_id: &self.player_id,
            rating: self.rating,
            examples: &self.examples[..self.train_len],
        }
    }

    pub fn test(&self) -> TestSplit<'_> {
        TestSplit {
            player_id: &self.player_id,
            rating: self.rating,
            examples: &self.examples[self.examples.len() - self.test_len..],
        }
    }

    pub fn all_examples(&self) -> &[TrainingExample] {
        &self.examples
    }

    pub fn into_examples(self) -> Vec<TrainingExample> {
        self.examples
    }

    pub fn sizes(&self) -> SplitSizes {
        SplitSizes {
            available: self.examples.len(),
            train: self.train_len,
            test: self.test_len,
            truncated_test: self.test_len < self.requested_test,
        }
    }

    pub fn bin(&self) -> usize {
        rating_to_bin(self.rating)
    }
}

/// Filters a chronologically ordered game sequence from one player's
/// perspective and splits the result.
pub fn build_player_dataset<'a, I>(
    games: I,
    player_id: &str,
    cfg: &FilterConfig,
    train_size: usize,
    test_size: usize,
) -> Result<PlayerDataset>
where
    I: IntoIterator<Item = &'a GameRecord>,
{
    let mut examples = Vec::new();
    let mut rating = None;
    for g in games {
        if g.white_name != player_id && g.black_name != player_id {
            continue;
        }
        if let Filtered::Kept(ex) = filter_game(g, cfg, player_id)? {
            if let Some(e) = ex.last() {
                rating = Some(e.active_rating);
            }
            examples.extend(ex);
        }
    }
    let rating = rating.ok_or_else(|| Error::Data(format!("player '{player_id}' has no retained examples")))?;
    PlayerDataset::from_examples(player_id, rating, examples, train_size, test_size)
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub games_seen: usize,
    pub games_kept: usize,
    pub games_unparseable: usize,
    pub rejected: BTreeMap<String, usize>,
    pub examples: usize,
}

/// Accumulates both players' examples from a game stream, in stream order.
#[derive(Debug, Default)]
pub struct DatasetBuilder {
    cfg: FilterConfig,
    players: BTreeMap<String, (u32, Vec<TrainingExample>)>,
    pub stats: IngestStats,
}

impl DatasetBuilder {
    pub fn new(cfg: FilterConfig) -> Self {
        DatasetBuilder {
            cfg,
            players: BTreeMap::new(),
            stats: IngestStats::default(),
        }
    }

    pub fn add_game(&mut self, g: &GameRecord) -> Result<()> {
        self.stats.games_seen += 1;
        if let Some(reason) = reject_reason(g, &self.cfg) {
            *self.stats.rejected.entry(reason_key(reason)).or_default() += 1;
            return Ok(());
        }
        self.stats.games_kept += 1;
        for name in [&g.white_name, &g.black_name] {
            let ex = filter_game(g, &self.cfg, name)?.examples();
            if let Some(last) = ex.last() {
                let rating = last.active_rating;
                self.stats.examples += ex.len();
                let entry = self.players.entry(name.clone()).or_default();
                entry.0 = rating;
                entry.1.extend(ex);
            }
        }
        Ok(())
    }

    pub fn into_datasets(self, train_size: usize, test_size: usize) -> Vec<PlayerDataset> {
        self.players
            .into_iter()
            .filter(|(_, (_, ex))| !ex.is_empty())
            .map(|(id, (rating, ex))| {
                PlayerDataset::from_examples(id, rating, ex, train_size, test_size).expect("nonempty")
            })
            .collect()
    }
}

fn reason_key(r: RejectReason) -> String {
    r.as_str().to_string()
}

/// Stable chronological sort by timestamp; games without one keep their
/// relative position after all timestamped games.
pub fn sort_chronologically(games: &mut [GameRecord]) {
    games.sort_by(|a, b| match (&a.timestamp, &b.timestamp) {
        (Some(x), Some(y)) => x.cmp(y),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
}
