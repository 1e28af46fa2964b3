//! PGN ingestion: streaming parse, position filters, rating bins, per-player
//! datasets and prototype selection.

mod container;
mod dataset;
mod filter;
mod prototypes;
mod reader;

pub use container::{
    decode_examples, encode_examples, file_stem, list_manifests, read_dataset, read_manifest, write_dataset,
    DatasetManifest,
};
pub use dataset::{
    build_player_dataset, rating_to_bin, sort_chronologically, DatasetBuilder, IngestStats, PlayerDataset,
    SplitSizes, TestSplit, TrainSplit, DEFAULT_TEST_SIZE, NUM_BINS,
};
pub use filter::{filter_game, is_blitz, reject_reason, FilterConfig, Filtered, RejectReason, TimeControlClass, TrainingExample};
pub use prototypes::{hash_ids, select_prototypes, PlayerStats, PrototypeSet, SelectionStrategy, DEFAULT_MIN_HISTORY};
pub use reader::{parse_clock, parse_pgn_stream, GameRecord, GameResult, PgnReader, PlayedMove, TimeControl};
