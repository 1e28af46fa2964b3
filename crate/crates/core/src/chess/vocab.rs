use std::collections::HashMap;
use std::sync::OnceLock;

use sha2::{Digest, Sha256};

use super::moves::MoveLabel;
use super::position::{PieceKind, Square};
use crate::error::{Error, Result};

/// Index into the policy output.
pub type PolicyIndex = usize;

/// Fixed enumeration of encodable moves: every queen-ray or knight from/to
/// pair sorted by `(from, to)`, followed by the N/B/R underpromotions from
/// rank 7 to rank 8 sorted by `(from, to, piece)`.
#[derive(Debug, Clone)]
pub struct MoveVocabulary {
    entries: Vec<MoveLabel>,
    index: HashMap<MoveLabel, PolicyIndex>,
    hash: String,
}

const QUEEN_DIRS: [(i8, i8); 8] = [(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)];
const KNIGHT: [(i8, i8); 8] = [(1, 2), (2, 1), (2, -1), (1, -2), (-1, -2), (-2, -1), (-2, 1), (-1, 2)];

/// Builds a fresh vocabulary. Prefer [`vocabulary`] for the shared instance.
pub fn build_move_vocabulary() -> MoveVocabulary {
    let mut entries = Vec::with_capacity(1858);
    for from in Square::all() {
        let mut targets: Vec<Square> = Vec::new();
        for (df, dr) in QUEEN_DIRS {
            let mut cur = from;
            while let Some(next) = cur.offset(df, dr) {
                targets.push(next);
                cur = next;
            }
        }
        targets.extend(KNIGHT.iter().filter_map(|&(df, dr)| from.offset(df, dr)));
        targets.sort();
        entries.extend(targets.into_iter().map(|to| MoveLabel::new(from, to, None)));
    }
    for from in Square::all().filter(|s| s.rank() == 6) {
        for df in [-1, 0, 1] {
            if let Some(to) = from.offset(df, 1) {
                for kind in [PieceKind::Knight, PieceKind::Bishop, PieceKind::Rook] {
                    entries.push(MoveLabel::new(from, to, Some(kind)));
                }
            }
        }
    }
    let index = entries.iter().enumerate().map(|(i, m)| (*m, i)).collect();
    let mut hasher = Sha256::new();
    for m in &entries {
        hasher.update(m.uci().as_bytes());
        hasher.update(b"\n");
    }
    let hash = hex::encode(hasher.finalize());
    MoveVocabulary { entries, index, hash }
}

/// Process-wide canonical vocabulary.
pub fn vocabulary() -> &'static MoveVocabulary {
    static VOCAB: OnceLock<MoveVocabulary> = OnceLock::new();
    VOCAB.get_or_init(build_move_vocabulary)
}

impl MoveVocabulary {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[MoveLabel] {
        &self.entries
    }

    pub fn move_to_index(&self, m: &MoveLabel) -> Option<PolicyIndex> {
        self.index.get(m).copied()
    }

    pub fn index_of(&self, m: &MoveLabel) -> Result<PolicyIndex> {
        self.move_to_index(m)
            .ok_or_else(|| Error::Move(format!("{m} is not in the move vocabulary")))
    }

    pub fn index_to_move(&self, i: PolicyIndex) -> Option<MoveLabel> {
        self.entries.get(i).copied()
    }

    /// Hex SHA-256 over the UCI entries, one per line.
    pub fn hash(&self) -> &str {
        &self.hash
    }
}
