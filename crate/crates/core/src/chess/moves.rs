use std::fmt;
use std::str::FromStr;

use super::position::{PieceKind, Square};
use crate::error::{Error, Result};

/// A policy label: from/to squares plus an optional underpromotion.
/// Queen promotions are the plain from/to label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MoveLabel {
    pub from: Square,
    pub to: Square,
    pub promotion: Option<PieceKind>,
}

impl MoveLabel {
    pub fn new(from: Square, to: Square, promotion: Option<PieceKind>) -> MoveLabel {
        MoveLabel { from, to, promotion }
    }

    pub fn flip(self) -> MoveLabel {
        MoveLabel {
            from: self.from.mirror(),
            to: self.to.mirror(),
            promotion: self.promotion,
        }
    }

    pub fn uci(&self) -> String {
        self.to_string()
    }
}

pub fn flip_move(m: MoveLabel) -> MoveLabel {
    m.flip()
}

impl fmt::Display for MoveLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.from, self.to)?;
        if let Some(p) = self.promotion {
            write!(f, "{}", p.letter())?;
        }
        Ok(())
    }
}

impl FromStr for MoveLabel {
    type Err = Error;

    /// UCI text. A trailing `q` is accepted and normalized to the plain label.
    fn from_str(s: &str) -> Result<MoveLabel> {
        if !s.is_ascii() || !(4..=5).contains(&s.len()) {
            return Err(Error::Move(format!("bad UCI move '{s}'")));
        }
        let from = Square::parse(&s[0..2]).ok_or_else(|| Error::Move(format!("bad UCI move '{s}'")))?;
        let to = Square::parse(&s[2..4]).ok_or_else(|| Error::Move(format!("bad UCI move '{s}'")))?;
        let promotion = match s[4..].chars().next() {
            None => None,
            Some(c) => match PieceKind::from_letter(c) {
                Some(PieceKind::Queen) => None,
                Some(k @ (PieceKind::Knight | PieceKind::Bishop | PieceKind::Rook)) => Some(k),
                _ => return Err(Error::Move(format!("bad promotion in '{s}'"))),
            },
        };
        Ok(MoveLabel { from, to, promotion })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mv(s: &str) -> MoveLabel {
        s.parse().unwrap()
    }

    #[test]
    fn flip_examples() {
        assert_eq!(mv("e7e5").flip(), mv("e2e4"));
        assert_eq!(mv("e7e8n").flip(), mv("e2e1n"));
        assert_eq!(mv("e7e8n").flip().flip(), mv("e7e8n"));
    }

    #[test]
    fn uci_round_trip_and_queen_normalization() {
        assert_eq!(mv("e7e8q"), mv("e7e8"));
        assert_eq!(mv("a7b8r").to_string(), "a7b8r");
        assert!("e7e8k".parse::<MoveLabel>().is_err());
        assert!("z1e2".parse::<MoveLabel>().is_err());
    }
}
