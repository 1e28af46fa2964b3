use serde::{Deserialize, Serialize};

use super::reader::GameRecord;
use crate::chess::{make_move, vocabulary, Color, Position, PolicyIndex};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeControlClass {
    Blitz,
    Any,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    /// Plies `1..=min_ply` are discarded.
    pub min_ply: u32,
    pub max_ply: u32,
    /// Positions where either clock is strictly below this are discarded.
    #[serde(alias = "min_clock")]
    pub min_clock_seconds: u32,
    pub require_clock: bool,
    #[serde(alias = "time_control")]
    pub time_control_class: TimeControlClass,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            min_ply: 10,
            max_ply: 300,
            min_clock_seconds: 30,
            require_clock: true,
            time_control_class: TimeControlClass::Blitz,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_ply < 1 || self.min_ply >= self.max_ply {
            return Err(Error::Config(format!(
                "filter requires 1 <= min_ply < max_ply, got {} and {}",
                self.min_ply, self.max_ply
            )));
        }
        Ok(())
    }
}

/// Estimated duration `initial + 40 * increment` in `[180, 480)` seconds.
pub fn is_blitz(g: &GameRecord) -> bool {
    g.time_control
        .is_some_and(|tc| (180..480).contains(&tc.estimated_seconds()))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainingExample {
    /// White to move; black-to-move positions are stored flipped.
    pub position: Position,
    /// Flip-adjusted ground-truth move.
    pub target: PolicyIndex,
    pub active_rating: u32,
    pub opponent_rating: u32,
    pub player_id: String,
    pub ply: u32,
    pub game_id: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    MissingElo,
    TimeControl,
    MissingClock,
    NoMoves,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::MissingElo => "missing elo",
            RejectReason::TimeControl => "time control",
            RejectReason::MissingClock => "missing clock",
            RejectReason::NoMoves => "no moves",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Filtered {
    Kept(Vec<TrainingExample>),
    Rejected(RejectReason),
}

impl Filtered {
    pub fn examples(self) -> Vec<TrainingExample> {
        match self {
            Filtered::Kept(v) => v,
            Filtered::Rejected(_) => Vec::new(),
        }
    }
}

/// Game-level checks shared by both perspectives of a game.
pub fn reject_reason(g: &GameRecord, cfg: &FilterConfig) -> Option<RejectReason> {
    if g.white_elo.is_none() || g.black_elo.is_none() {
        return Some(RejectReason::MissingElo);
    }
    if cfg.time_control_class == TimeControlClass::Blitz && !is_blitz(g) {
        return Some(RejectReason::TimeControl);
    }
    if g.moves.is_empty() {
        return Some(RejectReason::NoMoves);
    }
    if cfg.require_clock && g.moves.iter().any(|m| m.clock.is_none()) {
        return Some(RejectReason::MissingClock);
    }
    None
}

/// Emits one example per retained half-move played by `perspective_player`.
pub fn filter_game(g: &GameRecord, cfg: &FilterConfig, perspective_player: &str) -> Result<Filtered> {
    let color = if g.white_name == perspective_player {
        Color::White
    } else if g.black_name == perspective_player {
        Color::Black
    } else {
        return Err(Error::Data(format!(
            "player '{perspective_player}' did not play in game {}",
            g.game_id
        )));
    };
    if let Some(reason) = reject_reason(g, cfg) {
        return Ok(Filtered::Rejected(reason));
    }
    let (own_elo, opp_elo) = match color {
        Color::White => (g.white_elo, g.black_elo),
        Color::Black => (g.black_elo, g.white_elo),
    };
    let (active_rating, opponent_rating) = (own_elo.unwrap_or(0), opp_elo.unwrap_or(0));

    let vocab = vocabulary();
    let initial = g.time_control.map(|tc| tc.initial_seconds);
    // most recent reading per color, before any move the starting time
    let mut clocks = [initial, initial];
    let mut pos = g.start.clone();
    let mut out = Vec::new();
    for (i, mv) in g.moves.iter().enumerate() {
        let ply = i as u32 + 1;
        let mover = pos.side_to_move();
        let clocks_ok = clocks.iter().all(|c| c.map_or(true, |s| s >= cfg.min_clock_seconds));
        if mover == color && ply > cfg.min_ply && ply <= cfg.max_ply && clocks_ok {
            let (position, label) = match mover {
                Color::White => (pos.clone(), mv.label),
                Color::Black => (pos.flip(), mv.label.flip()),
            };
            out.push(TrainingExample {
                position: position.with_ply(ply),
                target: vocab.index_of(&label)?,
                active_rating,
                opponent_rating,
                player_id: perspective_player.to_string(),
                ply,
                game_id: g.game_id.clone(),
            });
        }
        pos = make_move(&pos, mv.label)?;
        if mv.clock.is_some() {
            clocks[mover.index()] = mv.clock;
        }
    }
    Ok(Filtered::Kept(out))
}
