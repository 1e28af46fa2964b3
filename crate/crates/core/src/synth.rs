//! Synthetic players with fixed move preferences, rendered as PGN games.
//! Used by the tests and the demo pipeline.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chess::{is_capture, legal_moves, make_move, to_san, vocabulary, Color, MoveLabel, Position};
use crate::error::Result;
use crate::pgn::TrainingExample;

/// Linear move-scoring preferences. Ranks are measured from the mover's side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Style {
    pub piece: [f64; 6],
    pub file: [f64; 8],
    pub rank: [f64; 8],
    pub capture: f64,
    pub advance: f64,
}

impl Style {
    pub fn random(seed: u64) -> Style {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u = || rng.gen_range(-1.0..1.0);
        Style {
            piece: std::array::from_fn(|_| u()),
            file: std::array::from_fn(|_| u()),
            rank: std::array::from_fn(|_| u()),
            capture: u(),
            advance: u(),
        }
    }

    /// Random preferences plus a strong pull towards one piece type and one
    /// file, so that styles with different `index` rarely agree.
    pub fn distinct(index: usize, seed: u64) -> Style {
        let mut s = Style::random(seed.wrapping_mul(31).wrapping_add(index as u64));
        s.piece[index % 5] += 3.0;
        s.file[(3 * index + 1) % 8] += 2.0;
        s
    }

    pub fn score(&self, pos: &Position, m: MoveLabel) -> f64 {
        let piece = pos.piece_at(m.from).map_or(0, |p| p.kind.index());
        let rel = |r: u8| if pos.side_to_move() == Color::White { r } else { 7 - r };
        let (from_rank, to_rank) = (rel(m.from.rank()), rel(m.to.rank()));
        self.piece[piece]
            + self.file[m.to.file() as usize]
            + self.rank[to_rank as usize]
            + if is_capture(pos, m) { self.capture } else { 0.0 }
            + self.advance * (to_rank as f64 - from_rank as f64)
    }

    /// Highest-scoring legal move; ties go to the smaller policy index of the
    /// mover-perspective label.
    pub fn choose(&self, pos: &Position) -> Option<MoveLabel> {
        let vocab = vocabulary();
        let key = |m: &MoveLabel| {
            let label = if pos.side_to_move() == Color::White { *m } else { m.flip() };
            vocab.index_of(&label).unwrap_or(usize::MAX)
        };
        legal_moves(pos)
            .into_iter()
            .map(|m| (self.score(pos, m), key(&m), m))
            .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)))
            .map(|(_, _, m)| m)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthPlayer {
    pub id: String,
    pub rating: u32,
    pub style: Style,
    /// Probability of a uniformly random legal move instead of the preferred one.
    pub noise: f64,
}

impl SynthPlayer {
    pub fn new(id: &str, rating: u32, style: Style, noise: f64) -> Self {
        SynthPlayer {
            id: id.to_string(),
            rating,
            style,
            noise,
        }
    }

    /// Same preferences, different identity and noise level.
    pub fn noisy_clone(&self, id: &str, noise: f64) -> Self {
        SynthPlayer {
            id: id.to_string(),
            noise,
            ..self.clone()
        }
    }

    fn pick<R: Rng>(&self, pos: &Position, rng: &mut R) -> Option<MoveLabel> {
        if rng.gen_bool(self.noise.clamp(0.0, 1.0)) {
            legal_moves(pos).choose(rng).copied()
        } else {
            self.style.choose(pos)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub games_per_player: usize,
    pub max_plies: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            games_per_player: 20,
            max_plies: 120,
            seed: 0,
        }
    }
}

/// One generated game against a uniformly random opponent.
pub struct SynthGame {
    pub site: String,
    pub white: String,
    pub black: String,
    pub white_elo: u32,
    pub black_elo: u32,
    pub moves: Vec<MoveLabel>,
    pub result: &'static str,
    pub ordinal: usize,
}

pub fn play_game<R: Rng>(player: &SynthPlayer, as_white: bool, ordinal: usize, max_plies: usize, rng: &mut R) -> SynthGame {
    let opp_id = format!("opp-{}", rng.gen_range(0..1000));
    let opp_elo = rng.gen_range(1000..2400);
    let mut pos = Position::start();
    let mut moves = Vec::new();
    let player_color = if as_white { Color::White } else { Color::Black };
    let mut result = "1/2-1/2";
    for _ in 0..max_plies {
        let mv = if pos.side_to_move() == player_color {
            player.pick(&pos, rng)
        } else {
            legal_moves(&pos).choose(rng).copied()
        };
        let Some(mv) = mv else {
            if crate::chess::in_check(&pos) {
                result = if pos.side_to_move() == Color::White { "0-1" } else { "1-0" };
            }
            break;
        };
        pos = make_move(&pos, mv).expect("generated moves are legal");
        moves.push(mv);
    }
    let (white, black, white_elo, black_elo) = if as_white {
        (player.id.clone(), opp_id, player.rating, opp_elo)
    } else {
        (opp_id, player.id.clone(), opp_elo, player.rating)
    };
    SynthGame {
        site: format!("https://synthetic.invalid/{}/{ordinal}", player.id),
        white,
        black,
        white_elo,
        black_elo,
        moves,
        result,
        ordinal,
    }
}

impl SynthGame {
    /// 180+2 blitz with clocks that never fall below a minute.
    pub fn to_pgn(&self) -> String {
        let day = 1 + self.ordinal % 28;
        let month = 1 + (self.ordinal / 28) % 12;
        let year = 2020 + self.ordinal / (28 * 12);
        let secs = (self.ordinal * 977) % 86_400;
        let mut s = String::new();
        let _ = writeln!(s, "[Event \"Rated Blitz game\"]");
        let _ = writeln!(s, "[Site \"{}\"]", self.site);
        let _ = writeln!(s, "[UTCDate \"{year}.{month:02}.{day:02}\"]");
        let _ = writeln!(s, "[UTCTime \"{:02}:{:02}:{:02}\"]", secs / 3600, secs / 60 % 60, secs % 60);
        let _ = writeln!(s, "[White \"{}\"]", self.white);
        let _ = writeln!(s, "[Black \"{}\"]", self.black);
        let _ = writeln!(s, "[Result \"{}\"]", self.result);
        let _ = writeln!(s, "[WhiteElo \"{}\"]", self.white_elo);
        let _ = writeln!(s, "[BlackElo \"{}\"]", self.black_elo);
        let _ = writeln!(s, "[TimeControl \"180+2\"]");
        s.push('\n');
        let mut pos = Position::start();
        let mut clocks = [180u32, 180u32];
        for (i, &m) in self.moves.iter().enumerate() {
            if i % 2 == 0 {
                let _ = write!(s, "{}. ", i / 2 + 1);
            }
            let side = i % 2;
            clocks[side] = clocks[side] + 2 - (1 + (i as u32 * 7 + self.ordinal as u32) % 3);
            let c = clocks[side];
            let _ = write!(s, "{} {{ [%clk {}:{:02}:{:02}] }} ", to_san(&pos, m), c / 3600, c / 60 % 60, c % 60);
            pos = make_move(&pos, m).expect("recorded moves are legal");
        }
        let _ = writeln!(s, "{}\n", self.result);
        s
    }
}

/// `cfg.games_per_player` games per player, alternating colors.
pub fn corpus_pgn(players: &[SynthPlayer], cfg: &SynthConfig) -> String {
    let mut out = String::new();
    let mut ordinal = 0;
    for (pi, p) in players.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(1_000_003).wrapping_add(pi as u64));
        for g in 0..cfg.games_per_player {
            out.push_str(&play_game(p, g % 2 == 0, ordinal, cfg.max_plies, &mut rng).to_pgn());
            ordinal += 1;
        }
    }
    out
}

/// `n` players with pairwise different styles spread over rating bins.
pub fn style_players(n: usize, seed: u64, noise: f64) -> Vec<SynthPlayer> {
    (0..n)
        .map(|i| {
            let rating = 1050 + ((i * 100 + 50) % 1100) as u32;
            SynthPlayer::new(&format!("player-{i:02}"), rating, Style::distinct(i, seed), noise)
        })
        .collect()
}

/// Demo corpus: style players spread over rating bins plus noisy clones
/// of them playing fewer games, meant as unseen players.
pub struct PipelineCorpus {
    pub pgn: String,
    pub prototypes: Vec<SynthPlayer>,
    pub unseen: Vec<SynthPlayer>,
}

pub fn pipeline_corpus(n_players: usize, n_clones: usize, clone_noise: f64, clone_games: usize, cfg: &SynthConfig) -> PipelineCorpus {
    let prototypes = style_players(n_players, cfg.seed, 0.05);
    let unseen: Vec<SynthPlayer> = (0..n_clones)
        .map(|i| prototypes[i % n_players.max(1)].noisy_clone(&format!("unseen-{i:02}"), clone_noise))
        .collect();
    let mut pgn = corpus_pgn(&prototypes, cfg);
    let clone_cfg = SynthConfig {
        games_per_player: clone_games,
        seed: cfg.seed.wrapping_add(1),
        ..cfg.clone()
    };
    pgn.push_str(&corpus_pgn(&unseen, &clone_cfg));
    PipelineCorpus { pgn, prototypes, unseen }
}

/// Two same-rated players asked to move in the same positions, each position
/// chosen so that their preferred moves differ.
pub struct ContradictionFixture {
    pub players: [SynthPlayer; 2],
    pub positions: Vec<Position>,
    pub examples: [Vec<TrainingExample>; 2],
}

pub fn contradiction_fixture(n_positions: usize, seed: u64) -> Result<ContradictionFixture> {
    let players = [
        SynthPlayer::new("contra-a", 1550, Style::distinct(0, seed), 0.0),
        SynthPlayer::new("contra-b", 1550, Style::distinct(1, seed), 0.0),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let vocab = vocabulary();
    let mut positions: Vec<Position> = Vec::new();
    let mut examples = [Vec::new(), Vec::new()];
    let mut attempts = 0usize;
    while positions.len() < n_positions {
        attempts += 1;
        assert!(attempts < 100 * n_positions + 1000, "random play kept failing to produce fixture positions");
        let plies = 2 * rng.gen_range(3..20);
        let mut pos = Position::start();
        let mut ok = true;
        for _ in 0..plies {
            match legal_moves(&pos).choose(&mut rng) {
                Some(&m) => pos = make_move(&pos, m)?,
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok || pos.side_to_move() != Color::White || positions.contains(&pos) {
            continue;
        }
        let (Some(a), Some(b)) = (players[0].style.choose(&pos), players[1].style.choose(&pos)) else {
            continue;
        };
        if a == b {
            continue;
        }
        for (k, m) in [a, b].into_iter().enumerate() {
            examples[k].push(TrainingExample {
                position: pos.clone(),
                target: vocab.index_of(&m)?,
                active_rating: players[k].rating,
                opponent_rating: 1550,
                player_id: players[k].id.clone(),
                ply: pos.ply(),
                game_id: format!("fixture-{}", positions.len()),
            });
        }
        positions.push(pos);
    }
    Ok(ContradictionFixture {
        players,
        positions,
        examples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pgn::{parse_pgn_stream, DatasetBuilder, FilterConfig};

    #[test]
    fn generated_pgn_parses_and_filters() {
        let players = style_players(2, 1, 0.1);
        let text = corpus_pgn(&players, &SynthConfig { games_per_player: 3, ..SynthConfig::default() });
        let games: Vec<_> = parse_pgn_stream(text.as_bytes()).collect::<Result<_>>().unwrap();
        assert_eq!(games.len(), 6);
        let mut b = DatasetBuilder::new(FilterConfig::default());
        for g in &games {
            b.add_game(g).unwrap();
        }
        assert_eq!(b.stats.games_kept, 6);
        let sets = b.into_datasets(usize::MAX, 10);
        assert!(sets.iter().any(|d| d.player_id == "player-00"));
    }

    #[test]
    fn deterministic_player_follows_style() {
        let p = SynthPlayer::new("x", 1500, Style::distinct(2, 9), 0.0);
        let text = corpus_pgn(std::slice::from_ref(&p), &SynthConfig { games_per_player: 1, ..SynthConfig::default() });
        let g = parse_pgn_stream(text.as_bytes()).next().unwrap().unwrap();
        let mut pos = g.start.clone();
        for m in &g.moves {
            if pos.side_to_move() == Color::White {
                assert_eq!(Some(m.label), p.style.choose(&pos));
            }
            pos = make_move(&pos, m.label).unwrap();
        }
    }

    #[test]
    fn contradiction_targets_differ() {
        let f = contradiction_fixture(20, 3).unwrap();
        assert_eq!(f.positions.len(), 20);
        for (a, b) in f.examples[0].iter().zip(&f.examples[1]) {
            assert_eq!(a.position, b.position);
            assert_ne!(a.target, b.target);
        }
    }
}
