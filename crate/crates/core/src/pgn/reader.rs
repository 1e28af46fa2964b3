use std::collections::BTreeMap;
use std::io::BufRead;

use log::warn;

use crate::chess::{make_move, parse_fen, parse_san, MoveLabel, Position};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum GameResult {
    WhiteWins,
    BlackWins,
    Draw,
    Unknown,
}

impl GameResult {
    fn parse(token: &str) -> Option<GameResult> {
        Some(match token {
            "1-0" => GameResult::WhiteWins,
            "0-1" => GameResult::BlackWins,
            "1/2-1/2" => GameResult::Draw,
            "*" => GameResult::Unknown,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GameResult::WhiteWins => "1-0",
            GameResult::BlackWins => "0-1",
            GameResult::Draw => "1/2-1/2",
            GameResult::Unknown => "*",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TimeControl {
    pub initial_seconds: u32,
    pub increment_seconds: u32,
}

impl TimeControl {
    /// Parses `"180+2"`; `"-"` and other non-numeric forms yield `None`.
    pub fn parse(text: &str) -> Option<TimeControl> {
        let (base, inc) = text.split_once('+').unwrap_or((text, "0"));
        Some(TimeControl {
            initial_seconds: base.trim().parse().ok()?,
            increment_seconds: inc.trim().parse().ok()?,
        })
    }

    /// Estimated game duration: initial + 40 * increment.
    pub fn estimated_seconds(&self) -> u32 {
        self.initial_seconds + 40 * self.increment_seconds
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PlayedMove {
    pub label: MoveLabel,
    /// Seconds left on the mover's clock after the move.
    pub clock: Option<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GameRecord {
    pub game_id: String,
    pub white_name: String,
    pub black_name: String,
    pub white_elo: Option<u32>,
    pub black_elo: Option<u32>,
    pub time_control: Option<TimeControl>,
    pub start: Position,
    pub moves: Vec<PlayedMove>,
    pub result: GameResult,
    /// `UTCDate` and `UTCTime` (or `Date`) joined, for chronological sorting.
    pub timestamp: Option<String>,
    pub headers: BTreeMap<String, String>,
}

/// Parses a `[%clk H:MM:SS]` annotation inside a comment to whole seconds.
pub fn parse_clock(comment: &str) -> Option<u32> {
    let start = comment.find("[%clk")? + 5;
    let rest = &comment[start..];
    let end = rest.find(']')?;
    let mut total = 0f64;
    for part in rest[..end].trim().split(':') {
        total = total * 60.0 + part.trim().parse::<f64>().ok()?;
    }
    (total >= 0.0).then_some(total.floor() as u32)
}

fn parse_header(line: &str) -> Option<(String, String)> {
    let inner = line.trim().strip_prefix('[')?.strip_suffix(']')?;
    let (key, rest) = inner.split_once(char::is_whitespace)?;
    let rest = rest.trim();
    let quoted = rest.strip_prefix('"')?.strip_suffix('"')?;
    let mut value = String::with_capacity(quoted.len());
    let mut chars = quoted.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            if let Some(n) = chars.next() {
                value.push(n);
            }
        } else {
            value.push(c);
        }
    }
    Some((key.to_string(), value))
}

fn build_game(headers: BTreeMap<String, String>, movetext: &str, ordinal: usize) -> Result<GameRecord> {
    let start = match headers.get("FEN") {
        Some(fen) => parse_fen(fen)?,
        None => Position::start(),
    };
    let mut pos = start.clone();
    let mut moves: Vec<PlayedMove> = Vec::new();
    let mut result = GameResult::Unknown;
    let mut chars = movetext.char_indices().peekable();
    let bytes = movetext;
    while let Some(&(i, c)) = chars.peek() {
        match c {
            '{' => {
                let end = bytes[i..].find('}').map(|e| i + e).ok_or_else(|| Error::Pgn("unterminated comment".into()))?;
                if let (Some(clock), Some(last)) = (parse_clock(&bytes[i..end]), moves.last_mut()) {
                    last.clock = Some(clock);
                }
                while chars.peek().is_some_and(|&(j, _)| j <= end) {
                    chars.next();
                }
            }
            ';' => {
                while chars.peek().is_some_and(|&(_, ch)| ch != '\n') {
                    chars.next();
                }
            }
            '(' => {
                let mut depth = 0usize;
                for (_, ch) in chars.by_ref() {
                    match ch {
                        '(' => depth += 1,
                        ')' => {
                            depth -= 1;
                            if depth == 0 {
                                break;
                            }
                        }
                        _ => {}
                    }
                }
            }
            c if c.is_whitespace() => {
                chars.next();
            }
            _ => {
                let mut end = i;
                while let Some(&(j, ch)) = chars.peek() {
                    if ch.is_whitespace() || matches!(ch, '{' | '(' | ';' | ')') {
                        break;
                    }
                    end = j + ch.len_utf8();
                    chars.next();
                }
                let token = &bytes[i..end];
                if let Some(r) = GameResult::parse(token) {
                    result = r;
                    continue;
                }
                if token.starts_with('$') {
                    continue;
                }
                // strip move numbers such as "12." or "12..." (possibly glued to the move)
                let san = if token.starts_with("0-0") {
                    token
                } else {
                    token.trim_start_matches(|ch: char| ch.is_ascii_digit()).trim_start_matches('.')
                };
                if san.is_empty() {
                    continue;
                }
                let label = parse_san(&pos, san)?;
                pos = make_move(&pos, label)?;
                moves.push(PlayedMove { label, clock: None });
            }
        }
    }
    let elo = |k: &str| headers.get(k).and_then(|v| v.trim().parse::<u32>().ok());
    let timestamp = match (headers.get("UTCDate").or_else(|| headers.get("Date")), headers.get("UTCTime")) {
        (Some(d), Some(t)) => Some(format!("{d} {t}")),
        (Some(d), None) => Some(d.clone()),
        _ => None,
    };
    let game_id = headers
        .get("Site")
        .filter(|s| !s.is_empty() && *s != "?")
        .cloned()
        .unwrap_or_else(|| format!("game-{ordinal}"));
    Ok(GameRecord {
        game_id,
        white_name: headers.get("White").cloned().unwrap_or_default(),
        black_name: headers.get("Black").cloned().unwrap_or_default(),
        white_elo: elo("WhiteElo"),
        black_elo: elo("BlackElo"),
        time_control: headers.get("TimeControl").and_then(|t| TimeControl::parse(t)),
        start,
        moves,
        result,
        timestamp,
        headers,
    })
}

/// Streaming multi-game PGN reader. Games that fail to parse are skipped and
/// counted; I/O errors are yielded.
pub struct PgnReader<R> {
    input: R,
    line: String,
    pending_header: Option<String>,
    games_read: usize,
    skipped: usize,
    done: bool,
}

impl<R: BufRead> PgnReader<R> {
    pub fn new(input: R) -> Self {
        PgnReader {
            input,
            line: String::new(),
            pending_header: None,
            games_read: 0,
            skipped: 0,
            done: false,
        }
    }

    /// Games skipped because of syntax or move errors.
    pub fn skipped(&self) -> usize {
        self.skipped
    }

    fn next_line(&mut self) -> Result<Option<String>> {
        self.line.clear();
        if self.input.read_line(&mut self.line)? == 0 {
            return Ok(None);
        }
        Ok(Some(self.line.trim_end_matches(['\n', '\r']).to_string()))
    }

    /// Collects the raw headers and movetext of the next game.
    fn next_raw(&mut self) -> Result<Option<(Vec<String>, String)>> {
        let mut headers = Vec::new();
        let mut movetext = String::new();
        let mut comment_depth = 0usize;
        if let Some(h) = self.pending_header.take() {
            headers.push(h);
        }
        loop {
            let Some(line) = self.next_line()? else {
                self.done = true;
                break;
            };
            let trimmed = line.trim_start();
            if comment_depth == 0 && trimmed.starts_with('[') {
                if !movetext.trim().is_empty() {
                    self.pending_header = Some(line);
                    break;
                }
                headers.push(line);
                continue;
            }
            if trimmed.starts_with('%') {
                continue;
            }
            for ch in line.chars() {
                match ch {
                    '{' => comment_depth += 1,
                    '}' => comment_depth = comment_depth.saturating_sub(1),
                    _ => {}
                }
            }
            movetext.push_str(&line);
            movetext.push('\n');
        }
        if headers.is_empty() && movetext.trim().is_empty() {
            return Ok(None);
        }
        Ok(Some((headers, movetext)))
    }
}

impl<R: BufRead> Iterator for PgnReader<R> {
    type Item = Result<GameRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if self.done && self.pending_header.is_none() {
                return None;
            }
            let (raw_headers, movetext) = match self.next_raw() {
                Ok(Some(raw)) => raw,
                Ok(None) => return None,
                Err(e) => {
                    self.done = true;
                    return Some(Err(e));
                }
            };
            self.games_read += 1;
            let mut headers = BTreeMap::new();
            let mut bad_header = None;
            for h in &raw_headers {
                match parse_header(h) {
                    Some((k, v)) => {
                        headers.insert(k, v);
                    }
                    None => bad_header = Some(h.clone()),
                }
            }
            let parsed = match bad_header {
                Some(h) => Err(Error::Pgn(format!("malformed header line '{h}'"))),
                None => build_game(headers, &movetext, self.games_read),
            };
            match parsed {
                Ok(game) => return Some(Ok(game)),
                Err(e) => {
                    self.skipped += 1;
                    warn!("skipping game {}: {e}", self.games_read);
                }
            }
        }
    }
}

pub fn parse_pgn_stream<R: BufRead>(reader: R) -> PgnReader<R> {
    PgnReader::new(reader)
}
