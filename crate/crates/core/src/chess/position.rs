use std::fmt;

use crate::error::{Error, Result};

/// Board square, `a1 = 0`, `b1 = 1`, ..., `h8 = 63` (index = rank * 8 + file).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Square(u8);

impl Square {
    pub fn new(index: u8) -> Option<Square> {
        (index < 64).then_some(Square(index))
    }

    pub fn from_coords(file: u8, rank: u8) -> Option<Square> {
        (file < 8 && rank < 8).then_some(Square(rank * 8 + file))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// 0-based file (a = 0).
    pub fn file(self) -> u8 {
        self.0 % 8
    }

    /// 0-based rank (rank 1 = 0).
    pub fn rank(self) -> u8 {
        self.0 / 8
    }

    /// Rank mirror: rank k maps to rank 9 - k, file unchanged.
    pub fn mirror(self) -> Square {
        Square(self.0 ^ 56)
    }

    pub fn offset(self, dfile: i8, drank: i8) -> Option<Square> {
        let f = self.file() as i8 + dfile;
        let r = self.rank() as i8 + drank;
        if (0..8).contains(&f) && (0..8).contains(&r) {
            Some(Square((r * 8 + f) as u8))
        } else {
            None
        }
    }

    pub fn parse(text: &str) -> Option<Square> {
        let b = text.as_bytes();
        if b.len() != 2 {
            return None;
        }
        let file = b[0].wrapping_sub(b'a');
        let rank = b[1].wrapping_sub(b'1');
        Square::from_coords(file, rank)
    }

    pub fn all() -> impl Iterator<Item = Square> {
        (0..64).map(Square)
    }
}

impl fmt::Display for Square {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", (b'a' + self.file()) as char, (b'1' + self.rank()) as char)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Color {
    White,
    Black,
}

impl Color {
    pub fn opposite(self) -> Color {
        match self {
            Color::White => Color::Black,
            Color::Black => Color::White,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PieceKind {
    Pawn,
    Knight,
    Bishop,
    Rook,
    Queen,
    King,
}

impl PieceKind {
    pub const ALL: [PieceKind; 6] = [
        PieceKind::Pawn,
        PieceKind::Knight,
        PieceKind::Bishop,
        PieceKind::Rook,
        PieceKind::Queen,
        PieceKind::King,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Lowercase letter as used in FEN (black) and UCI promotions.
    pub fn letter(self) -> char {
        match self {
            PieceKind::Pawn => 'p',
            PieceKind::Knight => 'n',
            PieceKind::Bishop => 'b',
            PieceKind::Rook => 'r',
            PieceKind::Queen => 'q',
            PieceKind::King => 'k',
        }
    }

    pub fn from_letter(c: char) -> Option<PieceKind> {
        Some(match c.to_ascii_lowercase() {
            'p' => PieceKind::Pawn,
            'n' => PieceKind::Knight,
            'b' => PieceKind::Bishop,
            'r' => PieceKind::Rook,
            'q' => PieceKind::Queen,
            'k' => PieceKind::King,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Piece {
    pub color: Color,
    pub kind: PieceKind,
}

impl Piece {
    pub fn new(color: Color, kind: PieceKind) -> Piece {
        Piece { color, kind }
    }

    fn fen_char(self) -> char {
        let c = self.kind.letter();
        match self.color {
            Color::White => c.to_ascii_uppercase(),
            Color::Black => c,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct CastlingRights {
    pub white_kingside: bool,
    pub white_queenside: bool,
    pub black_kingside: bool,
    pub black_queenside: bool,
}

impl CastlingRights {
    pub const ALL: CastlingRights = CastlingRights {
        white_kingside: true,
        white_queenside: true,
        black_kingside: true,
        black_queenside: true,
    };

    pub fn swapped(self) -> CastlingRights {
        CastlingRights {
            white_kingside: self.black_kingside,
            white_queenside: self.black_queenside,
            black_kingside: self.white_kingside,
            black_queenside: self.white_queenside,
        }
    }

    /// Rights in channel order WK, WQ, BK, BQ.
    pub fn as_array(self) -> [bool; 4] {
        [
            self.white_kingside,
            self.white_queenside,
            self.black_kingside,
            self.black_queenside,
        ]
    }

    pub fn kingside(self, color: Color) -> bool {
        match color {
            Color::White => self.white_kingside,
            Color::Black => self.black_kingside,
        }
    }

    pub fn queenside(self, color: Color) -> bool {
        match color {
            Color::White => self.white_queenside,
            Color::Black => self.black_queenside,
        }
    }

    pub(crate) fn clear(&mut self, color: Color) {
        match color {
            Color::White => {
                self.white_kingside = false;
                self.white_queenside = false;
            }
            Color::Black => {
                self.black_kingside = false;
                self.black_queenside = false;
            }
        }
    }
}

pub const START_FEN: &str = "rnbqkbnr/pppppppp/8/8/8/8/PPPPPPPP/RNBQKBNR w KQkq - 0 1";

/// Immutable chess state. Construct through [`parse_fen`] or
/// [`Position::from_parts`], both of which enforce the structural invariants.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Position {
    board: [Option<Piece>; 64],
    side_to_move: Color,
    castling: CastlingRights,
    en_passant: Option<Square>,
    ply: u32,
}

impl Position {
    pub fn start() -> Position {
        parse_fen(START_FEN).expect("start position is valid")
    }

    pub fn from_parts(
        board: [Option<Piece>; 64],
        side_to_move: Color,
        castling: CastlingRights,
        en_passant: Option<Square>,
        ply: u32,
    ) -> Result<Position> {
        let pos = Position {
            board,
            side_to_move,
            castling,
            en_passant,
            ply,
        };
        pos.validate()?;
        Ok(pos)
    }

    /// Builds without validation; callers guarantee the invariants.
    pub(crate) fn from_parts_unchecked(
        board: [Option<Piece>; 64],
        side_to_move: Color,
        castling: CastlingRights,
        en_passant: Option<Square>,
        ply: u32,
    ) -> Position {
        Position {
            board,
            side_to_move,
            castling,
            en_passant,
            ply,
        }
    }

    fn validate(&self) -> Result<()> {
        for color in [Color::White, Color::Black] {
            let kings = self
                .board
                .iter()
                .filter(|p| **p == Some(Piece::new(color, PieceKind::King)))
                .count();
            match kings {
                0 => return Err(Error::fen("piece placement", format!("missing {color:?} king"))),
                1 => {}
                _ => return Err(Error::fen("piece placement", format!("multiple {color:?} kings"))),
            }
        }
        for sq in Square::all() {
            if let Some(p) = self.board[sq.index()] {
                if p.kind == PieceKind::Pawn && (sq.rank() == 0 || sq.rank() == 7) {
                    return Err(Error::fen("piece placement", format!("pawn on back rank at {sq}")));
                }
            }
        }
        if let Some(ep) = self.en_passant {
            let want = match self.side_to_move {
                Color::White => 5,
                Color::Black => 2,
            };
            if ep.rank() != want {
                return Err(Error::fen("en passant", format!("{ep} is not on the expected rank")));
            }
        }
        if self.ply == 0 {
            return Err(Error::fen("ply", "ply must be at least 1"));
        }
        Ok(())
    }

    pub fn piece_at(&self, sq: Square) -> Option<Piece> {
        self.board[sq.index()]
    }

    pub fn board(&self) -> &[Option<Piece>; 64] {
        &self.board
    }

    pub fn side_to_move(&self) -> Color {
        self.side_to_move
    }

    pub fn castling(&self) -> CastlingRights {
        self.castling
    }

    pub fn en_passant(&self) -> Option<Square> {
        self.en_passant
    }

    pub fn ply(&self) -> u32 {
        self.ply
    }

    pub fn with_ply(mut self, ply: u32) -> Position {
        self.ply = ply.max(1);
        self
    }

    pub fn piece_count(&self) -> usize {
        self.board.iter().filter(|p| p.is_some()).count()
    }

    pub fn king_square(&self, color: Color) -> Square {
        Square::all()
            .find(|&sq| self.board[sq.index()] == Some(Piece::new(color, PieceKind::King)))
            .expect("validated positions have both kings")
    }

    /// Mirrors ranks, swaps piece colors, side to move and castling rights.
    pub fn flip(&self) -> Position {
        let mut board = [None; 64];
        for sq in Square::all() {
            if let Some(p) = self.board[sq.index()] {
                board[sq.mirror().index()] = Some(Piece::new(p.color.opposite(), p.kind));
            }
        }
        Position {
            board,
            side_to_move: self.side_to_move.opposite(),
            castling: self.castling.swapped(),
            en_passant: self.en_passant.map(Square::mirror),
            ply: self.ply,
        }
    }

    /// Returns the position seen from the side to move: unchanged when white
    /// is to move, flipped otherwise.
    pub fn white_perspective(&self) -> Position {
        match self.side_to_move {
            Color::White => self.clone(),
            Color::Black => self.flip(),
        }
    }

    pub fn to_fen(&self) -> String {
        let mut out = String::new();
        for rank in (0..8).rev() {
            let mut empty = 0;
            for file in 0..8 {
                match self.board[rank * 8 + file] {
                    None => empty += 1,
                    Some(p) => {
                        if empty > 0 {
                            out.push(char::from(b'0' + empty));
                            empty = 0;
                        }
                        out.push(p.fen_char());
                    }
                }
            }
            if empty > 0 {
                out.push(char::from(b'0' + empty));
            }
            if rank > 0 {
                out.push('/');
            }
        }
        out.push(' ');
        out.push(match self.side_to_move {
            Color::White => 'w',
            Color::Black => 'b',
        });
        out.push(' ');
        let c = self.castling;
        let mut any = false;
        for (flag, ch) in [
            (c.white_kingside, 'K'),
            (c.white_queenside, 'Q'),
            (c.black_kingside, 'k'),
            (c.black_queenside, 'q'),
        ] {
            if flag {
                out.push(ch);
                any = true;
            }
        }
        if !any {
            out.push('-');
        }
        out.push(' ');
        match self.en_passant {
            Some(sq) => out.push_str(&sq.to_string()),
            None => out.push('-'),
        }
        let fullmove = (self.ply + 1) / 2;
        out.push_str(&format!(" 0 {}", fullmove.max(1)));
        out
    }
}

/// Parses the first four FEN fields; move counters are accepted but ignored
/// and the resulting ply is 1.
pub fn parse_fen(text: &str) -> Result<Position> {
    let fields: Vec<&str> = text.split_whitespace().collect();
    if !(4..=6).contains(&fields.len()) {
        return Err(Error::fen(
            "field count",
            format!("expected 4 to 6 fields, found {}", fields.len()),
        ));
    }

    let mut board = [None; 64];
    let ranks: Vec<&str> = fields[0].split('/').collect();
    if ranks.len() != 8 {
        return Err(Error::fen(
            "piece placement",
            format!("expected 8 ranks, found {}", ranks.len()),
        ));
    }
    for (i, row) in ranks.iter().enumerate() {
        let rank = 7 - i as u8;
        let mut file = 0u8;
        for c in row.chars() {
            if let Some(d) = c.to_digit(10) {
                if !(1..=8).contains(&d) {
                    return Err(Error::fen("piece placement", format!("bad empty count '{c}'")));
                }
                file += d as u8;
            } else {
                let kind = PieceKind::from_letter(c)
                    .ok_or_else(|| Error::fen("piece placement", format!("illegal character '{c}'")))?;
                let color = if c.is_ascii_uppercase() { Color::White } else { Color::Black };
                if file >= 8 {
                    return Err(Error::fen("piece placement", format!("rank {} overflows", rank + 1)));
                }
                board[(rank * 8 + file) as usize] = Some(Piece::new(color, kind));
                file += 1;
            }
            if file > 8 {
                return Err(Error::fen("piece placement", format!("rank {} overflows", rank + 1)));
            }
        }
        if file != 8 {
            return Err(Error::fen(
                "piece placement",
                format!("rank {} has {} files", rank + 1, file),
            ));
        }
    }

    let side_to_move = match fields[1] {
        "w" => Color::White,
        "b" => Color::Black,
        other => return Err(Error::fen("side to move", format!("expected 'w' or 'b', found '{other}'"))),
    };

    let mut castling = CastlingRights::default();
    if fields[2] != "-" {
        for c in fields[2].chars() {
            match c {
                'K' => castling.white_kingside = true,
                'Q' => castling.white_queenside = true,
                'k' => castling.black_kingside = true,
                'q' => castling.black_queenside = true,
                other => return Err(Error::fen("castling", format!("illegal character '{other}'"))),
            }
        }
    }

    let en_passant = match fields[3] {
        "-" => None,
        s => Some(Square::parse(s).ok_or_else(|| Error::fen("en passant", format!("bad square '{s}'")))?),
    };

    for (i, name) in [(4, "halfmove clock"), (5, "fullmove number")] {
        if let Some(v) = fields.get(i) {
            v.parse::<u32>()
                .map_err(|_| Error::fen(name, format!("not a number: '{v}'")))?;
        }
    }

    Position::from_parts(board, side_to_move, castling, en_passant, 1)
}

pub fn flip_position(p: &Position) -> Position {
    p.flip()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn start_position_fields() {
        let p = Position::start();
        assert_eq!(p.piece_count(), 32);
        assert_eq!(p.side_to_move(), Color::White);
        assert_eq!(p.castling(), CastlingRights::ALL);
        assert_eq!(p.en_passant(), None);
        assert_eq!(p.ply(), 1);
        assert_eq!(p.to_fen(), START_FEN);
    }

    #[test]
    fn square_indexing_is_a1_zero_rank_major() {
        assert_eq!(Square::parse("a1").unwrap().index(), 0);
        assert_eq!(Square::parse("h1").unwrap().index(), 7);
        assert_eq!(Square::parse("a2").unwrap().index(), 8);
        assert_eq!(Square::parse("h8").unwrap().index(), 63);
        assert_eq!(Square::parse("e2").unwrap().mirror(), Square::parse("e7").unwrap());
    }

    #[test]
    fn empty_board_is_missing_kings() {
        let err = parse_fen("8/8/8/8/8/8/8/8 w - - 0 1").unwrap_err();
        match err {
            Error::Fen { field, message } => {
                assert_eq!(field, "piece placement");
                assert!(message.contains("missing"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn en_passant_field() {
        let p = parse_fen("rnbqkbnr/ppp1p1pp/8/3pPp2/8/8/PPPP1PPP/RNBQKBNR w KQkq f6 0 3").unwrap();
        assert_eq!(p.en_passant(), Square::parse("f6"));
        let p = parse_fen("4k3/8/8/8/4Pp2/8/8/4K3 b - e3 0 1").unwrap();
        assert_eq!(p.en_passant(), Square::parse("e3"));
        assert!(parse_fen("4k3/8/8/8/4Pp2/8/8/4K3 w - e3 0 1").is_err());
    }

    #[test]
    fn malformed_fields_are_named() {
        let field = |fen: &str| match parse_fen(fen).unwrap_err() {
            Error::Fen { field, .. } => field,
            e => panic!("{e:?}"),
        };
        assert_eq!(field("rnbqkbnr/pppppppp w"), "field count");
        assert_eq!(field("rnbqkbnr/ppppXppp/8/8/8/8/PPPPPPPP/RNBQKBNR w KQkq - 0 1"), "piece placement");
        assert_eq!(field("rnbqkbnr/ppppppppp/8/8/8/8/PPPPPPPP/RNBQKBNR w KQkq - 0 1"), "piece placement");
        assert_eq!(field("rnbqkbnr/pppppppp/8/8/8/8/PPPPPPPP/RNBQKBNR x KQkq - 0 1"), "side to move");
        assert_eq!(field("rnbqkbnr/pppppppp/8/8/8/8/PPPPPPPP/RNBQKBNR w KQxq - 0 1"), "castling");
        assert_eq!(field("rnbqkbnr/pppppppp/8/8/8/8/PPPPPPPP/RNBKKBNR w KQkq - 0 1"), "piece placement");
        assert_eq!(field("Pnbqkbnr/pppppppp/8/8/8/8/PPPPPPPP/RNBQKBNR w KQkq - 0 1"), "piece placement");
    }

    #[test]
    fn flip_start_with_black_to_move_is_start() {
        let p = parse_fen("rnbqkbnr/pppppppp/8/8/8/8/PPPPPPPP/RNBQKBNR b KQkq - 0 1").unwrap();
        assert_eq!(p.flip(), Position::start());
    }

    #[test]
    fn flip_moves_pawn_and_swaps_color() {
        let p = parse_fen("4k3/8/8/8/8/8/4P3/4K3 b - - 0 1").unwrap();
        let f = p.flip();
        assert_eq!(f.side_to_move(), Color::White);
        assert_eq!(
            f.piece_at(Square::parse("e7").unwrap()),
            Some(Piece::new(Color::Black, PieceKind::Pawn))
        );
        assert_eq!(f.piece_at(Square::parse("e2").unwrap()), None);
        assert_eq!(f.flip(), p);
    }
}
