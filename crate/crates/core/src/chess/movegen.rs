//! Minimal rules support: attack detection, legal move enumeration, move
//! application and SAN conversion. Enough to replay recorded games; no draw
//! rules or game-end adjudication.

use super::moves::MoveLabel;
use super::position::{Color, Piece, PieceKind, Position, Square};
use crate::error::{Error, Result};

const KNIGHT: [(i8, i8); 8] = [(1, 2), (2, 1), (2, -1), (1, -2), (-1, -2), (-2, -1), (-2, 1), (-1, 2)];
const KING: [(i8, i8); 8] = [(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)];
const ROOK_DIRS: [(i8, i8); 4] = [(1, 0), (0, 1), (-1, 0), (0, -1)];
const BISHOP_DIRS: [(i8, i8); 4] = [(1, 1), (-1, 1), (-1, -1), (1, -1)];

fn pawn_dir(color: Color) -> i8 {
    match color {
        Color::White => 1,
        Color::Black => -1,
    }
}

/// True when any piece of `by` attacks `sq`.
pub fn is_attacked(pos: &Position, sq: Square, by: Color) -> bool {
    let hit = |s: Option<Square>, kinds: &[PieceKind]| {
        s.and_then(|s| pos.piece_at(s))
            .is_some_and(|p| p.color == by && kinds.contains(&p.kind))
    };
    // a pawn of `by` attacks sq from one rank behind (relative to its march)
    let d = pawn_dir(by);
    if hit(sq.offset(-1, -d), &[PieceKind::Pawn]) || hit(sq.offset(1, -d), &[PieceKind::Pawn]) {
        return true;
    }
    if KNIGHT.iter().any(|&(f, r)| hit(sq.offset(f, r), &[PieceKind::Knight])) {
        return true;
    }
    if KING.iter().any(|&(f, r)| hit(sq.offset(f, r), &[PieceKind::King])) {
        return true;
    }
    let slides = |dirs: &[(i8, i8)], kinds: &[PieceKind]| {
        dirs.iter().any(|&(df, dr)| {
            let mut cur = sq;
            while let Some(next) = cur.offset(df, dr) {
                if let Some(p) = pos.piece_at(next) {
                    return p.color == by && kinds.contains(&p.kind);
                }
                cur = next;
            }
            false
        })
    };
    slides(&ROOK_DIRS, &[PieceKind::Rook, PieceKind::Queen])
        || slides(&BISHOP_DIRS, &[PieceKind::Bishop, PieceKind::Queen])
}

pub fn in_check(pos: &Position) -> bool {
    let us = pos.side_to_move();
    is_attacked(pos, pos.king_square(us), us.opposite())
}

fn push_promotions(out: &mut Vec<MoveLabel>, from: Square, to: Square) {
    out.push(MoveLabel::new(from, to, None));
    for k in [PieceKind::Knight, PieceKind::Bishop, PieceKind::Rook] {
        out.push(MoveLabel::new(from, to, Some(k)));
    }
}

/// Moves obeying piece movement rules, ignoring whether the king is left in check.
pub fn pseudo_legal_moves(pos: &Position) -> Vec<MoveLabel> {
    let us = pos.side_to_move();
    let mut out = Vec::with_capacity(48);
    for from in Square::all() {
        let Some(piece) = pos.piece_at(from) else { continue };
        if piece.color != us {
            continue;
        }
        let target_ok = |to: Square| pos.piece_at(to).map_or(true, |p| p.color != us);
        match piece.kind {
            PieceKind::Pawn => {
                let d = pawn_dir(us);
                let last_rank = if us == Color::White { 7 } else { 0 };
                let start_rank = if us == Color::White { 1 } else { 6 };
                if let Some(one) = from.offset(0, d) {
                    if pos.piece_at(one).is_none() {
                        if one.rank() == last_rank {
                            push_promotions(&mut out, from, one);
                        } else {
                            out.push(MoveLabel::new(from, one, None));
                            if from.rank() == start_rank {
                                if let Some(two) = one.offset(0, d) {
                                    if pos.piece_at(two).is_none() {
                                        out.push(MoveLabel::new(from, two, None));
                                    }
                                }
                            }
                        }
                    }
                }
                for df in [-1, 1] {
                    let Some(to) = from.offset(df, d) else { continue };
                    let capture = pos.piece_at(to).is_some_and(|p| p.color != us);
                    if capture {
                        if to.rank() == last_rank {
                            push_promotions(&mut out, from, to);
                        } else {
                            out.push(MoveLabel::new(from, to, None));
                        }
                    } else if pos.en_passant() == Some(to) {
                        out.push(MoveLabel::new(from, to, None));
                    }
                }
            }
            PieceKind::Knight | PieceKind::King => {
                let steps = if piece.kind == PieceKind::Knight { &KNIGHT } else { &KING };
                for &(df, dr) in steps {
                    if let Some(to) = from.offset(df, dr) {
                        if target_ok(to) {
                            out.push(MoveLabel::new(from, to, None));
                        }
                    }
                }
            }
            PieceKind::Bishop | PieceKind::Rook | PieceKind::Queen => {
                let dirs: Vec<(i8, i8)> = match piece.kind {
                    PieceKind::Bishop => BISHOP_DIRS.to_vec(),
                    PieceKind::Rook => ROOK_DIRS.to_vec(),
                    _ => ROOK_DIRS.iter().chain(BISHOP_DIRS.iter()).copied().collect(),
                };
                for (df, dr) in dirs {
                    let mut cur = from;
                    while let Some(to) = cur.offset(df, dr) {
                        match pos.piece_at(to) {
                            None => out.push(MoveLabel::new(from, to, None)),
                            Some(p) => {
                                if p.color != us {
                                    out.push(MoveLabel::new(from, to, None));
                                }
                                break;
                            }
                        }
                        cur = to;
                    }
                }
            }
        }
    }
    castling_moves(pos, &mut out);
    out
}

fn castling_moves(pos: &Position, out: &mut Vec<MoveLabel>) {
    let us = pos.side_to_move();
    let them = us.opposite();
    let rank = if us == Color::White { 0 } else { 7 };
    let sq = |file: u8| Square::from_coords(file, rank).expect("on board");
    let king = Piece::new(us, PieceKind::King);
    let rook = Piece::new(us, PieceKind::Rook);
    if pos.piece_at(sq(4)) != Some(king) || is_attacked(pos, sq(4), them) {
        return;
    }
    let rights = pos.castling();
    if rights.kingside(us)
        && pos.piece_at(sq(7)) == Some(rook)
        && pos.piece_at(sq(5)).is_none()
        && pos.piece_at(sq(6)).is_none()
        && !is_attacked(pos, sq(5), them)
        && !is_attacked(pos, sq(6), them)
    {
        out.push(MoveLabel::new(sq(4), sq(6), None));
    }
    if rights.queenside(us)
        && pos.piece_at(sq(0)) == Some(rook)
        && (1..=3).all(|f| pos.piece_at(sq(f)).is_none())
        && !is_attacked(pos, sq(3), them)
        && !is_attacked(pos, sq(2), them)
    {
        out.push(MoveLabel::new(sq(4), sq(2), None));
    }
}

pub fn legal_moves(pos: &Position) -> Vec<MoveLabel> {
    let us = pos.side_to_move();
    pseudo_legal_moves(pos)
        .into_iter()
        .filter(|&m| {
            let next = apply_unchecked(pos, m);
            !is_attacked(&next, next.king_square(us), us.opposite())
        })
        .collect()
}

fn is_castle(pos: &Position, m: MoveLabel) -> bool {
    pos.piece_at(m.from).is_some_and(|p| p.kind == PieceKind::King)
        && m.from.file() == 4
        && m.from.rank() == m.to.rank()
        && (m.to.file() as i8 - 4).abs() == 2
}

fn is_en_passant(pos: &Position, m: MoveLabel) -> bool {
    pos.piece_at(m.from).is_some_and(|p| p.kind == PieceKind::Pawn)
        && m.from.file() != m.to.file()
        && pos.piece_at(m.to).is_none()
}

pub fn is_capture(pos: &Position, m: MoveLabel) -> bool {
    pos.piece_at(m.to).is_some() || is_en_passant(pos, m)
}

fn apply_unchecked(pos: &Position, m: MoveLabel) -> Position {
    let mut board = *pos.board();
    let us = pos.side_to_move();
    let piece = board[m.from.index()].expect("move starts from an occupied square");
    let mut castling = pos.castling();

    if is_castle(pos, m) {
        let rank = m.from.rank();
        let (rook_from, rook_to) = if m.to.file() == 6 { (7, 5) } else { (0, 3) };
        let rf = Square::from_coords(rook_from, rank).expect("on board");
        let rt = Square::from_coords(rook_to, rank).expect("on board");
        board[rt.index()] = board[rf.index()].take();
    }
    if is_en_passant(pos, m) {
        let victim = Square::from_coords(m.to.file(), m.from.rank()).expect("on board");
        board[victim.index()] = None;
    }
    board[m.from.index()] = None;
    let placed = if piece.kind == PieceKind::Pawn && (m.to.rank() == 0 || m.to.rank() == 7) {
        Piece::new(us, m.promotion.unwrap_or(PieceKind::Queen))
    } else {
        piece
    };
    board[m.to.index()] = Some(placed);

    if piece.kind == PieceKind::King {
        castling.clear(us);
    }
    for sq in [m.from, m.to] {
        match (sq.file(), sq.rank()) {
            (0, 0) => castling.white_queenside = false,
            (7, 0) => castling.white_kingside = false,
            (0, 7) => castling.black_queenside = false,
            (7, 7) => castling.black_kingside = false,
            _ => {}
        }
    }

    // en passant square only when an enemy pawn could capture onto it
    let mut en_passant = None;
    if piece.kind == PieceKind::Pawn && (m.to.rank() as i8 - m.from.rank() as i8).abs() == 2 {
        let passed = Square::from_coords(m.from.file(), (m.from.rank() + m.to.rank()) / 2).expect("on board");
        let enemy_pawn = Piece::new(us.opposite(), PieceKind::Pawn);
        if [-1, 1]
            .iter()
            .any(|&df| m.to.offset(df, 0).is_some_and(|s| board[s.index()] == Some(enemy_pawn)))
        {
            en_passant = Some(passed);
        }
    }

    Position::from_parts_unchecked(board, us.opposite(), castling, en_passant, pos.ply() + 1)
}

/// Applies a move of the side to move. The move must be pseudo-legal in
/// shape (an own piece on `from`); full legality is the caller's concern.
pub fn make_move(pos: &Position, m: MoveLabel) -> Result<Position> {
    match pos.piece_at(m.from) {
        Some(p) if p.color == pos.side_to_move() => Ok(apply_unchecked(pos, m)),
        _ => Err(Error::Move(format!("no piece of the side to move on {}", m.from))),
    }
}

/// Resolves a SAN token against the legal moves of `pos`.
pub fn parse_san(pos: &Position, san: &str) -> Result<MoveLabel> {
    let bad = || Error::Move(format!("cannot resolve SAN '{san}' in {}", pos.to_fen()));
    let text = san.trim_end_matches(['+', '#', '!', '?']);
    let legal = legal_moves(pos);

    if matches!(text, "O-O" | "0-0" | "O-O-O" | "0-0-0") {
        let file = if text.len() == 3 { 6 } else { 2 };
        return legal
            .into_iter()
            .find(|&m| is_castle(pos, m) && m.to.file() == file)
            .ok_or_else(bad);
    }

    let mut body = text;
    let mut promotion = None;
    let mut is_promotion = false;
    if let Some(idx) = body.find('=') {
        let kind = body[idx + 1..].chars().next().and_then(PieceKind::from_letter).ok_or_else(bad)?;
        body = &body[..idx];
        is_promotion = true;
        promotion = (kind != PieceKind::Queen).then_some(kind);
    } else if let Some(last) = body.chars().last() {
        if "NBRQ".contains(last) && body.len() >= 3 {
            let kind = PieceKind::from_letter(last).ok_or_else(bad)?;
            body = &body[..body.len() - 1];
            is_promotion = true;
            promotion = (kind != PieceKind::Queen).then_some(kind);
        }
    }
    if body.len() < 2 || !body.is_ascii() {
        return Err(bad());
    }
    let to = Square::parse(&body[body.len() - 2..]).ok_or_else(bad)?;
    let mut head = &body[..body.len() - 2];
    let kind = match head.chars().next() {
        Some(c) if "NBRQK".contains(c) => {
            head = &head[1..];
            PieceKind::from_letter(c).ok_or_else(bad)?
        }
        _ => PieceKind::Pawn,
    };
    let mut dis_file = None;
    let mut dis_rank = None;
    for c in head.chars() {
        match c {
            'a'..='h' => dis_file = Some(c as u8 - b'a'),
            '1'..='8' => dis_rank = Some(c as u8 - b'1'),
            'x' | ':' | '-' => {}
            _ => return Err(bad()),
        }
    }

    let mut found = legal.into_iter().filter(|m| {
        m.to == to
            && pos.piece_at(m.from).is_some_and(|p| p.kind == kind)
            && dis_file.map_or(true, |f| m.from.file() == f)
            && dis_rank.map_or(true, |r| m.from.rank() == r)
            && m.promotion == promotion
            && (kind != PieceKind::Pawn || is_promotion == (to.rank() == 0 || to.rank() == 7))
    });
    let first = found.next().ok_or_else(bad)?;
    if found.next().is_some() {
        return Err(Error::Move(format!("ambiguous SAN '{san}'")));
    }
    Ok(first)
}

/// SAN for a legal move, without check suffixes.
pub fn to_san(pos: &Position, m: MoveLabel) -> String {
    if is_castle(pos, m) {
        return if m.to.file() == 6 { "O-O".into() } else { "O-O-O".into() };
    }
    let piece = pos.piece_at(m.from).expect("legal move");
    let capture = is_capture(pos, m);
    let mut out = String::new();
    if piece.kind == PieceKind::Pawn {
        if capture {
            out.push((b'a' + m.from.file()) as char);
        }
    } else {
        out.push(piece.kind.letter().to_ascii_uppercase());
        let rivals: Vec<MoveLabel> = legal_moves(pos)
            .into_iter()
            .filter(|o| o.to == m.to && o.from != m.from && pos.piece_at(o.from).map(|p| p.kind) == Some(piece.kind))
            .collect();
        if !rivals.is_empty() {
            let same_file = rivals.iter().any(|o| o.from.file() == m.from.file());
            let same_rank = rivals.iter().any(|o| o.from.rank() == m.from.rank());
            if !same_file {
                out.push((b'a' + m.from.file()) as char);
            } else if !same_rank {
                out.push((b'1' + m.from.rank()) as char);
            } else {
                out.push_str(&m.from.to_string());
            }
        }
    }
    if capture {
        out.push('x');
    }
    out.push_str(&m.to.to_string());
    if piece.kind == PieceKind::Pawn && (m.to.rank() == 0 || m.to.rank() == 7) {
        out.push('=');
        out.push(m.promotion.unwrap_or(PieceKind::Queen).letter().to_ascii_uppercase());
    }
    out
}
