use super::position::{CastlingRights, Color, Piece, PieceKind, Position, Square};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const NUM_CHANNELS: usize = 18;
pub const CHANNEL_SIDE_TO_MOVE: usize = 12;
pub const CHANNEL_CASTLING: usize = 13;
pub const CHANNEL_EN_PASSANT: usize = 17;
/// Flattened tensor length, `[18, 8, 8]`.
pub const INPUT_LEN: usize = NUM_CHANNELS * 64;

/// Bit-packed `[18, 8, 8]` input planes. Bit `s` of plane `c` is cell
/// `(rank = s / 8, file = s % 8)`.
///
/// Channels: 0-5 white P,N,B,R,Q,K; 6-11 black P,N,B,R,Q,K; 12 side to move;
/// 13-16 castling WK, WQ, BK, BQ; 17 en-passant target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EncodedPosition {
    pub planes: [u64; NUM_CHANNELS],
}

fn piece_channel(p: Piece) -> usize {
    p.color.index() * 6 + p.kind.index()
}

impl EncodedPosition {
    pub fn get(&self, channel: usize, rank: usize, file: usize) -> bool {
        self.planes[channel] >> (rank * 8 + file) & 1 == 1
    }

    pub fn channel_sum(&self, channel: usize) -> u32 {
        self.planes[channel].count_ones()
    }

    /// Dense `[18 * 64]` tensor, channel-major.
    pub fn to_tensor<T: Scalar>(&self) -> Vec<T> {
        let mut out = vec![T::zero(); INPUT_LEN];
        self.write_tensor(&mut out);
        out
    }

    pub fn write_tensor<T: Scalar>(&self, out: &mut [T]) {
        for (c, plane) in self.planes.iter().enumerate() {
            for s in 0..64 {
                out[c * 64 + s] = if plane >> s & 1 == 1 { T::one() } else { T::zero() };
            }
        }
    }

    /// Reconstructs the position the planes were encoded from. Constant
    /// planes are read from cell a1.
    pub fn decode(&self, ply: u32) -> Result<Position> {
        let mut board = [None; 64];
        for (c, plane) in self.planes.iter().enumerate().take(12) {
            let color = if c < 6 { Color::White } else { Color::Black };
            let kind = PieceKind::ALL[c % 6];
            for s in 0..64 {
                if plane >> s & 1 == 1 {
                    if board[s].is_some() {
                        return Err(Error::Data(format!("square {s} occupied twice in planes")));
                    }
                    board[s] = Some(Piece::new(color, kind));
                }
            }
        }
        let side = if self.planes[CHANNEL_SIDE_TO_MOVE] & 1 == 1 { Color::White } else { Color::Black };
        let bit = |c: usize| self.planes[c] & 1 == 1;
        let castling = CastlingRights {
            white_kingside: bit(CHANNEL_CASTLING),
            white_queenside: bit(CHANNEL_CASTLING + 1),
            black_kingside: bit(CHANNEL_CASTLING + 2),
            black_queenside: bit(CHANNEL_CASTLING + 3),
        };
        let ep_plane = self.planes[CHANNEL_EN_PASSANT];
        let en_passant = match ep_plane.count_ones() {
            0 => None,
            1 => Square::new(ep_plane.trailing_zeros() as u8),
            _ => return Err(Error::Data("more than one en-passant bit".into())),
        };
        Position::from_parts(board, side, castling, en_passant, ply.max(1))
    }
}

/// Encodes a white-to-move position. Black-to-move inputs are rejected so
/// that a missing flip upstream surfaces as an error.
pub fn encode_position(p: &Position) -> Result<EncodedPosition> {
    if p.side_to_move() != Color::White {
        return Err(Error::Contract(
            "encode_position requires white to move; flip the position first".into(),
        ));
    }
    Ok(encode_raw(p))
}

/// Encodes regardless of side to move (channel 12 all zeros for black).
pub fn encode_raw(p: &Position) -> EncodedPosition {
    let mut planes = [0u64; NUM_CHANNELS];
    for sq in Square::all() {
        if let Some(piece) = p.piece_at(sq) {
            planes[piece_channel(piece)] |= 1 << sq.index();
        }
    }
    if p.side_to_move() == Color::White {
        planes[CHANNEL_SIDE_TO_MOVE] = u64::MAX;
    }
    for (i, on) in p.castling().as_array().into_iter().enumerate() {
        if on {
            planes[CHANNEL_CASTLING + i] = u64::MAX;
        }
    }
    if let Some(ep) = p.en_passant() {
        planes[CHANNEL_EN_PASSANT] = 1 << ep.index();
    }
    EncodedPosition { planes }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chess::parse_fen;

    #[test]
    fn start_position_channels() {
        let e = encode_position(&Position::start()).unwrap();
        assert_eq!(e.channel_sum(0), 8);
        assert_eq!(e.channel_sum(6), 8);
        assert_eq!(e.channel_sum(5), 1);
        assert_eq!(e.channel_sum(CHANNEL_SIDE_TO_MOVE), 64);
        for c in 13..17 {
            assert_eq!(e.channel_sum(c), 64);
        }
        assert_eq!(e.channel_sum(CHANNEL_EN_PASSANT), 0);
        let t: Vec<f32> = e.to_tensor();
        assert_eq!(t.len(), INPUT_LEN);
        assert_eq!(t.iter().sum::<f32>(), 32.0 + 64.0 * 5.0);
    }

    #[test]
    fn no_castling_and_en_passant_cell() {
        let p = parse_fen("4k3/8/8/3pP3/8/8/8/4K3 w - d6 0 1").unwrap();
        let e = encode_position(&p).unwrap();
        for c in 13..17 {
            assert_eq!(e.channel_sum(c), 0);
        }
        assert_eq!(e.channel_sum(CHANNEL_EN_PASSANT), 1);
        assert!(e.get(CHANNEL_EN_PASSANT, 5, 3));
    }

    #[test]
    fn black_to_move_is_rejected() {
        let p = parse_fen("4k3/8/8/8/8/8/8/4K3 b - - 0 1").unwrap();
        assert!(matches!(encode_position(&p), Err(Error::Contract(_))));
        assert!(encode_position(&p.flip()).is_ok());
    }

    #[test]
    fn decode_inverts_encode() {
        let p = parse_fen("r3k2r/p1ppqpb1/bn2pnp1/3PN3/1p2P3/2N2Q1p/PPPBBPPP/R3K2R w Kq - 0 1").unwrap();
        let e = encode_position(&p).unwrap();
        assert_eq!(e.decode(1).unwrap(), p);
    }
}
