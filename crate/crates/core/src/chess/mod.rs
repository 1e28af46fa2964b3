//! Chess positions, FEN, board flipping, input encoding and the move vocabulary.

mod encode;
mod movegen;
mod moves;
mod position;
mod vocab;

pub use encode::{
    encode_position, EncodedPosition, CHANNEL_CASTLING, CHANNEL_EN_PASSANT, CHANNEL_SIDE_TO_MOVE, INPUT_LEN,
    NUM_CHANNELS,
};
pub use encode::encode_raw;
pub use movegen::{in_check, is_attacked, is_capture, legal_moves, make_move, parse_san, pseudo_legal_moves, to_san};
pub use moves::{flip_move, MoveLabel};
pub use position::{
    flip_position, parse_fen, CastlingRights, Color, Piece, PieceKind, Position, Square, START_FEN,
};
pub use vocab::{build_move_vocabulary, vocabulary, MoveVocabulary, PolicyIndex};
