use maia4all::chess::{encode_position, flip_move, legal_moves, make_move, parse_fen, vocabulary, Color, Position};
use maia4all::embeddings::top_k_weights;
use maia4all::nn::tensor::{argmax, log_softmax_at, softmax};
use maia4all::pgn::{rating_to_bin, PlayerDataset, TrainingExample, NUM_BINS};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn played(seed: u64, plies: usize) -> Position {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos = Position::start();
    for _ in 0..plies {
        match legal_moves(&pos).choose(&mut rng) {
            Some(&m) => pos = make_move(&pos, m).unwrap(),
            None => break,
        }
    }
    pos
}

fn example(i: usize) -> TrainingExample {
    TrainingExample {
        position: Position::start(),
        target: i % 1858,
        active_rating: 1500,
        opponent_rating: 1500,
        player_id: "p".into(),
        ply: i as u32 + 11,
        game_id: format!("g{i}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn flip_is_an_involution(seed in any::<u64>(), plies in 0usize..100) {
        let p = played(seed, plies);
        prop_assert_eq!(p.flip().flip(), p.clone());
        prop_assert_ne!(p.flip().side_to_move(), p.side_to_move());
    }

    #[test]
    fn fen_round_trips(seed in any::<u64>(), plies in 0usize..100) {
        let p = played(seed, plies);
        let back = parse_fen(&p.to_fen()).unwrap().with_ply(p.ply());
        prop_assert_eq!(back, p);
    }

    #[test]
    fn white_perspective_always_encodes(seed in any::<u64>(), plies in 0usize..100) {
        let p = played(seed, plies);
        let w = p.white_perspective();
        prop_assert_eq!(w.side_to_move(), Color::White);
        let e = encode_position(&w).unwrap();
        prop_assert_eq!(e.channel_sum(12), 64);
        let pieces: u32 = (0..12).map(|c| e.channel_sum(c)).sum();
        prop_assert_eq!(pieces as usize, p.piece_count());
    }

    #[test]
    fn legal_moves_map_into_the_vocabulary(seed in any::<u64>(), plies in 0usize..100) {
        let p = played(seed, plies).white_perspective();
        for m in legal_moves(&p) {
            prop_assert!(vocabulary().move_to_index(&m).is_some(), "{} missing", m);
        }
    }

    #[test]
    fn flip_move_is_an_involution(i in 0usize..1858) {
        let m = vocabulary().index_to_move(i).unwrap();
        prop_assert_eq!(flip_move(flip_move(m)), m);
    }

    #[test]
    fn argmax_ignores_constant_shifts(v in prop::collection::vec(-20.0f64..20.0, 1..64), c in -100.0f64..100.0) {
        let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
        prop_assert_eq!(argmax(&v), argmax(&shifted));
    }

    #[test]
    fn log_softmax_matches_softmax(v in prop::collection::vec(-20.0f64..20.0, 1..64), i in 0usize..64) {
        let i = i % v.len();
        let p = softmax(&v);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!((log_softmax_at(&v, i) - p[i].ln()).abs() < 1e-9);
    }

    #[test]
    fn top_k_weights_form_a_distribution(v in prop::collection::vec(-10.0f64..10.0, 1..30), k in 1usize..30, t in 0.05f64..5.0) {
        let k = k.min(v.len());
        let w = top_k_weights(&v, k, t).unwrap();
        prop_assert_eq!(w.len(), k);
        prop_assert!(w.iter().all(|&(_, x)| x >= 0.0));
        prop_assert!((w.iter().map(|x| x.1).sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rating_bins_are_monotone(a in 0u32..4000, b in 0u32..4000) {
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(rating_to_bin(lo) <= rating_to_bin(hi));
        prop_assert!(rating_to_bin(hi) < NUM_BINS);
    }

    #[test]
    fn splits_are_disjoint_and_chronological(n in 1usize..300, m in 0usize..300, t in 0usize..300) {
        let ex: Vec<TrainingExample> = (0..n).map(example).collect();
        let d = PlayerDataset::from_examples("p", 1500, ex, m, t).unwrap();
        let (train, test) = (d.train(), d.test());
        prop_assert_eq!(test.examples.len(), t.min(n.saturating_sub(m)));
        prop_assert!(train.examples.len() + test.examples.len() <= n);
        prop_assert!(train.examples.len() <= m);
        if let (Some(a), Some(b)) = (train.examples.last(), test.examples.first()) {
            prop_assert!(a.ply < b.ply);
        }
    }
}
