//! End-to-end acceptance checks. Runs sequentially and prints one PASS/FAIL
//! line per criterion; exits nonzero when a gating criterion fails.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use maia4all::chess::{
    build_move_vocabulary, encode_position, encode_raw, flip_move, legal_moves, make_move, vocabulary, CastlingRights,
    Color, EncodedPosition, MoveLabel, Piece, PieceKind, Position, Square, CHANNEL_CASTLING, CHANNEL_EN_PASSANT,
    CHANNEL_SIDE_TO_MOVE,
};
use maia4all::embeddings::{init_individual_from_population, prototype_init, strength_init, IndividualTable, PopulationTable, UnseenEmbedding};
use maia4all::eval::{evaluate, EvalMeta, EvalReport, PlayerEval};
use maia4all::net::{load_policy, loss_and_gradients, mean_loss, save_policy, EmbeddingRef, EmbeddingSet, GradMode, ModelConfig};
use maia4all::nn::tensor::Tensor;
use maia4all::pgn::{
    filter_game, parse_pgn_stream, rating_to_bin, reject_reason, DatasetBuilder, FilterConfig, PlayerDataset, PrototypeSet,
    RejectReason, TestSplit, TrainSplit, TrainingExample, NUM_BINS,
};
use maia4all::pipeline::{Pipeline, PipelineConfig};
use maia4all::pmn::{move_pairs, train_pmn, PmnConfig};
use maia4all::synth::{contradiction_fixture, corpus_pgn, pipeline_corpus, Style, SynthConfig, SynthPlayer};
use maia4all::train::{democratize, democratize_full, enrich, enrichment_objective, pretrain_population, TrainConfig};
use maia4all::{Model, Model64};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn err<E: Display>(e: E) -> String {
    e.to_string()
}

fn acceptance_config() -> ModelConfig {
    ModelConfig {
        k_conv: 2,
        k_att: 2,
        c_mid: 32,
        c_patch: 4,
        d: 16,
        d_h: 16,
        heads: 4,
        d_att: 64,
        d_ffn: 128,
        ..ModelConfig::tiny(1858)
    }
}

#[derive(Default)]
struct Shared {
    contra: Option<Contra>,
    styled: Option<Styled>,
}

/// Enriched model from the contradiction fixture.
struct Contra {
    model: Model,
    population: PopulationTable<f32>,
    individual: IndividualTable<f32>,
    examples: [Vec<TrainingExample>; 2],
}

/// Matcher trained on four stylized players' games.
struct Styled {
    players: Vec<SynthPlayer>,
    pmn: maia4all::Pmn,
    validation_accuracy: f64,
}

// ---------------------------------------------------------------- 1

fn random_structural_position(rng: &mut ChaCha8Rng) -> Position {
    loop {
        let mut board = [None; 64];
        let mut squares: Vec<usize> = (0..64).collect();
        squares.shuffle(rng);
        let mut it = squares.into_iter();
        board[it.next().unwrap()] = Some(Piece::new(Color::White, PieceKind::King));
        board[it.next().unwrap()] = Some(Piece::new(Color::Black, PieceKind::King));
        let extra = rng.gen_range(0..=30);
        for sq in it.take(extra) {
            let color = if rng.gen_bool(0.5) { Color::White } else { Color::Black };
            let kind = PieceKind::ALL[rng.gen_range(0..5)];
            if kind == PieceKind::Pawn && (sq / 8 == 0 || sq / 8 == 7) {
                continue;
            }
            board[sq] = Some(Piece::new(color, kind));
        }
        let side = if rng.gen_bool(0.5) { Color::White } else { Color::Black };
        let castling = CastlingRights {
            white_kingside: rng.gen_bool(0.5),
            white_queenside: rng.gen_bool(0.5),
            black_kingside: rng.gen_bool(0.5),
            black_queenside: rng.gen_bool(0.5),
        };
        let ep_rank = if side == Color::White { 5 } else { 2 };
        let en_passant = rng.gen_bool(0.3).then(|| Square::from_coords(rng.gen_range(0..8), ep_rank).unwrap());
        if let Ok(p) = Position::from_parts(board, side, castling, en_passant, rng.gen_range(1..300)) {
            return p;
        }
    }
}

fn random_game_position(rng: &mut ChaCha8Rng) -> (Position, Vec<MoveLabel>) {
    let mut pos = Position::start();
    for _ in 0..rng.gen_range(0..120) {
        let moves = legal_moves(&pos);
        match moves.choose(rng) {
            Some(&m) => pos = make_move(&pos, m).expect("legal"),
            None => break,
        }
    }
    let moves = legal_moves(&pos);
    (pos, moves)
}

fn piece_channel(p: Piece) -> usize {
    let c = if p.color == Color::White { 0 } else { 6 };
    c + PieceKind::ALL.iter().position(|&k| k == p.kind).unwrap()
}

/// Planes built straight from the position fields.
fn oracle_planes(p: &Position) -> [[bool; 64]; 18] {
    let mut planes = [[false; 64]; 18];
    for sq in Square::all() {
        if let Some(piece) = p.piece_at(sq) {
            planes[piece_channel(piece)][sq.index()] = true;
        }
    }
    let fill = |plane: &mut [bool; 64], on: bool| plane.iter_mut().for_each(|x| *x = on);
    fill(&mut planes[12], p.side_to_move() == Color::White);
    for (i, on) in p.castling().as_array().into_iter().enumerate() {
        fill(&mut planes[CHANNEL_CASTLING + i], on);
    }
    if let Some(ep) = p.en_passant() {
        planes[17][ep.index()] = true;
    }
    planes
}

fn check_encoding_invariants(e: &EncodedPosition) -> std::result::Result<(), String> {
    let mut total = 0;
    for rank in 0..8 {
        for file in 0..8 {
            let n = (0..12).filter(|&c| e.get(c, rank, file)).count();
            ensure!(n <= 1, "square ({rank},{file}) holds {n} pieces");
            total += n;
        }
    }
    ensure!(total <= 32, "{total} pieces encoded");
    for c in CHANNEL_SIDE_TO_MOVE..CHANNEL_EN_PASSANT {
        let s = e.channel_sum(c);
        ensure!(s == 0 || s == 64, "channel {c} is not constant ({s} ones)");
    }
    ensure!(e.channel_sum(CHANNEL_EN_PASSANT) <= 1, "several en-passant bits");
    Ok(())
}

fn check_position(p: &Position, moves: &[MoveLabel]) -> std::result::Result<(), String> {
    let raw = encode_raw(p);
    check_encoding_invariants(&raw)?;
    let oracle = oracle_planes(p);
    for c in 0..18 {
        for s in 0..64 {
            ensure!(raw.get(c, s / 8, s % 8) == oracle[c][s], "channel {c} cell {s} disagrees with the oracle for {}", p.to_fen());
        }
    }
    let flipped = p.flip();
    ensure!(flipped.flip() == *p, "flip is not an involution for {}", p.to_fen());
    ensure!(flipped.ply() == p.ply(), "flip changed the ply");
    for &m in moves {
        ensure!(flip_move(flip_move(m)) == m, "flip_move is not an involution for {m}");
        ensure!(legal_moves(&flipped).contains(&flip_move(m)), "{m} has no flipped counterpart");
    }
    match p.side_to_move() {
        Color::White => {
            let e = encode_position(p).map_err(err)?;
            ensure!(e == raw, "encode_position differs from the raw planes");
            ensure!(e.decode(p.ply()).map_err(err)? == *p, "decode does not invert encode");
        }
        Color::Black => {
            ensure!(encode_position(p).is_err(), "black-to-move input was accepted");
            let e = encode_position(&flipped).map_err(err)?;
            check_encoding_invariants(&e)?;
            for rank in 0..8 {
                for file in 0..8 {
                    let src = 7 - rank;
                    for c in 0..12 {
                        let swapped = (c + 6) % 12;
                        ensure!(e.get(c, rank, file) == raw.get(swapped, src, file), "piece channel {c} at ({rank},{file})");
                    }
                    ensure!(e.get(12, rank, file) != raw.get(12, rank, file), "side to move not inverted");
                    for (a, b) in [(13, 15), (14, 16), (15, 13), (16, 14)] {
                        ensure!(e.get(a, rank, file) == raw.get(b, rank, file), "castling channel {a}");
                    }
                    ensure!(e.get(17, rank, file) == raw.get(17, src, file), "en-passant channel at ({rank},{file})");
                }
            }
        }
    }
    Ok(())
}

fn c1_encoding() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut black, mut with_ep) = (0, 0);
    for i in 0..10_000 {
        let (p, moves) = if i % 2 == 0 {
            random_game_position(&mut rng)
        } else {
            (random_structural_position(&mut rng), Vec::new())
        };
        black += usize::from(p.side_to_move() == Color::Black);
        with_ep += usize::from(p.en_passant().is_some());
        check_position(&p, &moves)?;
    }
    Ok(format!("10000 positions ({black} black to move, {with_ep} with en passant)"))
}

// ---------------------------------------------------------------- 2

/// Independent enumeration of the policy labels.
fn oracle_vocabulary() -> Vec<(u8, u8, Option<PieceKind>)> {
    let mut out = Vec::new();
    for from in 0u8..64 {
        let (ff, fr) = ((from % 8) as i32, (from / 8) as i32);
        for to in 0u8..64 {
            if to == from {
                continue;
            }
            let (df, dr) = (((to % 8) as i32 - ff).abs(), ((to / 8) as i32 - fr).abs());
            let queen = df == 0 || dr == 0 || df == dr;
            let knight = (df, dr) == (1, 2) || (df, dr) == (2, 1);
            if queen || knight {
                out.push((from, to, None));
            }
        }
    }
    for file in 0u8..8 {
        let from = 48 + file;
        for df in [-1i32, 0, 1] {
            let tf = file as i32 + df;
            if !(0..8).contains(&tf) {
                continue;
            }
            for kind in [PieceKind::Knight, PieceKind::Bishop, PieceKind::Rook] {
                out.push((from, 56 + tf as u8, Some(kind)));
            }
        }
    }
    let (plain, promo): (Vec<_>, Vec<_>) = out.into_iter().partition(|x| x.2.is_none());
    let mut promo = promo;
    let rank = |k: Option<PieceKind>| match k {
        Some(PieceKind::Knight) => 0,
        Some(PieceKind::Bishop) => 1,
        _ => 2,
    };
    promo.sort_by_key(|&(f, t, k)| (f, t, rank(k)));
    plain.into_iter().chain(promo).collect()
}

fn c2_vocabulary() -> Outcome {
    let oracle = oracle_vocabulary();
    let plain = oracle.iter().filter(|x| x.2.is_none()).count();
    ensure!(plain == 1792 && oracle.len() == 1858, "oracle itself counts {plain} + {}", oracle.len() - plain);
    let a = build_move_vocabulary();
    let b = build_move_vocabulary();
    ensure!(a.len() == oracle.len(), "vocabulary has {} entries, oracle {}", a.len(), oracle.len());
    ensure!(a.entries() == b.entries() && a.hash() == b.hash(), "two constructions differ");
    for (i, (m, &(f, t, k))) in a.entries().iter().zip(&oracle).enumerate() {
        ensure!(m.from.index() == f as usize && m.to.index() == t as usize && m.promotion == k, "entry {i}: {m} vs oracle");
        ensure!(a.move_to_index(m) == Some(i), "index of {m}");
        ensure!(a.index_to_move(i) == Some(*m), "move at {i}");
        if m.promotion.is_none() {
            ensure!(a.move_to_index(&m.flip()).is_some(), "{m} is not closed under flipping");
        }
    }
    ensure!(a.index_to_move(a.len()).is_none(), "index past the end resolves");
    Ok(format!("{} entries = {plain} geometric + {} underpromotions", a.len(), a.len() - plain))
}

// ---------------------------------------------------------------- 3

fn c3_filter() -> Outcome {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden.pgn");
    let text = fs::read_to_string(&path).map_err(err)?;
    let games: Vec<_> = parse_pgn_stream(text.as_bytes()).collect::<maia4all::Result<_>>().map_err(err)?;
    ensure!(games.len() == 3, "parsed {} games", games.len());
    let cfg = FilterConfig::default();
    ensure!(reject_reason(&games[1], &cfg) == Some(RejectReason::TimeControl), "600+0 game not rejected as non-blitz");
    let expected: [(usize, &str, &[(u32, &str)]); 4] = [
        (0, "alice", &[(11, "f3g1"), (13, "g1f3")]),
        (0, "bob", &[(12, "f3g1"), (14, "g1f3")]),
        (2, "carol", &[(11, "f1e1")]),
        (2, "alice", &[(12, "b2b4")]),
    ];
    let vocab = vocabulary();
    let mut total = 0;
    for (g, player, want) in expected {
        let got: Vec<(u32, String)> = filter_game(&games[g], &cfg, player)
            .map_err(err)?
            .examples()
            .iter()
            .map(|e| (e.ply, vocab.index_to_move(e.target).unwrap().to_string()))
            .collect();
        let want: Vec<(u32, String)> = want.iter().map(|&(p, m)| (p, m.to_string())).collect();
        ensure!(got == want, "game {} {player}: got {got:?}, want {want:?}", g + 1);
        total += got.len();
    }
    let mut b = DatasetBuilder::new(cfg);
    for g in &games {
        b.add_game(g).map_err(err)?;
    }
    ensure!(b.stats.games_kept == 2 && b.stats.examples == total, "builder kept {} games, {} positions", b.stats.games_kept, b.stats.examples);
    Ok(format!("{total} retained positions match, 1 game rejected for time control"))
}

// ---------------------------------------------------------------- 4

fn grad_example(fen: &str, target: usize, player: &str, rating: u32) -> TrainingExample {
    TrainingExample {
        position: maia4all::chess::parse_fen(fen).unwrap(),
        target,
        active_rating: 1500,
        opponent_rating: rating,
        player_id: player.to_string(),
        ply: 20,
        game_id: "g".into(),
    }
}

fn c4_gradients() -> Outcome {
    const EPS: f64 = 1e-5;
    const TOL: f64 = 1e-4;
    let mut model = Model64::init(ModelConfig::tiny(32), 21).map_err(err)?;
    let pop = PopulationTable::<f64>::init(8, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut ind = IndividualTable {
        rows: Tensor::uniform(&[2, 8], 0.5, &mut rng),
        ids: vec!["a".into(), "b".into()],
    };
    let data = [
        grad_example("r1bqkbnr/pppp1ppp/2n5/4p3/4P3/5N2/PPPP1PPP/RNBQKB1R w KQkq - 2 3", 3, "a", 1700),
        grad_example("4k3/8/8/3pP3/8/8/8/4K3 w - d6 0 1", 17, "b", 1200),
        grad_example("rnbqkbnr/pppppppp/8/8/8/8/PPPPPPPP/RNBQKBNR w KQkq - 0 1", 30, "a", 2100),
        grad_example("r3k2r/8/8/8/8/8/8/R3K2R w KQkq - 0 1", 9, "b", 1450),
    ];
    let refs: Vec<&TrainingExample> = data.iter().collect();
    let resolve = |ex: &TrainingExample| -> maia4all::Result<(EmbeddingRef, EmbeddingRef)> {
        let row = usize::from(ex.player_id == "b");
        Ok((EmbeddingRef::Individual(row), EmbeddingRef::Population(rating_to_bin(ex.opponent_rating))))
    };
    let set = EmbeddingSet {
        population: &pop,
        individual: Some(&ind),
        unseen: None,
    };
    let (_, grads) = loss_and_gradients(&model, &refs, resolve, &set, GradMode::Full).map_err(err)?;
    let phi = grads.phi.as_ref().unwrap();
    let analytic: Vec<(String, Vec<f64>)> = phi.named_params().into_iter().map(|(n, t)| (n, t.data.clone())).collect();
    let groups: [(&str, fn(&str) -> bool); 5] = [
        ("conv", |n| n.starts_with("backbone")),
        ("patch", |n| n.starts_with("patch")),
        ("attention", |n| n.contains(".attention")),
        ("skill", |n| n.contains(".skill")),
        ("head", |n| n.starts_with("head")),
    ];
    let rel = |a: f64, n: f64| (a - n).abs() / (a.abs() + n.abs()).max(1e-6);
    let mut worst = (0.0f64, String::new());
    let mut checked = 0;
    let mut note = |e: f64, what: String| {
        if e > worst.0 {
            worst = (e, what);
        }
    };
    for (group, pick) in groups {
        let members: Vec<(usize, usize)> = analytic
            .iter()
            .enumerate()
            .filter(|(_, (n, _))| pick(n))
            .flat_map(|(i, (_, d))| (0..d.len()).map(move |j| (i, j)))
            .collect();
        ensure!(!members.is_empty(), "no parameters in group {group}");
        for _ in 0..16 {
            let (which, flat) = *members.choose(&mut rng).unwrap();
            let orig = model.named_params()[which].1.data[flat];
            let mut at = |v: f64| {
                model.named_params_mut()[which].1.data[flat] = v;
                let set = EmbeddingSet {
                    population: &pop,
                    individual: Some(&ind),
                    unseen: None,
                };
                mean_loss(&model, &refs, resolve, &set).unwrap()
            };
            let numeric = (at(orig + EPS) - at(orig - EPS)) / (2.0 * EPS);
            at(orig);
            let a = analytic[which].1[flat];
            let e = rel(a, numeric);
            ensure!(e < TOL, "{}[{flat}]: analytic {a:e} numeric {numeric:e}", analytic[which].0);
            note(e, format!("{}[{flat}]", analytic[which].0));
            checked += 1;
        }
    }
    let g_ind = grads.individual.as_ref().unwrap();
    for _ in 0..10 {
        let i = rng.gen_range(0..ind.rows.len());
        let orig = ind.rows.data[i];
        let mut at = |v: f64| {
            ind.rows.data[i] = v;
            let set = EmbeddingSet {
                population: &pop,
                individual: Some(&ind),
                unseen: None,
            };
            mean_loss(&model, &refs, resolve, &set).unwrap()
        };
        let numeric = (at(orig + EPS) - at(orig - EPS)) / (2.0 * EPS);
        at(orig);
        let e = rel(g_ind.data[i], numeric);
        ensure!(e < TOL, "individual[{i}]: analytic {} numeric {numeric}", g_ind.data[i]);
        note(e, format!("individual[{i}]"));
        checked += 1;
    }
    let mut pop = pop;
    let used: Vec<usize> = data.iter().map(|e| rating_to_bin(e.opponent_rating)).collect();
    for _ in 0..10 {
        let bin = *used.choose(&mut rng).unwrap();
        let i = bin * 8 + rng.gen_range(0..8);
        let orig = pop.rows.data[i];
        let mut at = |v: f64| {
            pop.rows.data[i] = v;
            let set = EmbeddingSet {
                population: &pop,
                individual: Some(&ind),
                unseen: None,
            };
            mean_loss(&model, &refs, resolve, &set).unwrap()
        };
        let numeric = (at(orig + EPS) - at(orig - EPS)) / (2.0 * EPS);
        at(orig);
        let e = rel(grads.population.data[i], numeric);
        ensure!(e < TOL, "population[{i}]: analytic {} numeric {numeric}", grads.population.data[i]);
        note(e, format!("population[{i}]"));
        checked += 1;
    }
    Ok(format!("{checked} coordinates, worst relative error {:.2e} at {}", worst.0, worst.1))
}

// ---------------------------------------------------------------- 5

fn nll_oracle(logits: &[f64], target: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    lse - logits[target]
}

fn c5_normalization() -> Outcome {
    let model = Model64::init(ModelConfig::tiny(1858), 8).map_err(err)?;
    let fixture = contradiction_fixture(9, 3).map_err(err)?;
    let a: Vec<TrainingExample> = fixture.examples[0][..2].to_vec();
    let b: Vec<TrainingExample> = fixture.examples[1].clone();
    let ids = vec!["contra-a".to_string(), "contra-b".to_string()];
    let ratings: HashMap<String, u32> = ids.iter().map(|id| (id.clone(), 1550)).collect();
    let mut bins = vec![Vec::new(); NUM_BINS];
    bins[rating_to_bin(1550)] = ids.clone();
    let protos = PrototypeSet::from_bins(bins, &ratings).map_err(err)?;
    let pop = PopulationTable::<f64>::init(model.config.d, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let ind = IndividualTable {
        rows: Tensor::uniform(&[2, model.config.d], 1.0, &mut rng),
        ids: ids.clone(),
    };
    let mut per_player = Vec::new();
    for (row, ex) in [&a, &b].into_iter().enumerate() {
        let mut nlls = Vec::new();
        for e in ex {
            let x = encode_position(&e.position).map_err(err)?.to_tensor::<f64>();
            let logits = model.forward(&x, ind.row(row), pop.for_rating(e.opponent_rating)).map_err(err)?;
            nlls.push(nll_oracle(&logits, e.target));
        }
        per_player.push(nlls);
    }
    let total: usize = per_player.iter().map(Vec::len).sum();
    let position_weighted = per_player.iter().flatten().sum::<f64>() / total as f64;
    let player_weighted = per_player.iter().map(|v| v.iter().sum::<f64>() / v.len() as f64).sum::<f64>() / 2.0;
    ensure!((position_weighted - player_weighted).abs() > 1e-4, "fixture does not separate the two normalizations");
    let splits = [
        TrainSplit { player_id: "contra-a", rating: 1550, examples: &a },
        TrainSplit { player_id: "contra-b", rating: 1550, examples: &b },
    ];
    let objective = enrichment_objective(&model, &pop, &ind, &splits, &protos).map_err(err)?;
    ensure!(
        (objective - position_weighted).abs() < 1e-9,
        "objective {objective} vs position-weighted {position_weighted} (player-weighted {player_weighted})"
    );
    Ok(format!(
        "|P| = {} and {}: objective {objective:.6} = position-weighted, player-weighted {player_weighted:.6}",
        a.len(),
        b.len()
    ))
}

// ---------------------------------------------------------------- 6

fn individual_accuracy(model: &Model, pop: &PopulationTable<f32>, ind: &IndividualTable<f32>, row: usize, ex: &[TrainingExample]) -> maia4all::Result<f64> {
    let mut right = 0;
    for e in ex {
        let x = encode_position(&e.position)?.to_tensor::<f32>();
        let logits = model.forward(&x, ind.row(row), pop.for_rating(e.opponent_rating))?;
        right += usize::from(maia4all::nn::tensor::argmax(&logits) == e.target);
    }
    Ok(right as f64 / ex.len() as f64)
}

fn contra(shared: &mut Shared) -> maia4all::Result<&Contra> {
    if shared.contra.is_none() {
        let fixture = contradiction_fixture(50, 11)?;
        let mut model = Model::init(acceptance_config(), 1)?;
        let population = PopulationTable::<f32>::init(model.config.d, 2);
        let ids: Vec<String> = fixture.players.iter().map(|p| p.id.clone()).collect();
        let ratings: HashMap<String, u32> = fixture.players.iter().map(|p| (p.id.clone(), p.rating)).collect();
        let mut bins = vec![Vec::new(); NUM_BINS];
        bins[rating_to_bin(1550)] = ids;
        let protos = PrototypeSet::from_bins(bins, &ratings)?;
        let mut individual = init_individual_from_population(&population, &protos)?;
        let splits: Vec<TrainSplit<'_>> = (0..2)
            .map(|k| TrainSplit {
                player_id: &fixture.players[k].id,
                rating: 1550,
                examples: &fixture.examples[k],
            })
            .collect();
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            batch_size: 100,
            max_steps: 150,
            eval_every: 50,
            seed: 1,
            ..TrainConfig::default()
        };
        enrich(&mut model, &population, &mut individual, &splits, &protos, &cfg)?;
        shared.contra = Some(Contra {
            model,
            population,
            individual,
            examples: fixture.examples,
        });
    }
    Ok(shared.contra.as_ref().unwrap())
}

fn c6_individualization(shared: &mut Shared) -> Outcome {
    let c = contra(shared).map_err(err)?;
    let acc: Vec<f64> = (0..2)
        .map(|row| individual_accuracy(&c.model, &c.population, &c.individual, row, &c.examples[row]))
        .collect::<maia4all::Result<_>>()
        .map_err(err)?;
    // an embedding-blind model answers both players identically
    let blind = 0.5 * (individual_accuracy(&c.model, &c.population, &c.individual, 0, &c.examples[1]).map_err(err)?
        + individual_accuracy(&c.model, &c.population, &c.individual, 1, &c.examples[0]).map_err(err)?);
    ensure!(acc.iter().all(|&a| a >= 0.95), "per-player train accuracy {acc:?}");
    Ok(format!("train accuracy {:.3} / {:.3}; swapped embeddings {blind:.3}", acc[0], acc[1]))
}

// ---------------------------------------------------------------- 7

fn unseen_loss(model: &Model, pop: &PopulationTable<f32>, e: &[f32], ex: &[TrainingExample]) -> maia4all::Result<f64> {
    let mut nll = 0.0;
    for x in ex {
        let input = encode_position(&x.position)?.to_tensor::<f32>();
        let logits: Vec<f64> = model.forward(&input, e, pop.for_rating(x.opponent_rating))?.iter().map(|&v| v as f64).collect();
        nll += nll_oracle(&logits, x.target);
    }
    Ok(nll / ex.len() as f64)
}

fn file_digests(dir: &Path) -> maia4all::Result<BTreeMap<String, Vec<u8>>> {
    let mut out = BTreeMap::new();
    for entry in walk(dir)? {
        out.insert(entry.strip_prefix(dir).unwrap().to_string_lossy().into_owned(), fs::read(&entry)?);
    }
    Ok(out)
}

fn walk(dir: &Path) -> maia4all::Result<Vec<std::path::PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d)? {
            let p = e?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn c7_frozen(shared: &mut Shared) -> Outcome {
    let c = contra(shared).map_err(err)?;
    let tmp = tempfile::tempdir().map_err(err)?;
    let dir = tmp.path().join("ckpt");
    let manifest = save_policy(&dir, &c.model, &[("embeddings.population", &c.population.rows)], BTreeMap::new(), BTreeMap::new())
        .map_err(err)?;
    let before = file_digests(&dir).map_err(err)?;
    let loaded = load_policy::<f32>(&dir).map_err(err)?;
    let model = loaded.model;
    // a new player answering like contra-b
    let ex: Vec<TrainingExample> = c.examples[1]
        .iter()
        .map(|e| TrainingExample {
            player_id: "newcomer".into(),
            ..e.clone()
        })
        .collect();
    let e_u = strength_init::<f32>("newcomer", 1550, &c.population);
    let initial = unseen_loss(&model, &c.population, &e_u.vector, &ex).map_err(err)?;
    let cfg = TrainConfig {
        learning_rate: 1e-2,
        batch_size: 50,
        max_steps: 300,
        eval_every: 50,
        validation_fraction: 0.0,
        ..TrainConfig::default()
    };
    let split = TrainSplit {
        player_id: "newcomer",
        rating: 1550,
        examples: &ex,
    };
    let adapted = democratize(&model, &c.population, &e_u, split, &cfg).map_err(err)?;
    let after = unseen_loss(&model, &c.population, &adapted.embedding.vector, &ex).map_err(err)?;
    ensure!(file_digests(&dir).map_err(err)? == before, "checkpoint files changed");
    ensure!(model.parameter_checksum() == manifest.parameter_checksum, "loaded parameters drifted from the manifest checksum");
    let steps = adapted.output.as_ref().map_or(0, |o| o.report.steps.len());
    let drop = 1.0 - after / initial;
    ensure!(drop >= 0.2, "train loss {initial:.4} -> {after:.4} ({:.1}% lower)", 100.0 * drop);
    Ok(format!("checksum unchanged; train loss {initial:.4} -> {after:.4} ({:.1}% lower) in {steps} steps", 100.0 * drop))
}

// ---------------------------------------------------------------- 8, 9

fn datasets_from_pgn(text: &str) -> maia4all::Result<Vec<PlayerDataset>> {
    let mut b = DatasetBuilder::new(FilterConfig::default());
    for g in parse_pgn_stream(text.as_bytes()) {
        b.add_game(&g?)?;
    }
    Ok(b.into_datasets(usize::MAX, 0))
}

fn styled(shared: &mut Shared) -> maia4all::Result<&Styled> {
    if shared.styled.is_none() {
        let players: Vec<SynthPlayer> = (0..4).map(|i| SynthPlayer::new(&format!("style-{i}"), 1550, Style::distinct(i, 7), 0.0)).collect();
        let text = corpus_pgn(&players, &SynthConfig { games_per_player: 30, ..SynthConfig::default() });
        let sets: Vec<PlayerDataset> = datasets_from_pgn(&text)?.into_iter().filter(|d| d.player_id.starts_with("style-")).collect();
        let splits: Vec<TrainSplit<'_>> = sets.iter().map(|d| d.train()).collect();
        let ratings: HashMap<String, u32> = players.iter().map(|p| (p.id.clone(), p.rating)).collect();
        let mut bins = vec![Vec::new(); NUM_BINS];
        bins[rating_to_bin(1550)] = players.iter().map(|p| p.id.clone()).collect();
        let protos = PrototypeSet::from_bins(bins, &ratings)?;

        let mut model = Model::init(acceptance_config(), 3)?;
        let mut population = PopulationTable::<f32>::init(model.config.d, 4);
        let stage = |steps| TrainConfig {
            learning_rate: 1e-3,
            batch_size: 64,
            max_steps: steps,
            eval_every: 50,
            eval_examples: 128,
            ..TrainConfig::default()
        };
        pretrain_population(&mut model, &mut population, &splits, &stage(150))?;
        let mut individual = init_individual_from_population(&population, &protos)?;
        let enrich_cfg = TrainConfig {
            embedding_learning_rate: Some(1e-2),
            ..stage(150)
        };
        enrich(&mut model, &population, &mut individual, &splits, &protos, &enrich_cfg)?;
        let pc = PmnConfig {
            heads: 4,
            d_h: 16,
            d_ffn: 128,
            steps: 400,
            batch_size: 32,
            eval_every: 100,
            learning_rate: 3e-4,
            ..PmnConfig::default()
        };
        let (pmn, report) = train_pmn(&model.backbone, &splits, &protos, &pc)?;
        let validation_accuracy = report.epochs.last().map_or(f64::NAN, |e| e.validation_accuracy);
        shared.styled = Some(Styled {
            players,
            pmn,
            validation_accuracy,
        });
    }
    Ok(shared.styled.as_ref().unwrap())
}

fn c9_pmn(shared: &mut Shared) -> Outcome {
    let s = styled(shared).map_err(err)?;
    ensure!(s.validation_accuracy >= 0.9, "validation accuracy {:.3}", s.validation_accuracy);
    // fresh games, never seen by the matcher
    let text = corpus_pgn(&s.players, &SynthConfig { games_per_player: 4, seed: 77, ..SynthConfig::default() });
    let mut hits = 0;
    for d in datasets_from_pgn(&text).map_err(err)?.iter().filter(|d| d.player_id.starts_with("style-")) {
        let history = move_pairs(&d.all_examples()[..d.all_examples().len().min(64)]).map_err(err)?;
        let who = s.pmn.stylometry_identify(&history).map_err(err)?;
        ensure!(who == d.player_id, "{} identified as {who}", d.player_id);
        hits += 1;
    }
    ensure!(hits == 4, "only {hits} players had fresh games");
    Ok(format!("validation accuracy {:.3} (chance 0.25); 4/4 fresh histories identified", s.validation_accuracy))
}

/// White-to-move positions from random play, pairwise distinct.
fn random_positions(n: usize, rng: &mut ChaCha8Rng) -> Vec<Position> {
    let mut out: Vec<Position> = Vec::new();
    while out.len() < n {
        let mut pos = Position::start();
        for _ in 0..2 * rng.gen_range(3..20) {
            match legal_moves(&pos).choose(rng) {
                Some(&m) => pos = make_move(&pos, m).expect("legal"),
                None => break,
            }
        }
        if pos.side_to_move() == Color::White && !legal_moves(&pos).is_empty() && !out.contains(&pos) {
            out.push(pos);
        }
    }
    out
}

fn answers(player: &SynthPlayer, positions: &[Position], rng: &mut ChaCha8Rng) -> Vec<TrainingExample> {
    let vocab = vocabulary();
    positions
        .iter()
        .enumerate()
        .map(|(i, pos)| {
            let m = if rng.gen_bool(player.noise) {
                *legal_moves(pos).choose(rng).unwrap()
            } else {
                player.style.choose(pos).unwrap()
            };
            TrainingExample {
                position: pos.clone(),
                target: vocab.index_of(&m).unwrap(),
                active_rating: player.rating,
                opponent_rating: player.rating,
                player_id: player.id.clone(),
                ply: pos.ply(),
                game_id: format!("q{i}"),
            }
        })
        .collect()
}

/// Same-rated prototypes answering one shared position set, so only the
/// embedding tells them apart.
fn c8_init_order() -> Outcome {
    let players: Vec<SynthPlayer> = (0..4).map(|i| SynthPlayer::new(&format!("style-{i}"), 1550, Style::distinct(i, 9), 0.1)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let shared_positions = random_positions(500, &mut rng);
    let data: Vec<Vec<TrainingExample>> = players.iter().map(|p| answers(p, &shared_positions, &mut rng)).collect();
    let splits: Vec<TrainSplit<'_>> = players
        .iter()
        .zip(&data)
        .map(|(p, ex)| TrainSplit { player_id: &p.id, rating: p.rating, examples: ex })
        .collect();
    let ratings: HashMap<String, u32> = players.iter().map(|p| (p.id.clone(), p.rating)).collect();
    let mut bins = vec![Vec::new(); NUM_BINS];
    bins[rating_to_bin(1550)] = players.iter().map(|p| p.id.clone()).collect();
    let protos = PrototypeSet::from_bins(bins, &ratings).map_err(err)?;

    let mut model = Model::init(acceptance_config(), 5).map_err(err)?;
    let mut population = PopulationTable::<f32>::init(model.config.d, 6);
    let stage = TrainConfig {
        learning_rate: 1e-3,
        embedding_learning_rate: Some(1e-2),
        batch_size: 64,
        max_steps: 200,
        eval_every: 50,
        eval_examples: 128,
        ..TrainConfig::default()
    };
    pretrain_population(&mut model, &mut population, &splits, &stage).map_err(err)?;
    let mut individual = init_individual_from_population(&population, &protos).map_err(err)?;
    enrich(&mut model, &population, &mut individual, &splits, &protos, &TrainConfig { max_steps: 400, ..stage.clone() })
        .map_err(err)?;
    // the matcher learns from the prototypes' games
    let text = corpus_pgn(&players, &SynthConfig { games_per_player: 30, ..SynthConfig::default() });
    let games: Vec<PlayerDataset> = datasets_from_pgn(&text).map_err(err)?.into_iter().filter(|d| d.player_id.starts_with("style-")).collect();
    let game_splits: Vec<TrainSplit<'_>> = games.iter().map(|d| d.train()).collect();
    let pc = PmnConfig {
        heads: 4,
        d_h: 16,
        d_ffn: 128,
        steps: 400,
        eval_every: 100,
        learning_rate: 3e-4,
        ..PmnConfig::default()
    };
    let (pmn, report) = train_pmn(&model.backbone, &game_splits, &protos, &pc).map_err(err)?;
    let matcher_acc = report.epochs.last().map_or(f64::NAN, |e| e.validation_accuracy);

    let mut lines = Vec::new();
    let mut failed = false;
    for seed in 0..3u64 {
        let source = &players[seed as usize];
        let clone = source.noisy_clone("clone", 0.1);
        let text = corpus_pgn(&[clone.clone()], &SynthConfig { games_per_player: 4, seed: 100 + seed, ..SynthConfig::default() });
        let history = datasets_from_pgn(&text).map_err(err)?.into_iter().find(|d| d.player_id == "clone").ok_or("clone has no games")?;
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let test = answers(&clone, &random_positions(256, &mut rng), &mut rng);
        let test = TestSplit { player_id: "clone", rating: 1550, examples: &test };
        let proto = prototype_init("clone", &move_pairs(history.all_examples()).map_err(err)?, &pmn, &individual, 2, 0.5).map_err(err)?;
        let strength = strength_init("clone", 1550, &population);
        let loss = |e: &UnseenEmbedding<f32>| -> maia4all::Result<f64> {
            let r = evaluate(&model, &population, &[test], |_| Ok(e.vector.clone()), false, EvalMeta::default())?;
            Ok(r.overall.perplexity.ln())
        };
        let (lp, ls) = (loss(&proto).map_err(err)?, loss(&strength).map_err(err)?);
        failed |= lp > ls;
        let top = proto.sources.as_ref().and_then(|w| w.first()).map_or(usize::MAX, |w| w.0);
        lines.push(format!("clone of {} (matched row {top}): {lp:.4} vs {ls:.4}", source.id));
    }
    ensure!(!failed, "prototype init lost to strength init (matcher validation {matcher_acc:.3}): {}", lines.join("; "));
    Ok(format!("prototype vs strength test loss: {}", lines.join("; ")))
}

// ---------------------------------------------------------------- 10

fn c10_metrics() -> Outcome {
    let model = Model::init(ModelConfig::tiny(1858), 6).map_err(err)?;
    let pop = PopulationTable::<f32>::init(model.config.d, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let base = contradiction_fixture(40, 5).map_err(err)?;
    let mut examples: Vec<TrainingExample> = Vec::new();
    for i in 0..6000 {
        let mut e = base.examples[0][i % 40].clone();
        e.target = rng.gen_range(0..1858);
        e.opponent_rating = rng.gen_range(900..2300);
        examples.push(e);
    }
    let (small, large) = examples.split_at(40);
    let e_a = pop.for_rating(1550).to_vec();

    let test = TestSplit { player_id: "contra-a", rating: 1550, examples: small };
    let report = evaluate(&model, &pop, &[test], |_| Ok(e_a.clone()), false, EvalMeta::default()).map_err(err)?;
    let mut nll = 0.0;
    for e in small {
        let x = encode_position(&e.position).map_err(err)?.to_tensor::<f32>();
        let logits: Vec<f64> = model.forward(&x, &e_a, pop.for_rating(e.opponent_rating)).map_err(err)?.iter().map(|&v| v as f64).collect();
        nll += nll_oracle(&logits, e.target);
    }
    let p = &report.players[0];
    let ppl = (nll / small.len() as f64).exp();
    ensure!((p.perplexity - (p.nll / p.n_positions as f64).exp()).abs() <= 1e-9 * p.perplexity, "perplexity is not exp(mean nll)");
    ensure!((p.perplexity - ppl).abs() <= 1e-6 * ppl, "reported perplexity {} vs oracle {ppl}", p.perplexity);

    let uniform = model.cast::<f64>().zeros_like();
    let pop64 = PopulationTable::<f64>::init(model.config.d, 7);
    let e64 = pop64.for_rating(1550).to_vec();
    let test = TestSplit { player_id: "contra-a", rating: 1550, examples: large };
    let report = evaluate(&uniform, &pop64, &[test], |_| Ok(e64.clone()), false, EvalMeta::default()).map_err(err)?;
    let n = large.len() as f64;
    let q = 1.0 / 1858.0;
    let half = 3.29 * (q * (1.0 - q) / n).sqrt() + 1.0 / n;
    let acc = report.overall.accuracy;
    ensure!((report.overall.perplexity - 1858.0).abs() <= 1e-6, "uniform perplexity {}", report.overall.perplexity);
    ensure!((acc - q).abs() <= half, "uniform accuracy {acc} outside {q:.5} +- {half:.5}");

    let a = mk_player("a", 10, 4, 10.0);
    let b = mk_player("b", 30, 6, 45.0);
    let pos = EvalReport::from_players(vec![a.clone(), b.clone()], false, EvalMeta::default()).overall;
    let ply = EvalReport::from_players(vec![a, b], true, EvalMeta::default()).overall;
    ensure!((pos.perplexity - (55.0f64 / 40.0).exp()).abs() < 1e-9 && (pos.accuracy - 0.25).abs() < 1e-12, "position-weighted aggregate");
    ensure!((ply.perplexity - 1.25f64.exp()).abs() < 1e-9 && (ply.accuracy - 0.3).abs() < 1e-12, "player-weighted aggregate");
    Ok(format!("perplexity identities hold; uniform model: perplexity {:.9}, accuracy {acc:.5} over {n} positions", report.overall.perplexity))
}

fn mk_player(id: &str, n: usize, correct: usize, nll: f64) -> PlayerEval {
    PlayerEval {
        player_id: id.into(),
        rating: 1500,
        category: maia4all::eval::skill_category(1500),
        n_positions: n,
        correct,
        nll,
        accuracy: correct as f64 / n as f64,
        perplexity: (nll / n as f64).exp(),
    }
}

// ---------------------------------------------------------------- 11

const PIPELINE_CONFIG: &str = r#"seed = 3

[paths]
pgn = ["corpus.pgn"]
output = "run"

[model]
k_conv = 1
k_att = 1
c_mid = 16
c_patch = 4
d = 8
d_h = 8
heads = 2
d_att = 16
d_ffn = 32

[pretrain]
learning_rate = 1e-3
batch_size = 32
max_steps = 40
eval_every = 20
eval_examples = 64

[enrich]
learning_rate = 1e-3
batch_size = 32
max_steps = 40
eval_every = 20
eval_examples = 64

[pmn]
layers = 1
heads = 2
d_h = 8
d_ffn = 32
window = 16
batch_size = 16
steps = 40
eval_every = 20
max_moves = 256

[select]
n = 1
min_history = 100

[democratize]
learning_rate = 1e-2
batch_size = 16
max_steps = 20
eval_every = 5

[eval]
m = [0, 50]
t = 64
players = ["unseen-00", "unseen-01"]
"#;

fn run_pipeline(dir: &Path, pgn: &str) -> maia4all::Result<BTreeMap<String, Vec<u8>>> {
    fs::write(dir.join("corpus.pgn"), pgn)?;
    fs::write(dir.join("config.toml"), PIPELINE_CONFIG)?;
    let cfg = PipelineConfig::load(Some(&dir.join("config.toml")), &[])?;
    let p = Pipeline::new(cfg, false)?;
    let summary = p.run_all()?;
    if summary.training_steps() == 0 {
        return Err(maia4all::Error::Data("pipeline trained nothing".into()));
    }
    file_digests(&dir.join("run"))
}

fn c11_determinism() -> Outcome {
    let corpus = pipeline_corpus(11, 2, 0.1, 6, &SynthConfig { games_per_player: 8, seed: 3, ..SynthConfig::default() });
    let a = tempfile::tempdir().map_err(err)?;
    let b = tempfile::tempdir().map_err(err)?;
    let fa = run_pipeline(a.path(), &corpus.pgn).map_err(err)?;
    let fb = run_pipeline(b.path(), &corpus.pgn).map_err(err)?;
    let names: Vec<&String> = fa.keys().collect();
    ensure!(names == fb.keys().collect::<Vec<_>>(), "the two runs wrote different files");
    for (k, v) in &fa {
        ensure!(fb[k] == *v, "{k} differs between runs");
    }
    let ckpts = fa.keys().filter(|k| k.starts_with("checkpoints/")).count();
    let reports = fa.keys().filter(|k| k.starts_with("reports/")).count();
    ensure!(ckpts > 0 && reports > 0, "missing outputs: {ckpts} checkpoint files, {reports} reports");
    Ok(format!("{} files identical ({ckpts} checkpoint files, {reports} reports)", fa.len()))
}

// ---------------------------------------------------------------- 12

fn c12_freeze_vs_full() -> Outcome {
    const BASE: usize = 1000;
    const CHUNK: usize = 500;
    const ADAPT: usize = 100;
    let fixture = contradiction_fixture(BASE + 3 * CHUNK, 40).map_err(err)?;
    let ratings: HashMap<String, u32> = fixture.players.iter().map(|p| (p.id.clone(), p.rating)).collect();
    let mut bins = vec![Vec::new(); NUM_BINS];
    bins[rating_to_bin(1550)] = fixture.players.iter().map(|p| p.id.clone()).collect();
    let protos = PrototypeSet::from_bins(bins, &ratings).map_err(err)?;
    let splits: Vec<TrainSplit<'_>> = (0..2)
        .map(|k| TrainSplit { player_id: &fixture.players[k].id, rating: 1550, examples: &fixture.examples[k][..BASE] })
        .collect();
    let mut model = Model::init(acceptance_config(), 12).map_err(err)?;
    let mut population = PopulationTable::<f32>::init(model.config.d, 13);
    let stage = TrainConfig {
        learning_rate: 1e-3,
        embedding_learning_rate: Some(1e-2),
        batch_size: 64,
        max_steps: 200,
        eval_every: 50,
        eval_examples: 128,
        ..TrainConfig::default()
    };
    pretrain_population(&mut model, &mut population, &splits, &stage).map_err(err)?;
    let mut individual = init_individual_from_population(&population, &protos).map_err(err)?;
    enrich(&mut model, &population, &mut individual, &splits, &protos, &TrainConfig { max_steps: 400, ..stage.clone() }).map_err(err)?;

    let mut wins = 0;
    let mut lines = Vec::new();
    for seed in 0..3u64 {
        let start = BASE + seed as usize * CHUNK;
        let ex: Vec<TrainingExample> = fixture.examples[1][start..start + CHUNK]
            .iter()
            .map(|e| TrainingExample { player_id: "newcomer".into(), ..e.clone() })
            .collect();
        let (train, test) = ex.split_at(ADAPT);
        let e_u = strength_init::<f32>("newcomer", 1550, &population);
        let cfg = TrainConfig { max_steps: 150, eval_every: 25, seed, ..stage.clone() };
        let split = TrainSplit { player_id: "newcomer", rating: 1550, examples: train };
        let frozen = democratize(&model, &population, &e_u, split, &cfg).map_err(err)?;
        let (tuned, full) = democratize_full(&model, &population, &e_u, split, &cfg).map_err(err)?;
        let lf = unseen_loss(&model, &population, &frozen.embedding.vector, test).map_err(err)?;
        let lu = unseen_loss(&tuned, &population, &full.embedding.vector, test).map_err(err)?;
        wins += usize::from(lf <= lu);
        lines.push(format!("seed {seed}: frozen {lf:.4} full {lu:.4}"));
    }
    ensure!(wins >= 2, "frozen won {wins}/3 ({})", lines.join("; "));
    Ok(format!("frozen <= full in {wins}/3 ({})", lines.join("; ")))
}

// ----------------------------------------------------------------

fn main() {
    let mut shared = Shared::default();
    type Check<'a> = Box<dyn FnMut(&mut Shared) -> Outcome + 'a>;
    let criteria: Vec<(usize, &str, Duration, bool, Check<'_>)> = vec![
        (1, "encoding suite", Duration::from_secs(30), true, Box::new(|_| c1_encoding())),
        (2, "vocabulary oracle", Duration::from_secs(5), true, Box::new(|_| c2_vocabulary())),
        (3, "filter golden fixture", Duration::from_secs(5), true, Box::new(|_| c3_filter())),
        (4, "gradient check", Duration::from_secs(120), true, Box::new(|_| c4_gradients())),
        (5, "loss normalization", Duration::from_secs(10), true, Box::new(|_| c5_normalization())),
        (6, "individualization oracle", Duration::from_secs(600), true, Box::new(c6_individualization)),
        (7, "frozen backbone guarantee", Duration::from_secs(300), true, Box::new(c7_frozen)),
        (8, "initialization ordering", Duration::from_secs(600), true, Box::new(|_| c8_init_order())),
        (9, "matcher oracle", Duration::from_secs(600), true, Box::new(c9_pmn)),
        (10, "metric identities", Duration::from_secs(60), true, Box::new(|_| c10_metrics())),
        (11, "pipeline determinism", Duration::from_secs(1800), true, Box::new(|_| c11_determinism())),
        (12, "freeze vs full fine-tune", Duration::from_secs(900), false, Box::new(|_| c12_freeze_vs_full())),
    ];
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failures = 0;
    for (n, name, budget, gating, mut check) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let t = Instant::now();
        let result = check(&mut shared);
        let took = t.elapsed();
        let result = match result {
            Ok(d) if took > budget => Err(format!("{d}; exceeded the {}s budget", budget.as_secs())),
            r => r,
        };
        let (tag, detail) = match &result {
            Ok(d) => ("PASS", d.clone()),
            Err(d) if !gating => ("SOFT-FAIL", d.clone()),
            Err(d) => ("FAIL", d.clone()),
        };
        if tag == "FAIL" {
            failures += 1;
        }
        println!("{tag} [{n}] {name}: {detail} ({:.1}s)", took.as_secs_f64());
    }
    if failures > 0 {
        println!("{failures} gating criteria failed");
        std::process::exit(1);
    }
}
