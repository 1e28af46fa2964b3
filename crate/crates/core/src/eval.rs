//! Move-matching accuracy, perplexity, skill-category breakdowns,
//! initialization-only evaluation, stylometry and prototype studies.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::chess::{encode_position, legal_moves, to_san, vocabulary, Color, MoveLabel, Position};
use crate::embeddings::{prototype_init, strength_init, IndividualTable, PopulationTable, UnseenEmbedding};
use crate::error::{Error, Result};
use crate::net::ModelState;
use crate::nn::tensor::{argmax, log_softmax_at, softmax};
use crate::pgn::{SelectionStrategy, TestSplit, TrainSplit};
use crate::pmn::{move_pairs, Pmn};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SkillCategory {
    Skilled,
    Advanced,
    Master,
}

impl SkillCategory {
    pub const ALL: [SkillCategory; 3] = [SkillCategory::Skilled, SkillCategory::Advanced, SkillCategory::Master];

    pub fn as_str(self) -> &'static str {
        match self {
            SkillCategory::Skilled => "Skilled",
            SkillCategory::Advanced => "Advanced",
            SkillCategory::Master => "Master",
        }
    }
}

/// `<= 1600` Skilled, `(1600, 2000]` Advanced, `> 2000` Master.
pub fn skill_category(rating: u32) -> SkillCategory {
    match rating {
        0..=1600 => SkillCategory::Skilled,
        1601..=2000 => SkillCategory::Advanced,
        _ => SkillCategory::Master,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlayerEval {
    pub player_id: String,
    pub rating: u32,
    pub category: SkillCategory,
    pub n_positions: usize,
    pub correct: usize,
    /// Sum of negative log-likelihoods of the played moves.
    pub nll: f64,
    pub accuracy: f64,
    pub perplexity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n_players: usize,
    pub n_positions: usize,
    pub accuracy: f64,
    pub perplexity: f64,
}

impl Aggregate {
    fn of(players: &[&PlayerEval], player_weighted: bool) -> Aggregate {
        let n_positions: usize = players.iter().map(|p| p.n_positions).sum();
        let (accuracy, perplexity) = if players.is_empty() || n_positions == 0 {
            (f64::NAN, f64::NAN)
        } else if player_weighted {
            let n = players.len() as f64;
            let acc = players.iter().map(|p| p.accuracy).sum::<f64>() / n;
            let nll = players.iter().map(|p| p.nll / p.n_positions.max(1) as f64).sum::<f64>() / n;
            (acc, nll.exp())
        } else {
            let correct: usize = players.iter().map(|p| p.correct).sum();
            let nll: f64 = players.iter().map(|p| p.nll).sum();
            (correct as f64 / n_positions as f64, (nll / n_positions as f64).exp())
        };
        Aggregate {
            n_players: players.len(),
            n_positions,
            accuracy,
            perplexity,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalMeta {
    /// Adaptation positions per player, when relevant.
    pub m: Option<usize>,
    pub init_mode: String,
    pub phi_checksum: String,
    #[serde(default)]
    pub extra: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub players: Vec<PlayerEval>,
    pub overall: Aggregate,
    pub categories: BTreeMap<SkillCategory, Aggregate>,
    pub player_weighted: bool,
    pub meta: EvalMeta,
}

impl EvalReport {
    pub fn from_players(players: Vec<PlayerEval>, player_weighted: bool, meta: EvalMeta) -> EvalReport {
        let all: Vec<&PlayerEval> = players.iter().collect();
        let overall = Aggregate::of(&all, player_weighted);
        let categories = SkillCategory::ALL
            .iter()
            .filter_map(|&c| {
                let group: Vec<&PlayerEval> = players.iter().filter(|p| p.category == c).collect();
                (!group.is_empty()).then(|| (c, Aggregate::of(&group, player_weighted)))
            })
            .collect();
        EvalReport {
            players,
            overall,
            categories,
            player_weighted,
            meta,
        }
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }

    /// One row per player followed by `overall` and per-category rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["row", "player_id", "rating", "category", "n_positions", "accuracy", "perplexity"])
            .map_err(csv_err)?;
        for p in &self.players {
            w.write_record([
                "player",
                &p.player_id,
                &p.rating.to_string(),
                p.category.as_str(),
                &p.n_positions.to_string(),
                &p.accuracy.to_string(),
                &p.perplexity.to_string(),
            ])
            .map_err(csv_err)?;
        }
        let rows = std::iter::once(("overall", "", &self.overall)).chain(self.categories.iter().map(|(c, a)| ("category", c.as_str(), a)));
        for (kind, cat, a) in rows {
            w.write_record([kind, "", "", cat, &a.n_positions.to_string(), &a.accuracy.to_string(), &a.perplexity.to_string()])
                .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Data(format!("csv: {e}"))
}

/// Scores each test split with the active-player embedding given by
/// `resolve(player_id)`; opponents use their population bin.
pub fn evaluate<T, F>(
    model: &ModelState<T>,
    population: &PopulationTable<T>,
    tests: &[TestSplit<'_>],
    resolve: F,
    player_weighted: bool,
    meta: EvalMeta,
) -> Result<EvalReport>
where
    T: Scalar,
    F: Fn(&str) -> Result<Vec<T>>,
{
    let mut players = Vec::with_capacity(tests.len());
    for t in tests {
        let e_a = resolve(t.player_id).map_err(|e| Error::Data(format!("no embedding for player '{}': {e}", t.player_id)))?;
        let (mut correct, mut nll) = (0usize, 0.0f64);
        for ex in t.examples {
            let x = encode_position(&ex.position)?.to_tensor::<T>();
            let logits = model.forward(&x, &e_a, population.for_rating(ex.opponent_rating))?;
            nll -= log_softmax_at(&logits, ex.target).f64();
            correct += usize::from(argmax(&logits) == ex.target);
        }
        let n = t.examples.len();
        players.push(PlayerEval {
            player_id: t.player_id.to_string(),
            rating: t.rating,
            category: skill_category(t.rating),
            n_positions: n,
            correct,
            nll,
            accuracy: if n == 0 { f64::NAN } else { correct as f64 / n as f64 },
            perplexity: if n == 0 { f64::NAN } else { (nll / n as f64).exp() },
        });
    }
    let mut meta = meta;
    if meta.phi_checksum.is_empty() {
        meta.phi_checksum = model.parameter_checksum();
    }
    Ok(EvalReport::from_players(players, player_weighted, meta))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    Strength,
    Prototype,
}

impl InitMode {
    pub fn as_str(self) -> &'static str {
        match self {
            InitMode::Strength => "strength",
            InitMode::Prototype => "prototype",
        }
    }
}

impl std::str::FromStr for InitMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strength" => Ok(InitMode::Strength),
            "prototype" => Ok(InitMode::Prototype),
            other => Err(Error::Config(format!("unknown init mode '{other}' (expected strength or prototype)"))),
        }
    }
}

/// Matching inputs for prototype-informed initialization.
pub struct PrototypeMatcher<'a, T> {
    pub pmn: &'a Pmn<T>,
    pub table: &'a IndividualTable<T>,
    pub k: usize,
    pub temperature: f64,
}

/// Initial embedding for one unseen player from its training split.
pub fn initial_embedding<T: Scalar>(
    mode: InitMode,
    train: &TrainSplit<'_>,
    population: &PopulationTable<T>,
    matcher: Option<&PrototypeMatcher<'_, T>>,
) -> Result<UnseenEmbedding<T>> {
    match mode {
        InitMode::Strength => Ok(strength_init(train.player_id, train.rating, population)),
        InitMode::Prototype => {
            let m = matcher.ok_or_else(|| Error::Config("prototype initialization needs a trained matcher".into()))?;
            let history: Vec<(Position, Position)> = move_pairs(train.examples)?;
            prototype_init(train.player_id, &history, m.pmn, m.table, m.k, m.temperature)
        }
    }
}

/// Evaluates initial embeddings without any adaptation. `players` pairs each
/// player's training split (used only for matching) with its test split.
pub fn eval_init_only<T: Scalar>(
    model: &ModelState<T>,
    population: &PopulationTable<T>,
    players: &[(TrainSplit<'_>, TestSplit<'_>)],
    mode: InitMode,
    matcher: Option<&PrototypeMatcher<'_, T>>,
    player_weighted: bool,
) -> Result<(EvalReport, Vec<UnseenEmbedding<T>>)> {
    let mut embeddings = BTreeMap::new();
    for (train, test) in players {
        if train.player_id != test.player_id {
            return Err(Error::Data(format!("split mismatch: '{}' vs '{}'", train.player_id, test.player_id)));
        }
        embeddings.insert(train.player_id.to_string(), initial_embedding(mode, train, population, matcher)?);
    }
    let tests: Vec<TestSplit<'_>> = players.iter().map(|(_, t)| *t).collect();
    let m = players.first().map(|(t, _)| t.examples.len());
    let meta = EvalMeta {
        m,
        init_mode: mode.as_str().to_string(),
        ..EvalMeta::default()
    };
    let report = evaluate(
        model,
        population,
        &tests,
        |id| {
            embeddings
                .get(id)
                .map(|e| e.vector.clone())
                .ok_or_else(|| Error::Data(format!("player '{id}' was not initialized")))
        },
        player_weighted,
        meta,
    )?;
    Ok((report, embeddings.into_values().collect()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MovePrediction {
    pub uci: String,
    /// `None` when the label is not a legal move in the position.
    pub san: Option<String>,
    pub probability: f64,
}

/// The `n` most probable vocabulary entries for the side to move, unmasked.
/// Black-to-move positions are flipped for the network and the moves
/// flipped back.
pub fn predict_top_moves<T: Scalar>(model: &ModelState<T>, pos: &Position, e_a: &[T], e_o: &[T], n: usize) -> Result<Vec<MovePrediction>> {
    let black = pos.side_to_move() == Color::Black;
    let view = if black { pos.flip() } else { pos.clone() };
    let probs = softmax(&model.position_logits(&view, e_a, e_o)?);
    let vocab = vocabulary();
    let legal: Vec<MoveLabel> = legal_moves(pos);
    let mut ranked: Vec<(usize, f64)> = probs.iter().map(|p| p.f64()).enumerate().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked
        .into_iter()
        .take(n)
        .map(|(i, p)| {
            let label = vocab
                .index_to_move(i)
                .ok_or_else(|| Error::Contract(format!("policy index {i} outside the vocabulary")))?;
            let m = if black { label.flip() } else { label };
            Ok(MovePrediction {
                uci: m.to_string(),
                san: legal.contains(&m).then(|| to_san(pos, m)),
                probability: p,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StylometryResult {
    pub accuracy: f64,
    pub trials: usize,
    pub shots: usize,
}

/// Identification accuracy over held-out histories. Each trial averages the
/// logits of `shots` consecutive histories of the same player.
pub fn eval_stylometry<T: Scalar>(pmn: &Pmn<T>, histories: &[(String, Vec<Vec<Vec<T>>>)], shots: usize) -> Result<StylometryResult> {
    if shots == 0 {
        return Err(Error::Config("shots must be at least 1".into()));
    }
    let (mut right, mut trials) = (0usize, 0usize);
    for (id, hs) in histories {
        let truth = pmn
            .prototype_ids
            .iter()
            .position(|p| p == id)
            .ok_or_else(|| Error::Data(format!("'{id}' is not one of the matcher's prototypes")))?;
        for group in hs.chunks_exact(shots) {
            let mut avg = vec![0.0f64; pmn.num_classes()];
            for h in group {
                for (a, l) in avg.iter_mut().zip(pmn.classify(h)?) {
                    *a += l.f64();
                }
            }
            right += usize::from(argmax(&avg) == truth);
            trials += 1;
        }
    }
    Ok(StylometryResult {
        accuracy: if trials == 0 { f64::NAN } else { right as f64 / trials as f64 },
        trials,
        shots,
    })
}

/// One grid cell's results, produced by the caller's pipeline closure.
pub struct StudyCell {
    pub reports: Vec<EvalReport>,
    pub pmn_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub strategy: String,
    pub n: usize,
    pub prototypes: usize,
    pub m: Option<usize>,
    pub init_mode: String,
    pub accuracy: f64,
    pub perplexity: f64,
    pub pmn_accuracy: Option<f64>,
}

/// Runs `cell(strategy, n)` over the grid. The uniform strategy is always
/// included.
pub fn run_prototype_study<F>(strategies: &[SelectionStrategy], ns: &[usize], mut cell: F) -> Result<Vec<StudyRow>>
where
    F: FnMut(SelectionStrategy, usize) -> Result<StudyCell>,
{
    let mut grid: Vec<SelectionStrategy> = Vec::new();
    if !strategies.contains(&SelectionStrategy::Uniform) {
        grid.push(SelectionStrategy::Uniform);
    }
    grid.extend_from_slice(strategies);
    let mut ns = ns.to_vec();
    ns.sort_unstable();
    ns.dedup();
    let mut rows = Vec::new();
    for &s in &grid {
        for &n in &ns {
            let c = cell(s, n)?;
            for r in c.reports {
                rows.push(StudyRow {
                    strategy: s.as_str().to_string(),
                    n,
                    prototypes: 11 * n,
                    m: r.meta.m,
                    init_mode: r.meta.init_mode.clone(),
                    accuracy: r.overall.accuracy,
                    perplexity: r.overall.perplexity,
                    pmn_accuracy: c.pmn_accuracy,
                });
            }
        }
    }
    Ok(rows)
}

pub fn write_study_csv<W: Write>(rows: &[StudyRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn categories() {
        assert_eq!(skill_category(1600), SkillCategory::Skilled);
        assert_eq!(skill_category(1601), SkillCategory::Advanced);
        assert_eq!(skill_category(2000), SkillCategory::Advanced);
        assert_eq!(skill_category(2001), SkillCategory::Master);
        assert_eq!(skill_category(0), SkillCategory::Skilled);
    }

    fn pe(id: &str, rating: u32, n: usize, correct: usize, nll: f64) -> PlayerEval {
        PlayerEval {
            player_id: id.into(),
            rating,
            category: skill_category(rating),
            n_positions: n,
            correct,
            nll,
            accuracy: correct as f64 / n as f64,
            perplexity: (nll / n as f64).exp(),
        }
    }

    #[test]
    fn aggregates_are_position_weighted() {
        let r = EvalReport::from_players(
            vec![pe("a", 1500, 10, 5, 10.0), pe("b", 1800, 30, 30, 3.0), pe("c", 2100, 60, 0, 120.0)],
            false,
            EvalMeta::default(),
        );
        assert!((r.overall.accuracy - 35.0 / 100.0).abs() < 1e-15);
        assert!((r.overall.perplexity - (133.0f64 / 100.0).exp()).abs() < 1e-12);
        let recombined: f64 = r.categories.values().map(|a| a.accuracy * a.n_positions as f64).sum::<f64>() / 100.0;
        assert!((recombined - r.overall.accuracy).abs() < 1e-15);
        let pw = EvalReport::from_players(r.players.clone(), true, EvalMeta::default());
        assert!((pw.overall.accuracy - (0.5 + 1.0 + 0.0) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn csv_has_player_and_aggregate_rows() {
        let r = EvalReport::from_players(vec![pe("a,b", 1500, 2, 1, 1.0)], false, EvalMeta::default());
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.contains("\"a,b\""));
    }

    #[test]
    fn study_always_includes_uniform() {
        let rows = run_prototype_study(&[SelectionStrategy::LowOnly], &[2, 1], |_, _| {
            Ok(StudyCell {
                reports: vec![EvalReport::from_players(vec![pe("a", 1500, 2, 1, 1.0)], false, EvalMeta::default())],
                pmn_accuracy: Some(1.0),
            })
        })
        .unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0].strategy, "uniform");
        assert_eq!(rows[0].n, 1);
        assert_eq!(rows[1].prototypes, 22);
    }
}
