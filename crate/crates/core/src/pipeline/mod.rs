//! Resumable end-to-end runs over one output directory.
//!
//! Each stage writes a record to `stages/<name>.json` holding a key derived
//! from the stage's config section and its upstream keys. A stage whose
//! record matches and whose outputs exist is skipped; a mismatching record
//! aborts with [`Error::ResumeMismatch`] unless forced.

mod config;

pub use config::{
    apply_override, DemocratizeConfig, EvalConfig, InitConfig, PathsConfig, PipelineConfig, SelectConfig, Variant, OUTPUT_ENV,
};

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::embeddings::{
    init_individual_from_population, read_embeddings, strength_init, write_embeddings, EmbeddingRecord, IndividualTable,
    PopulationTable, UnseenEmbedding,
};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate, initial_embedding, eval_stylometry, run_prototype_study, write_study_csv, EvalMeta, EvalReport, InitMode,
    PlayerEval, PrototypeMatcher, StudyCell, StudyRow, StylometryResult,
};
use crate::net::{load_policy, save_policy, ModelState};
use crate::pgn::{
    list_manifests, parse_pgn_stream, rating_to_bin, read_dataset, select_prototypes, sort_chronologically, write_dataset,
    DatasetBuilder, DatasetManifest, IngestStats, PlayerDataset, PlayerStats, PrototypeSet, SelectionStrategy, TrainSplit,
    NUM_BINS,
};
use crate::pmn::{extract_move_features, move_pair, train_pmn, Pmn, PmnReport};
use crate::train::{democratize, democratize_full, enrich, pretrain_population};

type M = ModelState<f32>;

const POPULATION: &str = "embeddings.population";
const INDIVIDUAL: &str = "embeddings.individual";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stage {
    Ingest,
    /// Fixes the unseen evaluation players.
    Holdout,
    Select,
    Pretrain,
    Enrich,
    TrainPmn,
    Init,
    Democratize,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Ingest,
        Stage::Holdout,
        Stage::Select,
        Stage::Pretrain,
        Stage::Enrich,
        Stage::TrainPmn,
        Stage::Init,
        Stage::Democratize,
        Stage::Eval,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Holdout => "holdout",
            Stage::Select => "select",
            Stage::Pretrain => "pretrain",
            Stage::Enrich => "enrich",
            Stage::TrainPmn => "train-pmn",
            Stage::Init => "init",
            Stage::Democratize => "democratize",
            Stage::Eval => "eval",
        }
    }

    /// Stages whose outputs do not depend on the prototype choice.
    fn shared(self) -> bool {
        matches!(self, Stage::Ingest | Stage::Holdout | Stage::Pretrain)
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage '{s}'")))
    }
}

/// Stage record persisted under `stages/`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub key: String,
    pub upstream: BTreeMap<String, String>,
    pub config: Value,
    /// Paths relative to the directory holding `stages/`.
    pub outputs: Vec<String>,
    pub training_steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageOutcome {
    pub stage: String,
    /// `ran`, `skipped` or `not-needed`.
    pub status: String,
    pub training_steps: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub stages: Vec<StageOutcome>,
    pub reports: Vec<PathBuf>,
}

impl Summary {
    pub fn training_steps(&self) -> usize {
        self.stages.iter().map(|s| s.training_steps).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Holdout {
    players: Vec<String>,
}

/// Guards an output directory against concurrent runs.
struct Lock(PathBuf);

impl Lock {
    fn acquire(root: &Path) -> Result<Lock> {
        fs::create_dir_all(root)?;
        let path = root.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Lock(path)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Config(format!(
                "{} is in use by another run (delete {} if that run is gone)",
                root.display(),
                path.display()
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for Lock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

struct Produced {
    outputs: Vec<String>,
    training_steps: usize,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_json<V: Serialize>(path: &Path, v: &V) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(v)? + "\n")?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn remove_path(path: &Path) -> Result<()> {
    if path.is_dir() {
        fs::remove_dir_all(path)?;
    } else if path.exists() {
        fs::remove_file(path)?;
    }
    Ok(())
}

/// Orchestrates the stages for one resolved config.
pub struct Pipeline {
    pub config: PipelineConfig,
    pub root: PathBuf,
    /// Directory that holds the shared stages, when different from `root`.
    pub shared: Option<PathBuf>,
    /// Re-run stages whose records do not match instead of failing.
    pub force: bool,
}

impl Pipeline {
    pub fn new(config: PipelineConfig, force: bool) -> Result<Pipeline> {
        if config.paths.output.as_os_str().is_empty() {
            return Err(Error::Config(format!("paths.output is not set (use the config file, an override or {OUTPUT_ENV})")));
        }
        Ok(Pipeline {
            root: config.paths.output.clone(),
            config,
            shared: None,
            force,
        })
    }

    fn base(&self, stage: Stage) -> &Path {
        match &self.shared {
            Some(s) if stage.shared() => s,
            _ => &self.root,
        }
    }

    fn shared_root(&self) -> &Path {
        self.shared.as_deref().unwrap_or(&self.root)
    }

    pub fn datasets_dir(&self) -> PathBuf {
        self.shared_root().join("datasets")
    }

    pub fn checkpoint_dir(&self, stage: Stage) -> PathBuf {
        let name = match stage {
            Stage::TrainPmn => "pmn",
            s => s.as_str(),
        };
        self.base(stage).join("checkpoints").join(name)
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }

    fn mode(&self) -> &'static str {
        self.config.init.mode.as_str()
    }

    fn variant(&self) -> &'static str {
        self.config.democratize.variant.as_str()
    }

    /// Record names carry the init mode and variant so that runs differing
    /// only in those keep separate outputs side by side.
    fn record_name(&self, stage: Stage) -> String {
        match stage {
            Stage::Init => format!("init-{}", self.mode()),
            Stage::Democratize | Stage::Eval => format!("{}-{}-{}", stage.as_str(), self.mode(), self.variant()),
            s => s.as_str().to_string(),
        }
    }

    fn record_path(&self, stage: Stage) -> PathBuf {
        self.base(stage).join("stages").join(format!("{}.json", self.record_name(stage)))
    }

    pub fn init_embeddings_path(&self, m: usize) -> PathBuf {
        self.root.join("embeddings").join(format!("init-{}-M{m}.jsonl", self.mode()))
    }

    pub fn adapted_embeddings_path(&self, m: usize) -> PathBuf {
        self.root.join("embeddings").join(format!("adapted-{}-{}-M{m}.jsonl", self.mode(), self.variant()))
    }

    fn full_players_path(&self, m: usize) -> PathBuf {
        self.reports_dir().join(format!("full-players-{}-M{m}.json", self.mode()))
    }

    /// Paths of the init-only and adapted evaluation reports for `m`.
    pub fn eval_report_paths(&self, m: usize) -> (PathBuf, PathBuf) {
        let r = self.reports_dir();
        (
            r.join(format!("eval-init-{}-M{m}.json", self.mode())),
            r.join(format!("eval-{}-{}-M{m}.json", self.mode(), self.variant())),
        )
    }

    fn upstream(&self, stage: Stage) -> Vec<Stage> {
        match stage {
            Stage::Ingest => vec![],
            Stage::Holdout => vec![Stage::Ingest],
            Stage::Select | Stage::Pretrain => vec![Stage::Ingest, Stage::Holdout],
            Stage::Enrich => vec![Stage::Pretrain, Stage::Select],
            Stage::TrainPmn => vec![Stage::Enrich],
            Stage::Init => match self.config.init.mode {
                InitMode::Strength => vec![Stage::Enrich],
                InitMode::Prototype => vec![Stage::Enrich, Stage::TrainPmn],
            },
            Stage::Democratize => vec![Stage::Init],
            Stage::Eval => vec![Stage::Democratize],
        }
    }

    fn needed(&self, stage: Stage) -> bool {
        stage != Stage::TrainPmn || self.config.init.mode == InitMode::Prototype
    }

    fn section(&self, stage: Stage) -> Result<Value> {
        let c = &self.config;
        Ok(match stage {
            Stage::Ingest => {
                let mut hashes = Vec::new();
                for p in &c.paths.pgn {
                    let bytes = fs::read(p).map_err(|e| Error::Data(format!("cannot read PGN input {}: {e}", p.display())))?;
                    hashes.push(sha256_hex(&bytes));
                }
                json!({"filter": c.filter, "pgn_sha256": hashes})
            }
            Stage::Holdout => json!({
                "players": c.eval.players,
                "max_players": c.eval.max_players,
                "min_examples": c.eval.min_examples,
                "min_history": c.select.min_history,
            }),
            Stage::Select => json!({"select": c.select}),
            Stage::Pretrain => json!({"seed": c.seed, "model": c.model, "pretrain": c.pretrain}),
            Stage::Enrich => json!({"seed": c.seed, "enrich": c.enrich}),
            Stage::TrainPmn => json!({"pmn": c.pmn}),
            Stage::Init => json!({"init": c.init, "m": c.eval.m, "t": c.eval.t}),
            Stage::Democratize => json!({"democratize": c.democratize, "m": c.eval.m, "t": c.eval.t}),
            Stage::Eval => json!({"player_weighted": c.eval.player_weighted, "m": c.eval.m, "t": c.eval.t}),
        })
    }


    fn read_record(&self, stage: Stage) -> Result<Option<StageRecord>> {
        let path = self.record_path(stage);
        if !path.exists() {
            return Ok(None);
        }
        Ok(Some(serde_json::from_slice(&fs::read(&path)?)?))
    }

    fn stage_key(&self, stage: Stage) -> Result<(String, BTreeMap<String, String>, Value)> {
        let mut upstream = BTreeMap::new();
        for u in self.upstream(stage) {
            let rec = self.read_record(u)?.ok_or_else(|| {
                Error::Data(format!("stage '{}' needs '{}' to have run first", stage.as_str(), u.as_str()))
            })?;
            upstream.insert(self.record_name(u), rec.key);
        }
        let section = self.section(stage)?;
        let key = sha256_hex(serde_json::to_string(&json!({"stage": stage.as_str(), "config": section, "upstream": upstream}))?.as_bytes());
        Ok((key, upstream, section))
    }

    /// Runs every stage in order.
    pub fn run_all(&self) -> Result<Summary> {
        self.run(&Stage::ALL)
    }

    /// Runs the given stages in order, skipping those already complete.
    pub fn run(&self, stages: &[Stage]) -> Result<Summary> {
        let _lock = Lock::acquire(&self.root)?;
        self.run_unlocked(stages)
    }

    fn run_unlocked(&self, stages: &[Stage]) -> Result<Summary> {
        let mut summary = Summary::default();
        for &stage in stages {
            let name = self.record_name(stage);
            let outcome = self.run_one(stage).map_err(|e| {
                log::error!("stage '{name}' failed: {e}");
                e.context(&format!("stage '{name}'"))
            })?;
            summary.stages.push(outcome);
        }
        if stages.contains(&Stage::Eval) {
            for &m in &self.config.eval.m {
                let (a, b) = self.eval_report_paths(m);
                summary.reports.push(a);
                summary.reports.push(b);
            }
        }
        Ok(summary)
    }

    fn run_one(&self, stage: Stage) -> Result<StageOutcome> {
        let name = self.record_name(stage);
        if !self.needed(stage) {
            return Ok(StageOutcome {
                stage: name,
                status: "not-needed".into(),
                training_steps: 0,
            });
        }
        let (key, upstream, section) = self.stage_key(stage)?;
        let base = self.base(stage).to_path_buf();
        if let Some(rec) = self.read_record(stage)? {
            if rec.key == key {
                if rec.outputs.iter().all(|o| base.join(o).exists()) {
                    info!("stage '{name}' is up to date");
                    return Ok(StageOutcome {
                        stage: name,
                        status: "skipped".into(),
                        training_steps: 0,
                    });
                }
                warn!("stage '{name}' has missing outputs; running it again");
            } else if !self.force {
                return Err(Error::ResumeMismatch(format!(
                    "stage '{name}' in {} was produced with a different config or inputs (re-run with --force, or use a new output directory)",
                    base.display()
                )));
            }
            for o in &rec.outputs {
                remove_path(&base.join(o))?;
            }
            remove_path(&self.record_path(stage))?;
        }
        info!("running stage '{name}'");
        let produced = match stage {
            Stage::Ingest => self.ingest(&key)?,
            Stage::Holdout => self.holdout()?,
            Stage::Select => self.select()?,
            Stage::Pretrain => self.pretrain(&key, &section)?,
            Stage::Enrich => self.enrich_stage(&key, &section)?,
            Stage::TrainPmn => self.train_pmn_stage()?,
            Stage::Init => self.init_stage()?,
            Stage::Democratize => self.democratize_stage()?,
            Stage::Eval => self.eval_stage(&key)?,
        };
        let record = StageRecord {
            stage: name.clone(),
            key,
            upstream,
            config: section,
            outputs: produced.outputs,
            training_steps: produced.training_steps,
        };
        write_json(&self.record_path(stage), &record)?;
        Ok(StageOutcome {
            stage: name,
            status: "ran".into(),
            training_steps: produced.training_steps,
        })
    }

    fn rel(&self, stage: Stage, path: &Path) -> String {
        path.strip_prefix(self.base(stage))
            .unwrap_or(path)
            .to_string_lossy()
            .replace('\\', "/")
    }

    // ---- inputs ----

    pub fn manifests(&self) -> Result<BTreeMap<String, DatasetManifest>> {
        let dir = self.datasets_dir();
        if !dir.exists() {
            return Err(Error::Data(format!("no datasets in {} (run ingest first)", dir.display())));
        }
        Ok(list_manifests(&dir)?.into_iter().map(|m| (m.player_id.clone(), m)).collect())
    }

    pub fn dataset(&self, manifests: &BTreeMap<String, DatasetManifest>, id: &str, train: usize, test: usize) -> Result<PlayerDataset> {
        let m = manifests
            .get(id)
            .ok_or_else(|| Error::Data(format!("no dataset for player '{id}'")))?;
        read_dataset(&self.datasets_dir(), m, train, test)
    }

    pub fn unseen_players(&self) -> Result<Vec<String>> {
        let path = self.shared_root().join("unseen.json");
        let h: Holdout = serde_json::from_slice(&fs::read(&path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?)?;
        Ok(h.players)
    }

    pub fn prototypes(&self) -> Result<PrototypeSet> {
        let path = self.root.join("prototypes.json");
        let mut p: PrototypeSet = serde_json::from_slice(&fs::read(&path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?)?;
        p.reindex()?;
        Ok(p)
    }

    /// Enriched model, population table and prototype table.
    pub fn enriched(&self) -> Result<(M, PopulationTable<f32>, IndividualTable<f32>)> {
        let mut ck = load_policy::<f32>(&self.checkpoint_dir(Stage::Enrich))?;
        let population = PopulationTable::from_tensor(ck.take(POPULATION)?)?;
        let ids: Vec<String> = ck.extra("prototype_ids")?;
        let rows = ck.take(INDIVIDUAL)?;
        if rows.shape.first() != Some(&ids.len()) {
            return Err(Error::Checkpoint("individual table rows do not match the stored prototype ids".into()));
        }
        Ok((ck.model, population, IndividualTable { rows, ids }))
    }

    pub fn pmn(&self, prototypes: Option<&PrototypeSet>) -> Result<Pmn<f32>> {
        Pmn::load(&self.checkpoint_dir(Stage::TrainPmn), prototypes)
    }

    fn prototype_datasets(&self, prototypes: &PrototypeSet) -> Result<Vec<PlayerDataset>> {
        let manifests = self.manifests()?;
        prototypes
            .ids()
            .iter()
            .map(|id| self.dataset(&manifests, id, usize::MAX, 0))
            .collect()
    }

    fn stage_extra(&self, key: &str, section: &Value) -> BTreeMap<String, Value> {
        let mut extra = BTreeMap::new();
        extra.insert("stage_key".into(), json!(key));
        extra.insert("stage_config".into(), section.clone());
        extra
    }

    // ---- stages ----

    fn ingest(&self, key: &str) -> Result<Produced> {
        let c = &self.config;
        if c.paths.pgn.is_empty() {
            return Err(Error::Config("paths.pgn lists no PGN inputs".into()));
        }
        let mut games = Vec::new();
        let mut unparseable = 0;
        for p in &c.paths.pgn {
            let file = File::open(p).map_err(|e| Error::Data(format!("cannot read PGN input {}: {e}", p.display())))?;
            let mut reader = parse_pgn_stream(BufReader::new(file));
            for g in reader.by_ref() {
                games.push(g?);
            }
            unparseable += reader.skipped();
        }
        sort_chronologically(&mut games);
        let mut builder = DatasetBuilder::new(c.filter.clone());
        for g in &games {
            builder.add_game(g)?;
        }
        builder.stats.games_unparseable = unparseable;
        let stats = builder.stats.clone();
        if stats.games_kept == 0 {
            return Err(Error::Data(format!("no games retained out of {} read", stats.games_seen)));
        }
        let dir = self.datasets_dir();
        // stored unsplit; each stage re-splits with its own M and T
        let datasets = builder.into_datasets(usize::MAX, 0);
        for ds in &datasets {
            write_dataset(&dir, ds, &c.filter, usize::MAX, 0)?;
        }
        let report = self.shared_root().join("reports").join("ingest.json");
        write_json(&report, &json!({"stage_key": key, "players": datasets.len(), "stats": stats}))?;
        Ok(Produced {
            outputs: vec![self.rel(Stage::Ingest, &dir), self.rel(Stage::Ingest, &report)],
            training_steps: 0,
        })
    }

    pub fn ingest_stats(&self) -> Result<IngestStats> {
        let v: Value = serde_json::from_slice(&fs::read(self.shared_root().join("reports").join("ingest.json"))?)?;
        Ok(serde_json::from_value(v["stats"].clone())?)
    }

    /// Configured players, or an automatic pick of players too small to be
    /// prototypes, spread round-robin over rating bins.
    fn holdout(&self) -> Result<Produced> {
        let e = &self.config.eval;
        let manifests = self.manifests()?;
        let players = if e.players.is_empty() {
            let mut by_bin: Vec<Vec<&DatasetManifest>> = vec![Vec::new(); NUM_BINS];
            for m in manifests.values() {
                if m.examples >= e.min_examples && m.examples < self.config.select.min_history {
                    by_bin[rating_to_bin(m.rating)].push(m);
                }
            }
            let mut out = Vec::new();
            let mut depth = 0;
            while out.len() < e.max_players && by_bin.iter().any(|b| b.len() > depth) {
                for b in &by_bin {
                    if out.len() < e.max_players {
                        if let Some(m) = b.get(depth) {
                            out.push(m.player_id.clone());
                        }
                    }
                }
                depth += 1;
            }
            out.sort();
            out
        } else {
            for id in &e.players {
                if !manifests.contains_key(id) {
                    return Err(Error::Data(format!("evaluation player '{id}' has no dataset")));
                }
            }
            e.players.clone()
        };
        if players.is_empty() {
            warn!("no unseen players qualify for evaluation");
        }
        let path = self.shared_root().join("unseen.json");
        write_json(&path, &Holdout { players })?;
        Ok(Produced {
            outputs: vec![self.rel(Stage::Holdout, &path)],
            training_steps: 0,
        })
    }

    fn select(&self) -> Result<Produced> {
        let s = &self.config.select;
        let unseen = self.unseen_players()?;
        let stats: Vec<PlayerStats> = self
            .manifests()?
            .into_values()
            .filter(|m| !unseen.contains(&m.player_id))
            .map(|m| PlayerStats {
                player_id: m.player_id,
                examples: m.examples,
                rating: m.rating,
            })
            .collect();
        let set = select_prototypes(&stats, s.n, s.strategy, s.min_history)?;
        let path = self.root.join("prototypes.json");
        write_json(&path, &set)?;
        Ok(Produced {
            outputs: vec![self.rel(Stage::Select, &path)],
            training_steps: 0,
        })
    }

    fn pretrain(&self, key: &str, section: &Value) -> Result<Produced> {
        let c = &self.config;
        let unseen = self.unseen_players()?;
        let manifests = self.manifests()?;
        let datasets: Vec<PlayerDataset> = manifests
            .keys()
            .filter(|id| !unseen.contains(id))
            .map(|id| self.dataset(&manifests, id, usize::MAX, 0))
            .collect::<Result<_>>()?;
        let splits: Vec<TrainSplit<'_>> = datasets.iter().map(PlayerDataset::train).collect();
        let mut model = M::init(c.model.clone(), c.seed)?;
        let mut population = PopulationTable::<f32>::init(c.model.d, c.seed.wrapping_add(1));
        let out = pretrain_population(&mut model, &mut population, &splits, &c.pretrain)?;
        let dir = self.checkpoint_dir(Stage::Pretrain);
        let mut seeds = BTreeMap::new();
        seeds.insert("model".into(), c.seed);
        seeds.insert("population".into(), c.seed.wrapping_add(1));
        seeds.insert("train".into(), c.pretrain.seed);
        save_policy(&dir, &model, &[(POPULATION, &population.rows)], seeds, self.stage_extra(key, section))?;
        let report = self.shared_root().join("reports").join("pretrain.jsonl");
        let mut w = create(&report)?;
        out.report.write_jsonl(&mut w)?;
        w.flush()?;
        Ok(Produced {
            outputs: vec![self.rel(Stage::Pretrain, &dir), self.rel(Stage::Pretrain, &report)],
            training_steps: out.report.steps.len(),
        })
    }

    fn enrich_stage(&self, key: &str, section: &Value) -> Result<Produced> {
        let mut ck = load_policy::<f32>(&self.checkpoint_dir(Stage::Pretrain))?;
        let population = PopulationTable::from_tensor(ck.take(POPULATION)?)?;
        let mut model = ck.model;
        let prototypes = self.prototypes()?;
        let datasets = self.prototype_datasets(&prototypes)?;
        let splits: Vec<TrainSplit<'_>> = datasets.iter().map(PlayerDataset::train).collect();
        let mut individual = init_individual_from_population(&population, &prototypes)?;
        let out = enrich(&mut model, &population, &mut individual, &splits, &prototypes, &self.config.enrich)?;
        let dir = self.checkpoint_dir(Stage::Enrich);
        let mut extra = self.stage_extra(key, section);
        extra.insert("prototype_ids".into(), json!(prototypes.ids()));
        extra.insert("prototype_hash".into(), json!(prototypes.hash()));
        let mut seeds = BTreeMap::new();
        seeds.insert("train".into(), self.config.enrich.seed);
        save_policy(&dir, &model, &[(POPULATION, &population.rows), (INDIVIDUAL, &individual.rows)], seeds, extra)?;
        let report = self.reports_dir().join("enrich.jsonl");
        let mut w = create(&report)?;
        out.report.write_jsonl(&mut w)?;
        w.flush()?;
        Ok(Produced {
            outputs: vec![self.rel(Stage::Enrich, &dir), self.rel(Stage::Enrich, &report)],
            training_steps: out.report.steps.len(),
        })
    }

    fn train_pmn_stage(&self) -> Result<Produced> {
        let (model, _, _) = self.enriched()?;
        let prototypes = self.prototypes()?;
        let datasets = self.prototype_datasets(&prototypes)?;
        let splits: Vec<TrainSplit<'_>> = datasets.iter().map(PlayerDataset::train).collect();
        let (pmn, report) = train_pmn(&model.backbone, &splits, &prototypes, &self.config.pmn)?;
        let dir = self.checkpoint_dir(Stage::TrainPmn);
        pmn.save(&dir, &model.config)?;
        let path = self.reports_dir().join("pmn.json");
        write_json(&path, &report)?;
        Ok(Produced {
            outputs: vec![self.rel(Stage::TrainPmn, &dir), self.rel(Stage::TrainPmn, &path)],
            training_steps: self.config.pmn.steps,
        })
    }

    fn init_stage(&self) -> Result<Produced> {
        let c = &self.config;
        let (_, population, individual) = self.enriched()?;
        let pmn = match c.init.mode {
            InitMode::Prototype => Some(self.pmn(None)?),
            InitMode::Strength => None,
        };
        let matcher = pmn.as_ref().map(|pmn| PrototypeMatcher {
            pmn,
            table: &individual,
            k: c.init.k,
            temperature: c.init.temperature,
        });
        let manifests = self.manifests()?;
        let unseen = self.unseen_players()?;
        let mut outputs = Vec::new();
        for &m in &c.eval.m {
            let mut records = Vec::new();
            for id in &unseen {
                let ds = self.dataset(&manifests, id, m, c.eval.t)?;
                if ds.test().examples.is_empty() {
                    warn!("player '{id}' has no test positions at M={m}; leaving it out");
                    continue;
                }
                let train = ds.train();
                let e = if train.examples.is_empty() && c.init.mode == InitMode::Prototype {
                    warn!("player '{id}' has no moves to match at M={m}; using its rating bin");
                    strength_init(id, ds.rating, &population)
                } else {
                    initial_embedding(c.init.mode, &train, &population, matcher.as_ref())?
                };
                records.push(EmbeddingRecord::from(&e));
            }
            let path = self.init_embeddings_path(m);
            let mut w = create(&path)?;
            write_embeddings(&mut w, &records)?;
            w.flush()?;
            outputs.push(self.rel(Stage::Init, &path));
        }
        Ok(Produced {
            outputs,
            training_steps: 0,
        })
    }

    fn democratize_stage(&self) -> Result<Produced> {
        let c = &self.config;
        let (model, population, _) = self.enriched()?;
        let manifests = self.manifests()?;
        let mut outputs = Vec::new();
        let mut steps = 0;
        for &m in &c.eval.m {
            let mut adapted = Vec::new();
            let mut full_players: Vec<PlayerEval> = Vec::new();
            let report_path = self
                .reports_dir()
                .join(format!("democratize-{}-{}-M{m}.jsonl", self.mode(), self.variant()));
            let mut log = create(&report_path)?;
            for r in read_records(&self.init_embeddings_path(m))? {
                let e = UnseenEmbedding::<f32>::from_record(&r)?;
                let ds = self.dataset(&manifests, &r.player_id, m, c.eval.t)?;
                let result = match c.democratize.variant {
                    Variant::Frozen => democratize(&model, &population, &e, ds.train(), &c.democratize.train)?,
                    Variant::Full => {
                        let (tuned, a) = democratize_full(&model, &population, &e, ds.train(), &c.democratize.train)?;
                        let v = a.embedding.vector.clone();
                        let rep = evaluate(&tuned, &population, &[ds.test()], |_| Ok(v.clone()), false, EvalMeta::default())?;
                        full_players.extend(rep.players);
                        a
                    }
                };
                if let Some(out) = &result.output {
                    steps += out.report.steps.len();
                    serde_json::to_writer(&mut log, &json!({"player_id": r.player_id}))?;
                    log.write_all(b"\n")?;
                    out.report.write_jsonl(&mut log)?;
                }
                adapted.push(EmbeddingRecord::from(&result.embedding));
            }
            log.flush()?;
            let path = self.adapted_embeddings_path(m);
            let mut w = create(&path)?;
            write_embeddings(&mut w, &adapted)?;
            w.flush()?;
            outputs.push(self.rel(Stage::Democratize, &path));
            outputs.push(self.rel(Stage::Democratize, &report_path));
            if c.democratize.variant == Variant::Full {
                let p = self.full_players_path(m);
                write_json(&p, &full_players)?;
                outputs.push(self.rel(Stage::Democratize, &p));
            }
        }
        Ok(Produced {
            outputs,
            training_steps: steps,
        })
    }

    fn eval_stage(&self, key: &str) -> Result<Produced> {
        let c = &self.config;
        let (model, population, _) = self.enriched()?;
        let phi = model.parameter_checksum();
        let manifests = self.manifests()?;
        let mut outputs = Vec::new();
        for &m in &c.eval.m {
            let meta = |stage: &str, variant: &str| {
                let mut extra = BTreeMap::new();
                extra.insert("embeddings".to_string(), stage.to_string());
                extra.insert("variant".to_string(), variant.to_string());
                extra.insert("stage_key".to_string(), key.to_string());
                EvalMeta {
                    m: Some(m),
                    init_mode: self.mode().to_string(),
                    phi_checksum: phi.clone(),
                    extra,
                }
            };
            let init = read_records(&self.init_embeddings_path(m))?;
            let datasets: Vec<PlayerDataset> = init
                .iter()
                .map(|r| self.dataset(&manifests, &r.player_id, m, c.eval.t))
                .collect::<Result<_>>()?;
            let tests: Vec<_> = datasets.iter().map(PlayerDataset::test).collect();
            let (init_path, adapted_path) = self.eval_report_paths(m);

            let init_report = evaluate(&model, &population, &tests, lookup(&init), c.eval.player_weighted, meta("init", "none"))?;
            outputs.extend(self.write_report(&init_report, &init_path)?);

            let adapted_report = match c.democratize.variant {
                Variant::Frozen => {
                    let adapted = read_records(&self.adapted_embeddings_path(m))?;
                    evaluate(&model, &population, &tests, lookup(&adapted), c.eval.player_weighted, meta("adapted", "frozen"))?
                }
                Variant::Full => {
                    let players: Vec<PlayerEval> = serde_json::from_slice(&fs::read(self.full_players_path(m))?)?;
                    EvalReport::from_players(players, c.eval.player_weighted, meta("adapted", "full"))
                }
            };
            outputs.extend(self.write_report(&adapted_report, &adapted_path)?);
        }
        Ok(Produced {
            outputs,
            training_steps: 0,
        })
    }

    fn write_report(&self, report: &EvalReport, json_path: &Path) -> Result<Vec<String>> {
        let mut w = create(json_path)?;
        report.write_json(&mut w)?;
        w.write_all(b"\n")?;
        w.flush()?;
        let csv_path = json_path.with_extension("csv");
        let mut w = create(&csv_path)?;
        report.write_csv(&mut w)?;
        w.flush()?;
        Ok(vec![self.rel(Stage::Eval, json_path), self.rel(Stage::Eval, &csv_path)])
    }

    // ---- analyses over a finished run ----

    /// Identification accuracy of the trained matcher on prototype moves it
    /// was not trained on, grouping `shots` windows per trial.
    pub fn stylometry(&self, shots: usize) -> Result<StylometryResult> {
        let prototypes = self.prototypes()?;
        let pmn = self.pmn(Some(&prototypes))?;
        let datasets = self.prototype_datasets(&prototypes)?;
        let window = pmn.config.window;
        let mut histories = Vec::new();
        for ds in &datasets {
            let all = ds.all_examples();
            let used = all.len().min(pmn.config.max_moves);
            // moves past the training cap, else the validation tail
            let held = if all.len() - used >= window {
                &all[used..]
            } else {
                let val = ((used as f64 * pmn.config.validation_fraction).ceil() as usize).clamp(1, used.saturating_sub(1).max(1));
                &all[used.saturating_sub(val)..used]
            };
            let feats = held
                .iter()
                .map(|ex| {
                    let (b, a) = move_pair(ex)?;
                    extract_move_features(&b, &a, &pmn.tower)
                })
                .collect::<Result<Vec<_>>>()?;
            let windows: Vec<Vec<Vec<f32>>> = feats.chunks_exact(window.min(feats.len()).max(1)).map(<[_]>::to_vec).collect();
            histories.push((ds.player_id.clone(), windows));
        }
        eval_stylometry(&pmn, &histories, shots)
    }

    /// Re-runs the prototype-dependent stages for each strategy and `n`,
    /// reusing this run's datasets, holdout and pre-training.
    pub fn study(&self, strategies: &[SelectionStrategy], ns: &[usize]) -> Result<Vec<StudyRow>> {
        let _lock = Lock::acquire(&self.root)?;
        self.run_unlocked(&[Stage::Ingest, Stage::Holdout, Stage::Pretrain])?;
        let rows = run_prototype_study(strategies, ns, |strategy, n| {
            let mut config = self.config.clone();
            config.select.strategy = strategy;
            config.select.n = n;
            let cell = Pipeline {
                config,
                root: self.root.join("study").join(format!("{}-N{n}", strategy.as_str())),
                shared: Some(self.shared_root().to_path_buf()),
                force: self.force,
            };
            let _cell_lock = Lock::acquire(&cell.root)?;
            cell.run_unlocked(&[Stage::Select, Stage::Enrich, Stage::TrainPmn, Stage::Init, Stage::Democratize, Stage::Eval])?;
            let mut reports = Vec::new();
            for &m in &cell.config.eval.m {
                let (a, b) = cell.eval_report_paths(m);
                for p in [a, b] {
                    reports.push(serde_json::from_slice::<EvalReport>(&fs::read(p)?)?);
                }
            }
            let pmn_path = cell.reports_dir().join("pmn.json");
            let pmn_accuracy = if pmn_path.exists() {
                let r: PmnReport = serde_json::from_slice(&fs::read(pmn_path)?)?;
                r.epochs.last().map(|e| e.validation_accuracy)
            } else {
                None
            };
            Ok(StudyCell { reports, pmn_accuracy })
        })?;
        let path = self.reports_dir().join("study.csv");
        let mut w = create(&path)?;
        write_study_csv(&rows, &mut w)?;
        w.flush()?;
        Ok(rows)
    }
}

fn read_records(path: &Path) -> Result<Vec<EmbeddingRecord>> {
    let f = File::open(path).map_err(|e| Error::Data(format!("cannot read embeddings {}: {e}", path.display())))?;
    read_embeddings(BufReader::new(f))
}

fn lookup(records: &[EmbeddingRecord]) -> impl Fn(&str) -> Result<Vec<f32>> + '_ {
    move |id| {
        let r = records
            .iter()
            .find(|r| r.player_id == id)
            .ok_or_else(|| Error::Data(format!("no embedding for player '{id}'")))?;
        Ok(UnseenEmbedding::<f32>::from_record(r)?.vector)
    }
}
