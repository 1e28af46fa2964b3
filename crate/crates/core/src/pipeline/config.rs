use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embeddings::{DEFAULT_TEMPERATURE, DEFAULT_TOP_K};
use crate::error::{Error, Result};
use crate::eval::InitMode;
use crate::net::ModelConfig;
use crate::pgn::{FilterConfig, SelectionStrategy, DEFAULT_MIN_HISTORY, DEFAULT_TEST_SIZE};
use crate::pmn::PmnConfig;
use crate::train::TrainConfig;

/// Overrides the output root given in the config file.
pub const OUTPUT_ENV: &str = "MAIA4ALL_OUTPUT";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub pgn: Vec<PathBuf>,
    /// Root for datasets/, checkpoints/, embeddings/, reports/ and stages/.
    pub output: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectConfig {
    /// Prototypes per rating bin.
    pub n: usize,
    pub strategy: SelectionStrategy,
    pub min_history: usize,
}

impl Default for SelectConfig {
    fn default() -> Self {
        SelectConfig {
            n: 100,
            strategy: SelectionStrategy::Uniform,
            min_history: DEFAULT_MIN_HISTORY,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitConfig {
    pub mode: InitMode,
    pub k: usize,
    pub temperature: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            mode: InitMode::Prototype,
            k: DEFAULT_TOP_K,
            temperature: DEFAULT_TEMPERATURE,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Embedding only, universal parameters frozen.
    #[default]
    Frozen,
    /// Universal parameters fine-tuned as well.
    Full,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Frozen => "frozen",
            Variant::Full => "full",
        }
    }
}

/// Deserialized by hand: serde ignores `deny_unknown_fields` on a flattened
/// struct, and misspelled keys here must still be rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "serde_json::Map<String, serde_json::Value>")]
pub struct DemocratizeConfig {
    pub variant: Variant,
    #[serde(flatten)]
    pub train: TrainConfig,
}

impl Default for DemocratizeConfig {
    fn default() -> Self {
        DemocratizeConfig {
            variant: Variant::Frozen,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Adaptation sizes; one evaluation per value.
    pub m: Vec<usize>,
    /// Test positions per player.
    pub t: usize,
    pub player_weighted: bool,
    /// Unseen players to evaluate; empty selects automatically.
    pub players: Vec<String>,
    /// Cap on automatically selected players.
    pub max_players: usize,
    /// Smallest history an automatically selected player may have.
    pub min_examples: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            m: vec![800],
            t: DEFAULT_TEST_SIZE,
            player_weighted: false,
            players: Vec::new(),
            max_players: 110,
            min_examples: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    pub filter: FilterConfig,
    pub model: ModelConfig,
    pub pretrain: TrainConfig,
    pub enrich: TrainConfig,
    pub pmn: PmnConfig,
    pub select: SelectConfig,
    pub init: InitConfig,
    pub democratize: DemocratizeConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        PipelineConfig {
            seed: 0,
            paths: PathsConfig::default(),
            filter: FilterConfig::default(),
            pmn: PmnConfig::mirroring(&model),
            model,
            pretrain: TrainConfig::default(),
            enrich: TrainConfig::default(),
            select: SelectConfig::default(),
            init: InitConfig::default(),
            democratize: DemocratizeConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl TryFrom<serde_json::Map<String, serde_json::Value>> for DemocratizeConfig {
    type Error = String;

    fn try_from(mut map: serde_json::Map<String, serde_json::Value>) -> std::result::Result<Self, String> {
        let variant = match map.remove("variant") {
            Some(v) => serde_json::from_value(v).map_err(|e| format!("democratize.variant: {e}"))?,
            None => Variant::default(),
        };
        let train = serde_json::from_value(serde_json::Value::Object(map)).map_err(|e| format!("democratize: {e}"))?;
        Ok(DemocratizeConfig { variant, train })
    }
}

fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Applies one `section.key=value` override. Dashes in keys become
/// underscores; values are read as TOML literals, falling back to strings.
pub fn apply_override(tree: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{assignment}' is not of the form section.key=value")))?;
    let parts: Vec<String> = key.trim().split('.').map(|p| p.replace('-', "_")).collect();
    if parts.iter().any(String::is_empty) {
        return Err(Error::Config(format!("override key '{key}' has an empty component")));
    }
    let mut node = tree;
    for p in &parts[..parts.len() - 1] {
        let entry = node.entry(p.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override '{key}': '{p}' is not a section")))?;
    }
    node.insert(parts[parts.len() - 1].clone(), parse_value(raw.trim()));
    Ok(())
}

impl PipelineConfig {
    /// Defaults, then the optional file, then overrides, then the output
    /// root from the environment unless an override set it.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<PipelineConfig> {
        let mut tree = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        if let Ok(root) = std::env::var(OUTPUT_ENV) {
            apply_override(&mut tree, &format!("paths.output=\"{}\"", root.replace('\\', "\\\\").replace('"', "\\\"")))?;
        }
        for o in overrides {
            apply_override(&mut tree, o)?;
        }
        let mut cfg: PipelineConfig = toml::Value::Table(tree)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        if let Some(dir) = file.and_then(Path::parent) {
            cfg.paths.pgn = cfg.paths.pgn.iter().map(|p| if p.is_relative() { dir.join(p) } else { p.clone() }).collect();
            if cfg.paths.output.is_relative() && !cfg.paths.output.as_os_str().is_empty() && !overrides.iter().any(|o| o.starts_with("paths.output")) && std::env::var(OUTPUT_ENV).is_err() {
                cfg.paths.output = dir.join(&cfg.paths.output);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.filter.validate()?;
        self.model.validate()?;
        self.pretrain.validate()?;
        self.enrich.validate()?;
        self.democratize.train.validate()?;
        self.pmn.validate()?;
        if self.select.n == 0 {
            return Err(Error::Config("select.n must be at least 1".into()));
        }
        if self.init.k == 0 || !(self.init.temperature > 0.0) {
            return Err(Error::Config("init.k must be at least 1 and init.temperature positive".into()));
        }
        if self.eval.m.is_empty() {
            return Err(Error::Config("eval.m must list at least one adaptation size".into()));
        }
        if self.eval.t == 0 {
            return Err(Error::Config("eval.t must be at least 1".into()));
        }
        Ok(())
    }

    /// The config without machine-specific paths, as embedded in artifacts.
    pub fn portable(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(o) = v.as_object_mut() {
            o.remove("paths");
        }
        v
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}
