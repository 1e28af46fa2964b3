//! Binary example container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic  "M4AD"            4 bytes
//! version                  u16
//! vocabulary hash          32 bytes (raw SHA-256)
//! filter: min_ply u16, max_ply u16, min_clock u32, require_clock u8, class u8
//! string table: count u32, then (len u16, utf-8 bytes) per string
//! example count            u32
//! per example: record length u16, then
//!     18 planes x u64, target u16, active rating u16, opponent rating u16,
//!     ply u16, player string index u32, game string index u32
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::{rating_to_bin, PlayerDataset, SplitSizes};
use super::filter::{FilterConfig, TimeControlClass, TrainingExample};
use crate::chess::{encode_position, vocabulary, EncodedPosition, NUM_CHANNELS};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"M4AD";
pub const VERSION: u16 = 1;
const RECORD_LEN: u16 = (NUM_CHANNELS * 8 + 4 * 2 + 2 * 4) as u16;

fn u16_field(v: u32, what: &str) -> Result<u16> {
    u16::try_from(v).map_err(|_| Error::Data(format!("{what} {v} does not fit in 16 bits")))
}

#[derive(Default)]
struct StringTable {
    strings: Vec<String>,
    lookup: HashMap<String, u32>,
}

impl StringTable {
    fn intern(&mut self, s: &str) -> u32 {
        if let Some(&i) = self.lookup.get(s) {
            return i;
        }
        let i = self.strings.len() as u32;
        self.strings.push(s.to_string());
        self.lookup.insert(s.to_string(), i);
        i
    }
}

pub fn encode_examples(examples: &[TrainingExample], cfg: &FilterConfig) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(64 + examples.len() * (RECORD_LEN as usize + 2));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&hex::decode(vocabulary().hash()).expect("hex digest"));
    out.extend_from_slice(&u16_field(cfg.min_ply, "min_ply")?.to_le_bytes());
    out.extend_from_slice(&u16_field(cfg.max_ply, "max_ply")?.to_le_bytes());
    out.extend_from_slice(&cfg.min_clock_seconds.to_le_bytes());
    out.push(u8::from(cfg.require_clock));
    out.push(match cfg.time_control_class {
        TimeControlClass::Blitz => 0,
        TimeControlClass::Any => 1,
    });

    let mut table = StringTable::default();
    let indices: Vec<(u32, u32)> = examples
        .iter()
        .map(|e| (table.intern(&e.player_id), table.intern(&e.game_id)))
        .collect();
    out.extend_from_slice(&(table.strings.len() as u32).to_le_bytes());
    for s in &table.strings {
        let len = u16::try_from(s.len()).map_err(|_| Error::Data(format!("string too long: {s}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(s.as_bytes());
    }

    out.extend_from_slice(&(examples.len() as u32).to_le_bytes());
    for (e, (p, g)) in examples.iter().zip(indices) {
        let enc = encode_position(&e.position)?;
        out.extend_from_slice(&RECORD_LEN.to_le_bytes());
        for plane in enc.planes {
            out.extend_from_slice(&plane.to_le_bytes());
        }
        let target = u16::try_from(e.target).map_err(|_| Error::Data("target out of range".into()))?;
        out.extend_from_slice(&target.to_le_bytes());
        out.extend_from_slice(&u16_field(e.active_rating, "rating")?.to_le_bytes());
        out.extend_from_slice(&u16_field(e.opponent_rating, "rating")?.to_le_bytes());
        out.extend_from_slice(&u16_field(e.ply, "ply")?.to_le_bytes());
        out.extend_from_slice(&p.to_le_bytes());
        out.extend_from_slice(&g.to_le_bytes());
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Data("dataset file truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_examples(buf: &[u8]) -> Result<(FilterConfig, Vec<TrainingExample>)> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::Data("not a dataset file (bad magic)".into()));
    }
    let version = c.u16()?;
    if version != VERSION {
        return Err(Error::Data(format!("unsupported dataset version {version}")));
    }
    if hex::encode(c.take(32)?) != vocabulary().hash() {
        return Err(Error::Data("dataset was written with a different move vocabulary".into()));
    }
    let cfg = FilterConfig {
        min_ply: c.u16()? as u32,
        max_ply: c.u16()? as u32,
        min_clock_seconds: c.u32()?,
        require_clock: c.u8()? != 0,
        time_control_class: match c.u8()? {
            0 => TimeControlClass::Blitz,
            1 => TimeControlClass::Any,
            x => return Err(Error::Data(format!("bad time-control class {x}"))),
        },
    };
    let n_strings = c.u32()? as usize;
    let mut strings = Vec::with_capacity(n_strings);
    for _ in 0..n_strings {
        let len = c.u16()? as usize;
        let s = std::str::from_utf8(c.take(len)?).map_err(|_| Error::Data("string table is not UTF-8".into()))?;
        strings.push(s.to_string());
    }
    let string = |i: u32| {
        strings
            .get(i as usize)
            .cloned()
            .ok_or_else(|| Error::Data(format!("string index {i} out of range")))
    };
    let n = c.u32()? as usize;
    let mut examples = Vec::with_capacity(n);
    for _ in 0..n {
        let len = c.u16()?;
        if len != RECORD_LEN {
            return Err(Error::Data(format!("unexpected record length {len}")));
        }
        let mut planes = [0u64; NUM_CHANNELS];
        for p in &mut planes {
            *p = c.u64()?;
        }
        let target = c.u16()? as usize;
        let active_rating = c.u16()? as u32;
        let opponent_rating = c.u16()? as u32;
        let ply = c.u16()? as u32;
        let player_id = string(c.u32()?)?;
        let game_id = string(c.u32()?)?;
        if target >= vocabulary().len() {
            return Err(Error::Data(format!("target {target} outside the vocabulary")));
        }
        examples.push(TrainingExample {
            position: EncodedPosition { planes }.decode(ply)?,
            target,
            active_rating,
            opponent_rating,
            player_id,
            ply,
            game_id,
        });
    }
    if c.pos != buf.len() {
        return Err(Error::Data("trailing bytes after dataset records".into()));
    }
    Ok((cfg, examples))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub player_id: String,
    pub rating: u32,
    pub bin: usize,
    pub examples: usize,
    pub games: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub split: SplitSizes,
    pub filter: FilterConfig,
    pub vocabulary_hash: String,
    pub file: String,
}

/// Filesystem-safe stem for a player id.
pub fn file_stem(player_id: &str) -> String {
    player_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Writes `<stem>.m4ad` and `<stem>.json` into `dir`.
pub fn write_dataset(dir: &Path, ds: &PlayerDataset, cfg: &FilterConfig, train_size: usize, test_size: usize) -> Result<DatasetManifest> {
    fs::create_dir_all(dir)?;
    let stem = file_stem(&ds.player_id);
    let file = format!("{stem}.m4ad");
    fs::write(dir.join(&file), encode_examples(ds.all_examples(), cfg)?)?;
    let mut games: Vec<&str> = ds.all_examples().iter().map(|e| e.game_id.as_str()).collect();
    games.dedup();
    let manifest = DatasetManifest {
        player_id: ds.player_id.clone(),
        rating: ds.rating,
        bin: rating_to_bin(ds.rating),
        examples: ds.all_examples().len(),
        games: games.len(),
        train_size,
        test_size,
        split: ds.sizes(),
        filter: cfg.clone(),
        vocabulary_hash: vocabulary().hash().to_string(),
        file,
    };
    fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

/// Loads a dataset from its manifest and re-splits it with the given sizes.
pub fn read_dataset(dir: &Path, manifest: &DatasetManifest, train_size: usize, test_size: usize) -> Result<PlayerDataset> {
    let (_, examples) = decode_examples(&fs::read(dir.join(&manifest.file))?)?;
    PlayerDataset::from_examples(manifest.player_id.clone(), manifest.rating, examples, train_size, test_size)
}

/// All dataset manifests in `dir`, sorted by player id.
pub fn list_manifests(dir: &Path) -> Result<Vec<DatasetManifest>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "json") {
            if let Ok(m) = read_manifest(&path) {
                out.push(m);
            }
        }
    }
    out.sort_by(|a, b| a.player_id.cmp(&b.player_id));
    Ok(out)
}
