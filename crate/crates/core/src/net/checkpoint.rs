use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::model::{checksum_tensors, ModelState};
use crate::chess::vocabulary;
use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;
use crate::scalar::Scalar;

pub const FORMAT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";
const PARAM_DIR: &str = "params";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
}

/// Directory manifest shared by model, matcher and optimizer checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub kind: String,
    pub config: serde_json::Value,
    pub vocabulary_hash: String,
    pub params: Vec<ParamEntry>,
    #[serde(default)]
    pub seeds: BTreeMap<String, u64>,
    /// SHA-256 over the arrays listed in `checksum_params`, as stored.
    pub parameter_checksum: String,
    #[serde(default)]
    pub checksum_params: Vec<String>,
    #[serde(default)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

/// Arrays read back from a checkpoint directory, keyed by name.
#[derive(Debug)]
pub struct ArrayCheckpoint<T> {
    pub manifest: CheckpointManifest,
    pub arrays: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ArrayCheckpoint<T> {
    pub fn take(&mut self, name: &str) -> Result<Tensor<T>> {
        self.arrays
            .remove(name)
            .ok_or_else(|| Error::Checkpoint(format!("checkpoint has no array '{name}'")))
    }

    pub fn extra<V: serde::de::DeserializeOwned>(&self, key: &str) -> Result<V> {
        let v = self
            .manifest
            .extra
            .get(key)
            .ok_or_else(|| Error::Checkpoint(format!("checkpoint manifest lacks '{key}'")))?;
        Ok(serde_json::from_value(v.clone())?)
    }
}

fn file_name(name: &str) -> String {
    format!("{name}.f32")
}

/// What to write: named arrays, with the first `checksummed` ones covered by
/// the manifest checksum.
pub struct CheckpointWriter<'a, T> {
    pub kind: &'a str,
    pub config: serde_json::Value,
    pub arrays: Vec<(String, &'a Tensor<T>)>,
    pub checksummed: usize,
    pub seeds: BTreeMap<String, u64>,
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl<'a, T: Scalar> CheckpointWriter<'a, T> {
    pub fn write(self, dir: &Path) -> Result<CheckpointManifest> {
        let params_dir = dir.join(PARAM_DIR);
        fs::create_dir_all(&params_dir)?;
        let mut params = Vec::with_capacity(self.arrays.len());
        let mut stored: Vec<(String, Tensor<f32>)> = Vec::with_capacity(self.checksummed);
        for (i, (name, t)) in self.arrays.iter().enumerate() {
            let file = file_name(name);
            let mut bytes = Vec::with_capacity(t.len() * 4);
            for &x in &t.data {
                let v = x.to_f32().unwrap_or(f32::NAN);
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            fs::write(params_dir.join(&file), &bytes)?;
            if i < self.checksummed {
                stored.push((name.clone(), t.cast()));
            }
            params.push(ParamEntry {
                name: name.clone(),
                shape: t.shape.clone(),
                file,
            });
        }
        let refs: Vec<(String, &Tensor<f32>)> = stored.iter().map(|(n, t)| (n.clone(), t)).collect();
        let manifest = CheckpointManifest {
            format_version: FORMAT_VERSION,
            kind: self.kind.to_string(),
            config: self.config,
            vocabulary_hash: vocabulary().hash().to_string(),
            params,
            seeds: self.seeds,
            parameter_checksum: checksum_tensors(&refs),
            checksum_params: stored.iter().map(|(n, _)| n.clone()).collect(),
            extra: self.extra,
        };
        fs::write(dir.join(MANIFEST), serde_json::to_vec_pretty(&manifest)?)?;
        Ok(manifest)
    }
}

pub fn read_checkpoint_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join(MANIFEST);
    let bytes = fs::read(&path).map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    let m: CheckpointManifest = serde_json::from_slice(&bytes)?;
    if m.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "checkpoint format version {} is not supported (expected {FORMAT_VERSION})",
            m.format_version
        )));
    }
    if m.vocabulary_hash != vocabulary().hash() {
        return Err(Error::Checkpoint("checkpoint was built with a different move vocabulary".into()));
    }
    Ok(m)
}

/// Reads every array and verifies shapes, sizes and the stored checksum.
pub fn read_arrays<T: Scalar>(dir: &Path, kind: &str) -> Result<ArrayCheckpoint<T>> {
    let manifest = read_checkpoint_manifest(dir)?;
    if manifest.kind != kind {
        return Err(Error::Checkpoint(format!(
            "{} holds a '{}' checkpoint, expected '{kind}'",
            dir.display(),
            manifest.kind
        )));
    }
    let mut arrays = BTreeMap::new();
    let mut stored = Vec::new();
    for p in &manifest.params {
        let path: PathBuf = dir.join(PARAM_DIR).join(&p.file);
        let bytes = fs::read(&path).map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        let n: usize = p.shape.iter().product();
        if bytes.len() != n * 4 {
            return Err(Error::Checkpoint(format!(
                "{} holds {} bytes, shape {:?} needs {}",
                path.display(),
                bytes.len(),
                p.shape,
                n * 4
            )));
        }
        let values: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let t32 = Tensor::from_vec(&p.shape, values);
        if manifest.checksum_params.contains(&p.name) {
            stored.push((p.name.clone(), t32.clone()));
        }
        arrays.insert(p.name.clone(), t32.cast());
    }
    let by_order: Vec<(String, &Tensor<f32>)> = manifest
        .checksum_params
        .iter()
        .map(|n| {
            stored
                .iter()
                .find(|(s, _)| s == n)
                .map(|(s, t)| (s.clone(), t))
                .ok_or_else(|| Error::Checkpoint(format!("checksummed array '{n}' missing")))
        })
        .collect::<Result<_>>()?;
    if checksum_tensors(&by_order) != manifest.parameter_checksum {
        return Err(Error::Checkpoint(format!("parameter checksum mismatch in {}", dir.display())));
    }
    Ok(ArrayCheckpoint { manifest, arrays })
}

pub const POLICY_KIND: &str = "policy";

/// Fills a freshly shaped model from named arrays, checking every shape.
pub fn model_from_arrays<T: Scalar>(config: ModelConfig, arrays: &mut BTreeMap<String, Tensor<T>>) -> Result<ModelState<T>> {
    let mut model = ModelState::<T>::init(config, 0)?;
    for (name, dst) in model.named_params_mut() {
        let src = arrays
            .remove(&name)
            .ok_or_else(|| Error::Checkpoint(format!("checkpoint has no array '{name}'")))?;
        if src.shape != dst.shape {
            return Err(Error::Checkpoint(format!(
                "array '{name}' has shape {:?}, model expects {:?}",
                src.shape, dst.shape
            )));
        }
        *dst = src;
    }
    Ok(model)
}

/// Policy network plus auxiliary arrays (embedding tables).
#[derive(Debug)]
pub struct PolicyCheckpoint<T> {
    pub manifest: CheckpointManifest,
    pub model: ModelState<T>,
    pub arrays: BTreeMap<String, Tensor<T>>,
}

pub fn save_policy<T: Scalar>(
    dir: &Path,
    model: &ModelState<T>,
    tables: &[(&str, &Tensor<T>)],
    seeds: BTreeMap<String, u64>,
    extra: BTreeMap<String, serde_json::Value>,
) -> Result<CheckpointManifest> {
    let mut arrays = model.named_params();
    let checksummed = arrays.len();
    arrays.extend(tables.iter().map(|(n, t)| (n.to_string(), *t)));
    CheckpointWriter {
        kind: POLICY_KIND,
        config: serde_json::to_value(&model.config)?,
        arrays,
        checksummed,
        seeds,
        extra,
    }
    .write(dir)
}

pub fn load_policy<T: Scalar>(dir: &Path) -> Result<PolicyCheckpoint<T>> {
    let ArrayCheckpoint { manifest, mut arrays } = read_arrays::<T>(dir, POLICY_KIND)?;
    let config: ModelConfig = serde_json::from_value(manifest.config.clone())?;
    config.validate()?;
    let model = model_from_arrays(config, &mut arrays)?;
    Ok(PolicyCheckpoint { manifest, model, arrays })
}

impl<T: Scalar> PolicyCheckpoint<T> {
    pub fn take(&mut self, name: &str) -> Result<Tensor<T>> {
        self.arrays
            .remove(name)
            .ok_or_else(|| Error::Checkpoint(format!("checkpoint has no array '{name}'")))
    }

    pub fn extra<V: serde::de::DeserializeOwned>(&self, key: &str) -> Result<V> {
        let v = self
            .manifest
            .extra
            .get(key)
            .ok_or_else(|| Error::Checkpoint(format!("checkpoint manifest lacks '{key}'")))?;
        Ok(serde_json::from_value(v.clone())?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policy_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = ModelState::<f32>::init(ModelConfig::tiny(vocabulary().len()), 3).unwrap();
        let table = Tensor::from_vec(&[2, 8], (0..16).map(|i| i as f32).collect());
        let mut seeds = BTreeMap::new();
        seeds.insert("init".to_string(), 3);
        let manifest = save_policy(dir.path(), &m, &[("embeddings.population", &table)], seeds, BTreeMap::new()).unwrap();
        assert_eq!(manifest.parameter_checksum, m.parameter_checksum());
        let mut back = load_policy::<f32>(dir.path()).unwrap();
        assert_eq!(back.model, m);
        assert_eq!(back.take("embeddings.population").unwrap(), table);
        assert_eq!(back.manifest.seeds["init"], 3);
    }

    #[test]
    fn corrupted_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let m = ModelState::<f32>::init(ModelConfig::tiny(vocabulary().len()), 3).unwrap();
        save_policy(dir.path(), &m, &[], BTreeMap::new(), BTreeMap::new()).unwrap();
        let f = dir.path().join(PARAM_DIR).join("head.bias.f32");
        let mut bytes = fs::read(&f).unwrap();
        bytes[0] ^= 1;
        fs::write(&f, &bytes).unwrap();
        assert!(load_policy::<f32>(dir.path()).unwrap_err().to_string().contains("checksum"));
        bytes.pop();
        fs::write(&f, &bytes).unwrap();
        assert!(load_policy::<f32>(dir.path()).is_err());
    }

    #[test]
    fn vocabulary_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let m = ModelState::<f32>::init(ModelConfig::tiny(vocabulary().len()), 3).unwrap();
        save_policy(dir.path(), &m, &[], BTreeMap::new(), BTreeMap::new()).unwrap();
        let path = dir.path().join(MANIFEST);
        let mut man: CheckpointManifest = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
        man.vocabulary_hash = "00".into();
        fs::write(&path, serde_json::to_vec(&man).unwrap()).unwrap();
        assert!(load_policy::<f32>(dir.path()).unwrap_err().to_string().contains("vocabulary"));
    }
}
