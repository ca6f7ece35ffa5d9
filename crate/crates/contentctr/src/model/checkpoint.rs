//! Checkpoint format. A checkpoint is a pair of files in one directory:
//! `checkpoint.json` (manifest: format tag, model config, epoch counter,
//! parameter and optimizer tables) and `checkpoint.bin` (11-byte magic then
//! f32 little-endian values). Values are quantized to f32 on save and
//! widened back exactly on load, so save -> load -> save is byte-identical,
//! and training that quantizes its live state at every epoch boundary can
//! resume from a checkpoint bit-identically.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamState, ParamSet};
use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::network::Model;

pub const MANIFEST_NAME: &str = "checkpoint.json";
pub const BLOB_NAME: &str = "checkpoint.bin";
const FORMAT_TAG: &str = "CCTR-CKPT-1";
const MAGIC: &[u8; 11] = b"CCTR-CKPT-1";

/// Where a training run stood when the checkpoint was written.
pub struct TrainingState {
    /// Completed epochs (0 for a freshly initialized model).
    pub epoch: usize,
    pub optimizer: Option<AdamState>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    blob: String,
    #[serde(default)]
    epoch: usize,
    model: ModelConfig,
    params: Vec<ParamEntry>,
    #[serde(default)]
    optimizer: Option<OptimizerSection>,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    /// Element offset into the value section of the blob.
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct OptimizerSection {
    kind: String,
    t: u64,
    slots: Vec<SlotEntry>,
}

#[derive(Serialize, Deserialize)]
struct SlotEntry {
    /// `<parameter>.m` or `<parameter>.v`.
    name: String,
    offset: usize,
    len: usize,
}

/// Writes `checkpoint.json` and `checkpoint.bin` under `dir` with no
/// training state. Returns the manifest path.
pub fn save(model: &Model, dir: &Path) -> Result<PathBuf> {
    save_with_state(
        model,
        dir,
        &TrainingState {
            epoch: 0,
            optimizer: None,
        },
    )
}

pub fn save_with_state(model: &Model, dir: &Path, state: &TrainingState) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut named: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::new();
    model.visit(&mut |name, p| {
        named.push((name.to_string(), p.shape().to_vec(), p.data().to_vec()));
    });
    named.sort_by(|a, b| a.0.cmp(&b.0));

    let mut blob = Vec::new();
    blob.extend_from_slice(MAGIC);
    let mut offset = 0usize;
    let mut push_values = |blob: &mut Vec<u8>, data: &[f64]| -> usize {
        for v in data {
            blob.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        let at = offset;
        offset += data.len();
        at
    };

    let mut params = Vec::with_capacity(named.len());
    for (name, shape, data) in &named {
        let at = push_values(&mut blob, data);
        params.push(ParamEntry {
            name: name.clone(),
            shape: shape.clone(),
            offset: at,
            len: data.len(),
        });
    }

    let optimizer = state.optimizer.as_ref().map(|adam| {
        let mut slots = Vec::with_capacity(adam.slots.len() * 2);
        for (name, m, v) in &adam.slots {
            let at = push_values(&mut blob, m);
            slots.push(SlotEntry {
                name: format!("{name}.m"),
                offset: at,
                len: m.len(),
            });
            let at = push_values(&mut blob, v);
            slots.push(SlotEntry {
                name: format!("{name}.v"),
                offset: at,
                len: v.len(),
            });
        }
        OptimizerSection {
            kind: "adam".to_string(),
            t: adam.t,
            slots,
        }
    });

    let manifest = Manifest {
        format: FORMAT_TAG.to_string(),
        blob: BLOB_NAME.to_string(),
        epoch: state.epoch,
        model: model.config.clone(),
        params,
        optimizer,
    };
    let blob_path = dir.join(BLOB_NAME);
    fs::write(&blob_path, &blob).map_err(|e| Error::io(&blob_path, e))?;
    let manifest_path = dir.join(MANIFEST_NAME);
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest_path)
}

/// Loads a model from a manifest path (or the directory containing one).
pub fn load(path: &Path) -> Result<Model> {
    load_with_state(path).map(|(model, _)| model)
}

pub fn load_with_state(path: &Path) -> Result<(Model, TrainingState)> {
    let manifest_path = if path.is_dir() {
        path.join(MANIFEST_NAME)
    } else {
        path.to_path_buf()
    };
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::format(&manifest_path, format!("bad manifest: {e}")))?;
    if manifest.format != FORMAT_TAG {
        return Err(Error::format(
            &manifest_path,
            format!("unknown format tag {:?}", manifest.format),
        ));
    }

    let blob_path = manifest_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&manifest.blob);
    let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    if blob.len() < MAGIC.len() || &blob[..MAGIC.len()] != MAGIC {
        return Err(Error::format(&blob_path, "bad magic"));
    }
    let values = &blob[MAGIC.len()..];
    let total: usize = manifest.params.iter().map(|p| p.len).sum::<usize>()
        + manifest
            .optimizer
            .as_ref()
            .map_or(0, |o| o.slots.iter().map(|s| s.len).sum());
    if values.len() != 4 * total {
        return Err(Error::format(
            &blob_path,
            format!("expected {} value bytes, found {}", 4 * total, values.len()),
        ));
    }
    let read_range = |name: &str, offset: usize, len: usize| -> Result<Vec<f64>> {
        if offset + len > total {
            return Err(Error::format(
                &manifest_path,
                format!("entry {name:?}: range extends past the blob"),
            ));
        }
        let data: Vec<f64> = values[4 * offset..4 * (offset + len)]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::format(
                &blob_path,
                format!("entry {name:?} holds non-finite values"),
            ));
        }
        Ok(data)
    };

    let mut table: HashMap<&str, &ParamEntry> = HashMap::new();
    for entry in &manifest.params {
        if entry.len != entry.shape.iter().product::<usize>() {
            return Err(Error::format(
                &manifest_path,
                format!("entry {:?}: len does not match shape", entry.name),
            ));
        }
        if table.insert(&entry.name, entry).is_some() {
            return Err(Error::format(
                &manifest_path,
                format!("duplicate entry {:?}", entry.name),
            ));
        }
    }

    let mut model = Model::new(manifest.model.clone(), 0)?;
    let expected = model.param_names();
    if expected.len() != table.len() || expected.iter().any(|n| !table.contains_key(n.as_str())) {
        let missing: Vec<&String> = expected
            .iter()
            .filter(|n| !table.contains_key(n.as_str()))
            .collect();
        let extra: Vec<&&str> = table
            .keys()
            .filter(|k| !expected.iter().any(|n| n == **k))
            .collect();
        return Err(Error::format(
            &manifest_path,
            format!("parameter set mismatch: missing {missing:?}, extra {extra:?}"),
        ));
    }

    let mut sizes: HashMap<String, usize> = HashMap::new();
    let mut failure: Option<Error> = None;
    model.visit_mut(&mut |name, p| {
        if failure.is_some() {
            return;
        }
        sizes.insert(name.to_string(), p.data().len());
        let entry = table[name];
        if entry.shape != p.shape() {
            failure = Some(Error::format(
                &manifest_path,
                format!(
                    "entry {:?}: shape {:?} does not match model shape {:?}",
                    name,
                    entry.shape,
                    p.shape()
                ),
            ));
            return;
        }
        match read_range(name, entry.offset, entry.len) {
            Ok(data) => {
                if let Err(e) = p.set_data(data) {
                    failure = Some(e);
                }
            }
            Err(e) => failure = Some(e),
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }

    let optimizer = match &manifest.optimizer {
        None => None,
        Some(section) => {
            if section.kind != "adam" {
                return Err(Error::format(
                    &manifest_path,
                    format!("unknown optimizer kind {:?}", section.kind),
                ));
            }
            let mut moments: HashMap<&str, Vec<f64>> = HashMap::new();
            for slot in &section.slots {
                let data = read_range(&slot.name, slot.offset, slot.len)?;
                if moments.insert(&slot.name, data).is_some() {
                    return Err(Error::format(
                        &manifest_path,
                        format!("duplicate optimizer entry {:?}", slot.name),
                    ));
                }
            }
            let mut bases: Vec<String> = Vec::new();
            for slot in &section.slots {
                let base = slot
                    .name
                    .strip_suffix(".m")
                    .or_else(|| slot.name.strip_suffix(".v"));
                let base = base.ok_or_else(|| {
                    Error::format(
                        &manifest_path,
                        format!("optimizer entry {:?} lacks a .m/.v suffix", slot.name),
                    )
                })?;
                if !bases.iter().any(|b| b == base) {
                    bases.push(base.to_string());
                }
            }
            let mut slots = Vec::with_capacity(bases.len());
            for base in bases {
                let expected_len = *sizes.get(&base).ok_or_else(|| {
                    Error::format(
                        &manifest_path,
                        format!("optimizer entry for unknown parameter {base:?}"),
                    )
                })?;
                let m = moments.remove(format!("{base}.m").as_str());
                let v = moments.remove(format!("{base}.v").as_str());
                match (m, v) {
                    (Some(m), Some(v)) if m.len() == expected_len && v.len() == expected_len => {
                        slots.push((base, m, v));
                    }
                    _ => {
                        return Err(Error::format(
                            &manifest_path,
                            format!("optimizer moments for {base:?} are incomplete"),
                        ))
                    }
                }
            }
            slots.sort_by(|a, b| a.0.cmp(&b.0));
            Some(AdamState {
                t: section.t,
                slots,
            })
        }
    };

    Ok((
        model,
        TrainingState {
            epoch: manifest.epoch,
            optimizer,
        },
    ))
}
