//! Checkpoint files.
//!
//! Layout:
//!
//! ```text
//! RFCKPT 1
//! <TOML manifest: seed, epoch, val_loss, reduced_dim, param_count,
//!  optional run_config, [spec], and one [[tensors]] entry per stored tensor>
//! RFCKPT END
//! <RTF1 tensor records, concatenated in manifest order>
//! ```
//!
//! Each `[[tensors]]` entry carries `name`, `kind` (`param` or `buffer`),
//! `offset` and `bytes` relative to the first byte after the `RFCKPT END`
//! line, and the CRC-32 of the record.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FusionArch, FusionModel, FusionSpec};
use crate::error::{Error, Result};
use crate::nn::{EntryKind, ParamStore};
use crate::tensor::{io, Elem};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const CHECKPOINT_MAGIC: &str = "RFCKPT 1";
pub const CHECKPOINT_END: &str = "RFCKPT END";

/// Training provenance stored alongside the weights.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub epoch: Option<usize>,
    pub val_loss: Option<f64>,
    /// Full run configuration, so a checkpoint can be re-evaluated alone.
    pub run_config: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TocEntry {
    pub name: String,
    pub kind: String,
    pub offset: u64,
    pub bytes: u64,
    pub crc32: u32,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    epoch: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    val_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reduced_dim: Option<usize>,
    param_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    run_config: Option<String>,
    spec: FusionSpec,
    tensors: Vec<TocEntry>,
}

fn kind_name(kind: EntryKind) -> &'static str {
    match kind {
        EntryKind::Param => "param",
        EntryKind::Buffer => "buffer",
    }
}

pub fn encode_checkpoint<T: Elem>(model: &FusionModel<T>, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    let mut data = Vec::new();
    let mut tensors = Vec::with_capacity(model.store.len());
    for entry in model.store.entries() {
        let start = data.len();
        io::encode(&entry.tensor, &mut data);
        tensors.push(TocEntry {
            name: entry.name.clone(),
            kind: kind_name(entry.kind).to_string(),
            offset: start as u64,
            bytes: (data.len() - start) as u64,
            crc32: crc32fast::hash(&data[start..]),
        });
    }
    let manifest = Manifest {
        seed: meta.seed,
        epoch: meta.epoch,
        val_loss: meta.val_loss,
        reduced_dim: model.spec().reduced_dim,
        param_count: model.param_count(),
        run_config: meta.run_config.clone(),
        spec: model.spec().clone(),
        tensors,
    };
    let toml = toml::to_string(&manifest).map_err(|e| Error::invalid(format!("checkpoint manifest: {e}")))?;
    let mut out = Vec::with_capacity(toml.len() + data.len() + 32);
    out.extend_from_slice(CHECKPOINT_MAGIC.as_bytes());
    out.push(b'\n');
    out.extend_from_slice(toml.as_bytes());
    if !toml.ends_with('\n') {
        out.push(b'\n');
    }
    out.extend_from_slice(CHECKPOINT_END.as_bytes());
    out.push(b'\n');
    out.extend_from_slice(&data);
    Ok(out)
}

pub fn decode_checkpoint<T: Elem>(bytes: &[u8]) -> Result<(FusionModel<T>, CheckpointMeta)> {
    let corrupt = |offset: usize, reason: String| Error::Corrupt {
        offset: offset as u64,
        reason,
    };
    let magic = format!("{CHECKPOINT_MAGIC}\n");
    if !bytes.starts_with(magic.as_bytes()) {
        return Err(corrupt(0, format!("missing {CHECKPOINT_MAGIC:?} header line")));
    }
    let header_start = magic.len();
    let end_marker = format!("\n{CHECKPOINT_END}\n");
    let end = bytes[header_start - 1..]
        .windows(end_marker.len())
        .position(|w| w == end_marker.as_bytes())
        .map(|p| p + header_start - 1)
        .ok_or_else(|| corrupt(header_start, format!("no {CHECKPOINT_END:?} line")))?;
    let header = std::str::from_utf8(&bytes[header_start..end + 1])
        .map_err(|e| corrupt(header_start + e.valid_up_to(), "manifest is not UTF-8".into()))?;
    let manifest: Manifest = toml::from_str(header).map_err(|e| {
        let at = header_start + e.span().map_or(0, |s| s.start);
        corrupt(at, format!("manifest: {}", e.message()))
    })?;
    let data_start = end + end_marker.len();
    let data = &bytes[data_start..];

    let mut store = ParamStore::<T>::new();
    let arch = FusionArch::build_into(&mut store, &manifest.spec, &mut ChaCha8Rng::seed_from_u64(manifest.seed))
        .map_err(|e| corrupt(header_start, format!("manifest spec: {e}")))?;
    if manifest.tensors.len() != store.len() {
        return Err(corrupt(
            header_start,
            format!("manifest lists {} tensors, model has {}", manifest.tensors.len(), store.len()),
        ));
    }
    let mut expected_offset = 0u64;
    for (entry, toc) in store.entries_mut().iter_mut().zip(&manifest.tensors) {
        let at = data_start + toc.offset as usize;
        if toc.name != entry.name || toc.kind != kind_name(entry.kind) {
            return Err(corrupt(
                header_start,
                format!("manifest entry {:?} ({}) does not match model tensor {:?}", toc.name, toc.kind, entry.name),
            ));
        }
        if toc.offset != expected_offset {
            return Err(corrupt(at, format!("tensor {:?} is not contiguous", toc.name)));
        }
        let record = data
            .get(toc.offset as usize..toc.offset.saturating_add(toc.bytes) as usize)
            .ok_or_else(|| corrupt(at, format!("tensor {:?} extends past end of file", toc.name)))?;
        if crc32fast::hash(record) != toc.crc32 {
            return Err(corrupt(at, format!("checksum mismatch in tensor {:?}", toc.name)));
        }
        let (tensor, used) = io::decode::<T>(record, at as u64)?;
        if used as u64 != toc.bytes {
            return Err(corrupt(at + used, format!("trailing bytes in tensor {:?}", toc.name)));
        }
        if tensor.shape() != entry.tensor.shape() {
            return Err(corrupt(
                at,
                format!(
                    "tensor {:?} has shape {:?}, model expects {:?}",
                    toc.name,
                    tensor.shape(),
                    entry.tensor.shape()
                ),
            ));
        }
        let requires_grad = entry.tensor.requires_grad();
        entry.tensor = tensor.with_requires_grad(requires_grad);
        expected_offset += toc.bytes;
    }
    if expected_offset as usize != data.len() {
        return Err(corrupt(data_start + expected_offset as usize, "unexpected trailing data".into()));
    }

    let model = FusionModel { arch, store };
    let meta = CheckpointMeta {
        seed: manifest.seed,
        epoch: manifest.epoch,
        val_loss: manifest.val_loss,
        run_config: manifest.run_config,
    };
    Ok((model, meta))
}

/// Writes atomically: a sibling temporary file is renamed over `path`.
pub fn save_checkpoint<T: Elem>(model: &FusionModel<T>, meta: &CheckpointMeta, path: &Path) -> Result<u64> {
    let bytes = encode_checkpoint(model, meta)?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(bytes.len() as u64)
}

pub fn load_checkpoint<T: Elem>(path: &Path) -> Result<(FusionModel<T>, CheckpointMeta)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
