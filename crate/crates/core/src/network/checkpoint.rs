//! Checkpoints: a JSON manifest plus a sidecar blob of little-endian `f32`
//! values concatenated in manifest order. The blob lives next to the
//! manifest with `.bin` appended to its file name.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::model::Network;
use super::params::{NetConfig, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: NetConfig,
    pub seed: u64,
    pub params: Vec<ParamEntry>,
    /// Free-form training metadata (round, epoch, lr, ...).
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

/// Path of the binary blob belonging to `manifest`.
pub fn blob_path(manifest: &Path) -> PathBuf {
    let mut name = manifest.as_os_str().to_owned();
    name.push(".bin");
    PathBuf::from(name)
}

pub fn save_checkpoint(
    net: &Network<f32>,
    metadata: BTreeMap<String, String>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let params = net.params();
    let manifest = Checkpoint {
        format_version: FORMAT_VERSION,
        config: net.config().clone(),
        seed: net.config().seed,
        params: (0..params.len())
            .map(|i| ParamEntry {
                name: params.name(i).to_string(),
                shape: params.value(i).shape().to_vec(),
            })
            .collect(),
        metadata,
    };
    let mut blob = Vec::with_capacity(params.count() * 4);
    for v in params.flat_values() {
        blob.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))?;
    let bin = blob_path(path);
    std::fs::write(&bin, blob).map_err(|e| Error::io(&bin, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Network<f32>, Checkpoint)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: Checkpoint = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {} is not supported (expected {FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    let bin = blob_path(path);
    let blob = std::fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    let total: usize = manifest.params.iter().map(|p| p.shape.iter().product::<usize>()).sum();
    if blob.len() != total * 4 {
        return Err(Error::Checkpoint(format!(
            "blob holds {} bytes, manifest needs {}",
            blob.len(),
            total * 4
        )));
    }
    let mut values = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
    let mut store = ParamStore::new();
    for entry in &manifest.params {
        let n = entry.shape.iter().product();
        let data: Vec<f32> = values.by_ref().take(n).collect();
        store.push(entry.name.clone(), Tensor::new(entry.shape.clone(), data)?);
    }
    let net = Network::from_parts(manifest.config.clone(), store)?;
    Ok((net, manifest))
}
