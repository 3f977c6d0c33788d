//! JSON checkpoints: spec, normalisation, seed lineage and row-major parameter blocks.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::nets::{NetKind, Network, Normalization};
use super::{GnnParams, GnnSpec};
use crate::error::{Error, Result};
use crate::RMat;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockRecord {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Row-major entries.
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub kind: NetKind,
    pub spec: GnnSpec,
    pub normalization: Normalization,
    /// Named seeds that produced this network (init, data, shuffle, ...).
    pub seeds: BTreeMap<String, u64>,
    #[serde(default)]
    pub report: Option<serde_json::Value>,
    pub layers: Vec<Vec<BlockRecord>>,
}

impl Checkpoint {
    pub fn from_network(net: &Network, seeds: BTreeMap<String, u64>, report: Option<serde_json::Value>) -> Self {
        let mut layers: Vec<Vec<BlockRecord>> = vec![Vec::new(); net.params.layers.len()];
        for (l, name, m) in net.params.blocks() {
            let data = (0..m.nrows()).flat_map(|r| (0..m.ncols()).map(move |c| m[(r, c)])).collect();
            layers[l].push(BlockRecord {
                name: name.to_string(),
                rows: m.nrows(),
                cols: m.ncols(),
                data,
            });
        }
        let mut seeds = seeds;
        seeds.entry("init".into()).or_insert(net.init_seed);
        Self {
            format_version: FORMAT_VERSION,
            kind: net.kind,
            spec: net.spec.clone(),
            normalization: net.norm,
            seeds,
            report,
            layers,
        }
    }

    pub fn into_network(self) -> Result<Network> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {} is not supported (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        self.spec.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut params = GnnParams::zeros(&self.spec);
        if params.layers.len() != self.layers.len() {
            return Err(Error::Checkpoint(format!(
                "spec has {} layers, file has {}",
                params.layers.len(),
                self.layers.len()
            )));
        }
        let mut by_layer: Vec<BTreeMap<&str, &BlockRecord>> = self
            .layers
            .iter()
            .map(|blocks| blocks.iter().map(|b| (b.name.as_str(), b)).collect())
            .collect();
        for (l, name, m) in params.blocks_mut() {
            let rec = by_layer[l]
                .remove(name)
                .ok_or_else(|| Error::Checkpoint(format!("layer {l} is missing block {name}")))?;
            if rec.rows != m.nrows() || rec.cols != m.ncols() || rec.data.len() != rec.rows * rec.cols {
                return Err(Error::Checkpoint(format!(
                    "layer {l} block {name}: file has {}x{} ({} values), spec needs {}x{}",
                    rec.rows,
                    rec.cols,
                    rec.data.len(),
                    m.nrows(),
                    m.ncols()
                )));
            }
            *m = RMat::from_row_slice(rec.rows, rec.cols, &rec.data);
        }
        if let Some((l, extra)) = by_layer.iter().enumerate().find(|(_, m)| !m.is_empty()) {
            return Err(Error::Checkpoint(format!(
                "layer {l} has unexpected blocks {:?}",
                extra.keys().collect::<Vec<_>>()
            )));
        }
        if !params.is_finite() {
            return Err(Error::Checkpoint("parameters contain non-finite values".into()));
        }
        let net = Network {
            kind: self.kind,
            spec: self.spec,
            params,
            norm: self.normalization,
            init_seed: self.seeds.get("init").copied().unwrap_or(0),
        };
        let probe = Network::new(net.kind, net.spec.clone(), net.norm, 0);
        probe.map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(net)
    }
}

/// Writes atomically: a sibling temporary file is renamed over the target.
pub fn save_checkpoint(
    net: &Network,
    seeds: BTreeMap<String, u64>,
    report: Option<serde_json::Value>,
    path: &Path,
) -> Result<()> {
    let ck = Checkpoint::from_network(net, seeds, report);
    let text = serde_json::to_string(&ck)?;
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let tmp = path.with_extension("json.partial");
    fs::write(&tmp, text)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Network, Checkpoint)> {
    let text = fs::read_to_string(path)?;
    let ck: Checkpoint =
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let net = ck.clone().into_network()?;
    Ok((net, ck))
}

/// Loads and refuses anything other than `kind` with exactly `spec`.
pub fn load_checkpoint_as(path: &Path, kind: NetKind, spec: Option<&GnnSpec>) -> Result<Network> {
    let (net, _) = load_checkpoint(path)?;
    if net.kind != kind {
        return Err(Error::Checkpoint(format!(
            "{} holds a {} network, expected {}",
            path.display(),
            net.kind.name(),
            kind.name()
        )));
    }
    if let Some(spec) = spec {
        if &net.spec != spec {
            return Err(Error::Checkpoint(format!(
                "{} was saved with a different architecture",
                path.display()
            )));
        }
    }
    Ok(net)
}
