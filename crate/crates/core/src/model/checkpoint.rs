//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "BIRL" | version: u32 | header_len: u32 | header: canonical JSON
//! group_count: u32
//! per group: name_len: u32 | name | ndim: u32 | dims: u64 * ndim | data: f64 * numel
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::NetworkConfig;
use super::network::ReplayModel;
use super::prior::GaussianMixturePrior;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"BIRL";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: NetworkConfig,
    conditional_prior: bool,
    gate_seed: u64,
    perceptual_frozen: bool,
    seen_classes: Vec<usize>,
}

/// Serializes `value` as JSON with object keys in sorted order.
pub fn canonical_json<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value)?;
    Ok(serde_json::to_string(&v)?)
}

pub fn encode_checkpoint(model: &ReplayModel) -> Result<Vec<u8>> {
    let header = Header {
        config: model.config.clone(),
        conditional_prior: model.prior.is_conditional(),
        gate_seed: model.gates.seed(),
        perceptual_frozen: model.perceptual_frozen,
        seen_classes: model.prior.seen_classes().iter().copied().collect(),
    };
    let json = canonical_json(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(json.as_bytes());
    let groups = model.named_params();
    out.extend_from_slice(&(groups.len() as u32).to_le_bytes());
    for (name, t) in groups {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_checkpoint(model: &ReplayModel, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(model)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::format(
                self.pos as u64,
                format!("truncated while reading {what}"),
            )),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }
}

/// Parsed checkpoint contents, before they are assembled into a model.
#[derive(Debug, Clone)]
pub struct CheckpointContents {
    pub version: u32,
    pub header_json: String,
    pub groups: Vec<(String, Tensor)>,
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<CheckpointContents> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::format(0, "bad checkpoint magic"));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(4, format!("unsupported checkpoint version {version}")));
    }
    let hlen = r.u32("header length")? as usize;
    let header_json = std::str::from_utf8(r.take(hlen, "header")?)
        .map_err(|_| Error::format(12, "header is not UTF-8"))?
        .to_string();
    let count = r.u32("group count")?;
    let mut groups = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let at = r.pos as u64;
        let nlen = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(nlen, "name")?)
            .map_err(|_| Error::format(at, "group name is not UTF-8"))?
            .to_string();
        let ndim = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u64("extent")? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * 8, "parameter data")?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::format(at, e.to_string()))?;
        groups.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(Error::format(r.pos as u64, "trailing bytes after last group"));
    }
    Ok(CheckpointContents {
        version,
        header_json,
        groups,
    })
}

/// Rebuilds a model from a decoded checkpoint.
pub fn model_from_contents(contents: &CheckpointContents) -> Result<ReplayModel> {
    let header: Header = serde_json::from_str(&contents.header_json)?;
    header.config.validate()?;
    // Build a shell with the right layout, then overwrite every tensor.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = ReplayModel::new(
        header.config.clone(),
        header.conditional_prior,
        header.gate_seed,
        &mut rng,
    )?;
    let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
    if names.len() != contents.groups.len() {
        return Err(Error::format(
            0,
            format!("expected {} parameter groups, found {}", names.len(), contents.groups.len()),
        ));
    }
    for ((name, slot), (gname, t)) in names.iter().zip(model.params_mut()).zip(&contents.groups) {
        if name != gname || slot.shape() != t.shape() {
            return Err(Error::format(
                0,
                format!("group `{gname}` {:?} does not match `{name}` {:?}", t.shape(), slot.shape()),
            ));
        }
        slot.data_mut().copy_from_slice(t.data());
    }
    if header.perceptual_frozen {
        model.freeze_perceptual();
    }
    let seen: BTreeSet<usize> = header.seen_classes.into_iter().collect();
    model.prior = GaussianMixturePrior::from_parts(
        model.prior.means.clone(),
        model.prior.logvars.clone(),
        seen,
        header.conditional_prior,
    );
    Ok(model)
}

pub fn load_checkpoint(path: &Path) -> Result<ReplayModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_contents(&decode_checkpoint(&bytes)?)
}
