//! JSON checkpoints for model parameters and normalization statistics.
//!
//! ```json
//! {
//!   "format_version": 1,
//!   "cell": "gru",
//!   "dims": { "d_in": 2, "hidden": 7, "d_out": 1 },
//!   "arrays": { "W_hh": { "shape": [7, 7], "data": [ ... ] }, ... },
//!   "norm": { "mean": [ ... ], "std": [ ... ] },
//!   "seed_provenance": 7
//! }
//! ```
//!
//! Arrays are keyed by name in sorted order. Floats are written in their
//! shortest round-trip decimal form and parsed back exactly, so a loaded model
//! reproduces the saved one bit for bit.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cells::{CellKind, Dims, Params};
use crate::error::{Error, Result};
use crate::motion::NormStats;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedArray {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub cell: CellKind,
    pub dims: Dims,
    pub arrays: BTreeMap<String, NamedArray>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm: Option<NormStats>,
    #[serde(default)]
    pub seed_provenance: u64,
}

impl Checkpoint {
    pub fn new(p: &Params, norm: Option<&NormStats>, seed_provenance: u64) -> Self {
        let arrays = p
            .arrays()
            .into_iter()
            .map(|a| {
                (
                    a.name.to_string(),
                    NamedArray {
                        shape: a.shape,
                        data: a.data.to_vec(),
                    },
                )
            })
            .collect();
        Self {
            format_version: FORMAT_VERSION,
            cell: p.kind(),
            dims: p.dims(),
            arrays,
            norm: norm.cloned(),
            seed_provenance,
        }
    }

    /// Rebuilds the parameters, checking every array against the shapes
    /// implied by `cell` and `dims`.
    pub fn to_params(&self) -> Result<Params> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::CheckpointVersion {
                found: self.format_version,
                supported: FORMAT_VERSION,
            });
        }
        let dims = Dims::new(self.dims.d_in, self.dims.hidden, self.dims.d_out)
            .map_err(|e| Error::CheckpointSchema(e.to_string()))?;
        let mut p = Params::zeros(self.cell, dims);

        let expected: Vec<(&'static str, Vec<usize>)> =
            p.arrays().into_iter().map(|a| (a.name, a.shape)).collect();
        if let Some(extra) = self
            .arrays
            .keys()
            .find(|k| !expected.iter().any(|(name, _)| name == k))
        {
            return Err(Error::CheckpointSchema(format!("unexpected array {extra:?} for a {} cell", self.cell)));
        }
        for ((name, shape), dst) in expected.into_iter().zip(p.arrays_mut()) {
            let arr = self
                .arrays
                .get(name)
                .ok_or_else(|| Error::CheckpointSchema(format!("missing array {name:?}")))?;
            if arr.data.len() != arr.shape.iter().product::<usize>() {
                return Err(Error::CheckpointSchema(format!(
                    "array {name:?} has {} values for shape {:?}",
                    arr.data.len(),
                    arr.shape
                )));
            }
            if arr.shape != shape {
                return Err(Error::CheckpointShape {
                    name: name.to_string(),
                    expected: shape,
                    found: arr.shape.clone(),
                });
            }
            dst.copy_from_slice(&arr.data);
        }

        if let Some(norm) = &self.norm {
            if norm.mean.len() != norm.std.len() {
                return Err(Error::CheckpointSchema("norm mean and std lengths differ".into()));
            }
            if norm.std.iter().any(|s| !(*s > 0.0)) {
                return Err(Error::CheckpointSchema("norm std entries must be > 0".into()));
            }
        }
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, self).map_err(|e| Error::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let value: serde_json::Value =
            serde_json::from_reader(BufReader::new(file)).map_err(|source| Error::CheckpointParse {
                path: path.to_path_buf(),
                source,
            })?;
        let version = value
            .get("format_version")
            .ok_or_else(|| Error::CheckpointSchema("missing format_version".into()))?;
        let version = version
            .as_u64()
            .and_then(|v| u32::try_from(v).ok())
            .ok_or_else(|| Error::CheckpointSchema(format!("format_version must be an unsigned integer, got {version}")))?;
        if version != FORMAT_VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                supported: FORMAT_VERSION,
            });
        }
        serde_json::from_value(value).map_err(|e| Error::CheckpointSchema(e.to_string()))
    }
}

pub fn save_checkpoint(p: &Params, norm: Option<&NormStats>, seed_provenance: u64, path: &Path) -> Result<()> {
    if !p.is_finite() {
        return Err(Error::InvalidArgument("refusing to checkpoint non-finite parameters".into()));
    }
    Checkpoint::new(p, norm, seed_provenance).save(path)
}

/// Loads and validates a checkpoint, returning its parameters and optional
/// normalization stats.
pub fn load_checkpoint(path: &Path) -> Result<(Params, Option<NormStats>)> {
    let ckpt = Checkpoint::load(path)?;
    let p = ckpt.to_params()?;
    Ok((p, ckpt.norm))
}
