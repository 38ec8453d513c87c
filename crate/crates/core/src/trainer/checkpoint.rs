//! Binary checkpoints.
//!
//! Layout: the magic bytes `FPNC`, a little-endian `u16` format version, a
//! little-endian `u32` byte length followed by a JSON manifest, then every
//! tensor listed in the manifest as little-endian `f32` values, in manifest
//! order. The manifest records the parser base width, the tensor names with
//! their dimensions and, optionally, the band count of a stored scorer.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{ParserModel, ParserParams};
use crate::objectives::BandEnergyScorer;
use crate::scalar::Scalar;

pub const MAGIC: [u8; 4] = *b"FPNC";
pub const VERSION: u16 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub model: ParserModel<T>,
    pub scorer: Option<BandEnergyScorer<T>>,
}

impl<T: Scalar> PartialEq for Checkpoint<T> {
    fn eq(&self, other: &Self) -> bool {
        self.model == other.model && self.scorer == other.scorer
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    dims: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScorerEntry {
    bins: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    base_width: usize,
    scorer: Option<ScorerEntry>,
    tensors: Vec<TensorEntry>,
}

const SCORER_TENSORS: [&str; 4] = ["scorer.weights", "scorer.bias", "scorer.feature_mean", "scorer.feature_scale"];

fn expected_layout(base_width: usize, scorer_bins: Option<usize>) -> Vec<(String, Vec<usize>)> {
    let params = ParserParams::<f64>::zeros(base_width);
    let mut out: Vec<(String, Vec<usize>)> = params
        .groups()
        .into_iter()
        .map(|(n, _)| n)
        .zip(params.group_dims())
        .collect();
    if let Some(b) = scorer_bins {
        for (name, dims) in SCORER_TENSORS.iter().zip([vec![b], vec![1], vec![b], vec![b]]) {
            out.push((name.to_string(), dims));
        }
    }
    out
}

/// Serialises a checkpoint into `out`.
pub fn write_checkpoint<T: Scalar>(
    out: &mut dyn Write,
    model: &ParserModel<T>,
    scorer: Option<&BandEnergyScorer<T>>,
) -> Result<()> {
    let layout = expected_layout(model.base_width(), scorer.map(|s| s.weights.len()));
    let manifest = Manifest {
        base_width: model.base_width(),
        scorer: scorer.map(|s| ScorerEntry { bins: s.weights.len() }),
        tensors: layout
            .iter()
            .map(|(name, dims)| TensorEntry {
                name: name.clone(),
                dims: dims.clone(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    let mut push = |vals: &[T]| {
        for v in vals {
            buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    };
    for (_, g) in model.params().groups() {
        push(g);
    }
    if let Some(s) = scorer {
        push(&s.weights);
        push(&[s.bias]);
        push(&s.feature_mean);
        push(&s.feature_scale);
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn save_checkpoint<T: Scalar>(
    path: &Path,
    model: &ParserModel<T>,
    scorer: Option<&BandEnergyScorer<T>>,
) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, model, scorer)?;
    fs::write(path, buf)?;
    Ok(())
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Format(format!("truncated checkpoint while reading {what}")));
    }
    let (head, tail) = bytes.split_at(n);
    *bytes = tail;
    Ok(head)
}

/// Parses a checkpoint from memory.
pub fn read_checkpoint<T: Scalar>(mut bytes: &[u8]) -> Result<Checkpoint<T>> {
    let magic = take(&mut bytes, 4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format(format!("bad checkpoint magic {magic:?}, expected \"FPNC\"")));
    }
    let version = u16::from_le_bytes(take(&mut bytes, 2, "version")?.try_into().expect("2 bytes"));
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}, expected {VERSION}")));
    }
    let len = u32::from_le_bytes(take(&mut bytes, 4, "manifest length")?.try_into().expect("4 bytes")) as usize;
    let manifest: Manifest = serde_json::from_slice(take(&mut bytes, len, "manifest")?)
        .map_err(|e| Error::Format(format!("invalid checkpoint manifest: {e}")))?;
    if manifest.base_width == 0 {
        return Err(Error::Format("checkpoint base width is zero".into()));
    }
    let expected = expected_layout(manifest.base_width, manifest.scorer.as_ref().map(|s| s.bins));
    if manifest.tensors.len() != expected.len() {
        return Err(Error::Format(format!(
            "manifest lists {} tensors, expected {}",
            manifest.tensors.len(),
            expected.len()
        )));
    }
    for (entry, (name, dims)) in manifest.tensors.iter().zip(&expected) {
        if &entry.name != name || &entry.dims != dims {
            return Err(Error::Format(format!(
                "manifest tensor {} {:?} does not match expected {} {:?}",
                entry.name, entry.dims, name, dims
            )));
        }
    }
    let total: usize = expected.iter().map(|(_, d)| d.iter().product::<usize>()).sum();
    if bytes.len() != total * 4 {
        return Err(Error::Format(format!(
            "checkpoint payload has {} bytes, manifest requires {}",
            bytes.len(),
            total * 4
        )));
    }
    let mut values = bytes
        .chunks_exact(4)
        .map(|c| T::lit(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64));
    let mut params = ParserParams::<T>::zeros(manifest.base_width);
    for (_, g) in params.groups_mut() {
        for v in g.iter_mut() {
            *v = values.next().expect("payload length checked");
        }
    }
    let scorer = manifest.scorer.map(|s| {
        let mut next = |n: usize| (0..n).map(|_| values.next().expect("payload length checked")).collect::<Vec<T>>();
        let weights = next(s.bins);
        let bias = next(1)[0];
        let feature_mean = next(s.bins);
        let feature_scale = next(s.bins);
        BandEnergyScorer {
            bins: s.bins,
            weights,
            bias,
            feature_mean,
            feature_scale,
        }
    });
    Ok(Checkpoint {
        model: ParserModel::from_params(manifest.base_width, params),
        scorer,
    })
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    read_checkpoint(&fs::read(path)?)
}
