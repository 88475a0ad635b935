//! Checkpoint files: one JSON metadata line, then one CDAR array per
//! parameter tensor in declaration order.

use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::arch::{ArchDescriptor, LayerSpec};
use super::network::Network;
use crate::cdar::Array;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Metadata {
    format_version: u32,
    descriptor: ArchDescriptor,
    seed: u64,
    arrays: Vec<ArrayEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterCheckpoint {
    pub descriptor: ArchDescriptor,
    pub seed: u64,
    pub arrays: Vec<(String, Array)>,
}

fn weight_shape(spec: &LayerSpec) -> Vec<usize> {
    match spec {
        LayerSpec::Conv3d {
            in_channels,
            out_channels,
            kernel,
        } => vec![*out_channels, *in_channels, kernel[0], kernel[1], kernel[2]],
        LayerSpec::DepthwiseConv3d { channels, kernel } => vec![*channels, kernel[0], kernel[1], kernel[2]],
        LayerSpec::Dense {
            in_features,
            out_features,
        } => vec![*out_features, *in_features],
        LayerSpec::ChannelNorm { channels } => vec![*channels],
        _ => vec![],
    }
}

/// `(name, shape, flat range)` of every parameter tensor.
fn layout(desc: &ArchDescriptor) -> Result<Vec<(String, Vec<usize>, std::ops::Range<usize>)>> {
    let plan = desc.plan()?;
    let mut out = Vec::new();
    let named = plan
        .trunk
        .iter()
        .enumerate()
        .map(|(i, l)| (format!("trunk.{i}"), l))
        .chain(
            plan.heads
                .iter()
                .flat_map(|(h, ls)| ls.iter().enumerate().map(move |(i, l)| (format!("head.{h}.{i}"), l))),
        );
    for (prefix, l) in named {
        let (nw, nb) = l.spec.param_split();
        if nw == 0 {
            continue;
        }
        let (wname, bname) = if matches!(l.spec, LayerSpec::ChannelNorm { .. }) {
            ("scale", "shift")
        } else {
            ("weight", "bias")
        };
        let start = l.param_offset;
        out.push((format!("{prefix}.{wname}"), weight_shape(&l.spec), start..start + nw));
        out.push((format!("{prefix}.{bname}"), vec![nb], start + nw..start + nw + nb));
    }
    Ok(out)
}

impl ParameterCheckpoint {
    pub fn from_network(net: &Network) -> Self {
        let arrays = layout(net.descriptor())
            .expect("network descriptor was validated")
            .into_iter()
            .map(|(name, shape, r)| (name, Array::f32(shape, net.params()[r].to_vec())))
            .collect();
        ParameterCheckpoint {
            descriptor: net.descriptor().clone(),
            seed: net.seed(),
            arrays,
        }
    }

    /// Rebuilds the network, refusing a checkpoint made for another architecture.
    pub fn into_network(self, expected: &ArchDescriptor) -> Result<Network> {
        if &self.descriptor != expected {
            return Err(Error::DescriptorMismatch {
                expected: expected.name.clone(),
                found: self.descriptor.name.clone(),
            });
        }
        let lay = layout(&self.descriptor)?;
        let total = lay.last().map(|(_, _, r)| r.end).unwrap_or(0);
        let mut params = vec![0.0f32; total];
        if lay.len() != self.arrays.len() {
            return Err(Error::Malformed(format!(
                "checkpoint holds {} arrays, architecture needs {}",
                self.arrays.len(),
                lay.len()
            )));
        }
        for ((name, shape, r), (aname, arr)) in lay.into_iter().zip(self.arrays) {
            if name != aname || shape != arr.shape {
                return Err(Error::ShapeMismatch {
                    expected: shape,
                    got: arr.shape,
                });
            }
            let data = arr
                .into_f32()
                .ok_or_else(|| Error::Malformed(format!("array {name} is not float32")))?;
            params[r].copy_from_slice(&data);
        }
        Network::from_params(self.descriptor, params, self.seed)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = Metadata {
            format_version: CHECKPOINT_VERSION,
            descriptor: self.descriptor.clone(),
            seed: self.seed,
            arrays: self
                .arrays
                .iter()
                .map(|(n, a)| ArrayEntry {
                    name: n.clone(),
                    shape: a.shape.clone(),
                })
                .collect(),
        };
        let mut out = serde_json::to_vec(&meta).expect("metadata serializes");
        out.push(b'\n');
        for (_, a) in &self.arrays {
            a.write_to(&mut out).expect("vec write");
        }
        out
    }

    /// Hex SHA-256 of the serialized checkpoint.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}

pub fn save_checkpoint(ckpt: &ParameterCheckpoint, path: &Path) -> Result<()> {
    write_atomic(path, &ckpt.to_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<ParameterCheckpoint> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(f);
    let mut line = Vec::new();
    r.read_until(b'\n', &mut line).map_err(|e| Error::io(path, e))?;
    let meta: Metadata = serde_json::from_slice(&line).map_err(|e| Error::MalformedHeader {
        path: path.to_path_buf(),
        reason: format!("checkpoint metadata: {e}"),
    })?;
    if meta.format_version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            expected: CHECKPOINT_VERSION,
            found: meta.format_version,
        });
    }
    let mut arrays = Vec::with_capacity(meta.arrays.len());
    for entry in &meta.arrays {
        let arr = Array::read_from(&mut r, path)?;
        if arr.shape != entry.shape {
            return Err(Error::ShapeMismatch {
                expected: entry.shape.clone(),
                got: arr.shape,
            });
        }
        arrays.push((entry.name.clone(), arr));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::Malformed(format!("{}: trailing bytes", path.display())));
    }
    Ok(ParameterCheckpoint {
        descriptor: meta.descriptor,
        seed: meta.seed,
        arrays,
    })
}
