//! Binary checkpoint format.
//!
//! Layout: the magic `ARDQ1`, a little-endian `u64` header length, a JSON
//! header, then every parameter as little-endian `f64` in manifest order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{NetConfig, NetShape, ParamTensor, Params, QNetwork};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 5] = b"ARDQ1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("corrupt header: {0}")]
    Header(String),
    #[error("incompatible checkpoint: {field} is {found} in the file but {expected} was requested")]
    Incompatible {
        field: &'static str,
        found: String,
        expected: String,
    },
    #[error("truncated parameter data: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("network error: {0}")]
    Net(#[from] super::NetError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in scalars from the start of the data block.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub net: NetConfig,
    pub shape: NetShape,
    pub seed: u64,
    pub rng: String,
    /// Free-form run metadata, typically the experiment config.
    #[serde(default)]
    pub meta: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

pub fn write_checkpoint<T: Scalar, W: Write>(
    out: &mut W,
    net: &QNetwork<T>,
    seed: u64,
    meta: serde_json::Value,
) -> Result<(), CheckpointError> {
    let mut offset = 0;
    let tensors = net
        .params
        .tensors
        .iter()
        .map(|t| {
            let e = TensorEntry {
                name: t.name.clone(),
                shape: t.shape.clone(),
                offset,
            };
            offset += t.data.len();
            e
        })
        .collect();
    let header = CheckpointHeader {
        net: *net.config(),
        shape: *net.shape(),
        seed,
        rng: crate::rng::RNG_NAME.to_string(),
        meta,
        tensors,
    };
    let json = serde_json::to_vec(&header).map_err(|e| CheckpointError::Header(e.to_string()))?;
    out.write_all(MAGIC)?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    let mut buf = Vec::with_capacity(offset * 8);
    for v in net.params.values() {
        buf.extend_from_slice(&v.as_f64().to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn save_checkpoint<T: Scalar>(
    path: impl AsRef<Path>,
    net: &QNetwork<T>,
    seed: u64,
    meta: serde_json::Value,
) -> Result<(), CheckpointError> {
    let mut bytes = Vec::new();
    write_checkpoint(&mut bytes, net, seed, meta)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Reads header and network; rebuilds the layout from the stored config.
pub fn read_checkpoint<T: Scalar, R: Read>(input: &mut R) -> Result<(CheckpointHeader, QNetwork<T>), CheckpointError> {
    let mut magic = [0u8; 5];
    input.read_exact(&mut magic).map_err(|_| CheckpointError::BadMagic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut len = [0u8; 8];
    input.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    if len > 1 << 30 {
        return Err(CheckpointError::Header(format!("header length {len} is implausible")));
    }
    let mut json = vec![0u8; len];
    input.read_exact(&mut json)?;
    let header: CheckpointHeader = serde_json::from_slice(&json).map_err(|e| CheckpointError::Header(e.to_string()))?;
    if header.rng != crate::rng::RNG_NAME {
        return Err(CheckpointError::Incompatible {
            field: "rng",
            found: header.rng.clone(),
            expected: crate::rng::RNG_NAME.to_string(),
        });
    }

    let net = QNetwork::<T>::zeros(header.net, header.shape)?;
    let mut data = Vec::new();
    input.read_to_end(&mut data)?;
    let expected = net.parameter_count() * 8;
    if data.len() != expected {
        return Err(CheckpointError::Truncated {
            expected,
            found: data.len(),
        });
    }
    let mut tensors = Vec::with_capacity(header.tensors.len());
    if header.tensors.len() != net.params.tensors.len() {
        return Err(CheckpointError::Header("tensor manifest does not match the network layout".into()));
    }
    for (entry, want) in header.tensors.iter().zip(&net.params.tensors) {
        if entry.name != want.name || entry.shape != want.shape {
            return Err(CheckpointError::Header(format!(
                "tensor {} {:?} does not match expected {} {:?}",
                entry.name, entry.shape, want.name, want.shape
            )));
        }
        let n = want.data.len();
        let bytes = data
            .get(entry.offset * 8..(entry.offset + n) * 8)
            .ok_or(CheckpointError::Truncated {
                expected: (entry.offset + n) * 8,
                found: data.len(),
            })?;
        let values = bytes
            .chunks_exact(8)
            .map(|b| T::of(f64::from_le_bytes(b.try_into().unwrap())))
            .collect();
        tensors.push(ParamTensor {
            name: entry.name.clone(),
            shape: entry.shape.clone(),
            data: values,
        });
    }
    let net = net.with_params(Params { tensors })?;
    Ok((header, net))
}

/// Loads a checkpoint and checks it against the requested architecture.
pub fn load_checkpoint<T: Scalar>(
    path: impl AsRef<Path>,
    expected: Option<(&NetConfig, &NetShape)>,
) -> Result<(CheckpointHeader, QNetwork<T>), CheckpointError> {
    let file = std::fs::File::open(path)?;
    let (header, net) = read_checkpoint(&mut std::io::BufReader::new(file))?;
    if let Some((cfg, shape)) = expected {
        check_compatible(&header, cfg, shape)?;
    }
    Ok((header, net))
}

pub fn check_compatible(header: &CheckpointHeader, cfg: &NetConfig, shape: &NetShape) -> Result<(), CheckpointError> {
    let h = &header.net;
    macro_rules! field {
        ($name:literal, $a:expr, $b:expr) => {
            if $a != $b {
                return Err(CheckpointError::Incompatible {
                    field: $name,
                    found: $a.to_string(),
                    expected: $b.to_string(),
                });
            }
        };
    }
    field!("core type", h.core, cfg.core);
    field!("attention", h.attention, cfg.attention);
    field!("conv layers", h.conv_layers, cfg.conv_layers);
    field!("kernel size", h.kernel, cfg.kernel);
    field!("filters", h.filters, cfg.filters);
    field!("recurrent units", h.units, cfg.units);
    field!("hidden width", h.hidden, cfg.hidden);
    field!("hidden layers", h.hidden_layers, cfg.hidden_layers);
    field!("local map side", header.shape.local_side, shape.local_side);
    field!("global map side", header.shape.global_side, shape.global_side);
    field!("channels", header.shape.channels, shape.channels);
    Ok(())
}
