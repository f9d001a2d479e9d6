//! Checkpoint container.
//!
//! Layout: `b"PCKP"`, version `u16` LE, header length `u32` LE, a JSON
//! header (`version`, network `config`, parameter manifest of
//! `name`/`shape`/`dtype`/`frozen`, `has_momentum`, free-form `meta`), then
//! every parameter's values as little-endian f32 in manifest order, followed
//! by the momentum buffers in the same order when `has_momentum` is set.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{Network, NetworkConfig};
use super::params::{Param, ParamSet};
use super::tensor::Shape;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"PCKP";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: [usize; 5],
    pub dtype: String,
    pub frozen: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u16,
    pub config: NetworkConfig,
    pub params: Vec<ParamEntry>,
    pub has_momentum: bool,
    #[serde(default)]
    pub meta: serde_json::Value,
}

fn shape_arr(s: Shape) -> [usize; 5] {
    [s.n, s.c, s.z, s.y, s.x]
}

pub fn encode<T: Scalar>(net: &Network<T>, meta: serde_json::Value) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        version: VERSION,
        config: *net.config(),
        params: net
            .params()
            .iter()
            .map(|p| ParamEntry {
                name: p.name.clone(),
                shape: shape_arr(p.shape),
                dtype: "f32".into(),
                frozen: p.frozen,
            })
            .collect(),
        has_momentum: true,
        meta,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(10 + json.len() + net.parameter_count() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for p in net.params().iter() {
        for &v in &p.value {
            out.extend_from_slice(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes());
        }
    }
    for p in net.params().iter() {
        for &v in &p.momentum {
            out.extend_from_slice(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes());
        }
    }
    Ok(out)
}

fn bad<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Format(msg.into()))
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<(Network<T>, CheckpointHeader)> {
    if bytes.len() < 10 || &bytes[..4] != MAGIC {
        return bad("not a checkpoint (bad magic)");
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return bad(format!("unsupported checkpoint version {version}"));
    }
    let hlen = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    if bytes.len() < 10 + hlen {
        return bad("checkpoint header truncated");
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[10..10 + hlen])?;
    let total: usize = header.params.iter().map(|p| p.shape.iter().product::<usize>()).sum();
    let payload = &bytes[10 + hlen..];
    let expect = total * 4 * if header.has_momentum { 2 } else { 1 };
    if payload.len() != expect {
        return bad(format!("checkpoint payload has {} bytes, expected {expect}", payload.len()));
    }
    let mut floats = payload.chunks_exact(4).map(|c| T::from(f32::from_le_bytes(c.try_into().unwrap())).unwrap());
    let mut params = ParamSet::new();
    for e in &header.params {
        if e.dtype != "f32" {
            return bad(format!("unsupported parameter dtype {}", e.dtype));
        }
        let shape = Shape::new(e.shape[0], e.shape[1], e.shape[2], e.shape[3], e.shape[4]);
        let value: Vec<T> = floats.by_ref().take(shape.numel()).collect();
        let mut p = Param::new(e.name.clone(), shape, value);
        p.frozen = e.frozen;
        params.push(p)?;
    }
    if header.has_momentum {
        for i in 0..params.len() {
            let n = params.get(i).len();
            let m: Vec<T> = floats.by_ref().take(n).collect();
            params.get_mut(i).momentum = m;
        }
    }
    let net = Network::from_params(header.config, params)?;
    Ok((net, header))
}

pub fn save<T: Scalar>(path: impl AsRef<Path>, net: &Network<T>, meta: serde_json::Value) -> Result<()> {
    fs::write(path, encode(net, meta)?)?;
    Ok(())
}

pub fn load<T: Scalar>(path: impl AsRef<Path>) -> Result<(Network<T>, CheckpointHeader)> {
    let path = path.as_ref();
    let bytes = crate::error::read_file(path)?;
    decode(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        e => e,
    })
}
