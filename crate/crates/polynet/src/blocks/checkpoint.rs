//! Self-describing binary checkpoint container.
//!
//! Layout (all multi-byte integers little-endian):
//!
//! ```text
//! offset 0       magic, 8 bytes: "PNETCKP1"
//! offset 8       u32 header length H
//! offset 12      UTF-8 JSON header, H bytes:
//!                  {"version":1,
//!                   "blocks":[<block spec>...],
//!                   "tensors":[{"name":"block0.U1","shape":[d,k]},...]}
//! offset 12+H    payload: for each tensor in directory order, its elements
//!                row-major as f64 little-endian (8 bytes each)
//! last 8 bytes   CRC-64/XZ of every preceding byte
//! ```
//!
//! The tensor directory is fully determined by the block specs (documented
//! parameter order); loading validates it and the CRC, so any byte flip in a
//! stored parameter is detected.

use super::{Block, BlockParams, CcpParams, NcpParams, PolyBlockSpec, ProductNet, ResidualParams, Variant};
use crate::{Error, Result, Tensor};
use serde::{Deserialize, Serialize};
use std::path::Path;

const MAGIC: &[u8; 8] = b"PNETCKP1";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    blocks: Vec<PolyBlockSpec>,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

/// CRC-64/XZ (reflected poly 0xC96C5795D7870F42, init/xorout all-ones).
pub(crate) fn crc64_xz(bytes: &[u8]) -> u64 {
    const POLY: u64 = 0xC96C_5795_D787_0F42;
    static TABLE: std::sync::OnceLock<[u64; 256]> = std::sync::OnceLock::new();
    let table = TABLE.get_or_init(|| {
        let mut t = [0u64; 256];
        for (i, entry) in t.iter_mut().enumerate() {
            let mut crc = i as u64;
            for _ in 0..8 {
                crc = if crc & 1 == 1 { (crc >> 1) ^ POLY } else { crc >> 1 };
            }
            *entry = crc;
        }
        t
    });
    let mut crc = !0u64;
    for &b in bytes {
        crc = table[((crc ^ b as u64) & 0xFF) as usize] ^ (crc >> 8);
    }
    !crc
}

/// The parameter directory a spec implies (names without the block prefix).
fn expected_layout(spec: &PolyBlockSpec) -> Vec<(String, Vec<usize>)> {
    let (n, d, k, o, w) = (spec.order, spec.input_dim, spec.rank, spec.output_dim, spec.bias_dim);
    let mut out = Vec::new();
    match spec.variant {
        Variant::Ccp => {
            for i in 1..=n {
                out.push((format!("U{i}"), vec![d, k]));
            }
            out.push(("C".to_string(), vec![o, k]));
            out.push(("beta".to_string(), vec![o]));
        }
        Variant::Ncp | Variant::NcpSkip => {
            for i in 1..=n {
                out.push((format!("A{i}"), vec![d, k]));
            }
            for i in 2..=n {
                out.push((format!("S{i}"), vec![k, k]));
            }
            for i in 1..=n {
                out.push((format!("B{i}"), vec![w, k]));
            }
            for i in 1..=n {
                out.push((format!("b{i}"), vec![w]));
            }
            out.push(("C".to_string(), vec![o, k]));
            out.push(("beta".to_string(), vec![o]));
        }
        Variant::HighOrderResidual => {
            out.push(("C".to_string(), vec![d, d]));
        }
    }
    out
}

fn params_from_ordered(spec: &PolyBlockSpec, mut tensors: Vec<Tensor>) -> Result<BlockParams> {
    let n = spec.order;
    let mut drain = |count: usize| -> Vec<Tensor> { tensors.drain(..count).collect() };
    let params = match spec.variant {
        Variant::Ccp => {
            let u = drain(n);
            let c = tensors.remove(0);
            let beta = tensors.remove(0);
            BlockParams::Ccp(CcpParams { u, c, beta })
        }
        Variant::Ncp | Variant::NcpSkip => {
            let a = drain(n);
            let s = drain(n - 1);
            let b = drain(n);
            let bias = drain(n);
            let c = tensors.remove(0);
            let beta = tensors.remove(0);
            let p = NcpParams { a, s, b, bias, c, beta };
            if spec.variant == Variant::Ncp {
                BlockParams::Ncp(p)
            } else {
                BlockParams::NcpSkip(p)
            }
        }
        Variant::HighOrderResidual => BlockParams::HighOrderResidual(ResidualParams {
            c: tensors.remove(0),
        }),
    };
    Ok(params)
}

/// Serialize a net to checkpoint bytes.
pub fn write_checkpoint_bytes(net: &ProductNet) -> Result<Vec<u8>> {
    let blocks: Vec<PolyBlockSpec> = net.blocks().iter().map(|b| b.spec().clone()).collect();
    let named = net.named_params();
    let tensors: Vec<TensorEntry> = named
        .iter()
        .map(|(name, t, _)| TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
        })
        .collect();
    let header = Header {
        version: VERSION,
        blocks,
        tensors,
    };
    let header_json = serde_json::to_vec(&header)?;

    let payload_len: usize = named.iter().map(|(_, t, _)| t.len() * 8).sum();
    let mut bytes = Vec::with_capacity(12 + header_json.len() + payload_len + 8);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    for (_, t, _) in &named {
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc64_xz(&bytes);
    bytes.extend_from_slice(&crc.to_le_bytes());
    Ok(bytes)
}

/// Parse checkpoint bytes back into a net, validating magic, CRC, and the
/// tensor directory against the specs.
pub fn read_checkpoint_bytes(bytes: &[u8]) -> Result<ProductNet> {
    if bytes.len() < 20 {
        return Err(Error::Checkpoint(format!("truncated: {} bytes", bytes.len())));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {:02x?}, want {:02x?}",
            &bytes[..8],
            MAGIC
        )));
    }
    let body = &bytes[..bytes.len() - 8];
    let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
    let actual = crc64_xz(body);
    if stored != actual {
        return Err(Error::Integrity(format!(
            "CRC mismatch: stored {stored:#018x}, computed {actual:#018x}"
        )));
    }

    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if 12 + header_len > body.len() {
        return Err(Error::Checkpoint(format!("header length {header_len} overruns file")));
    }
    let header: Header = serde_json::from_slice(&bytes[12..12 + header_len])?;
    if header.version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {}", header.version)));
    }

    // The directory must be exactly what the specs imply.
    let mut expected = Vec::new();
    for (i, spec) in header.blocks.iter().enumerate() {
        spec.validate()?;
        for (name, shape) in expected_layout(spec) {
            expected.push(TensorEntry {
                name: format!("block{i}.{name}"),
                shape,
            });
        }
    }
    if expected != header.tensors {
        return Err(Error::Checkpoint("tensor directory does not match block specs".to_string()));
    }

    let mut offset = 12 + header_len;
    let mut blocks = Vec::with_capacity(header.blocks.len());
    let mut cursor = 0usize;
    let mut all_tensors: Vec<Tensor> = Vec::with_capacity(expected.len());
    for entry in &header.tensors {
        let count: usize = entry.shape.iter().product();
        let end = offset + count * 8;
        if end > body.len() {
            return Err(Error::Checkpoint(format!("payload for {} overruns file", entry.name)));
        }
        let data: Vec<f64> = bytes[offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        all_tensors.push(Tensor::new(entry.shape.clone(), data)?);
        offset = end;
    }
    if offset != body.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing payload bytes",
            body.len() - offset
        )));
    }
    for spec in header.blocks {
        let count = expected_layout(&spec).len();
        let tensors: Vec<Tensor> = all_tensors[cursor..cursor + count].to_vec();
        cursor += count;
        let params = params_from_ordered(&spec, tensors)?;
        blocks.push(Block::new(spec, params)?);
    }
    ProductNet::new(blocks)
}

pub fn save_checkpoint(net: &ProductNet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = write_checkpoint_bytes(net)?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ProductNet> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint_bytes(&bytes)
}
