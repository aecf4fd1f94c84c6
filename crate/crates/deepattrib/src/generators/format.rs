//! Binary model container: magic "DATR", u16 version, canonical-JSON arch
//! descriptor, then parameter tensors as little-endian f32 in digest
//! (sorted-name) order. Parameter shapes are derivable from the descriptor,
//! so the payload carries no per-tensor framing.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"DATR";
pub const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic {0:?}, expected \"DATR\"")]
    BadMagic([u8; 4]),
    #[error("unsupported version {got}, expected {expected}")]
    Version { got: u16, expected: u16 },
    #[error("truncated payload: needed {needed} more bytes at {context}")]
    Truncated {
        needed: usize,
        context: &'static str,
    },
    #[error("{0} trailing bytes after parameters")]
    TrailingBytes(usize),
    #[error("arch descriptor is not valid JSON: {0}")]
    ArchJson(String),
    #[error("parameter {name} has wrong length: expected {expected}, got {got}")]
    ParamLength {
        name: String,
        expected: usize,
        got: usize,
    },
}

pub fn write_model_bytes(arch_json: &str, params: &BTreeMap<String, Tensor>) -> Vec<u8> {
    let json = arch_json.as_bytes();
    let mut out = Vec::with_capacity(4 + 2 + 4 + json.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(json);
    for tensor in params.values() {
        for &x in tensor.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

/// Split a container into (arch JSON, flat parameter payload).
pub fn read_model_bytes(bytes: &[u8]) -> Result<(String, &[u8]), FormatError> {
    if bytes.len() < 4 {
        return Err(FormatError::Truncated {
            needed: 4 - bytes.len(),
            context: "magic",
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if &magic != MAGIC {
        return Err(FormatError::BadMagic(magic));
    }
    if bytes.len() < 6 {
        return Err(FormatError::Truncated {
            needed: 6 - bytes.len(),
            context: "version",
        });
    }
    let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
    if version != VERSION {
        return Err(FormatError::Version {
            got: version,
            expected: VERSION,
        });
    }
    if bytes.len() < 10 {
        return Err(FormatError::Truncated {
            needed: 10 - bytes.len(),
            context: "descriptor length",
        });
    }
    let json_len = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    if bytes.len() < 10 + json_len {
        return Err(FormatError::Truncated {
            needed: 10 + json_len - bytes.len(),
            context: "descriptor",
        });
    }
    let json = std::str::from_utf8(&bytes[10..10 + json_len])
        .map_err(|e| FormatError::ArchJson(e.to_string()))?
        .to_string();
    Ok((json, &bytes[10 + json_len..]))
}

/// Decode the flat payload against an ordered (name, shape) spec list.
pub fn decode_params(
    payload: &[u8],
    specs: &[(String, Vec<usize>)],
) -> Result<BTreeMap<String, Tensor>, FormatError> {
    let total: usize = specs
        .iter()
        .map(|(_, s)| s.iter().product::<usize>())
        .sum();
    if payload.len() < 4 * total {
        return Err(FormatError::Truncated {
            needed: 4 * total - payload.len(),
            context: "parameters",
        });
    }
    if payload.len() > 4 * total {
        return Err(FormatError::TrailingBytes(payload.len() - 4 * total));
    }
    let mut params = BTreeMap::new();
    let mut off = 0usize;
    for (name, shape) in specs {
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for i in 0..n {
            let b: [u8; 4] = payload[off + 4 * i..off + 4 * i + 4].try_into().unwrap();
            data.push(f32::from_le_bytes(b));
        }
        off += 4 * n;
        let t = Tensor::new(shape.clone(), data).map_err(|_| FormatError::ParamLength {
            name: name.clone(),
            expected: n,
            got: 0,
        })?;
        params.insert(name.clone(), t);
    }
    Ok(params)
}
