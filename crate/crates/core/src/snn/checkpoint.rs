//! `CTEK` checkpoint: little-endian header then the six tensors as f32.
//!
//! ```text
//! "CTEK" | u32 version | u32 x6 architecture | f32 v_th | f32 decay
//! then per tensor: u32 length | length x f32
//! ```

use std::path::Path;

use super::lif::LifParams;
use super::network::{Architecture, NetworkParams, ParamTensors, TENSOR_NAMES};
use crate::error::{CteError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CTEK";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint(params: &NetworkParams) -> Vec<u8> {
    let a = params.arch;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for d in [
        a.in_channels,
        a.height,
        a.width,
        a.conv_channels,
        a.hidden,
        a.classes,
    ] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&(params.lif.v_th as f32).to_le_bytes());
    out.extend_from_slice(&(params.lif.decay as f32).to_le_bytes());
    for t in params.tensors.slices() {
        out.extend_from_slice(&(t.len() as u32).to_le_bytes());
        for &v in t {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Cursor<'_> {
    fn take4(&mut self) -> Result<[u8; 4]> {
        let b = self
            .bytes
            .get(self.at..self.at + 4)
            .ok_or(CteError::Length {
                expected: self.at + 4,
                found: self.bytes.len(),
            })?;
        self.at += 4;
        Ok([b[0], b[1], b[2], b[3]])
    }

    fn u32(&mut self) -> Result<u32> {
        self.take4().map(u32::from_le_bytes)
    }

    fn f32(&mut self) -> Result<f32> {
        self.take4().map(f32::from_le_bytes)
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<NetworkParams> {
    let mut c = Cursor { bytes, at: 0 };
    if &c.take4()? != CHECKPOINT_MAGIC {
        return Err(CteError::Format("not a CTEK checkpoint".into()));
    }
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(CteError::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let mut dims = [0usize; 6];
    for d in &mut dims {
        *d = c.u32()? as usize;
    }
    let arch = Architecture {
        in_channels: dims[0],
        height: dims[1],
        width: dims[2],
        conv_channels: dims[3],
        hidden: dims[4],
        classes: dims[5],
    };
    arch.validate()?;
    let values = [
        arch.in_channels.checked_mul(9 * arch.conv_channels),
        Some(arch.conv_channels),
        arch.conv_len().checked_mul(arch.hidden),
        Some(arch.hidden),
        arch.classes.checked_mul(arch.hidden),
        Some(arch.classes),
    ]
    .into_iter()
    .try_fold(0usize, |acc, n| n.and_then(|n| acc.checked_add(n)))
    .and_then(|n| n.checked_mul(4)?.checked_add(c.at + 8 + 24));
    match values {
        Some(need) if need == bytes.len() => {}
        Some(need) => {
            return Err(CteError::Length {
                expected: need,
                found: bytes.len(),
            })
        }
        None => return Err(CteError::Format("checkpoint dimensions overflow".into())),
    }
    let lif = LifParams {
        v_th: c.f32()? as f64,
        decay: c.f32()? as f64,
    };
    if !lif.is_valid() {
        return Err(CteError::Format(format!("invalid LIF parameters {lif:?}")));
    }
    let mut tensors = ParamTensors::zeros(&arch);
    let expected_lens: Vec<usize> = tensors.slices().iter().map(|t| t.len()).collect();
    for ((buf, want), name) in tensors
        .slices_mut()
        .into_iter()
        .zip(expected_lens)
        .zip(TENSOR_NAMES)
    {
        let len = c.u32()? as usize;
        if len != want {
            return Err(CteError::Format(format!(
                "tensor {name} has {len} values, expected {want}"
            )));
        }
        for v in buf.iter_mut() {
            *v = c.f32()? as f64;
        }
    }
    if c.at != bytes.len() {
        return Err(CteError::Format(format!(
            "{} trailing bytes after checkpoint",
            bytes.len() - c.at
        )));
    }
    Ok(NetworkParams { arch, lif, tensors })
}

pub fn save_checkpoint(params: &NetworkParams, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(params)).map_err(|e| CteError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<NetworkParams> {
    let bytes = std::fs::read(path).map_err(|e| CteError::io(path, e))?;
    decode_checkpoint(&bytes)
}
