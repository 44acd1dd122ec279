//! Self-describing model checkpoints: magic, format version, a JSON header
//! (model kind, provenance, config echo, tensor directory), then raw
//! little-endian `f64` tensor data in directory order.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::optim::ParamStore;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PMILCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: String,
    pub stage: String,
    pub config_hash: String,
    pub config: serde_json::Value,
    #[serde(default)]
    pub tensors: Vec<TensorEntry>,
}

pub fn write_checkpoint<W: Write>(
    mut w: W,
    header: &CheckpointHeader,
    params: &ParamStore,
) -> std::io::Result<()> {
    let mut header = header.clone();
    header.tensors = params
        .iter()
        .map(|(name, t)| TensorEntry {
            name: name.to_owned(),
            rows: t.rows(),
            cols: t.cols(),
        })
        .collect();
    let json = serde_json::to_vec(&header).map_err(std::io::Error::other)?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for (_, t) in params.iter() {
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(CheckpointHeader, ParamStore), String> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|e| e.to_string())?;
    if &magic != CHECKPOINT_MAGIC {
        return Err("not a checkpoint (bad magic)".into());
    }
    let mut buf4 = [0u8; 4];
    r.read_exact(&mut buf4).map_err(|e| e.to_string())?;
    let version = u32::from_le_bytes(buf4);
    if version != CHECKPOINT_VERSION {
        return Err(format!(
            "checkpoint format version {version}, expected {CHECKPOINT_VERSION}"
        ));
    }
    r.read_exact(&mut buf4).map_err(|e| e.to_string())?;
    let mut json = vec![0u8; u32::from_le_bytes(buf4) as usize];
    r.read_exact(&mut json).map_err(|e| e.to_string())?;
    let header: CheckpointHeader = serde_json::from_slice(&json).map_err(|e| e.to_string())?;
    let mut params = ParamStore::new();
    let mut buf8 = [0u8; 8];
    for entry in &header.tensors {
        let mut data = Vec::with_capacity(entry.rows * entry.cols);
        for _ in 0..entry.rows * entry.cols {
            r.read_exact(&mut buf8)
                .map_err(|e| format!("tensor `{}`: {e}", entry.name))?;
            data.push(f64::from_le_bytes(buf8));
        }
        params.add(entry.name.clone(), Tensor::from_vec(entry.rows, entry.cols, data));
    }
    Ok((header, params))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut params = ParamStore::new();
        params.add("a", Tensor::from_vec(2, 2, vec![1.5, -0.0, f64::MIN_POSITIVE, 3.25]));
        params.add("b", Tensor::row_vector(&[0.1, 0.2, 0.3]));
        let header = CheckpointHeader {
            kind: "test".into(),
            stage: "unit".into(),
            config_hash: "abc".into(),
            config: serde_json::json!({"d": 4}),
            tensors: vec![],
        };
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &header, &params).unwrap();
        let (h, p) = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(h.kind, "test");
        assert_eq!(h.tensors.len(), 2);
        assert_eq!(p, params);
        assert!(read_checkpoint(&buf[..buf.len() - 3]).is_err());
    }
}
