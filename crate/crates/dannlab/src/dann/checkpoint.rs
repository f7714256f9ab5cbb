//! Versioned binary checkpoints.
//!
//! Layout (integers little-endian):
//!
//! ```text
//! b"DANNLAB-CKPT\n"
//! u32 version
//! u32 config length, then that many bytes of JSON {model, input_shape, num_classes, lambda}
//! u32 tensor count
//! per tensor: u32 ndims, ndims x u32 dims, prod(dims) x f32
//! ```
//!
//! Tensors follow declaration order: extractor, label head, domain head,
//! weight before bias within a layer.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{DannModel, ModelConfig};
use crate::error::{Error, Result};
use crate::numcore::Rng;

pub const CHECKPOINT_MAGIC: &[u8] = b"DANNLAB-CKPT\n";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model: ModelConfig,
    input_shape: [usize; 3],
    num_classes: usize,
    lambda: f32,
}

pub fn checkpoint_bytes(model: &DannModel) -> Vec<u8> {
    let header = Header {
        model: model.config.clone(),
        input_shape: model.input_shape,
        num_classes: model.num_classes,
        lambda: model.lambda(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = CHECKPOINT_MAGIC.to_vec();
    out.extend(CHECKPOINT_VERSION.to_le_bytes());
    out.extend((json.len() as u32).to_le_bytes());
    out.extend(json);
    let params: Vec<_> = model.stacks().into_iter().flat_map(|s| s.params()).collect();
    out.extend((params.len() as u32).to_le_bytes());
    for p in params {
        let shape = p.value.shape();
        out.extend((shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend((d as u32).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend(v.to_le_bytes());
        }
    }
    out
}

pub fn save_checkpoint(model: &DannModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, checkpoint_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<DannModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(path, &bytes)
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            offset: self.pos as u64,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(format!("truncated: need {n} more bytes")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn parse_checkpoint(path: &Path, bytes: &[u8]) -> Result<DannModel> {
    let mut cur = Cursor { path, bytes, pos: 0 };
    if cur.take(CHECKPOINT_MAGIC.len()).ok() != Some(CHECKPOINT_MAGIC) {
        cur.pos = 0;
        return Err(cur.err("not a dannlab checkpoint (bad header)"));
    }
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(cur.err(format!(
            "checkpoint version {version}, this build reads version {CHECKPOINT_VERSION}"
        )));
    }
    let len = cur.u32()? as usize;
    let header: Header = serde_json::from_slice(cur.take(len)?).map_err(|e| Error::Json {
        context: format!("{}: checkpoint config block", path.display()),
        source: e,
    })?;
    // Build with throwaway weights, then overwrite every tensor.
    let mut model = DannModel::build(
        &header.model,
        header.input_shape,
        header.num_classes,
        header.lambda,
        &mut Rng::seed(0),
    )?;
    let count = cur.u32()? as usize;
    let expected: usize = model.stacks().iter().map(|s| s.params().count()).sum();
    if count != expected {
        return Err(cur.err(format!("{count} tensors, the configured model has {expected}")));
    }
    for stack in model.stacks_mut() {
        for p in stack.params_mut() {
            let ndims = cur.u32()? as usize;
            let mut shape = Vec::with_capacity(ndims);
            for _ in 0..ndims {
                shape.push(cur.u32()? as usize);
            }
            if shape != p.value.shape() {
                return Err(cur.err(format!(
                    "tensor shape {shape:?}, expected {:?}",
                    p.value.shape()
                )));
            }
            let raw = cur.take(4 * p.value.len())?;
            for (dst, b) in p.value.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
                *dst = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
            }
        }
    }
    if cur.pos != bytes.len() {
        return Err(cur.err(format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(seed: u64) -> DannModel {
        DannModel::build(&ModelConfig::default(), [28, 28, 1], 10, 0.7, &mut Rng::seed(seed)).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = model(3);
        save_checkpoint(&m, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(m.parameter_bits(), back.parameter_bits());
        assert_eq!(back.lambda(), 0.7);
        assert_eq!(back.config(), m.config());
        assert_eq!(checkpoint_bytes(&back), fs::read(&path).unwrap());
    }

    #[test]
    fn corrupt_files_rejected() {
        let p = Path::new("m.ckpt");
        let bytes = checkpoint_bytes(&model(1));
        assert!(parse_checkpoint(p, &bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(parse_checkpoint(p, &extra).unwrap_err().to_string().contains("trailing"));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(parse_checkpoint(p, &bad).unwrap_err().to_string().contains("bad header"));
        let mut future = bytes;
        future[CHECKPOINT_MAGIC.len()] = 9;
        assert!(parse_checkpoint(p, &future).unwrap_err().to_string().contains("version 9"));
    }
}
