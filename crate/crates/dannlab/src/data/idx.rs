//! IDX container (the MNIST family format).
//!
//! Layout: two zero bytes, a type byte (only `0x08`, unsigned byte, is
//! supported), a dimension count, that many big-endian `u32` sizes, then the
//! payload. Image files have 3 dimensions `[N, H, W]` (or 4 with a trailing
//! channel axis); label files have 1.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numcore::Tensor;

const UBYTE: u8 = 0x08;

struct Header {
    dims: Vec<usize>,
    payload_offset: usize,
}

fn format_err(path: &Path, offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        message: message.into(),
    }
}

fn parse_header(path: &Path, bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 4 {
        return Err(format_err(path, bytes.len(), "file shorter than the 4-byte magic"));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(format_err(path, 0, "magic must start with two zero bytes"));
    }
    if bytes[2] != UBYTE {
        return Err(format_err(
            path,
            2,
            format!("unsupported element type 0x{:02x} (only 0x08 ubyte)", bytes[2]),
        ));
    }
    let ndims = bytes[3] as usize;
    let payload_offset = 4 + 4 * ndims;
    if bytes.len() < payload_offset {
        return Err(format_err(path, bytes.len(), "truncated dimension sizes"));
    }
    let dims = (0..ndims)
        .map(|i| {
            let o = 4 + 4 * i;
            u32::from_be_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize
        })
        .collect::<Vec<_>>();
    let payload: usize = dims.iter().product();
    let available = bytes.len() - payload_offset;
    if available < payload {
        return Err(format_err(
            path,
            bytes.len(),
            format!("truncated payload: need {payload} bytes, found {available}"),
        ));
    }
    if available > payload {
        return Err(format_err(
            path,
            payload_offset + payload,
            format!("{} trailing bytes after payload", available - payload),
        ));
    }
    Ok(Header {
        dims,
        payload_offset,
    })
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Reads an image file; pixels are scaled to `[0, 1]` by `/ 255`.
pub fn read_idx_images(path: impl AsRef<Path>) -> Result<Vec<Tensor>> {
    let path = path.as_ref();
    let bytes = read(path)?;
    let header = parse_header(path, &bytes)?;
    let (n, shape) = match header.dims.as_slice() {
        &[n, h, w] => (n, vec![h, w, 1]),
        &[n, h, w, c] => (n, vec![h, w, c]),
        other => {
            return Err(format_err(
                path,
                3,
                format!("image files need 3 or 4 dimensions, found {}", other.len()),
            ))
        }
    };
    let size: usize = shape.iter().product();
    let payload = &bytes[header.payload_offset..];
    Ok((0..n)
        .map(|i| {
            let data = payload[i * size..(i + 1) * size]
                .iter()
                .map(|&b| b as f32 / 255.0)
                .collect();
            Tensor::new(shape.clone(), data).expect("idx image shape")
        })
        .collect())
}

pub fn read_idx_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let bytes = read(path)?;
    if bytes.len() >= 4 && bytes[..2] == [0, 0] && bytes[2] == UBYTE && bytes[3] != 1 {
        return Err(format_err(
            path,
            3,
            format!(
                "bad label magic 0x{:08x} (expected 0x00000801)",
                u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]])
            ),
        ));
    }
    let header = parse_header(path, &bytes)?;
    Ok(bytes[header.payload_offset..]
        .iter()
        .map(|&b| b as usize)
        .collect())
}

/// Quantizes a `[0, 1]` value to a byte.
pub fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_idx_images(path: impl AsRef<Path>, images: &[Tensor]) -> Result<()> {
    let path = path.as_ref();
    let shape = images
        .first()
        .map(|t| t.shape().to_vec())
        .ok_or_else(|| Error::input("cannot write an empty image set"))?;
    let &[h, w, c] = shape.as_slice() else {
        return Err(Error::input(format!("images must be [H, W, C], got {shape:?}")));
    };
    let mut dims = vec![images.len(), h, w];
    if c != 1 {
        dims.push(c);
    }
    let mut bytes = vec![0, 0, UBYTE, dims.len() as u8];
    for d in &dims {
        bytes.extend_from_slice(&(*d as u32).to_be_bytes());
    }
    for im in images {
        if im.shape() != shape.as_slice() {
            return Err(Error::input("all images must share one shape"));
        }
        bytes.extend(im.data().iter().map(|&v| to_byte(v)));
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_idx_labels(path: impl AsRef<Path>, labels: &[usize]) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = vec![0, 0, UBYTE, 1];
    bytes.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    for &l in labels {
        let b = u8::try_from(l)
            .map_err(|_| Error::input(format!("label {l} does not fit in a byte")))?;
        bytes.push(b);
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_hand_built_image() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img");
        let mut bytes = vec![0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2];
        bytes.extend([0, 85, 170, 255]);
        fs::write(&path, bytes).unwrap();
        let images = read_idx_images(&path).unwrap();
        assert_eq!(images.len(), 1);
        assert_eq!(images[0].shape(), &[2, 2, 1]);
        let expected = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        for (got, want) in images[0].data().iter().zip(expected) {
            assert!((got - want).abs() <= 1.0 / 255.0);
        }
    }

    #[test]
    fn wrong_label_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels");
        fs::write(&path, [0, 0, 8, 3, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0]).unwrap();
        let err = read_idx_labels(&path).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 3, .. }), "{err}");
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img");
        fs::write(&path, [0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2, 1, 2, 3]).unwrap();
        let err = read_idx_images(&path).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 19, .. }), "{err}");
        assert!(err.to_string().contains("truncated"));
    }

    #[test]
    fn bad_type_byte() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img");
        fs::write(&path, [0, 0, 0x0d, 1, 0, 0, 0, 0]).unwrap();
        assert!(matches!(
            read_idx_images(&path).unwrap_err(),
            Error::Format { offset: 2, .. }
        ));
    }
}
