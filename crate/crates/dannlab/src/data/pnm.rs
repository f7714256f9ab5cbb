//! Binary PGM (`P5`) and PPM (`P6`) images.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numcore::Tensor;

use super::idx::to_byte;

fn format_err(path: &Path, offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        message: message.into(),
    }
}

/// Parses a P5/P6 file into an `[H, W, C]` tensor scaled by `1 / maxval`.
pub fn read_pnm(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pnm(path, &bytes)
}

pub(crate) fn parse_pnm(path: &Path, bytes: &[u8]) -> Result<Tensor> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        Some(tag) => {
            return Err(format_err(
                path,
                0,
                format!(
                    "unsupported format tag {:?} (only binary P5/P6)",
                    String::from_utf8_lossy(tag)
                ),
            ))
        }
        None => return Err(format_err(path, 0, "empty file")),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(format_err(path, pos, "expected a decimal header field"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| format_err(path, start, "header field out of range"))?;
    }
    let [width, height, maxval] = fields;
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(format_err(path, pos, "expected whitespace after maxval"));
    }
    pos += 1;
    if maxval == 0 || maxval > 65535 {
        return Err(format_err(path, pos, format!("maxval {maxval} out of range")));
    }
    let sample_bytes = if maxval < 256 { 1 } else { 2 };
    let count = width * height * channels;
    let need = count * sample_bytes;
    let payload = &bytes[pos..];
    if payload.len() < need {
        return Err(format_err(
            path,
            bytes.len(),
            format!("truncated pixel data: need {need} bytes, found {}", payload.len()),
        ));
    }
    let maxval = maxval as f32;
    let data = if sample_bytes == 1 {
        payload[..need].iter().map(|&b| b as f32 / maxval).collect()
    } else {
        payload[..need]
            .chunks(2)
            .map(|p| u16::from_be_bytes([p[0], p[1]]) as f32 / maxval)
            .collect()
    };
    Tensor::new(vec![height, width, channels], data)
}

/// Writes an `[H, W, 1]` image as P5 or an `[H, W, 3]` image as P6, maxval
/// 255.
pub fn write_pnm(path: impl AsRef<Path>, im: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let &[h, w, c] = im.shape() else {
        return Err(Error::input(format!("expected [H, W, C], got {:?}", im.shape())));
    };
    let tag = match c {
        1 => "P5",
        3 => "P6",
        _ => {
            return Err(Error::input(format!(
                "PNM output supports 1 or 3 channels, got {c}"
            )))
        }
    };
    let mut bytes = format!("{tag}\n{w} {h}\n255\n").into_bytes();
    bytes.extend(im.data().iter().map(|&v| to_byte(v)));
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn p6_scaling_with_comment() {
        let mut bytes = b"P6\n# a comment\n1 1\n255\n".to_vec();
        bytes.extend([255, 0, 127]);
        let im = parse_pnm(Path::new("x.ppm"), &bytes).unwrap();
        assert_eq!(im.shape(), &[1, 1, 3]);
        assert_eq!(im.data(), &[1.0, 0.0, 127.0 / 255.0]);
    }

    #[test]
    fn sixteen_bit_samples() {
        let mut bytes = b"P5 2 1 65535\n".to_vec();
        bytes.extend([0xff, 0xff, 0x00, 0x00]);
        let im = parse_pnm(Path::new("x.pgm"), &bytes).unwrap();
        assert_eq!(im.data(), &[1.0, 0.0]);
    }

    #[test]
    fn ascii_variant_rejected() {
        let err = parse_pnm(Path::new("x.ppm"), b"P3\n1 1\n255\n0 0 0").unwrap_err();
        assert!(err.to_string().contains("unsupported format tag"), "{err}");
    }

    #[test]
    fn truncated_data() {
        let err = parse_pnm(Path::new("x.pgm"), b"P5\n2 2\n255\n\x01").unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }
}
