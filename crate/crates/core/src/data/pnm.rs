//! Binary PGM (P5) and PPM (P6) with 8-bit samples.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes `[1,H,W]` / `[H,W]` as PGM or `[3,H,W]` as PPM. Values are clamped to
/// `[0, 1]` and rounded to the nearest of 256 levels.
pub fn write_image(path: impl AsRef<Path>, image: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let (magic, channels, h, w) = match *image.shape() {
        [h, w] | [1, h, w] => ("P5", 1, h, w),
        [3, h, w] => ("P6", 3, h, w),
        ref s => return Err(format_err(path, format!("cannot encode a tensor of shape {s:?}"))),
    };
    let mut bytes = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    bytes.reserve(channels * h * w);
    let d = image.data();
    // planar [C,H,W] to interleaved rows
    for p in 0..h * w {
        for c in 0..channels {
            bytes.push(quantize(d[c * h * w + p]));
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Header tokenizer that skips whitespace and `#` comments.
struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn token(&mut self) -> Option<&[u8]> {
        loop {
            match self.bytes.get(self.pos)? {
                b'#' => {
                    while *self.bytes.get(self.pos)? != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(|c| !c.is_ascii_whitespace()) {
            self.pos += 1;
        }
        Some(&self.bytes[start..self.pos])
    }

    fn number(&mut self, path: &Path, what: &str) -> Result<usize> {
        let tok = self.token().ok_or_else(|| format_err(path, format!("truncated header before {what}")))?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format_err(path, format!("bad {what} {:?}", String::from_utf8_lossy(tok))))
    }
}

/// Reads a P5 file as `[1,H,W]` or a P6 file as `[3,H,W]`, scaled to `[0, 1]`.
pub fn read_image(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut header = Header { bytes: &bytes, pos: 0 };
    let channels = match header.token() {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        Some(other) => {
            return Err(format_err(
                path,
                format!("unsupported format {:?}; expected binary P5 or P6", String::from_utf8_lossy(other)),
            ))
        }
        None => return Err(format_err(path, "empty file")),
    };
    let w = header.number(path, "width")?;
    let h = header.number(path, "height")?;
    let maxval = header.number(path, "maxval")?;
    if w == 0 || h == 0 {
        return Err(format_err(path, format!("zero-sized image {w}x{h}")));
    }
    if maxval == 0 || maxval > 255 {
        return Err(format_err(path, format!("unsupported maxval {maxval}; only 8-bit data is read")));
    }
    // exactly one whitespace byte separates the header from the raster
    let start = header.pos + 1;
    let need = channels * h * w;
    let raster = bytes.get(start..).unwrap_or_default();
    if raster.len() < need {
        return Err(format_err(path, format!("raster has {} bytes, expected {need}", raster.len())));
    }
    let scale = maxval as f64;
    let mut data = vec![0.0; need];
    for p in 0..h * w {
        for c in 0..channels {
            data[c * h * w + p] = raster[p * channels + c] as f64 / scale;
        }
    }
    Tensor::new(&[channels, h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_with_comments() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.pgm");
        let mut bytes = b"P5\n# a comment\n2 # inline\n1\n255\n".to_vec();
        bytes.extend([0u8, 255]);
        fs::write(&path, bytes).unwrap();
        let t = read_image(&path).unwrap();
        assert_eq!(t.shape(), &[1, 1, 2]);
        assert_eq!(t.data(), &[0.0, 1.0]);
    }

    #[test]
    fn errors_name_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.pgm");
        fs::write(&path, b"P2\n1 1\n255\n0").unwrap();
        let err = read_image(&path).unwrap_err().to_string();
        assert!(err.contains("bad.pgm") && err.contains("P2"), "{err}");
        fs::write(&path, b"P5\n4 4\n255\n\x00\x01").unwrap();
        assert!(read_image(&path).unwrap_err().to_string().contains("expected 16"));
        fs::write(&path, b"P5\n1 1\n65535\n\x00\x00").unwrap();
        assert!(read_image(&path).is_err());
        assert!(matches!(read_image(dir.path().join("missing.pgm")), Err(Error::Io { .. })));
    }
}
