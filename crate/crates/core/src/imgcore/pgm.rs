//! Portable graymap (P2 / P5) codec.

use std::path::Path;

use super::raster::{BinaryMask, GrayImage};
use crate::error::{Error, Result};

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::Decode {
            offset: self.pos,
            msg: msg.into(),
        })
    }

    /// Skips whitespace and `#` comments.
    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn uint(&mut self, what: &str) -> Result<usize> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            self.pos = start;
            return self.err(format!("expected {what}"));
        }
        let s = std::str::from_utf8(&self.bytes[start..self.pos]).expect("ascii digits");
        s.parse::<usize>().or_else(|_| {
            self.pos = start;
            self.err(format!("{what} out of range"))
        })
    }
}

/// Decodes a plain (P2) or binary (P5) graymap into `[0, 1]` intensities.
pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let mut cur = Cursor { bytes, pos: 0 };
    let binary = match bytes.get(..2) {
        Some(b"P2") => false,
        Some(b"P5") => true,
        _ => return cur.err("bad magic, expected P2 or P5"),
    };
    cur.pos = 2;
    if cur.pos < bytes.len() && !bytes[cur.pos].is_ascii_whitespace() && bytes[cur.pos] != b'#' {
        return cur.err("missing whitespace after magic");
    }
    let width = cur.uint("width")?;
    let height = cur.uint("height")?;
    let maxval_at = cur.pos;
    let maxval = cur.uint("maxval")?;
    if width == 0 || height == 0 {
        return cur.err("zero image dimension");
    }
    if maxval == 0 || maxval > 65535 {
        cur.pos = maxval_at;
        cur.skip_ws();
        return cur.err(format!("maxval {maxval} outside 1..=65535"));
    }
    let n = width.checked_mul(height).ok_or(Error::Decode {
        offset: cur.pos,
        msg: "image too large".into(),
    })?;
    let scale = maxval as f64;
    let mut data = Vec::with_capacity(n);

    if binary {
        if cur.pos >= bytes.len() || !bytes[cur.pos].is_ascii_whitespace() {
            return cur.err("expected single whitespace before raster");
        }
        cur.pos += 1;
        let wide = maxval > 255;
        let need = if wide { 2 * n } else { n };
        if bytes.len() - cur.pos < need {
            cur.pos = bytes.len();
            return cur.err(format!("truncated raster, need {need} bytes"));
        }
        for i in 0..n {
            let v = if wide {
                u16::from_be_bytes([bytes[cur.pos + 2 * i], bytes[cur.pos + 2 * i + 1]]) as usize
            } else {
                bytes[cur.pos + i] as usize
            };
            if v > maxval {
                cur.pos += if wide { 2 * i } else { i };
                return cur.err(format!("sample {v} exceeds maxval {maxval}"));
            }
            data.push(v as f64 / scale);
        }
    } else {
        for _ in 0..n {
            let at = cur.pos;
            let v = cur.uint("sample")?;
            if v > maxval {
                cur.pos = at;
                cur.skip_ws();
                return cur.err(format!("sample {v} exceeds maxval {maxval}"));
            }
            data.push(v as f64 / scale);
        }
    }
    GrayImage::from_intensities(width, height, data)
}

/// Encodes as binary P5 with maxval 255; each value is `round(v * 255)`.
pub fn encode_pgm(image: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.reserve(image.len());
    out.extend(image.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

/// Masks are written as 0 / 255.
pub fn encode_mask_pgm(mask: &BinaryMask) -> Vec<u8> {
    encode_pgm(&mask.to_f64())
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    decode_pgm(&std::fs::read(path)?)
}

pub fn write_pgm(path: impl AsRef<Path>, image: &GrayImage) -> Result<()> {
    std::fs::write(path, encode_pgm(image))?;
    Ok(())
}
