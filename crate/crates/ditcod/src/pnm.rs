//! Binary PPM (P6) and PGM (P5) readers/writers, 8-bit, values scaled to
//! [0,1]. Parse errors carry the byte offset of the failure.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn parse_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Parse { offset, msg: msg.into() }
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    fn skip_ws_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Result<&'a [u8]> {
        self.skip_ws_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(parse_err(start, "unexpected end of header"));
        }
        Ok(&self.bytes[start..self.pos])
    }

    fn number(&mut self) -> Result<usize> {
        let start = self.pos;
        let tok = self.token()?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err(start, "expected a decimal number"))
    }
}

fn parse_pnm(bytes: &[u8], magic: &[u8], channels: usize) -> Result<Tensor<f64>> {
    let mut hr = HeaderReader { bytes, pos: 0 };
    let m = hr.token()?;
    if m != magic {
        return Err(parse_err(0, format!("expected magic {}", String::from_utf8_lossy(magic))));
    }
    let w = hr.number()?;
    let h = hr.number()?;
    let maxval_pos = hr.pos;
    let maxval = hr.number()?;
    if maxval != 255 {
        return Err(parse_err(maxval_pos, format!("only maxval 255 supported, got {maxval}")));
    }
    // single whitespace byte separates header from payload
    hr.pos += 1;
    let expected = w * h * channels;
    let avail = bytes.len().saturating_sub(hr.pos);
    if avail < expected {
        return Err(parse_err(
            bytes.len(),
            format!("truncated payload: expected {expected} bytes, got {avail}"),
        ));
    }
    let payload = &bytes[hr.pos..hr.pos + expected];
    // interleaved bytes -> channel-major planes
    let mut data = vec![0.0; expected];
    for i in 0..w * h {
        for c in 0..channels {
            data[c * w * h + i] = payload[i * channels + c] as f64 / 255.0;
        }
    }
    Tensor::new(vec![channels, h, w], data)
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor<f64>> {
    parse_pnm(bytes, b"P6", 3)
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Tensor<f64>> {
    parse_pnm(bytes, b"P5", 1)
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_ppm(img: &Tensor<f64>) -> Result<Vec<u8>> {
    if img.rank() != 3 || img.shape()[0] != 3 {
        return Err(Error::shape(format!("PPM wants [3 x H x W], got {:?}", img.shape())));
    }
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for i in 0..w * h {
        for c in 0..3 {
            out.push(quantize(img.data()[c * w * h + i]));
        }
    }
    Ok(out)
}

pub fn encode_pgm(img: &Tensor<f64>) -> Result<Vec<u8>> {
    if img.rank() != 3 || img.shape()[0] != 1 {
        return Err(Error::shape(format!("PGM wants [1 x H x W], got {:?}", img.shape())));
    }
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(img.data().iter().map(|&v| quantize(v)));
    Ok(out)
}

pub fn load_image(path: &Path) -> Result<Tensor<f64>> {
    let bytes = std::fs::read(path)?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("ppm") => decode_ppm(&bytes),
        Some("pgm") => decode_pgm(&bytes),
        _ => Err(Error::data(format!("unsupported image extension: {}", path.display()))),
    }
}

pub fn save_image(path: &Path, img: &Tensor<f64>) -> Result<()> {
    let bytes = match path.extension().and_then(|e| e.to_str()) {
        Some("ppm") => encode_ppm(img)?,
        Some("pgm") => encode_pgm(img)?,
        _ => return Err(Error::data(format!("unsupported image extension: {}", path.display()))),
    };
    std::fs::write(path, bytes)?;
    Ok(())
}
