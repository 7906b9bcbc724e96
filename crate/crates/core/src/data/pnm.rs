//! Binary portable graymap (P5) and pixmap (P6) with 8-bit samples.

use std::fs;
use std::path::Path;

use crate::error::{Error, PnmError, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Decoded raster: interleaved 8-bit samples, `channels` is 1 or 3.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
}

impl Raster {
    /// Planar `3×H×W` tensor in [0,1]; grayscale is replicated across the
    /// three channels.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let (h, w, c) = (self.height, self.width, self.channels);
        let inv = T::lit(1.0 / 255.0);
        Tensor::from_fn(&[3, h, w], |i| {
            let ch = i / (h * w);
            let p = i % (h * w);
            let src = if c == 1 { p } else { p * 3 + ch };
            T::lit(self.pixels[src] as f64) * inv
        })
    }

    /// Quantises a `C×H×W` tensor (C = 1 or 3) with values in [0,1].
    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Result<Self> {
        let [c, h, w] = t.dims3()?;
        if c != 1 && c != 3 {
            return Err(Error::contract(format!("pnm needs 1 or 3 channels, got {c}")));
        }
        let mut pixels = vec![0u8; c * h * w];
        for ch in 0..c {
            for p in 0..h * w {
                pixels[p * c + ch] = quantize(t.data()[ch * h * w + p].as_f64());
            }
        }
        Ok(Self { width: w, height: h, channels: c, pixels })
    }

    pub fn encode(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn skip_space_and_comments(bytes: &[u8], pos: &mut usize) {
    while *pos < bytes.len() {
        match bytes[*pos] {
            b'#' => {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
            }
            b if b.is_ascii_whitespace() => *pos += 1,
            _ => break,
        }
    }
}

fn header_int(bytes: &[u8], pos: &mut usize, what: &str) -> Result<u32, PnmError> {
    skip_space_and_comments(bytes, pos);
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if start == *pos {
        return Err(PnmError::Header(format!("missing {what}")));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .unwrap()
        .parse()
        .map_err(|_| PnmError::Header(format!("{what} out of range")))
}

pub fn decode(bytes: &[u8]) -> Result<Raster, PnmError> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        Some(m) => return Err(PnmError::BadMagic(String::from_utf8_lossy(m).into_owned())),
        None => return Err(PnmError::BadMagic(String::from_utf8_lossy(bytes).into_owned())),
    };
    let mut pos = 2;
    let width = header_int(bytes, &mut pos, "width")? as usize;
    let height = header_int(bytes, &mut pos, "height")? as usize;
    let maxval = header_int(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(PnmError::UnsupportedMaxval(maxval));
    }
    if width == 0 || height == 0 {
        return Err(PnmError::Header(format!("empty image {width}x{height}")));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(PnmError::Header("missing whitespace after maxval".into())),
    }
    let expected = width * height * channels;
    let payload = &bytes[pos..];
    if payload.len() < expected {
        return Err(PnmError::Truncated { expected, found: payload.len() });
    }
    Ok(Raster { width, height, channels, pixels: payload[..expected].to_vec() })
}

pub fn read(path: impl AsRef<Path>) -> Result<Raster> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    decode(&bytes).map_err(|source| Error::Pnm { path: path.to_owned(), source })
}

/// Loads a P5/P6 file as a `3×H×W` tensor in [0,1].
pub fn load_image<T: Real>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    Ok(read(path)?.to_tensor())
}

pub fn write(path: impl AsRef<Path>, raster: &Raster) -> Result<()> {
    fs::write(path, raster.encode())?;
    Ok(())
}
