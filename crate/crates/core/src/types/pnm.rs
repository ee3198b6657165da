//! Binary PGM (`P5`) and PPM (`P6`) codecs, maxval 255.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::types::{Mask, Tensor};

pub struct Pnm {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
}

pub fn encode_pnm(channels: usize, height: usize, width: usize, pixels: &[u8]) -> Vec<u8> {
    let magic = if channels == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

pub fn decode_pnm(bytes: &[u8]) -> Result<Pnm> {
    let bad = |r: &str| Error::format("PGM/PPM image", r.to_string());
    let mut pos = 0usize;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        // whitespace and comments
        while pos < bytes.len() {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else if bytes[pos].is_ascii_whitespace() {
                pos += 1;
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ascii header"))?);
    }
    // exactly one whitespace byte separates header and raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(bad("missing raster separator"));
    }
    pos += 1;
    let channels = match fields[0] {
        "P5" => 1,
        "P6" => 3,
        other => return Err(bad(&format!("unsupported magic {other}"))),
    };
    let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let width = parse(fields[1])?;
    let height = parse(fields[2])?;
    if parse(fields[3])? != 255 {
        return Err(bad("maxval must be 255"));
    }
    let n = channels * width * height;
    if bytes.len() - pos != n {
        return Err(bad(&format!(
            "raster has {} bytes, expected {n}",
            bytes.len() - pos
        )));
    }
    Ok(Pnm {
        channels,
        height,
        width,
        pixels: bytes[pos..].to_vec(),
    })
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes a `C×H×W` image tensor (C ∈ {1, 3}) as PGM or PPM.
pub fn encode_image<F: Scalar>(image: &Tensor<F>) -> Result<Vec<u8>> {
    let (c, h, w) = chw(image)?;
    let data = image.data();
    let mut px = Vec::with_capacity(c * h * w);
    for i in 0..h * w {
        for ch in 0..c {
            px.push(to_byte(data[ch * h * w + i].as_f64()));
        }
    }
    Ok(encode_pnm(c, h, w, &px))
}

pub fn decode_image(bytes: &[u8]) -> Result<Tensor<f32>> {
    let p = decode_pnm(bytes)?;
    let hw = p.height * p.width;
    let mut data = vec![0f32; p.channels * hw];
    for i in 0..hw {
        for ch in 0..p.channels {
            data[ch * hw + i] = p.pixels[i * p.channels + ch] as f32 / 255.0;
        }
    }
    Tensor::new(vec![p.channels, p.height, p.width], data)
}

/// Masks are stored as PGM with 0 / 255.
pub fn encode_mask(mask: &Mask) -> Vec<u8> {
    let px: Vec<u8> = mask.bits().iter().map(|&b| if b { 255 } else { 0 }).collect();
    encode_pnm(1, mask.height(), mask.width(), &px)
}

/// Any nonzero grey level decodes as foreground.
pub fn decode_mask(bytes: &[u8]) -> Result<Mask> {
    let p = decode_pnm(bytes)?;
    if p.channels != 1 {
        return Err(Error::format("mask", "masks must be single-channel PGM"));
    }
    Mask::new(p.height, p.width, p.pixels.iter().map(|&v| v != 0).collect())
}

pub fn read_image(path: &Path) -> Result<Tensor<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes)
}

pub fn write_image<F: Scalar>(path: &Path, image: &Tensor<F>) -> Result<()> {
    fs::write(path, encode_image(image)?).map_err(|e| Error::io(path, e))
}

pub fn read_mask(path: &Path) -> Result<Mask> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_mask(&bytes)
}

pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    fs::write(path, encode_mask(mask)).map_err(|e| Error::io(path, e))
}

pub(crate) fn chw<F: Scalar>(image: &Tensor<F>) -> Result<(usize, usize, usize)> {
    match *image.dims() {
        [c, h, w] if c == 1 || c == 3 => Ok((c, h, w)),
        ref d => Err(Error::Shape(format!("image must be C×H×W with C∈{{1,3}}, got {d:?}"))),
    }
}
