//! Netpbm grayscale (PGM) and colour (PPM) files with 8-bit samples.
//!
//! Binary (`P5`, `P6`) and plain (`P2`, `P3`) variants are read; binary
//! variants are written. Samples are normalized by the file's maxval, which
//! is 255 for everything this crate writes.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::imaging::{self, GrayImage, RgbImage};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PnmImage {
    Gray {
        width: usize,
        height: usize,
        maxval: u16,
        samples: Vec<u8>,
    },
    Rgb {
        width: usize,
        height: usize,
        maxval: u16,
        /// Interleaved R, G, B.
        samples: Vec<u8>,
    },
}

impl PnmImage {
    pub fn dimensions(&self) -> (usize, usize) {
        match self {
            PnmImage::Gray { width, height, .. } | PnmImage::Rgb { width, height, .. } => {
                (*width, *height)
            }
        }
    }

    /// Normalized grayscale view; colour files go through luma conversion.
    pub fn to_gray(&self) -> Result<GrayImage> {
        match self {
            PnmImage::Gray {
                width,
                height,
                maxval,
                samples,
            } => {
                let scale = f64::from(*maxval);
                GrayImage::new(
                    *width,
                    *height,
                    samples.iter().map(|&s| f64::from(s) / scale).collect(),
                )
            }
            PnmImage::Rgb {
                width,
                height,
                maxval,
                samples,
            } => {
                let scale = f64::from(*maxval);
                let pixels = samples
                    .chunks_exact(3)
                    .map(|c| {
                        [
                            f64::from(c[0]) / scale,
                            f64::from(c[1]) / scale,
                            f64::from(c[2]) / scale,
                        ]
                    })
                    .collect();
                imaging::to_gray(&RgbImage {
                    width: *width,
                    height: *height,
                    pixels,
                })
            }
        }
    }
}

struct Header<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Header<'a> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.data.len() {
            match self.data[self.pos] {
                b'#' => {
                    while self.pos < self.data.len() && self.data[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.data.len() && self.data[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Format(format!("expected {what} at byte {start}")));
        }
        std::str::from_utf8(&self.data[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("{what} out of range")))
    }
}

pub fn decode(data: &[u8]) -> Result<PnmImage> {
    if data.len() < 2 || data[0] != b'P' {
        return Err(Error::Format("missing netpbm magic number".into()));
    }
    let kind = data[1];
    if !matches!(kind, b'2' | b'3' | b'5' | b'6') {
        return Err(Error::Format(format!(
            "unsupported netpbm type P{}",
            kind as char
        )));
    }
    let mut h = Header { data, pos: 2 };
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval = h.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::Format("zero image dimension".into()));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!(
            "only 8-bit samples are supported, maxval {maxval}"
        )));
    }
    let channels = if matches!(kind, b'3' | b'6') { 3 } else { 1 };
    let count = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| Error::Format("image dimensions overflow".into()))?;

    let samples = if matches!(kind, b'5' | b'6') {
        // exactly one whitespace byte separates the header from the raster
        if h.pos >= data.len() || !data[h.pos].is_ascii_whitespace() {
            return Err(Error::Format("missing whitespace after header".into()));
        }
        let start = h.pos + 1;
        let raster = data
            .get(start..start + count)
            .ok_or_else(|| Error::Format(format!("raster truncated: need {count} bytes")))?;
        raster.to_vec()
    } else {
        let mut v = Vec::with_capacity(count);
        for _ in 0..count {
            v.push(h.number("sample")? as u8);
        }
        v
    };
    if samples.iter().any(|&s| usize::from(s) > maxval) {
        return Err(Error::Format("sample exceeds maxval".into()));
    }
    let maxval = maxval as u16;
    Ok(if channels == 3 {
        PnmImage::Rgb {
            width,
            height,
            maxval,
            samples,
        }
    } else {
        PnmImage::Gray {
            width,
            height,
            maxval,
            samples,
        }
    })
}

pub fn read(path: &Path) -> Result<PnmImage> {
    let data = fs::read(path)?;
    decode(&data).map_err(|e| e.context(path.display().to_string()))
}

pub fn read_gray(path: &Path) -> Result<GrayImage> {
    read(path)?
        .to_gray()
        .map_err(|e| e.context(path.display().to_string()))
}

/// Binary PGM bytes for a grayscale frame.
pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.to_u8());
    out
}

/// Binary PPM bytes; channel values are clamped and rounded to 8 bits.
pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    for px in &img.pixels {
        out.extend(px.iter().map(|&c| imaging::to_u8(c)));
    }
    out
}

pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_pgm(img))?;
    Ok(())
}

pub fn write_ppm(path: &Path, img: &RgbImage) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_ppm(img))?;
    Ok(())
}
