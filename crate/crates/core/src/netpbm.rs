//! Binary PGM (P5) and PPM (P6) with maxval 255.

use std::path::Path;

use crate::error::{Error, Result};

/// 8-bit grayscale raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Gray {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

/// 8-bit RGB raster, pixels interleaved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rgb {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Gray {
    /// Quantizes `values` (row-major `height×width`) after dividing by `scale`.
    pub fn from_values(values: &[f64], width: usize, height: usize, scale: f64) -> Self {
        let s = if scale > 0.0 { scale } else { 1.0 };
        Gray {
            width,
            height,
            pixels: values.iter().map(|&v| quantize(v / s)).collect(),
        }
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn upsample(&self, factor: usize) -> Self {
        let (w, h) = (self.width * factor, self.height * factor);
        let mut pixels = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                pixels.push(self.pixels[(y / factor) * self.width + x / factor]);
            }
        }
        Gray {
            width: w,
            height: h,
            pixels,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn to_rgb(&self) -> Rgb {
        Rgb {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().flat_map(|&p| [p, p, p]).collect(),
        }
    }
}

impl Rgb {
    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        if x < self.width && y < self.height {
            let o = 3 * (y * self.width + x);
            self.pixels[o..o + 3].copy_from_slice(&rgb);
        }
    }

    /// One-pixel rectangle outline with inclusive corners.
    pub fn outline(&mut self, x0: usize, y0: usize, x1: usize, y1: usize, rgb: [u8; 3]) {
        for x in x0..=x1 {
            self.set(x, y0, rgb);
            self.set(x, y1, rgb);
        }
        for y in y0..=y1 {
            self.set(x0, y, rgb);
            self.set(x1, y, rgb);
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Strict reader: single-space/newline separated header, no comments, maxval 255,
/// exact payload length.
pub fn parse(bytes: &[u8]) -> Result<(String, usize, usize, Vec<u8>)> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos == start || pos >= bytes.len() {
            return Err(Error::Format("truncated netpbm header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        pos += 1; // exactly one whitespace byte
    }
    let magic = fields[0].clone();
    let channels = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(Error::Format(format!("unsupported netpbm magic `{other}`"))),
    };
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Format(format!("bad netpbm number `{s}`")))
    };
    let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval != 255 {
        return Err(Error::Format(format!("maxval {maxval} != 255")));
    }
    let payload = &bytes[pos..];
    if payload.len() != w * h * channels {
        return Err(Error::Length {
            expected: w * h * channels,
            found: payload.len(),
        });
    }
    Ok((magic, w, h, payload.to_vec()))
}
