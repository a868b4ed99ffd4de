//! Binary PGM (P5) and PPM (P6) image files with 8-bit samples.
//!
//! Byte layout on write: the magic (`P5` or `P6`), one `\n`, `<width>
//! <height>`, one `\n`, `255`, one `\n`, then raw row-major samples (one
//! byte per pixel for PGM, three for PPM). Readers additionally accept
//! `#` comments and arbitrary whitespace between header tokens.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// 8-bit grayscale image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::Data(format!(
                "pixel buffer length {} != {height}x{width}",
                pixels.len()
            )));
        }
        Ok(GrayImage {
            height,
            width,
            pixels,
        })
    }

    /// Converts to a real-valued array in `[0, 1]`.
    pub fn to_array<T: Real>(&self) -> Array2<T> {
        Array2::from_shape_fn((self.height, self.width), |(h, w)| {
            T::of(self.pixels[h * self.width + w] as f64 / 255.0)
        })
    }

    /// Quantizes a real-valued array to 8 bits, clamping to `[0, 1]`.
    pub fn from_array<T: Real>(values: &Array2<T>) -> Self {
        let (h, w) = values.dim();
        let pixels = values
            .iter()
            .map(|v| {
                let x = v.to_f64_lossy().clamp(0.0, 1.0);
                (x * 255.0).round() as u8
            })
            .collect();
        GrayImage {
            height: h,
            width: w,
            pixels,
        }
    }
}

fn header_tokens(bytes: &[u8]) -> Result<(String, Vec<usize>, usize)> {
    // Returns (magic, [width, height, maxval], offset of raster data).
    if bytes.len() < 2 {
        return Err(Error::Data("image file too short".into()));
    }
    let magic = String::from_utf8_lossy(&bytes[..2]).to_string();
    let mut values = Vec::new();
    let mut pos = 2;
    while values.len() < 3 {
        // Skip whitespace and comments.
        while pos < bytes.len() {
            match bytes[pos] {
                b' ' | b'\t' | b'\r' | b'\n' => pos += 1,
                b'#' => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Data("malformed image header".into()));
        }
        let tok = std::str::from_utf8(&bytes[start..pos]).unwrap();
        values.push(
            tok.parse::<usize>()
                .map_err(|_| Error::Data(format!("bad header number `{tok}`")))?,
        );
    }
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::Data("missing separator before raster data".into()));
    }
    pos += 1;
    Ok((magic, values, pos))
}

/// Reads a P5 (grayscale) or P6 (color, averaged to gray) file.
pub fn read_gray(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let (magic, dims, offset) =
        header_tokens(&bytes).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let (width, height, maxval) = (dims[0], dims[1], dims[2]);
    if maxval != 255 {
        return Err(Error::Data(format!(
            "{}: only 8-bit images are supported (maxval {maxval})",
            path.display()
        )));
    }
    let n = width * height;
    match magic.as_str() {
        "P5" => {
            if bytes.len() - offset < n {
                return Err(Error::Data(format!("{}: truncated raster", path.display())));
            }
            GrayImage::new(height, width, bytes[offset..offset + n].to_vec())
        }
        "P6" => {
            if bytes.len() - offset < 3 * n {
                return Err(Error::Data(format!("{}: truncated raster", path.display())));
            }
            let pixels = bytes[offset..offset + 3 * n]
                .chunks_exact(3)
                .map(|p| ((p[0] as u16 + p[1] as u16 + p[2] as u16) / 3) as u8)
                .collect();
            GrayImage::new(height, width, pixels)
        }
        other => Err(Error::Data(format!(
            "{}: unsupported image magic `{other}`",
            path.display()
        ))),
    }
}

pub fn write_pgm(path: impl AsRef<Path>, image: &GrayImage) -> Result<()> {
    let mut out = format!("P5\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend_from_slice(&image.pixels);
    fs::write(path, out)?;
    Ok(())
}

/// Writes a binary mask as a PGM with values 0 and 255.
pub fn write_mask_pgm(path: impl AsRef<Path>, mask: &Array2<bool>) -> Result<()> {
    let (h, w) = mask.dim();
    let pixels = mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
    write_pgm(path, &GrayImage::new(h, w, pixels)?)
}
