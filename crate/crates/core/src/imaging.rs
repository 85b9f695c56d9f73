//! Grayscale image container, Netpbm PGM codec and region-of-interest sampling.
//!
//! Both plain (`P2`) and raw (`P5`) PGM are decoded bit-exactly. Raw samples
//! wider than one byte are big-endian, as Netpbm prescribes, so decoding does
//! not depend on the host platform.

use std::io::Write;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PgmError {
    #[error("unsupported image format: magic {found:?} (expected P2 or P5)")]
    UnsupportedMagic { found: String },
    #[error("malformed PGM header at byte {offset}: {reason}")]
    MalformedHeader { offset: usize, reason: String },
    #[error("pixel count mismatch at byte {offset}: expected {expected} samples, found {found}")]
    PixelCountMismatch {
        offset: usize,
        expected: usize,
        found: usize,
    },
    #[error("pixel value {value} at byte {offset} exceeds max value {max_value}")]
    ValueOutOfRange {
        offset: usize,
        value: u32,
        max_value: u16,
    },
    #[error("invalid image: {0}")]
    Invalid(String),
    #[error("dimension mismatch: image is {image:?}, mask is {mask:?}")]
    DimensionMismatch {
        image: (usize, usize),
        mask: (usize, usize),
    },
    #[error("region of interest is empty")]
    EmptyRegion,
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

/// Physical pixel size in millimetres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spacing {
    pub sx: f64,
    pub sy: f64,
}

impl Default for Spacing {
    fn default() -> Self {
        Spacing { sx: 1.0, sy: 1.0 }
    }
}

impl Spacing {
    pub fn new(sx: f64, sy: f64) -> Result<Self, PgmError> {
        if !(sx > 0.0 && sy > 0.0 && sx.is_finite() && sy.is_finite()) {
            return Err(PgmError::Invalid(format!(
                "spacing must be positive and finite, got ({sx}, {sy})"
            )));
        }
        Ok(Spacing { sx, sy })
    }

    pub fn pixel_area(&self) -> f64 {
        self.sx * self.sy
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    max_value: u16,
    pixels: Vec<u16>,
    spacing: Spacing,
}

impl GrayImage {
    pub fn new(
        width: usize,
        height: usize,
        max_value: u16,
        pixels: Vec<u16>,
        spacing: Spacing,
    ) -> Result<Self, PgmError> {
        if max_value == 0 {
            return Err(PgmError::Invalid("max value must be at least 1".into()));
        }
        if pixels.len() != width * height {
            return Err(PgmError::Invalid(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        if let Some(&v) = pixels.iter().find(|&&v| v > max_value) {
            return Err(PgmError::Invalid(format!(
                "pixel value {v} exceeds max value {max_value}"
            )));
        }
        Ok(GrayImage {
            width,
            height,
            max_value,
            pixels,
            spacing,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn max_value(&self) -> u16 {
        self.max_value
    }

    pub fn pixels(&self) -> &[u16] {
        &self.pixels
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn with_spacing(mut self, spacing: Spacing) -> Self {
        self.spacing = spacing;
        self
    }

    /// Encode as raw PGM (`P5`).
    pub fn to_p5_bytes(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n{}\n", self.width, self.height, self.max_value).into_bytes();
        if self.max_value > 255 {
            out.reserve(self.pixels.len() * 2);
            for &p in &self.pixels {
                out.extend_from_slice(&p.to_be_bytes());
            }
        } else {
            out.extend(self.pixels.iter().map(|&p| p as u8));
        }
        out
    }

    pub fn write_p5(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_p5_bytes())
    }
}

/// Boolean region selector, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiMask {
    width: usize,
    height: usize,
    included: Vec<bool>,
}

impl RoiMask {
    pub fn new(width: usize, height: usize, included: Vec<bool>) -> Result<Self, PgmError> {
        if included.len() != width * height {
            return Err(PgmError::Invalid(format!(
                "mask has {} entries for {width}x{height}",
                included.len()
            )));
        }
        Ok(RoiMask {
            width,
            height,
            included,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn included(&self) -> &[bool] {
        &self.included
    }

    pub fn count(&self) -> usize {
        self.included.iter().filter(|&&b| b).count()
    }
}

/// Mask selecting every pixel of `image`.
pub fn full_mask(image: &GrayImage) -> RoiMask {
    RoiMask {
        width: image.width,
        height: image.height,
        included: vec![true; image.width * image.height],
    }
}

/// Included pixel values in row-major scan order.
pub fn sample_intensities(image: &GrayImage, mask: &RoiMask) -> Result<Vec<f64>, PgmError> {
    if image.width != mask.width || image.height != mask.height {
        return Err(PgmError::DimensionMismatch {
            image: (image.width, image.height),
            mask: (mask.width, mask.height),
        });
    }
    let sample: Vec<f64> = image
        .pixels
        .iter()
        .zip(&mask.included)
        .filter(|(_, &inc)| inc)
        .map(|(&p, _)| f64::from(p))
        .collect();
    if sample.is_empty() {
        return Err(PgmError::EmptyRegion);
    }
    Ok(sample)
}

pub fn load_pgm(path: &Path) -> Result<GrayImage, PgmError> {
    let bytes = std::fs::read(path).map_err(|e| PgmError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_pgm(&bytes)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_whitespace_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    /// Next ASCII unsigned integer token, or `None` at end of input.
    fn next_uint(&mut self, what: &str) -> Result<Option<(u32, usize)>, PgmError> {
        self.skip_whitespace_and_comments();
        if self.pos >= self.bytes.len() {
            return Ok(None);
        }
        let start = self.pos;
        let mut value: u64 = 0;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            value = value * 10 + u64::from(self.bytes[self.pos] - b'0');
            if value > u64::from(u32::MAX) {
                return Err(PgmError::MalformedHeader {
                    offset: start,
                    reason: format!("{what} is too large"),
                });
            }
            self.pos += 1;
        }
        if self.pos == start
            || (self.pos < self.bytes.len()
                && !self.bytes[self.pos].is_ascii_whitespace()
                && self.bytes[self.pos] != b'#')
        {
            return Err(PgmError::MalformedHeader {
                offset: self.pos,
                reason: format!("expected {what} as a decimal integer"),
            });
        }
        Ok(Some((value as u32, start)))
    }

    fn header_uint(&mut self, what: &str) -> Result<u32, PgmError> {
        self.next_uint(what)?.map(|(v, _)| v).ok_or(PgmError::MalformedHeader {
            offset: self.pos,
            reason: format!("unexpected end of data while reading {what}"),
        })
    }
}

/// Decode a PGM byte stream.
pub fn parse_pgm(bytes: &[u8]) -> Result<GrayImage, PgmError> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(PgmError::UnsupportedMagic {
            found: String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned(),
        });
    }
    let raw = match bytes[1] {
        b'2' => false,
        b'5' => true,
        _ => {
            return Err(PgmError::UnsupportedMagic {
                found: String::from_utf8_lossy(&bytes[..2]).into_owned(),
            })
        }
    };
    let mut cur = Cursor { bytes, pos: 2 };
    if cur.pos < bytes.len() && !bytes[cur.pos].is_ascii_whitespace() && bytes[cur.pos] != b'#' {
        return Err(PgmError::MalformedHeader {
            offset: 2,
            reason: "magic number must be followed by whitespace".into(),
        });
    }
    let width = cur.header_uint("width")? as usize;
    let height = cur.header_uint("height")? as usize;
    let max_offset = cur.pos;
    let max_value = cur.header_uint("max value")?;
    if !(1..=65535).contains(&max_value) {
        return Err(PgmError::MalformedHeader {
            offset: max_offset,
            reason: format!("max value {max_value} outside [1, 65535]"),
        });
    }
    let max_value = max_value as u16;
    let expected = width * height;
    let mut pixels = Vec::with_capacity(expected);

    if raw {
        // exactly one whitespace byte separates the header from the raster
        if cur.pos >= bytes.len() || !bytes[cur.pos].is_ascii_whitespace() {
            return Err(PgmError::MalformedHeader {
                offset: cur.pos,
                reason: "missing whitespace before raster".into(),
            });
        }
        let start = cur.pos + 1;
        let sample_bytes = if max_value > 255 { 2 } else { 1 };
        let body = &bytes[start..];
        if body.len() != expected * sample_bytes {
            return Err(PgmError::PixelCountMismatch {
                offset: start,
                expected,
                found: body.len() / sample_bytes,
            });
        }
        for i in 0..expected {
            let offset = start + i * sample_bytes;
            let v = if sample_bytes == 2 {
                u16::from_be_bytes([bytes[offset], bytes[offset + 1]])
            } else {
                u16::from(bytes[offset])
            };
            if v > max_value {
                return Err(PgmError::ValueOutOfRange {
                    offset,
                    value: u32::from(v),
                    max_value,
                });
            }
            pixels.push(v);
        }
    } else {
        while let Some((v, offset)) = cur.next_uint("pixel value")? {
            if v > u32::from(max_value) {
                return Err(PgmError::ValueOutOfRange {
                    offset,
                    value: v,
                    max_value,
                });
            }
            if pixels.len() == expected {
                return Err(PgmError::PixelCountMismatch {
                    offset,
                    expected,
                    found: expected + 1,
                });
            }
            pixels.push(v as u16);
        }
        if pixels.len() != expected {
            return Err(PgmError::PixelCountMismatch {
                offset: cur.pos,
                expected,
                found: pixels.len(),
            });
        }
    }
    GrayImage::new(width, height, max_value, pixels, Spacing::default())
}
