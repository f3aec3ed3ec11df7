//! 8-bit grayscale images, label maps, and their PGM carriers.
//!
//! The canonical output form is binary PGM (P5) with a three-line header
//! `P5\n{width} {height}\n255\n` and no comments. The reader also accepts
//! plain-text PGM (P2) and `#` comments, and reports every failure with
//! the byte offset where parsing stopped.

use thiserror::Error;

/// Row-major 8-bit grayscale image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

/// Row-major per-pixel class indices in `0..k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    labels: Vec<u8>,
    k: usize,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ImageError {
    #[error("image dimensions must be positive, got {width}x{height}")]
    EmptyDimensions { width: usize, height: usize },
    #[error("buffer holds {got} values, expected {expected} for {width}x{height}")]
    BufferSize {
        width: usize,
        height: usize,
        expected: usize,
        got: usize,
    },
    #[error("k must be in 1..=256, got {k}")]
    BadK { k: usize },
    #[error("label {label} at index {index} out of range for k = {k}")]
    LabelRange { label: u8, index: usize, k: usize },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PgmError {
    #[error("byte {offset}: not a PGM magic number (want P5 or P2)")]
    BadMagic { offset: usize },
    #[error("byte {offset}: malformed header: {what}")]
    Header { offset: usize, what: String },
    #[error("byte {offset}: maxval {maxval} exceeds 255")]
    MaxvalTooLarge { offset: usize, maxval: u64 },
    #[error("byte {offset}: pixel data truncated, got {got} of {expected} samples")]
    Truncated {
        offset: usize,
        expected: usize,
        got: usize,
    },
    #[error("byte {offset}: sample {value} exceeds maxval {maxval}")]
    SampleRange {
        offset: usize,
        value: u64,
        maxval: u64,
    },
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::EmptyDimensions { width, height });
        }
        let expected = width * height;
        if pixels.len() != expected {
            return Err(ImageError::BufferSize {
                width,
                height,
                expected,
                got: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Constant image of the given value.
    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self, ImageError> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize) -> usize {
        debug_assert!(x < self.width && y < self.height);
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[self.idx(x, y)]
    }

    pub fn set(&mut self, x: usize, y: usize, value: u8) {
        let i = self.idx(x, y);
        self.pixels[i] = value;
    }

    /// Gray-level counts over 0..=255.
    pub fn histogram(&self) -> [u64; 256] {
        let mut h = [0u64; 256];
        for &p in &self.pixels {
            h[p as usize] += 1;
        }
        h
    }
}

impl LabelMap {
    pub fn new(width: usize, height: usize, labels: Vec<u8>, k: usize) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::EmptyDimensions { width, height });
        }
        if k == 0 || k > 256 {
            return Err(ImageError::BadK { k });
        }
        let expected = width * height;
        if labels.len() != expected {
            return Err(ImageError::BufferSize {
                width,
                height,
                expected,
                got: labels.len(),
            });
        }
        for (index, &label) in labels.iter().enumerate() {
            if usize::from(label) >= k {
                return Err(ImageError::LabelRange { label, index, k });
            }
        }
        Ok(Self {
            width,
            height,
            labels,
            k,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        debug_assert!(x < self.width && y < self.height);
        self.labels[y * self.width + x]
    }

    /// Alias kept for symmetry with [`GrayImage::pixels`].
    pub fn pixels(&self) -> &[u8] {
        &self.labels
    }
}

/// Serializes to canonical binary PGM: `P5\n{w} {h}\n255\n` then row-major
/// bytes, no comments.
pub fn write_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

/// Parses binary (P5) or plain (P2) PGM with maxval up to 255.
pub fn read_pgm(bytes: &[u8]) -> Result<GrayImage, PgmError> {
    parse_pgm(bytes).map(|(img, _)| img)
}

/// Renders class indices as evenly spread gray levels.
///
/// Label `i` maps to `round(255 * i / (k - 1))`; a single-class map is all
/// black. The mapping is injective for every k up to 256.
pub fn label_map_to_image(lm: &LabelMap) -> GrayImage {
    let pixels = if lm.k == 1 {
        vec![0u8; lm.labels.len()]
    } else {
        let scale = 255.0 / (lm.k - 1) as f64;
        lm.labels
            .iter()
            .map(|&l| (f64::from(l) * scale).round() as u8)
            .collect()
    };
    GrayImage {
        width: lm.width,
        height: lm.height,
        pixels,
    }
}

/// Serializes a label map as a raw PGM whose samples are the class indices.
///
/// The header is the PGM header with maxval `k - 1` (clamped up to 1, since
/// PGM requires a positive maxval), so the file doubles as a very dark but
/// valid image. [`read_labels`] recovers k from the maxval.
pub fn write_labels(lm: &LabelMap) -> Vec<u8> {
    let maxval = (lm.k - 1).max(1);
    let mut out = format!("P5\n{} {}\n{}\n", lm.width, lm.height, maxval).into_bytes();
    out.extend_from_slice(&lm.labels);
    out
}

/// Reads a label map written by [`write_labels`]; `k = maxval + 1`.
pub fn read_labels(bytes: &[u8]) -> Result<LabelMap, PgmError> {
    let (img, maxval) = parse_pgm(bytes)?;
    let k = maxval as usize + 1;
    LabelMap::new(img.width, img.height, img.pixels, k).map_err(|e| PgmError::Header {
        offset: 0,
        what: e.to_string(),
    })
}

struct Scanner<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Scanner<'a> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b' ' | b'\t' | b'\r' | b'\n' | 0x0b | 0x0c => self.pos += 1,
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                _ => return,
            }
        }
    }

    /// Reads one ASCII decimal token; returns (value, offset of its first byte).
    fn read_uint(&mut self, what: &str) -> Result<(u64, usize), PgmError> {
        self.skip_space_and_comments();
        let start = self.pos;
        if start >= self.bytes.len() {
            return Err(PgmError::Header {
                offset: start,
                what: format!("unexpected end of input reading {what}"),
            });
        }
        let mut value: u64 = 0;
        let mut digits = 0usize;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            value = value
                .saturating_mul(10)
                .saturating_add(u64::from(self.bytes[self.pos] - b'0'));
            self.pos += 1;
            digits += 1;
        }
        if digits == 0 {
            return Err(PgmError::Header {
                offset: start,
                what: format!("expected digits for {what}"),
            });
        }
        Ok((value, start))
    }
}

fn parse_pgm(bytes: &[u8]) -> Result<(GrayImage, u64), PgmError> {
    let binary = match bytes.get(0..2) {
        Some(b"P5") => true,
        Some(b"P2") => false,
        _ => return Err(PgmError::BadMagic { offset: 0 }),
    };
    let mut sc = Scanner { bytes, pos: 2 };

    let (width, w_off) = sc.read_uint("width")?;
    let (height, h_off) = sc.read_uint("height")?;
    let (maxval, m_off) = sc.read_uint("maxval")?;
    if width == 0 {
        return Err(PgmError::Header {
            offset: w_off,
            what: "width must be positive".into(),
        });
    }
    if height == 0 {
        return Err(PgmError::Header {
            offset: h_off,
            what: "height must be positive".into(),
        });
    }
    if maxval > 255 {
        return Err(PgmError::MaxvalTooLarge {
            offset: m_off,
            maxval,
        });
    }
    if maxval == 0 {
        return Err(PgmError::Header {
            offset: m_off,
            what: "maxval must be positive".into(),
        });
    }
    let (width, height) = (width as usize, height as usize);
    let expected = width
        .checked_mul(height)
        .ok_or_else(|| PgmError::Header {
            offset: w_off,
            what: "dimensions overflow".into(),
        })?;

    let pixels = if binary {
        if sc.pos >= bytes.len() {
            return Err(PgmError::Truncated {
                offset: sc.pos,
                expected,
                got: 0,
            });
        }
        // Exactly one whitespace byte separates the header from the raster.
        sc.pos += 1;
        let data = &bytes[sc.pos..];
        if data.len() < expected {
            return Err(PgmError::Truncated {
                offset: bytes.len(),
                expected,
                got: data.len(),
            });
        }
        for (i, &b) in data[..expected].iter().enumerate() {
            if u64::from(b) > maxval {
                return Err(PgmError::SampleRange {
                    offset: sc.pos + i,
                    value: u64::from(b),
                    maxval,
                });
            }
        }
        data[..expected].to_vec()
    } else {
        let mut out = Vec::with_capacity(expected);
        for got in 0..expected {
            sc.skip_space_and_comments();
            if sc.pos >= bytes.len() {
                return Err(PgmError::Truncated {
                    offset: sc.pos,
                    expected,
                    got,
                });
            }
            let (value, off) = sc.read_uint("sample")?;
            if value > maxval {
                return Err(PgmError::SampleRange {
                    offset: off,
                    value,
                    maxval,
                });
            }
            out.push(value as u8);
        }
        out
    };

    Ok((
        GrayImage {
            width,
            height,
            pixels,
        },
        maxval,
    ))
}
