//! Grayscale glyph rasters: an IDX (ubyte) reader and a procedural stroke-digit
//! generator used when no IDX file is supplied.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, FormatError, Result};

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;

/// 8-bit grayscale raster, row-major with row 0 at the top.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Glyph {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Glyph {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "glyph {width}x{height} needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(Glyph {
            width,
            height,
            pixels,
        })
    }

    pub fn at(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.width + col]
    }

    /// A 28x28 handwriting-like rendering of `digit` with seeded jitter.
    pub fn procedural(digit: u8, seed: u64) -> Self {
        const SIZE: usize = 28;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((digit as u64) << 56));
        let strokes = digit_strokes(digit % 10);
        let scale = rng.random_range(0.8..1.05);
        let angle = rng.random_range(-0.2..0.2);
        let shear = rng.random_range(-0.25..0.25);
        let shift = [rng.random_range(-0.06..0.06), rng.random_range(-0.06..0.06)];
        let half_width = rng.random_range(0.9..1.6);
        let (s, c) = f64::sin_cos(angle);
        let map = |p: [f64; 2]| -> [f64; 2] {
            let x = p[0] - 0.5;
            let y = p[1] - 0.5;
            let x = x + shear * y;
            let (x, y) = (c * x - s * y, s * x + c * y);
            [
                (x * scale + 0.5 + shift[0]) * SIZE as f64,
                (y * scale + 0.5 + shift[1]) * SIZE as f64,
            ]
        };
        let segments: Vec<([f64; 2], [f64; 2])> = strokes
            .iter()
            .flat_map(|poly| poly.windows(2).map(|w| (map(w[0]), map(w[1]))).collect::<Vec<_>>())
            .collect();
        let mut pixels = vec![0u8; SIZE * SIZE];
        for row in 0..SIZE {
            for col in 0..SIZE {
                let p = [col as f64 + 0.5, row as f64 + 0.5];
                let d = segments
                    .iter()
                    .map(|&(a, b)| segment_distance(p, a, b))
                    .fold(f64::INFINITY, f64::min);
                let v = (1.0 - (d - half_width)).clamp(0.0, 1.0);
                pixels[row * SIZE + col] = (255.0 * v).round() as u8;
            }
        }
        Glyph {
            width: SIZE,
            height: SIZE,
            pixels,
        }
    }
}

/// Procedural glyphs with digits cycling pseudo-randomly.
pub fn procedural_digits(count: usize, seed: u64) -> Vec<Glyph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let d = rng.random_range(0..10u8);
            let s = rng.random::<u64>();
            Glyph::procedural(d, s)
        })
        .collect()
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (ap[0] - t * ab[0]).hypot(ap[1] - t * ab[1])
}

fn ellipse(c: [f64; 2], rx: f64, ry: f64) -> Vec<[f64; 2]> {
    (0..=20)
        .map(|k| {
            let t = 2.0 * PI * k as f64 / 20.0;
            [c[0] + rx * t.cos(), c[1] + ry * t.sin()]
        })
        .collect()
}

/// Stroke polylines in the unit box (x right, y down).
fn digit_strokes(digit: u8) -> Vec<Vec<[f64; 2]>> {
    match digit {
        0 => vec![ellipse([0.5, 0.5], 0.26, 0.37)],
        1 => vec![vec![[0.38, 0.25], [0.52, 0.12], [0.52, 0.88]]],
        2 => vec![vec![
            [0.26, 0.3],
            [0.36, 0.15],
            [0.56, 0.12],
            [0.72, 0.22],
            [0.72, 0.4],
            [0.26, 0.88],
            [0.78, 0.88],
        ]],
        3 => vec![vec![
            [0.25, 0.15],
            [0.7, 0.15],
            [0.45, 0.45],
            [0.7, 0.6],
            [0.7, 0.8],
            [0.5, 0.9],
            [0.25, 0.82],
        ]],
        4 => vec![vec![[0.65, 0.88], [0.65, 0.12], [0.22, 0.65], [0.8, 0.65]]],
        5 => vec![vec![
            [0.75, 0.12],
            [0.3, 0.12],
            [0.28, 0.45],
            [0.6, 0.42],
            [0.75, 0.6],
            [0.7, 0.82],
            [0.45, 0.9],
            [0.25, 0.82],
        ]],
        6 => vec![vec![
            [0.7, 0.15],
            [0.45, 0.2],
            [0.3, 0.45],
            [0.3, 0.75],
            [0.5, 0.9],
            [0.7, 0.78],
            [0.7, 0.58],
            [0.5, 0.5],
            [0.3, 0.6],
        ]],
        7 => vec![vec![[0.22, 0.12], [0.78, 0.12], [0.42, 0.88]]],
        8 => vec![ellipse([0.5, 0.3], 0.17, 0.17), ellipse([0.5, 0.68], 0.21, 0.2)],
        _ => vec![
            ellipse([0.5, 0.33], 0.2, 0.2),
            vec![[0.7, 0.35], [0.6, 0.88]],
        ],
    }
}

/// Parses an IDX image file (`magic 0x00000803`, big-endian dimensions).
pub fn parse_idx_images(bytes: &[u8]) -> Result<Vec<Glyph>> {
    const HEADER: usize = 16;
    if bytes.len() < HEADER {
        return Err(FormatError::Truncated {
            expected: HEADER,
            actual: bytes.len(),
        }
        .into());
    }
    let word = |i: usize| u32::from_be_bytes([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]);
    let magic = word(0);
    if magic != IDX_IMAGE_MAGIC {
        return Err(FormatError::BadMagic {
            expected: IDX_IMAGE_MAGIC.to_be_bytes(),
            found: magic.to_be_bytes(),
        }
        .into());
    }
    let count = word(4) as usize;
    let rows = word(8) as usize;
    let cols = word(12) as usize;
    let per = rows * cols;
    let expected = HEADER + count * per;
    if bytes.len() < expected {
        return Err(FormatError::Truncated {
            expected,
            actual: bytes.len(),
        }
        .into());
    }
    Ok((0..count)
        .map(|k| Glyph {
            width: cols,
            height: rows,
            pixels: bytes[HEADER + k * per..HEADER + (k + 1) * per].to_vec(),
        })
        .collect())
}

pub fn read_idx_images(path: &Path) -> Result<Vec<Glyph>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx_images(&bytes)
}

/// Serializes glyphs of equal size as an IDX image file.
pub fn encode_idx_images(glyphs: &[Glyph]) -> Result<Vec<u8>> {
    let (rows, cols) = glyphs.first().map(|g| (g.height, g.width)).unwrap_or((0, 0));
    if glyphs.iter().any(|g| g.height != rows || g.width != cols) {
        return Err(Error::ShapeMismatch("IDX glyphs must share one size".into()));
    }
    let mut out = Vec::with_capacity(16 + glyphs.len() * rows * cols);
    for w in [IDX_IMAGE_MAGIC, glyphs.len() as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&w.to_be_bytes());
    }
    for g in glyphs {
        out.extend_from_slice(&g.pixels);
    }
    Ok(out)
}
