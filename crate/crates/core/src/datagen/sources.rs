//! Source rasters: the `GRAY` container and a synthetic digit generator.
//!
//! `GRAY` layout: magic `"GRAY"`, count u64 (LE), then per image one class
//! byte followed by 28×28 pixel bytes, row-major.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::canvas::{SourceImage, ITEM_SIZE};

const MAGIC: &[u8; 4] = b"GRAY";

pub fn encode_gray(images: &[SourceImage]) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + images.len() * (1 + ITEM_SIZE * ITEM_SIZE));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(images.len() as u64).to_le_bytes());
    for im in images {
        out.push(im.label);
        out.extend_from_slice(&im.pixels);
    }
    out
}

pub fn decode_gray(bytes: &[u8]) -> Result<Vec<SourceImage>> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(Error::Format("not a GRAY image container".into()));
    }
    let count = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes")) as usize;
    let rec = 1 + ITEM_SIZE * ITEM_SIZE;
    let body = &bytes[12..];
    if body.len() != count.saturating_mul(rec) {
        return Err(Error::Format(format!("GRAY container declares {count} images but holds {} bytes", body.len())));
    }
    Ok(body.chunks_exact(rec).map(|c| SourceImage { label: c[0], pixels: c[1..].to_vec() }).collect())
}

pub fn write_gray(path: &Path, images: &[SourceImage]) -> Result<()> {
    fs::write(path, encode_gray(images))?;
    Ok(())
}

pub fn read_gray(path: &Path) -> Result<Vec<SourceImage>> {
    decode_gray(&fs::read(path)?)
}

// Seven-segment strokes in a 12×18 box: top, upper right, lower right,
// bottom, lower left, upper left, middle.
const SEGMENTS: [((f64, f64), (f64, f64)); 7] = [
    ((0.0, 0.0), (1.0, 0.0)),
    ((1.0, 0.0), (1.0, 0.5)),
    ((1.0, 0.5), (1.0, 1.0)),
    ((0.0, 1.0), (1.0, 1.0)),
    ((0.0, 0.5), (0.0, 1.0)),
    ((0.0, 0.0), (0.0, 0.5)),
    ((0.0, 0.5), (1.0, 0.5)),
];

const DIGITS: [&[usize]; 10] = [
    &[0, 1, 2, 3, 4, 5],
    &[1, 2],
    &[0, 1, 6, 4, 3],
    &[0, 1, 6, 2, 3],
    &[5, 6, 1, 2],
    &[0, 5, 6, 2, 3],
    &[0, 5, 6, 4, 3, 2],
    &[0, 1, 2],
    &[0, 1, 2, 3, 4, 5, 6],
    &[0, 1, 2, 3, 5, 6],
];

fn segment_distance(px: f64, py: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 { 0.0 } else { (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0) };
    let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
    ((px - qx).powi(2) + (py - qy).powi(2)).sqrt()
}

/// Renders one jittered seven-segment glyph of `digit`.
pub fn render_digit<R: Rng + ?Sized>(digit: u8, rng: &mut R) -> SourceImage {
    let scale = rng.gen_range(0.85..1.1);
    let (w, h) = (12.0 * scale, 18.0 * scale);
    let cx = 14.0 + rng.gen_range(-2.0..2.0);
    let cy = 14.0 + rng.gen_range(-2.0..2.0);
    let slant = rng.gen_range(-0.25..0.25);
    let thickness = rng.gen_range(1.3..2.3);
    let mut jitter = || (rng.gen_range(-0.7..0.7), rng.gen_range(-0.7..0.7));
    let place = |(x, y): (f64, f64), (jx, jy): (f64, f64)| {
        let yy = cy + (y - 0.5) * h + jy;
        (cx + (x - 0.5) * w + slant * (cy - yy) + jx, yy)
    };
    let strokes: Vec<((f64, f64), (f64, f64))> = DIGITS[digit as usize % 10]
        .iter()
        .map(|&s| {
            let (a, b) = SEGMENTS[s];
            (place(a, jitter()), place(b, jitter()))
        })
        .collect();
    let mut pixels = vec![0u8; ITEM_SIZE * ITEM_SIZE];
    for r in 0..ITEM_SIZE {
        for c in 0..ITEM_SIZE {
            let (px, py) = (c as f64, r as f64);
            let d = strokes.iter().map(|&(a, b)| segment_distance(px, py, a, b)).fold(f64::INFINITY, f64::min);
            let v = (thickness + 0.5 - d).clamp(0.0, 1.0);
            pixels[r * ITEM_SIZE + c] = (v * 255.0).round() as u8;
        }
    }
    SourceImage { label: digit % 10, pixels }
}

/// `n` synthetic digits with labels cycling through 0..9, fully determined by `seed`.
pub fn synthetic_digits(n: usize, seed: u64) -> Vec<SourceImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|i| render_digit((i % 10) as u8, &mut rng)).collect()
}
