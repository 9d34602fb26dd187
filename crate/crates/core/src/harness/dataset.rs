//! Dataset ingestion (IDX) and the synthetic squares-vs-discs generator.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::train::Sample;
use crate::nn::Image8;

pub const SQUARE: usize = 0;
pub const DISC: usize = 1;

/// Appearance of generated shapes. Intensities are 8-bit levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeStyle {
    /// Background level range.
    pub background: (f64, f64),
    /// Foreground minus background, drawn from this range.
    pub contrast: (f64, f64),
    /// Standard deviation of additive Gaussian noise.
    pub noise: f64,
    /// Shape radius as a fraction of the image size.
    pub radius: (f64, f64),
}

impl Default for ShapeStyle {
    fn default() -> Self {
        Self {
            background: (15.0, 35.0),
            contrast: (20.0, 30.0),
            noise: 1.5,
            radius: (0.25, 0.42),
        }
    }
}

/// `count` grayscale `size`x`size` images, classes alternating square/disc.
pub fn generate_shapes(
    count: usize,
    size: usize,
    seed: u64,
    style: &ShapeStyle,
) -> Result<Vec<Sample>> {
    if count < 2 {
        return Err(Error::InvalidParameter("need at least 2 images".into()));
    }
    if size < 8 {
        return Err(Error::InvalidParameter(
            "image size must be at least 8".into(),
        ));
    }
    let ranges = [style.background, style.contrast, style.radius];
    if ranges
        .iter()
        .any(|(lo, hi)| !(lo <= hi) || !lo.is_finite() || !hi.is_finite())
        || !(style.noise >= 0.0)
        || style.radius.0 <= 0.0
        || style.radius.1 >= 0.5
    {
        return Err(Error::InvalidParameter("invalid shape style".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise =
        Normal::new(0.0, style.noise).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let s = size as f64;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let label = i % 2;
        let r = rng.gen_range(style.radius.0..=style.radius.1) * s;
        // The square shares the disc's bounding box.
        let cy = rng.gen_range(r..=s - r);
        let cx = rng.gen_range(r..=s - r);
        let bg = rng.gen_range(style.background.0..=style.background.1);
        let fg = bg + rng.gen_range(style.contrast.0..=style.contrast.1);
        let mut px = Vec::with_capacity(size * size);
        for y in 0..size {
            for x in 0..size {
                let cover = coverage(label, x as f64, y as f64, cx, cy, r);
                let v = bg + (fg - bg) * cover + noise.sample(&mut rng);
                px.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
        out.push(Sample {
            image: Image8::new(size, size, 1, px)?,
            label,
        });
    }
    Ok(out)
}

/// Fraction of the unit pixel at (x, y) covered by the shape, 4x4 supersampled.
fn coverage(label: usize, x: f64, y: f64, cx: f64, cy: f64, r: f64) -> f64 {
    let mut hits = 0;
    for sy in 0..4 {
        for sx in 0..4 {
            let py = y + (sy as f64 + 0.5) / 4.0;
            let px = x + (sx as f64 + 0.5) / 4.0;
            let inside = if label == SQUARE {
                (px - cx).abs() <= r && (py - cy).abs() <= r
            } else {
                (px - cx).powi(2) + (py - cy).powi(2) <= r * r
            };
            hits += usize::from(inside);
        }
    }
    hits as f64 / 16.0
}

const IDX_U8: u8 = 0x08;

fn read_idx(mut r: impl Read) -> Result<(Vec<usize>, Vec<u8>)> {
    let mut head = [0u8; 4];
    r.read_exact(&mut head)
        .map_err(|_| Error::Format("truncated IDX header".into()))?;
    if head[0] != 0 || head[1] != 0 {
        return Err(Error::Format("bad IDX magic".into()));
    }
    if head[2] != IDX_U8 {
        return Err(Error::Format(format!(
            "unsupported IDX element type {:#04x}",
            head[2]
        )));
    }
    let rank = head[3] as usize;
    if rank == 0 || rank > 4 {
        return Err(Error::Format(format!("bad IDX rank {rank}")));
    }
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)
            .map_err(|_| Error::Format("truncated IDX header".into()))?;
        dims.push(u32::from_be_bytes(b) as usize);
    }
    let len: usize = dims.iter().product();
    let mut data = Vec::new();
    r.read_to_end(&mut data)?;
    if data.len() != len {
        return Err(Error::Format(format!(
            "IDX body has {} bytes, header says {len}",
            data.len()
        )));
    }
    Ok((dims, data))
}

pub fn write_idx(dims: &[usize], data: &[u8], mut w: impl Write) -> Result<()> {
    w.write_all(&[0, 0, IDX_U8, dims.len() as u8])?;
    for &d in dims {
        w.write_all(&(d as u32).to_be_bytes())?;
    }
    w.write_all(data)?;
    Ok(())
}

/// Reads an IDX image file (`[N, H, W]` or `[N, H, W, C]`) and a matching label file.
pub fn load_idx(images: impl Read, labels: impl Read) -> Result<Vec<Sample>> {
    let (dims, pixels) = read_idx(images)?;
    let (n, h, w, c) = match dims.as_slice() {
        &[n, h, w] => (n, h, w, 1),
        &[n, h, w, c] => (n, h, w, c),
        other => {
            return Err(Error::Format(format!(
                "image IDX must be rank 3 or 4, got {other:?}"
            )))
        }
    };
    let (ldims, labels) = read_idx(labels)?;
    if ldims.len() != 1 {
        return Err(Error::Format("label IDX must be rank 1".into()));
    }
    if ldims[0] != n {
        return Err(Error::Format(format!("{n} images but {} labels", ldims[0])));
    }
    let stride = h * w * c;
    pixels
        .chunks(stride.max(1))
        .zip(labels)
        .map(|(px, label)| {
            Ok(Sample {
                image: Image8::new(h, w, c, px.to_vec())?,
                label: label as usize,
            })
        })
        .collect()
}

pub fn load_idx_files(images: &Path, labels: &Path) -> Result<Vec<Sample>> {
    let im = std::fs::File::open(images)?;
    let lb = std::fs::File::open(labels)?;
    load_idx(std::io::BufReader::new(im), std::io::BufReader::new(lb))
}

/// Writes samples as an IDX image/label pair (all images must share a shape).
pub fn save_idx(samples: &[Sample], images: impl Write, labels: impl Write) -> Result<()> {
    let first = samples.first().ok_or(Error::EmptyDataset)?;
    let (h, w, c) = (
        first.image.height(),
        first.image.width(),
        first.image.channels(),
    );
    let mut px = Vec::with_capacity(samples.len() * h * w * c);
    let mut lb = Vec::with_capacity(samples.len());
    for s in samples {
        if !s.image.same_shape(&first.image) {
            return Err(Error::Format("IDX needs equally shaped images".into()));
        }
        px.extend_from_slice(s.image.pixels());
        lb.push(u8::try_from(s.label).map_err(|_| Error::Format("label exceeds 255".into()))?);
    }
    let dims = if c == 1 {
        vec![samples.len(), h, w]
    } else {
        vec![samples.len(), h, w, c]
    };
    write_idx(&dims, &px, images)?;
    write_idx(&[samples.len()], &lb, labels)
}
