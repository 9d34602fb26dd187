use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Per-pixel importance at input resolution, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl AttributionMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidParameter(
                "map extents must be positive".into(),
            ));
        }
        if values.len() != height * width {
            return Err(Error::ShapeMismatch {
                expected: vec![height, width],
                got: vec![values.len()],
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("attribution map"));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            values: vec![value; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn is_constant(&self) -> bool {
        let (lo, hi) = self.min_max();
        lo == hi
    }

    /// True when every value lies in `[0, 1]`.
    pub fn is_normalized(&self) -> bool {
        self.values.iter().all(|v| (0.0..=1.0).contains(v))
    }

    /// Indices of all maximal elements.
    pub fn argmax_set(&self) -> Vec<usize> {
        let (_, hi) = self.min_max();
        (0..self.values.len())
            .filter(|&i| self.values[i] == hi)
            .collect()
    }

    /// Min-max rescale to `[0, 1]`; constant maps become all zeros.
    pub fn normalized(&self) -> Result<Self> {
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("attribution map"));
        }
        let (lo, hi) = self.min_max();
        let values = if hi > lo {
            let span = hi - lo;
            self.values
                .iter()
                .map(|&v| if v == hi { 1.0 } else { (v - lo) / span })
                .collect()
        } else {
            vec![0.0; self.values.len()]
        };
        Ok(Self {
            height: self.height,
            width: self.width,
            values,
        })
    }

    /// 8-bit preview of the normalized map.
    pub fn to_preview(&self) -> Result<crate::nn::Image8> {
        let n = self.normalized()?;
        let px = n.values.iter().map(|v| (v * 255.0).round() as u8).collect();
        crate::nn::Image8::new(self.height, self.width, 1, px)
    }
}

/// Raw map grid: `b"AMAP"`, `u32` height, `u32` width, then row-major `f32`
/// values, all little-endian.
pub const GRID_MAGIC: &[u8; 4] = b"AMAP";

pub fn write_grid(map: &AttributionMap, mut w: impl Write) -> Result<()> {
    w.write_all(GRID_MAGIC)?;
    w.write_all(&(map.height as u32).to_le_bytes())?;
    w.write_all(&(map.width as u32).to_le_bytes())?;
    for &v in &map.values {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_grid(mut r: impl Read) -> Result<AttributionMap> {
    let mut head = [0u8; 12];
    r.read_exact(&mut head)
        .map_err(|_| Error::Format("truncated map header".into()))?;
    if &head[..4] != GRID_MAGIC {
        return Err(Error::Format("bad map magic".into()));
    }
    let h = u32::from_le_bytes(head[4..8].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() != h * w * 4 {
        return Err(Error::Format(format!(
            "map body has {} bytes, expected {}",
            body.len(),
            h * w * 4
        )));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    AttributionMap::new(h, w, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalize_examples() {
        let m = AttributionMap::new(1, 3, vec![0.0, 5.0, 10.0]).unwrap();
        assert_eq!(m.normalized().unwrap().values(), &[0.0, 0.5, 1.0]);
        let c = AttributionMap::filled(2, 2, 3.0);
        assert_eq!(c.normalized().unwrap().values(), &[0.0; 4]);
    }

    #[test]
    fn rejects_nonfinite() {
        assert!(AttributionMap::new(1, 2, vec![0.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn grid_round_trip() {
        let m = AttributionMap::new(2, 3, vec![0.5, -1.25, 2.0, 0.0, 3.5, 1e-3]).unwrap();
        let mut buf = Vec::new();
        write_grid(&m, &mut buf).unwrap();
        assert_eq!(buf.len(), 12 + 6 * 4);
        let back = read_grid(buf.as_slice()).unwrap();
        for (a, b) in m.values().iter().zip(back.values()) {
            assert_eq!(*a as f32 as f64, *b);
        }
        buf[0] = b'B';
        assert!(read_grid(buf.as_slice()).is_err());
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent_and_keeps_argmax(v in proptest::collection::vec(-100.0f64..100.0, 1..40)) {
            let m = AttributionMap::new(1, v.len(), v).unwrap();
            let n = m.normalized().unwrap();
            prop_assert!(n.is_normalized());
            prop_assert_eq!(&n.normalized().unwrap(), &n);
            if !m.is_constant() {
                prop_assert_eq!(n.argmax_set(), m.argmax_set());
                prop_assert_eq!(n.min_max().1, 1.0);
            }
        }
    }
}
