use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Discrete 8-bit image stored interleaved (row, column, channel).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Image8 {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<u8>,
}

impl Image8 {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::InvalidParameter(
                "image extents must be positive".into(),
            ));
        }
        if pixels.len() != height * width * channels {
            return Err(Error::ShapeMismatch {
                expected: vec![height, width, channels],
                got: vec![pixels.len()],
            });
        }
        Ok(Self {
            height,
            width,
            channels,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: u8) -> Self {
        Self {
            height,
            width,
            channels,
            pixels: vec![value; height * width * channels],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> u8 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    pub fn set(&mut self, y: usize, x: usize, c: usize, v: u8) {
        self.pixels[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn same_shape(&self, other: &Image8) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    /// Channel-major `[C, H, W]` tensor with values `p / 255`.
    pub fn to_tensor(&self) -> Tensor {
        let (h, w, c) = (self.height, self.width, self.channels);
        let mut data = vec![0.0; h * w * c];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    data[(ch * h + y) * w + x] = f64::from(self.get(y, x, ch)) / 255.0;
                }
            }
        }
        Tensor::from_parts(vec![c, h, w], data)
    }

    /// Inverse of [`Image8::to_tensor`]: rounds `255 * v` to the nearest byte.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let &[c, h, w] = t.shape() else {
            return Err(Error::ShapeMismatch {
                expected: vec![0, 0, 0],
                got: t.shape().to_vec(),
            });
        };
        let mut img = Self::filled(h, w, c, 0);
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let v = t.data()[(ch * h + y) * w + x];
                    img.set(y, x, ch, (v * 255.0).round().clamp(0.0, 255.0) as u8);
                }
            }
        }
        Ok(img)
    }
}
