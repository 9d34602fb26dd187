//! Sanity-check maps that carry no model information: i.i.d. uniform noise and
//! Canny edges of the input.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attribution::blur::{blur_plane, reflect};
use crate::attribution::gradient::spatial_dims;
use crate::attribution::AttributionMap;
use crate::error::{Error, Result};
use crate::nn::Tensor;

pub fn uniform_baseline(height: usize, width: usize, seed: u64) -> Result<AttributionMap> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..height * width).map(|_| rng.gen::<f64>()).collect();
    AttributionMap::new(height, width, values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CannyParams {
    pub sigma: f64,
    /// Thresholds as fractions of the largest gradient magnitude.
    pub low: f64,
    pub high: f64,
}

impl Default for CannyParams {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            low: 0.1,
            high: 0.2,
        }
    }
}

/// Binary edge map: Gaussian smoothing, Sobel gradients, non-maximum
/// suppression along the quantized gradient direction, then hysteresis with
/// 8-connectivity. Multi-channel inputs are averaged to one plane first.
pub fn canny_baseline(x: &Tensor, params: &CannyParams) -> Result<AttributionMap> {
    if !(0.0 <= params.low && params.low < params.high) {
        return Err(Error::InvalidParameter(format!(
            "canny thresholds need 0 <= low < high, got {} and {}",
            params.low, params.high
        )));
    }
    if !(params.sigma >= 0.0) {
        return Err(Error::InvalidParameter("canny sigma must be >= 0".into()));
    }
    let (c, h, w) = spatial_dims(x);
    let plane = h * w;
    let gray: Vec<f64> = (0..plane)
        .map(|p| (0..c).map(|ch| x.data()[ch * plane + p]).sum::<f64>() / c as f64)
        .collect();
    let smooth = blur_plane(&gray, h, w, params.sigma);
    let at = |y: isize, xx: isize| smooth[reflect(y, h) * w + reflect(xx, w)];

    let mut gx = vec![0.0; plane];
    let mut gy = vec![0.0; plane];
    for y in 0..h as isize {
        for xx in 0..w as isize {
            let i = y as usize * w + xx as usize;
            gx[i] = (at(y - 1, xx + 1) + 2.0 * at(y, xx + 1) + at(y + 1, xx + 1))
                - (at(y - 1, xx - 1) + 2.0 * at(y, xx - 1) + at(y + 1, xx - 1));
            gy[i] = (at(y + 1, xx - 1) + 2.0 * at(y + 1, xx) + at(y + 1, xx + 1))
                - (at(y - 1, xx - 1) + 2.0 * at(y - 1, xx) + at(y - 1, xx + 1));
        }
    }
    let mag: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).collect();
    let max = mag.iter().cloned().fold(0.0, f64::max);
    // Flat inputs only carry rounding noise after smoothing.
    if max <= 1e-12 {
        return AttributionMap::new(h, w, vec![0.0; plane]);
    }

    let m = |y: isize, xx: isize| -> f64 {
        if y < 0 || xx < 0 || y >= h as isize || xx >= w as isize {
            0.0
        } else {
            mag[y as usize * w + xx as usize]
        }
    };
    let mut thin = vec![0.0; plane];
    for y in 0..h as isize {
        for xx in 0..w as isize {
            let i = y as usize * w + xx as usize;
            if mag[i] == 0.0 {
                continue;
            }
            let angle = gy[i].atan2(gx[i]).to_degrees().rem_euclid(180.0);
            let (dy, dx) = if !(22.5..157.5).contains(&angle) {
                (0, 1)
            } else if angle < 67.5 {
                (1, 1)
            } else if angle < 112.5 {
                (1, 0)
            } else {
                (1, -1)
            };
            // Ties keep the pixel on the lower-index side only.
            let ahead = m(y + dy, xx + dx);
            let behind = m(y - dy, xx - dx);
            if mag[i] > ahead && mag[i] >= behind {
                thin[i] = mag[i];
            }
        }
    }

    let (lo, hi) = (params.low * max, params.high * max);
    let mut edge = vec![0.0; plane];
    let mut stack: Vec<usize> = (0..plane).filter(|&i| thin[i] >= hi).collect();
    for &i in &stack {
        edge[i] = 1.0;
    }
    while let Some(i) = stack.pop() {
        let (y, xx) = ((i / w) as isize, (i % w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (ny, nx) = (y + dy, xx + dx);
                if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if edge[j] == 0.0 && thin[j] >= lo && thin[j] > 0.0 {
                    edge[j] = 1.0;
                    stack.push(j);
                }
            }
        }
    }
    AttributionMap::new(h, w, edge)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_is_seeded_and_in_range() {
        let a = uniform_baseline(64, 64, 1).unwrap();
        assert_eq!(a, uniform_baseline(64, 64, 1).unwrap());
        assert_ne!(a, uniform_baseline(64, 64, 2).unwrap());
        assert!(a.values().iter().all(|v| (0.0..1.0).contains(v)));
        let mean = a.values().iter().sum::<f64>() / a.len() as f64;
        assert!((0.45..=0.55).contains(&mean));
    }

    #[test]
    fn canny_flat_image_has_no_edges() {
        let x = Tensor::filled(&[1, 8, 8], 0.6);
        let e = canny_baseline(&x, &CannyParams::default()).unwrap();
        assert!(e.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn canny_vertical_step_stays_near_the_step() {
        for k in 2..7 {
            let data = (0..64)
                .map(|i| if i % 8 >= k { 1.0 } else { 0.0 })
                .collect();
            let x = Tensor::new(vec![1, 8, 8], data).unwrap();
            let e = canny_baseline(&x, &CannyParams::default()).unwrap();
            assert!(e.values().iter().any(|&v| v == 1.0));
            for y in 0..8 {
                for xx in 0..8 {
                    if e.get(y, xx) != 0.0 {
                        assert!((k - 1..=k + 1).contains(&xx), "k={k} edge at column {xx}");
                    }
                }
            }
            assert!(e.values().iter().all(|&v| v == 0.0 || v == 1.0));
        }
    }

    #[test]
    fn canny_rejects_bad_thresholds() {
        let x = Tensor::filled(&[1, 8, 8], 0.6);
        let p = CannyParams {
            sigma: 1.0,
            low: 0.3,
            high: 0.3,
        };
        assert!(canny_baseline(&x, &p).is_err());
    }
}
