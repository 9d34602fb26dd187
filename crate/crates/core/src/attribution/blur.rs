//! Separable Gaussian blur with reflected borders.

use crate::nn::Tensor;

/// Normalized 1-D kernel with radius `ceil(3σ)`; `σ <= 0` yields the identity.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if !(sigma > 0.0) {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Half-sample symmetric reflection (`d c b a | a b c d | d c b a`), valid for
/// any offset, including kernels wider than the signal.
pub fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// Correlates one `h x w` plane with `kernel` along rows then columns.
pub fn separable_filter(
    plane: &[f64],
    h: usize,
    w: usize,
    kernel_x: &[f64],
    kernel_y: &[f64],
) -> Vec<f64> {
    let rx = (kernel_x.len() / 2) as isize;
    let ry = (kernel_y.len() / 2) as isize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..w {
            tmp[y * w + x] = kernel_x
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * row[reflect(x as isize + k as isize - rx, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = kernel_y
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * tmp[reflect(y as isize + k as isize - ry, h) * w + x])
                .sum();
        }
    }
    out
}

pub fn blur_plane(plane: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    if !(sigma > 0.0) {
        return plane.to_vec();
    }
    let k = gaussian_kernel(sigma);
    separable_filter(plane, h, w, &k, &k)
}

/// Blurs each channel of a `[C, H, W]` tensor independently.
pub fn blur_tensor(x: &Tensor, sigma: f64) -> Tensor {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut data = Vec::with_capacity(x.len());
    for ch in 0..c {
        data.extend(blur_plane(
            &x.data()[ch * h * w..(ch + 1) * h * w],
            h,
            w,
            sigma,
        ));
    }
    Tensor::from_parts(x.shape().to_vec(), data)
}
