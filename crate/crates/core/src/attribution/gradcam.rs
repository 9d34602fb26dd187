use crate::attribution::AttributionMap;
use crate::error::{Error, Result};
use crate::nn::{Model, Objective, Tensor};

/// Low-resolution CAM from captured activations `A_k` and gradients
/// `∂f/∂A_k` (both `[K, H', W']`): channel weights are the spatial means of the
/// gradients, and the map is `ReLU(Σ_k w_k A_k)`.
pub fn cam_from_capture(activations: &Tensor, gradients: &Tensor) -> Result<AttributionMap> {
    activations.check_same_shape(gradients)?;
    let &[k, h, w] = activations.shape() else {
        return Err(Error::NotSpatial(format!(
            "capture of shape {:?}",
            activations.shape()
        )));
    };
    let plane = h * w;
    let weights: Vec<f64> = gradients
        .data()
        .chunks(plane)
        .map(|g| g.iter().sum::<f64>() / plane as f64)
        .collect();
    let mut cam = vec![0.0; plane];
    for (ch, wk) in weights.iter().enumerate().take(k) {
        let a = &activations.data()[ch * plane..(ch + 1) * plane];
        cam.iter_mut().zip(a).for_each(|(c, av)| *c += wk * av);
    }
    cam.iter_mut().for_each(|v| *v = v.max(0.0));
    AttributionMap::new(h, w, cam)
}

pub fn gradcam(
    model: &Model,
    x: &Tensor,
    class: usize,
    layer: &str,
    objective: Objective,
) -> Result<AttributionMap> {
    if model.layer_shape(layer)?.len() != 3 {
        return Err(Error::NotSpatial(layer.to_string()));
    }
    let cap = model.layer_capture(x, layer, class, objective)?;
    let low = cam_from_capture(&cap.activations, &cap.gradients)?;
    let (h, w) = (x.shape()[1], x.shape()[2]);
    upsample_bilinear(&low, h, w)
}

/// Align-corners bilinear interpolation to a larger (or equal) grid.
pub fn upsample_bilinear(
    map: &AttributionMap,
    target_h: usize,
    target_w: usize,
) -> Result<AttributionMap> {
    if target_h == 0 || target_w == 0 {
        return Err(Error::InvalidParameter(
            "upsample target must be non-empty".into(),
        ));
    }
    let (h, w) = (map.height(), map.width());
    if target_h < h || target_w < w {
        return Err(Error::InvalidParameter(format!(
            "upsample target {target_h}x{target_w} smaller than source {h}x{w}"
        )));
    }
    let coord = |i: usize, src: usize, dst: usize| -> (usize, usize, f64) {
        if src == 1 || dst == 1 {
            return (0, 0, 0.0);
        }
        let pos = i as f64 * (src - 1) as f64 / (dst - 1) as f64;
        let lo = (pos.floor() as usize).min(src - 2);
        (lo, lo + 1, pos - lo as f64)
    };
    let mut out = Vec::with_capacity(target_h * target_w);
    for ty in 0..target_h {
        let (y0, y1, fy) = coord(ty, h, target_h);
        for tx in 0..target_w {
            let (x0, x1, fx) = coord(tx, w, target_w);
            let top = map.get(y0, x0) * (1.0 - fx) + map.get(y0, x1) * fx;
            let bottom = map.get(y1, x0) * (1.0 - fx) + map.get(y1, x1) * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    AttributionMap::new(target_h, target_w, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upsample_examples() {
        let m = AttributionMap::new(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let up = upsample_bilinear(&m, 3, 3).unwrap();
        assert_eq!(up.get(1, 1), 0.5);
        assert_eq!(upsample_bilinear(&m, 2, 2).unwrap(), m);
        let one = AttributionMap::new(1, 1, vec![0.7]).unwrap();
        assert!(upsample_bilinear(&one, 4, 5)
            .unwrap()
            .values()
            .iter()
            .all(|&v| v == 0.7));
        assert!(upsample_bilinear(&m, 0, 3).is_err());
        assert!(upsample_bilinear(&m, 1, 3).is_err());
    }

    #[test]
    fn upsample_2x2_to_4x4_hand_values() {
        let m = AttributionMap::new(2, 2, vec![0.0, 3.0, 6.0, 9.0]).unwrap();
        let up = upsample_bilinear(&m, 4, 4).unwrap();
        // corners preserved
        assert_eq!(
            (up.get(0, 0), up.get(0, 3), up.get(3, 0), up.get(3, 3)),
            (0.0, 3.0, 6.0, 9.0)
        );
        // source coordinate of index 1 is 1/3
        assert!((up.get(0, 1) - 1.0).abs() < 1e-12);
        assert!((up.get(1, 0) - 2.0).abs() < 1e-12);
        assert!((up.get(1, 1) - 3.0).abs() < 1e-12);
        assert!((up.get(2, 1) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn single_channel_uniform_gradient_is_relu_of_activation() {
        let a = Tensor::new(vec![1, 2, 2], vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        let g = Tensor::filled(&[1, 2, 2], 0.25);
        let cam = cam_from_capture(&a, &g).unwrap();
        assert_eq!(cam.values(), &[0.25, 0.0, 0.75, 0.125]);
    }

    #[test]
    fn negative_weights_give_zero_map() {
        let a = Tensor::new(vec![2, 1, 2], vec![1.0, 2.0, 0.0, 4.0]).unwrap();
        let g = Tensor::new(vec![2, 1, 2], vec![-1.0, -0.5, -2.0, 0.0]).unwrap();
        assert!(cam_from_capture(&a, &g)
            .unwrap()
            .values()
            .iter()
            .all(|&v| v == 0.0));
    }
}
