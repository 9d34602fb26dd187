//! Gradient-family attribution: plain gradients, SmoothGrad, Integrated
//! Gradients with a black baseline, and Integrated Gradients along a blur path.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::attribution::blur::blur_tensor;
use crate::attribution::AttributionMap;
use crate::error::{Error, Result};
use crate::nn::{Model, Objective, Tensor};

/// How a `[C, H, W]` gradient becomes one value per pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ChannelReduction {
    #[default]
    MaxAbs,
    SumAbs,
    L2,
}

impl ChannelReduction {
    pub fn reduce(self, t: &Tensor) -> AttributionMap {
        let (c, h, w) = spatial_dims(t);
        let plane = h * w;
        let values = (0..plane)
            .map(|p| {
                let vals = (0..c).map(|ch| t.data()[ch * plane + p]);
                match self {
                    ChannelReduction::MaxAbs => vals.fold(0.0, |m: f64, v| m.max(v.abs())),
                    ChannelReduction::SumAbs => vals.map(f64::abs).sum(),
                    ChannelReduction::L2 => vals.map(|v| v * v).sum::<f64>().sqrt(),
                }
            })
            .collect();
        AttributionMap::new(h, w, values).expect("finite gradients")
    }
}

pub(crate) fn spatial_dims(t: &Tensor) -> (usize, usize, usize) {
    match t.shape() {
        &[c, h, w] => (c, h, w),
        &[h, w] => (1, h, w),
        &[n] => (1, 1, n),
        s => panic!("unsupported attribution input shape {s:?}"),
    }
}

/// Signed channel sum, used by the path-integral methods.
pub(crate) fn channel_sum(t: &Tensor) -> AttributionMap {
    let (c, h, w) = spatial_dims(t);
    let plane = h * w;
    let values = (0..plane)
        .map(|p| (0..c).map(|ch| t.data()[ch * plane + p]).sum())
        .collect();
    AttributionMap::new(h, w, values).expect("finite attributions")
}

pub fn gradients_map(
    model: &Model,
    x: &Tensor,
    class: usize,
    objective: Objective,
    reduction: ChannelReduction,
) -> Result<AttributionMap> {
    Ok(reduction.reduce(&model.gradient(x, class, objective)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothGradParams {
    pub samples: usize,
    /// Noise standard deviation as a fraction of the nominal `[0, 1]` value range.
    pub sigma: f64,
    pub seed: u64,
}

impl Default for SmoothGradParams {
    fn default() -> Self {
        Self {
            samples: 25,
            sigma: 0.15,
            seed: 0,
        }
    }
}

/// Averages signed gradients over `samples` Gaussian-noised copies of `x`, then
/// reduces over channels.
pub fn smoothgrad(
    model: &Model,
    x: &Tensor,
    class: usize,
    objective: Objective,
    reduction: ChannelReduction,
    params: &SmoothGradParams,
) -> Result<AttributionMap> {
    if params.samples == 0 {
        return Err(Error::InvalidParameter(
            "SmoothGrad needs at least one sample".into(),
        ));
    }
    if !(params.sigma >= 0.0) || !params.sigma.is_finite() {
        return Err(Error::InvalidParameter(
            "SmoothGrad sigma must be >= 0".into(),
        ));
    }
    if params.sigma == 0.0 {
        return gradients_map(model, x, class, objective, reduction);
    }
    let noise =
        Normal::new(0.0, params.sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut acc = vec![0.0; x.len()];
    let mut noisy = x.clone();
    for _ in 0..params.samples {
        for (dst, &src) in noisy.data_mut().iter_mut().zip(x.data()) {
            *dst = src + noise.sample(&mut rng);
        }
        let g = model.gradient(&noisy, class, objective)?;
        acc.iter_mut().zip(g.data()).for_each(|(a, v)| *a += v);
    }
    let n = params.samples as f64;
    let mean = Tensor::from_parts(x.shape().to_vec(), acc.into_iter().map(|v| v / n).collect());
    Ok(reduction.reduce(&mean))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Black,
    Blur,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IgParams {
    pub steps: usize,
    pub baseline: BaselineKind,
    /// Largest blur σ (pixels) for the blur path.
    pub sigma_max: f64,
}

impl IgParams {
    pub fn black(steps: usize) -> Self {
        Self {
            steps,
            baseline: BaselineKind::Black,
            sigma_max: 0.0,
        }
    }

    pub fn blur(steps: usize, sigma_max: f64) -> Self {
        Self {
            steps,
            baseline: BaselineKind::Blur,
            sigma_max,
        }
    }
}

/// Per-element Integrated Gradients against the black image, as a `[C, H, W]`
/// tensor. Midpoint Riemann sum with `α_j = (j - 0.5) / m`.
pub fn integrated_gradients_tensor(
    model: &Model,
    x: &Tensor,
    class: usize,
    objective: Objective,
    steps: usize,
) -> Result<Tensor> {
    if steps == 0 {
        return Err(Error::InvalidParameter("IG needs at least one step".into()));
    }
    let mut acc = vec![0.0; x.len()];
    for j in 1..=steps {
        let alpha = (j as f64 - 0.5) / steps as f64;
        let point = x.map(|v| alpha * v);
        let g = model.gradient(&point, class, objective)?;
        acc.iter_mut().zip(g.data()).for_each(|(a, v)| *a += v);
    }
    let m = steps as f64;
    let data = acc.iter().zip(x.data()).map(|(a, xv)| xv * a / m).collect();
    Ok(Tensor::from_parts(x.shape().to_vec(), data))
}

pub fn integrated_gradients(
    model: &Model,
    x: &Tensor,
    class: usize,
    objective: Objective,
    params: &IgParams,
) -> Result<AttributionMap> {
    match params.baseline {
        BaselineKind::Black => Ok(channel_sum(&integrated_gradients_tensor(
            model,
            x,
            class,
            objective,
            params.steps,
        )?)),
        BaselineKind::Blur => blur_integrated_gradients(model, x, class, objective, params),
    }
}

/// Path sum over `γ_j = blur(X, σ_max (1 - j/m))`, `j = 0..m`: each step
/// contributes the gradient at the midpoint of consecutive images times their
/// difference.
pub fn blur_integrated_gradients_tensor(
    model: &Model,
    x: &Tensor,
    class: usize,
    objective: Objective,
    steps: usize,
    sigma_max: f64,
) -> Result<Tensor> {
    if steps == 0 {
        return Err(Error::InvalidParameter(
            "blur IG needs at least one step".into(),
        ));
    }
    if !(sigma_max > 0.0) || !sigma_max.is_finite() {
        return Err(Error::InvalidParameter(
            "blur IG needs sigma_max > 0".into(),
        ));
    }
    if x.shape().len() != 3 {
        return Err(Error::InvalidParameter(
            "blur IG needs a [C, H, W] input".into(),
        ));
    }
    let m = steps as f64;
    let mut acc = vec![0.0; x.len()];
    let mut prev = blur_tensor(x, sigma_max);
    for j in 1..=steps {
        let sigma = sigma_max * (1.0 - j as f64 / m);
        let next = if j == steps {
            x.clone()
        } else {
            blur_tensor(x, sigma)
        };
        let mid = prev.zip_map(&next, |a, b| 0.5 * (a + b))?;
        let g = model.gradient(&mid, class, objective)?;
        for ((a, gv), (p, n)) in acc
            .iter_mut()
            .zip(g.data())
            .zip(prev.data().iter().zip(next.data()))
        {
            *a += gv * (n - p);
        }
        prev = next;
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), acc))
}

pub fn blur_integrated_gradients(
    model: &Model,
    x: &Tensor,
    class: usize,
    objective: Objective,
    params: &IgParams,
) -> Result<AttributionMap> {
    Ok(channel_sum(&blur_integrated_gradients_tensor(
        model,
        x,
        class,
        objective,
        params.steps,
        params.sigma_max,
    )?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::arch::{build_model, preset};

    fn toy() -> (Model, Tensor) {
        let m = build_model(&[1, 8, 8], &preset("conv2", 2).unwrap(), 0.4, 9).unwrap();
        let x = Tensor::new(
            vec![1, 8, 8],
            (0..64).map(|i| ((i * 29) % 64) as f64 / 64.0).collect(),
        )
        .unwrap();
        (m, x)
    }

    #[test]
    fn reductions() {
        let t = Tensor::new(vec![2, 1, 2], vec![3.0, -1.0, -4.0, 0.0]).unwrap();
        assert_eq!(ChannelReduction::MaxAbs.reduce(&t).values(), &[4.0, 1.0]);
        assert_eq!(ChannelReduction::SumAbs.reduce(&t).values(), &[7.0, 1.0]);
        assert_eq!(ChannelReduction::L2.reduce(&t).values(), &[5.0, 1.0]);
    }

    #[test]
    fn smoothgrad_zero_noise_is_gradients() {
        let (m, x) = toy();
        let p = SmoothGradParams {
            samples: 5,
            sigma: 0.0,
            seed: 1,
        };
        let a = smoothgrad(
            &m,
            &x,
            0,
            Objective::Probability,
            ChannelReduction::MaxAbs,
            &p,
        )
        .unwrap();
        let b = gradients_map(&m, &x, 0, Objective::Probability, ChannelReduction::MaxAbs).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn smoothgrad_is_seeded() {
        let (m, x) = toy();
        let p = SmoothGradParams {
            samples: 1,
            sigma: 0.2,
            seed: 42,
        };
        let a = smoothgrad(
            &m,
            &x,
            1,
            Objective::Probability,
            ChannelReduction::MaxAbs,
            &p,
        )
        .unwrap();
        let b = smoothgrad(
            &m,
            &x,
            1,
            Objective::Probability,
            ChannelReduction::MaxAbs,
            &p,
        )
        .unwrap();
        assert_eq!(a, b);
        assert!(smoothgrad(
            &m,
            &x,
            1,
            Objective::Probability,
            ChannelReduction::MaxAbs,
            &SmoothGradParams { samples: 0, ..p }
        )
        .is_err());
    }

    #[test]
    fn ig_of_black_input_is_zero() {
        let (m, _) = toy();
        let x = Tensor::zeros(&[1, 8, 8]);
        let map =
            integrated_gradients(&m, &x, 0, Objective::Probability, &IgParams::black(16)).unwrap();
        assert!(map.values().iter().all(|&v| v == 0.0));
        assert!(
            integrated_gradients(&m, &x, 0, Objective::Probability, &IgParams::black(0)).is_err()
        );
    }

    #[test]
    fn blur_ig_degenerate_paths_are_zero() {
        let (m, x) = toy();
        let flat = Tensor::filled(&[1, 8, 8], 0.4);
        let map = blur_integrated_gradients(
            &m,
            &flat,
            0,
            Objective::Probability,
            &IgParams::blur(8, 3.0),
        )
        .unwrap();
        assert!(map.values().iter().all(|v| v.abs() < 1e-15));
        let tiny =
            blur_integrated_gradients(&m, &x, 0, Objective::Probability, &IgParams::blur(1, 1e-9))
                .unwrap();
        assert!(tiny.values().iter().all(|&v| v == 0.0));
        assert!(blur_integrated_gradients(
            &m,
            &x,
            0,
            Objective::Probability,
            &IgParams::blur(8, 0.0)
        )
        .is_err());
    }
}
