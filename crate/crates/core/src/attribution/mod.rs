//! Attribution-map methods and the baseline maps, all emitting maps at the
//! input's spatial resolution.

pub mod baselines;
pub mod blur;
pub mod gradcam;
pub mod gradient;
mod map;

use serde::{Deserialize, Serialize};

pub use baselines::{canny_baseline, uniform_baseline, CannyParams};
pub use gradcam::{cam_from_capture, gradcam, upsample_bilinear};
pub use gradient::{
    blur_integrated_gradients, gradients_map, integrated_gradients, smoothgrad, BaselineKind,
    ChannelReduction, IgParams, SmoothGradParams,
};
pub use map::{read_grid, write_grid, AttributionMap, GRID_MAGIC};

use crate::error::{Error, Result};
use crate::nn::{Model, Objective, Tensor};

/// Anything that turns (model, input, class) into a map. `seed` feeds methods
/// with randomness; deterministic methods ignore it.
pub trait AttributionMethod: Send + Sync {
    fn name(&self) -> &str;
    fn attribute(
        &self,
        model: &Model,
        x: &Tensor,
        class: usize,
        seed: u64,
    ) -> Result<AttributionMap>;
}

/// Shared knobs for the built-in methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttributionSettings {
    pub objective: Objective,
    pub reduction: ChannelReduction,
    pub smoothgrad_samples: usize,
    pub smoothgrad_sigma: f64,
    pub ig_steps: usize,
    pub blur_ig_steps: usize,
    pub blur_sigma_max: f64,
    /// GradCAM layer; defaults to the model's last spatial layer.
    pub gradcam_layer: Option<String>,
    pub canny: CannyParams,
}

impl Default for AttributionSettings {
    fn default() -> Self {
        Self {
            objective: Objective::Probability,
            reduction: ChannelReduction::MaxAbs,
            smoothgrad_samples: 25,
            smoothgrad_sigma: 0.15,
            ig_steps: 128,
            blur_ig_steps: 128,
            blur_sigma_max: 4.0,
            gradcam_layer: None,
            canny: CannyParams::default(),
        }
    }
}

pub const METHOD_NAMES: [&str; 7] = [
    "gradients",
    "smoothgrad",
    "ig",
    "blur_ig",
    "gradcam",
    "uniform",
    "canny",
];

/// A built-in method with its parameters resolved.
#[derive(Debug, Clone, PartialEq)]
pub enum BuiltinMethod {
    Gradients {
        objective: Objective,
        reduction: ChannelReduction,
    },
    SmoothGrad {
        objective: Objective,
        reduction: ChannelReduction,
        samples: usize,
        sigma: f64,
    },
    IntegratedGradients {
        objective: Objective,
        steps: usize,
    },
    BlurIntegratedGradients {
        objective: Objective,
        steps: usize,
        sigma_max: f64,
    },
    GradCam {
        objective: Objective,
        layer: Option<String>,
    },
    Uniform,
    Canny(CannyParams),
}

impl BuiltinMethod {
    /// Resolves a registry name (see [`METHOD_NAMES`]).
    pub fn from_name(name: &str, s: &AttributionSettings) -> Result<Self> {
        let (objective, reduction) = (s.objective, s.reduction);
        Ok(match name {
            "gradients" => Self::Gradients {
                objective,
                reduction,
            },
            "smoothgrad" => Self::SmoothGrad {
                objective,
                reduction,
                samples: s.smoothgrad_samples,
                sigma: s.smoothgrad_sigma,
            },
            "ig" => Self::IntegratedGradients {
                objective,
                steps: s.ig_steps,
            },
            "blur_ig" => Self::BlurIntegratedGradients {
                objective,
                steps: s.blur_ig_steps,
                sigma_max: s.blur_sigma_max,
            },
            "gradcam" => Self::GradCam {
                objective,
                layer: s.gradcam_layer.clone(),
            },
            "uniform" => Self::Uniform,
            "canny" => Self::Canny(s.canny.clone()),
            other => {
                return Err(Error::Config(format!(
                    "unknown attribution method `{other}`"
                )))
            }
        })
    }
}

impl AttributionMethod for BuiltinMethod {
    fn name(&self) -> &str {
        match self {
            Self::Gradients { .. } => "gradients",
            Self::SmoothGrad { .. } => "smoothgrad",
            Self::IntegratedGradients { .. } => "ig",
            Self::BlurIntegratedGradients { .. } => "blur_ig",
            Self::GradCam { .. } => "gradcam",
            Self::Uniform => "uniform",
            Self::Canny(_) => "canny",
        }
    }

    fn attribute(
        &self,
        model: &Model,
        x: &Tensor,
        class: usize,
        seed: u64,
    ) -> Result<AttributionMap> {
        match self {
            Self::Gradients {
                objective,
                reduction,
            } => gradients_map(model, x, class, *objective, *reduction),
            Self::SmoothGrad {
                objective,
                reduction,
                samples,
                sigma,
            } => smoothgrad(
                model,
                x,
                class,
                *objective,
                *reduction,
                &SmoothGradParams {
                    samples: *samples,
                    sigma: *sigma,
                    seed,
                },
            ),
            Self::IntegratedGradients { objective, steps } => {
                integrated_gradients(model, x, class, *objective, &IgParams::black(*steps))
            }
            Self::BlurIntegratedGradients {
                objective,
                steps,
                sigma_max,
            } => blur_integrated_gradients(
                model,
                x,
                class,
                *objective,
                &IgParams::blur(*steps, *sigma_max),
            ),
            Self::GradCam { objective, layer } => {
                let layer = match layer {
                    Some(l) => l.as_str(),
                    None => model
                        .last_spatial_layer()
                        .ok_or_else(|| Error::NotSpatial("model has no spatial layer".into()))?,
                };
                gradcam(model, x, class, layer, *objective)
            }
            Self::Uniform => {
                let (_, h, w) = gradient::spatial_dims(x);
                uniform_baseline(h, w, seed)
            }
            Self::Canny(p) => canny_baseline(x, p),
        }
    }
}

/// Splits a base seed into independent streams keyed by (image, method), so
/// parallel evaluation order never changes results.
pub fn derive_seed(base: u64, image_id: u64, method: &str) -> u64 {
    let mut h = splitmix64(base ^ 0x5EED_0F_A77E_u64);
    h = splitmix64(h ^ image_id);
    for b in method.bytes() {
        h = splitmix64(h ^ u64::from(b));
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
