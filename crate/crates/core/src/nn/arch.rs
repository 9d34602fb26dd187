use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{Conv2d, Dense, Layer, LayerKind};
use crate::nn::Model;

/// Declarative description of one layer; parameters are drawn at build time.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Conv {
        out: usize,
        #[serde(default = "default_kernel")]
        kernel: usize,
        #[serde(default = "default_true")]
        same: bool,
        #[serde(default)]
        name: Option<String>,
    },
    Relu {
        #[serde(default)]
        name: Option<String>,
    },
    MaxPool {
        #[serde(default)]
        name: Option<String>,
    },
    GlobalAvgPool {
        #[serde(default)]
        name: Option<String>,
    },
    Dense {
        out: usize,
        #[serde(default)]
        name: Option<String>,
    },
    Softmax,
}

fn default_kernel() -> usize {
    3
}

fn default_true() -> bool {
    true
}

/// Built-in desk-scale architectures. The last ReLU before global pooling is
/// named `features` in each, which is the default GradCAM layer.
pub fn preset(name: &str, classes: usize) -> Result<Vec<LayerSpec>> {
    let conv = |out| LayerSpec::Conv {
        out,
        kernel: 3,
        same: true,
        name: None,
    };
    let relu = || LayerSpec::Relu { name: None };
    let features = || LayerSpec::Relu {
        name: Some("features".into()),
    };
    let pool = || LayerSpec::MaxPool { name: None };
    let head = |v: &mut Vec<LayerSpec>| {
        v.push(LayerSpec::GlobalAvgPool { name: None });
        v.push(LayerSpec::Dense {
            out: classes,
            name: Some("logits".into()),
        });
        v.push(LayerSpec::Softmax);
    };
    let mut v = match name {
        "conv2" => vec![conv(8), relu(), pool(), conv(16), features()],
        "conv3" => vec![
            conv(8),
            relu(),
            pool(),
            conv(12),
            relu(),
            conv(16),
            features(),
        ],
        "wide2" => vec![conv(16), relu(), pool(), conv(24), features()],
        other => {
            return Err(Error::Config(format!(
                "unknown architecture preset `{other}`"
            )))
        }
    };
    head(&mut v);
    Ok(v)
}

pub const PRESETS: [&str; 3] = ["conv2", "conv3", "wide2"];

/// Builds a model with weights i.i.d. uniform in `[-scale, scale]` and zero biases.
pub fn build_model(
    input_shape: &[usize],
    specs: &[LayerSpec],
    init_scale: f64,
    seed: u64,
) -> Result<Model> {
    if !(init_scale > 0.0) {
        return Err(Error::InvalidParameter(
            "init scale must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shape = input_shape.to_vec();
    let mut layers = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let auto = |kind: &str| format!("{kind}{i}");
        let layer = match spec {
            LayerSpec::Conv {
                out,
                kernel,
                same,
                name,
            } => {
                let in_ch = *shape
                    .first()
                    .ok_or_else(|| Error::InvalidModel("empty shape".into()))?;
                let mut c = Conv2d::zeros(in_ch, *out, *kernel, *same);
                c.weight
                    .iter_mut()
                    .for_each(|w| *w = rng.gen_range(-init_scale..=init_scale));
                Layer::new(
                    name.clone().unwrap_or_else(|| auto("conv")),
                    LayerKind::Conv2d(c),
                )
            }
            LayerSpec::Relu { name } => Layer::new(
                name.clone().unwrap_or_else(|| auto("relu")),
                LayerKind::Relu,
            ),
            LayerSpec::MaxPool { name } => Layer::new(
                name.clone().unwrap_or_else(|| auto("pool")),
                LayerKind::MaxPool2,
            ),
            LayerSpec::GlobalAvgPool { name } => Layer::new(
                name.clone().unwrap_or_else(|| auto("gap")),
                LayerKind::GlobalAvgPool,
            ),
            LayerSpec::Dense { out, name } => {
                let mut d = Dense::zeros(shape.iter().product(), *out);
                d.weight
                    .iter_mut()
                    .for_each(|w| *w = rng.gen_range(-init_scale..=init_scale));
                Layer::new(
                    name.clone().unwrap_or_else(|| auto("dense")),
                    LayerKind::Dense(d),
                )
            }
            LayerSpec::Softmax => Layer::new("softmax", LayerKind::Softmax),
        };
        shape = layer.output_shape(&shape)?;
        layers.push(layer);
    }
    Model::new(input_shape.to_vec(), layers)
}

impl Model {
    /// Name of the last layer whose output still has spatial extent.
    pub fn last_spatial_layer(&self) -> Option<&str> {
        self.layers()
            .iter()
            .enumerate()
            .rev()
            .find(|(i, _)| {
                self.layer_shape(&self.layers()[*i].name)
                    .map(|s| s.len() == 3)
                    .unwrap_or(false)
            })
            .map(|(_, l)| l.name.as_str())
    }
}
