use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::LayerGrad;
use crate::nn::{Image8, Model, Objective};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Sample {
    pub image: Image8,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.005,
            epochs: 5,
            batch_size: 16,
            seed: 0,
            init_scale: 0.4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidParameter(
                "learning rate must be positive".into(),
            ));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidParameter("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter(
                "batch size must be at least 1".into(),
            ));
        }
        if !(self.init_scale > 0.0) {
            return Err(Error::InvalidParameter(
                "init scale must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub final_loss: f64,
}

pub fn accuracy(model: &Model, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let hits = samples
        .par_iter()
        .map(|s| {
            Ok(usize::from(
                model.predict(&s.image.to_tensor())?.class == s.label,
            ))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(hits as f64 / samples.len() as f64)
}

struct Adam {
    m: Vec<LayerGrad>,
    v: Vec<LayerGrad>,
    t: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    fn new(model: &Model) -> Self {
        Self {
            m: model.zero_grads(),
            v: model.zero_grads(),
            t: 0,
        }
    }

    fn step(&mut self, model: &mut Model, grads: &[LayerGrad], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        for (i, layer) in model.layers_mut().iter_mut().enumerate() {
            let Some((w, b)) = layer.params_mut() else {
                continue;
            };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let pairs = [
                (w, &grads[i].weight, &mut m.weight, &mut v.weight),
                (b, &grads[i].bias, &mut m.bias, &mut v.bias),
            ];
            for (p, g, m, v) in pairs {
                for j in 0..p.len() {
                    m[j] = BETA1 * m[j] + (1.0 - BETA1) * g[j];
                    v[j] = BETA2 * v[j] + (1.0 - BETA2) * g[j] * g[j];
                    p[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + ADAM_EPS);
                }
            }
        }
    }
}

/// Mini-batch Adam on mean cross-entropy. Per-sample gradients are computed in
/// parallel and summed in batch order, so results do not depend on thread count.
pub fn train(
    mut model: Model,
    train_set: &[Sample],
    test_set: &[Sample],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let classes = model.num_classes();
    if let Some(s) = train_set
        .iter()
        .chain(test_set)
        .find(|s| s.label >= classes)
    {
        return Err(Error::InvalidClass {
            class: s.label,
            arity: classes,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut adam = Adam::new(&model);
    let mut final_loss = 0.0;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let per_sample: Vec<(Vec<LayerGrad>, f64)> = batch
                .par_iter()
                .map(|&i| {
                    let s = &train_set[i];
                    let trace = model.trace(&s.image.to_tensor())?;
                    let loss = -trace.probabilities().data()[s.label].max(1e-300).ln();
                    let mut g = model.zero_grads();
                    model.backward(&trace, s.label, Objective::CrossEntropy, 0, Some(&mut g));
                    Ok((g, loss))
                })
                .collect::<Result<_>>()?;
            let mut total = model.zero_grads();
            let scale = 1.0 / batch.len() as f64;
            for (g, loss) in &per_sample {
                epoch_loss += loss;
                for (acc, gi) in total.iter_mut().zip(g) {
                    acc.weight
                        .iter_mut()
                        .zip(&gi.weight)
                        .for_each(|(a, b)| *a += b * scale);
                    acc.bias
                        .iter_mut()
                        .zip(&gi.bias)
                        .for_each(|(a, b)| *a += b * scale);
                }
            }
            adam.step(&mut model, &total, config.learning_rate);
        }
        final_loss = epoch_loss / train_set.len() as f64;
    }
    let train_accuracy = accuracy(&model, train_set)?;
    let test_accuracy = accuracy(&model, test_set)?;
    Ok(TrainOutcome {
        model,
        train_accuracy,
        test_accuracy,
        final_loss,
    })
}


#[cfg(test)]
mod param_grad_tests {
    use super::*;
    use crate::nn::arch::{build_model, preset};
    use crate::nn::Tensor;

    fn loss(m: &Model, x: &Tensor, c: usize) -> f64 {
        -m.forward(x).unwrap().data()[c].ln()
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let m = build_model(&[1, 8, 8], &preset("conv3", 3).unwrap(), 0.3, 11).unwrap();
        let x = Tensor::new(
            vec![1, 8, 8],
            (0..64).map(|i| ((i * 37) % 64) as f64 / 64.0).collect(),
        )
        .unwrap();
        let trace = m.trace(&x).unwrap();
        let mut g = m.zero_grads();
        m.backward(&trace, 2, Objective::CrossEntropy, 0, Some(&mut g));
        let h = 1e-5;
        for li in 0..m.layers().len() {
            let Some((w, b)) = m.layers()[li].params() else {
                continue;
            };
            for (which, n) in [(0, w.len()), (1, b.len())] {
                for j in (0..n).step_by(7) {
                    let mut up = m.clone();
                    let mut down = m.clone();
                    let bump = |mm: &mut Model, d: f64| {
                        let (w, b) = mm.layers_mut()[li].params_mut().unwrap();
                        if which == 0 {
                            w[j] += d
                        } else {
                            b[j] += d
                        }
                    };
                    bump(&mut up, h);
                    bump(&mut down, -h);
                    let fd = (loss(&up, &x, 2) - loss(&down, &x, 2)) / (2.0 * h);
                    let an = if which == 0 {
                        g[li].weight[j]
                    } else {
                        g[li].bias[j]
                    };
                    assert!(
                        (fd - an).abs() <= 1e-6 * (1.0 + an.abs()),
                        "layer {li} param {which}/{j}: {an} vs {fd}"
                    );
                }
            }
        }
    }
}
