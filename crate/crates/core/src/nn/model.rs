use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{switching_pattern, Layer, LayerGrad, LayerKind};
use crate::nn::Tensor;

/// Scalar that gradients are taken of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Softmax probability `f^c(X)`.
    #[default]
    Probability,
    /// Pre-softmax score of the class.
    Logit,
    /// Cross-entropy `-ln f^c(X)` against the class.
    CrossEntropy,
}

/// A class id together with the model's confidence in it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassProbe {
    pub class: usize,
    pub probability: f64,
}

/// Layered CNN ending in a softmax. Immutable once built; every call carries
/// its own scratch state, so `&Model` can be shared across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    shapes: Vec<Vec<usize>>,
}

/// Activations recorded by one forward pass. `activations[0]` is the input and
/// `activations[i + 1]` is the output of layer `i`.
#[derive(Debug, Clone)]
pub struct Trace {
    activations: Vec<Tensor>,
}

impl Trace {
    pub fn probabilities(&self) -> &Tensor {
        self.activations.last().expect("trace is never empty")
    }

    pub fn logits(&self) -> &Tensor {
        &self.activations[self.activations.len() - 2]
    }

    pub fn input(&self) -> &Tensor {
        &self.activations[0]
    }

    pub fn activation(&self, index: usize) -> &Tensor {
        &self.activations[index]
    }
}

/// Activations of a named layer and the gradient of the objective w.r.t. them.
#[derive(Debug, Clone)]
pub struct LayerCapture {
    pub activations: Tensor,
    pub gradients: Tensor,
}

impl Model {
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        if input_shape.is_empty() || input_shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidModel(format!(
                "bad input shape {input_shape:?}"
            )));
        }
        match layers.last() {
            Some(Layer {
                kind: LayerKind::Softmax,
                ..
            }) => {}
            _ => return Err(Error::InvalidModel("last layer must be softmax".into())),
        }
        if layers[..layers.len() - 1]
            .iter()
            .any(|l| matches!(l.kind, LayerKind::Softmax))
        {
            return Err(Error::InvalidModel(
                "softmax only allowed as the last layer".into(),
            ));
        }
        let mut seen = std::collections::HashSet::new();
        for l in &layers {
            if !seen.insert(l.name.as_str()) {
                return Err(Error::InvalidModel(format!(
                    "duplicate layer name `{}`",
                    l.name
                )));
            }
        }
        let mut shapes = vec![input_shape.clone()];
        for l in &layers {
            let next = l.output_shape(shapes.last().unwrap())?;
            shapes.push(next);
        }
        Ok(Self {
            input_shape,
            layers,
            shapes,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn num_classes(&self) -> usize {
        self.shapes.last().unwrap()[0]
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn layer_index(&self, name: &str) -> Result<usize> {
        self.layers
            .iter()
            .position(|l| l.name == name)
            .ok_or_else(|| Error::UnknownLayer(name.to_string()))
    }

    /// Output shape of the named layer.
    pub fn layer_shape(&self, name: &str) -> Result<&[usize]> {
        Ok(&self.shapes[self.layer_index(name)? + 1])
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape() != self.input_shape.as_slice() {
            return Err(Error::ShapeMismatch {
                expected: self.input_shape.clone(),
                got: x.shape().to_vec(),
            });
        }
        Ok(())
    }

    fn check_class(&self, class: usize) -> Result<()> {
        let arity = self.num_classes();
        if class >= arity {
            return Err(Error::InvalidClass { class, arity });
        }
        Ok(())
    }

    pub fn trace(&self, x: &Tensor) -> Result<Trace> {
        self.check_input(x)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.clone());
        for l in &self.layers {
            let next = l.forward(activations.last().unwrap());
            activations.push(next);
        }
        Ok(Trace { activations })
    }

    /// Softmax probabilities for one input.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut cur = self.layers[0].forward(x);
        for l in &self.layers[1..] {
            cur = l.forward(&cur);
        }
        Ok(cur)
    }

    pub fn probability(&self, x: &Tensor, class: usize) -> Result<f64> {
        self.check_class(class)?;
        Ok(self.forward(x)?.data()[class])
    }

    /// Most probable class and its probability.
    pub fn predict(&self, x: &Tensor) -> Result<ClassProbe> {
        let p = self.forward(x)?;
        let class = p.argmax();
        Ok(ClassProbe {
            class,
            probability: p.data()[class],
        })
    }

    /// Runs the layers after `layer` on an injected activation of that layer.
    pub fn forward_from(&self, layer: &str, activation: &Tensor) -> Result<Tensor> {
        let idx = self.layer_index(layer)?;
        let expected = &self.shapes[idx + 1];
        if activation.shape() != expected.as_slice() {
            return Err(Error::ShapeMismatch {
                expected: expected.clone(),
                got: activation.shape().to_vec(),
            });
        }
        let mut cur = activation.clone();
        for l in &self.layers[idx + 1..] {
            cur = l.forward(&cur);
        }
        Ok(cur)
    }

    fn logit_seed(&self, probs: &Tensor, class: usize, objective: Objective) -> Tensor {
        let p = probs.data();
        let data = match objective {
            Objective::Logit => (0..p.len())
                .map(|j| f64::from(u8::from(j == class)))
                .collect(),
            Objective::Probability => (0..p.len())
                .map(|j| p[class] * (f64::from(u8::from(j == class)) - p[j]))
                .collect(),
            Objective::CrossEntropy => (0..p.len())
                .map(|j| p[j] - f64::from(u8::from(j == class)))
                .collect(),
        };
        Tensor::from_parts(probs.shape().to_vec(), data)
    }

    /// Gradients of the objective w.r.t. every activation in `trace` (same indexing).
    /// Parameter gradients are accumulated into `param_grads` when given.
    pub(crate) fn backward(
        &self,
        trace: &Trace,
        class: usize,
        objective: Objective,
        stop_at: usize,
        mut param_grads: Option<&mut [LayerGrad]>,
    ) -> Vec<Option<Tensor>> {
        let n = self.layers.len();
        let mut grads: Vec<Option<Tensor>> = vec![None; n + 1];
        let mut cur = self.logit_seed(trace.probabilities(), class, objective);
        grads[n - 1] = Some(cur.clone());
        for i in (stop_at..n - 1).rev() {
            let pg = param_grads.as_deref_mut().map(|g| &mut g[i]);
            cur = self.layers[i].backward(&trace.activations[i], &cur, pg);
            grads[i] = Some(cur.clone());
        }
        grads
    }

    pub fn gradient(&self, x: &Tensor, class: usize, objective: Objective) -> Result<Tensor> {
        self.check_class(class)?;
        let trace = self.trace(x)?;
        let mut g = self.backward(&trace, class, objective, 0, None);
        Ok(g.swap_remove(0).expect("input gradient computed"))
    }

    /// `∂f^c/∂X`.
    pub fn input_gradient(&self, x: &Tensor, class: usize) -> Result<Tensor> {
        self.gradient(x, class, Objective::Probability)
    }

    /// `∂L/∂X` for cross-entropy against `target`.
    pub fn loss_gradient(&self, x: &Tensor, target: usize) -> Result<Tensor> {
        self.gradient(x, target, Objective::CrossEntropy)
    }

    /// Activations of `layer` and the objective's gradient w.r.t. them, from a fresh pass.
    pub fn layer_capture(
        &self,
        x: &Tensor,
        layer: &str,
        class: usize,
        objective: Objective,
    ) -> Result<LayerCapture> {
        self.check_class(class)?;
        let idx = self.layer_index(layer)?;
        if idx + 1 == self.layers.len() {
            return Err(Error::InvalidParameter(
                "the softmax output cannot be captured".into(),
            ));
        }
        let trace = self.trace(x)?;
        let mut g = self.backward(&trace, class, objective, idx + 1, None);
        Ok(LayerCapture {
            activations: trace.activations[idx + 1].clone(),
            gradients: g[idx + 1].take().expect("layer gradient computed"),
        })
    }

    /// ReLU and max-pool switching state for `x`; see [`crate::nn::gradcheck`].
    pub fn switching_pattern(&self, x: &Tensor) -> Result<Vec<u32>> {
        let trace = self.trace(x)?;
        let mut out = Vec::new();
        for (l, a) in self.layers.iter().zip(&trace.activations) {
            switching_pattern(l, a, &mut out);
        }
        Ok(out)
    }

    pub(crate) fn zero_grads(&self) -> Vec<LayerGrad> {
        self.layers.iter().map(Layer::zero_grad).collect()
    }
}
