use crate::error::{Error, Result};
use crate::nn::Tensor;

/// 2-D convolution with stride 1. Weights are laid out `[out, in, k, k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    /// Zero padding of `kernel / 2` on each side ("same" output size, odd kernels).
    pub same_padding: bool,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn zeros(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        same_padding: bool,
    ) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            same_padding,
            weight: vec![0.0; out_channels * in_channels * kernel * kernel],
            bias: vec![0.0; out_channels],
        }
    }

    fn pad(&self) -> usize {
        if self.same_padding {
            self.kernel / 2
        } else {
            0
        }
    }

    fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let p = self.pad();
        (h + 2 * p + 1 - self.kernel, w + 2 * p + 1 - self.kernel)
    }

    fn forward(&self, input: &Tensor) -> Tensor {
        let (h, w) = (input.shape()[1], input.shape()[2]);
        let (oh, ow) = self.out_hw(h, w);
        let (k, p) = (self.kernel, self.pad() as isize);
        let x = input.data();
        let mut out = vec![0.0; self.out_channels * oh * ow];
        for o in 0..self.out_channels {
            let plane = &mut out[o * oh * ow..(o + 1) * oh * ow];
            plane.iter_mut().for_each(|v| *v = self.bias[o]);
            for i in 0..self.in_channels {
                let src = &x[i * h * w..(i + 1) * h * w];
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = self.weight[((o * self.in_channels + i) * k + ky) * k + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let dy = ky as isize - p;
                        let dx = kx as isize - p;
                        let (y0, y1) = valid_range(dy, oh, h);
                        let (x0, x1) = valid_range(dx, ow, w);
                        let sx0 = (x0 as isize + dx) as usize;
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let srow = &src[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                            let orow = &mut plane[y * ow + x0..y * ow + x1];
                            for (o, s) in orow.iter_mut().zip(srow) {
                                *o += wv * s;
                            }
                        }
                    }
                }
            }
        }
        Tensor::from_parts(vec![self.out_channels, oh, ow], out)
    }

    fn backward(&self, input: &Tensor, grad_out: &Tensor, grads: Option<&mut LayerGrad>) -> Tensor {
        let (h, w) = (input.shape()[1], input.shape()[2]);
        let (oh, ow) = (grad_out.shape()[1], grad_out.shape()[2]);
        let (k, p) = (self.kernel, self.pad() as isize);
        let x = input.data();
        let g = grad_out.data();
        let mut gin = vec![0.0; input.len()];
        let mut gw = grads;
        for o in 0..self.out_channels {
            let gplane = &g[o * oh * ow..(o + 1) * oh * ow];
            if let Some(lg) = gw.as_deref_mut() {
                lg.bias[o] += gplane.iter().sum::<f64>();
            }
            for i in 0..self.in_channels {
                let src = &x[i * h * w..(i + 1) * h * w];
                let dst = &mut gin[i * h * w..(i + 1) * h * w];
                for ky in 0..k {
                    for kx in 0..k {
                        let widx = ((o * self.in_channels + i) * k + ky) * k + kx;
                        let wv = self.weight[widx];
                        let dy = ky as isize - p;
                        let dx = kx as isize - p;
                        let (y0, y1) = valid_range(dy, oh, h);
                        let (x0, x1) = valid_range(dx, ow, w);
                        let mut acc = 0.0;
                        let (sx0, n) = ((x0 as isize + dx) as usize, x1 - x0);
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let grow = &gplane[y * ow + x0..y * ow + x1];
                            let srow = &src[sy * w + sx0..sy * w + sx0 + n];
                            let drow = &mut dst[sy * w + sx0..sy * w + sx0 + n];
                            for ((d, s), gv) in drow.iter_mut().zip(srow).zip(grow) {
                                *d += wv * gv;
                                acc += s * gv;
                            }
                        }
                        if let Some(lg) = gw.as_deref_mut() {
                            lg.weight[widx] += acc;
                        }
                    }
                }
            }
        }
        Tensor::from_parts(input.shape().to_vec(), gin)
    }
}

/// Output rows `y` for which `y + offset` lands inside `[0, extent)`.
fn valid_range(offset: isize, out: usize, extent: usize) -> (usize, usize) {
    let lo = (-offset).max(0) as usize;
    let hi = ((extent as isize - offset).min(out as isize)).max(0) as usize;
    (lo.min(hi), hi)
}

/// Fully connected layer over the flattened input. Weights are `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn forward(&self, input: &Tensor) -> Tensor {
        let x = input.data();
        let out = (0..self.outputs)
            .map(|o| {
                let row = &self.weight[o * self.inputs..(o + 1) * self.inputs];
                self.bias[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect();
        Tensor::from_parts(vec![self.outputs], out)
    }

    fn backward(&self, input: &Tensor, grad_out: &Tensor, grads: Option<&mut LayerGrad>) -> Tensor {
        let x = input.data();
        let g = grad_out.data();
        let mut gin = vec![0.0; self.inputs];
        for (o, &go) in g.iter().enumerate() {
            let row = &self.weight[o * self.inputs..(o + 1) * self.inputs];
            for (gi, wv) in gin.iter_mut().zip(row) {
                *gi += wv * go;
            }
        }
        if let Some(lg) = grads {
            for (o, &go) in g.iter().enumerate() {
                lg.bias[o] += go;
                let row = &mut lg.weight[o * self.inputs..(o + 1) * self.inputs];
                for (gw, xv) in row.iter_mut().zip(x) {
                    *gw += xv * go;
                }
            }
        }
        Tensor::from_parts(input.shape().to_vec(), gin)
    }
}

/// Gradient accumulator for one parametric layer.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LayerGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    Conv2d(Conv2d),
    Relu,
    /// 2x2 max pool with stride 2; a trailing odd row or column is dropped.
    MaxPool2,
    GlobalAvgPool,
    Dense(Dense),
    Softmax,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub name: String,
    pub kind: LayerKind,
}

impl Layer {
    pub fn new(name: impl Into<String>, kind: LayerKind) -> Self {
        Self {
            name: name.into(),
            kind,
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = |msg: String| Err(Error::InvalidModel(format!("layer `{}`: {msg}", self.name)));
        match &self.kind {
            LayerKind::Conv2d(c) => {
                let &[ch, h, w] = input else {
                    return bad(format!("conv2d needs [C,H,W] input, got {input:?}"));
                };
                if ch != c.in_channels {
                    return bad(format!("expects {} channels, got {ch}", c.in_channels));
                }
                if c.kernel == 0 || (c.same_padding && c.kernel % 2 == 0) {
                    return bad("same padding requires an odd kernel".into());
                }
                if c.weight.len() != c.out_channels * c.in_channels * c.kernel * c.kernel
                    || c.bias.len() != c.out_channels
                {
                    return bad("parameter length mismatch".into());
                }
                if !c.same_padding && (h < c.kernel || w < c.kernel) {
                    return bad(format!("input {h}x{w} smaller than kernel"));
                }
                let (oh, ow) = c.out_hw(h, w);
                Ok(vec![c.out_channels, oh, ow])
            }
            LayerKind::Relu => Ok(input.to_vec()),
            LayerKind::MaxPool2 => {
                let &[ch, h, w] = input else {
                    return bad(format!("max pool needs [C,H,W] input, got {input:?}"));
                };
                if h < 2 || w < 2 {
                    return bad(format!("input {h}x{w} too small to pool"));
                }
                Ok(vec![ch, h / 2, w / 2])
            }
            LayerKind::GlobalAvgPool => {
                let &[ch, _, _] = input else {
                    return bad(format!("global pool needs [C,H,W] input, got {input:?}"));
                };
                Ok(vec![ch])
            }
            LayerKind::Dense(d) => {
                let n: usize = input.iter().product();
                if n != d.inputs {
                    return bad(format!("expects {} inputs, got {n}", d.inputs));
                }
                if d.weight.len() != d.inputs * d.outputs || d.bias.len() != d.outputs {
                    return bad("parameter length mismatch".into());
                }
                Ok(vec![d.outputs])
            }
            LayerKind::Softmax => {
                if input.len() != 1 {
                    return bad("softmax needs a flat input".into());
                }
                Ok(input.to_vec())
            }
        }
    }

    pub(crate) fn forward(&self, input: &Tensor) -> Tensor {
        match &self.kind {
            LayerKind::Conv2d(c) => c.forward(input),
            LayerKind::Relu => input.map(|v| v.max(0.0)),
            LayerKind::MaxPool2 => maxpool_forward(input),
            LayerKind::GlobalAvgPool => {
                let (c, hw) = (input.shape()[0], input.shape()[1] * input.shape()[2]);
                let data = input
                    .data()
                    .chunks(hw)
                    .map(|p| p.iter().sum::<f64>() / hw as f64)
                    .collect();
                Tensor::from_parts(vec![c], data)
            }
            LayerKind::Dense(d) => d.forward(input),
            LayerKind::Softmax => softmax(input),
        }
    }

    /// Back-propagates `grad_out` (gradient w.r.t. this layer's output) to its input.
    /// Softmax is never back-propagated through here; callers start from logits.
    pub(crate) fn backward(
        &self,
        input: &Tensor,
        grad_out: &Tensor,
        grads: Option<&mut LayerGrad>,
    ) -> Tensor {
        match &self.kind {
            LayerKind::Conv2d(c) => c.backward(input, grad_out, grads),
            LayerKind::Relu => input
                .zip_map(grad_out, |x, g| if x > 0.0 { g } else { 0.0 })
                .expect("relu shapes agree"),
            LayerKind::MaxPool2 => maxpool_backward(input, grad_out),
            LayerKind::GlobalAvgPool => {
                let hw = input.shape()[1] * input.shape()[2];
                let data = grad_out
                    .data()
                    .iter()
                    .flat_map(|&g| std::iter::repeat(g / hw as f64).take(hw))
                    .collect();
                Tensor::from_parts(input.shape().to_vec(), data)
            }
            LayerKind::Dense(d) => d.backward(input, grad_out, grads),
            LayerKind::Softmax => unreachable!("softmax gradients are formed on logits"),
        }
    }

    pub fn param_count(&self) -> usize {
        match &self.kind {
            LayerKind::Conv2d(c) => c.weight.len() + c.bias.len(),
            LayerKind::Dense(d) => d.weight.len() + d.bias.len(),
            _ => 0,
        }
    }

    pub(crate) fn zero_grad(&self) -> LayerGrad {
        match &self.kind {
            LayerKind::Conv2d(c) => LayerGrad {
                weight: vec![0.0; c.weight.len()],
                bias: vec![0.0; c.bias.len()],
            },
            LayerKind::Dense(d) => LayerGrad {
                weight: vec![0.0; d.weight.len()],
                bias: vec![0.0; d.bias.len()],
            },
            _ => LayerGrad::default(),
        }
    }

    pub(crate) fn params_mut(&mut self) -> Option<(&mut Vec<f64>, &mut Vec<f64>)> {
        match &mut self.kind {
            LayerKind::Conv2d(c) => Some((&mut c.weight, &mut c.bias)),
            LayerKind::Dense(d) => Some((&mut d.weight, &mut d.bias)),
            _ => None,
        }
    }

    pub(crate) fn params(&self) -> Option<(&[f64], &[f64])> {
        match &self.kind {
            LayerKind::Conv2d(c) => Some((&c.weight, &c.bias)),
            LayerKind::Dense(d) => Some((&d.weight, &d.bias)),
            _ => None,
        }
    }
}

/// Index of the winning element inside each 2x2 window, first row-major maximum on ties.
fn pool_winner(x: &[f64], w: usize, y: usize, xx: usize) -> usize {
    let cands = [
        (2 * y) * w + 2 * xx,
        (2 * y) * w + 2 * xx + 1,
        (2 * y + 1) * w + 2 * xx,
        (2 * y + 1) * w + 2 * xx + 1,
    ];
    let mut best = cands[0];
    for &c in &cands[1..] {
        if x[c] > x[best] {
            best = c;
        }
    }
    best
}

fn maxpool_forward(input: &Tensor) -> Tensor {
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let plane = &input.data()[ch * h * w..(ch + 1) * h * w];
        for y in 0..oh {
            for x in 0..ow {
                out.push(plane[pool_winner(plane, w, y, x)]);
            }
        }
    }
    Tensor::from_parts(vec![c, oh, ow], out)
}

fn maxpool_backward(input: &Tensor, grad_out: &Tensor) -> Tensor {
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (oh, ow) = (h / 2, w / 2);
    let mut gin = vec![0.0; input.len()];
    for ch in 0..c {
        let plane = &input.data()[ch * h * w..(ch + 1) * h * w];
        for y in 0..oh {
            for x in 0..ow {
                let win = pool_winner(plane, w, y, x);
                gin[ch * h * w + win] += grad_out.data()[(ch * oh + y) * ow + x];
            }
        }
    }
    Tensor::from_parts(input.shape().to_vec(), gin)
}

pub(crate) fn softmax(logits: &Tensor) -> Tensor {
    let m = logits
        .data()
        .iter()
        .fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exps: Vec<f64> = logits.data().iter().map(|&z| (z - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    Tensor::from_parts(
        logits.shape().to_vec(),
        exps.into_iter().map(|e| e / s).collect(),
    )
}

/// Switching state of the piecewise-linear layers: ReLU on/off bits and the
/// winning index of every max-pool window. Two inputs with equal patterns lie in
/// the same linear region of the network.
pub(crate) fn switching_pattern(layer: &Layer, input: &Tensor, out: &mut Vec<u32>) {
    match layer.kind {
        LayerKind::Relu => out.extend(input.data().iter().map(|&v| u32::from(v > 0.0))),
        LayerKind::MaxPool2 => {
            let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
            for ch in 0..c {
                let plane = &input.data()[ch * h * w..(ch + 1) * h * w];
                for y in 0..h / 2 {
                    for x in 0..w / 2 {
                        out.push(pool_winner(plane, w, y, x) as u32);
                    }
                }
            }
        }
        _ => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maxpool_ties_go_to_first_element() {
        let x = Tensor::new(vec![1, 2, 2], vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let g = Tensor::new(vec![1, 1, 1], vec![5.0]).unwrap();
        let gin = maxpool_backward(&x, &g);
        assert_eq!(gin.data(), &[5.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn maxpool_drops_odd_edge() {
        let x = Tensor::new(vec![1, 3, 3], (0..9).map(f64::from).collect()).unwrap();
        let y = maxpool_forward(&x);
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data(), &[4.0]);
    }

    #[test]
    fn same_conv_keeps_size() {
        let mut c = Conv2d::zeros(1, 1, 3, true);
        c.weight[4] = 1.0;
        let x = Tensor::new(vec![1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(c.forward(&x), x);
    }

    #[test]
    fn valid_conv_shrinks() {
        let mut c = Conv2d::zeros(1, 1, 2, false);
        c.weight.iter_mut().for_each(|w| *w = 1.0);
        let x = Tensor::new(vec![1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let y = c.forward(&x);
        assert_eq!(y.shape(), &[1, 1, 2]);
        assert_eq!(y.data(), &[12.0, 16.0]);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let p = softmax(&Tensor::new(vec![2], vec![0.0, 0.0]).unwrap());
        assert_eq!(p.data(), &[0.5, 0.5]);
    }
}
