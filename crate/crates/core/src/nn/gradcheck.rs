//! Central finite differences, used as an independent oracle for the analytic
//! backward pass.

use crate::error::{Error, Result};
use crate::nn::{Model, Objective, Tensor};

fn objective_value(model: &Model, x: &Tensor, class: usize, objective: Objective) -> Result<f64> {
    Ok(match objective {
        Objective::Probability => model.forward(x)?.data()[class],
        Objective::CrossEntropy => -model.forward(x)?.data()[class].ln(),
        Objective::Logit => model.trace(x)?.logits().data()[class],
    })
}

/// Central difference of any scalar function of a tensor.
pub fn central_difference(
    x: &Tensor,
    h: f64,
    mut f: impl FnMut(&Tensor) -> Result<f64>,
) -> Result<Tensor> {
    if !(h > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "step h must be positive, got {h}"
        )));
    }
    let mut probe = x.clone();
    let mut out = vec![0.0; x.len()];
    for (i, slot) in out.iter_mut().enumerate() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        *slot = (up - down) / (2.0 * h);
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every element of the input.
pub fn finite_difference_gradient(
    model: &Model,
    x: &Tensor,
    class: usize,
    objective: Objective,
    h: f64,
) -> Result<Tensor> {
    model.probability(x, class)?;
    central_difference(x, h, |p| objective_value(model, p, class, objective))
}

/// Finite differences plus, per element, whether both probes `x ± h e_i` stay in
/// the linear region of `x` (same ReLU and max-pool switching state). Where a
/// probe crosses a switching boundary the difference quotient averages two
/// slopes and no longer estimates the derivative at `x`.
pub fn finite_difference_gradient_checked(
    model: &Model,
    x: &Tensor,
    class: usize,
    objective: Objective,
    h: f64,
) -> Result<(Tensor, Vec<bool>)> {
    let fd = finite_difference_gradient(model, x, class, objective, h)?;
    let base = model.switching_pattern(x)?;
    let mut probe = x.clone();
    let mut smooth = vec![true; x.len()];
    for (i, ok) in smooth.iter_mut().enumerate() {
        let orig = x.data()[i];
        for delta in [h, -h] {
            probe.data_mut()[i] = orig + delta;
            if model.switching_pattern(&probe)? != base {
                *ok = false;
            }
        }
        probe.data_mut()[i] = orig;
    }
    Ok((fd, smooth))
}

/// Largest element-wise relative error `|a - b| / max(|a|, |b|)`, skipping
/// elements where both magnitudes are below `floor` or where `mask` is false.
pub fn max_relative_error(
    analytic: &Tensor,
    numeric: &Tensor,
    floor: f64,
    mask: Option<&[bool]>,
) -> f64 {
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .enumerate()
        .filter(|(i, _)| mask.is_none_or(|m| m[*i]))
        .filter(|(_, (a, b))| a.abs().max(b.abs()) >= floor)
        .map(|(_, (a, b))| (a - b).abs() / a.abs().max(b.abs()))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_probe() {
        let x = Tensor::new(vec![1], vec![1.0]).unwrap();
        let g = central_difference(&x, 1e-3, |t| Ok(t.data()[0] * t.data()[0])).unwrap();
        assert!((g.data()[0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_nonpositive_step() {
        let x = Tensor::zeros(&[1]);
        assert!(central_difference(&x, 0.0, |_| Ok(0.0)).is_err());
        assert!(central_difference(&x, -1.0, |_| Ok(0.0)).is_err());
    }
}
