use crate::analysis::pearson;
use crate::attribution::{AttributionMap, AttributionMethod};
use crate::error::{Error, Result};
use crate::nn::{Model, Tensor};

fn require_normalized(map: &AttributionMap) -> Result<()> {
    if !map.is_normalized() {
        return Err(Error::InvalidParameter(
            "map must be normalized to [0, 1]".into(),
        ));
    }
    Ok(())
}

/// `X ∘ h(X)` with the map broadcast over channels.
pub fn explanation_map(x: &Tensor, map: &AttributionMap) -> Result<Tensor> {
    require_normalized(map)?;
    let &[c, h, w] = x.shape() else {
        return Err(Error::NotSpatial(format!("input of shape {:?}", x.shape())));
    };
    if (map.height(), map.width()) != (h, w) {
        return Err(Error::ShapeMismatch {
            expected: vec![h, w],
            got: vec![map.height(), map.width()],
        });
    }
    let plane = h * w;
    let mut out = x.clone();
    for ch in 0..c {
        out.data_mut()[ch * plane..(ch + 1) * plane]
            .iter_mut()
            .zip(map.values())
            .for_each(|(v, m)| *v *= m);
    }
    Ok(out)
}

/// `max(f(X) - f(X ∘ h(X)), 0)`.
pub fn average_drop(model: &Model, x: &Tensor, map: &AttributionMap, class: usize) -> Result<f64> {
    let e = explanation_map(x, map)?;
    Ok((model.probability(x, class)? - model.probability(&e, class)?).max(0.0))
}

/// Whether the explanation map strictly raises the class probability.
pub fn increase_in_confidence(
    model: &Model,
    x: &Tensor,
    map: &AttributionMap,
    class: usize,
) -> Result<bool> {
    let e = explanation_map(x, map)?;
    Ok(model.probability(x, class)? < model.probability(&e, class)?)
}

/// L1 norm per pixel, in `[0, 1]`.
pub fn complexity(map: &AttributionMap) -> Result<f64> {
    require_normalized(map)?;
    Ok(map.values().iter().sum::<f64>() / map.len() as f64)
}

/// Correlation between `h(X)` and `h(X ∘ h(X))`, rescaled to `[0, 1]` via
/// `(r + 1) / 2`. Zero-variance maps score 0.
pub fn coherency(
    model: &Model,
    x: &Tensor,
    map: &AttributionMap,
    method: &dyn AttributionMethod,
    class: usize,
    seed: u64,
) -> Result<f64> {
    let e = explanation_map(x, map)?;
    let again = method.attribute(model, &e, class, seed)?;
    if (again.height(), again.width()) != (map.height(), map.width()) {
        return Err(Error::ShapeMismatch {
            expected: vec![map.height(), map.width()],
            got: vec![again.height(), again.width()],
        });
    }
    match pearson(map.values(), again.values()) {
        Ok(r) => Ok((r + 1.0) / 2.0),
        Err(Error::Undefined(_)) => Ok(0.0),
        Err(e) => Err(e),
    }
}

/// `3 / (1/CH + 1/(1-CP) + 1/(1-AD))`.
pub fn adcc(ad: f64, cp: f64, ch: f64) -> Result<f64> {
    if !(ch > 0.0 && ch <= 1.0) {
        return Err(Error::Undefined("ADCC needs coherency in (0, 1]"));
    }
    if !(0.0..1.0).contains(&cp) {
        return Err(Error::Undefined("ADCC needs complexity in [0, 1)"));
    }
    if !(0.0..1.0).contains(&ad) {
        return Err(Error::Undefined("ADCC needs average drop in [0, 1)"));
    }
    Ok(3.0 / (1.0 / ch + 1.0 / (1.0 - cp) + 1.0 / (1.0 - ad)))
}
