use serde::{Deserialize, Serialize};

use crate::attacks::AttackResult;
use crate::attribution::blur::blur_tensor;
use crate::attribution::AttributionMap;
use crate::error::{Error, Result};
use crate::metrics::schedule::{pixel_schedule, PixelSchedule};
use crate::nn::{Image8, Model, Tensor};

pub const DEFAULT_STEPS: usize = 100;
pub const DEFAULT_BLUR_SIGMA: f64 = 5.0;

/// Target-class probability against the fraction of pixels changed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityCurve {
    x: Vec<f64>,
    y: Vec<f64>,
}

impl ProbabilityCurve {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![x.len()],
                got: vec![y.len()],
            });
        }
        if x.len() < 2 {
            return Err(Error::InvalidParameter(
                "a curve needs at least two points".into(),
            ));
        }
        if x[0] != 0.0 || x[x.len() - 1] != 1.0 || x.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidParameter(
                "curve x must rise strictly from 0 to 1".into(),
            ));
        }
        if y.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidParameter("curve y must lie in [0, 1]".into()));
        }
        Ok(Self { x, y })
    }

    /// Evenly spaced `x` over `y.len()` points.
    pub fn uniform(y: Vec<f64>) -> Result<Self> {
        let n = y.len().saturating_sub(1).max(1);
        let x = (0..y.len()).map(|i| i as f64 / n as f64).collect();
        Self::new(x, y)
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn auc(&self) -> f64 {
        trapezoid(&self.x, &self.y)
    }
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| (xs[1] - xs[0]) * (ys[0] + ys[1]) / 2.0)
        .sum()
}

/// Trapezoidal area under `(x, y)`.
pub fn auc(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![x.len()],
            got: vec![y.len()],
        });
    }
    if x.len() < 2 {
        return Err(Error::InvalidParameter(
            "auc needs at least two points".into(),
        ));
    }
    Ok(trapezoid(x, y))
}

fn spatial(x: &Tensor) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::NotSpatial(format!("input of shape {:?}", x.shape()))),
    }
}

fn check_map(x: &Tensor, map: &AttributionMap) -> Result<(usize, usize)> {
    let (c, h, w) = spatial(x)?;
    if (map.height(), map.width()) != (h, w) {
        return Err(Error::ShapeMismatch {
            expected: vec![h, w],
            got: vec![map.height(), map.width()],
        });
    }
    Ok((c, h * w))
}

/// Visits `start`, then the states after copying each chunk of `target`
/// into it (all channels of a pixel at once). The last state equals `target`
/// bit for bit.
fn walk(
    start: Tensor,
    target: &Tensor,
    schedule: &PixelSchedule,
    mut visit: impl FnMut(&Tensor) -> Result<()>,
) -> Result<()> {
    let (c, plane) = (start.shape()[0], schedule.pixel_count());
    let mut state = start;
    visit(&state)?;
    for i in 1..=schedule.steps() {
        let data = state.data_mut();
        for &p in schedule.chunk(i) {
            for ch in 0..c {
                data[ch * plane + p] = target.data()[ch * plane + p];
            }
        }
        visit(&state)?;
    }
    Ok(())
}

/// Every intermediate image of a curve, for inspection.
pub fn curve_states(
    start: &Tensor,
    target: &Tensor,
    map: &AttributionMap,
    steps: usize,
) -> Result<Vec<Tensor>> {
    start.check_same_shape(target)?;
    check_map(start, map)?;
    let schedule = pixel_schedule(map, steps)?;
    let mut out = Vec::with_capacity(steps + 1);
    walk(start.clone(), target, &schedule, |s| {
        out.push(s.clone());
        Ok(())
    })?;
    Ok(out)
}

fn run_curve(
    model: &Model,
    start: Tensor,
    target: &Tensor,
    map: &AttributionMap,
    steps: usize,
    class: usize,
) -> Result<ProbabilityCurve> {
    start.check_same_shape(target)?;
    check_map(target, map)?;
    let schedule = pixel_schedule(map, steps)?;
    let total = schedule.pixel_count() as f64;
    let mut y = Vec::with_capacity(steps + 1);
    walk(start, target, &schedule, |s| {
        y.push(model.probability(s, class)?);
        Ok(())
    })?;
    let x = (0..=steps)
        .map(|i| {
            if i == steps {
                1.0
            } else {
                schedule.cumulative(i) as f64 / total
            }
        })
        .collect();
    ProbabilityCurve::new(x, y)
}

/// Zeroes pixels in map order, starting from the clean image.
pub fn deletion_curve(
    model: &Model,
    image: &Image8,
    map: &AttributionMap,
    steps: usize,
    class: usize,
) -> Result<ProbabilityCurve> {
    let x = image.to_tensor();
    run_curve(
        model,
        x.clone(),
        &Tensor::zeros(x.shape()),
        map,
        steps,
        class,
    )
}

/// Restores pixels in map order, starting from black.
pub fn insertion_curve(
    model: &Model,
    image: &Image8,
    map: &AttributionMap,
    steps: usize,
    class: usize,
) -> Result<ProbabilityCurve> {
    let x = image.to_tensor();
    run_curve(model, Tensor::zeros(x.shape()), &x, map, steps, class)
}

/// Restores pixels in map order, starting from the image blurred with `sigma`.
pub fn insertion_blur_curve(
    model: &Model,
    image: &Image8,
    map: &AttributionMap,
    steps: usize,
    class: usize,
    sigma: f64,
) -> Result<ProbabilityCurve> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "blur sigma must be > 0, got {sigma}"
        )));
    }
    let x = image.to_tensor();
    run_curve(model, blur_tensor(&x, sigma), &x, map, steps, class)
}

/// Undoes an adversarial perturbation in map order, highest values first.
pub fn perturbation_curve(
    model: &Model,
    image: &Image8,
    attack: &AttackResult,
    map: &AttributionMap,
    steps: usize,
    class: usize,
) -> Result<ProbabilityCurve> {
    if !attack.success {
        return Err(Error::AttackFailed);
    }
    let adv = attack.adversarial();
    if !adv.same_shape(image) {
        return Err(Error::ShapeMismatch {
            expected: vec![image.height(), image.width(), image.channels()],
            got: vec![adv.height(), adv.width(), adv.channels()],
        });
    }
    run_curve(
        model,
        adv.to_tensor(),
        &image.to_tensor(),
        map,
        steps,
        class,
    )
}
