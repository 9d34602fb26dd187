use crate::attribution::AttributionMap;
use crate::error::{Error, Result};

/// Pixel visiting order for the curve metrics, split into `steps` chunks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelSchedule {
    order: Vec<usize>,
    bounds: Vec<usize>,
}

impl PixelSchedule {
    /// Row-major pixel indices, most important first.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn steps(&self) -> usize {
        self.bounds.len() - 1
    }

    pub fn pixel_count(&self) -> usize {
        self.order.len()
    }

    /// Pixels changed at step `i` (1-based, as on the curve's x axis).
    pub fn chunk(&self, i: usize) -> &[usize] {
        &self.order[self.bounds[i - 1]..self.bounds[i]]
    }

    /// Pixels changed after `i` steps.
    pub fn cumulative(&self, i: usize) -> usize {
        self.bounds[i]
    }
}

/// Descending by value, ties by ascending index; `n` near-equal chunks with the
/// remainder spread over the first ones.
pub fn pixel_schedule(map: &AttributionMap, steps: usize) -> Result<PixelSchedule> {
    let p = map.len();
    if p == 0 {
        return Err(Error::InvalidParameter("empty attribution map".into()));
    }
    if steps == 0 || steps > p {
        return Err(Error::InvalidParameter(format!(
            "steps must be in 1..={p}, got {steps}"
        )));
    }
    let v = map.values();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    let (base, rem) = (p / steps, p % steps);
    let mut bounds = Vec::with_capacity(steps + 1);
    bounds.push(0);
    for i in 0..steps {
        bounds.push(bounds[i] + base + usize::from(i < rem));
    }
    Ok(PixelSchedule { order, bounds })
}
