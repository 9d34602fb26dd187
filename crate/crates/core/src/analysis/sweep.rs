use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::stats::{mean_std, monotonicity, smoothness};
use crate::attacks::{fgsm, AttackBudget};
use crate::attribution::AttributionMethod;
use crate::error::{Error, Result};
use crate::metrics::{perturbation_curve, Trend};
use crate::nn::train::Sample;
use crate::nn::Model;

/// Curve quality of the Perturbation metric at one budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub eps_steps: u8,
    /// Correctly classified images offered to the attack.
    pub attempted: usize,
    /// Images whose attack failed.
    pub excluded: usize,
    pub mean_monotonicity: Option<f64>,
    pub mean_smoothness: Option<f64>,
    /// Per scored image, in input order.
    pub monotonicity: Vec<f64>,
    pub smoothness: Vec<f64>,
}

impl SweepPoint {
    fn from_values(
        eps_steps: u8,
        attempted: usize,
        monotonicity: Vec<f64>,
        smoothness: Vec<f64>,
    ) -> Self {
        Self {
            eps_steps,
            attempted,
            excluded: attempted - monotonicity.len(),
            mean_monotonicity: mean_std(&monotonicity).map(|m| m.0),
            mean_smoothness: mean_std(&smoothness).map(|m| m.0),
            monotonicity,
            smoothness,
        }
    }

    pub fn scored(&self) -> usize {
        self.monotonicity.len()
    }

    /// Concatenates points with the same budget, e.g. across models.
    pub fn pool(points: &[&SweepPoint]) -> Result<SweepPoint> {
        let Some(first) = points.first() else {
            return Err(Error::InvalidParameter("nothing to pool".into()));
        };
        if points.iter().any(|p| p.eps_steps != first.eps_steps) {
            return Err(Error::InvalidParameter(
                "pooled sweep points differ in budget".into(),
            ));
        }
        let attempted = points.iter().map(|p| p.attempted).sum();
        let mono = points
            .iter()
            .flat_map(|p| p.monotonicity.iter().copied())
            .collect();
        let smooth = points
            .iter()
            .flat_map(|p| p.smoothness.iter().copied())
            .collect();
        Ok(Self::from_values(first.eps_steps, attempted, mono, smooth))
    }
}

/// For each budget `k`: FGSM on every correctly classified sample, then the
/// monotonicity and smoothness of its Perturbation curve under `method`'s map.
/// Maps are computed once per image on the clean input.
pub fn epsilon_sweep(
    model: &Model,
    samples: &[Sample],
    method: &dyn AttributionMethod,
    k_values: &[u8],
    steps: usize,
    seed: u64,
) -> Result<Vec<SweepPoint>> {
    if k_values.contains(&0) {
        return Err(Error::InvalidParameter(
            "eps steps must be in 1..=255".into(),
        ));
    }
    let correct: Vec<(usize, &Sample)> = samples
        .iter()
        .enumerate()
        .filter_map(|(i, s)| match model.predict(&s.image.to_tensor()) {
            Ok(p) if p.class == s.label => Some(Ok((i, s))),
            Ok(_) => None,
            Err(e) => Some(Err(e)),
        })
        .collect::<Result<_>>()?;
    let maps = correct
        .par_iter()
        .map(|(i, s)| {
            let seed = crate::attribution::derive_seed(seed, *i as u64, method.name());
            method.attribute(model, &s.image.to_tensor(), s.label, seed)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(k_values.len());
    for &k in k_values {
        let per_image = correct
            .par_iter()
            .zip(&maps)
            .map(|((_, s), map)| -> Result<Option<(f64, f64)>> {
                let attack = fgsm(model, &s.image, &AttackBudget::fgsm(k, s.label))?;
                if !attack.success {
                    return Ok(None);
                }
                let c = perturbation_curve(model, &s.image, &attack, map, steps, s.label)?;
                Ok(Some((
                    monotonicity(c.y(), Trend::Increasing)?,
                    smoothness(c.y())?,
                )))
            })
            .collect::<Result<Vec<_>>>()?;
        let (mono, smooth): (Vec<f64>, Vec<f64>) = per_image.into_iter().flatten().unzip();
        out.push(SweepPoint::from_values(k, correct.len(), mono, smooth));
    }
    Ok(out)
}
