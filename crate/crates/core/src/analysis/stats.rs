use crate::error::{Error, Result};
use crate::metrics::Trend;

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![a.len()],
            got: vec![b.len()],
        });
    }
    Ok(())
}

/// Sample Pearson correlation. Zero variance on either side is
/// [`Error::Undefined`].
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    same_len(a, b)?;
    if a.len() < 2 {
        return Err(Error::InvalidParameter(
            "pearson needs at least two values".into(),
        ));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Undefined("pearson of a zero-variance series"));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Kendall's τ-b between two paired score (or rank) vectors.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Result<f64> {
    same_len(a, b)?;
    if a.len() < 2 {
        return Err(Error::InvalidParameter(
            "kendall tau needs at least two items".into(),
        ));
    }
    let (mut concordant, mut discordant, mut ties_a, mut ties_b) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            let da = (a[i] - a[j]).partial_cmp(&0.0).map_or(0, |o| o as i64);
            let db = (b[i] - b[j]).partial_cmp(&0.0).map_or(0, |o| o as i64);
            match (da, db) {
                (0, 0) => {}
                (0, _) => ties_a += 1,
                (_, 0) => ties_b += 1,
                _ if da == db => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let n1 = (concordant + discordant + ties_a) as f64;
    let n2 = (concordant + discordant + ties_b) as f64;
    if n1 == 0.0 || n2 == 0.0 {
        return Err(Error::Undefined("kendall tau of a constant ranking"));
    }
    Ok((concordant - discordant) as f64 / (n1 * n2).sqrt())
}

/// Fraction of steps moving along `trend` (equal neighbours count as moving).
pub fn monotonicity(y: &[f64], trend: Trend) -> Result<f64> {
    if y.len() < 2 {
        return Err(Error::InvalidParameter(
            "monotonicity needs at least two points".into(),
        ));
    }
    let good = y
        .windows(2)
        .filter(|w| match trend {
            Trend::Increasing => w[1] >= w[0],
            Trend::Decreasing => w[1] <= w[0],
        })
        .count();
    Ok(good as f64 / (y.len() - 1) as f64)
}

/// `sqrt(Σ (Δ_i - mean Δ)²) / (n - 1)` over forward differences of an
/// `n`-point curve.
pub fn smoothness(y: &[f64]) -> Result<f64> {
    if y.len() < 3 {
        return Err(Error::InvalidParameter(
            "smoothness needs at least three points".into(),
        ));
    }
    let d: Vec<f64> = y.windows(2).map(|w| w[1] - w[0]).collect();
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    let ss: f64 = d.iter().map(|v| (v - mean) * (v - mean)).sum();
    Ok(ss.sqrt() / (y.len() - 1) as f64)
}

/// Mean and sample standard deviation, summed in sorted order so the result
/// does not depend on input order. A single value has std 0.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() == 1 {
        return Some((mean, 0.0));
    }
    let mut sq: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
    sq.sort_by(f64::total_cmp);
    Some((mean, (sq.iter().sum::<f64>() / (n - 1.0)).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pearson_examples() {
        let a = [0.1, 0.5, 0.2, 0.9];
        assert!((pearson(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        assert!((pearson(&a, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[1.0, 0.0, 1.0]).unwrap(), 0.0);
        assert!(matches!(
            pearson(&[1.0, 1.0], &[0.0, 2.0]),
            Err(Error::Undefined(_))
        ));
        assert!(pearson(&[1.0], &[1.0]).is_err());
        assert!(pearson(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn kendall_examples() {
        assert_eq!(
            kendall_tau(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(),
            1.0
        );
        assert_eq!(
            kendall_tau(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(),
            -1.0
        );
        assert!(
            (kendall_tau(&[1.0, 2.0, 3.0], &[2.0, 1.0, 3.0]).unwrap() - 1.0 / 3.0).abs() < 1e-15
        );
        assert!(kendall_tau(&[1.0], &[1.0]).is_err());
        assert!(matches!(
            kendall_tau(&[1.0, 1.0], &[1.0, 2.0]),
            Err(Error::Undefined(_))
        ));
        // τ-b with one tie: C = 2, D = 0, n1 = 3, n2 = 2.
        let t = kendall_tau(&[1.0, 2.0, 3.0], &[1.0, 1.0, 2.0]).unwrap();
        assert!((t - 2.0 / 6f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn monotonicity_examples() {
        assert_eq!(
            monotonicity(&[0.0, 0.1, 0.5], Trend::Increasing).unwrap(),
            1.0
        );
        assert_eq!(
            monotonicity(&[0.5, 0.1, 0.0], Trend::Increasing).unwrap(),
            0.0
        );
        assert_eq!(
            monotonicity(&[0.0, 1.0, 0.0, 1.0, 0.0], Trend::Increasing).unwrap(),
            0.5
        );
        assert_eq!(
            monotonicity(&[0.5, 0.1, 0.0], Trend::Decreasing).unwrap(),
            1.0
        );
        assert!(monotonicity(&[0.5], Trend::Increasing).is_err());
    }

    #[test]
    fn smoothness_examples() {
        assert_eq!(smoothness(&[0.4; 6]).unwrap(), 0.0);
        assert!(smoothness(&[0.0, 0.25, 0.5, 0.75, 1.0]).unwrap().abs() < 1e-16);
        assert!((smoothness(&[0.0, 1.0, 0.0]).unwrap() - 0.5 * 2f64.sqrt()).abs() < 1e-15);
        assert!(smoothness(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn mean_std_examples() {
        assert_eq!(mean_std(&[]), None);
        assert_eq!(mean_std(&[0.3]), Some((0.3, 0.0)));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((m, s), (2.0, 1.0));
    }

    fn perm(seed: u64, n: usize) -> Vec<f64> {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut v: Vec<f64> = (0..n).map(|i| i as f64).collect();
        v.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        v
    }

    proptest! {
        #[test]
        fn kendall_identity_and_reversal(seed in any::<u64>(), n in 2usize..20) {
            let a = perm(seed, n);
            let rev: Vec<f64> = a.iter().map(|v| -v).collect();
            prop_assert_eq!(kendall_tau(&a, &a).unwrap(), 1.0);
            prop_assert_eq!(kendall_tau(&a, &rev).unwrap(), -1.0);
        }

        #[test]
        fn pearson_symmetric_and_affine_invariant(
            a in proptest::collection::vec(-1.0f64..1.0, 3..40),
            seed in any::<u64>(),
            alpha in 0.1f64..10.0,
            beta in -5.0f64..5.0,
        ) {
            let b = perm(seed, a.len());
            if let Ok(r) = pearson(&a, &b) {
                prop_assert!((r - pearson(&b, &a).unwrap()).abs() < 1e-12);
                let s: Vec<f64> = a.iter().map(|v| alpha * v + beta).collect();
                prop_assert!((r - pearson(&s, &b).unwrap()).abs() < 1e-9);
            }
        }

        #[test]
        fn monotonicity_reversal(y in proptest::collection::vec(0.0f64..1.0, 2..50)) {
            let rev: Vec<f64> = y.iter().rev().copied().collect();
            prop_assert_eq!(
                monotonicity(&y, Trend::Increasing).unwrap(),
                monotonicity(&rev, Trend::Decreasing).unwrap()
            );
        }

        #[test]
        fn smoothness_ignores_offset_and_ramp(
            y in proptest::collection::vec(0.0f64..1.0, 3..50),
            c in -1.0f64..1.0,
            slope in -0.1f64..0.1,
        ) {
            let base = smoothness(&y).unwrap();
            let shifted: Vec<f64> = y.iter().map(|v| v + c).collect();
            let ramped: Vec<f64> = y.iter().enumerate().map(|(i, v)| v + slope * i as f64).collect();
            prop_assert!((smoothness(&shifted).unwrap() - base).abs() < 1e-12);
            prop_assert!((smoothness(&ramped).unwrap() - base).abs() < 1e-12);
        }

        #[test]
        fn mean_std_ignores_order(v in proptest::collection::vec(-1.0f64..1.0, 1..40), seed in any::<u64>()) {
            let p = perm(seed, v.len());
            let shuffled: Vec<f64> = p.iter().map(|&i| v[i as usize]).collect();
            prop_assert_eq!(mean_std(&v), mean_std(&shuffled));
        }
    }
}
