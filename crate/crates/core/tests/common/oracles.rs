//! Brute-force reference implementations of the statistics.

use adveval::analysis::{kendall_tau, monotonicity, pearson, smoothness};
use adveval::metrics::{auc, Trend};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const INSTANCES: usize = 1000;
pub const TOL: f64 = 1e-12;

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Sum over ordered pairs of sign products, normalized by the tie-corrected pair counts.
pub fn kendall_oracle(a: &[f64], b: &[f64]) -> Option<f64> {
    let (mut num, mut da, mut db) = (0.0, 0.0, 0.0);
    for i in 0..a.len() {
        for j in 0..a.len() {
            if i != j {
                let (sa, sb) = (sign(a[i] - a[j]), sign(b[i] - b[j]));
                num += sa * sb;
                da += sa * sa;
                db += sb * sb;
            }
        }
    }
    (da > 0.0 && db > 0.0).then(|| num / (da * db).sqrt())
}

/// Covariance over standard deviations, each from its own pass over the data.
pub fn pearson_oracle(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
    let (ma, mb) = (mean(a), mean(b));
    let cov: f64 = (0..a.len()).map(|i| (a[i] - ma) * (b[i] - mb)).sum::<f64>() / n;
    let sa = (a.iter().map(|v| (v - ma).powi(2)).sum::<f64>() / n).sqrt();
    let sb = (b.iter().map(|v| (v - mb).powi(2)).sum::<f64>() / n).sqrt();
    (sa > 0.0 && sb > 0.0).then(|| cov / (sa * sb))
}

/// Rectangle under the lower endpoint plus the triangle above it.
pub fn auc_oracle(x: &[f64], y: &[f64]) -> f64 {
    let mut area = 0.0;
    for i in 1..x.len() {
        let dx = x[i] - x[i - 1];
        area += dx * y[i].min(y[i - 1]) + dx * (y[i] - y[i - 1]).abs() / 2.0;
    }
    area
}

/// One minus the share of steps that move against the trend.
pub fn monotonicity_oracle(y: &[f64], increasing: bool) -> f64 {
    let mut against = 0usize;
    for i in 1..y.len() {
        if (increasing && y[i] < y[i - 1]) || (!increasing && y[i] > y[i - 1]) {
            against += 1;
        }
    }
    1.0 - against as f64 / (y.len() - 1) as f64
}

/// Mean step from the endpoints alone (the differences telescope).
pub fn smoothness_oracle(y: &[f64]) -> f64 {
    let m = y.len() - 1;
    let mean = (y[m] - y[0]) / m as f64;
    let mut ss = 0.0;
    for i in 1..y.len() {
        ss += (y[i] - y[i - 1] - mean).powi(2);
    }
    ss.sqrt() / m as f64
}

/// Values on a coarse grid so ties are common.
fn series(rng: &mut ChaCha8Rng, n: usize, levels: u32) -> Vec<f64> {
    (0..n)
        .map(|_| f64::from(rng.gen_range(0..levels)) / f64::from(levels))
        .collect()
}

fn curve_y(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    if rng.gen_bool(0.3) {
        series(rng, n, 5)
    } else {
        (0..n).map(|_| rng.gen::<f64>()).collect()
    }
}

fn curve_x(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut x: Vec<f64> = (0..n - 2).map(|_| rng.gen::<f64>()).collect();
    x.push(0.0);
    x.push(1.0);
    x.sort_by(f64::total_cmp);
    x
}

/// Largest deviation of each statistic from its oracle, in order kendall,
/// pearson, auc, monotonicity, smoothness.
pub fn oracle_max_errors(seed: u64) -> [f64; 5] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = [0.0f64; 5];
    let mut bump = |i: usize, e: f64| worst[i] = worst[i].max(e);
    for _ in 0..INSTANCES {
        let n = rng.gen_range(2..12);
        let levels = rng.gen_range(2..8);
        let (a, b) = (series(&mut rng, n, levels), series(&mut rng, n, levels));
        match (kendall_tau(&a, &b), kendall_oracle(&a, &b)) {
            (Ok(t), Some(o)) => bump(0, (t - o).abs()),
            (Err(_), None) => {}
            (got, want) => panic!("kendall {a:?} {b:?}: {got:?} vs {want:?}"),
        }

        let n = rng.gen_range(2..16);
        let (a, b) = (curve_y(&mut rng, n), curve_y(&mut rng, n));
        match (pearson(&a, &b), pearson_oracle(&a, &b)) {
            (Ok(r), Some(o)) => bump(1, (r - o).abs()),
            (Err(_), None) => {}
            (got, want) => panic!("pearson {a:?} {b:?}: {got:?} vs {want:?}"),
        }

        let n = rng.gen_range(3..40);
        let (x, y) = (curve_x(&mut rng, n), curve_y(&mut rng, n));
        bump(2, (auc(&x, &y).unwrap() - auc_oracle(&x, &y)).abs());
        let inc = rng.gen_bool(0.5);
        let trend = if inc {
            Trend::Increasing
        } else {
            Trend::Decreasing
        };
        bump(
            3,
            (monotonicity(&y, trend).unwrap() - monotonicity_oracle(&y, inc)).abs(),
        );
        bump(4, (smoothness(&y).unwrap() - smoothness_oracle(&y)).abs());
    }
    worst
}
