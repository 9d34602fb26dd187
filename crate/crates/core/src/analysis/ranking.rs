use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::analysis::stats::{kendall_tau, mean_std, pearson};
use crate::attribution::AttributionMap;
use crate::error::{Error, Result};
use crate::metrics::Direction;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub method: String,
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

/// Methods ordered best first under one metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingTable {
    pub metric: String,
    pub direction: Direction,
    pub rows: Vec<RankRow>,
}

impl RankingTable {
    pub fn methods(&self) -> Vec<&str> {
        self.rows.iter().map(|r| r.method.as_str()).collect()
    }

    /// 1-based rank of `method`.
    pub fn rank_of(&self, method: &str) -> Option<usize> {
        self.rows
            .iter()
            .position(|r| r.method == method)
            .map(|i| i + 1)
    }
}

fn order_rows(rows: &mut [RankRow], direction: Direction) {
    rows.sort_by(|a, b| {
        let by_mean = match direction {
            Direction::HigherBetter => b.mean.total_cmp(&a.mean),
            Direction::LowerBetter => a.mean.total_cmp(&b.mean),
        };
        by_mean.then_with(|| a.method.cmp(&b.method))
    });
}

/// Mean ± std per method, best first; equal means fall back to name order.
pub fn build_ranking(
    metric: &str,
    direction: Direction,
    scores: &BTreeMap<String, Vec<f64>>,
) -> Result<RankingTable> {
    if scores.is_empty() {
        return Err(Error::InvalidParameter(
            "ranking needs at least one method".into(),
        ));
    }
    let mut rows = Vec::with_capacity(scores.len());
    for (method, v) in scores {
        let (mean, std) = mean_std(v)
            .ok_or_else(|| Error::InvalidParameter(format!("method `{method}` has no scores")))?;
        rows.push(RankRow {
            method: method.clone(),
            mean,
            std,
            count: v.len(),
        });
    }
    order_rows(&mut rows, direction);
    Ok(RankingTable {
        metric: metric.to_string(),
        direction,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyMatrix {
    pub metric: String,
    pub labels: Vec<String>,
    pub tau: Vec<Vec<f64>>,
    pub mean: f64,
    pub std: f64,
}

impl ConsistencyMatrix {
    /// CSV with a label header row and a label column.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("combo");
        for l in &self.labels {
            s.push(',');
            s.push_str(l);
        }
        s.push('\n');
        for (l, row) in self.labels.iter().zip(&self.tau) {
            s.push_str(l);
            for v in row {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
        s
    }
}

/// Pairwise Kendall τ between the rankings induced by `tables`. Mean and std
/// (sample) are over the upper-triangle entries.
pub fn consistency_matrix(labels: &[String], tables: &[RankingTable]) -> Result<ConsistencyMatrix> {
    if labels.len() != tables.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![tables.len()],
            got: vec![labels.len()],
        });
    }
    if tables.len() < 2 {
        return Err(Error::InvalidParameter(
            "consistency needs at least two tables".into(),
        ));
    }
    let methods: BTreeSet<&str> = tables[0].methods().into_iter().collect();
    for t in tables {
        let m: BTreeSet<&str> = t.methods().into_iter().collect();
        if m != methods || t.rows.len() != methods.len() {
            return Err(Error::InvalidParameter(
                "tables rank different method sets".into(),
            ));
        }
    }
    let ranks: Vec<Vec<f64>> = tables
        .iter()
        .map(|t| {
            methods
                .iter()
                .map(|m| t.rank_of(m).unwrap() as f64)
                .collect()
        })
        .collect();
    let n = tables.len();
    let mut tau = vec![vec![1.0; n]; n];
    let mut off = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let t = kendall_tau(&ranks[i], &ranks[j])?;
            tau[i][j] = t;
            tau[j][i] = t;
            off.push(t);
        }
    }
    let (mean, std) = mean_std(&off).expect("at least one pair");
    Ok(ConsistencyMatrix {
        metric: tables[0].metric.clone(),
        labels: labels.to_vec(),
        tau,
        mean,
        std,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SanityCounts {
    pub tables: usize,
    pub uniform_last: usize,
    pub canny_second_to_last: usize,
}

/// How often the uniform baseline ranks last and Canny second to last.
pub fn baseline_sanity_check(tables: &[RankingTable]) -> Result<SanityCounts> {
    let mut c = SanityCounts {
        tables: tables.len(),
        uniform_last: 0,
        canny_second_to_last: 0,
    };
    for t in tables {
        let (Some(u), Some(k)) = (t.rank_of("uniform"), t.rank_of("canny")) else {
            return Err(Error::InvalidParameter(format!(
                "{} table lacks the uniform or canny baseline",
                t.metric
            )));
        };
        let n = t.rows.len();
        c.uniform_last += usize::from(u == n);
        c.canny_second_to_last += usize::from(k + 1 == n);
    }
    Ok(c)
}

/// Per dataset: mean of each method's table means across that dataset's
/// tables, best `k` first.
pub fn top_k_summary(
    tables: &[(String, RankingTable)],
    k: usize,
) -> Result<BTreeMap<String, Vec<RankRow>>> {
    let mut by_dataset: BTreeMap<&str, Vec<&RankingTable>> = BTreeMap::new();
    for (d, t) in tables {
        by_dataset.entry(d.as_str()).or_default().push(t);
    }
    let mut out = BTreeMap::new();
    for (d, ts) in by_dataset {
        let mut scores: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for t in &ts {
            for r in &t.rows {
                scores.entry(r.method.clone()).or_default().push(r.mean);
            }
        }
        if k == 0 || k > scores.len() {
            return Err(Error::InvalidParameter(format!(
                "top-k with k={k} over {} methods",
                scores.len()
            )));
        }
        let mut table = build_ranking(&ts[0].metric, ts[0].direction, &scores)?;
        table.rows.truncate(k);
        out.insert(d.to_string(), table.rows);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub methods: Vec<String>,
    /// Mean correlation per pair; `None` when no image gave a defined value.
    pub values: Vec<Vec<Option<f64>>>,
    /// Images with an undefined correlation, per pair.
    pub excluded: Vec<Vec<usize>>,
}

/// Mean Pearson correlation of maps between every pair of methods.
/// `maps[m][i]` is method `m`'s map for image `i`.
pub fn similarity_matrix(
    methods: &[String],
    maps: &[Vec<AttributionMap>],
) -> Result<SimilarityMatrix> {
    if methods.len() != maps.len() || maps.is_empty() {
        return Err(Error::InvalidParameter(
            "one map list per method required".into(),
        ));
    }
    let images = maps[0].len();
    if maps.iter().any(|m| m.len() != images) {
        return Err(Error::InvalidParameter(
            "methods cover different image sets".into(),
        ));
    }
    let n = methods.len();
    let mut values = vec![vec![Some(1.0); n]; n];
    let mut excluded = vec![vec![0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let mut rs = Vec::with_capacity(images);
            for (a, b) in maps[i].iter().zip(&maps[j]) {
                if (a.height(), a.width()) != (b.height(), b.width()) {
                    return Err(Error::ShapeMismatch {
                        expected: vec![a.height(), a.width()],
                        got: vec![b.height(), b.width()],
                    });
                }
                match pearson(a.values(), b.values()) {
                    Ok(r) => rs.push(r),
                    Err(Error::Undefined(_)) => excluded[i][j] += 1,
                    Err(e) => return Err(e),
                }
            }
            excluded[j][i] = excluded[i][j];
            let v = mean_std(&rs).map(|(m, _)| m);
            values[i][j] = v;
            values[j][i] = v;
        }
    }
    Ok(SimilarityMatrix {
        methods: methods.to_vec(),
        values,
        excluded,
    })
}
