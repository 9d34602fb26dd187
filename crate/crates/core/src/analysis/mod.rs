//! Statistics over maps, curves and rankings.

mod ranking;
mod stats;
mod sweep;

pub use ranking::{
    baseline_sanity_check, build_ranking, consistency_matrix, similarity_matrix, top_k_summary,
    ConsistencyMatrix, RankRow, RankingTable, SanityCounts, SimilarityMatrix,
};
pub use stats::{kendall_tau, mean_std, monotonicity, pearson, smoothness};
pub use sweep::{epsilon_sweep, SweepPoint};
