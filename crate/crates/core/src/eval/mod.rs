//! Full-catalogue retrieval, rank metrics, two-stage reranking and timing.

mod metrics;
mod rank;
mod report;
mod timing;
mod two_stage;

pub use metrics::{
    compute_from_ranks, compute_metrics, metrics_csv, one_percent_threshold, save_metrics_csv, Metrics, METRICS_HEADER, TOP_K,
};
pub use rank::{article_features, query_features, rank_all, rank_features, DEFAULT_CHUNK};
pub use report::{rank_of, RankEntry, RankReport};
pub use timing::{linear_fit, timing_benchmark, timing_csv, TimingReport, DEFAULT_REPETITIONS, TIMING_HEADER};
pub use two_stage::{two_stage_order, two_stage_rank, two_stage_report};
