//! Synthetic catalogue and query generator with known latents and a brute-force oracle.

mod config;
mod dataset;
mod generate;
mod oracle;

pub use config::GenConfig;
pub use dataset::{
    annotations_tsv, load_split, parse_annotations, Dataset, Manifest, OracleFloor, Split, SplitSummary, MANIFEST_FILE,
    SPLIT_FILES,
};
pub use generate::{generate_catalog, generate_queries, static_query_features, Catalog, GroundTruth, QueryRecord, QuerySet, TanhMap};
pub use oracle::{difficulty_floor, oracle_rank, oracle_report};
