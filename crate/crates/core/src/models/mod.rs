//! Scoring architectures: query encoder, matching heads, and the siamese model.

pub mod checkpoint;
pub mod params;
pub mod variant;

pub use params::{match_linear, matching_head, score_static, EncoderConfig, ModelConfig, ModelParams, SiameseOutput};
pub use variant::{ArticleFeatures, LossKind, Matching, QueryFeatures, VariantName, VariantSpec};
