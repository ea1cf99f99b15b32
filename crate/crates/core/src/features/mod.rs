//! Static article features: PCA reduction and binary feature stores.

pub mod pca;
pub mod store;

pub use pca::PcaModel;
pub use store::{ArticleStore, AttributeSpec, QueryStore};
