use crate::error::{shape_err, Error, Result};
use crate::models::{ArticleFeatures, ModelParams};
use crate::ndcore::Tensor;
use crate::scalar::Scalar;
use crate::synthdata::Split;

use super::report::{rank_of, RankEntry, RankReport};

pub const DEFAULT_CHUNK: usize = 50;

/// Matching-space query features: the encoder output, or the static features unchanged.
pub fn query_features<T: Scalar>(model: &ModelParams<T>, queries: &Tensor<T>) -> Result<Tensor<T>> {
    if model.variant.has_encoder() { model.encode_queries(queries) } else { Ok(queries.clone()) }
}

/// Matching-space article features: the article encoder output for two-leg
/// models, the static features otherwise.
pub fn article_features<T: Scalar>(model: &ModelParams<T>, articles: &Tensor<T>) -> Result<Tensor<T>> {
    if model.variant.article_features == ArticleFeatures::Learned {
        model.encode_articles(articles)
    } else {
        Ok(articles.clone())
    }
}

/// Ranks every annotated article among all rows of `af`.
///
/// `positives[i]` lists article rows annotated for query row `i`.
pub fn rank_features<T: Scalar>(
    model: &ModelParams<T>,
    qf: &Tensor<T>,
    query_ids: &[u64],
    positives: &[Vec<usize>],
    af: &Tensor<T>,
    article_ids: &[u64],
    chunk: usize,
) -> Result<RankReport> {
    if qf.rows() != query_ids.len() || positives.len() != query_ids.len() {
        return Err(shape_err!("{} query rows, {} ids, {} positive lists", qf.rows(), query_ids.len(), positives.len()));
    }
    if af.rows() != article_ids.len() {
        return Err(shape_err!("{} article rows for {} ids", af.rows(), article_ids.len()));
    }
    if af.rows() == 0 {
        return Err(Error::Data("empty retrieval set".into()));
    }
    let mut entries = Vec::new();
    for (i, pos) in positives.iter().enumerate() {
        let scores = model.score_articles(qf.row(i), af, chunk)?;
        for &p in pos {
            if p >= af.rows() {
                return Err(Error::Data(format!("positive row {p} outside the {} retrieval articles", af.rows())));
            }
            entries.push(RankEntry { query_id: query_ids[i], article_id: article_ids[p], rank: rank_of(&scores, article_ids, p) });
        }
    }
    Ok(RankReport { entries })
}

/// Ranks each query's annotated articles among every article of the split.
pub fn rank_all(model: &ModelParams<f32>, split: &Split, chunk: usize) -> Result<RankReport> {
    let queries = split.query_inputs(model.variant.query_features);
    let articles = split.article_inputs(model.variant.article_features);
    let qf = query_features(model, queries.features())?;
    let af = article_features(model, articles.features())?;
    rank_features(model, &qf, queries.ids(), &split.positives()?, &af, articles.ids(), chunk)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ModelConfig, VariantName, VariantSpec};
    use crate::rng::Streams;
    use crate::synthdata::{Dataset, GenConfig};

    fn dataset() -> Dataset {
        Dataset::generate(&GenConfig { articles: 300, queries: 300, ..Default::default() }).unwrap()
    }

    fn model(name: VariantName) -> ModelParams<f32> {
        let cfg = ModelConfig { head_hidden: vec![16], ..Default::default() };
        ModelParams::init(VariantSpec::of(name), &cfg, &mut Streams::new(3).stream("init")).unwrap()
    }

    #[test]
    fn one_entry_per_pair_within_bounds() {
        let ds = dataset();
        for name in VariantName::ALL {
            let r = rank_all(&model(name), &ds.test, DEFAULT_CHUNK).unwrap();
            assert_eq!(r.len(), ds.test.annotations.len(), "{name}");
            assert!(r.entries.iter().all(|e| (1..=ds.test.fdna.len()).contains(&e.rank)));
        }
    }

    #[test]
    fn article_order_does_not_matter() {
        let ds = dataset();
        let m = model(VariantName::Studio2Shop);
        let base = rank_all(&m, &ds.test, DEFAULT_CHUNK).unwrap();
        let n = ds.test.fdna.len();
        let order: Vec<usize> = (0..n).rev().collect();
        let mut shuffled = ds.test.clone();
        shuffled.fdna = shuffled.fdna.permuted(&order).unwrap();
        assert_eq!(rank_all(&m, &shuffled, DEFAULT_CHUNK).unwrap(), base);
    }

    #[test]
    fn chunk_size_does_not_change_scores() {
        let ds = dataset();
        let m = model(VariantName::Nonlinear);
        let qf = query_features(&m, ds.test.queries.features()).unwrap();
        let af = ds.test.generic.features();
        for i in 0..5 {
            let a = m.score_articles(qf.row(i), af, 50).unwrap();
            let b = m.score_articles(qf.row(i), af, af.rows()).unwrap();
            assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
    }
}
