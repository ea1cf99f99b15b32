//! Prefilter with a linear matcher, rerank the shortlist with a non-linear head.

use std::cmp::Ordering;

use crate::error::{shape_err, Error, Result};
use crate::models::{Matching, ModelParams};
use crate::ndcore::Tensor;
use crate::scalar::Scalar;

use super::report::{RankEntry, RankReport};

/// Row indices sorted by descending score, ties by ascending id.
fn order_by_score<T: Scalar>(rows: &mut [usize], scores: &[T], ids: &[u64]) {
    rows.sort_by(|&a, &b| {
        scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal).then(ids[a].cmp(&ids[b]))
    });
}

/// Both matchers must read the same article features.
fn check_pair<T: Scalar>(linear: &ModelParams<T>, nonlinear: &ModelParams<T>) -> Result<()> {
    if linear.variant.matching != Matching::Linear {
        return Err(Error::Config(format!("prefilter variant {} does not match linearly", linear.variant.name)));
    }
    if nonlinear.variant.matching != Matching::Nonlinear {
        return Err(Error::Config(format!("rerank variant {} has no non-linear head", nonlinear.variant.name)));
    }
    if linear.variant.article_features != nonlinear.variant.article_features {
        return Err(Error::Config(format!(
            "prefilter {} and rerank {} read different article features",
            linear.variant.name, nonlinear.variant.name
        )));
    }
    Ok(())
}

/// Full ordering of all articles for one query: the top `shortlist` by linear
/// score reranked by the head, then the remainder in linear order.
/// `query` is the raw query input; each model applies its own encoder.
pub fn two_stage_order<T: Scalar>(
    linear: &ModelParams<T>,
    nonlinear: &ModelParams<T>,
    query: &[T],
    articles: &Tensor<T>,
    ids: &[u64],
    shortlist: usize,
    chunk: usize,
) -> Result<(Vec<usize>, usize)> {
    if shortlist < 1 {
        return Err(Error::Parameter("shortlist size must be >= 1".into()));
    }
    if articles.rows() != ids.len() {
        return Err(shape_err!("{} article rows for {} ids", articles.rows(), ids.len()));
    }
    check_pair(linear, nonlinear)?;
    let s = shortlist.min(articles.rows());
    let lin = linear.score_articles(&linear.encode_query(query)?, articles, chunk)?;
    let mut order: Vec<usize> = (0..articles.rows()).collect();
    order_by_score(&mut order, &lin, ids);

    let short = articles.select_rows(&order[..s]);
    let rerank = nonlinear.score_articles(&nonlinear.encode_query(query)?, &short, chunk)?;
    let short_ids: Vec<u64> = order[..s].iter().map(|&r| ids[r]).collect();
    let mut local: Vec<usize> = (0..s).collect();
    order_by_score(&mut local, &rerank, &short_ids);
    let head: Vec<usize> = local.iter().map(|&l| order[l]).collect();
    order[..s].copy_from_slice(&head);
    Ok((order, s))
}

/// The shortlist of `S` article rows in rerank order.
pub fn two_stage_rank<T: Scalar>(
    linear: &ModelParams<T>,
    nonlinear: &ModelParams<T>,
    query: &[T],
    articles: &Tensor<T>,
    ids: &[u64],
    shortlist: usize,
    chunk: usize,
) -> Result<Vec<usize>> {
    let (mut order, s) = two_stage_order(linear, nonlinear, query, articles, ids, shortlist, chunk)?;
    order.truncate(s);
    Ok(order)
}

/// Ranks of annotated articles under the two-stage ordering, plus the
/// fraction of pairs whose article made the shortlist.
pub fn two_stage_report<T: Scalar>(
    linear: &ModelParams<T>,
    nonlinear: &ModelParams<T>,
    queries: &Tensor<T>,
    query_ids: &[u64],
    positives: &[Vec<usize>],
    articles: &Tensor<T>,
    ids: &[u64],
    shortlist: usize,
    chunk: usize,
) -> Result<(RankReport, f64)> {
    let mut entries = Vec::new();
    let mut hits = 0usize;
    for (i, pos) in positives.iter().enumerate() {
        let (order, s) = two_stage_order(linear, nonlinear, queries.row(i), articles, ids, shortlist, chunk)?;
        let mut place = vec![0usize; order.len()];
        for (k, &r) in order.iter().enumerate() {
            place[r] = k + 1;
        }
        for &p in pos {
            if p >= place.len() {
                return Err(Error::Data(format!("positive row {p} outside the {} retrieval articles", place.len())));
            }
            hits += usize::from(place[p] <= s);
            entries.push(RankEntry { query_id: query_ids[i], article_id: ids[p], rank: place[p] });
        }
    }
    let recall = if entries.is_empty() { 0.0 } else { hits as f64 / entries.len() as f64 };
    Ok((RankReport { entries }, recall))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::rank::{query_features, rank_features, DEFAULT_CHUNK};
    use crate::models::{ModelConfig, VariantName, VariantSpec};
    use crate::rng::Streams;

    fn models() -> (ModelParams<f64>, ModelParams<f64>) {
        let cfg = ModelConfig { head_hidden: vec![16], ..Default::default() };
        let s = Streams::new(11);
        (
            ModelParams::init(VariantSpec::of(VariantName::Linear), &cfg, &mut s.stream("a")).unwrap(),
            ModelParams::init(VariantSpec::of(VariantName::Studio2Shop), &cfg, &mut s.stream("b")).unwrap(),
        )
    }

    fn data(m: usize, n: usize) -> (Tensor<f64>, Tensor<f64>, Vec<u64>) {
        use rand::Rng;
        let mut rng = Streams::new(5).stream("data");
        let q = Tensor::from_vec(n, 64, (0..n * 64).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let a = Tensor::from_vec(m, 32, (0..m * 32).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        (q, a, (0..m as u64).map(|i| 1000 - i).collect())
    }

    #[test]
    fn full_shortlist_equals_plain_ranking() {
        let (lin, non) = models();
        let (q, a, ids) = data(120, 6);
        let positives: Vec<Vec<usize>> = (0..6).map(|i| vec![i * 7, i * 11 + 1]).collect();
        let qids: Vec<u64> = (1..=6).collect();
        let (two, recall) = two_stage_report(&lin, &non, &q, &qids, &positives, &a, &ids, 120, DEFAULT_CHUNK).unwrap();
        let qf = query_features(&non, &q).unwrap();
        let plain = rank_features(&non, &qf, &qids, &positives, &a, &ids, DEFAULT_CHUNK).unwrap();
        assert_eq!(two, plain);
        assert_eq!(recall, 1.0);
    }

    #[test]
    fn single_slot_is_the_linear_argmax() {
        let (lin, non) = models();
        let (q, a, ids) = data(80, 3);
        for i in 0..3 {
            let top = two_stage_rank(&lin, &non, q.row(i), &a, &ids, 1, DEFAULT_CHUNK).unwrap();
            let scores = lin.score_articles(&lin.encode_query(q.row(i)).unwrap(), &a, DEFAULT_CHUNK).unwrap();
            let best = (0..80).max_by(|&x, &y| scores[x].partial_cmp(&scores[y]).unwrap().then(ids[y].cmp(&ids[x]))).unwrap();
            assert_eq!(top, vec![best]);
        }
    }

    #[test]
    fn recall_grows_with_shortlist() {
        let (lin, non) = models();
        let (q, a, ids) = data(200, 20);
        let positives: Vec<Vec<usize>> = (0..20).map(|i| vec![(i * 37) % 200]).collect();
        let qids: Vec<u64> = (1..=20).collect();
        let mut last = 0.0;
        for s in [1, 10, 50, 100, 200] {
            let (_, r) = two_stage_report(&lin, &non, &q, &qids, &positives, &a, &ids, s, DEFAULT_CHUNK).unwrap();
            assert!(r >= last);
            last = r;
        }
        assert_eq!(last, 1.0);
    }

    #[test]
    fn empty_shortlist_and_mismatched_models_are_rejected() {
        let (lin, non) = models();
        let (q, a, ids) = data(10, 1);
        assert!(matches!(two_stage_rank(&lin, &non, q.row(0), &a, &ids, 0, 50), Err(Error::Parameter(_))));
        assert!(matches!(two_stage_rank(&non, &lin, q.row(0), &a, &ids, 3, 50), Err(Error::Config(_))));
    }
}
