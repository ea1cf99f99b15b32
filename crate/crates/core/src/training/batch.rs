//! Mini-batch construction with per-query negative resampling.

use rand::seq::index;

use crate::error::{Error, Result};
use crate::rng::Stream;

pub const DEFAULT_BATCH_SIZE: usize = 64;
pub const DEFAULT_ARTICLES_PER_QUERY: usize = 50;

/// Queries of one mini-batch, each with `K` labelled article slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairBatch {
    /// Query row indices `c(i)`.
    pub queries: Vec<usize>,
    /// Article row indices `c(i, j)`, `K` per query, positives first.
    pub articles: Vec<Vec<usize>>,
    /// `1` iff the article is annotated for the query.
    pub labels: Vec<Vec<u8>>,
}

impl PairBatch {
    pub fn slots(&self) -> usize {
        self.articles.first().map_or(0, Vec::len)
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize, u8)> + '_ {
        self.queries.iter().enumerate().flat_map(move |(i, &q)| {
            self.articles[i].iter().zip(&self.labels[i]).map(move |(&a, &y)| (q, a, y))
        })
    }
}

/// One sampled positive and `K` negatives per query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripletBatch {
    pub queries: Vec<usize>,
    pub positives: Vec<usize>,
    pub negatives: Vec<Vec<usize>>,
}

fn sorted_positives(positives: &[usize], query: usize) -> Result<Vec<usize>> {
    if positives.is_empty() {
        return Err(Error::Data(format!("query row {query} has no annotated article")));
    }
    let mut p = positives.to_vec();
    p.sort_unstable();
    p.dedup();
    Ok(p)
}

/// Draws `count` distinct article indices from `0..num_articles`, skipping `excluded` (sorted).
pub fn sample_negatives(excluded: &[usize], num_articles: usize, count: usize, rng: &mut Stream) -> Result<Vec<usize>> {
    let available = num_articles.saturating_sub(excluded.len());
    if count > available {
        return Err(Error::Config(format!(
            "need {count} negatives but only {available} of {num_articles} articles are not positives"
        )));
    }
    Ok(index::sample(rng, available, count)
        .into_iter()
        .map(|u| {
            let mut idx = u;
            for &p in excluded {
                if p <= idx {
                    idx += 1;
                } else {
                    break;
                }
            }
            idx
        })
        .collect())
}

/// Builds a batch where every query sees all its positives plus random negatives
/// to fill `k` slots.
pub fn build_pair_batch(
    positives: &[Vec<usize>],
    queries: &[usize],
    num_articles: usize,
    k: usize,
    rng: &mut Stream,
) -> Result<PairBatch> {
    if num_articles < k {
        return Err(Error::Config(format!("catalogue of {num_articles} articles is smaller than {k} slots")));
    }
    let mut batch = PairBatch { queries: queries.to_vec(), articles: Vec::new(), labels: Vec::new() };
    for &q in queries {
        let pos = sorted_positives(&positives[q], q)?;
        if pos.len() > k {
            return Err(Error::Config(format!("query row {q} has {} positives, more than {k} slots", pos.len())));
        }
        let neg = sample_negatives(&pos, num_articles, k - pos.len(), rng)?;
        let mut labels = vec![1u8; pos.len()];
        labels.resize(k, 0);
        let mut slots = pos;
        slots.extend(neg);
        batch.articles.push(slots);
        batch.labels.push(labels);
    }
    Ok(batch)
}

/// Builds triplets: one uniformly chosen positive and `negatives` negatives per query.
pub fn build_triplet_batch(
    positives: &[Vec<usize>],
    queries: &[usize],
    num_articles: usize,
    negatives: usize,
    rng: &mut Stream,
) -> Result<TripletBatch> {
    if negatives == 0 {
        return Err(Error::Parameter("triplet batches need at least one negative".into()));
    }
    let mut batch = TripletBatch { queries: queries.to_vec(), positives: Vec::new(), negatives: Vec::new() };
    for &q in queries {
        let pos = sorted_positives(&positives[q], q)?;
        let pick = index::sample(rng, pos.len(), 1).index(0);
        batch.positives.push(pos[pick]);
        batch.negatives.push(sample_negatives(&pos, num_articles, negatives, rng)?);
    }
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Streams;
    use std::collections::HashSet;

    #[test]
    fn single_positive_gets_49_negatives() {
        let positives = vec![vec![7], vec![3, 400]];
        let mut rng = Streams::new(1).stream("b");
        let b = build_pair_batch(&positives, &[0, 1], 500, 50, &mut rng).unwrap();
        assert_eq!(b.labels[0].iter().filter(|&&y| y == 0).count(), 49);
        assert_eq!(b.labels[1].iter().filter(|&&y| y == 0).count(), 48);
        assert_eq!(&b.articles[1][..2], &[3, 400]);
        assert_eq!(&b.labels[1][..2], &[1, 1]);
        for slots in &b.articles {
            assert_eq!(slots.len(), 50);
            assert_eq!(slots.iter().collect::<HashSet<_>>().len(), 50);
        }
        assert!(!b.articles[0][1..].contains(&7));
    }

    #[test]
    fn too_many_positives_or_tiny_catalogue() {
        let many = vec![(0..51).collect::<Vec<_>>()];
        let mut rng = Streams::new(2).stream("b");
        assert!(matches!(build_pair_batch(&many, &[0], 500, 50, &mut rng), Err(Error::Config(_))));
        assert!(matches!(build_pair_batch(&[vec![1]], &[0], 20, 50, &mut rng), Err(Error::Config(_))));
        assert!(matches!(build_pair_batch(&[vec![]], &[0], 500, 50, &mut rng), Err(Error::Data(_))));
    }

    #[test]
    fn negatives_are_resampled() {
        let positives = vec![vec![10]];
        let mut rng = Streams::new(3).stream("b");
        let a = build_pair_batch(&positives, &[0], 500, 50, &mut rng).unwrap();
        let b = build_pair_batch(&positives, &[0], 500, 50, &mut rng).unwrap();
        assert_ne!(a.articles, b.articles);
    }

    #[test]
    fn exclusion_mapping_covers_all_non_positives() {
        let mut rng = Streams::new(4).stream("b");
        let excluded = vec![0, 2, 5, 9];
        let got: HashSet<usize> = sample_negatives(&excluded, 10, 6, &mut rng).unwrap().into_iter().collect();
        assert_eq!(got, [1, 3, 4, 6, 7, 8].into_iter().collect());
    }

    #[test]
    fn triplet_batches() {
        let positives = vec![vec![1, 2, 3]];
        let mut rng = Streams::new(5).stream("b");
        let t = build_triplet_batch(&positives, &[0, 0], 100, 50, &mut rng).unwrap();
        for (p, negs) in t.positives.iter().zip(&t.negatives) {
            assert!(positives[0].contains(p));
            assert_eq!(negs.len(), 50);
            assert!(negs.iter().all(|n| !positives[0].contains(n)));
        }
        assert!(matches!(build_triplet_batch(&positives, &[0], 100, 0, &mut rng), Err(Error::Parameter(_))));
    }
}
