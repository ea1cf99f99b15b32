//! Brute-force ranking with the generating latents: candidate `j` scores
//! `−‖q − g(l_j)‖²`.

use crate::error::{Error, Result};
use crate::eval::{compute_from_ranks, rank_of, Metrics, RankEntry, RankReport};

use super::generate::{GroundTruth, QueryRecord};

fn neg_sq_dist(q: &[f64], y: &[f64]) -> f64 {
    -q.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
}

fn position(retrieval: &[u64], id: u64) -> Result<usize> {
    retrieval
        .iter()
        .position(|&r| r == id)
        .ok_or_else(|| Error::Data(format!("positive article {id} is not in the retrieval set")))
}

fn oracle_scores(query: &QueryRecord, mapped: &[Vec<f64>]) -> Vec<f64> {
    let q: Vec<f64> = query.input.iter().map(|&v| f64::from(v)).collect();
    mapped.iter().map(|y| neg_sq_dist(&q, y)).collect()
}

fn mapped_latents(retrieval: &[u64], truth: &GroundTruth) -> Result<Vec<Vec<f64>>> {
    retrieval.iter().map(|&id| Ok(truth.g.apply(truth.latent(id)?))).collect()
}

/// Rank of `positive` for `query` among `retrieval` article ids.
pub fn oracle_rank(query: &QueryRecord, positive: u64, retrieval: &[u64], truth: &GroundTruth) -> Result<RankEntry> {
    let pos = position(retrieval, positive)?;
    let scores = oracle_scores(query, &mapped_latents(retrieval, truth)?);
    Ok(RankEntry { query_id: query.id, article_id: positive, rank: rank_of(&scores, retrieval, pos) })
}

/// Oracle ranks for every (query, positive) pair.
pub fn oracle_report(queries: &[QueryRecord], retrieval: &[u64], truth: &GroundTruth) -> Result<RankReport> {
    let mapped = mapped_latents(retrieval, truth)?;
    let mut entries = Vec::new();
    for query in queries {
        let scores = oracle_scores(query, &mapped);
        for &p in &query.positives {
            let pos = position(retrieval, p)?;
            entries.push(RankEntry { query_id: query.id, article_id: p, rank: rank_of(&scores, retrieval, pos) });
        }
    }
    Ok(RankReport { entries })
}

/// The ranking quality of the oracle on a split; trained models are judged against it.
pub fn difficulty_floor(queries: &[QueryRecord], retrieval: &[u64], truth: &GroundTruth) -> Result<Metrics> {
    let report = oracle_report(queries, retrieval, truth)?;
    compute_from_ranks(&report.ranks(), retrieval.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{generate_catalog, generate_queries, GenConfig};

    fn setup(cfg: &GenConfig) -> (Vec<QueryRecord>, Vec<u64>, GroundTruth) {
        let (_, mut t) = generate_catalog(cfg).unwrap();
        let q = generate_queries(cfg, &mut t).unwrap();
        let ids = t.test_ids();
        (q.test, ids, t)
    }

    #[test]
    fn noiseless_single_positive_ranks_first() {
        let cfg = GenConfig { articles: 400, queries: 200, noise_sigma: 0.0, multi_label_fraction: 0.0, ..Default::default() };
        let (q, ids, t) = setup(&cfg);
        for r in &q {
            assert_eq!(oracle_rank(r, r.positives[0], &ids, &t).unwrap().rank, 1);
        }
    }

    #[test]
    fn report_agrees_with_single_ranking() {
        let cfg = GenConfig { articles: 300, queries: 300, noise_sigma: 0.5, ..Default::default() };
        let (q, ids, t) = setup(&cfg);
        let report = oracle_report(&q, &ids, &t).unwrap();
        let mut direct = Vec::new();
        for r in &q {
            for &p in &r.positives {
                direct.push(oracle_rank(r, p, &ids, &t).unwrap());
            }
        }
        assert_eq!(report.entries, direct);
    }

    #[test]
    fn overwhelming_noise_gives_uniform_ranks() {
        let cfg = GenConfig { articles: 1000, queries: 5000, noise_sigma: 1e6, ..Default::default() };
        let (q, ids, t) = setup(&cfg);
        let m = difficulty_floor(&q, &ids, &t).unwrap();
        let expected = (ids.len() as f64 + 1.0) / 2.0;
        assert!((m.median_rank as f64 - expected).abs() < 0.1 * ids.len() as f64, "{} vs {expected}", m.median_rank);
        assert!((m.average_rank - expected).abs() < 0.05 * ids.len() as f64);
    }

    #[test]
    fn unknown_positive_is_a_data_error() {
        let cfg = GenConfig { articles: 100, queries: 50, ..Default::default() };
        let (q, ids, t) = setup(&cfg);
        assert!(matches!(oracle_rank(&q[0], 999_999, &ids, &t), Err(Error::Data(_))));
    }
}
