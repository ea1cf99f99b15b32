use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::report::RankReport;

pub const TOP_K: [usize; 5] = [1, 5, 10, 20, 50];
pub const METRICS_HEADER: &str = "variant,top1,top5,top10,top20,top50,top1pct,avg,median";

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    /// Fractions of pairs ranked within 1, 5, 10, 20, 50.
    pub top_k: [f64; 5],
    pub top_1pct: f64,
    /// `ceil(M / 100)`.
    pub one_percent_threshold: usize,
    pub average_rank: f64,
    /// Lower middle element for an even number of pairs.
    pub median_rank: usize,
    pub pairs: usize,
    pub retrieval_size: usize,
}

impl Metrics {
    pub fn top(&self, k: usize) -> Option<f64> {
        TOP_K.iter().position(|&t| t == k).map(|i| self.top_k[i])
    }

    pub fn csv_row(&self, variant: &str) -> String {
        let t = &self.top_k;
        format!(
            "{variant},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.3},{}",
            t[0], t[1], t[2], t[3], t[4], self.top_1pct, self.average_rank, self.median_rank
        )
    }
}

pub fn one_percent_threshold(m: usize) -> usize {
    m.div_ceil(100)
}

pub fn compute_metrics(report: &RankReport, m: usize) -> Result<Metrics> {
    compute_from_ranks(&report.ranks(), m)
}

pub fn compute_from_ranks(ranks: &[usize], m: usize) -> Result<Metrics> {
    if ranks.is_empty() {
        return Err(Error::Data("no (query, article) pairs to aggregate".into()));
    }
    let n = ranks.len() as f64;
    let frac = |k: usize| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
    let threshold = one_percent_threshold(m);
    let mut sorted = ranks.to_vec();
    sorted.sort_unstable();
    Ok(Metrics {
        top_k: TOP_K.map(frac),
        top_1pct: frac(threshold),
        one_percent_threshold: threshold,
        average_rank: ranks.iter().map(|&r| r as f64).sum::<f64>() / n,
        median_rank: sorted[(sorted.len() - 1) / 2],
        pairs: ranks.len(),
        retrieval_size: m,
    })
}

pub fn metrics_csv(rows: &[(String, Metrics)]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for (name, m) in rows {
        let _ = writeln!(s, "{}", m.csv_row(name));
    }
    s
}

pub fn save_metrics_csv(rows: &[(String, Metrics)], path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, metrics_csv(rows))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_counted_example() {
        let m = compute_from_ranks(&[1, 3, 7], 1000).unwrap();
        assert_eq!(m.top_k[0], 1.0 / 3.0);
        assert_eq!(m.top_k[1], 2.0 / 3.0);
        assert_eq!(m.average_rank, 11.0 / 3.0);
        assert_eq!(m.median_rank, 3);
        assert_eq!(m.one_percent_threshold, 10);
    }

    #[test]
    fn one_percent_of_fifty_thousand_is_five_hundred() {
        assert_eq!(one_percent_threshold(50_000), 500);
        assert_eq!(one_percent_threshold(500), 5);
        assert_eq!(one_percent_threshold(501), 6);
    }

    #[test]
    fn all_first_rank() {
        let m = compute_from_ranks(&[1; 9], 100).unwrap();
        assert!(m.top_k.iter().all(|&t| t == 1.0));
        assert_eq!(m.top_1pct, 1.0);
        assert_eq!(m.average_rank, 1.0);
        assert_eq!(m.median_rank, 1);
    }

    #[test]
    fn even_count_median_is_lower_middle() {
        assert_eq!(compute_from_ranks(&[4, 1, 9, 2], 10).unwrap().median_rank, 2);
    }

    #[test]
    fn empty_report_is_rejected() {
        assert!(compute_from_ranks(&[], 10).is_err());
    }

    #[test]
    fn csv_layout() {
        let m = compute_from_ranks(&[1, 3, 7], 1000).unwrap();
        let csv = metrics_csv(&[("linear".into(), m)]);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(METRICS_HEADER));
        assert_eq!(lines.next(), Some("linear,0.333333,0.666667,1.000000,1.000000,1.000000,1.000000,3.667,3"));
    }
}
