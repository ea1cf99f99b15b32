use std::fmt::Write as _;
use std::hint::black_box;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::models::ModelParams;
use crate::ndcore::Tensor;
use crate::scalar::Scalar;

use super::rank::{article_features, query_features};

pub const DEFAULT_REPETITIONS: usize = 10;
pub const TIMING_HEADER: &str = "n_queries,articles,chunk,repetitions,mean_wall_s,per_query_ms";

#[derive(Debug, Clone, PartialEq)]
pub struct TimingReport {
    pub n_queries: usize,
    pub articles: usize,
    pub chunk: usize,
    pub repetitions: usize,
    /// Wall time of each repetition, seconds.
    pub wall_times: Vec<f64>,
    pub mean_wall_s: f64,
    pub per_query_ms: f64,
}

impl TimingReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.6},{:.6}",
            self.n_queries, self.articles, self.chunk, self.repetitions, self.mean_wall_s, self.per_query_ms
        )
    }
}

pub fn timing_csv(reports: &[TimingReport]) -> String {
    let mut s = String::from(TIMING_HEADER);
    s.push('\n');
    for r in reports {
        let _ = writeln!(s, "{}", r.csv_row());
    }
    s
}

/// Encodes `n` queries (cycling through `queries`) and scores each against
/// every article; returns the number of scores produced.
fn score_queries<T: Scalar>(model: &ModelParams<T>, queries: &Tensor<T>, af: &Tensor<T>, n: usize, chunk: usize) -> Result<usize> {
    if n == 0 {
        return Ok(0);
    }
    let rows: Vec<usize> = (0..n).map(|i| i % queries.rows()).collect();
    let qf = query_features(model, &queries.select_rows(&rows))?;
    let mut produced = 0;
    for i in 0..n {
        produced += black_box(model.score_articles(qf.row(i), af, chunk)?).len();
    }
    Ok(produced)
}

/// Mean wall time of full-catalogue scoring for each query count, after one warm-up pass.
/// Repetitions are interleaved across the sweep so slow drift in machine speed
/// lands on every query count alike.
pub fn timing_benchmark<T: Scalar>(
    model: &ModelParams<T>,
    n_queries: &[usize],
    queries: &Tensor<T>,
    articles: &Tensor<T>,
    chunk: usize,
    repetitions: usize,
) -> Result<Vec<TimingReport>> {
    if repetitions == 0 {
        return Err(Error::Parameter("repetitions must be >= 1".into()));
    }
    if queries.rows() == 0 && n_queries.iter().any(|&n| n > 0) {
        return Err(Error::Data("no queries to benchmark with".into()));
    }
    let af = article_features(model, articles)?;
    let warm = n_queries.iter().copied().max().unwrap_or(0).min(queries.rows());
    score_queries(model, queries, &af, warm, chunk)?;

    let mut wall_times = vec![Vec::with_capacity(repetitions); n_queries.len()];
    for _ in 0..repetitions {
        for (times, &n) in wall_times.iter_mut().zip(n_queries) {
            let start = Instant::now();
            let produced = score_queries(model, queries, &af, n, chunk)?;
            times.push(start.elapsed().as_secs_f64());
            debug_assert_eq!(produced, n * af.rows());
        }
    }
    Ok(n_queries
        .iter()
        .zip(wall_times)
        .map(|(&n, wall_times)| {
            let mean = wall_times.iter().sum::<f64>() / repetitions as f64;
            TimingReport {
                n_queries: n,
                articles: articles.rows(),
                chunk,
                repetitions,
                wall_times,
                mean_wall_s: mean,
                per_query_ms: if n == 0 { 0.0 } else { 1e3 * mean / n as f64 },
            }
        })
        .collect())
}

/// Least-squares line through `(x, y)`; returns `(slope, intercept, r²)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, my - slope * mx, r2)
}
