use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::Result;

/// Retrieval position of one annotated article for one query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankEntry {
    pub query_id: u64,
    pub article_id: u64,
    pub rank: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RankReport {
    pub entries: Vec<RankEntry>,
}

impl RankReport {
    pub fn ranks(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.rank).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("query_id\tarticle_id\trank\n");
        for e in &self.entries {
            let _ = writeln!(s, "{}\t{}\t{}", e.query_id, e.article_id, e.rank);
        }
        s
    }

    pub fn save_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_tsv())?;
        Ok(())
    }
}

/// `1 + #{score > s_pos} + #{score == s_pos, id < id_pos}`.
pub fn rank_of<T: PartialOrd + Copy>(scores: &[T], ids: &[u64], positive: usize) -> usize {
    let s = scores[positive];
    let id = ids[positive];
    1 + scores
        .iter()
        .zip(ids)
        .filter(|&(&v, &j)| v > s || (v == s && j < id))
        .count()
}
