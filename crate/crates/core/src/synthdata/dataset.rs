//! Split assembly and the on-disk dataset layout.
//!
//! ```text
//! <dir>/manifest.toml
//! <dir>/{train,test}/{fdna,generic,images}.fstr
//! <dir>/{train,test}/{queries,static_queries}.qstr
//! <dir>/{train,test}/annotations.tsv
//! ```

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Metrics;
use crate::features::{ArticleStore, QueryStore};
use crate::models::{ArticleFeatures, QueryFeatures};
use crate::ndcore::Tensor;

use super::config::GenConfig;
use super::generate::{generate_catalog, generate_queries, static_query_features, Catalog, GroundTruth, QueryRecord, QuerySet};
use super::oracle::difficulty_floor;

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const SPLIT_FILES: [&str; 6] = [
    "fdna.fstr",
    "generic.fstr",
    "images.fstr",
    "queries.qstr",
    "static_queries.qstr",
    "annotations.tsv",
];

/// One side of the train/test partition. The three article stores share ids and row order.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub fdna: ArticleStore,
    pub generic: ArticleStore,
    pub images: ArticleStore,
    pub queries: QueryStore,
    pub static_queries: QueryStore,
    /// `(query_id, article_id)`, sorted.
    pub annotations: Vec<(u64, u64)>,
}

impl Split {
    /// The query store a variant reads: raw inputs for learned encoders, static features otherwise.
    pub fn query_inputs(&self, kind: QueryFeatures) -> &QueryStore {
        match kind {
            QueryFeatures::Learned => &self.queries,
            QueryFeatures::Static => &self.static_queries,
        }
    }

    pub fn article_inputs(&self, kind: ArticleFeatures) -> &ArticleStore {
        match kind {
            ArticleFeatures::Fdna => &self.fdna,
            ArticleFeatures::Generic => &self.generic,
            ArticleFeatures::Learned => &self.images,
        }
    }

    /// Article row indices annotated for each query row.
    pub fn positives(&self) -> Result<Vec<Vec<usize>>> {
        let articles = self.fdna.index_map();
        let queries: HashMap<u64, usize> = self.queries.ids().iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let mut out = vec![Vec::new(); self.queries.len()];
        for &(q, a) in &self.annotations {
            let qi = *queries.get(&q).ok_or_else(|| Error::Data(format!("annotation names unknown query {q}")))?;
            let ai = *articles.get(&a).ok_or_else(|| Error::Data(format!("annotation names unknown article {a}")))?;
            out[qi].push(ai);
        }
        if let Some(i) = out.iter().position(Vec::is_empty) {
            return Err(Error::Data(format!("query {} has no annotated article", self.queries.ids()[i])));
        }
        Ok(out)
    }

    /// Query records with raw inputs and annotated ids.
    pub fn records(&self) -> Vec<QueryRecord> {
        let mut by_query: HashMap<u64, Vec<u64>> = HashMap::new();
        for &(q, a) in &self.annotations {
            by_query.entry(q).or_default().push(a);
        }
        self.queries
            .ids()
            .iter()
            .enumerate()
            .map(|(i, &id)| QueryRecord {
                id,
                input: self.queries.feature(i).to_vec(),
                positives: by_query.remove(&id).unwrap_or_default(),
            })
            .collect()
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        self.fdna.save(dir.join(SPLIT_FILES[0]))?;
        self.generic.save(dir.join(SPLIT_FILES[1]))?;
        self.images.save(dir.join(SPLIT_FILES[2]))?;
        self.queries.save(dir.join(SPLIT_FILES[3]))?;
        self.static_queries.save(dir.join(SPLIT_FILES[4]))?;
        fs::write(dir.join(SPLIT_FILES[5]), annotations_tsv(&self.annotations))?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let text = fs::read_to_string(dir.join(SPLIT_FILES[5]))?;
        let split = Self {
            fdna: ArticleStore::load(dir.join(SPLIT_FILES[0]))?,
            generic: ArticleStore::load(dir.join(SPLIT_FILES[1]))?,
            images: ArticleStore::load(dir.join(SPLIT_FILES[2]))?,
            queries: QueryStore::load(dir.join(SPLIT_FILES[3]))?,
            static_queries: QueryStore::load(dir.join(SPLIT_FILES[4]))?,
            annotations: parse_annotations(&text)?,
        };
        if split.fdna.ids() != split.generic.ids() || split.fdna.ids() != split.images.ids() {
            return Err(Error::Data(format!("article stores in {} disagree on ids", dir.display())));
        }
        if split.queries.ids() != split.static_queries.ids() {
            return Err(Error::Data(format!("query stores in {} disagree on ids", dir.display())));
        }
        Ok(split)
    }
}

pub fn annotations_tsv(pairs: &[(u64, u64)]) -> String {
    let mut s = String::new();
    for (q, a) in pairs {
        let _ = writeln!(s, "{q}\t{a}");
    }
    s
}

pub fn parse_annotations(text: &str) -> Result<Vec<(u64, u64)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::Data(format!("annotations line {}: expected `query_id<TAB>article_id`, got {line:?}", n + 1));
        let (q, a) = line.split_once('\t').ok_or_else(bad)?;
        out.push((q.trim().parse().map_err(|_| bad())?, a.trim().parse().map_err(|_| bad())?));
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// Oracle statistics on the test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleFloor {
    pub median_rank: usize,
    pub average_rank: f64,
    pub top1: f64,
    pub top20: f64,
    pub pairs: usize,
}

impl From<&Metrics> for OracleFloor {
    fn from(m: &Metrics) -> Self {
        Self { median_rank: m.median_rank, average_rank: m.average_rank, top1: m.top_k[0], top20: m.top_k[3], pairs: m.pairs }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub articles: usize,
    pub queries: usize,
    pub pairs: usize,
    pub multi_label_queries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub generator: GenConfig,
    pub files: Vec<String>,
    pub train: SplitSummary,
    pub test: SplitSummary,
    pub oracle: OracleFloor,
}

impl Manifest {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let path = dir.as_ref().join(MANIFEST_FILE);
        let text = fs::read_to_string(&path)?;
        toml::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }

    pub fn to_text(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Data(format!("manifest: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: GenConfig,
    pub catalog: Catalog,
    pub truth: GroundTruth,
    pub queries: QuerySet,
    pub train: Split,
    pub test: Split,
    pub oracle: Metrics,
}

fn query_store(recs: &[QueryRecord], dim: usize) -> Result<QueryStore> {
    let mut t = Tensor::zeros(recs.len(), dim);
    for (i, r) in recs.iter().enumerate() {
        t.row_mut(i).copy_from_slice(&r.input);
    }
    QueryStore::new(recs.iter().map(|r| r.id).collect(), t)
}

fn assemble(catalog: &Catalog, rows: &[usize], recs: &[QueryRecord], static_q: Tensor<f32>, dim: usize) -> Result<Split> {
    let mut annotations: Vec<(u64, u64)> = recs.iter().flat_map(|r| r.positives.iter().map(move |&a| (r.id, a))).collect();
    annotations.sort_unstable();
    Ok(Split {
        fdna: catalog.fdna.permuted(rows)?,
        generic: catalog.generic.permuted(rows)?,
        images: catalog.images.permuted(rows)?,
        queries: query_store(recs, dim)?,
        static_queries: QueryStore::new(recs.iter().map(|r| r.id).collect(), static_q)?,
        annotations,
    })
}

fn summary(split: &Split, recs: &[QueryRecord]) -> SplitSummary {
    SplitSummary {
        articles: split.fdna.len(),
        queries: recs.len(),
        pairs: split.annotations.len(),
        multi_label_queries: recs.iter().filter(|r| r.positives.len() > 1).count(),
    }
}

impl Dataset {
    /// Runs the full generator. A pure function of `config`.
    pub fn generate(config: &GenConfig) -> Result<Self> {
        config.validate()?;
        let (catalog, mut truth) = generate_catalog(config)?;
        let queries = generate_queries(config, &mut truth)?;
        let (static_train, static_test) = static_query_features(config, &queries)?;
        let train_rows: Vec<usize> = (0..truth.ids.len()).filter(|&i| !truth.in_test[i]).collect();
        let test_rows: Vec<usize> = (0..truth.ids.len()).filter(|&i| truth.in_test[i]).collect();
        let train = assemble(&catalog, &train_rows, &queries.train, static_train, config.query_dim)?;
        let test = assemble(&catalog, &test_rows, &queries.test, static_test, config.query_dim)?;
        let oracle = difficulty_floor(&queries.test, &truth.test_ids(), &truth)?;
        Ok(Self { config: config.clone(), catalog, truth, queries, train, test, oracle })
    }

    pub fn manifest(&self) -> Manifest {
        let mut files = vec![MANIFEST_FILE.to_string()];
        for split in ["train", "test"] {
            files.extend(SPLIT_FILES.iter().map(|f| format!("{split}/{f}")));
        }
        Manifest {
            generator: self.config.clone(),
            files,
            train: summary(&self.train, &self.queries.train),
            test: summary(&self.test, &self.queries.test),
            oracle: OracleFloor::from(&self.oracle),
        }
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        self.train.save(dir.join("train"))?;
        self.test.save(dir.join("test"))?;
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, self.manifest().to_text()?)?;
        Ok(path)
    }
}

pub fn load_split(dir: impl AsRef<Path>, name: &str) -> Result<Split> {
    Split::load(dir.as_ref().join(name))
}
