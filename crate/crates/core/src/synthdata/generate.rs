use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::features::{ArticleStore, AttributeSpec, PcaModel};
use crate::ndcore::Tensor;
use crate::rng::{Stream, Streams};

use super::config::GenConfig;

/// `x ↦ W₂ tanh(W₁ x + b₁)` with Gaussian weights scaled by fan-in.
#[derive(Debug, Clone, PartialEq)]
pub struct TanhMap {
    w1: Tensor<f64>,
    b1: Vec<f64>,
    w2: Tensor<f64>,
}

impl TanhMap {
    pub fn random(input: usize, hidden: usize, output: usize, rng: &mut Stream) -> Self {
        let w1 = gaussian(hidden, input, 1.0 / (input as f64).sqrt(), rng);
        let b1 = (0..hidden).map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
        let w2 = gaussian(output, hidden, 1.0 / (hidden as f64).sqrt(), rng);
        Self { w1, b1, w2 }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.rows()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let h: Vec<f64> = self
            .w1
            .iter_rows()
            .zip(&self.b1)
            .map(|(w, b)| (dot(w, x) + b).tanh())
            .collect();
        self.w2.iter_rows().map(|w| dot(w, &h)).collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn gaussian(rows: usize, cols: usize, scale: f64, rng: &mut Stream) -> Tensor<f64> {
    let data = (0..rows * cols).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::from_vec(rows, cols, data).expect("length matches shape")
}

fn add_noise(x: &mut [f64], sigma: f64, rng: &mut Stream) {
    if sigma > 0.0 {
        for v in x {
            *v += sigma * rng.sample::<f64, _>(StandardNormal);
        }
    }
}

/// Raw query input vector with its annotated articles.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryRecord {
    pub id: u64,
    pub input: Vec<f32>,
    pub positives: Vec<u64>,
}

/// The hidden generative state behind a synthetic catalogue.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Article ids, ascending; row `i` of `latents` belongs to `ids[i]`.
    pub ids: Vec<u64>,
    pub latents: Tensor<f64>,
    pub categories: Vec<usize>,
    pub colors: Vec<usize>,
    pub category_means: Tensor<f64>,
    /// Whether each article belongs to the held-out retrieval set.
    pub in_test: Vec<bool>,
    /// Fixed map from summed article latents to query inputs.
    pub g: TanhMap,
    /// Generating articles per query id, filled by [`generate_queries`].
    pub query_positives: Vec<(u64, Vec<u64>)>,
}

impl GroundTruth {
    pub fn index_of(&self, id: u64) -> Option<usize> {
        self.ids.binary_search(&id).ok()
    }

    pub fn latent(&self, id: u64) -> Result<&[f64]> {
        self.index_of(id)
            .map(|i| self.latents.row(i))
            .ok_or_else(|| Error::Data(format!("article {id} is not part of the catalogue")))
    }

    pub fn test_ids(&self) -> Vec<u64> {
        self.ids.iter().zip(&self.in_test).filter(|(_, &t)| t).map(|(&id, _)| id).collect()
    }

    pub fn train_ids(&self) -> Vec<u64> {
        self.ids.iter().zip(&self.in_test).filter(|(_, &t)| !t).map(|(&id, _)| id).collect()
    }
}

/// Three static views of the same articles, rows aligned by id.
#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    /// Low-noise features (the attribute-network analogue).
    pub fdna: ArticleStore,
    /// Heavier-noise features from an unrelated generic extractor.
    pub generic: ArticleStore,
    /// Article image vectors in query input space, for two-leg models.
    pub images: ArticleStore,
}

fn attribute_specs(cfg: &GenConfig) -> Vec<AttributeSpec> {
    vec![
        AttributeSpec { name: "category".into(), cardinality: cfg.categories() as u16 },
        AttributeSpec { name: "color".into(), cardinality: cfg.colors as u16 },
    ]
}

/// Projects latents linearly to `raw_feature_dim`, adds noise and reduces with a
/// PCA fitted on training rows only.
fn static_view(
    cfg: &GenConfig,
    latents: &Tensor<f64>,
    in_test: &[bool],
    noise: f64,
    streams: &Streams,
    name: &str,
) -> Result<Tensor<f32>> {
    let proj = gaussian(cfg.raw_feature_dim, cfg.latent_dim, 1.0 / (cfg.latent_dim as f64).sqrt(), &mut streams.stream(&format!("{name}-projection")));
    let mut rng = streams.stream(&format!("{name}-noise"));
    let mut raw = Tensor::zeros(latents.rows(), cfg.raw_feature_dim);
    for i in 0..latents.rows() {
        let row = raw.row_mut(i);
        for (r, w) in row.iter_mut().zip(proj.iter_rows()) {
            *r = dot(w, latents.row(i));
        }
        add_noise(row, noise, &mut rng);
    }
    let train_rows: Vec<usize> = (0..raw.rows()).filter(|&i| !in_test[i]).collect();
    reduce(&raw, &train_rows, cfg.feature_dim)
}

/// PCA fitted on `fit_rows`, then one global scale so that fitted rows have unit
/// mean squared norm.
fn reduce(raw: &Tensor<f64>, fit_rows: &[usize], dim: usize) -> Result<Tensor<f32>> {
    let pca = PcaModel::fit(&raw.select_rows(fit_rows), dim)?;
    let mut z = pca.transform_rows(raw)?;
    let ms = fit_rows.iter().map(|&i| z.row(i).iter().map(|v| v * v).sum::<f64>()).sum::<f64>() / fit_rows.len() as f64;
    if ms > 0.0 {
        let s = 1.0 / ms.sqrt();
        z.data_mut().iter_mut().for_each(|v| *v *= s);
    }
    Ok(z.cast())
}

pub fn generate_catalog(cfg: &GenConfig) -> Result<(Catalog, GroundTruth)> {
    cfg.validate()?;
    let streams = Streams::new(cfg.seed);
    let m = cfg.articles;
    let l = cfg.latent_dim;

    let mut rng = streams.stream("clusters");
    let category_means = gaussian(cfg.categories(), l, cfg.cluster_scale, &mut rng);
    let color_offsets = gaussian(cfg.colors, l, cfg.color_scale, &mut rng);

    let weights = WeightedIndex::new(&cfg.category_proportions)
        .map_err(|e| Error::Config(format!("category_proportions: {e}")))?;
    let mut rng = streams.stream("articles");
    let mut categories = Vec::with_capacity(m);
    let mut colors = Vec::with_capacity(m);
    let mut latents = Tensor::zeros(m, l);
    for i in 0..m {
        let c = weights.sample(&mut rng);
        let k = rng.random_range(0..cfg.colors);
        let row = latents.row_mut(i);
        for (j, v) in row.iter_mut().enumerate() {
            *v = category_means.get(c, j) + color_offsets.get(k, j);
        }
        add_noise(row, cfg.within_scale, &mut rng);
        categories.push(c);
        colors.push(k);
    }

    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut streams.stream("split"));
    let mut in_test = vec![false; m];
    for &i in &order[..cfg.article_split().1] {
        in_test[i] = true;
    }

    let ids: Vec<u64> = (1..=m as u64).collect();
    let values: Vec<u16> = categories.iter().zip(&colors).flat_map(|(&c, &k)| [c as u16 + 1, k as u16 + 1]).collect();
    let attrs = attribute_specs(cfg);
    let store = |features: Tensor<f32>| ArticleStore::new(ids.clone(), features, attrs.clone(), values.clone());

    let fdna = store(static_view(cfg, &latents, &in_test, cfg.fdna_noise, &streams, "fdna")?)?;
    let generic = store(static_view(cfg, &latents, &in_test, cfg.generic_noise, &streams, "generic")?)?;

    let h = TanhMap::random(l, cfg.map_hidden, cfg.query_dim, &mut streams.stream("image-map"));
    let mut rng = streams.stream("image-noise");
    let mut images = Tensor::zeros(m, cfg.query_dim);
    for i in 0..m {
        let mut v = h.apply(latents.row(i));
        add_noise(&mut v, cfg.image_noise, &mut rng);
        for (dst, src) in images.row_mut(i).iter_mut().zip(v) {
            *dst = src as f32;
        }
    }
    let images = store(images)?;

    let g = TanhMap::random(l, cfg.map_hidden, cfg.query_dim, &mut streams.stream("query-map"));
    let truth = GroundTruth {
        ids,
        latents,
        categories,
        colors,
        category_means,
        in_test,
        g,
        query_positives: Vec::new(),
    };
    Ok((Catalog { fdna, generic, images }, truth))
}

/// Queries split like the articles: training queries only annotate training
/// articles and test queries only test articles.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySet {
    pub train: Vec<QueryRecord>,
    pub test: Vec<QueryRecord>,
}

pub fn generate_queries(cfg: &GenConfig, truth: &mut GroundTruth) -> Result<QuerySet> {
    cfg.validate()?;
    let streams = Streams::new(cfg.seed);
    let pools = [truth.train_ids(), truth.test_ids()];
    let (n_train, _) = cfg.query_split();
    let mut out = QuerySet { train: Vec::new(), test: Vec::new() };
    truth.query_positives.clear();
    for i in 0..cfg.queries {
        let pool = &pools[usize::from(i >= n_train)];
        let mut rng = streams.indexed("query", i as u64);
        let count = if rng.random_bool(cfg.multi_label_fraction) { rng.random_range(2..=3) } else { 1 };
        let count = count.min(pool.len());
        let mut positives: Vec<u64> = rand::seq::index::sample(&mut rng, pool.len(), count).into_iter().map(|j| pool[j]).collect();
        positives.sort_unstable();

        let mut sum = vec![0.0; cfg.latent_dim];
        for &p in &positives {
            for (s, v) in sum.iter_mut().zip(truth.latent(p)?) {
                *s += v;
            }
        }
        let mut x = truth.g.apply(&sum);
        add_noise(&mut x, cfg.noise_sigma, &mut rng);
        let id = i as u64 + 1;
        truth.query_positives.push((id, positives.clone()));
        let rec = QueryRecord { id, input: x.into_iter().map(|v| v as f32).collect(), positives };
        if i < n_train {
            out.train.push(rec);
        } else {
            out.test.push(rec);
        }
    }
    Ok(out)
}

/// Query features from a generic extractor that knows nothing about the article
/// features: a fixed random projection plus `generic_noise`, reduced by a PCA
/// fitted on training queries.
pub fn static_query_features(cfg: &GenConfig, queries: &QuerySet) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let streams = Streams::new(cfg.seed);
    let proj = gaussian(cfg.raw_feature_dim, cfg.query_dim, 1.0 / (cfg.query_dim as f64).sqrt(), &mut streams.stream("static-extractor"));
    let mut rng = streams.stream("static-extractor-noise");
    let recs: Vec<&QueryRecord> = queries.train.iter().chain(&queries.test).collect();
    let mut raw = Tensor::zeros(recs.len(), cfg.raw_feature_dim);
    for (i, r) in recs.iter().enumerate() {
        let x: Vec<f64> = r.input.iter().map(|&v| f64::from(v)).collect();
        let row = raw.row_mut(i);
        for (dst, w) in row.iter_mut().zip(proj.iter_rows()) {
            *dst = dot(w, &x);
        }
        add_noise(row, cfg.generic_noise, &mut rng);
    }
    let n_train = queries.train.len();
    let fit: Vec<usize> = (0..n_train).collect();
    let z = reduce(&raw, &fit, cfg.feature_dim.min(n_train))?;
    let test: Vec<usize> = (n_train..recs.len()).collect();
    Ok((z.select_rows(&fit), z.select_rows(&test)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GenConfig {
        GenConfig { articles: 300, queries: 200, ..Default::default() }
    }

    #[test]
    fn catalogue_is_reproducible() {
        let (a, ta) = generate_catalog(&small()).unwrap();
        let (b, tb) = generate_catalog(&small()).unwrap();
        assert_eq!(a.fdna.to_bytes().unwrap(), b.fdna.to_bytes().unwrap());
        assert_eq!(a.images.to_bytes().unwrap(), b.images.to_bytes().unwrap());
        assert_eq!(ta, tb);
        let (c, _) = generate_catalog(&GenConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a.fdna, c.fdna);
    }

    #[test]
    fn category_means_are_pairwise_distinct() {
        let (_, t) = generate_catalog(&small()).unwrap();
        let c = &t.category_means;
        for i in 0..c.rows() {
            for j in i + 1..c.rows() {
                let d: f64 = c.row(i).iter().zip(c.row(j)).map(|(a, b)| (a - b).powi(2)).sum();
                assert!(d > 0.0);
            }
        }
    }

    #[test]
    fn category_marginals_follow_proportions() {
        let cfg = GenConfig { articles: 10_000, feature_dim: 8, ..Default::default() };
        let (_, t) = generate_catalog(&cfg).unwrap();
        let total: f64 = cfg.category_proportions.iter().sum();
        for (c, w) in cfg.category_proportions.iter().enumerate() {
            let freq = t.categories.iter().filter(|&&x| x == c).count() as f64 / 10_000.0;
            assert!((freq - w / total).abs() < 0.03, "category {c}: {freq}");
        }
    }

    #[test]
    fn static_rows_are_distinct() {
        let (cat, _) = generate_catalog(&small()).unwrap();
        let mut rows: Vec<Vec<u32>> = cat.generic.features().iter_rows().map(|r| r.iter().map(|v| v.to_bits()).collect()).collect();
        rows.sort();
        rows.dedup();
        assert_eq!(rows.len(), 300);
    }

    #[test]
    fn queries_annotate_their_own_split() {
        let cfg = small();
        let (_, mut t) = generate_catalog(&cfg).unwrap();
        let q = generate_queries(&cfg, &mut t).unwrap();
        assert_eq!((q.train.len(), q.test.len()), cfg.query_split());
        for r in &q.train {
            assert!(r.positives.iter().all(|&p| !t.in_test[t.index_of(p).unwrap()]));
        }
        for r in &q.test {
            assert!(r.positives.iter().all(|&p| t.in_test[t.index_of(p).unwrap()]));
        }
        assert_eq!(t.query_positives.len(), cfg.queries);
    }

    #[test]
    fn single_label_when_fraction_is_zero() {
        let cfg = GenConfig { multi_label_fraction: 0.0, ..small() };
        let (_, mut t) = generate_catalog(&cfg).unwrap();
        let q = generate_queries(&cfg, &mut t).unwrap();
        assert!(q.train.iter().chain(&q.test).all(|r| r.positives.len() == 1));
    }

    #[test]
    fn multi_label_share_matches_default() {
        let cfg = GenConfig { articles: 500, queries: 20_000, feature_dim: 8, ..Default::default() };
        let (_, mut t) = generate_catalog(&cfg).unwrap();
        let q = generate_queries(&cfg, &mut t).unwrap();
        let multi = q.train.iter().chain(&q.test).filter(|r| r.positives.len() > 1).count() as f64 / 20_000.0;
        assert!((multi - 0.217).abs() < 0.015, "{multi}");
        assert!(q.train.iter().chain(&q.test).all(|r| (1..=3).contains(&r.positives.len())));
    }
}
