use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of the synthetic catalogue and query generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    /// Articles generated in total, split into train and test.
    pub articles: usize,
    /// Queries generated in total, split like the articles.
    pub queries: usize,
    pub test_fraction: f64,
    pub latent_dim: usize,
    /// Width of the static article features after PCA.
    pub feature_dim: usize,
    /// Width of the raw activations PCA is fitted on.
    pub raw_feature_dim: usize,
    /// Width of query and article image vectors.
    pub query_dim: usize,
    /// Hidden width of the tanh maps producing image vectors.
    pub map_hidden: usize,
    pub noise_sigma: f64,
    pub fdna_noise: f64,
    pub generic_noise: f64,
    pub image_noise: f64,
    pub multi_label_fraction: f64,
    /// Relative category frequencies; their count is the category cardinality.
    pub category_proportions: Vec<f64>,
    pub colors: usize,
    pub cluster_scale: f64,
    pub color_scale: f64,
    pub within_scale: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            articles: 2500,
            queries: 4000,
            test_fraction: 0.2,
            latent_dim: 8,
            feature_dim: 32,
            raw_feature_dim: 96,
            query_dim: 64,
            map_hidden: 64,
            noise_sigma: 0.1,
            fdna_noise: 0.03,
            generic_noise: 3.0,
            image_noise: 0.05,
            multi_label_fraction: 250_000.0 / 1_150_000.0,
            category_proportions: vec![35.0, 20.0, 14.0, 14.0, 12.0, 3.0, 2.0],
            colors: 8,
            cluster_scale: 1.0,
            color_scale: 0.3,
            within_scale: 0.1,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let mut p = Vec::new();
        for (name, v) in [
            ("articles", self.articles),
            ("queries", self.queries),
            ("latent_dim", self.latent_dim),
            ("feature_dim", self.feature_dim),
            ("raw_feature_dim", self.raw_feature_dim),
            ("query_dim", self.query_dim),
            ("map_hidden", self.map_hidden),
            ("colors", self.colors),
        ] {
            if v == 0 {
                p.push(format!("{name} must be >= 1"));
            }
        }
        for (name, v) in [
            ("noise_sigma", self.noise_sigma),
            ("fdna_noise", self.fdna_noise),
            ("generic_noise", self.generic_noise),
            ("image_noise", self.image_noise),
            ("cluster_scale", self.cluster_scale),
            ("color_scale", self.color_scale),
            ("within_scale", self.within_scale),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                p.push(format!("{name} = {v} must be finite and >= 0"));
            }
        }
        if !(0.0..=1.0).contains(&self.multi_label_fraction) {
            p.push(format!("multi_label_fraction = {} outside [0, 1]", self.multi_label_fraction));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            p.push(format!("test_fraction = {} outside (0, 1)", self.test_fraction));
        }
        if self.category_proportions.is_empty()
            || self.category_proportions.iter().any(|&w| !(w >= 0.0 && w.is_finite()))
            || self.category_proportions.iter().sum::<f64>() <= 0.0
        {
            p.push("category_proportions must be non-negative with a positive sum".to_string());
        }
        if self.feature_dim > self.raw_feature_dim {
            p.push(format!("feature_dim {} exceeds raw_feature_dim {}", self.feature_dim, self.raw_feature_dim));
        }
        if self.category_proportions.len() > usize::from(u16::MAX) || self.colors > usize::from(u16::MAX) {
            p.push("attribute cardinalities must fit in u16".to_string());
        }
        if p.is_empty() {
            let (train_a, test_a) = self.article_split();
            if self.feature_dim > train_a {
                p.push(format!("feature_dim {} exceeds the {train_a} training articles PCA is fitted on", self.feature_dim));
            }
            if train_a == 0 || test_a == 0 {
                p.push("both splits need at least one article".to_string());
            }
            let (train_q, test_q) = self.query_split();
            if train_q == 0 || test_q == 0 {
                p.push("both splits need at least one query".to_string());
            }
        }
        if p.is_empty() { Ok(()) } else { Err(Error::Validation(p)) }
    }

    pub fn categories(&self) -> usize {
        self.category_proportions.len()
    }

    /// (train, test) article counts.
    pub fn article_split(&self) -> (usize, usize) {
        let test = ((self.articles as f64) * self.test_fraction).round() as usize;
        (self.articles - test.min(self.articles), test.min(self.articles))
    }

    /// (train, test) query counts.
    pub fn query_split(&self) -> (usize, usize) {
        let test = ((self.queries as f64) * self.test_fraction).round() as usize;
        (self.queries - test.min(self.queries), test.min(self.queries))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_and_multi_fraction_matches_annotation_ratio() {
        let c = GenConfig::default();
        c.validate().unwrap();
        assert!((c.multi_label_fraction - 0.217).abs() < 1e-3);
        assert_eq!(c.categories(), 7);
        assert_eq!(c.article_split(), (2000, 500));
    }

    #[test]
    fn out_of_range_fields_are_listed() {
        let c = GenConfig { multi_label_fraction: 1.5, articles: 0, ..Default::default() };
        match c.validate() {
            Err(Error::Validation(v)) => {
                assert!(v.iter().any(|m| m.contains("multi_label_fraction")));
                assert!(v.iter().any(|m| m.contains("articles")));
            }
            other => panic!("{other:?}"),
        }
    }
}
