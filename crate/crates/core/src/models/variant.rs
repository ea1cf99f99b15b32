//! The seven scoring architectures and their fixed feature/matching/loss combinations.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VariantName {
    StaticLinear,
    StaticNonlinear,
    Nonlinear,
    Linear,
    Ranking,
    Siamese,
    Studio2Shop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    None,
    CrossEntropy,
    Triplet,
    TripletAttributes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QueryFeatures {
    /// Precomputed generic query features, never trained.
    Static,
    /// Output of the trainable query encoder.
    Learned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Matching {
    Linear,
    Nonlinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArticleFeatures {
    /// Domain-specific static features.
    Fdna,
    /// Generic static features from a non-specialised extractor.
    Generic,
    /// Produced by a second trainable encoder from the article image vector.
    Learned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VariantSpec {
    pub name: VariantName,
    pub loss: LossKind,
    pub query_features: QueryFeatures,
    pub matching: Matching,
    pub article_features: ArticleFeatures,
}

const REGISTRY: [VariantSpec; 7] = {
    use ArticleFeatures as A;
    use LossKind as L;
    use Matching as Mt;
    use QueryFeatures as Q;
    use VariantName as N;
    const fn row(name: N, loss: L, q: Q, m: Mt, a: A) -> VariantSpec {
        VariantSpec { name, loss, query_features: q, matching: m, article_features: a }
    }
    [
        row(N::StaticLinear, L::None, Q::Static, Mt::Linear, A::Generic),
        row(N::StaticNonlinear, L::CrossEntropy, Q::Static, Mt::Nonlinear, A::Generic),
        row(N::Nonlinear, L::CrossEntropy, Q::Learned, Mt::Nonlinear, A::Generic),
        row(N::Linear, L::CrossEntropy, Q::Learned, Mt::Linear, A::Fdna),
        row(N::Ranking, L::Triplet, Q::Learned, Mt::Linear, A::Fdna),
        row(N::Siamese, L::TripletAttributes, Q::Learned, Mt::Linear, A::Learned),
        row(N::Studio2Shop, L::CrossEntropy, Q::Learned, Mt::Nonlinear, A::Fdna),
    ]
};

impl VariantSpec {
    /// Validates a combination against the registry.
    pub fn new(
        name: VariantName,
        loss: LossKind,
        query_features: QueryFeatures,
        matching: Matching,
        article_features: ArticleFeatures,
    ) -> Result<Self> {
        let spec = Self { name, loss, query_features, matching, article_features };
        if spec != Self::of(name) {
            return Err(Error::Config(format!("{spec:?} is not a registered variant")));
        }
        Ok(spec)
    }

    pub fn registry() -> &'static [VariantSpec; 7] {
        &REGISTRY
    }

    pub fn of(name: VariantName) -> Self {
        REGISTRY.iter().copied().find(|v| v.name == name).expect("every name has a row")
    }

    pub fn by_name(name: &str) -> Result<Self> {
        Ok(Self::of(name.parse()?))
    }

    pub fn is_trainable(&self) -> bool {
        self.loss != LossKind::None
    }

    pub fn has_encoder(&self) -> bool {
        self.query_features == QueryFeatures::Learned
    }

    pub fn has_article_encoder(&self) -> bool {
        self.article_features == ArticleFeatures::Learned
    }

    pub fn has_head(&self) -> bool {
        self.matching == Matching::Nonlinear
    }

    /// Linear matching trained with cross-entropy carries a scalar bias.
    pub fn has_bias(&self) -> bool {
        self.matching == Matching::Linear && self.loss == LossKind::CrossEntropy
    }

    pub fn has_attribute_heads(&self) -> bool {
        self.loss == LossKind::TripletAttributes
    }

    pub fn uses_triplets(&self) -> bool {
        matches!(self.loss, LossKind::Triplet | LossKind::TripletAttributes)
    }
}

impl VariantName {
    pub const ALL: [VariantName; 7] = [
        VariantName::StaticLinear,
        VariantName::StaticNonlinear,
        VariantName::Nonlinear,
        VariantName::Linear,
        VariantName::Ranking,
        VariantName::Siamese,
        VariantName::Studio2Shop,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            VariantName::StaticLinear => "static-linear",
            VariantName::StaticNonlinear => "static-nonlinear",
            VariantName::Nonlinear => "nonlinear",
            VariantName::Linear => "linear",
            VariantName::Ranking => "ranking",
            VariantName::Siamese => "siamese",
            VariantName::Studio2Shop => "studio2shop",
        }
    }
}

impl fmt::Display for VariantName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VariantName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}; expected one of {}", Self::ALL.map(|n| n.as_str()).join(", "))))
    }
}

impl LossKind {
    pub(crate) fn tag(self) -> u8 {
        self as u8
    }
    pub(crate) fn from_tag(t: u8) -> Option<Self> {
        [Self::None, Self::CrossEntropy, Self::Triplet, Self::TripletAttributes].get(t as usize).copied()
    }
}

impl QueryFeatures {
    pub(crate) fn tag(self) -> u8 {
        self as u8
    }
    pub(crate) fn from_tag(t: u8) -> Option<Self> {
        [Self::Static, Self::Learned].get(t as usize).copied()
    }
}

impl Matching {
    pub(crate) fn tag(self) -> u8 {
        self as u8
    }
    pub(crate) fn from_tag(t: u8) -> Option<Self> {
        [Self::Linear, Self::Nonlinear].get(t as usize).copied()
    }
}

impl ArticleFeatures {
    pub(crate) fn tag(self) -> u8 {
        self as u8
    }
    pub(crate) fn from_tag(t: u8) -> Option<Self> {
        [Self::Fdna, Self::Generic, Self::Learned].get(t as usize).copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_has_seven_distinct_rows() {
        let reg = VariantSpec::registry();
        assert_eq!(reg.len(), 7);
        for (i, a) in reg.iter().enumerate() {
            for b in &reg[i + 1..] {
                assert_ne!(a.name, b.name);
            }
            assert_eq!(VariantSpec::by_name(a.name.as_str()).unwrap(), *a);
        }
        assert_eq!(reg.iter().filter(|v| !v.is_trainable()).count(), 1);
    }

    #[test]
    fn inconsistent_combination_fails() {
        let bad = VariantSpec::new(
            VariantName::Studio2Shop,
            LossKind::Triplet,
            QueryFeatures::Learned,
            Matching::Nonlinear,
            ArticleFeatures::Fdna,
        );
        assert!(matches!(bad, Err(Error::Config(_))));
        let good = VariantSpec::new(
            VariantName::Ranking,
            LossKind::Triplet,
            QueryFeatures::Learned,
            Matching::Linear,
            ArticleFeatures::Fdna,
        );
        assert!(good.is_ok());
        assert!("bogus".parse::<VariantName>().is_err());
    }
}
