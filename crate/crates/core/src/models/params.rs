use serde::{Deserialize, Serialize};

use super::variant::{Matching, VariantSpec};
use crate::error::{shape_err, Error, Result};
use crate::ndcore::{BatchNorm, Dense, Layer, Parameterized, Sequential, Tensor};
use crate::rng::Stream;
use crate::scalar::{sigmoid, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub output_dim: usize,
    pub dropout_rate: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { input_dim: 64, hidden_widths: vec![256, 256], output_dim: 32, dropout_rate: 0.1 }
    }
}

impl EncoderConfig {
    /// Full-size query submodule widths on top of the flattened convolutional base.
    pub fn full_scale() -> Self {
        Self { input_dim: 14336, hidden_widths: vec![2048, 2048], output_dim: 128, dropout_rate: 0.5 }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.input_dim == 0 {
            problems.push("encoder input_dim must be >= 1".to_string());
        }
        if self.output_dim == 0 {
            problems.push("encoder output_dim must be >= 1".to_string());
        }
        if self.hidden_widths.is_empty() || self.hidden_widths.contains(&0) {
            problems.push("encoder hidden_widths must be non-empty and positive".to_string());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            problems.push(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if problems.is_empty() { Ok(()) } else { Err(Error::Validation(problems)) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    /// Hidden widths of the matching head, after its batch normalization.
    pub head_hidden: Vec<usize>,
    /// Cardinality of each attribute predicted by the siamese heads.
    pub attribute_cardinalities: Vec<usize>,
    /// Starting value of the linear matcher's bias.
    pub linear_bias_init: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            head_hidden: vec![256, 256],
            attribute_cardinalities: vec![7, 8],
            linear_bias_init: 0.0,
        }
    }
}

impl ModelConfig {
    pub fn feature_dim(&self) -> usize {
        self.encoder.output_dim
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.head_hidden.contains(&0) || self.attribute_cardinalities.contains(&0) {
            return Err(Error::Validation(vec!["head widths and attribute cardinalities must be positive".into()]));
        }
        if !self.linear_bias_init.is_finite() {
            return Err(Error::Validation(vec![format!("linear_bias_init {} must be finite", self.linear_bias_init)]));
        }
        Ok(())
    }
}

/// All trainable weights of one variant.
#[derive(Debug, Clone)]
pub struct ModelParams<T> {
    pub variant: VariantSpec,
    /// Query encoder θ.
    pub encoder: Option<Sequential<T>>,
    /// Article encoder γ, siamese only.
    pub article_encoder: Option<Sequential<T>>,
    /// Non-linear matching head producing one logit.
    pub head: Option<Sequential<T>>,
    /// Scalar bias of the linear matcher when trained with cross-entropy.
    pub bias: Vec<T>,
    pub grad_bias: Vec<T>,
    /// Attribute classifiers on the query leg.
    pub left_attribute_heads: Vec<Sequential<T>>,
    /// Attribute classifiers on the article leg.
    pub right_attribute_heads: Vec<Sequential<T>>,
}

/// Batch normalization over the concatenated pair, hidden ReLU layers, one output logit.
pub fn matching_head<T: Scalar>(feature_dim: usize, hidden: &[usize], rng: &mut Stream) -> Result<Sequential<T>> {
    let mut layers = vec![Layer::BatchNorm(BatchNorm::new(2 * feature_dim))];
    layers.extend(Sequential::mlp(2 * feature_dim, hidden, 1, 0.0, rng)?.layers);
    Ok(Sequential::new(layers))
}

impl<T: Scalar> ModelParams<T> {
    pub fn init(variant: VariantSpec, config: &ModelConfig, rng: &mut Stream) -> Result<Self> {
        config.validate()?;
        let enc = &config.encoder;
        let d = enc.output_dim;
        let make_encoder = |rng: &mut Stream| Sequential::mlp(enc.input_dim, &enc.hidden_widths, d, enc.dropout_rate, rng);
        let encoder = if variant.has_encoder() { Some(make_encoder(rng)?) } else { None };
        let article_encoder = if variant.has_article_encoder() { Some(make_encoder(rng)?) } else { None };
        let head = if variant.has_head() { Some(matching_head(d, &config.head_hidden, rng)?) } else { None };
        let bias = if variant.has_bias() { vec![T::lit(config.linear_bias_init)] } else { Vec::new() };
        let attr = |rng: &mut Stream| -> Vec<Sequential<T>> {
            config.attribute_cardinalities.iter().map(|&c| Sequential::new(vec![Layer::Dense(Dense::init(d, c, rng))])).collect()
        };
        let (left, right) = if variant.has_attribute_heads() { (attr(rng), attr(rng)) } else { (Vec::new(), Vec::new()) };
        Ok(Self {
            variant,
            encoder,
            article_encoder,
            head,
            grad_bias: vec![T::zero(); bias.len()],
            bias,
            left_attribute_heads: left,
            right_attribute_heads: right,
        })
    }

    pub fn linear_bias(&self) -> T {
        self.bias.first().copied().unwrap_or_else(T::zero)
    }

    fn encoder(&self) -> Result<&Sequential<T>> {
        self.encoder.as_ref().ok_or_else(|| Error::Config(format!("variant {} has no query encoder", self.variant.name)))
    }

    fn article_encoder(&self) -> Result<&Sequential<T>> {
        self.article_encoder
            .as_ref()
            .ok_or_else(|| Error::Config(format!("variant {} has no article encoder", self.variant.name)))
    }

    fn head(&self) -> Result<&Sequential<T>> {
        self.head.as_ref().ok_or_else(|| Error::Config(format!("variant {} has no matching head", self.variant.name)))
    }

    /// Feature width the matcher expects, when it can be read off the parameters.
    pub fn feature_dim(&self) -> Option<usize> {
        self.encoder
            .as_ref()
            .and_then(Sequential::output_dim)
            .or_else(|| self.head.as_ref().and_then(Sequential::input_dim).map(|w| w / 2))
    }

    pub fn query_input_dim(&self) -> Option<usize> {
        self.encoder.as_ref().and_then(Sequential::input_dim)
    }

    /// Query features `f(q|θ)` in inference mode.
    pub fn encode_query(&self, q: &[T]) -> Result<Vec<T>> {
        let x = Tensor::from_vec(1, q.len(), q.to_vec())?;
        Ok(self.encode_queries(&x)?.into_data())
    }

    pub fn encode_queries(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let enc = self.encoder()?;
        match enc.input_dim() {
            Some(n) if n != x.cols() => Err(shape_err!("query encoder expects {n} inputs, got {}", x.cols())),
            _ => enc.infer(x),
        }
    }

    /// Article features `f(a|γ)` from article image vectors.
    pub fn encode_articles(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let enc = self.article_encoder()?;
        match enc.input_dim() {
            Some(n) if n != x.cols() => Err(shape_err!("article encoder expects {n} inputs, got {}", x.cols())),
            _ => enc.infer(x),
        }
    }

    /// Head logits for aligned rows of query and article features.
    pub fn pair_logits(&self, qf: &Tensor<T>, af: &Tensor<T>) -> Result<Vec<T>> {
        let head = self.head()?;
        if qf.shape() != af.shape() {
            return Err(shape_err!("pair features {:?} vs {:?}", qf.shape(), af.shape()));
        }
        if let Some(w) = head.input_dim() {
            if w != 2 * qf.cols() {
                return Err(shape_err!("matching head expects {} features per side, got {}", w / 2, qf.cols()));
            }
        }
        Ok(head.infer(&qf.hconcat(af)?)?.into_data())
    }

    /// Match probability from the non-linear head.
    pub fn match_nonlinear(&self, qf: &[T], af: &[T]) -> Result<T> {
        if qf.len() != af.len() {
            return Err(shape_err!("query features of length {} vs article features of length {}", qf.len(), af.len()));
        }
        let q = Tensor::from_vec(1, qf.len(), qf.to_vec())?;
        let a = Tensor::from_vec(1, af.len(), af.to_vec())?;
        Ok(sigmoid(self.pair_logits(&q, &a)?[0]))
    }

    /// Ranking scores of one query against every row of `articles`.
    ///
    /// Non-linear variants return head logits computed `chunk` articles at a
    /// time; linear variants return the raw dot product. Both are strictly
    /// monotone in the match probability, so orderings are unaffected.
    pub fn score_articles(&self, qf: &[T], articles: &Tensor<T>, chunk: usize) -> Result<Vec<T>> {
        if qf.len() != articles.cols() {
            return Err(shape_err!("query features of length {} vs article dim {}", qf.len(), articles.cols()));
        }
        match self.variant.matching {
            Matching::Linear => Ok(articles.iter_rows().map(|a| T::dot(qf, a)).collect()),
            Matching::Nonlinear => {
                let chunk = chunk.max(1);
                let mut out = Vec::with_capacity(articles.rows());
                let mut start = 0;
                while start < articles.rows() {
                    let end = (start + chunk).min(articles.rows());
                    let n = end - start;
                    let a = Tensor::from_vec(n, qf.len(), articles.data()[start * qf.len()..end * qf.len()].to_vec())?;
                    let mut q = Tensor::zeros(n, qf.len());
                    for r in 0..n {
                        q.row_mut(r).copy_from_slice(qf);
                    }
                    out.extend(self.pair_logits(&q, &a)?);
                    start = end;
                }
                Ok(out)
            }
        }
    }

    /// Both legs of the siamese model plus per-attribute logits from each leg.
    pub fn siamese_forward(&self, q: &[T], article_image: &[T]) -> Result<SiameseOutput<T>> {
        let qf = self.encode_query(q)?;
        let x = Tensor::from_vec(1, article_image.len(), article_image.to_vec())?;
        let af = self.encode_articles(&x)?.into_data();
        let logits = |heads: &[Sequential<T>], f: &[T]| -> Result<Vec<Vec<T>>> {
            let x = Tensor::from_vec(1, f.len(), f.to_vec())?;
            heads.iter().map(|h| Ok(h.infer(&x)?.into_data())).collect()
        };
        Ok(SiameseOutput {
            left_attribute_logits: logits(&self.left_attribute_heads, &qf)?,
            right_attribute_logits: logits(&self.right_attribute_heads, &af)?,
            qf,
            af,
        })
    }

    pub fn param_count(&self) -> usize {
        let stacks = self.encoder.iter().chain(&self.article_encoder).chain(&self.head);
        stacks.chain(&self.left_attribute_heads).chain(&self.right_attribute_heads).map(Sequential::param_count).sum::<usize>()
            + self.bias.len()
    }

    pub fn disable_dropout(&mut self) {
        self.encoder.iter_mut().chain(self.article_encoder.iter_mut()).for_each(Sequential::disable_dropout);
    }

    pub fn clear_cache(&mut self) {
        self.stacks_mut().into_iter().for_each(Sequential::clear_cache);
    }

    pub(crate) fn stacks_mut(&mut self) -> Vec<&mut Sequential<T>> {
        let mut v: Vec<&mut Sequential<T>> = Vec::new();
        v.extend(self.encoder.as_mut());
        v.extend(self.article_encoder.as_mut());
        v.extend(self.head.as_mut());
        v.extend(self.left_attribute_heads.iter_mut());
        v.extend(self.right_attribute_heads.iter_mut());
        v
    }

    pub fn is_finite(&self) -> bool {
        let stacks = self.encoder.iter().chain(&self.article_encoder).chain(&self.head);
        stacks.chain(&self.left_attribute_heads).chain(&self.right_attribute_heads).all(Sequential::is_finite)
            && self.bias.iter().all(|b| b.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        let v = |x: &[T]| x.iter().map(|a| a.cast()).collect::<Vec<U>>();
        ModelParams {
            variant: self.variant,
            encoder: self.encoder.as_ref().map(Sequential::cast),
            article_encoder: self.article_encoder.as_ref().map(Sequential::cast),
            head: self.head.as_ref().map(Sequential::cast),
            bias: v(&self.bias),
            grad_bias: v(&self.grad_bias),
            left_attribute_heads: self.left_attribute_heads.iter().map(Sequential::cast).collect(),
            right_attribute_heads: self.right_attribute_heads.iter().map(Sequential::cast).collect(),
        }
    }
}

impl<T: Scalar> Parameterized<T> for ModelParams<T> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut [T], &mut [T])) {
        if let Some(s) = self.encoder.as_mut() {
            s.visit_params(f);
        }
        if let Some(s) = self.article_encoder.as_mut() {
            s.visit_params(f);
        }
        if let Some(s) = self.head.as_mut() {
            s.visit_params(f);
        }
        if !self.bias.is_empty() {
            f(&mut self.bias, &mut self.grad_bias);
        }
        for s in self.left_attribute_heads.iter_mut().chain(self.right_attribute_heads.iter_mut()) {
            s.visit_params(f);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SiameseOutput<T> {
    pub qf: Vec<T>,
    pub af: Vec<T>,
    pub left_attribute_logits: Vec<Vec<T>>,
    pub right_attribute_logits: Vec<Vec<T>>,
}

/// `σ(qf · af + bias)`
pub fn match_linear<T: Scalar>(qf: &[T], af: &[T], bias: T) -> Result<T> {
    if qf.len() != af.len() {
        return Err(shape_err!("linear match of lengths {} and {}", qf.len(), af.len()));
    }
    Ok(sigmoid(T::dot(qf, af) + bias))
}

/// Raw dot product of static query and article features.
pub fn score_static<T: Scalar>(qf_static: &[T], af: &[T]) -> Result<T> {
    if qf_static.len() != af.len() {
        return Err(shape_err!("static score of lengths {} and {}", qf_static.len(), af.len()));
    }
    Ok(T::dot(qf_static, af))
}
