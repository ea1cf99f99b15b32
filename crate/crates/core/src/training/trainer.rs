//! Batch losses over the full model graph and the epoch loop.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::eval::{article_features, compute_from_ranks, query_features, rank_features, DEFAULT_CHUNK};
use crate::models::{LossKind, Matching, ModelConfig, ModelParams, VariantSpec};
use crate::ndcore::{Mode, Parameterized, Tensor};
use crate::rng::{Stream, Streams};
use crate::scalar::Scalar;
use crate::synthdata::Split;

use super::batch::{build_pair_batch, build_triplet_batch, PairBatch, TripletBatch, DEFAULT_ARTICLES_PER_QUERY, DEFAULT_BATCH_SIZE};
use super::loss::{attribute_xent_with_grad, triplet_with_grad, xent_from_logits};
use super::optim::{Optimizer, OptimizerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reduction {
    Sum,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Article slots per query: positives plus resampled negatives.
    pub articles_per_query: usize,
    pub reduction: Reduction,
    /// Share of training queries held out for model selection.
    pub validation_fraction: f64,
    /// Articles in the validation ranking probe.
    pub probe_size: usize,
    pub eval_chunk: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: DEFAULT_BATCH_SIZE,
            articles_per_query: DEFAULT_ARTICLES_PER_QUERY,
            reduction: Reduction::Sum,
            validation_fraction: 0.1,
            probe_size: 500,
            eval_chunk: DEFAULT_CHUNK,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut p = Vec::new();
        if self.batch_size == 0 {
            p.push("batch_size must be >= 1".to_string());
        }
        if self.articles_per_query < 2 {
            p.push("articles_per_query must be >= 2".to_string());
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            p.push(format!("validation_fraction {} outside [0, 1)", self.validation_fraction));
        }
        if self.probe_size == 0 {
            p.push("probe_size must be >= 1".to_string());
        }
        if self.eval_chunk == 0 {
            p.push("eval_chunk must be >= 1".to_string());
        }
        if p.is_empty() { Ok(()) } else { Err(Error::Validation(p)) }
    }
}

/// The inputs one variant trains on, resolved from a split.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingData<T> {
    /// Raw query inputs for learned encoders, static query features otherwise.
    pub queries: Tensor<T>,
    pub query_ids: Vec<u64>,
    /// Static article features, or article image vectors for two-leg models.
    pub articles: Tensor<T>,
    pub article_ids: Vec<u64>,
    /// Article rows annotated for each query row.
    pub positives: Vec<Vec<usize>>,
    /// Attribute labels per article row, `0` = missing.
    pub attributes: Vec<Vec<u16>>,
}

impl<T: Scalar> TrainingData<T> {
    pub fn from_split(split: &Split, variant: &VariantSpec) -> Result<Self> {
        let q = split.query_inputs(variant.query_features);
        let a = split.article_inputs(variant.article_features);
        Ok(Self {
            queries: q.features().cast(),
            query_ids: q.ids().to_vec(),
            articles: a.features().cast(),
            article_ids: a.ids().to_vec(),
            positives: split.positives()?,
            attributes: (0..a.len()).map(|i| a.attribute_values(i).to_vec()).collect(),
        })
    }

    pub fn num_queries(&self) -> usize {
        self.queries.rows()
    }

    pub fn num_articles(&self) -> usize {
        self.articles.rows()
    }

    pub fn cast<U: Scalar>(&self) -> TrainingData<U> {
        TrainingData {
            queries: self.queries.cast(),
            query_ids: self.query_ids.clone(),
            articles: self.articles.cast(),
            article_ids: self.article_ids.clone(),
            positives: self.positives.clone(),
            attributes: self.attributes.clone(),
        }
    }
}

/// A mini-batch in the shape the variant's loss consumes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Batch {
    Pairs(PairBatch),
    Triplets(TripletBatch),
}

pub fn build_batch(
    variant: &VariantSpec,
    positives: &[Vec<usize>],
    queries: &[usize],
    num_articles: usize,
    k: usize,
    rng: &mut Stream,
) -> Result<Batch> {
    match variant.loss {
        LossKind::None => Err(no_loss(variant)),
        LossKind::CrossEntropy => Ok(Batch::Pairs(build_pair_batch(positives, queries, num_articles, k, rng)?)),
        LossKind::Triplet | LossKind::TripletAttributes => {
            Ok(Batch::Triplets(build_triplet_batch(positives, queries, num_articles, k, rng)?))
        }
    }
}

fn no_loss(variant: &VariantSpec) -> Error {
    Error::Config(format!("variant {} has no trainable loss", variant.name))
}

fn column<T: Scalar>(v: Vec<T>) -> Tensor<T> {
    let n = v.len();
    Tensor::from_vec(n, 1, v).expect("column shape")
}

fn encode_train<T: Scalar>(model: &mut ModelParams<T>, x: &Tensor<T>, mode: Mode, rng: &mut Stream) -> Result<Tensor<T>> {
    match model.encoder.as_mut() {
        Some(enc) => enc.forward(x, mode, rng),
        None => Ok(x.clone()),
    }
}

fn backprop_encoder<T: Scalar>(model: &mut ModelParams<T>, grad: &Tensor<T>) -> Result<()> {
    if let Some(enc) = model.encoder.as_mut() {
        enc.backward(grad)?;
    }
    Ok(())
}

/// Loss of one batch under the variant's objective. When `backward` is set the
/// parameter gradients are accumulated (callers zero them first).
pub fn batch_loss<T: Scalar>(
    model: &mut ModelParams<T>,
    data: &TrainingData<T>,
    batch: &Batch,
    mode: Mode,
    reduction: Reduction,
    rng: &mut Stream,
    backward: bool,
) -> Result<T> {
    match (model.variant.loss, batch) {
        (LossKind::None, _) => Err(no_loss(&model.variant)),
        (LossKind::CrossEntropy, Batch::Pairs(b)) => pair_loss(model, data, b, mode, reduction, rng, backward),
        (LossKind::Triplet | LossKind::TripletAttributes, Batch::Triplets(b)) => {
            triplet_batch_loss(model, data, b, mode, reduction, rng, backward)
        }
        _ => Err(Error::Config(format!("batch kind does not fit the loss of variant {}", model.variant.name))),
    }
}

fn pair_loss<T: Scalar>(
    model: &mut ModelParams<T>,
    data: &TrainingData<T>,
    batch: &PairBatch,
    mode: Mode,
    reduction: Reduction,
    rng: &mut Stream,
    backward: bool,
) -> Result<T> {
    let qf = encode_train(model, &data.queries.select_rows(&batch.queries), mode, rng)?;
    let d = qf.cols();
    if data.articles.cols() != d {
        return Err(shape_err!("query features of width {d} vs articles of width {}", data.articles.cols()));
    }
    let k = batch.slots();
    let n = batch.queries.len() * k;
    let mut q_rep = Tensor::zeros(n, d);
    let mut a_rows = Vec::with_capacity(n);
    for (i, slots) in batch.articles.iter().enumerate() {
        for (j, &a) in slots.iter().enumerate() {
            q_rep.row_mut(i * k + j).copy_from_slice(qf.row(i));
            a_rows.push(a);
        }
    }
    let af = data.articles.select_rows(&a_rows);
    let labels: Vec<u8> = batch.labels.iter().flatten().copied().collect();

    let logits = match model.variant.matching {
        Matching::Nonlinear => {
            let head = model.head.as_mut().ok_or_else(|| Error::Config("non-linear variant without a head".into()))?;
            head.forward(&q_rep.hconcat(&af)?, mode, rng)?.into_data()
        }
        Matching::Linear => {
            let b = model.linear_bias();
            (0..n).map(|r| T::dot(q_rep.row(r), af.row(r)) + b).collect()
        }
    };
    let (mut loss, mut dz) = xent_from_logits(&logits, &labels);
    if reduction == Reduction::Mean && n > 0 {
        let scale = T::one() / T::from_usize(n).expect("pair count");
        loss *= scale;
        dz.iter_mut().for_each(|g| *g *= scale);
    }
    if !backward {
        return Ok(loss);
    }

    let mut dq_rep = Tensor::zeros(n, d);
    match model.variant.matching {
        Matching::Nonlinear => {
            let head = model.head.as_mut().expect("checked above");
            let dx = head.backward(&column(dz))?;
            for r in 0..n {
                dq_rep.row_mut(r).copy_from_slice(&dx.row(r)[..d]);
            }
        }
        Matching::Linear => {
            for (r, &g) in dz.iter().enumerate() {
                T::axpy(g, af.row(r), dq_rep.row_mut(r));
            }
            if let Some(gb) = model.grad_bias.first_mut() {
                *gb += dz.iter().copied().fold(T::zero(), |a, b| a + b);
            }
        }
    }
    if model.encoder.is_some() {
        let mut dq = Tensor::zeros(batch.queries.len(), d);
        for r in 0..n {
            let g = dq_rep.row(r).to_vec();
            T::axpy(T::one(), &g, dq.row_mut(r / k));
        }
        backprop_encoder(model, &dq)?;
    }
    Ok(loss)
}

fn triplet_batch_loss<T: Scalar>(
    model: &mut ModelParams<T>,
    data: &TrainingData<T>,
    batch: &TripletBatch,
    mode: Mode,
    reduction: Reduction,
    rng: &mut Stream,
    backward: bool,
) -> Result<T> {
    let b = batch.queries.len();
    let qf = encode_train(model, &data.queries.select_rows(&batch.queries), mode, rng)?;
    let d = qf.cols();

    // article rows per query: positive first, then negatives
    let per = 1 + batch.negatives.first().map_or(0, Vec::len);
    let mut rows = Vec::with_capacity(b * per);
    for (p, negs) in batch.positives.iter().zip(&batch.negatives) {
        rows.push(*p);
        rows.extend_from_slice(negs);
    }
    let a_in = data.articles.select_rows(&rows);
    let af = match model.article_encoder.as_mut() {
        Some(enc) => enc.forward(&a_in, mode, rng)?,
        None => a_in,
    };
    if af.cols() != d {
        return Err(shape_err!("query features of width {d} vs article features of width {}", af.cols()));
    }

    let terms = b * (per - 1);
    let scale = match reduction {
        Reduction::Mean if terms > 0 => T::one() / T::from_usize(terms).expect("term count"),
        _ => T::one(),
    };
    let mut loss = T::zero();
    let mut dq = Tensor::zeros(b, d);
    let mut daf = Tensor::zeros(af.rows(), d);
    for i in 0..b {
        let base = i * per;
        let negs: Vec<&[T]> = (1..per).map(|j| af.row(base + j)).collect();
        let g = triplet_with_grad(qf.row(i), af.row(base), &negs)?;
        loss += g.loss;
        T::axpy(scale, &g.d_query, dq.row_mut(i));
        T::axpy(scale, &g.d_positive, daf.row_mut(base));
        for (j, dn) in g.d_negatives.iter().enumerate() {
            T::axpy(scale, dn, daf.row_mut(base + 1 + j));
        }
    }

    if model.variant.has_attribute_heads() {
        let left_labels: Vec<&[u16]> = batch.positives.iter().map(|&p| data.attributes[p].as_slice()).collect();
        let right_labels: Vec<&[u16]> = rows.iter().map(|&r| data.attributes[r].as_slice()).collect();
        let (l, g) = attribute_heads(&mut model.left_attribute_heads, &qf, &left_labels, mode, rng, scale, backward)?;
        loss += l;
        if let Some(g) = g {
            T::axpy(T::one(), g.data(), dq.data_mut());
        }
        let (l, g) = attribute_heads(&mut model.right_attribute_heads, &af, &right_labels, mode, rng, scale, backward)?;
        loss += l;
        if let Some(g) = g {
            T::axpy(T::one(), g.data(), daf.data_mut());
        }
    }
    loss *= scale;
    if !backward {
        return Ok(loss);
    }
    if let Some(enc) = model.article_encoder.as_mut() {
        enc.backward(&daf)?;
    }
    backprop_encoder(model, &dq)?;
    Ok(loss)
}

/// Summed attribute cross-entropy of all heads over the rows of `features`,
/// with the gradient w.r.t. `features` (scaled by `scale`) when requested.
fn attribute_heads<T: Scalar>(
    heads: &mut [crate::ndcore::Sequential<T>],
    features: &Tensor<T>,
    labels: &[&[u16]],
    mode: Mode,
    rng: &mut Stream,
    scale: T,
    backward: bool,
) -> Result<(T, Option<Tensor<T>>)> {
    let mut loss = T::zero();
    let mut dfeat = backward.then(|| Tensor::zeros(features.rows(), features.cols()));
    for (a, head) in heads.iter_mut().enumerate() {
        let logits = head.forward(features, mode, rng)?;
        let mut dlogits = Tensor::zeros(logits.rows(), logits.cols());
        for r in 0..logits.rows() {
            let label = labels[r].get(a).copied().unwrap_or(0);
            let (l, g) = attribute_xent_with_grad(&[logits.row(r).to_vec()], &[label])?;
            loss += l;
            for (dst, v) in dlogits.row_mut(r).iter_mut().zip(&g[0]) {
                *dst = scale * *v;
            }
        }
        if let Some(df) = dfeat.as_mut() {
            let g = head.backward(&dlogits)?;
            T::axpy(T::one(), g.data(), df.data_mut());
        }
    }
    Ok((loss, dfeat))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_median_rank: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept; `0` means the initial parameters.
    pub best_epoch: usize,
}

pub const REPORT_HEADER: &str = "epoch,train_loss,val_loss,val_median_rank";

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(REPORT_HEADER);
        s.push('\n');
        for e in &self.epochs {
            let _ = writeln!(s, "{},{:.6},{:.6},{}", e.epoch, e.train_loss, e.val_loss, e.val_median_rank);
        }
        s
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Held-out queries and the article probe they are ranked in.
struct Validation<T> {
    queries: Vec<usize>,
    probe: Vec<usize>,
    /// Positives of each validation query, as probe rows.
    probe_positives: Vec<Vec<usize>>,
    batches: Vec<Batch>,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Scalar> Validation<T> {
    fn new(data: &TrainingData<T>, queries: Vec<usize>, cfg: &TrainConfig, variant: &VariantSpec, streams: &Streams) -> Result<Self> {
        let m = data.num_articles();
        let mut needed: Vec<usize> = queries.iter().flat_map(|&q| data.positives[q].iter().copied()).collect();
        needed.sort_unstable();
        needed.dedup();
        let mut probe = needed.clone();
        if probe.len() < cfg.probe_size.min(m) {
            let mut rest: Vec<usize> = (0..m).filter(|a| needed.binary_search(a).is_err()).collect();
            rest.shuffle(&mut streams.stream("validation-probe"));
            rest.truncate(cfg.probe_size.min(m) - probe.len());
            probe.extend(rest);
            probe.sort_unstable();
        }
        let probe_positives = queries
            .iter()
            .map(|&q| data.positives[q].iter().map(|a| probe.binary_search(a).expect("probe holds all positives")).collect())
            .collect();
        let mut rng = streams.stream("validation-batches");
        let batches = queries
            .chunks(cfg.batch_size)
            .map(|c| build_batch(variant, &data.positives, c, m, cfg.articles_per_query, &mut rng))
            .collect::<Result<_>>()?;
        Ok(Self { queries, probe, probe_positives, batches, _marker: std::marker::PhantomData })
    }

    fn loss(&self, model: &mut ModelParams<T>, data: &TrainingData<T>, reduction: Reduction, rng: &mut Stream) -> Result<f64> {
        if self.batches.is_empty() {
            return Ok(f64::NAN);
        }
        let mut total = 0.0;
        for b in &self.batches {
            total += batch_loss(model, data, b, Mode::Infer, reduction, rng, false)?.as_f64();
        }
        Ok(total / self.batches.len() as f64)
    }

    fn median_rank(&self, model: &ModelParams<T>, data: &TrainingData<T>, chunk: usize) -> Result<usize> {
        if self.queries.is_empty() {
            return Ok(0);
        }
        let qf = query_features(model, &data.queries.select_rows(&self.queries))?;
        let af = article_features(model, &data.articles.select_rows(&self.probe))?;
        let ids: Vec<u64> = self.probe.iter().map(|&a| data.article_ids[a]).collect();
        let qids: Vec<u64> = self.queries.iter().map(|&q| data.query_ids[q]).collect();
        let report = rank_features(model, &qf, &qids, &self.probe_positives, &af, &ids, chunk)?;
        Ok(compute_from_ranks(&report.ranks(), ids.len())?.median_rank)
    }
}

/// Trains a variant from a fresh initialization drawn from the `init` stream of `opt.seed`.
pub fn train<T: Scalar>(
    variant: VariantSpec,
    data: &TrainingData<T>,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    opt: &OptimizerConfig,
) -> Result<(ModelParams<T>, TrainReport)> {
    if !variant.is_trainable() {
        return Err(no_loss(&variant));
    }
    let model = ModelParams::init(variant, model_cfg, &mut Streams::new(opt.seed).stream("init"))?;
    train_from(model, data, cfg, opt)
}

/// Continues training `model`; returns the parameters of the epoch with the
/// best validation median rank (ties broken by validation loss).
pub fn train_from<T: Scalar>(
    mut model: ModelParams<T>,
    data: &TrainingData<T>,
    cfg: &TrainConfig,
    opt: &OptimizerConfig,
) -> Result<(ModelParams<T>, TrainReport)> {
    let variant = model.variant;
    if !variant.is_trainable() {
        return Err(no_loss(&variant));
    }
    cfg.validate()?;
    let mut optimizer = Optimizer::<T>::new(opt.clone())?;
    let streams = Streams::new(opt.seed);

    let n = data.num_queries();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut streams.stream("validation-split"));
    let n_val = ((n as f64) * cfg.validation_fraction).round() as usize;
    let mut val_rows = order[..n_val].to_vec();
    val_rows.sort_unstable();
    let mut fit_rows = order[n_val..].to_vec();
    fit_rows.sort_unstable();
    if fit_rows.is_empty() {
        return Err(Error::Data("no training queries left after the validation hold-out".into()));
    }
    let validation = Validation::new(data, val_rows, cfg, &variant, &streams)?;
    let mut eval_rng = streams.stream("validation-dropout");

    let mut best = (model.clone(), validation.median_rank(&model, data, cfg.eval_chunk)?, f64::INFINITY, 0usize);
    let mut report = TrainReport::default();
    for epoch in 1..=opt.epochs {
        let mut rows = fit_rows.clone();
        rows.shuffle(&mut streams.indexed("epoch-order", epoch as u64));
        let mut batch_rng = streams.indexed("batching", epoch as u64);
        let mut dropout_rng = streams.indexed("dropout", epoch as u64);
        let mut total = 0.0;
        let mut count = 0usize;
        for (bi, chunk) in rows.chunks(cfg.batch_size).enumerate() {
            let batch = build_batch(&variant, &data.positives, chunk, data.num_articles(), cfg.articles_per_query, &mut batch_rng)?;
            model.zero_grad();
            let loss = batch_loss(&mut model, data, &batch, Mode::Train, cfg.reduction, &mut dropout_rng, true)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss {loss} at epoch {epoch}, batch {}", bi + 1)));
            }
            optimizer.step(&mut model);
            if !model.is_finite() {
                return Err(Error::NonFinite(format!("parameters diverged at epoch {epoch}, batch {}", bi + 1)));
            }
            total += loss.as_f64();
            count += 1;
        }
        let val_loss = validation.loss(&mut model, data, cfg.reduction, &mut eval_rng)?;
        let val_median_rank = validation.median_rank(&model, data, cfg.eval_chunk)?;
        report.epochs.push(EpochRecord { epoch, train_loss: total / count as f64, val_loss, val_median_rank });
        let better = val_median_rank < best.1 || (val_median_rank == best.1 && val_loss < best.2);
        if better || validation.queries.is_empty() {
            best = (model.clone(), val_median_rank, val_loss, epoch);
        }
    }
    let (mut model, _, _, best_epoch) = best;
    model.clear_cache();
    model.zero_grad();
    report.best_epoch = best_epoch;
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{EncoderConfig, VariantName};
    use crate::synthdata::{Dataset, GenConfig};

    fn dataset() -> Dataset {
        Dataset::generate(&GenConfig { articles: 400, queries: 600, ..Default::default() }).unwrap()
    }

    fn small_model() -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig { input_dim: 64, hidden_widths: vec![32], output_dim: 32, dropout_rate: 0.1 },
            head_hidden: vec![16],
            attribute_cardinalities: vec![7, 8],
            linear_bias_init: 0.0,
        }
    }

    fn fast() -> TrainConfig {
        TrainConfig { batch_size: 32, articles_per_query: 20, probe_size: 200, ..Default::default() }
    }

    #[test]
    fn batch_loss_is_the_sum_of_pair_terms() {
        let ds = dataset();
        let v = VariantSpec::of(VariantName::Studio2Shop);
        let data: TrainingData<f64> = TrainingData::from_split(&ds.train, &v).unwrap();
        let mut model: ModelParams<f64> = ModelParams::init(v, &small_model(), &mut Streams::new(1).stream("init")).unwrap();
        model.disable_dropout();
        let mut rng = Streams::new(2).stream("b");
        let batch = build_batch(&v, &data.positives, &(0..64).collect::<Vec<_>>(), data.num_articles(), 50, &mut rng).unwrap();
        let total = batch_loss(&mut model, &data, &batch, Mode::Infer, Reduction::Sum, &mut rng, false).unwrap();
        let Batch::Pairs(pb) = &batch else { panic!() };
        let mut sum = 0.0;
        for (q, a, y) in pb.pairs() {
            let qf = model.encode_query(data.queries.row(q)).unwrap();
            let p = model.match_nonlinear(&qf, data.articles.row(a)).unwrap();
            sum -= if y == 1 { p.ln() } else { (1.0 - p).ln() };
        }
        assert!(((total - sum) / sum).abs() < 1e-5, "{total} vs {sum}");
        let mean = batch_loss(&mut model, &data, &batch, Mode::Infer, Reduction::Mean, &mut rng, false).unwrap();
        assert!((mean * 3200.0 - total).abs() < 1e-9 * total);
    }

    #[test]
    fn static_linear_cannot_be_trained() {
        let ds = dataset();
        let v = VariantSpec::of(VariantName::StaticLinear);
        let data: TrainingData<f32> = TrainingData::from_split(&ds.train, &v).unwrap();
        let err = train(v, &data, &small_model(), &fast(), &OptimizerConfig::default()).unwrap_err();
        assert!(err.to_string().contains("variant has no trainable loss") || err.to_string().contains("has no trainable loss"));
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_untouched() {
        let ds = dataset();
        for name in [VariantName::Studio2Shop, VariantName::Siamese, VariantName::Linear] {
            let v = VariantSpec::of(name);
            let data: TrainingData<f32> = TrainingData::from_split(&ds.train, &v).unwrap();
            let opt = OptimizerConfig { learning_rate: 0.0, epochs: 1, ..Default::default() };
            let init: ModelParams<f32> = ModelParams::init(v, &small_model(), &mut Streams::new(opt.seed).stream("init")).unwrap();
            let (mut trained, _) = train(v, &data, &small_model(), &fast(), &opt).unwrap();
            let mut a = Vec::new();
            let mut b = Vec::new();
            init.clone().visit_params(&mut |p, _| a.extend(p.iter().map(|x| x.to_bits())));
            trained.visit_params(&mut |p, _| b.extend(p.iter().map(|x| x.to_bits())));
            assert_eq!(a, b, "{name}");
        }
    }

    #[test]
    fn same_seed_same_parameters_and_report() {
        let ds = dataset();
        let v = VariantSpec::of(VariantName::Ranking);
        let data: TrainingData<f32> = TrainingData::from_split(&ds.train, &v).unwrap();
        let opt = OptimizerConfig { learning_rate: 1e-3, epochs: 2, ..Default::default() };
        let (a, ra) = train(v, &data, &small_model(), &fast(), &opt).unwrap();
        let (b, rb) = train(v, &data, &small_model(), &fast(), &opt).unwrap();
        assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
        assert_eq!(ra, rb);
        assert_eq!(ra.to_csv().lines().next(), Some(REPORT_HEADER));
        assert_eq!(ra.epochs.len(), 2);
    }

    #[test]
    fn every_trainable_variant_reduces_its_loss() {
        let ds = dataset();
        for name in VariantName::ALL {
            let v = VariantSpec::of(name);
            if !v.is_trainable() {
                continue;
            }
            let data: TrainingData<f32> = TrainingData::from_split(&ds.train, &v).unwrap();
            let opt = OptimizerConfig { learning_rate: 1e-3, epochs: 3, ..Default::default() };
            let (_, r) = train(v, &data, &small_model(), &fast(), &opt).unwrap();
            let first = r.epochs.first().unwrap().train_loss;
            let last = r.epochs.last().unwrap().train_loss;
            assert!(last < first, "{name}: {first} -> {last}");
        }
    }
}
