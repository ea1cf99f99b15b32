//! Model checkpoint file.
//!
//! Magic `M2SH`, version `u32`, the variant as a tagged record (`u16` name length,
//! name, four `u8` tags), then the parameter stacks. Every float blob is
//! `u32`-length-prefixed little-endian `f32`.

use std::fs;
use std::path::Path;

use super::params::ModelParams;
use super::variant::{ArticleFeatures, LossKind, Matching, QueryFeatures, VariantName, VariantSpec};
use crate::codec::{checked_u16, checked_u32, Reader, Writer};
use crate::error::{Error, Result};
use crate::ndcore::{BatchNorm, Dense, Dropout, Layer, Sequential, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"M2SH";
pub const CHECKPOINT_VERSION: u32 = 1;

const DENSE: u8 = 0;
const BATCHNORM: u8 = 1;
const DROPOUT: u8 = 2;
const RELU: u8 = 3;
const SIGMOID: u8 = 4;

fn put_blob(w: &mut Writer, v: &[f32]) -> Result<()> {
    w.u32(checked_u32(v.len(), "blob length")?);
    w.f32s(v);
    Ok(())
}

fn get_blob(r: &mut Reader<'_>, what: &str) -> Result<Vec<f32>> {
    let n = r.u32(what)? as usize;
    let mut out = Vec::with_capacity(n.min(r.remaining() / 4));
    r.f32s(n, &mut out, what)?;
    Ok(out)
}

fn put_stack(w: &mut Writer, s: &Sequential<f32>) -> Result<()> {
    w.u32(checked_u32(s.layers.len(), "layer count")?);
    for l in &s.layers {
        match l {
            Layer::Dense(d) => {
                w.u8(DENSE);
                w.u32(checked_u32(d.weight.rows(), "dense rows")?);
                w.u32(checked_u32(d.weight.cols(), "dense cols")?);
                put_blob(w, d.weight.data())?;
                put_blob(w, &d.bias)?;
            }
            Layer::BatchNorm(b) => {
                w.u8(BATCHNORM);
                for v in [&b.gamma, &b.beta, &b.running_mean, &b.running_var] {
                    put_blob(w, v)?;
                }
                w.f32(b.momentum);
                w.f32(b.epsilon);
            }
            Layer::Dropout(d) => {
                w.u8(DROPOUT);
                w.f32(d.rate);
            }
            Layer::Relu { .. } => w.u8(RELU),
            Layer::Sigmoid { .. } => w.u8(SIGMOID),
        }
    }
    Ok(())
}

fn get_stack(r: &mut Reader<'_>) -> Result<Sequential<f32>> {
    let n = r.u32("layer count")? as usize;
    let mut layers = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        let at = r.offset();
        let wrap = |e: Error| match e {
            Error::Format { .. } => e,
            other => Error::Format { offset: at, msg: other.to_string() },
        };
        let layer = match r.u8("layer tag")? {
            DENSE => {
                let rows = r.u32("dense rows")? as usize;
                let cols = r.u32("dense cols")? as usize;
                let w = get_blob(r, "dense weight")?;
                let b = get_blob(r, "dense bias")?;
                Layer::Dense(Dense::new(Tensor::from_vec(rows, cols, w).map_err(wrap)?, b).map_err(wrap)?)
            }
            BATCHNORM => {
                let gamma = get_blob(r, "batchnorm gamma")?;
                let beta = get_blob(r, "batchnorm beta")?;
                let running_mean = get_blob(r, "batchnorm running mean")?;
                let running_var = get_blob(r, "batchnorm running var")?;
                let momentum = r.f32("batchnorm momentum")?;
                let epsilon = r.f32("batchnorm epsilon")?;
                let dim = gamma.len();
                if [beta.len(), running_mean.len(), running_var.len()].iter().any(|&l| l != dim) {
                    return Err(Error::Format { offset: at, msg: "batchnorm buffers differ in length".into() });
                }
                let mut bn = BatchNorm::with_hyper(dim, momentum, epsilon).map_err(wrap)?;
                bn.gamma = gamma;
                bn.beta = beta;
                bn.running_mean = running_mean;
                bn.running_var = running_var;
                Layer::BatchNorm(bn)
            }
            DROPOUT => Layer::Dropout(Dropout::new(r.f32("dropout rate")?).map_err(wrap)?),
            RELU => Layer::relu(),
            SIGMOID => Layer::sigmoid(),
            t => return Err(Error::Format { offset: at, msg: format!("unknown layer tag {t}") }),
        };
        layers.push(layer);
    }
    Ok(Sequential::new(layers))
}

fn put_optional(w: &mut Writer, s: &Option<Sequential<f32>>) -> Result<()> {
    match s {
        Some(s) => {
            w.u8(1);
            put_stack(w, s)
        }
        None => {
            w.u8(0);
            Ok(())
        }
    }
}

fn get_optional(r: &mut Reader<'_>) -> Result<Option<Sequential<f32>>> {
    match r.u8("presence flag")? {
        0 => Ok(None),
        1 => Ok(Some(get_stack(r)?)),
        f => r.fail(format!("presence flag {f}")),
    }
}

impl ModelParams<f32> {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::default();
        w.bytes(CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION);
        let name = self.variant.name.as_str();
        w.u16(checked_u16(name.len(), "variant name")?);
        w.bytes(name.as_bytes());
        w.u8(self.variant.loss.tag());
        w.u8(self.variant.query_features.tag());
        w.u8(self.variant.matching.tag());
        w.u8(self.variant.article_features.tag());
        put_optional(&mut w, &self.encoder)?;
        put_optional(&mut w, &self.article_encoder)?;
        put_optional(&mut w, &self.head)?;
        put_blob(&mut w, &self.bias)?;
        for heads in [&self.left_attribute_heads, &self.right_attribute_heads] {
            w.u32(checked_u32(heads.len(), "attribute head count")?);
            for h in heads {
                put_stack(&mut w, h)?;
            }
        }
        Ok(w.buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(CHECKPOINT_MAGIC)?;
        let at = r.offset();
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format { offset: at, msg: format!("unsupported checkpoint version {version}") });
        }
        let at = r.offset();
        let len = r.u16("variant name length")? as usize;
        let name: VariantName = r.string(len, "variant name")?.parse().map_err(|e: Error| Error::Format { offset: at, msg: e.to_string() })?;
        let tag_at = r.offset();
        let bad = |what: &str| Error::Format { offset: tag_at, msg: format!("invalid {what} tag") };
        let loss = LossKind::from_tag(r.u8("loss tag")?).ok_or_else(|| bad("loss"))?;
        let qf = QueryFeatures::from_tag(r.u8("query feature tag")?).ok_or_else(|| bad("query feature"))?;
        let m = Matching::from_tag(r.u8("matching tag")?).ok_or_else(|| bad("matching"))?;
        let af = ArticleFeatures::from_tag(r.u8("article feature tag")?).ok_or_else(|| bad("article feature"))?;
        let variant = VariantSpec::new(name, loss, qf, m, af).map_err(|e| Error::Format { offset: at, msg: e.to_string() })?;
        let encoder = get_optional(&mut r)?;
        let article_encoder = get_optional(&mut r)?;
        let head = get_optional(&mut r)?;
        let bias = get_blob(&mut r, "bias")?;
        let mut heads = [Vec::new(), Vec::new()];
        for side in &mut heads {
            let n = r.u32("attribute head count")? as usize;
            for _ in 0..n {
                side.push(get_stack(&mut r)?);
            }
        }
        r.finish()?;
        let [left, right] = heads;
        let consistent = encoder.is_some() == variant.has_encoder()
            && article_encoder.is_some() == variant.has_article_encoder()
            && head.is_some() == variant.has_head()
            && bias.len() == usize::from(variant.has_bias());
        if !consistent {
            return Err(Error::Format { offset: at, msg: format!("parameter blocks do not match variant {name}") });
        }
        Ok(Self { variant, encoder, article_encoder, head, grad_bias: vec![0.0; bias.len()], bias, left_attribute_heads: left, right_attribute_heads: right })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::params::ModelConfig;
    use crate::rng::Streams;

    #[test]
    fn every_variant_round_trips_bitwise() {
        for spec in VariantSpec::registry() {
            let mut m = ModelParams::<f32>::init(*spec, &ModelConfig::default(), &mut Streams::new(3).stream("init")).unwrap();
            if let Some(Layer::BatchNorm(bn)) = m.head.as_mut().map(|h| &mut h.layers[0]) {
                bn.running_mean[0] = 0.123;
                bn.running_var[1] = 4.5;
            }
            m.bias.iter_mut().for_each(|b| *b = -0.75);
            let bytes = m.to_bytes().unwrap();
            let back = ModelParams::from_bytes(&bytes).unwrap();
            assert_eq!(back.variant, m.variant);
            assert_eq!(back.to_bytes().unwrap(), bytes);
        }
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let m = ModelParams::<f32>::init(VariantSpec::of(VariantName::Linear), &ModelConfig::default(), &mut Streams::new(1).stream("i")).unwrap();
        let bytes = m.to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[1] = b'X';
        assert!(matches!(ModelParams::from_bytes(&bad), Err(Error::Format { offset: 0, .. })));
        assert!(matches!(ModelParams::from_bytes(&bytes[..bytes.len() - 1]), Err(Error::Format { .. })));
        let mut wrong_tag = bytes.clone();
        // the loss tag follows magic, version, name length and the six-byte name
        wrong_tag[4 + 4 + 2 + 6] = LossKind::Triplet.tag();
        assert!(matches!(ModelParams::from_bytes(&wrong_tag), Err(Error::Format { .. })));
    }
}
