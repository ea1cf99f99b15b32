//! Binary article and query stores.
//!
//! Layout, little-endian: magic (4 bytes), version `u32 = 1`, record count `u32`,
//! feature dim `u32`, attribute count `u32`, then per attribute `(u16 name length,
//! UTF-8 name, u16 cardinality)`, then per record `(u64 id, dim × f32, attrs × u16)`.
//! Query stores use magic `QSTR` and always carry zero attributes.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use crate::codec::{checked_u16, checked_u32, Reader, Writer};
use crate::error::{shape_err, Error, Result};
use crate::ndcore::Tensor;

pub const ARTICLE_MAGIC: &[u8; 4] = b"FSTR";
pub const QUERY_MAGIC: &[u8; 4] = b"QSTR";
pub const STORE_VERSION: u32 = 1;

/// A categorical attribute; values run `1..=cardinality`, `0` means missing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeSpec {
    pub name: String,
    pub cardinality: u16,
}

/// Id-indexed static feature matrix with categorical attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct ArticleStore {
    ids: Vec<u64>,
    features: Tensor<f32>,
    attributes: Vec<AttributeSpec>,
    /// `M × A`, row-major.
    values: Vec<u16>,
}

impl ArticleStore {
    pub fn new(ids: Vec<u64>, features: Tensor<f32>, attributes: Vec<AttributeSpec>, values: Vec<u16>) -> Result<Self> {
        if features.rows() != ids.len() {
            return Err(shape_err!("{} ids for {} feature rows", ids.len(), features.rows()));
        }
        if values.len() != ids.len() * attributes.len() {
            return Err(shape_err!("{} attribute values for {} articles × {} attributes", values.len(), ids.len(), attributes.len()));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        if let Some(dup) = ids.iter().find(|id| !seen.insert(**id)) {
            return Err(Error::Data(format!("duplicate article id {dup}")));
        }
        for (i, row) in values.chunks(attributes.len().max(1)).enumerate().take(ids.len()) {
            for (a, &v) in attributes.iter().zip(row) {
                if v > a.cardinality {
                    return Err(Error::Data(format!(
                        "article {} has {} = {v} outside 1..={}",
                        ids[i], a.name, a.cardinality
                    )));
                }
            }
        }
        Ok(Self { ids, features, attributes, values })
    }

    /// A store without attributes.
    pub fn plain(ids: Vec<u64>, features: Tensor<f32>) -> Result<Self> {
        Self::new(ids, features, Vec::new(), Vec::new())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn features(&self) -> &Tensor<f32> {
        &self.features
    }

    pub fn feature(&self, index: usize) -> &[f32] {
        self.features.row(index)
    }

    pub fn attributes(&self) -> &[AttributeSpec] {
        &self.attributes
    }

    /// Attribute values of one article; `0` = missing.
    pub fn attribute_values(&self, index: usize) -> &[u16] {
        let a = self.attributes.len();
        &self.values[index * a..(index + 1) * a]
    }

    pub fn index_of(&self, id: u64) -> Option<usize> {
        self.ids.iter().position(|&x| x == id)
    }

    /// Id → row lookup table.
    pub fn index_map(&self) -> std::collections::HashMap<u64, usize> {
        self.ids.iter().enumerate().map(|(i, &id)| (id, i)).collect()
    }

    /// Same articles with a different feature matrix.
    pub fn with_features(&self, features: Tensor<f32>) -> Result<Self> {
        Self::new(self.ids.clone(), features, self.attributes.clone(), self.values.clone())
    }

    /// Rows reordered by `order`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let a = self.attributes.len();
        let mut values = Vec::with_capacity(self.values.len());
        for &i in order {
            values.extend_from_slice(&self.values[i * a..(i + 1) * a]);
        }
        Self::new(order.iter().map(|&i| self.ids[i]).collect(), self.features.select_rows(order), self.attributes.clone(), values)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        encode(ARTICLE_MAGIC, &self.ids, &self.features, &self.attributes, &self.values)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (ids, features, attributes, values) = decode(ARTICLE_MAGIC, bytes)?;
        Self::new(ids, features, attributes, values)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Raw query vectors keyed by query id.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryStore {
    ids: Vec<u64>,
    features: Tensor<f32>,
}

impl QueryStore {
    pub fn new(ids: Vec<u64>, features: Tensor<f32>) -> Result<Self> {
        let inner = ArticleStore::plain(ids, features)?;
        Ok(Self { ids: inner.ids, features: inner.features })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn features(&self) -> &Tensor<f32> {
        &self.features
    }

    pub fn feature(&self, index: usize) -> &[f32] {
        self.features.row(index)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        encode(QUERY_MAGIC, &self.ids, &self.features, &[], &[])
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (ids, features, _, _) = decode(QUERY_MAGIC, bytes)?;
        Self::new(ids, features)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn encode(magic: &[u8; 4], ids: &[u64], features: &Tensor<f32>, attrs: &[AttributeSpec], values: &[u16]) -> Result<Vec<u8>> {
    let mut w = Writer::default();
    w.bytes(magic);
    w.u32(STORE_VERSION);
    w.u32(checked_u32(ids.len(), "record count")?);
    w.u32(checked_u32(features.cols(), "feature dim")?);
    w.u32(checked_u32(attrs.len(), "attribute count")?);
    for a in attrs {
        w.u16(checked_u16(a.name.len(), "attribute name length")?);
        w.bytes(a.name.as_bytes());
        w.u16(a.cardinality);
    }
    let na = attrs.len();
    for (i, &id) in ids.iter().enumerate() {
        w.u64(id);
        w.f32s(features.row(i));
        for &v in &values[i * na..(i + 1) * na] {
            w.u16(v);
        }
    }
    Ok(w.buf)
}

type Decoded = (Vec<u64>, Tensor<f32>, Vec<AttributeSpec>, Vec<u16>);

fn decode(magic: &[u8; 4], bytes: &[u8]) -> Result<Decoded> {
    let mut r = Reader::new(bytes);
    r.magic(magic)?;
    let at = r.offset();
    let version = r.u32("version")?;
    if version != STORE_VERSION {
        return Err(Error::Format { offset: at, msg: format!("unsupported version {version}") });
    }
    let m = r.u32("record count")? as usize;
    let d = r.u32("feature dim")? as usize;
    let at = r.offset();
    let na = r.u32("attribute count")? as usize;
    if magic == QUERY_MAGIC && na != 0 {
        return Err(Error::Format { offset: at, msg: format!("query store declares {na} attributes") });
    }
    let mut attrs = Vec::with_capacity(na);
    for _ in 0..na {
        let len = r.u16("attribute name length")? as usize;
        let name = r.string(len, "attribute name")?;
        let cardinality = r.u16("attribute cardinality")?;
        attrs.push(AttributeSpec { name, cardinality });
    }
    let record = 8 + 4 * d + 2 * na;
    if r.remaining() < m.saturating_mul(record) {
        return r.fail(format!("truncated: {m} records of {record} bytes need {} bytes, {} left", m * record, r.remaining()));
    }
    let mut ids = Vec::with_capacity(m);
    let mut data = Vec::with_capacity(m * d);
    let mut values = Vec::with_capacity(m * na);
    for _ in 0..m {
        ids.push(r.u64("id")?);
        r.f32s(d, &mut data, "features")?;
        for _ in 0..na {
            values.push(r.u16("attribute value")?);
        }
    }
    r.finish()?;
    Ok((ids, Tensor::from_vec(m, d, data)?, attrs, values))
}
