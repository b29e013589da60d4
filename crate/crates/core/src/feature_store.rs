//! Feature vectors, datasets, the CBFV file format, and deterministic
//! increment/stream splitting.
//!
//! CBFV layout (all integers little-endian):
//!
//! ```text
//! "CBFV" | version u32 = 1 | N u32 | d u32 | C u32
//! | N×d f32 features (row-major) | N×u32 labels
//! | C × (u16 byte length + UTF-8 class name)
//! ```
//!
//! Files hold 32-bit floats; in memory every feature is an `f64`.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::ops::Deref;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{CbclError, Result};
use crate::rng::derived_rng;

pub const FEATURE_MAGIC: &[u8; 4] = b"CBFV";
pub const FEATURE_VERSION: u32 = 1;

/// Class identifier, an index into a dataset's class-name table.
pub type ClassId = u32;

/// A finite, non-empty embedding vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(CbclError::Data("feature vector must have dimension >= 1".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(CbclError::Data(format!(
                "non-finite feature value {} at coordinate {i}",
                values[i]
            )));
        }
        Ok(FeatureVector(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for FeatureVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub features: FeatureVector,
    pub label: ClassId,
}

impl LabeledSample {
    pub fn new(features: FeatureVector, label: ClassId) -> Self {
        LabeledSample { features, label }
    }
}

/// An immutable, validated collection of labeled feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    samples: Vec<LabeledSample>,
    class_names: Vec<String>,
}

impl Dataset {
    /// Builds a dataset, rejecting empty sample lists, mixed dimensions and
    /// labels without a class name.
    pub fn new(dim: usize, samples: Vec<LabeledSample>, class_names: Vec<String>) -> Result<Self> {
        let ds = Dataset {
            dim,
            samples,
            class_names,
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(CbclError::Data("dataset dimension must be >= 1".into()));
        }
        if self.samples.is_empty() {
            return Err(CbclError::Data("dataset has no samples".into()));
        }
        for (i, s) in self.samples.iter().enumerate() {
            if s.features.dim() != self.dim {
                return Err(CbclError::Data(format!(
                    "sample {i} has dimension {}, expected {}",
                    s.features.dim(),
                    self.dim
                )));
            }
            if s.label as usize >= self.class_names.len() {
                return Err(CbclError::Data(format!(
                    "sample {i} has label {} but only {} class names",
                    s.label,
                    self.class_names.len()
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    /// Sample indices per class, ascending, for classes that have samples.
    pub fn indices_by_class(&self) -> BTreeMap<ClassId, Vec<usize>> {
        let mut by_class: BTreeMap<ClassId, Vec<usize>> = BTreeMap::new();
        for (i, s) in self.samples.iter().enumerate() {
            by_class.entry(s.label).or_default().push(i);
        }
        by_class
    }

    /// New dataset over a subset of samples, sharing dimension and class names.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let samples = indices.iter().map(|&i| self.samples[i].clone()).collect();
        Dataset::new(self.dim, samples, self.class_names.clone())
    }
}

/// One increment S_t of labeled samples.
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementBatch {
    pub index: usize,
    samples: Vec<LabeledSample>,
}

impl IncrementBatch {
    pub fn new(index: usize, samples: Vec<LabeledSample>) -> Result<Self> {
        let Some(first) = samples.first() else {
            return Err(CbclError::Data(format!("increment {index} is empty")));
        };
        let dim = first.features.dim();
        if samples.iter().any(|s| s.features.dim() != dim) {
            return Err(CbclError::Data(format!("increment {index} mixes feature dimensions")));
        }
        Ok(IncrementBatch { index, samples })
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples[0].features.dim()
    }

    /// Distinct labels in the batch, ascending.
    pub fn classes(&self) -> BTreeSet<ClassId> {
        self.samples.iter().map(|s| s.label).collect()
    }
}

// ---------------------------------------------------------------------------
// CBFV encoding

pub fn encode_feature_file(dataset: &Dataset) -> Result<Vec<u8>> {
    dataset.validate()?;
    let n = dataset.len();
    let d = dataset.dim();
    let c = dataset.class_count();
    let count =
        |v: usize, what: &str| u32::try_from(v).map_err(|_| CbclError::Data(format!("{what} {v} exceeds u32 range")));
    let mut out = Vec::with_capacity(20 + n * d * 4 + n * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&count(n, "sample count")?.to_le_bytes());
    out.extend_from_slice(&count(d, "dimension")?.to_le_bytes());
    out.extend_from_slice(&count(c, "class count")?.to_le_bytes());
    for (i, s) in dataset.samples().iter().enumerate() {
        for &v in s.features.iter() {
            let f = v as f32;
            if !f.is_finite() {
                return Err(CbclError::Data(format!(
                    "sample {i} value {v} does not fit in a 32-bit float"
                )));
            }
            out.extend_from_slice(&f.to_le_bytes());
        }
    }
    for s in dataset.samples() {
        out.extend_from_slice(&s.label.to_le_bytes());
    }
    for name in dataset.class_names() {
        let len = u16::try_from(name.len())
            .map_err(|_| CbclError::Data(format!("class name of {} bytes is too long", name.len())))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
    }
    Ok(out)
}

/// Little-endian cursor that reports truncation as a format error.
pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        ByteReader { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                CbclError::Format(format!(
                    "truncated payload: needed {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.buf.len()
                ))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

pub fn decode_feature_file(bytes: &[u8]) -> Result<Dataset> {
    let mut r = ByteReader::new(bytes);
    if r.take(4)
        .map_err(|_| CbclError::Format("file shorter than magic".into()))?
        != FEATURE_MAGIC
    {
        return Err(CbclError::Format("bad magic, expected \"CBFV\"".into()));
    }
    let version = r.u32()?;
    if version != FEATURE_VERSION {
        return Err(CbclError::Format(format!("unsupported CBFV version {version}")));
    }
    let n = r.u32()? as usize;
    let d = r.u32()? as usize;
    let c = r.u32()? as usize;
    let payload = n
        .checked_mul(d)
        .and_then(|nd| nd.checked_mul(4))
        .and_then(|b| b.checked_add(n * 4))
        .ok_or_else(|| CbclError::Format("header sizes overflow".into()))?;
    if r.remaining() < payload {
        return Err(CbclError::Format(format!(
            "truncated payload: header promises {payload} bytes of samples, {} present",
            r.remaining()
        )));
    }
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let mut row = Vec::with_capacity(d);
        for j in 0..d {
            let v = r.f32()?;
            if !v.is_finite() {
                return Err(CbclError::Data(format!(
                    "non-finite feature at sample {i}, coordinate {j}"
                )));
            }
            row.push(v as f64);
        }
        rows.push(row);
    }
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        labels.push(r.u32()?);
    }
    let mut names = Vec::with_capacity(c.min(1 << 16));
    for k in 0..c {
        let len = r.u16()? as usize;
        let raw = r.take(len)?;
        let name =
            std::str::from_utf8(raw).map_err(|_| CbclError::Format(format!("class name {k} is not valid UTF-8")))?;
        names.push(name.to_owned());
    }
    if r.remaining() != 0 {
        return Err(CbclError::Format(format!(
            "{} trailing bytes after class table",
            r.remaining()
        )));
    }
    if n == 0 {
        return Err(CbclError::Data("feature file contains no samples".into()));
    }
    let samples = rows
        .into_iter()
        .zip(labels)
        .map(|(row, label)| Ok(LabeledSample::new(FeatureVector::new(row)?, label)))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(d, samples, names)
}

pub fn read_feature_file(path: impl AsRef<Path>) -> Result<Dataset> {
    let bytes = fs::read(path)?;
    decode_feature_file(&bytes)
}

pub fn write_feature_file(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_feature_file(dataset)?;
    fs::write(path, bytes)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Splitting

/// Increments plus the held-out test set, with the dataset indices behind
/// every sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub increments: Vec<IncrementBatch>,
    /// Dataset index of every sample, parallel to each increment's samples.
    pub increment_indices: Vec<Vec<usize>>,
    /// Classes introduced by each increment, in class-order.
    pub increment_classes: Vec<Vec<ClassId>>,
    pub test: Vec<LabeledSample>,
    pub test_indices: Vec<usize>,
}

/// Train/test partition of one class's samples, each in seeded order.
struct ClassPartition {
    train: Vec<usize>,
    test: Vec<usize>,
}

type Partitions = BTreeMap<ClassId, ClassPartition>;

fn check_fraction(train_fraction: f64) -> Result<()> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(CbclError::Config(format!(
            "train_fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    Ok(())
}

fn partition_classes(
    dataset: &Dataset,
    classes_per_increment: usize,
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<Vec<ClassId>>, Partitions)> {
    if classes_per_increment == 0 {
        return Err(CbclError::Config("classes_per_increment must be >= 1".into()));
    }
    check_fraction(train_fraction)?;
    let by_class = dataset.indices_by_class();
    if classes_per_increment > by_class.len() {
        return Err(CbclError::Config(format!(
            "classes_per_increment {classes_per_increment} exceeds the {} classes present",
            by_class.len()
        )));
    }
    let mut order: Vec<ClassId> = by_class.keys().copied().collect();
    order.shuffle(&mut derived_rng(seed, "class-order", 0));
    let groups = order.chunks(classes_per_increment).map(<[ClassId]>::to_vec).collect();

    let mut parts = BTreeMap::new();
    for (&class, idx) in &by_class {
        let mut idx = idx.clone();
        idx.shuffle(&mut derived_rng(seed, "class-split", class as u64));
        let n = idx.len();
        let n_train = ((train_fraction * n as f64).round() as usize).clamp(1, n.saturating_sub(1).max(1));
        let test = idx.split_off(n_train);
        parts.insert(class, ClassPartition { train: idx, test });
    }
    Ok((groups, parts))
}

fn assemble(
    dataset: &Dataset,
    groups: Vec<Vec<ClassId>>,
    parts: &BTreeMap<ClassId, ClassPartition>,
    shots: Option<usize>,
    seed: u64,
) -> Result<Split> {
    let mut increments = Vec::with_capacity(groups.len());
    let mut increment_indices = Vec::with_capacity(groups.len());
    for (t, group) in groups.iter().enumerate() {
        let mut idx: Vec<usize> = group
            .iter()
            .flat_map(|c| {
                let train = &parts[c].train;
                let take = shots.unwrap_or(train.len());
                train[..take].iter().copied()
            })
            .collect();
        idx.shuffle(&mut derived_rng(seed, "increment-order", t as u64));
        let samples = idx.iter().map(|&i| dataset.samples()[i].clone()).collect();
        increments.push(IncrementBatch::new(t, samples)?);
        increment_indices.push(idx);
    }
    let test_indices: Vec<usize> = parts.values().flat_map(|p| p.test.iter().copied()).collect();
    let test = test_indices.iter().map(|&i| dataset.samples()[i].clone()).collect();
    Ok(Split {
        increments,
        increment_indices,
        increment_classes: groups,
        test,
        test_indices,
    })
}

/// Class-incremental split: classes in seeded order, grouped
/// `classes_per_increment` at a time; every training sample of a group's
/// classes lands in that group's increment.
pub fn split_class_incremental(
    dataset: &Dataset,
    classes_per_increment: usize,
    train_fraction: f64,
    seed: u64,
) -> Result<Split> {
    let (groups, parts) = partition_classes(dataset, classes_per_increment, train_fraction, seed)?;
    assemble(dataset, groups, &parts, None, seed)
}

/// Few-shot split: like [`split_class_incremental`], but each class
/// contributes exactly `shots_per_class` training samples.
pub fn split_fsil(
    dataset: &Dataset,
    classes_per_increment: usize,
    shots_per_class: usize,
    train_fraction: f64,
    seed: u64,
) -> Result<Split> {
    if shots_per_class == 0 {
        return Err(CbclError::Config("shots_per_class must be >= 1".into()));
    }
    let (groups, parts) = partition_classes(dataset, classes_per_increment, train_fraction, seed)?;
    for (&class, p) in &parts {
        if p.train.len() < shots_per_class {
            let name = dataset
                .class_names()
                .get(class as usize)
                .map(String::as_str)
                .unwrap_or("?");
            return Err(CbclError::Config(format!(
                "class {class} ({name}) has only {} training samples after the test split, {shots_per_class} shots requested",
                p.train.len()
            )));
        }
    }
    assemble(dataset, groups, &parts, Some(shots_per_class), seed)
}

// ---------------------------------------------------------------------------
// Streams

/// A chunk of the stream: dataset indices with their features, labels withheld.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledChunk {
    pub index: usize,
    pub items: Vec<(usize, FeatureVector)>,
}

/// Answers label queries for stream or pool samples and keeps an audit of
/// every index it was asked about.
#[derive(Debug, Clone)]
pub struct LabelOracle {
    labels: Vec<ClassId>,
    queried: Vec<usize>,
}

impl LabelOracle {
    pub fn new(labels: Vec<ClassId>) -> Self {
        LabelOracle {
            labels,
            queried: Vec::new(),
        }
    }

    pub fn query(&mut self, index: usize) -> Result<ClassId> {
        let label = *self
            .labels
            .get(index)
            .ok_or_else(|| CbclError::Data(format!("oracle has no sample {index}")))?;
        self.queried.push(index);
        Ok(label)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Number of queries answered so far.
    pub fn queries(&self) -> usize {
        self.queried.len()
    }

    /// Queried indices, in query order.
    pub fn queried(&self) -> &[usize] {
        &self.queried
    }

    pub fn distinct_queried(&self) -> HashSet<usize> {
        self.queried.iter().copied().collect()
    }
}

/// Width, in class slots, over which one class's samples are spread in a stream.
const STREAM_CLASS_SPREAD: f64 = 2.0;

/// Orders every sample of `dataset` into a seeded stream and cuts it into
/// chunks of `chunk_size` (the last chunk may be shorter).
///
/// Classes enter in a seeded order; each sample's position is its class's
/// slot plus a uniform offset in `[0, 2)`, so consecutive classes overlap
/// and no chunk boundary coincides with a class boundary.
pub fn make_stream(dataset: &Dataset, chunk_size: usize, seed: u64) -> Result<(Vec<UnlabeledChunk>, LabelOracle)> {
    if chunk_size == 0 {
        return Err(CbclError::Config("chunk_size must be >= 1".into()));
    }
    let mut classes: Vec<ClassId> = dataset.indices_by_class().into_keys().collect();
    classes.shuffle(&mut derived_rng(seed, "stream-class-order", 0));
    let slot: BTreeMap<ClassId, usize> = classes.iter().enumerate().map(|(i, &c)| (c, i)).collect();

    let mut rng = derived_rng(seed, "stream-jitter", 0);
    let mut keyed: Vec<(f64, usize)> = dataset
        .samples()
        .iter()
        .enumerate()
        .map(|(i, s)| (slot[&s.label] as f64 + rng.random::<f64>() * STREAM_CLASS_SPREAD, i))
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let chunks = keyed
        .chunks(chunk_size)
        .enumerate()
        .map(|(index, part)| UnlabeledChunk {
            index,
            items: part
                .iter()
                .map(|&(_, i)| (i, dataset.samples()[i].features.clone()))
                .collect(),
        })
        .collect();
    let oracle = LabelOracle::new(dataset.samples().iter().map(|s| s.label).collect());
    Ok((chunks, oracle))
}
