//! Versioned binary model files.
//!
//! Layout (little-endian, floats are f64):
//!
//! ```text
//! "CBM1" | version u32 = 1 | d u32 | covariance mode u8 (0 diagonal, 1 full)
//! | distance threshold f64 | class count u32
//! | per class, ascending id:
//!     class id u32 | cluster count u32
//!     | per cluster: count u64 | centroid d×f64 | scatter (d or d×d)×f64
//! | classifier flag u8
//! | if 1: C u32 | normalize u8 | class ids C×u32 | weights C×d f64 | bias C f64
//! ```
//!
//! The whole file is decoded before anything is returned, so a truncated or
//! corrupt file never yields a partial model.

use std::fs;
use std::path::Path;

use crate::aggvar::{scatter_len, AggVarConfig, ClassModel, ConceptCluster, CovarianceMode, MemoryStore, Scatter};
use crate::classifier::LinearClassifier;
use crate::error::{CbclError, Result};
use crate::feature_store::ByteReader;

pub const MODEL_MAGIC: &[u8; 4] = b"CBM1";
pub const MODEL_VERSION: u32 = 1;

fn u32_of(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| CbclError::Data(format!("{what} {v} exceeds u32 range")))
}

pub fn encode_model(store: &MemoryStore, classifier: Option<&LinearClassifier>) -> Result<Vec<u8>> {
    let d = store.dim();
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&u32_of(d, "dimension")?.to_le_bytes());
    out.push(match store.config().covariance_mode {
        CovarianceMode::Diagonal => 0,
        CovarianceMode::Full => 1,
    });
    out.extend_from_slice(&store.config().distance_threshold.to_le_bytes());
    let models: Vec<&ClassModel> = store.models().collect();
    out.extend_from_slice(&u32_of(models.len(), "class count")?.to_le_bytes());
    for m in models {
        out.extend_from_slice(&m.class_id().to_le_bytes());
        out.extend_from_slice(&u32_of(m.clusters().len(), "cluster count")?.to_le_bytes());
        for c in m.clusters() {
            out.extend_from_slice(&c.count().to_le_bytes());
            for v in c.centroid().iter().chain(c.scatter().values()) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    match classifier {
        None => out.push(0),
        Some(clf) => {
            if clf.dim() != d {
                return Err(CbclError::Data(format!(
                    "classifier dimension {} differs from memory dimension {d}",
                    clf.dim()
                )));
            }
            out.push(1);
            out.extend_from_slice(&u32_of(clf.class_ids().len(), "classifier classes")?.to_le_bytes());
            out.push(clf.normalize() as u8);
            for id in clf.class_ids() {
                out.extend_from_slice(&id.to_le_bytes());
            }
            for v in clf.weights().iter().chain(clf.bias()) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

fn read_f64s(r: &mut ByteReader<'_>, n: usize) -> Result<Vec<f64>> {
    // Bound the allocation by what the file can actually hold.
    if n.checked_mul(8).is_none_or(|b| b > r.remaining()) {
        return Err(CbclError::Format("truncated model file".into()));
    }
    (0..n).map(|_| r.f64()).collect()
}

fn corrupt(e: CbclError) -> CbclError {
    match e {
        CbclError::Data(m) => CbclError::Format(format!("corrupt model: {m}")),
        e => e,
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<(MemoryStore, Option<LinearClassifier>)> {
    let mut r = ByteReader::new(bytes);
    if r.take(4)
        .map_err(|_| CbclError::Format("file shorter than magic".into()))?
        != MODEL_MAGIC
    {
        return Err(CbclError::Format("bad magic, expected \"CBM1\"".into()));
    }
    let version = r.u32()?;
    if version != MODEL_VERSION {
        return Err(CbclError::Format(format!("unsupported model version {version}")));
    }
    let d = r.u32()? as usize;
    let mode = match r.u8()? {
        0 => CovarianceMode::Diagonal,
        1 => CovarianceMode::Full,
        m => return Err(CbclError::Format(format!("unknown covariance mode tag {m}"))),
    };
    let threshold = r.f64()?;
    let config =
        AggVarConfig::new(threshold, mode).map_err(|_| CbclError::Format("invalid stored threshold".into()))?;
    let n_classes = r.u32()? as usize;
    let mut models = Vec::new();
    for _ in 0..n_classes {
        let class_id = r.u32()?;
        let n_clusters = r.u32()? as usize;
        let mut clusters = Vec::new();
        for _ in 0..n_clusters {
            let count = r.u64()?;
            let centroid = read_f64s(&mut r, d)?;
            let raw = read_f64s(&mut r, scatter_len(d, mode))?;
            let scatter = match mode {
                CovarianceMode::Diagonal => Scatter::Diagonal(raw),
                CovarianceMode::Full => Scatter::Full(raw),
            };
            clusters.push(ConceptCluster::from_parts(centroid, scatter, count).map_err(corrupt)?);
        }
        models.push(ClassModel::from_clusters(class_id, clusters));
    }
    let classifier = match r.u8()? {
        0 => None,
        1 => {
            let c = r.u32()? as usize;
            let normalize = match r.u8()? {
                0 => false,
                1 => true,
                v => return Err(CbclError::Format(format!("bad normalize flag {v}"))),
            };
            if c.checked_mul(4).is_none_or(|b| b > r.remaining()) {
                return Err(CbclError::Format("truncated model file".into()));
            }
            let ids = (0..c).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let weights = read_f64s(&mut r, c.saturating_mul(d))?;
            let bias = read_f64s(&mut r, c)?;
            Some(LinearClassifier::from_parts(ids, d, weights, bias, normalize).map_err(corrupt)?)
        }
        v => return Err(CbclError::Format(format!("bad classifier flag {v}"))),
    };
    if r.remaining() != 0 {
        return Err(CbclError::Format(format!(
            "{} trailing bytes in model file",
            r.remaining()
        )));
    }
    let store = MemoryStore::from_models(d, config, models).map_err(|e| match e {
        CbclError::Config(m) | CbclError::Data(m) => CbclError::Format(format!("corrupt model: {m}")),
        e => e,
    })?;
    Ok((store, classifier))
}

pub fn save_model(store: &MemoryStore, classifier: Option<&LinearClassifier>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_model(store, classifier)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(MemoryStore, Option<LinearClassifier>)> {
    decode_model(&fs::read(path)?)
}
