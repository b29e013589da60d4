//! Run reports and their canonical JSON form.
//!
//! Canonical JSON: object keys sorted, no whitespace, every float printed
//! in scientific notation with 17 significant digits, integers as integers.
//! Non-finite floats have no JSON form and are written as `null`.

use std::collections::{BTreeMap, BTreeSet};
use std::io;

use serde::{Deserialize, Serialize};
use serde_json::ser::Formatter;

use super::config::ProtocolConfig;
use crate::error::{CbclError, Result};
use crate::feature_store::ClassId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassScore {
    pub correct: usize,
    pub total: usize,
}

impl ClassScore {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementReport {
    pub increment: usize,
    /// Classes first introduced by this increment.
    pub new_classes: Vec<ClassId>,
    pub seen_classes: Vec<ClassId>,
    pub accuracy_on_seen: f64,
    pub per_class_accuracy: BTreeMap<ClassId, f64>,
    pub per_class_counts: BTreeMap<ClassId, ClassScore>,
    pub clusters_total: usize,
    pub clusters_created: usize,
    pub samples_learned: usize,
    pub rehearsal_exemplars: usize,
    pub labels_spent: usize,
    pub label_budget: Option<usize>,
    pub memory_bytes: u64,
    pub unknown_precision: Option<f64>,
    pub unknown_recall: Option<f64>,
}

impl IncrementReport {
    /// Pooled accuracy over the test samples of `classes`.
    pub fn accuracy_on(&self, classes: &BTreeSet<ClassId>) -> Option<f64> {
        let (correct, total) = self
            .per_class_counts
            .iter()
            .filter(|(c, _)| classes.contains(c))
            .fold((0, 0), |(a, b), (_, s)| (a + s.correct, b + s.total));
        (total > 0).then(|| correct as f64 / total as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub samples: usize,
    pub dim: usize,
    pub classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ProtocolConfig,
    pub dataset: DatasetSummary,
    pub increments: Vec<IncrementReport>,
    pub average_incremental_accuracy: f64,
    pub final_accuracy: f64,
    pub total_labels_spent: usize,
    /// Label queries answered by the oracle (active protocols only).
    pub oracle_queries: usize,
    /// Kept out of the JSON so reports stay byte-reproducible.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

impl RunReport {
    pub fn to_canonical_json(&self) -> Result<String> {
        to_canonical_json(self)
    }
}

struct CanonicalFormatter;

impl Formatter for CanonicalFormatter {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }
}

pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<String> {
    // Value's map type is ordered, which sorts keys at every depth.
    let tree = serde_json::to_value(value).map_err(|e| CbclError::Data(format!("report serialization: {e}")))?;
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, CanonicalFormatter);
    tree.serialize(&mut ser)
        .map_err(|e| CbclError::Data(format!("report serialization: {e}")))?;
    Ok(String::from_utf8(out).expect("serde_json emits UTF-8"))
}
