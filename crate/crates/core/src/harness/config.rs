use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::aggvar::{AggVarConfig, CovarianceMode};
use crate::classifier::TrainConfig;
use crate::curiosity::NoveltyConfig;
use crate::error::{CbclError, Result};
use crate::rehearsal::RehearsalConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Disjoint class groups arrive one increment at a time.
    ClassIncremental,
    /// Class-incremental with a fixed number of shots per class.
    Fsil,
    /// Unlabeled chunks without task boundaries; only samples flagged as
    /// unknown may be sent to the teacher.
    OnlineStream,
    /// Class-incremental where each increment offers an unlabeled pool and a
    /// label budget.
    ActiveLearning,
}

impl FromStr for Protocol {
    type Err = CbclError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "class_incremental" => Ok(Protocol::ClassIncremental),
            "fsil" => Ok(Protocol::Fsil),
            "online_stream" => Ok(Protocol::OnlineStream),
            "active_learning" => Ok(Protocol::ActiveLearning),
            other => Err(CbclError::Config(format!("unknown protocol {other:?}"))),
        }
    }
}

/// How an active-learning run picks pool samples to label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Highest curiosity score first.
    #[default]
    Curiosity,
    /// Seeded uniform choice; the baseline curiosity is compared against.
    Random,
}

impl FromStr for Selection {
    type Err = CbclError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "curiosity" => Ok(Selection::Curiosity),
            "random" => Ok(Selection::Random),
            other => Err(CbclError::Config(format!("unknown selection strategy {other:?}"))),
        }
    }
}

pub const DEFAULT_POOL_SIZE: usize = 200;

/// Everything a protocol run depends on besides the dataset.
///
/// Within [`run`](super::run), per-increment seeds for splitting, pool
/// sampling, rehearsal and training are all derived from `master_seed`; the
/// `seed` fields of `rehearsal` and `train` are ignored there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub protocol: Protocol,
    pub aggvar: AggVarConfig,
    pub rehearsal: RehearsalConfig,
    pub train: TrainConfig,
    pub novelty: NoveltyConfig,
    pub classes_per_increment: usize,
    pub train_fraction: f64,
    pub shots_per_class: Option<usize>,
    pub chunk_size: Option<usize>,
    pub label_budget: Option<usize>,
    pub pool_size: Option<usize>,
    pub selection: Selection,
    pub master_seed: u64,
}

impl ProtocolConfig {
    /// Defaults for everything but the protocol-specific knobs; the unknown
    /// threshold starts equal to the clustering threshold.
    pub fn new(protocol: Protocol, distance_threshold: f64, master_seed: u64) -> Self {
        ProtocolConfig {
            protocol,
            aggvar: AggVarConfig {
                distance_threshold,
                covariance_mode: CovarianceMode::Diagonal,
            },
            rehearsal: RehearsalConfig::default(),
            train: TrainConfig::default(),
            novelty: NoveltyConfig {
                unknown_threshold: distance_threshold,
            },
            classes_per_increment: 10,
            train_fraction: 0.8,
            shots_per_class: None,
            chunk_size: None,
            label_budget: None,
            pool_size: None,
            selection: Selection::Curiosity,
            master_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.aggvar.validate()?;
        self.rehearsal.validate()?;
        self.train.validate()?;
        let p = self.protocol;
        let only = |present: bool, allowed: bool, name: &str| {
            if present && !allowed {
                Err(CbclError::Config(format!("{name} does not apply to protocol {p:?}")))
            } else {
                Ok(())
            }
        };
        let needs = |present: bool, name: &str| {
            if present {
                Ok(())
            } else {
                Err(CbclError::Config(format!("protocol {p:?} requires {name}")))
            }
        };
        only(self.shots_per_class.is_some(), p == Protocol::Fsil, "shots_per_class")?;
        only(self.chunk_size.is_some(), p == Protocol::OnlineStream, "chunk_size")?;
        only(
            self.label_budget.is_some(),
            matches!(p, Protocol::OnlineStream | Protocol::ActiveLearning),
            "label_budget",
        )?;
        only(self.pool_size.is_some(), p == Protocol::ActiveLearning, "pool_size")?;
        match p {
            Protocol::Fsil => needs(self.shots_per_class.is_some(), "shots_per_class")?,
            Protocol::OnlineStream => {
                needs(self.chunk_size.is_some(), "chunk_size")?;
                needs(self.label_budget.is_some(), "label_budget")?;
                self.novelty.validate()?;
            }
            Protocol::ActiveLearning => needs(self.label_budget.is_some(), "label_budget")?,
            Protocol::ClassIncremental => {}
        }
        if self.label_budget == Some(0) || self.chunk_size == Some(0) || self.pool_size == Some(0) {
            return Err(CbclError::Config(
                "label_budget, chunk_size and pool_size must be >= 1".into(),
            ));
        }
        if self.classes_per_increment == 0 {
            return Err(CbclError::Config("classes_per_increment must be >= 1".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(CbclError::Config(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn protocol_specific_fields_are_checked() {
        let mut c = ProtocolConfig::new(Protocol::ClassIncremental, 5.0, 0);
        assert!(c.validate().is_ok());
        c.label_budget = Some(3);
        assert!(matches!(c.validate(), Err(CbclError::Config(_))));

        let mut f = ProtocolConfig::new(Protocol::Fsil, 5.0, 0);
        assert!(f.validate().is_err());
        f.shots_per_class = Some(5);
        assert!(f.validate().is_ok());

        let mut o = ProtocolConfig::new(Protocol::OnlineStream, 0.0, 0);
        o.chunk_size = Some(10);
        o.label_budget = Some(2);
        // unknown threshold defaults to D = 0, which is not a valid novelty threshold
        assert!(o.validate().is_err());
        o.novelty.unknown_threshold = 4.0;
        assert!(o.validate().is_ok());

        let mut a = ProtocolConfig::new(Protocol::ActiveLearning, 5.0, 0);
        assert!(a.validate().is_err());
        a.label_budget = Some(10);
        a.pool_size = Some(200);
        assert!(a.validate().is_ok());
    }

    #[test]
    fn names_parse() {
        assert_eq!("fsil".parse::<Protocol>().unwrap(), Protocol::Fsil);
        assert_eq!("online_stream".parse::<Protocol>().unwrap(), Protocol::OnlineStream);
        assert!("batch".parse::<Protocol>().is_err());
        assert_eq!("random".parse::<Selection>().unwrap(), Selection::Random);
    }
}
