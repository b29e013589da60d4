//! Protocol runner, reports, threshold tuning and model persistence.

mod config;
mod model_io;
mod report;
mod run;
mod tune;

pub use config::{Protocol, ProtocolConfig, Selection, DEFAULT_POOL_SIZE};
pub use model_io::{decode_model, encode_model, load_model, save_model, MODEL_MAGIC, MODEL_VERSION};
pub use report::{to_canonical_json, ClassScore, DatasetSummary, IncrementReport, RunReport};
pub use run::{run, run_with_state, RunOutcome};
pub use tune::{cross_validate, tune_threshold, TuneOutcome};
