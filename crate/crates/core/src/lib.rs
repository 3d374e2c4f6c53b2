//! Mapping, latency modeling and simulation of dense-layer chains on AIE-ML
//! style tile arrays.

pub mod arch;
pub mod calib;
pub mod dse;
pub mod error;
pub mod mapping;
pub mod model;
pub mod par;
pub mod perf;
pub mod profile;
pub mod quant;
pub mod report;
pub mod sim;

pub use arch::{default_aie_ml, ArchSpec};
pub use error::{Error, Result};
pub use mapping::{KernelShape, Mapping, Partition};
pub use model::{parse_model, ModelSpec};
pub use profile::{default_profile, CalibrationProfile};
pub use par::Exec;
