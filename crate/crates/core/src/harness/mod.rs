//! Desk-scale domain-generalization harness: synthetic graded images,
//! leave-one-domain-out protocols, a toy backbone and its training loop.

pub mod config;
pub mod dataset;
pub mod grade;
pub mod metrics;
pub mod model;
pub mod protocol;
pub mod sweep;
pub mod synth;
pub mod train;

pub use grade::{assign_grade, LesionInventory};
pub use metrics::{accuracy, macro_auc, macro_f1};
pub use model::{ModelConfig, ToyNet};
pub use protocol::{build_protocol, DomainSplit, Protocol};
pub use synth::{default_domains, generate_image, DomainSpec, SyntheticSample};
pub use train::{train, train_one, DataBank, MetricsReport, RunConfig};
