//! Outage analysis and simulation of incremental-redundancy ARQ with multi-bit feedback and
//! power control over MIMO block-fading channels with discrete inputs.

pub mod cli;
pub mod config;
pub mod constellation;
pub mod diversity;
pub mod error;
pub mod feedback;
pub mod mutual_info;
pub mod power;
pub mod rate;
pub mod seeding;
pub mod sim;
pub mod stats;

pub use config::{AckConvention, ChannelConfig};
pub use constellation::Constellation;
pub use error::{Error, Result};
pub use feedback::{canonical_grid_tree, design_thresholds, FeedbackVector, ThresholdTree, TreeKind};
pub use rate::Rate;
