//! The Optic-Net family: configuration, blocks, model assembly and audits.

pub mod audit;
pub mod blocks;
pub mod config;
pub mod features;
pub mod model;

pub use blocks::{BlockOutput, BuildingBlock, ResidualConvUnit, ResidualUnit, SignalProbe, Stage};
pub use config::{
    ModelConfig, ResConvConfig, ResidualUnitConfig, StageConfig, StridePlacement, Variant,
};
pub use model::{argmax_rows, ForwardTrace, Model, OpticNet};
