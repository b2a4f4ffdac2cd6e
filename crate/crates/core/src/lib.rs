//! Systolic-array cost model and operator toolkit for depthwise and FuSe
//! (fully separable) convolutions.

pub mod error;
pub mod format;
pub mod golden;
pub mod lowering;
pub mod metrics;
pub mod nos;
pub mod oracle;
pub mod ria;
pub mod search;
pub mod sim;
pub mod topology;

pub use error::{Error, Result};
pub use lowering::{GemmWorkload, MappingStrategy, SliceMap};
pub use sim::{LayerReport, NetworkReport, TraceEvent};
pub use topology::{ArrayConfig, Dataflow, FuseVariant, LayerDescriptor, LayerKind, NetworkTopology};
