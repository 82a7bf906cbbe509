//! Viscoelastic von Karman plates: reduced material forms, a discrete plate
//! energy and dissipation, minimizing-movement gradient flows, the metric
//! slope, and thin three-dimensional films evaluated on recovery sequences.

pub mod error;
pub mod cg;
pub mod config;
pub mod energy;
pub mod field;
pub mod experiment;
pub mod flow;
pub mod gauss;
pub mod io;
pub mod lbfgs;
pub mod plate_space;
pub mod presets;
pub mod slope;
pub mod spline;
pub mod tensor;
pub mod thin;

pub use error::{Result, VkError};
