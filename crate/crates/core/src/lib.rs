pub mod checkpoint;
pub mod data;
pub mod error;
pub mod metrics;
pub mod hypergraph;
pub mod model;
pub mod numeric;
pub mod patient_graph;
pub mod risk;
pub mod seq;
pub mod train;

pub use error::{Error, Result};
