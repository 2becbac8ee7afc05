//! Operation counting, checkpoints and metrics logging.

pub mod checkpoint;
pub mod counted;
pub mod metrics;
pub mod ops;

pub use checkpoint::{load_checkpoint, read_arrays, save_checkpoint, write_arrays, ArrayData, NamedArray, Restored};
pub use counted::{measure, Counted};
pub use metrics::{read_metrics, MetricsRecord, MetricsSink};
pub use ops::{count_forward_ops, LayerOps, OpCount, OpKind, OpReport};

#[cfg(test)]
mod tests;
