//! Differentiable operations, implemented as methods on [`crate::tape::Tape`].

mod conv;
mod elementwise;
mod linalg;
mod norm;
mod resize;

pub use conv::{channel_stats, mean_pool_same};
