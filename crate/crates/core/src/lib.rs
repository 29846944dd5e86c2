//! Graph-based importance sampling for training physics-informed neural
//! networks.
//!
//! The pipeline runs over a collocation point cloud:
//!
//! 1. [`graph`] builds an undirected kNN graph over the point features.
//! 2. [`resistance`] estimates effective resistances of every edge.
//! 3. [`lrd`] contracts low-resistance edges into clusters of bounded
//!    resistance diameter.
//! 4. [`isr`] scores how unstable the loss is around each probed point.
//! 5. [`sampler`] probes a fraction of every cluster, ranks the clusters and
//!    assembles compact epochs of mini-batches from them.
//!
//! [`net`] and [`pde`] provide the network, its input-derivative jets, the
//! residual losses and the training loop that consumes those batches.

pub mod cavity;
pub mod error;
pub mod graph;
pub mod isr;
pub mod kdtree;
pub mod linalg;
pub mod lrd;
pub mod net;
pub mod pde;
pub mod pointcloud;
pub mod resistance;
pub mod sampler;
pub mod stats;
pub mod union_find;

pub use error::{Error, Result};
