//! Fake news detection over a cross-modal tweet similarity graph.
//!
//! Features are contextualized by a GCN stack, turned into initial label
//! distributions, then refined by signed label propagation. Everything runs on
//! a small f64 reverse-mode tape in [`ndops`].

pub mod checkpoint;
pub mod datamodel;
pub mod eval;
pub mod fcn;
pub mod gradcheck;
pub mod graph;
pub mod losses;
pub mod lpn;
pub mod ndops;
pub mod trainer;

pub use datamodel::{load_dataset, save_dataset, Dataset, Label, Split, TweetRecord};
pub use eval::{Metrics, MetricsReport};
pub use graph::{build_graph, Channel, ChannelSet, CrossModalGraph, SimilarityConfig};
pub use losses::LossValues;
pub use ndops::{Tape, Tensor, Var};
pub use trainer::{train, TrainConfig, TrainedModel, Variant};
