//! Multi-domain CTR prediction with domain-adaptive neuron-level pruning.
//!
//! A shared tanh MLP is gated, layer by layer, by factor vectors that a
//! small pruner network computes from the domain embedding and the layer
//! input. Factors can be hard 0/1 masks (binarization), soft scales in
//! `(0, β)` (scaling), or thresholded scales (fusion). A regularizer keeps
//! the fraction of zeroed neurons per layer inside a target band.
//!
//! ```no_run
//! use adasparse::data::{generate_synthetic, split_by_timestamp, DatasetSpec};
//! use adasparse::training::{train, TrainConfig, TrainData};
//!
//! let spec = DatasetSpec::default();
//! let split = split_by_timestamp(generate_synthetic(&spec, 0)?);
//! let data = TrainData { schema: spec.schema(), vocab: spec.vocabulary(), train: split.train, dev: split.dev };
//! let outcome = train(&TrainConfig::default(), &data)?;
//! let p = outcome.checkpoint.predict(&split.test)?;
//! # Ok::<(), adasparse::Error>(())
//! ```

pub mod backbone;
pub mod cli;
pub mod data;
pub mod embedding;
pub mod error;
pub mod metrics;
pub mod numerics;
pub mod pruner;
pub mod training;

pub use error::{Error, Result};
