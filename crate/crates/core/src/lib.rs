//! Zero-shot label transfer between a labeled source time-series domain and
//! an unlabeled target domain, by adversarially aligning frozen-encoder
//! embeddings with a small adapter network.
//!
//! Pipeline: [`cohortgen`] synthesizes labeled source patches,
//! [`simulator`] degrades them into an unlabeled target stream, [`encoder`]
//! embeds both, [`align`] trains the adapter/discriminator/classifier game,
//! and [`metrics`] scores domain mixing and label-transfer error.
//! [`pipeline`] wires the stages together.

pub mod align;
pub mod cohortgen;
pub mod datamodel;
pub mod encoder;
pub mod error;
pub mod fsutil;
pub mod identifier;
pub mod metrics;
pub mod neuralnet;
pub mod pipeline;
pub mod rng;
pub mod simulator;

pub use error::{Error, Result};
