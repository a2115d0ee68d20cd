//! Example-based hypernetwork domain adaptation for text classification.
//!
//! The pipeline has two stages. Stage one extracts domain-related features
//! (DRFs) per source domain and maps every example to a signature
//! `"domain: w1, w2, ..."`. Stage two trains a task model whose classifier
//! weights are emitted per example by a hypernetwork conditioned on that
//! signature. Baselines (no adaptation, prompt-only, mixtures of experts)
//! share the same encoder so that comparisons isolate the conditioning.
//!
//! Everything runs on a small dense reverse-mode autodiff engine in f64;
//! there is no BLAS or GPU dependency.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod drf;
pub mod error;
pub mod eval;
pub mod hypernet;
pub mod models;
pub mod nn;
pub mod rng;
pub mod synthetic;
pub mod text;
pub mod trainer;
pub mod verify;

pub use autodiff::{Graph, Matrix, NodeId, ParamId, ParamStore};
pub use corpus::{DomainCorpus, Example, Split, SplitPlan, TaskSchema};
pub use drf::{DrfConfig, DrfSet, Signature};
pub use error::{Error, ErrorClass, Result};
pub use eval::metrics::MetricKind;
pub use hypernet::{GeneratedClassifier, HyperNetConfig, HyperNetwork};
pub use models::{Model, VariantKind};
pub use rng::Rng;
pub use text::{EmbeddingTable, Token};
pub use trainer::{TrainConfig, TrainLog};
