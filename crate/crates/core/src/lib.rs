//! Feature-space domain adaptation.
//!
//! Backbone features for several labeled source domains and one target domain
//! arrive as binary feature tables. From there the crate runs two self-training
//! pipelines:
//!
//! * **multi-source**: source-only classifiers per backbone seed an ensemble of
//!   pseudo labels, then end-to-end adaptation rounds (per-backbone classifiers
//!   trained with cross entropy on sources and generalized cross entropy on
//!   pseudo-labeled target rows) alternate with feature-fusion rounds (a bank of
//!   classifiers over single backbones and every bilinear-pooled backbone pair).
//! * **semi-supervised**: a handful of labeled target rows are oversampled into
//!   pre-training, adaptation rounds repeat, and per-backbone prototype
//!   classifiers join the final ensemble.
//!
//! Everything is deterministic given a seed, including when classifiers of one
//! round train in parallel.

pub mod binio;
pub mod error;
pub mod feature_store;
pub mod fusion;
pub mod linear_model;
pub mod metrics;
pub mod parallel;
pub mod pipeline;
pub mod prototype;
pub mod pseudo;
pub mod synthgen;

pub use error::{Error, Result};
pub use feature_store::{DatasetManifest, DomainEntry, DomainRole, FeatureStore, FeatureTable, UNLABELED};
pub use fusion::{bilinear_fuse, enumerate_pairs, fuse_tables, FusionConfig, InputSpec};
pub use linear_model::{
    ce_loss, gce_loss, mixed_loss_grad, predict_proba, softmax, train_classifier, Batch, Gradients, LinearClassifier,
    PseudoLoss, SampleKind, TrainConfig, TrainingSet,
};
pub use metrics::{evaluate, EvalResult};
pub use pipeline::{Experiment, Mode, PipelineConfig, RoundReport, Stage};
pub use prototype::{build_prototypes, PrototypeSet};
pub use pseudo::{ensemble_average, pseudo_label_shift, to_pseudo_labels, PseudoLabelSet};
