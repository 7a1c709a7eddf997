//! Latent-subset intrinsic probing and a family of statistical bias measures.
//!
//! The crate has two halves:
//!
//! - **Probing.** [`subset`] implements distributions over subsets of
//!   representation dimensions (Poisson and conditional Poisson sampling),
//!   [`probe`] the classifiers evaluated on masked representations,
//!   [`train`] the variational training loop that learns both jointly,
//!   [`select`] greedy dimension selection with mutual-information metrics,
//!   and [`overlap`] significance testing of overlaps between selected sets.
//! - **Bias measures.** [`association`] holds closed-form association
//!   statistics (PMI, WEAT, weighted JSD, interventional MI, ...),
//!   [`gendered`] a latent-sentiment word model, and [`fairness`]
//!   perplexity-based fairness scores.
//!
//! [`dataset`] owns the on-disk formats shared by both halves.
//!
//! All logarithms are natural unless a function says otherwise.

pub mod association;
pub mod dataset;
pub mod error;
pub mod fairness;
pub mod gendered;
pub mod math;
pub mod optim;
pub mod overlap;
pub mod probe;
pub mod rng;
pub mod select;
pub mod subset;
pub mod train;

pub use dataset::{ReprDataset, Split};
pub use error::{Error, Result};
pub use probe::{Arch, ProbeParams};
pub use subset::{FamilyKind, SubsetFamilyParams, SubsetSample};
pub use train::{TrainConfig, TrainedProbe};
