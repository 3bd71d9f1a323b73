//! Probabilistic entity-embedding clustering for fleets of PV systems.
//!
//! The pipeline maps each system's gap-ridden power series to a Dirichlet
//! distribution over latent topics, clusters the distributions by a
//! statistical distance, and scores the clusters with quantile summaries:
//!
//! 1. [`ingest`]: load, normalize, and cut series into complete daily profiles.
//! 2. [`wording`]: k-means vocabulary over pooled profiles, one word per day.
//! 3. [`lda`]: variational LDA, one document per system, emitting `gamma`.
//! 4. [`distance`]: closed-form symmetric KL / Bhattacharyya between Dirichlets.
//! 5. [`agglomerative`]: average / complete linkage on the distance matrix.
//! 6. [`evaluation`]: quantile summaries, dispersion and leave-one-out sensitivity.
//! 7. [`grid`]: hyperparameter sweeps and selection of the cluster count.
//!
//! [`synth`] generates seeded synthetic fleets with known groups and
//! [`io`] holds the CSV formats shared with the command-line tool.

pub mod agglomerative;
pub mod distance;
pub mod error;
pub mod evaluation;
pub mod grid;
pub mod ingest;
pub mod io;
pub mod kmeans;
pub mod lda;
pub mod pipeline;
pub mod synth;
pub mod wording;

pub use error::{Error, Result};

/// Quantile levels used for cluster summaries unless configured otherwise.
pub const DEFAULT_QUANTILE_LEVELS: [f64; 9] = [0.05, 0.10, 0.25, 0.40, 0.50, 0.60, 0.75, 0.90, 0.95];
