//! The embedding chain (series, complete profiles, documents, gamma) and
//! the clustering step, wired together with the same settings the CLI and
//! grid search use.

use crate::agglomerative::{self, ClusterAssignment, Linkage};
use crate::distance::{self, DistanceMatrix, Metric};
use crate::error::{Error, Result};
use crate::ingest::{self, CapacitySource, ProfileBuild, RawSeriesTable, SystemMetadata};
use crate::lda::{self, DirichletEmbedding, LdaConfig, LdaModel};
use crate::wording::{self, EntityDocument, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbedSettings {
    pub n_words: usize,
    pub n_topics: usize,
    pub alpha: Option<f64>,
    pub seed: u64,
    pub kmeans_max_iter: usize,
    pub kmeans_tol: f64,
}

impl EmbedSettings {
    pub fn new(n_words: usize, n_topics: usize, seed: u64) -> Self {
        Self {
            n_words,
            n_topics,
            alpha: None,
            seed,
            kmeans_max_iter: 300,
            kmeans_tol: 1e-6,
        }
    }

    pub fn lda_config(&self) -> LdaConfig {
        LdaConfig {
            alpha: self.alpha,
            ..LdaConfig::new(self.n_topics, self.seed)
        }
    }
}

/// Normalized table and its complete daily profiles.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub normalized: RawSeriesTable,
    pub profiles: ProfileBuild,
}

impl Prepared {
    /// Normalized series restricted to the systems that can be embedded.
    pub fn embedded_table(&self) -> Result<RawSeriesTable> {
        let ids: Vec<String> = self.profiles.usable().map(|s| s.system_id.clone()).collect();
        self.normalized.select(&ids)
    }
}

pub fn prepare(
    table: &RawSeriesTable,
    meta: &[SystemMetadata],
    capacity: CapacitySource,
    profile_len: usize,
) -> Result<Prepared> {
    let normalized = ingest::normalize_by_capacity(table, meta, capacity)?;
    let profiles = ingest::build_profiles(&normalized, profile_len)?;
    if profiles.usable().count() < 2 {
        return Err(Error::invalid("fewer than two systems have a complete day"));
    }
    Ok(Prepared { normalized, profiles })
}

pub fn build_vocabulary(profiles: &ProfileBuild, settings: &EmbedSettings) -> Result<Vocabulary> {
    wording::fit_vocabulary(
        &profiles.pooled(),
        settings.n_words,
        settings.seed,
        settings.kmeans_max_iter,
        settings.kmeans_tol,
    )
}

pub fn documents(profiles: &ProfileBuild, vocab: &Vocabulary) -> Result<Vec<EntityDocument>> {
    profiles.usable().map(|s| wording::assign_words(vocab, s)).collect()
}

#[derive(Debug, Clone)]
pub struct Embedding {
    pub documents: Vec<EntityDocument>,
    pub model: LdaModel,
    pub embeddings: Vec<DirichletEmbedding>,
}

pub fn embed_with_vocabulary(profiles: &ProfileBuild, vocab: &Vocabulary, settings: &EmbedSettings) -> Result<Embedding> {
    let documents = documents(profiles, vocab)?;
    let cfg = settings.lda_config();
    let model = lda::fit_lda(&documents, vocab.n_words(), &cfg)?;
    let embeddings = lda::embed_documents(&model, &documents, &cfg)?;
    Ok(Embedding {
        documents,
        model,
        embeddings,
    })
}

pub fn cluster(
    embeddings: &[DirichletEmbedding],
    metric: Metric,
    linkage: Linkage,
    n_clusters: usize,
) -> Result<(DistanceMatrix, ClusterAssignment)> {
    let dist = distance::build_distance_matrix(embeddings, metric)?;
    let assignment = agglomerative::agglomerate(&dist, n_clusters, linkage)?;
    Ok((dist, assignment))
}
