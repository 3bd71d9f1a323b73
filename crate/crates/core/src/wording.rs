//! Daily profiles to words: a k-means vocabulary over the pooled profiles,
//! and one bag-of-words document per system.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::ingest::EntityProfileSet;
use crate::kmeans::{self, KMeansConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    /// `W` rows, one per word, each `profile_len` wide.
    pub centroids: Vec<Vec<f64>>,
    pub seed: u64,
    pub inertia: f64,
}

impl Vocabulary {
    pub fn new(centroids: Vec<Vec<f64>>, seed: u64, inertia: f64) -> Result<Self> {
        if centroids.len() < 2 {
            return Err(Error::invalid(format!("vocabulary needs W >= 2 words, got {}", centroids.len())));
        }
        let width = centroids[0].len();
        if let Some(c) = centroids.iter().find(|c| c.len() != width) {
            return Err(Error::DimensionMismatch {
                expected: width,
                got: c.len(),
            });
        }
        if centroids.iter().flatten().any(|v| !v.is_finite()) || inertia.is_nan() || inertia < 0.0 {
            return Err(Error::invalid("vocabulary centroids and inertia must be finite"));
        }
        Ok(Self {
            centroids,
            seed,
            inertia,
        })
    }

    pub fn n_words(&self) -> usize {
        self.centroids.len()
    }

    pub fn width(&self) -> usize {
        self.centroids[0].len()
    }
}

/// Bag of word indices for one system, one word per complete day.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityDocument {
    pub system_id: String,
    pub words: Vec<usize>,
}

impl EntityDocument {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// `(word, count)` pairs in increasing word order.
    pub fn counts(&self) -> Vec<(usize, usize)> {
        let mut map = BTreeMap::new();
        for &w in &self.words {
            *map.entry(w).or_insert(0) += 1;
        }
        map.into_iter().collect()
    }
}

pub fn fit_vocabulary(pooled: &[Vec<f64>], n_words: usize, seed: u64, max_iter: usize, tol: f64) -> Result<Vocabulary> {
    if pooled.is_empty() {
        return Err(Error::invalid("no complete profiles to build a vocabulary from"));
    }
    if n_words < 2 {
        return Err(Error::invalid(format!("vocabulary needs W >= 2 words, got {n_words}")));
    }
    if pooled.len() < n_words {
        return Err(Error::invalid(format!(
            "only {} pooled profiles for W = {n_words} words",
            pooled.len()
        )));
    }
    let fit = kmeans::fit(
        pooled,
        &KMeansConfig {
            k: n_words,
            seed,
            max_iter,
            tol,
        },
    )?;
    Vocabulary::new(fit.centroids, seed, fit.inertia)
}

pub fn assign_words(vocab: &Vocabulary, profiles: &EntityProfileSet) -> Result<EntityDocument> {
    let mut words = Vec::with_capacity(profiles.n_complete());
    for p in &profiles.profiles {
        if p.len() != vocab.width() {
            return Err(Error::DimensionMismatch {
                expected: vocab.width(),
                got: p.len(),
            });
        }
        words.push(kmeans::nearest(&vocab.centroids, p).0);
    }
    Ok(EntityDocument {
        system_id: profiles.system_id.clone(),
        words,
    })
}
