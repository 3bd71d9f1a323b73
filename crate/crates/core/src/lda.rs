//! Latent Dirichlet Allocation fitted by variational EM, one document per
//! system. The per-document variational Dirichlet parameter `gamma` is the
//! system's embedding.
//!
//! E-step, per document with word counts `c_w`:
//!
//! ```text
//! phi_wk  ∝ exp(digamma(gamma_k)) * beta_kw
//! gamma_k = alpha + sum_w c_w phi_wk
//! ```
//!
//! so `sum_k gamma_k = N + K * alpha` after every update. The M-step sets
//! `beta_kw ∝ sum_d c_dw phi_dwk + SMOOTHING`.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};
use crate::wording::EntityDocument;

/// Additive pseudo-count on every topic-word cell in the M-step.
pub const SMOOTHING: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LdaConfig {
    pub n_topics: usize,
    /// Symmetric document-topic prior; `None` means `1 / n_topics`.
    pub alpha: Option<f64>,
    pub seed: u64,
    pub max_em_iter: usize,
    /// Relative change of the objective that ends EM.
    pub em_tol: f64,
    pub estep_max_iter: usize,
    /// Mean absolute change of gamma that ends a document's E-step.
    pub estep_tol: f64,
}

impl LdaConfig {
    pub fn new(n_topics: usize, seed: u64) -> Self {
        Self {
            n_topics,
            alpha: None,
            seed,
            max_em_iter: 100,
            em_tol: 1e-6,
            estep_max_iter: 100,
            estep_tol: 1e-4,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(1.0 / self.n_topics as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LdaModel {
    pub n_topics: usize,
    pub n_words: usize,
    pub alpha: f64,
    /// `K x W` log-probabilities; each row exponentiates to a distribution.
    pub log_topic_word: Vec<Vec<f64>>,
    pub seed: u64,
    /// Variational objective after each E-step. It includes the log of the
    /// Dirichlet(1 + SMOOTHING) prior that the smoothed M-step maximizes, so
    /// EM cannot decrease it.
    pub elbo_trace: Vec<f64>,
}

impl LdaModel {
    pub fn new(log_topic_word: Vec<Vec<f64>>, alpha: f64, seed: u64) -> Result<Self> {
        let n_topics = log_topic_word.len();
        if n_topics < 2 {
            return Err(Error::invalid(format!("LDA needs K >= 2 topics, got {n_topics}")));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
        }
        let n_words = log_topic_word[0].len();
        for row in &log_topic_word {
            if row.len() != n_words {
                return Err(Error::DimensionMismatch {
                    expected: n_words,
                    got: row.len(),
                });
            }
            let total: f64 = row.iter().map(|l| l.exp()).sum();
            if (total - 1.0).abs() > 1e-8 {
                return Err(Error::invalid(format!("topic row sums to {total}, not 1")));
            }
        }
        Ok(Self {
            n_topics,
            n_words,
            alpha,
            log_topic_word,
            seed,
            elbo_trace: Vec::new(),
        })
    }
}

/// A system embedded as `Dir(gamma)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletEmbedding {
    pub system_id: String,
    pub gamma: Vec<f64>,
    /// Document size, i.e. the system's number of complete days.
    pub n_u: usize,
    pub converged: bool,
}

impl DirichletEmbedding {
    pub fn concentration(&self) -> f64 {
        self.gamma.iter().sum()
    }
}

struct DocState {
    /// `phi[j][k]` for the j-th distinct word of the document.
    phi: Vec<Vec<f64>>,
    converged: bool,
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Coordinate ascent on one document's `(phi, gamma)`, starting from the
/// given gamma. Ends on a gamma update, so `gamma` and the returned `phi`
/// are consistent.
fn e_step_doc(
    log_beta: &[Vec<f64>],
    alpha: f64,
    counts: &[(usize, usize)],
    gamma: &mut [f64],
    max_iter: usize,
    tol: f64,
) -> DocState {
    let k = gamma.len();
    if counts.is_empty() {
        gamma.iter_mut().for_each(|g| *g = alpha);
        return DocState {
            phi: Vec::new(),
            converged: true,
        };
    }
    let mut phi = vec![vec![0.0; k]; counts.len()];
    let mut log_phi = vec![0.0; k];
    let mut converged = false;
    for _ in 0..max_iter.max(1) {
        let dig: Vec<f64> = gamma.iter().map(|&g| digamma(g)).collect();
        let mut next = vec![alpha; k];
        for (row, &(w, c)) in phi.iter_mut().zip(counts) {
            for t in 0..k {
                log_phi[t] = dig[t] + log_beta[t][w];
            }
            let norm = log_sum_exp(&log_phi);
            for t in 0..k {
                row[t] = (log_phi[t] - norm).exp();
                next[t] += c as f64 * row[t];
            }
        }
        let change = gamma.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum::<f64>() / k as f64;
        gamma.copy_from_slice(&next);
        if change < tol {
            converged = true;
            break;
        }
    }
    DocState { phi, converged }
}

fn doc_elbo(log_beta: &[Vec<f64>], alpha: f64, counts: &[(usize, usize)], gamma: &[f64], phi: &[Vec<f64>]) -> f64 {
    let k = gamma.len();
    let g0: f64 = gamma.iter().sum();
    let dig0 = digamma(g0);
    let e_log_theta: Vec<f64> = gamma.iter().map(|&g| digamma(g) - dig0).collect();
    let mut elbo = ln_gamma(k as f64 * alpha) - k as f64 * ln_gamma(alpha);
    elbo += (alpha - 1.0) * e_log_theta.iter().sum::<f64>();
    for (row, &(w, c)) in phi.iter().zip(counts) {
        let mut term = 0.0;
        for t in 0..k {
            if row[t] > 0.0 {
                term += row[t] * (e_log_theta[t] + log_beta[t][w] - row[t].ln());
            }
        }
        elbo += c as f64 * term;
    }
    elbo -= ln_gamma(g0);
    for t in 0..k {
        elbo += ln_gamma(gamma[t]) - (gamma[t] - 1.0) * e_log_theta[t];
    }
    elbo
}

fn check_documents(documents: &[EntityDocument], n_words: usize) -> Result<()> {
    for d in documents {
        if let Some(&w) = d.words.iter().find(|&&w| w >= n_words) {
            return Err(Error::invalid(format!(
                "document {} has word {w} outside a vocabulary of {n_words}",
                d.system_id
            )));
        }
    }
    Ok(())
}

pub fn fit_lda(documents: &[EntityDocument], n_words: usize, cfg: &LdaConfig) -> Result<LdaModel> {
    let k = cfg.n_topics;
    let alpha = cfg.alpha();
    if k < 2 {
        return Err(Error::invalid(format!("LDA needs K >= 2 topics, got {k}")));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
    }
    if n_words == 0 {
        return Err(Error::invalid("vocabulary is empty"));
    }
    if documents.iter().all(|d| d.is_empty()) {
        return Err(Error::invalid("corpus has no words"));
    }
    check_documents(documents, n_words)?;

    let counts: Vec<Vec<(usize, usize)>> = documents.iter().map(|d| d.counts()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log_beta: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            let row: Vec<f64> = (0..n_words).map(|_| 1.0 / n_words as f64 + rng.random::<f64>()).collect();
            let total: f64 = row.iter().sum();
            row.into_iter().map(|v| (v / total).ln()).collect()
        })
        .collect();

    let mut gammas: Vec<Vec<f64>> = documents
        .iter()
        .map(|d| vec![alpha + d.len() as f64 / k as f64; k])
        .collect();
    let mut trace = Vec::new();

    for _ in 0..cfg.max_em_iter.max(1) {
        let states: Vec<(DocState, f64)> = gammas
            .par_iter_mut()
            .zip(counts.par_iter())
            .map(|(gamma, c)| {
                let state = e_step_doc(&log_beta, alpha, c, gamma, cfg.estep_max_iter, cfg.estep_tol);
                let elbo = doc_elbo(&log_beta, alpha, c, gamma, &state.phi);
                (state, elbo)
            })
            .collect();

        let prior: f64 = SMOOTHING * log_beta.iter().flatten().sum::<f64>();
        let objective = states.iter().map(|(_, e)| e).sum::<f64>() + prior;
        let prev = trace.last().copied();
        trace.push(objective);

        let mut expected = vec![vec![SMOOTHING; n_words]; k];
        for ((state, _), c) in states.iter().zip(&counts) {
            for (row, &(w, n)) in state.phi.iter().zip(c) {
                for t in 0..k {
                    expected[t][w] += n as f64 * row[t];
                }
            }
        }
        for (lb, ex) in log_beta.iter_mut().zip(expected) {
            let total: f64 = ex.iter().sum();
            for (l, e) in lb.iter_mut().zip(ex) {
                *l = (e / total).ln();
            }
        }

        if let Some(prev) = prev
            && ((objective - prev) / prev.abs().max(f64::MIN_POSITIVE)).abs() < cfg.em_tol
        {
            break;
        }
    }

    Ok(LdaModel {
        n_topics: k,
        n_words,
        alpha,
        log_topic_word: log_beta,
        seed: cfg.seed,
        elbo_trace: trace,
    })
}

/// Variational gamma for one document under a fixed model, started from
/// `alpha + N / K`. A document that hits the iteration cap still returns its
/// last iterate, with `converged == false`.
pub fn infer_gamma(model: &LdaModel, document: &EntityDocument, tol: f64, max_iter: usize) -> Result<DirichletEmbedding> {
    check_documents(std::slice::from_ref(document), model.n_words)?;
    let k = model.n_topics;
    let mut gamma = vec![model.alpha + document.len() as f64 / k as f64; k];
    let state = e_step_doc(
        &model.log_topic_word,
        model.alpha,
        &document.counts(),
        &mut gamma,
        max_iter,
        tol,
    );
    Ok(DirichletEmbedding {
        system_id: document.system_id.clone(),
        gamma,
        n_u: document.len(),
        converged: state.converged,
    })
}

/// Embeds every document with the E-step defaults of `cfg`.
pub fn embed_documents(model: &LdaModel, documents: &[EntityDocument], cfg: &LdaConfig) -> Result<Vec<DirichletEmbedding>> {
    documents
        .par_iter()
        .map(|d| infer_gamma(model, d, cfg.estep_tol, cfg.estep_max_iter))
        .collect()
}

/// Per-component variance of `Dir(gamma)`.
pub fn dirichlet_variance(gamma: &[f64]) -> Result<Vec<f64>> {
    if gamma.is_empty() || gamma.iter().any(|&g| !(g > 0.0 && g.is_finite())) {
        return Err(Error::invalid("Dirichlet concentrations must be positive and finite"));
    }
    let g0: f64 = gamma.iter().sum();
    Ok(gamma.iter().map(|&g| g * (g0 - g) / (g0 * g0 * (g0 + 1.0))).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, words: Vec<usize>) -> EntityDocument {
        EntityDocument {
            system_id: id.into(),
            words,
        }
    }

    fn uniform_model(k: usize, w: usize, alpha: f64) -> LdaModel {
        LdaModel::new(vec![vec![-(w as f64).ln(); w]; k], alpha, 0).unwrap()
    }

    #[test]
    fn empty_document_gets_the_prior() {
        let model = uniform_model(3, 4, 0.2);
        let e = infer_gamma(&model, &doc("a", vec![]), 1e-4, 100).unwrap();
        assert_eq!(e.gamma, vec![0.2; 3]);
        assert_eq!(e.n_u, 0);
    }

    #[test]
    fn gamma_sum_is_size_plus_k_alpha() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let log_beta: Vec<Vec<f64>> = (0..3)
            .map(|_| {
                let r: Vec<f64> = (0..6).map(|_| rng.random::<f64>() + 0.01).collect();
                let s: f64 = r.iter().sum();
                r.into_iter().map(|v| (v / s).ln()).collect()
            })
            .collect();
        let model = LdaModel::new(log_beta, 1.0 / 3.0, 0).unwrap();
        let e = infer_gamma(&model, &doc("a", vec![0, 1, 1, 5, 2, 2, 2]), 1e-4, 100).unwrap();
        assert!((e.concentration() - 8.0).abs() < 1e-6);
    }

    #[test]
    fn identical_documents_identical_gamma() {
        let docs = vec![doc("a", vec![0, 1, 1, 2]), doc("b", vec![2, 2, 3]), doc("c", vec![0, 1, 1, 2])];
        let cfg = LdaConfig::new(2, 5);
        let model = fit_lda(&docs, 4, &cfg).unwrap();
        let emb = embed_documents(&model, &docs, &cfg).unwrap();
        assert_eq!(emb[0].gamma, emb[2].gamma);
    }

    #[test]
    fn fit_is_deterministic() {
        let docs: Vec<_> = (0..8).map(|d| doc(&format!("d{d}"), (0..20).map(|i| (i * (d + 1)) % 7).collect())).collect();
        let cfg = LdaConfig::new(3, 17);
        let a = fit_lda(&docs, 7, &cfg).unwrap();
        let b = fit_lda(&docs, 7, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(embed_documents(&a, &docs, &cfg).unwrap(), embed_documents(&b, &docs, &cfg).unwrap());
    }

    #[test]
    fn topic_rows_are_distributions() {
        let docs: Vec<_> = (0..6).map(|d| doc(&format!("d{d}"), (0..15).map(|i| (i + d) % 5).collect())).collect();
        let model = fit_lda(&docs, 5, &LdaConfig::new(4, 1)).unwrap();
        for row in &model.log_topic_word {
            assert!((row.iter().map(|l| l.exp()).sum::<f64>() - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn single_word_corpus_puts_every_topic_on_that_word() {
        let docs: Vec<_> = (0..5).map(|d| doc(&format!("d{d}"), vec![2; 3 + d])).collect();
        for k in [2, 3, 5] {
            let model = fit_lda(&docs, 4, &LdaConfig::new(k, 3)).unwrap();
            for row in &model.log_topic_word {
                // exhaustive: the observed word beats every other word in every topic
                for (w, &l) in row.iter().enumerate() {
                    if w != 2 {
                        assert!(row[2] >= l);
                    }
                }
            }
        }
    }

    #[test]
    fn rejects_bad_corpora() {
        assert!(fit_lda(&[doc("a", vec![])], 3, &LdaConfig::new(2, 0)).is_err());
        assert!(fit_lda(&[], 3, &LdaConfig::new(2, 0)).is_err());
        assert!(fit_lda(&[doc("a", vec![3])], 3, &LdaConfig::new(2, 0)).is_err());
        assert!(fit_lda(&[doc("a", vec![1])], 3, &LdaConfig::new(1, 0)).is_err());
        let mut cfg = LdaConfig::new(2, 0);
        cfg.alpha = Some(0.0);
        assert!(fit_lda(&[doc("a", vec![1])], 3, &cfg).is_err());
    }

    #[test]
    fn variance_of_flat_beta() {
        let v = dirichlet_variance(&[1.0, 1.0]).unwrap();
        assert!((v[0] - 1.0 / 12.0).abs() < 1e-15 && (v[1] - 1.0 / 12.0).abs() < 1e-15);
        let v = dirichlet_variance(&[2.0, 2.0]).unwrap();
        assert!((v[0] - 0.05).abs() < 1e-15);
    }

    #[test]
    fn doubling_concentration_shrinks_variance() {
        let a = dirichlet_variance(&[1.5; 4]).unwrap();
        let b = dirichlet_variance(&[3.0; 4]).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| y < x));
        assert!(dirichlet_variance(&[1.0, 0.0]).is_err());
    }
}
