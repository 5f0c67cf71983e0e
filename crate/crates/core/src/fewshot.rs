//! Dynamic few-shot selection by TF-IDF cosine similarity.
//!
//! Tokens are lower-cased alphanumeric runs. Term frequency is the raw
//! count, `idf = ln((1 + N) / (1 + df)) + 1`, and vectors are L2
//! normalized, so similarity is a plain dot product.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub id: String,
    pub query: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FewShotError {
    #[error("few-shot corpus is empty")]
    EmptyCorpus,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("example {0:?} has an empty query")]
    EmptyQuery(String),
    #[error("duplicate example id {0:?}")]
    DuplicateId(String),
    #[error("malformed corpus: {0}")]
    Malformed(String),
}

/// The bundled 12-example corpus.
pub const BUNDLED_CORPUS: &str = include_str!("../assets/few_shot_examples.json");

/// Parses and validates a corpus document (a JSON array of `{id, query, response}`).
pub fn parse_corpus(json: &str) -> Result<Vec<FewShotExample>, FewShotError> {
    let corpus: Vec<FewShotExample> =
        serde_json::from_str(json).map_err(|e| FewShotError::Malformed(alloc::format!("{e}")))?;
    validate_corpus(&corpus)?;
    Ok(corpus)
}

pub fn validate_corpus(corpus: &[FewShotExample]) -> Result<(), FewShotError> {
    let mut seen = alloc::collections::BTreeSet::new();
    for ex in corpus {
        if ex.query.trim().is_empty() {
            return Err(FewShotError::EmptyQuery(ex.id.clone()));
        }
        if !seen.insert(ex.id.as_str()) {
            return Err(FewShotError::DuplicateId(ex.id.clone()));
        }
    }
    Ok(())
}

pub fn bundled_corpus() -> Vec<FewShotExample> {
    parse_corpus(BUNDLED_CORPUS).expect("bundled corpus is valid")
}

pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(|t| t.to_lowercase())
}

/// Sparse vector: (term index, weight), sorted by index.
pub type SparseVec = Vec<(usize, f64)>;

#[derive(Debug, Clone, PartialEq)]
pub struct TfidfModel {
    vocabulary: BTreeMap<String, usize>,
    idf: Vec<f64>,
    doc_vectors: Vec<SparseVec>,
}

fn normalize(mut v: SparseVec) -> SparseVec {
    let norm = libm::sqrt(v.iter().map(|(_, w)| w * w).sum::<f64>());
    if norm > 0.0 {
        v.iter_mut().for_each(|(_, w)| *w /= norm);
    }
    v
}

fn dot(a: &SparseVec, b: &SparseVec) -> f64 {
    let (mut i, mut j, mut s) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            core::cmp::Ordering::Less => i += 1,
            core::cmp::Ordering::Greater => j += 1,
            core::cmp::Ordering::Equal => {
                s += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    s
}

/// Scores are ranked on a 1e-12 grid so that mathematically equal scores
/// computed along different float paths still count as ties.
pub fn rank_key(score: f64) -> i64 {
    libm::round(score * 1e12) as i64
}

impl TfidfModel {
    /// Fits on the example queries.
    pub fn fit<S: AsRef<str>>(documents: &[S]) -> Self {
        let mut vocabulary = BTreeMap::new();
        let mut counts: Vec<BTreeMap<usize, f64>> = Vec::with_capacity(documents.len());
        for doc in documents {
            let mut tf = BTreeMap::new();
            for tok in tokenize(doc.as_ref()) {
                let next = vocabulary.len();
                let idx = *vocabulary.entry(tok).or_insert(next);
                *tf.entry(idx).or_insert(0.0) += 1.0;
            }
            counts.push(tf);
        }
        let n = documents.len() as f64;
        let mut df = alloc::vec![0usize; vocabulary.len()];
        for tf in &counts {
            for &idx in tf.keys() {
                df[idx] += 1;
            }
        }
        let idf: Vec<f64> = df.iter().map(|&d| libm::log((1.0 + n) / (1.0 + d as f64)) + 1.0).collect();
        let doc_vectors = counts
            .into_iter()
            .map(|tf| normalize(tf.into_iter().map(|(i, c)| (i, c * idf[i])).collect()))
            .collect();
        TfidfModel { vocabulary, idf, doc_vectors }
    }

    pub fn vocabulary(&self) -> &BTreeMap<String, usize> {
        &self.vocabulary
    }

    pub fn idf(&self) -> &[f64] {
        &self.idf
    }

    pub fn doc_vectors(&self) -> &[SparseVec] {
        &self.doc_vectors
    }

    /// Normalized vector for new text; unknown tokens are ignored.
    pub fn transform(&self, text: &str) -> SparseVec {
        let mut tf: BTreeMap<usize, f64> = BTreeMap::new();
        for tok in tokenize(text) {
            if let Some(&i) = self.vocabulary.get(&tok) {
                *tf.entry(i).or_insert(0.0) += 1.0;
            }
        }
        normalize(tf.into_iter().map(|(i, c)| (i, c * self.idf[i])).collect())
    }

    /// Cosine similarity of `query` against every fitted document.
    pub fn scores(&self, query: &str) -> Vec<f64> {
        let q = self.transform(query);
        self.doc_vectors.iter().map(|d| dot(&q, d)).collect()
    }

    /// Indices and scores of the top `k` documents, best first, ties by index.
    pub fn rank(&self, query: &str, k: usize) -> Vec<(usize, f64)> {
        let mut scored: Vec<(usize, f64)> = self.scores(query).into_iter().enumerate().collect();
        scored.sort_by(|a, b| rank_key(b.1).cmp(&rank_key(a.1)).then(a.0.cmp(&b.0)));
        scored.truncate(k);
        scored
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scored<'a> {
    pub example: &'a FewShotExample,
    pub index: usize,
    pub score: f64,
}

/// A corpus with its fitted model.
#[derive(Debug, Clone)]
pub struct FewShotSelector {
    corpus: Vec<FewShotExample>,
    model: TfidfModel,
}

impl FewShotSelector {
    pub fn new(corpus: Vec<FewShotExample>) -> Result<Self, FewShotError> {
        if corpus.is_empty() {
            return Err(FewShotError::EmptyCorpus);
        }
        validate_corpus(&corpus)?;
        let queries: Vec<&str> = corpus.iter().map(|e| e.query.as_str()).collect();
        let model = TfidfModel::fit(&queries);
        Ok(FewShotSelector { corpus, model })
    }

    pub fn corpus(&self) -> &[FewShotExample] {
        &self.corpus
    }

    pub fn model(&self) -> &TfidfModel {
        &self.model
    }

    pub fn select(&self, query: &str, k: usize) -> Result<Vec<Scored<'_>>, FewShotError> {
        if k == 0 {
            return Err(FewShotError::ZeroK);
        }
        Ok(self
            .model
            .rank(query, k)
            .into_iter()
            .map(|(index, score)| Scored { example: &self.corpus[index], index, score })
            .collect())
    }
}

/// One-shot convenience: fit on `corpus` and pick the `k` best examples.
pub fn select_few_shot(query: &str, corpus: &[FewShotExample], k: usize) -> Result<Vec<FewShotExample>, FewShotError> {
    let selector = FewShotSelector::new(corpus.to_vec())?;
    Ok(selector.select(query, k)?.into_iter().map(|s| s.example.clone()).collect())
}
