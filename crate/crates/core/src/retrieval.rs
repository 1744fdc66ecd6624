//! Demonstration retrieval: Okapi BM25 over stored source sentences, with an
//! optional rerank of the top candidates by n-gram recall of the query.
//!
//! The recall score of a candidate `c` for a query `s` is the geometric mean,
//! over orders `i = 1..=n`, of the fraction of the query's `i`-grams that the
//! candidate covers (clipped multiset intersection). Orders longer than the
//! query are skipped; any included order with no overlap makes the score 0.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::text::{ngrams, tokenize};

/// Okapi BM25 free parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum RetrievalMethod {
    Bm25,
    #[default]
    Bm25Rerank,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct RetrievalConfig {
    pub method: RetrievalMethod,
    /// BM25 candidate pool size before reranking.
    pub pool: usize,
    /// Highest n-gram order used by the rerank score.
    pub ngram: usize,
    /// Number of demonstrations returned.
    pub shots: usize,
    pub bm25: Bm25Params,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            method: RetrievalMethod::Bm25Rerank,
            pool: 200,
            ngram: 4,
            shots: 3,
            bm25: Bm25Params::default(),
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        if self.shots == 0 || self.pool == 0 || self.ngram == 0 || self.shots > self.pool {
            return Err(RetrievalError::InvalidConfig {
                pool: self.pool,
                ngram: self.ngram,
                shots: self.shots,
            });
        }
        Ok(())
    }
}

/// A retrieved demonstration id with its scores.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ScoredDemo {
    pub id: String,
    pub bm25: f64,
    /// Present only when the rerank method was used.
    pub rerank: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RetrievalError {
    DuplicateId(String),
    UnknownDocument(String),
    EmptyQuery,
    ZeroOrder,
    InvalidConfig {
        pool: usize,
        ngram: usize,
        shots: usize,
    },
}

impl fmt::Display for RetrievalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RetrievalError::DuplicateId(id) => write!(f, "duplicate document id {id:?}"),
            RetrievalError::UnknownDocument(id) => write!(f, "unknown document id {id:?}"),
            RetrievalError::EmptyQuery => f.write_str("query has no tokens"),
            RetrievalError::ZeroOrder => f.write_str("n-gram order must be positive"),
            RetrievalError::InvalidConfig { pool, ngram, shots } => write!(
                f,
                "invalid retrieval config: pool={pool} ngram={ngram} shots={shots} \
                 (need all positive and shots <= pool)"
            ),
        }
    }
}

impl core::error::Error for RetrievalError {}

#[derive(Debug, Clone)]
struct Document {
    id: String,
    tokens: Vec<String>,
    term_freq: BTreeMap<String, u32>,
}

/// Immutable BM25 index over lowercase-tokenized source sentences.
#[derive(Debug, Clone)]
pub struct RetrievalIndex {
    params: Bm25Params,
    docs: Vec<Document>,
    by_id: BTreeMap<String, usize>,
    /// term -> (document position, term frequency)
    postings: BTreeMap<String, Vec<(usize, u32)>>,
    avg_len: f64,
}

impl RetrievalIndex {
    /// Builds an index with the default BM25 parameters.
    pub fn build<I, S, T>(sources: I) -> Result<Self, RetrievalError>
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: AsRef<str>,
    {
        Self::build_with(sources, Bm25Params::default())
    }

    pub fn build_with<I, S, T>(sources: I, params: Bm25Params) -> Result<Self, RetrievalError>
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: AsRef<str>,
    {
        let mut docs = Vec::new();
        let mut by_id = BTreeMap::new();
        let mut postings: BTreeMap<String, Vec<(usize, u32)>> = BTreeMap::new();
        let mut total_len = 0usize;
        for (id, text) in sources {
            let id: String = id.into();
            let position = docs.len();
            if by_id.insert(id.clone(), position).is_some() {
                return Err(RetrievalError::DuplicateId(id));
            }
            let tokens = tokenize(text.as_ref(), true).into_inner();
            let mut term_freq: BTreeMap<String, u32> = BTreeMap::new();
            for token in &tokens {
                *term_freq.entry(token.clone()).or_insert(0) += 1;
            }
            for (term, &tf) in &term_freq {
                postings
                    .entry(term.clone())
                    .or_default()
                    .push((position, tf));
            }
            total_len += tokens.len();
            docs.push(Document {
                id,
                tokens,
                term_freq,
            });
        }
        let avg_len = if docs.is_empty() {
            0.0
        } else {
            total_len as f64 / docs.len() as f64
        };
        Ok(Self {
            params,
            docs,
            by_id,
            postings,
            avg_len,
        })
    }

    pub fn doc_count(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    /// Number of documents containing `term` (already lowercased).
    pub fn document_frequency(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.avg_len
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    /// Tokens of a stored document.
    pub fn doc_tokens(&self, id: &str) -> Option<&[String]> {
        self.by_id.get(id).map(|&p| self.docs[p].tokens.as_slice())
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.docs.iter().map(|d| d.id.as_str())
    }

    fn idf(&self, df: usize) -> f64 {
        let n = self.docs.len() as f64;
        let df = df as f64;
        libm::log((n - df + 0.5) / (df + 0.5) + 1.0)
    }

    fn term_weight(&self, tf: u32, doc_len: usize) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let tf = f64::from(tf);
        let rel_len = if self.avg_len > 0.0 {
            doc_len as f64 / self.avg_len
        } else {
            1.0
        };
        tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * rel_len))
    }

    /// BM25 score of one document for an already-tokenized query. Each query
    /// token occurrence contributes; terms absent from the document add 0.
    pub fn bm25_score(&self, query: &[String], doc_id: &str) -> Result<f64, RetrievalError> {
        let &position = self
            .by_id
            .get(doc_id)
            .ok_or_else(|| RetrievalError::UnknownDocument(String::from(doc_id)))?;
        let doc = &self.docs[position];
        let mut score = 0.0;
        for term in query {
            if let Some(&tf) = doc.term_freq.get(term) {
                score += self.idf(self.document_frequency(term))
                    * self.term_weight(tf, doc.tokens.len());
            }
        }
        Ok(score)
    }

    /// Scores every document sharing at least one term with the query.
    fn score_candidates(&self, query: &[String]) -> Vec<(usize, f64)> {
        let mut scores: BTreeMap<usize, f64> = BTreeMap::new();
        for term in query {
            let Some(list) = self.postings.get(term) else {
                continue;
            };
            let idf = self.idf(list.len());
            for &(position, tf) in list {
                *scores.entry(position).or_insert(0.0) +=
                    idf * self.term_weight(tf, self.docs[position].tokens.len());
            }
        }
        scores.into_iter().collect()
    }

    /// Top demonstrations for `query_text`, best first.
    ///
    /// With [`RetrievalMethod::Bm25Rerank`] the best `pool` documents by BM25
    /// are rescored with [`recall_score`]; ties fall back to the BM25 score and
    /// then to the smaller id.
    pub fn retrieve(
        &self,
        query_text: &str,
        config: &RetrievalConfig,
    ) -> Result<Vec<ScoredDemo>, RetrievalError> {
        config.validate()?;
        let query = tokenize(query_text, true);
        if query.is_empty() {
            return Ok(Vec::new());
        }
        let mut candidates = self.score_candidates(&query);
        candidates.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| self.docs[a.0].id.cmp(&self.docs[b.0].id))
        });

        let demos = match config.method {
            RetrievalMethod::Bm25 => candidates
                .into_iter()
                .take(config.shots)
                .map(|(p, bm25)| ScoredDemo {
                    id: self.docs[p].id.clone(),
                    bm25,
                    rerank: None,
                })
                .collect(),
            RetrievalMethod::Bm25Rerank => {
                candidates.truncate(config.pool);
                let mut rescored = Vec::with_capacity(candidates.len());
                for (p, bm25) in candidates {
                    let recall = recall_score(&query, &self.docs[p].tokens, config.ngram)?;
                    rescored.push((p, bm25, recall));
                }
                rescored.sort_by(|a, b| {
                    b.2.total_cmp(&a.2)
                        .then_with(|| b.1.total_cmp(&a.1))
                        .then_with(|| self.docs[a.0].id.cmp(&self.docs[b.0].id))
                });
                rescored
                    .into_iter()
                    .take(config.shots)
                    .map(|(p, bm25, recall)| ScoredDemo {
                        id: self.docs[p].id.clone(),
                        bm25,
                        rerank: Some(recall),
                    })
                    .collect()
            }
        };
        Ok(demos)
    }
}

/// n-gram recall of query `s` by candidate `c`, in `[0, 1]`.
pub fn recall_score(s: &[String], c: &[String], n: usize) -> Result<f64, RetrievalError> {
    if n == 0 {
        return Err(RetrievalError::ZeroOrder);
    }
    if s.is_empty() {
        return Err(RetrievalError::EmptyQuery);
    }
    let mut log_sum = 0.0;
    let mut orders = 0usize;
    for order in 1..=n.min(s.len()) {
        let query_grams = ngrams(s, order).map_err(|_| RetrievalError::ZeroOrder)?;
        let cand_grams = ngrams(c, order).map_err(|_| RetrievalError::ZeroOrder)?;
        let overlap = query_grams.clipped_overlap(&cand_grams);
        if overlap == 0 {
            return Ok(0.0);
        }
        log_sum += libm::log(overlap as f64 / query_grams.total() as f64);
        orders += 1;
    }
    Ok(libm::exp(log_sum / orders as f64))
}
