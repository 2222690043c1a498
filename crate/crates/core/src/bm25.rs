//! In-memory BM25 first-stage retriever.
//!
//! Tokenization lowercases (Unicode) and splits on every non-alphanumeric codepoint. There is
//! no stemming and no stopword list. Scoring uses the non-negative Lucene idf
//! `ln(1 + (N - df + 0.5) / (df + 0.5))`. Repeated query terms contribute once per occurrence.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Candidate, Corpus, PassageId, Query, RankedList};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 0.9, b: 0.4 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<()> {
        if !(self.k1 >= 0.0 && self.k1.is_finite()) {
            return Err(Error::Param(format!("k1 must be >= 0, got {}", self.k1)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(Error::Param(format!("b must be in [0, 1], got {}", self.b)));
        }
        Ok(())
    }
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Posting: (document ordinal, term frequency).
type Postings = Vec<(u32, u32)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bm25Index {
    params: Bm25Params,
    doc_ids: Vec<PassageId>,
    doc_lens: Vec<u32>,
    avgdl: f64,
    postings: BTreeMap<String, Postings>,
}

impl Bm25Index {
    /// Builds the index. Documents are numbered in ascending id order.
    pub fn build(corpus: &Corpus, params: Bm25Params) -> Result<Self> {
        params.validate()?;
        let mut doc_ids = Vec::with_capacity(corpus.len());
        let mut doc_lens = Vec::with_capacity(corpus.len());
        let mut postings: BTreeMap<String, Postings> = BTreeMap::new();
        for (ordinal, (id, passage)) in corpus.iter().enumerate() {
            let tokens = tokenize(&passage.text);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in &tokens {
                *tf.entry(t.clone()).or_default() += 1;
            }
            for (term, freq) in tf {
                postings.entry(term).or_default().push((ordinal as u32, freq));
            }
            doc_ids.push(id.clone());
            doc_lens.push(tokens.len() as u32);
        }
        let total: u64 = doc_lens.iter().map(|&l| u64::from(l)).sum();
        let avgdl = if doc_ids.is_empty() {
            0.0
        } else {
            total as f64 / doc_ids.len() as f64
        };
        Ok(Self {
            params,
            doc_ids,
            doc_lens,
            avgdl,
            postings,
        })
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn num_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn doc_len(&self, id: &PassageId) -> Option<u32> {
        let pos = self.doc_ids.binary_search(id).ok()?;
        Some(self.doc_lens[pos])
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    /// Term frequency of `term` in `id`, or 0.
    pub fn term_freq(&self, term: &str, id: &PassageId) -> u32 {
        let Ok(ordinal) = self.doc_ids.binary_search(id) else {
            return 0;
        };
        self.postings
            .get(term)
            .and_then(|p| {
                p.binary_search_by_key(&(ordinal as u32), |&(d, _)| d)
                    .ok()
                    .map(|i| p[i].1)
            })
            .unwrap_or(0)
    }

    fn idf(&self, df: usize) -> f64 {
        let n = self.doc_ids.len() as f64;
        let df = df as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Top-`k` documents with positive score, ties broken by ascending docid.
    pub fn search(&self, query: &Query, k: usize) -> Result<RankedList> {
        if k == 0 {
            return Err(Error::Param("search depth k must be >= 1".into()));
        }
        let Bm25Params { k1, b } = self.params;
        let mut scores = vec![0.0f64; self.doc_ids.len()];
        let mut touched = vec![false; self.doc_ids.len()];
        for term in tokenize(&query.text) {
            let Some(postings) = self.postings.get(&term) else {
                continue;
            };
            let idf = self.idf(postings.len());
            for &(doc, tf) in postings {
                let d = doc as usize;
                let tf = f64::from(tf);
                let dl = f64::from(self.doc_lens[d]);
                scores[d] += idf * (tf * (k1 + 1.0)) / (tf + k1 * (1.0 - b + b * dl / self.avgdl));
                touched[d] = true;
            }
        }
        let mut hits: Vec<(usize, f64)> = scores
            .into_iter()
            .enumerate()
            .filter(|&(d, s)| touched[d] && s > 0.0)
            .collect();
        hits.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| self.doc_ids[a.0].cmp(&self.doc_ids[b.0]))
        });
        hits.truncate(k);
        let entries = hits
            .into_iter()
            .enumerate()
            .map(|(i, (d, s))| Candidate::new(self.doc_ids[d].clone(), s, i + 1))
            .collect();
        Ok(RankedList::new(query.id.clone(), entries))
    }
}
