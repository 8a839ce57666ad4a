//! Okapi BM25 retrieval over an in-memory inverted index.
//!
//! Scores use the smoothed IDF `ln(1 + (N - df + 0.5) / (df + 0.5))` and the
//! usual saturation term `tf (k1 + 1) / (tf + k1 (1 - b + b len / avglen))`.
//! Every occurrence of a term in the query contributes separately.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hashing;
use crate::par;

mod tokenize;

pub use tokenize::{tokenize, TokenizerConfig, TokenizerMode};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<()> {
        if !self.k1.is_finite() || self.k1 < 0.0 {
            return Err(Error::Config(format!("bm25.k1 must be >= 0, got {}", self.k1)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(Error::Config(format!("bm25.b must be in [0, 1], got {}", self.b)));
        }
        Ok(())
    }

    pub fn idf(&self, doc_count: usize, doc_freq: usize) -> f64 {
        let n = doc_count as f64;
        let df = doc_freq as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Saturated, length-normalized term frequency.
    pub fn tf_weight(&self, tf: f64, doc_len: f64, avg_doc_len: f64) -> f64 {
        let rel_len = if avg_doc_len > 0.0 {
            doc_len / avg_doc_len
        } else {
            1.0
        };
        tf * (self.k1 + 1.0) / (tf + self.k1 * (1.0 - self.b + self.b * rel_len))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub doc_id: String,
    pub score: f64,
}

/// Ranking order: higher score first, then ascending doc id.
pub fn rank_order(a_score: f64, a_id: &str, b_score: f64, b_id: &str) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_id.cmp(b_id))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Index {
    /// Content hash of (corpus, tokenizer, params).
    pub key: String,
    pub params: Bm25Params,
    pub tokenizer: TokenizerConfig,
    doc_ids: Vec<String>,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
    /// Posting lists are sorted by document position.
    postings: BTreeMap<String, Vec<Posting>>,
    #[serde(skip)]
    positions: HashMap<String, u32>,
}

/// Content key identifying an index built from `docs` with the given
/// settings.
pub fn index_key(docs: &[(String, String)], params: &Bm25Params, tokenizer: &TokenizerConfig) -> String {
    let settings = serde_json::to_string(&(tokenizer, params)).expect("settings serialize");
    let fields = std::iter::once(settings.as_bytes())
        .chain(docs.iter().flat_map(|(id, text)| [id.as_bytes(), text.as_bytes()]));
    hashing::digest_fields(fields)
}

pub fn build_index(docs: &[(String, String)], params: Bm25Params, tokenizer: TokenizerConfig) -> Result<Index> {
    params.validate()?;
    tokenizer.validate()?;

    let mut positions = HashMap::with_capacity(docs.len());
    for (i, (id, _)) in docs.iter().enumerate() {
        if positions.insert(id.clone(), i as u32).is_some() {
            return Err(Error::Invalid(format!("duplicate document id `{id}`")));
        }
    }

    let tokenized = par::map(docs, |(_, text)| tokenize(text, &tokenizer));

    let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
    let mut doc_lengths = Vec::with_capacity(docs.len());
    for (doc, tokens) in tokenized.into_iter().enumerate() {
        doc_lengths.push(tokens.len() as u32);
        let mut tf: BTreeMap<String, u32> = BTreeMap::new();
        for token in tokens {
            *tf.entry(token).or_default() += 1;
        }
        for (term, count) in tf {
            postings.entry(term).or_default().push(Posting {
                doc: doc as u32,
                tf: count,
            });
        }
    }

    let avg_doc_length = if doc_lengths.is_empty() {
        0.0
    } else {
        doc_lengths.iter().map(|&l| l as f64).sum::<f64>() / doc_lengths.len() as f64
    };

    Ok(Index {
        key: index_key(docs, &params, &tokenizer),
        params,
        tokenizer,
        doc_ids: docs.iter().map(|(id, _)| id.clone()).collect(),
        doc_lengths,
        avg_doc_length,
        postings,
        positions,
    })
}

impl Index {
    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn doc_length(&self, doc_id: &str) -> Option<usize> {
        self.positions
            .get(doc_id)
            .map(|&p| self.doc_lengths[p as usize] as usize)
    }

    /// Postings for `term` as (doc id, term frequency) pairs.
    pub fn postings(&self, term: &str) -> Vec<(&str, u32)> {
        self.postings
            .get(term)
            .map(|list| {
                list.iter()
                    .map(|p| (self.doc_ids[p.doc as usize].as_str(), p.tf))
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.postings.keys().map(String::as_str)
    }

    fn term_score(&self, posting: &Posting, doc_freq: usize) -> f64 {
        let idf = self.params.idf(self.doc_count(), doc_freq);
        let doc_len = self.doc_lengths[posting.doc as usize] as f64;
        idf * self.params.tf_weight(posting.tf as f64, doc_len, self.avg_doc_length)
    }

    pub fn bm25_score(&self, query_tokens: &[String], doc_id: &str) -> Result<f64> {
        let &doc = self
            .positions
            .get(doc_id)
            .ok_or_else(|| Error::Invalid(format!("unknown document id `{doc_id}`")))?;
        let mut score = 0.0;
        for token in query_tokens {
            let Some(list) = self.postings.get(token) else {
                continue;
            };
            if let Ok(i) = list.binary_search_by_key(&doc, |p| p.doc) {
                score += self.term_score(&list[i], list.len());
            }
        }
        Ok(score)
    }

    /// Scores of every document, in index order.
    pub fn score_all(&self, query_tokens: &[String]) -> Vec<f64> {
        let mut scores = vec![0.0; self.doc_count()];
        for token in query_tokens {
            let Some(list) = self.postings.get(token) else {
                continue;
            };
            for posting in list {
                scores[posting.doc as usize] += self.term_score(posting, list.len());
            }
        }
        scores
    }

    /// The `k` best documents for `query_text`, skipping `exclude_ids`.
    ///
    /// Documents with zero score are still candidates, so fewer than `k`
    /// results means every non-excluded document was returned.
    pub fn top_k(&self, query_text: &str, k: usize, exclude_ids: &HashSet<String>) -> Vec<RetrievalResult> {
        let tokens = tokenize(query_text, &self.tokenizer);
        self.top_k_tokens(&tokens, k, exclude_ids)
    }

    pub fn top_k_tokens(&self, query_tokens: &[String], k: usize, exclude_ids: &HashSet<String>) -> Vec<RetrievalResult> {
        if k == 0 {
            return Vec::new();
        }
        let scores = self.score_all(query_tokens);
        let mut candidates: Vec<(f64, &str)> = scores
            .into_iter()
            .zip(&self.doc_ids)
            .filter(|(_, id)| !exclude_ids.contains(*id))
            .map(|(s, id)| (s, id.as_str()))
            .collect();
        let cmp = |a: &(f64, &str), b: &(f64, &str)| rank_order(a.0, a.1, b.0, b.1);
        if candidates.len() > k {
            candidates.select_nth_unstable_by(k - 1, cmp);
            candidates.truncate(k);
        }
        candidates.sort_by(cmp);
        candidates
            .into_iter()
            .map(|(score, id)| RetrievalResult {
                doc_id: id.to_string(),
                score,
            })
            .collect()
    }

    /// [`Index::top_k`] for many queries at once; output order follows
    /// `queries`.
    pub fn top_k_batch(&self, queries: &[(String, HashSet<String>)], k: usize) -> Vec<Vec<RetrievalResult>> {
        par::map(queries, |(text, exclude)| self.top_k(text, k, exclude))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_vec(self).expect("index serializes");
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Index> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut index: Index = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Invalid(format!("{}: not an index file: {e}", path.display())))?;
        index.positions = index
            .doc_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i as u32))
            .collect();
        index.check_invariants()?;
        Ok(index)
    }

    /// Loads the sidecar at `path` if it exists and was built from the same
    /// content key.
    pub fn load_if_matching(path: impl AsRef<Path>, key: &str) -> Option<Index> {
        let path = path.as_ref();
        if !path.exists() {
            return None;
        }
        match Index::load(path) {
            Ok(index) if index.key == key => Some(index),
            Ok(_) => {
                tracing::info!("index sidecar {} is stale; rebuilding", path.display());
                None
            }
            Err(err) => {
                tracing::warn!("ignoring index sidecar: {err}");
                None
            }
        }
    }

    fn check_invariants(&self) -> Result<()> {
        let n = self.doc_ids.len();
        if self.doc_lengths.len() != n || self.positions.len() != n {
            return Err(Error::Invalid("index document tables disagree".into()));
        }
        for list in self.postings.values() {
            if list.iter().any(|p| p.doc as usize >= n)
                || list.windows(2).any(|w| w[0].doc >= w[1].doc)
            {
                return Err(Error::Invalid("index posting list is corrupt".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ws() -> TokenizerConfig {
        TokenizerConfig {
            mode: TokenizerMode::Whitespace,
            ..TokenizerConfig::default()
        }
    }

    fn docs(items: &[(&str, &str)]) -> Vec<(String, String)> {
        items.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn single_doc_stats() {
        let index = build_index(&docs(&[("d", "w x y z")]), Bm25Params::default(), ws()).unwrap();
        assert_eq!(index.doc_count(), 1);
        assert_eq!(index.avg_doc_length(), 4.0);
    }

    #[test]
    fn disjoint_docs_have_singleton_postings() {
        let index = build_index(&docs(&[("a", "p q"), ("b", "r s")]), Bm25Params::default(), ws()).unwrap();
        for term in ["p", "q", "r", "s"] {
            assert_eq!(index.postings(term).len(), 1);
        }
    }

    #[test]
    fn duplicate_doc_id_is_rejected() {
        let err = build_index(&docs(&[("a", "x"), ("a", "y")]), Bm25Params::default(), ws());
        assert!(err.is_err());
    }

    #[test]
    fn three_doc_ordering() {
        // Hand evaluation with k1 = 1.2, b = 0.75, avglen = 5/3, df(a) = 2:
        //   idf = ln(1 + 1.5/2.5) = ln 1.6
        //   d1 (tf 1, len 2): 2.2 / (1 + 1.2 (0.25 + 0.75 * 1.2)) = 2.2 / 2.38
        //   d2 (tf 2, len 2): 4.4 / (2 + 1.38) = 4.4 / 3.38
        let index = build_index(
            &docs(&[("d1", "a b"), ("d2", "a a"), ("d3", "c")]),
            Bm25Params::default(),
            ws(),
        )
        .unwrap();
        let q = toks("a");
        let s1 = index.bm25_score(&q, "d1").unwrap();
        let s2 = index.bm25_score(&q, "d2").unwrap();
        let s3 = index.bm25_score(&q, "d3").unwrap();
        let idf = 1.6f64.ln();
        assert!((s1 - idf * 2.2 / 2.38).abs() < 1e-12);
        assert!((s2 - idf * 4.4 / 3.38).abs() < 1e-12);
        assert_eq!(s3, 0.0);
        assert!(s2 > s1 && s1 > s3);
    }

    #[test]
    fn repeated_query_term_doubles() {
        let index = build_index(&docs(&[("d1", "a b"), ("d2", "c")]), Bm25Params::default(), ws()).unwrap();
        let once = index.bm25_score(&toks("a"), "d1").unwrap();
        let twice = index.bm25_score(&toks("a a"), "d1").unwrap();
        assert_eq!(twice, 2.0 * once);
        assert_eq!(index.bm25_score(&toks("zzz"), "d1").unwrap(), 0.0);
        assert!(index.bm25_score(&toks("a"), "nope").is_err());
    }

    #[test]
    fn exclusion_and_pool_exhaustion() {
        let index = build_index(
            &docs(&[("a", "x y"), ("b", "x"), ("c", "z")]),
            Bm25Params::default(),
            ws(),
        )
        .unwrap();
        let none = HashSet::new();
        let res = index.top_k("x y", 5, &none);
        assert_eq!(res.len(), 3);
        assert_eq!(res[0].doc_id, "a");
        assert_eq!(res[2].doc_id, "c");
        assert_eq!(res[2].score, 0.0);

        let exclude: HashSet<String> = ["a".to_string()].into();
        let res = index.top_k("x y", 5, &exclude);
        assert!(res.iter().all(|r| r.doc_id != "a"));
        assert_eq!(res.len(), 2);
    }

    #[test]
    fn ties_break_by_ascending_id() {
        let index = build_index(
            &docs(&[("m", "x"), ("c", "x"), ("q", "x")]),
            Bm25Params::default(),
            ws(),
        )
        .unwrap();
        let ids: Vec<_> = index
            .top_k("x", 3, &HashSet::new())
            .into_iter()
            .map(|r| r.doc_id)
            .collect();
        assert_eq!(ids, ["c", "m", "q"]);
    }

    #[test]
    fn params_validation() {
        assert!(Bm25Params { k1: -0.1, b: 0.5 }.validate().is_err());
        assert!(Bm25Params { k1: 1.0, b: 1.5 }.validate().is_err());
        assert!(Bm25Params { k1: 0.0, b: 0.0 }.validate().is_ok());
    }

    #[test]
    fn sidecar_round_trip() {
        let d = docs(&[("a", "탄소 중립"), ("b", "지배 구조")]);
        let index = build_index(&d, Bm25Params::default(), TokenizerConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.json");
        index.save(&path).unwrap();
        let loaded = Index::load(&path).unwrap();
        assert_eq!(loaded, index);
        assert!(Index::load_if_matching(&path, &index.key).is_some());
        assert!(Index::load_if_matching(&path, "other").is_none());
        let other = index_key(&d, &Bm25Params { k1: 2.0, b: 0.75 }, &TokenizerConfig::default());
        assert_ne!(other, index.key);
    }
}
