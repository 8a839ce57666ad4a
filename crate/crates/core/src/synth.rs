//! Synthetic corpora with a known labeling rule.
//!
//! Every body is filler drawn from a small shared vocabulary plus exactly
//! one keyword. The keyword determines the label, except that a fraction
//! `noise_rate` of articles get a different label chosen uniformly. Filler
//! words occur in nearly every document, so BM25 similarity is driven almost
//! entirely by the keyword: a retriever that works puts same-keyword
//! articles at the top.

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Article, Category, Dataset, Split, Task};
use crate::error::{Error, Result};
use crate::prompt::grid;
use crate::scorer::{Backend, ExemplarOracle};

const FILLER_WORDS: usize = 16;
const KEYWORDS_PER_LABEL: usize = 4;
const MIN_FILLER: usize = 20;
const MAX_FILLER: usize = 40;
const MAX_ATTEMPTS: usize = 1000;

fn hangul(initial: u32, medial: u32, last: u32) -> char {
    char::from_u32(0xAC00 + (initial * 21 + medial) * 28 + last).expect("valid Hangul syllable")
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenRule {
    /// Keyword to label.
    pub keyword_map: BTreeMap<String, String>,
    pub noise_rate: f64,
    pub vocabulary: Vec<String>,
    pub seed: u64,
}

impl HiddenRule {
    pub fn new(
        keyword_map: BTreeMap<String, String>,
        noise_rate: f64,
        vocabulary: Vec<String>,
        seed: u64,
    ) -> Result<HiddenRule> {
        if !(0.0..1.0).contains(&noise_rate) {
            return Err(Error::Config(format!("noise rate {noise_rate} is outside [0, 1)")));
        }
        if vocabulary.is_empty() {
            return Err(Error::Config("filler vocabulary is empty".into()));
        }
        if keyword_map.is_empty() {
            return Err(Error::Config("keyword map is empty".into()));
        }
        let filler: HashSet<&str> = vocabulary.iter().map(String::as_str).collect();
        for keyword in keyword_map.keys() {
            if keyword.is_empty() || keyword.chars().any(char::is_whitespace) {
                return Err(Error::Config(format!("keyword `{keyword}` must be a single word")));
            }
            if filler.contains(keyword.as_str()) {
                return Err(Error::Config(format!("keyword `{keyword}` is also a filler word")));
            }
        }
        Ok(HiddenRule {
            keyword_map,
            noise_rate,
            vocabulary,
            seed,
        })
    }

    /// The default rule for `task`: open syllables for filler, closed
    /// syllables for keywords, so the two never share a character and no
    /// two keywords share a character bigram.
    pub fn standard(task: Task, noise_rate: f64, seed: u64) -> Result<HiddenRule> {
        let vocabulary: Vec<String> = (0..FILLER_WORDS as u32)
            .map(|k| [hangul(k % 19, (k * 5) % 21, 0), hangul((k * 3 + 1) % 19, (k * 7 + 2) % 21, 0)].iter().collect())
            .collect();
        let mut keyword_map = BTreeMap::new();
        let mut j = 0u32;
        for label in task.labels() {
            for _ in 0..KEYWORDS_PER_LABEL {
                let word: String = (j..j + 3).map(|i| hangul((i * 7) % 19, i % 21, 1 + i % 27)).collect();
                j += 3;
                keyword_map.insert(word, label.to_string());
            }
        }
        HiddenRule::new(keyword_map, noise_rate, vocabulary, seed)
    }

    /// The keyword contained in `body`, if any.
    pub fn keyword_in<'a>(&'a self, body: &str) -> Option<&'a str> {
        body.split_whitespace()
            .find_map(|w| self.keyword_map.get_key_value(w).map(|(k, _)| k.as_str()))
    }

    /// The label the rule assigns to `body`, before noise.
    pub fn true_label(&self, body: &str) -> Option<&str> {
        self.keyword_in(body).map(|k| self.keyword_map[k].as_str())
    }

    fn check_task(&self, task: Task) -> Result<()> {
        for label in self.keyword_map.values() {
            if !task.is_label(label) {
                return Err(Error::Config(format!("keyword label `{label}` is not a {} label", task.title())));
            }
        }
        for label in task.labels() {
            if !self.keyword_map.values().any(|l| l == label) {
                return Err(Error::Config(format!("no keyword maps to `{label}`")));
            }
        }
        Ok(())
    }
}

/// Generates `n_train` training and `n_test` test articles labeled for
/// `task`. The same rule always yields the same dataset.
pub fn generate(rule: &HiddenRule, n_train: usize, n_test: usize, task: Task) -> Result<Dataset> {
    rule.check_task(task)?;
    let max_shots = grid().iter().map(|c| c.shots).max().unwrap_or(0);
    if n_train < max_shots {
        return Err(Error::Config(format!("need at least {max_shots} training articles, got {n_train}")));
    }
    if n_test == 0 {
        return Err(Error::Config("need at least one test article".into()));
    }
    let labels = task.labels();
    let keywords: Vec<(&String, &String)> = rule.keyword_map.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(rule.seed);
    let mut seen = HashSet::new();
    let mut articles = Vec::with_capacity(n_train + n_test);

    let plan = [(Split::Train, n_train), (Split::Test, n_test)];
    for (split, count) in plan {
        for i in 0..count {
            let (keyword, label) = keywords[rng.gen_range(0..keywords.len())];
            let body = (0..MAX_ATTEMPTS)
                .map(|_| {
                    let n = rng.gen_range(MIN_FILLER..=MAX_FILLER);
                    let mut words: Vec<&str> = (0..n)
                        .map(|_| rule.vocabulary.choose(&mut rng).expect("non-empty vocabulary").as_str())
                        .collect();
                    words.insert(rng.gen_range(0..=n), keyword);
                    words.join(" ")
                })
                .find(|body| !seen.contains(body))
                .ok_or_else(|| Error::Runtime("could not generate distinct article bodies".into()))?;
            seen.insert(body.clone());

            let mut assigned = label.as_str();
            if labels.len() > 1 && rng.gen_bool(rule.noise_rate) {
                let others: Vec<&str> = labels.iter().copied().filter(|l| *l != label).collect();
                assigned = others[rng.gen_range(0..others.len())];
            }
            let (impact_type, impact_duration) = match task {
                Task::ImpactType => (Some(assigned.to_string()), None),
                Task::ImpactDuration => (None, Some(assigned.to_string())),
            };
            articles.push(Article {
                id: format!("syn-{}-{:05}", split.as_str(), i),
                title: String::new(),
                body,
                category: Category::ALL[i % Category::ALL.len()].as_str().to_string(),
                impact_type,
                impact_duration,
                split,
            });
        }
    }
    Ok(Dataset::new(format!("synthetic-{}", rule.seed), articles))
}

/// A backend that votes over the gold labels of the exemplars in each
/// prompt, looked up in `train`.
pub fn oracle_backend(train: &Dataset) -> Arc<dyn Backend> {
    Arc::new(ExemplarOracle::new(train))
}
