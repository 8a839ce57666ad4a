//! The prompt grid and few-shot prompt assembly.
//!
//! A prompt is an optional guideline block, one block per exemplar, and the
//! query block. In likelihood mode every exemplar's gold label follows the
//! elicitation suffix, and the prompt itself ends with that suffix, so the
//! scored continuation sits at the same boundary as the exemplar answers.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Article, Task};
use crate::error::{Error, Result};
use crate::retrieval::RetrievalResult;

/// Text that precedes every answer. Ends with a single space.
pub const ELICITATION_SUFFIX: &str = "The answer is ";

pub const REASONING_INSTRUCTION: &str = "Think step by step, then state the answer";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Order {
    /// Most similar exemplar first, farthest from the query.
    SimilarFirst,
    /// Most similar exemplar last, adjacent to the query.
    SimilarLast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidelineFlag {
    Msci,
    Standard,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Likelihood,
    Generation,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Likelihood => "likelihood",
            Mode::Generation => "generation",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PromptConfig {
    pub shots: usize,
    pub order: Order,
    pub guideline: GuidelineFlag,
}

impl PromptConfig {
    pub const fn new(shots: usize, order: Order, guideline: GuidelineFlag) -> Self {
        PromptConfig {
            shots,
            order,
            guideline,
        }
    }

    /// Canonical name, e.g. `3-shot-reverse_order-msci`.
    pub fn name(&self) -> String {
        let order = match self.order {
            Order::SimilarFirst => "standard",
            Order::SimilarLast => "reverse",
        };
        let guideline = match self.guideline {
            GuidelineFlag::Msci => "msci",
            GuidelineFlag::Standard => "standard",
        };
        format!("{}-shot-{order}_order-{guideline}", self.shots)
    }

    /// Parses a canonical name. `msci_simple` is accepted as a spelling of
    /// the `msci` flag.
    pub fn parse(name: &str) -> Result<PromptConfig> {
        let bad = || Error::Config(format!("`{name}` is not a prompt configuration name"));
        let (shots, rest) = name.split_once("-shot-").ok_or_else(bad)?;
        let shots: usize = shots.parse().map_err(|_| bad())?;
        let (order, guideline) = rest.split_once("_order-").ok_or_else(bad)?;
        let order = match order {
            "standard" => Order::SimilarFirst,
            "reverse" => Order::SimilarLast,
            _ => return Err(bad()),
        };
        let guideline = match guideline {
            "msci" | "msci_simple" => GuidelineFlag::Msci,
            "standard" => GuidelineFlag::Standard,
            _ => return Err(bad()),
        };
        Ok(PromptConfig::new(shots, order, guideline))
    }
}

impl fmt::Display for PromptConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl Serialize for PromptConfig {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for PromptConfig {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let name = String::deserialize(d)?;
        PromptConfig::parse(&name).map_err(serde::de::Error::custom)
    }
}

/// The ten prompt configurations, in canonical order. One-shot prompts only
/// come in the standard order.
pub fn grid() -> Vec<PromptConfig> {
    use GuidelineFlag::*;
    use Order::*;
    let mut configs = vec![
        PromptConfig::new(1, SimilarFirst, Msci),
        PromptConfig::new(1, SimilarFirst, Standard),
    ];
    for shots in [3, 5] {
        for order in [SimilarLast, SimilarFirst] {
            for guideline in [Msci, Standard] {
                configs.push(PromptConfig::new(shots, order, guideline));
            }
        }
    }
    configs
}

/// Instruction text prepended to prompts whose config has the `msci` flag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Guideline {
    pub body: String,
}

impl Guideline {
    pub fn new(body: impl Into<String>) -> Result<Guideline> {
        let body = crate::corpus::nfc(&body.into());
        if body.trim().is_empty() {
            return Err(Error::Config("guideline text is empty".into()));
        }
        Ok(Guideline { body })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Guideline> {
        let path = path.as_ref();
        let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Guideline::new(body)
            .map_err(|_| Error::Config(format!("guideline file {} is empty", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptInstance {
    pub text: String,
    pub exemplar_ids: Vec<String>,
    pub option_strings: Vec<String>,
    pub config_name: String,
    pub query_id: String,
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Exemplar ids in prompt order. `results` must be best-first.
pub fn order_exemplars(results: &[RetrievalResult], order: Order) -> Vec<String> {
    let ids = results.iter().map(|r| r.doc_id.clone());
    match order {
        Order::SimilarFirst => ids.collect(),
        Order::SimilarLast => ids.rev().collect(),
    }
}

fn push_article(text: &mut String, article: &Article) {
    text.push_str("Article:\n");
    text.push_str(&article.title);
    text.push('\n');
    text.push_str(&article.body);
    text.push('\n');
}

/// Builds the prompt for `query`. `exemplars` are in prompt order.
pub fn assemble(
    config: &PromptConfig,
    query: &Article,
    exemplars: &[&Article],
    task: Task,
    mode: Mode,
    guideline: Option<&Guideline>,
) -> Result<PromptInstance> {
    if exemplars.len() > config.shots {
        return Err(Error::Invalid(format!(
            "{} exemplars given for a {}-shot prompt",
            exemplars.len(),
            config.shots
        )));
    }
    let options: Vec<String> = task.labels().into_iter().map(String::from).collect();
    let mut text = String::new();

    if config.guideline == GuidelineFlag::Msci {
        let guideline = guideline.ok_or_else(|| {
            Error::Config(format!("prompt `{}` needs guideline text", config.name()))
        })?;
        text.push_str(guideline.body.trim_end());
        text.push_str("\n\n");
    }

    for exemplar in exemplars {
        let label = exemplar.label(task).ok_or_else(|| {
            Error::Invalid(format!("exemplar `{}` has no {} label", exemplar.id, task))
        })?;
        push_article(&mut text, exemplar);
        text.push_str(ELICITATION_SUFFIX);
        text.push_str(label);
        text.push_str("\n\n");
    }

    push_article(&mut text, query);
    match mode {
        Mode::Likelihood => text.push_str(ELICITATION_SUFFIX),
        Mode::Generation => {
            text.push_str("Options: ");
            text.push_str(&options.join(", "));
            text.push('\n');
            text.push_str(REASONING_INSTRUCTION);
            text.push_str(" in the form \"");
            text.push_str(ELICITATION_SUFFIX);
            text.push_str("<option>\".\n");
        }
    }

    let mut warnings = Vec::new();
    if exemplars.len() < config.shots {
        warnings.push(format!(
            "exemplar pool exhausted: {} of {} exemplars for `{}`",
            exemplars.len(),
            config.shots,
            query.id
        ));
    }

    Ok(PromptInstance {
        text,
        exemplar_ids: exemplars.iter().map(|a| a.id.clone()).collect(),
        option_strings: options,
        config_name: config.name(),
        query_id: query.id.clone(),
        mode,
        warnings,
    })
}
