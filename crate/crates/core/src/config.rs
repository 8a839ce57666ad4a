//! Run configuration files.
//!
//! ```toml
//! train_path = "data/articles.jsonl"
//! task = "impact_type"
//! prompts = "all"            # or a list of configuration names
//! guideline_path = "guideline.txt"
//! cache_path = "cache.jsonl"
//! output_dir = "out"
//!
//! [backend]
//! kind = "mock"
//! ```
//!
//! Relative paths are resolved against the directory holding the file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{Split, Task};
use crate::error::{Error, Result};
use crate::hashing;
use crate::prompt::{grid, Guideline, GuidelineFlag, Mode, PromptConfig};
use crate::retrieval::{Bm25Params, TokenizerConfig};
use crate::scorer::BackendConfig;

/// Which prompt configurations to run: the keyword `"all"` or a list of
/// names, each of which must belong to the grid.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub enum PromptSelection {
    #[default]
    All,
    Named(Vec<PromptConfig>),
}

impl PromptSelection {
    pub fn configs(&self) -> Vec<PromptConfig> {
        match self {
            PromptSelection::All => grid(),
            PromptSelection::Named(configs) => configs.clone(),
        }
    }
}

impl Serialize for PromptSelection {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            PromptSelection::All => s.serialize_str("all"),
            PromptSelection::Named(configs) => configs.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for PromptSelection {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Keyword(String),
            List(Vec<String>),
        }
        match Raw::deserialize(d)? {
            Raw::Keyword(k) if k == "all" => Ok(PromptSelection::All),
            Raw::Keyword(k) => Err(serde::de::Error::custom(format!(
                "prompts must be \"all\" or a list of names, got `{k}`"
            ))),
            Raw::List(names) => names
                .iter()
                .map(|n| grid_member(n))
                .collect::<Result<Vec<_>>>()
                .map(PromptSelection::Named)
                .map_err(serde::de::Error::custom),
        }
    }
}

/// Parses `name` and checks that it is one of the grid configurations.
pub fn grid_member(name: &str) -> Result<PromptConfig> {
    let config = PromptConfig::parse(name)?;
    if !grid().contains(&config) {
        return Err(Error::Config(format!("`{name}` is not part of the prompt grid")));
    }
    Ok(config)
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_eval_split() -> Split {
    Split::Test
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub train_path: PathBuf,
    /// Optional second file merged with the first; each article keeps the
    /// split recorded in its own row.
    #[serde(default)]
    pub test_path: Option<PathBuf>,
    pub task: Task,
    #[serde(default = "default_eval_split")]
    pub eval_split: Split,
    #[serde(default)]
    pub tokenizer: TokenizerConfig,
    #[serde(default)]
    pub bm25: Bm25Params,
    #[serde(default)]
    pub prompts: PromptSelection,
    /// Single configuration for `run`; overrides `prompts`.
    #[serde(default)]
    pub prompt: Option<PromptConfig>,
    #[serde(default)]
    pub mode: Mode,
    pub backend: BackendConfig,
    #[serde(default)]
    pub guideline_path: Option<PathBuf>,
    #[serde(default)]
    pub cache_path: Option<PathBuf>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Where to persist the BM25 index; rebuilt when its key is stale.
    #[serde(default)]
    pub index_path: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub strict: bool,
}

impl RunConfigFile {
    /// Reads, resolves, and validates a configuration file.
    pub fn load(path: &Path) -> Result<RunConfigFile> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = RunConfigFile::parse(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        config.resolve_paths(base);
        config.validate()?;
        Ok(config)
    }

    /// Parses without touching the filesystem.
    pub fn parse(text: &str) -> Result<RunConfigFile> {
        let mut config: RunConfigFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if config.backend.seed.is_none() {
            config.backend.seed = Some(config.seed);
        }
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.train_path);
        join(&mut self.output_dir);
        for p in [
            &mut self.test_path,
            &mut self.guideline_path,
            &mut self.cache_path,
            &mut self.index_path,
        ]
        .into_iter()
        .flatten()
        {
            join(p);
        }
    }

    /// Configurations this file asks for.
    pub fn selected(&self) -> Vec<PromptConfig> {
        match self.prompt {
            Some(p) => vec![p],
            None => self.prompts.configs(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.tokenizer.validate()?;
        self.bm25.validate()?;
        self.backend.validate()?;
        if let Some(p) = self.prompt {
            grid_member(&p.name())?;
        }
        let must_exist = |p: &Path, what: &str| {
            if p.is_file() {
                Ok(())
            } else {
                Err(Error::Config(format!("{what} `{}` does not exist", p.display())))
            }
        };
        must_exist(&self.train_path, "train_path")?;
        if let Some(p) = &self.test_path {
            must_exist(p, "test_path")?;
        }
        match &self.guideline_path {
            Some(p) => must_exist(p, "guideline_path")?,
            None if self.selected().iter().any(|c| c.guideline == GuidelineFlag::Msci) => {
                return Err(Error::Config(
                    "msci prompt configurations need a guideline_path".into(),
                ))
            }
            None => {}
        }
        Ok(())
    }

    pub fn guideline(&self) -> Result<Option<Guideline>> {
        self.guideline_path.as_deref().map(Guideline::from_file).transpose()
    }

    /// Hash of every setting that can change a result, other than the prompt
    /// configuration itself (run artifacts are named by that). File
    /// locations are left out; the guideline enters through its content.
    pub fn config_hash(&self, guideline: Option<&Guideline>) -> String {
        #[derive(Serialize)]
        struct Hashed<'a> {
            task: Task,
            eval_split: Split,
            tokenizer: &'a TokenizerConfig,
            bm25: &'a Bm25Params,
            mode: Mode,
            backend_kind: crate::scorer::BackendKind,
            model_name: String,
            backend_seed: Option<u64>,
            length_normalize: bool,
            max_tokens: u32,
            guideline: Option<String>,
        }
        let hashed = Hashed {
            task: self.task,
            eval_split: self.eval_split,
            tokenizer: &self.tokenizer,
            bm25: &self.bm25,
            mode: self.mode,
            backend_kind: self.backend.kind,
            model_name: self.backend.resolved_model_name(),
            backend_seed: self.backend.seed,
            length_normalize: self.backend.length_normalize,
            max_tokens: self.backend.max_tokens,
            guideline: guideline.map(|g| hashing::digest(g.body.as_bytes())),
        };
        hashing::digest(serde_json::to_string(&hashed).expect("hash view serializes").as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        train_path = "a.jsonl"
        task = "impact_type"
        [backend]
        kind = "mock"
    "#;

    #[test]
    fn defaults() {
        let c = RunConfigFile::parse(MINIMAL).unwrap();
        assert_eq!(c.prompts, PromptSelection::All);
        assert_eq!(c.selected().len(), 10);
        assert_eq!(c.eval_split, Split::Test);
        assert_eq!(c.backend.seed, Some(0));
        assert_eq!(c.bm25, Bm25Params::default());
    }

    #[test]
    fn prompt_names_must_be_grid_members() {
        let ok = format!("{MINIMAL}\n");
        let ok = ok.replace("task =", "prompts = [\"3-shot-reverse_order-msci_simple\"]\ntask =");
        let c = RunConfigFile::parse(&ok).unwrap();
        assert_eq!(c.selected()[0].name(), "3-shot-reverse_order-msci");

        let bad = MINIMAL.replace("task =", "prompts = [\"1-shot-reverse_order-msci\"]\ntask =");
        assert!(RunConfigFile::parse(&bad).is_err());
        let bad = MINIMAL.replace("task =", "prompts = \"some\"\ntask =");
        assert!(RunConfigFile::parse(&bad).is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfigFile::parse(&format!("bogus = 1\n{MINIMAL}")).is_err());
    }

    #[test]
    fn hash_ignores_locations_but_not_settings() {
        let a = RunConfigFile::parse(MINIMAL).unwrap();
        let mut b = a.clone();
        b.train_path = "elsewhere/a.jsonl".into();
        b.output_dir = "x".into();
        b.cache_path = Some("c.jsonl".into());
        assert_eq!(a.config_hash(None), b.config_hash(None));
        b.bm25.k1 = 1.5;
        assert_ne!(a.config_hash(None), b.config_hash(None));
        let g = Guideline::new("Rate the article.").unwrap();
        assert_ne!(a.config_hash(None), a.config_hash(Some(&g)));
    }
}
