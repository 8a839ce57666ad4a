//! Retrieval-augmented in-context-learning classification harness.
//!
//! The pipeline is: [`corpus`] loads labeled articles, [`retrieval`] ranks
//! training articles against each query with Okapi BM25, [`prompt`] assembles
//! few-shot prompts from the prompt grid, [`scorer`] turns prompts into
//! predictions through a pluggable [`scorer::Backend`], and [`eval`] runs
//! sweeps and computes accuracy, confusion, sweep summaries, and calibration
//! statistics. [`synth`] generates corpora with a known hidden labeling rule
//! so the whole pipeline can be tested without a language model.
//!
//! Per-item evaluation and batch retrieval run on rayon when the `parallel`
//! feature is enabled (the default) and sequentially otherwise. Results are
//! identical in both modes.

pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod hashing;
pub mod par;
pub mod prompt;
pub mod retrieval;
pub mod scorer;
pub mod synth;

pub use corpus::{Article, Category, Dataset, DatasetStats, ImpactDuration, ImpactType, Split, Task};
pub use error::{Error, Result};
pub use eval::{CalibrationFit, ConfusionMatrix, Harness, RunResult, SweepSummary};
pub use prompt::{Guideline, Mode, Order, PromptConfig, PromptInstance};
pub use retrieval::{Bm25Params, Index, RetrievalResult, TokenizerConfig, TokenizerMode};
pub use scorer::{Backend, BackendConfig, BackendKind, OptionScore, Prediction, Scorer};
