use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use icl_lab::config::{grid_member, RunConfigFile};
use icl_lab::corpus::{stats, validate};
use icl_lab::eval::pipeline::{write_tables, Pipeline};
use icl_lab::eval::report::{read_run_reports, Aggregate, RunReport};
use icl_lab::eval::index_documents;
use icl_lab::prompt::grid;
use icl_lab::retrieval::build_index;
use icl_lab::synth::{generate, HiddenRule};
use icl_lab::{Bm25Params, Dataset, Error, Mode, Task, TokenizerConfig, TokenizerMode};
use tracing_subscriber::EnvFilter;

const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (", env!("ICL_LAB_GIT_REV"), ")");

/// Retrieval-augmented in-context classification experiments.
#[derive(Parser)]
#[command(name = "icl-lab", version = VERSION)]
struct Cli {
    /// More log output on stderr (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    #[value(name = "impact_type", alias = "impact-type")]
    ImpactType,
    #[value(name = "impact_duration", alias = "impact-duration")]
    ImpactDuration,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Task {
        match t {
            TaskArg::ImpactType => Task::ImpactType,
            TaskArg::ImpactDuration => Task::ImpactDuration,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Likelihood,
    Generation,
}

#[derive(Clone, Copy, ValueEnum)]
enum TokenizerArg {
    Whitespace,
    #[value(name = "char_ngram", alias = "char-ngram")]
    CharNgram,
    Hybrid,
}

#[derive(Subcommand)]
enum Command {
    /// Category x label counts and validation problems for a dataset.
    Stats {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        task: Option<TaskArg>,
        /// Emit JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Build a BM25 index over the labeled training articles.
    Index {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "impact_type")]
        task: TaskArg,
        #[arg(long, value_enum, default_value = "hybrid")]
        tokenizer: TokenizerArg,
        #[arg(long, default_value_t = 2)]
        ngram: usize,
        #[arg(long, default_value_t = 1.2)]
        k1: f64,
        #[arg(long, default_value_t = 0.75)]
        b: f64,
    },
    /// List the prompt configurations in canonical order.
    Grid,
    /// Generate a synthetic dataset with a hidden keyword rule.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 400)]
        train: usize,
        #[arg(long, default_value_t = 100)]
        test: usize,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, value_enum, default_value = "impact_type")]
        task: TaskArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one prompt configuration.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Configuration name; required unless the file sets `prompt` or
        /// selects exactly one entry in `prompts`.
        #[arg(long)]
        prompt: Option<String>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Run every selected prompt configuration and aggregate.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Aggregate existing run reports.
    Report {
        /// Directory of run reports (`<output_dir>/runs`).
        #[arg(long)]
        runs: PathBuf,
        /// Where to write the tables; defaults to the parent of `--runs`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let default = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default)))
        .init();

    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}

fn execute(command: Command) -> icl_lab::Result<()> {
    match command {
        Command::Stats { data, task, json } => cmd_stats(&data, task.map(Task::from), json),
        Command::Index {
            data,
            out,
            task,
            tokenizer,
            ngram,
            k1,
            b,
        } => {
            let mode = match tokenizer {
                TokenizerArg::Whitespace => TokenizerMode::Whitespace,
                TokenizerArg::CharNgram => TokenizerMode::CharNgram,
                TokenizerArg::Hybrid => TokenizerMode::Hybrid,
            };
            let tokenizer = TokenizerConfig {
                mode,
                ngram_size: ngram,
                ..TokenizerConfig::default()
            };
            tokenizer.validate()?;
            let params = Bm25Params { k1, b };
            params.validate()?;
            let dataset = Dataset::load(&data)?;
            let index = build_index(&index_documents(&dataset, task.into()), params, tokenizer)?;
            index.save(&out)?;
            println!(
                "indexed {} documents ({} terms) into {}",
                index.doc_count(),
                index.terms().count(),
                out.display()
            );
            Ok(())
        }
        Command::Grid => {
            for config in grid() {
                println!("{config}");
            }
            Ok(())
        }
        Command::Synth {
            seed,
            train,
            test,
            noise,
            task,
            out,
        } => {
            let task = Task::from(task);
            let rule = HiddenRule::standard(task, noise, seed)?;
            let dataset = generate(&rule, train, test, task)?;
            dataset.save_jsonl(&out)?;
            println!("wrote {} articles to {}", dataset.len(), out.display());
            Ok(())
        }
        Command::Run {
            config,
            prompt,
            mode,
            output_dir,
        } => {
            let mut config = load_config(&config, mode, output_dir)?;
            if let Some(name) = prompt {
                config.prompt = Some(grid_member(&name)?);
                config.validate()?;
            }
            if config.selected().len() != 1 {
                return Err(Error::Config("`run` needs a single configuration; pass --prompt".into()));
            }
            sweep(config)
        }
        Command::Sweep {
            config,
            mode,
            output_dir,
        } => sweep(load_config(&config, mode, output_dir)?),
        Command::Report { runs, out } => {
            let reports = read_run_reports(&runs)?;
            if reports.is_empty() {
                return Err(Error::Invalid(format!("no run reports in {}", runs.display())));
            }
            let out = out.unwrap_or_else(|| runs.parent().map(Path::to_path_buf).unwrap_or_default());
            let aggregate = write_tables(&out, &reports)?;
            print_results(&reports, &aggregate);
            Ok(())
        }
    }
}

fn load_config(path: &Path, mode: Option<ModeArg>, output_dir: Option<PathBuf>) -> icl_lab::Result<RunConfigFile> {
    let mut config = RunConfigFile::load(path)?;
    if let Some(mode) = mode {
        config.mode = match mode {
            ModeArg::Likelihood => Mode::Likelihood,
            ModeArg::Generation => Mode::Generation,
        };
    }
    if let Some(dir) = output_dir {
        config.output_dir = dir;
    }
    Ok(config)
}

fn sweep(config: RunConfigFile) -> icl_lab::Result<()> {
    let pipeline = Pipeline::prepare(config)?;
    let output = pipeline.execute()?;
    print_results(&output.reports, &output.aggregate);
    eprintln!(
        "{} run(s), {} reused, {} backend call(s); results in {}",
        output.reports.len(),
        output.reused.len(),
        pipeline.scorer().backend_calls(),
        pipeline.config().output_dir.display()
    );
    Ok(())
}

fn print_results(reports: &[RunReport], aggregate: &Aggregate) {
    let width = reports.iter().map(|r| r.run.config_name.len()).max().unwrap_or(6).max(6);
    println!("{:<width$}  {:>8}  {:>10}  {:>6}  model / task", "prompt", "accuracy", "confidence", "errors");
    for r in reports {
        println!(
            "{:<width$}  {:>8.4}  {:>10.6}  {:>6}  {} / {}",
            r.run.config_name,
            r.run.accuracy,
            r.run.mean_confidence,
            r.run.errors.len(),
            r.run.model_name,
            r.run.task.title()
        );
    }
    println!();
    for s in &aggregate.summaries {
        println!(
            "{} / {}: min {:.1}  max {:.1}  mean {:.1}  delta {:.1}  ({} runs)",
            s.model_name,
            s.task.title(),
            s.min,
            s.max,
            s.mean,
            s.delta,
            s.runs
        );
    }
    if let Some(fit) = &aggregate.calibration {
        println!(
            "calibration: accuracy = {:.4} * confidence + {:.4}  (r2 {:.3})",
            fit.slope, fit.intercept, fit.r2
        );
    }
}

fn cmd_stats(path: &Path, task: Option<Task>, json: bool) -> icl_lab::Result<()> {
    let dataset = Dataset::load(path)?;
    let tasks: Vec<Task> = task.map(|t| vec![t]).unwrap_or_else(|| Task::ALL.to_vec());
    let violations = validate(&dataset);
    if json {
        let tables: Vec<_> = tasks.iter().map(|&t| stats(&dataset, t)).collect();
        let problems: Vec<String> = violations.iter().map(ToString::to_string).collect();
        let doc = serde_json_value(&tables, &problems);
        println!("{doc}");
    } else {
        for (i, &t) in tasks.iter().enumerate() {
            if i > 0 {
                println!();
            }
            println!("{}", t.title());
            print!("{}", stats(&dataset, t));
        }
        for v in &violations {
            println!("invalid: {v}");
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(Error::Invalid(format!("{} invalid record(s)", violations.len())))
    }
}

fn serde_json_value(tables: &[icl_lab::DatasetStats], problems: &[String]) -> String {
    #[derive(serde::Serialize)]
    struct Doc<'a> {
        stats: &'a [icl_lab::DatasetStats],
        violations: &'a [String],
    }
    serde_json::to_string_pretty(&Doc { stats: tables, violations: problems }).expect("stats serialize")
}
