use std::sync::Arc;

use icl_lab::config::RunConfigFile;
use icl_lab::eval::pipeline::Pipeline;
use icl_lab::eval::RunOptions;
use icl_lab::prompt::{grid, Mode, PromptConfig};
use icl_lab::scorer::MockBackend;
use icl_lab::synth::{generate, oracle_backend, HiddenRule};
use icl_lab::{par, Bm25Params, Dataset, Harness, Scorer, Split, Task, TokenizerConfig};

fn synthetic(task: Task, noise: f64, seed: u64, n_train: usize, n_test: usize) -> (HiddenRule, Dataset) {
    let rule = HiddenRule::standard(task, noise, seed).unwrap();
    let data = generate(&rule, n_train, n_test, task).unwrap();
    (rule, data)
}

fn harness(data: &Dataset, task: Task) -> Harness {
    Harness::new(data, task, TokenizerConfig::default(), Bm25Params::default(), Split::Test).unwrap()
}

fn five_shot() -> PromptConfig {
    PromptConfig::parse("5-shot-standard_order-standard").unwrap()
}

#[test]
fn generation_is_deterministic() {
    let (_, a) = synthetic(Task::ImpactType, 0.2, 11, 100, 20);
    let (_, b) = synthetic(Task::ImpactType, 0.2, 11, 100, 20);
    let (_, c) = synthetic(Task::ImpactType, 0.2, 12, 100, 20);
    assert_eq!(a.to_jsonl(), b.to_jsonl());
    assert_ne!(a.to_jsonl(), c.to_jsonl());
}

#[test]
fn noise_rate_is_honored() {
    let (rule, data) = synthetic(Task::ImpactDuration, 0.1, 5, 999, 1);
    let flipped = data
        .articles
        .iter()
        .filter(|a| a.impact_duration.as_deref() != rule.true_label(&a.body))
        .count();
    let rate = flipped as f64 / 1000.0;
    assert!((rate - 0.1).abs() <= 0.03, "flip rate {rate}");
}

#[test]
fn retrieval_finds_same_keyword_neighbors() {
    let (rule, data) = synthetic(Task::ImpactType, 0.0, 2, 400, 50);
    let h = harness(&data, Task::ImpactType);
    let train: std::collections::HashMap<&str, &str> =
        data.articles.iter().map(|a| (a.id.as_str(), a.body.as_str())).collect();
    for (item, hits) in h.eval_items().iter().zip(h.neighbors(5)) {
        let keyword = rule.keyword_in(&item.body);
        let same = hits.iter().filter(|hit| rule.keyword_in(train[hit.doc_id.as_str()]) == keyword).count();
        assert!(same >= 4, "{}: only {same} of 5 neighbors share the keyword", item.id);
    }
}

#[test]
fn oracle_is_accurate_without_noise_and_degrades_with_it() {
    for (noise, floor) in [(0.0, 0.9), (0.3, 1.0 / 3.0)] {
        let (_, data) = synthetic(Task::ImpactType, noise, 9, 400, 100);
        let scorer = Scorer::new(oracle_backend(&data));
        let run = harness(&data, Task::ImpactType)
            .run(&five_shot(), &scorer, &RunOptions::default())
            .unwrap();
        assert!(run.accuracy > floor, "noise {noise}: accuracy {}", run.accuracy);
    }
}

#[test]
fn oracle_ignores_exemplar_order() {
    let (_, data) = synthetic(Task::ImpactDuration, 0.2, 4, 300, 60);
    let scorer = Scorer::new(oracle_backend(&data));
    let h = harness(&data, Task::ImpactDuration);
    let standard = h.run(&five_shot(), &scorer, &RunOptions::default()).unwrap();
    let reverse = h
        .run(&PromptConfig::parse("5-shot-reverse_order-standard").unwrap(), &scorer, &RunOptions::default())
        .unwrap();
    let picks = |r: &icl_lab::RunResult| r.predictions.iter().map(|p| p.predicted.clone()).collect::<Vec<_>>();
    assert_eq!(picks(&standard), picks(&reverse));
}

#[test]
fn thread_count_does_not_change_results() {
    let (_, data) = synthetic(Task::ImpactType, 0.2, 8, 200, 40);
    let scorer = Scorer::new(Arc::new(MockBackend::new("mock", 3)));
    let h = harness(&data, Task::ImpactType);
    let config = PromptConfig::parse("3-shot-reverse_order-standard").unwrap();
    let serial = RunOptions { max_in_flight: 1, ..RunOptions::default() };
    let wide = RunOptions { max_in_flight: 8, ..RunOptions::default() };
    assert_eq!(h.run(&config, &scorer, &serial).unwrap(), h.run(&config, &scorer, &wide).unwrap());
}

#[test]
fn parallel_and_sequential_maps_agree() {
    let xs: Vec<u64> = (0..1000).collect();
    let f = |x: &u64| x.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17);
    assert_eq!(par::map(&xs, f), par::map_sequential(&xs, f));
}

#[test]
fn sweep_matches_individual_runs() {
    let (_, data) = synthetic(Task::ImpactType, 0.1, 6, 150, 30);
    let scorer = Scorer::new(Arc::new(MockBackend::new("mock", 1)));
    let h = harness(&data, Task::ImpactType);
    let configs: Vec<PromptConfig> = grid().into_iter().filter(|c| c.name().ends_with("standard")).collect();
    let swept = h.sweep(&configs, &scorer, &RunOptions::default()).unwrap();
    for (config, run) in configs.iter().zip(&swept) {
        assert_eq!(run, &h.run(config, &scorer, &RunOptions::default()).unwrap());
    }
}

fn write_config(dir: &std::path::Path, out: &str, extra: &str) -> std::path::PathBuf {
    let path = dir.join(format!("{out}.toml"));
    std::fs::write(
        &path,
        format!(
            "train_path = \"data.jsonl\"\ntask = \"impact_type\"\noutput_dir = \"{out}\"\n\
             cache_path = \"cache.jsonl\"\nguideline_path = \"guideline.txt\"\n{extra}\n\
             [backend]\nkind = \"mock\"\nseed = 4\n"
        ),
    )
    .unwrap();
    path
}

#[test]
fn warm_cache_replays_without_backend_calls() {
    let dir = tempfile::tempdir().unwrap();
    let (_, data) = synthetic(Task::ImpactType, 0.2, 21, 120, 25);
    data.save_jsonl(dir.path().join("data.jsonl")).unwrap();
    std::fs::write(dir.path().join("guideline.txt"), "Classify by ESG impact.\n").unwrap();

    let cold = Pipeline::prepare(RunConfigFile::load(&write_config(dir.path(), "cold", "")).unwrap()).unwrap();
    let first = cold.execute().unwrap();
    assert_eq!(first.reports.len(), 10);
    assert!(cold.scorer().backend_calls() > 0);

    let warm = Pipeline::prepare(RunConfigFile::load(&write_config(dir.path(), "warm", "")).unwrap()).unwrap();
    let second = warm.execute().unwrap();
    assert_eq!(warm.scorer().backend_calls(), 0);
    for (a, b) in first.run_paths.iter().zip(&second.run_paths) {
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }
    for table in ["sweep.csv", "scatter.csv", "summary.json"] {
        assert_eq!(
            std::fs::read(dir.path().join("cold").join(table)).unwrap(),
            std::fs::read(dir.path().join("warm").join(table)).unwrap(),
        );
    }
}

#[test]
fn finished_runs_are_resumed_not_repeated() {
    let dir = tempfile::tempdir().unwrap();
    let (_, data) = synthetic(Task::ImpactType, 0.2, 22, 80, 10);
    data.save_jsonl(dir.path().join("data.jsonl")).unwrap();
    std::fs::write(dir.path().join("guideline.txt"), "Classify by ESG impact.\n").unwrap();
    let config = write_config(dir.path(), "out", "prompts = [\"1-shot-standard_order-standard\"]");

    let first = Pipeline::prepare(RunConfigFile::load(&config).unwrap()).unwrap().execute().unwrap();
    assert!(first.reused.is_empty());
    let second = Pipeline::prepare(RunConfigFile::load(&config).unwrap()).unwrap().execute().unwrap();
    assert_eq!(second.reused, ["1-shot-standard_order-standard"]);
    assert_eq!(first.reports, second.reports);
}

#[test]
fn generation_mode_extracts_answers() {
    let (_, data) = synthetic(Task::ImpactType, 0.0, 30, 100, 20);
    let scorer = Scorer::new(oracle_backend(&data));
    let options = RunOptions { mode: Mode::Generation, ..RunOptions::default() };
    let run = harness(&data, Task::ImpactType).run(&five_shot(), &scorer, &options).unwrap();
    assert!(run.predictions.iter().all(|p| !p.extraction_failed && p.confidence == 1.0));
    assert!(run.accuracy > 0.9, "{}", run.accuracy);
}
