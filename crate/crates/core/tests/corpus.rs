use icl_lab::corpus::fixture::{reference_corpus, IMPACT_DURATION_COUNTS, IMPACT_TYPE_COUNTS};
use icl_lab::corpus::{stats, validate, ViolationKind};
use icl_lab::{Article, Category, Dataset, ImpactDuration, ImpactType, Split, Task};
use proptest::prelude::*;

fn arb_article(i: usize) -> impl Strategy<Value = Article> {
    (
        prop::sample::select(Category::ALL.to_vec()),
        prop::option::of(prop::sample::select(ImpactType::ALL.to_vec())),
        prop::option::of(prop::sample::select(ImpactDuration::ALL.to_vec())),
        prop::sample::select(vec!["", "삼성전자 ESG", "탄소 \"중립\" 선언", "a,b\tc"]),
        "[가-힣a-z ,.]{1,40}",
        any::<bool>(),
    )
        .prop_filter("body must not be blank", |t| !t.4.trim().is_empty())
        .prop_map(move |(category, t, d, title, body, train)| Article {
            id: format!("a{i:03}"),
            title: title.to_string(),
            body,
            category: category.to_string(),
            impact_type: t.map(|l| l.to_string()),
            impact_duration: d.map(|l| l.to_string()),
            split: if train { Split::Train } else { Split::Test },
        })
}

fn arb_dataset() -> impl Strategy<Value = Dataset> {
    (1usize..25)
        .prop_flat_map(|n| (0..n).map(arb_article).collect::<Vec<_>>())
        .prop_map(|articles| Dataset::new("generated", articles))
}

#[derive(Debug, Clone, Copy)]
enum Defect {
    EmptyId,
    DuplicateId,
    EmptyBody,
    UnknownCategory,
    UnknownLabel,
}

impl Defect {
    fn expected(self) -> ViolationKind {
        match self {
            Defect::EmptyId => ViolationKind::EmptyId,
            Defect::DuplicateId => ViolationKind::DuplicateId,
            Defect::EmptyBody => ViolationKind::EmptyBody,
            Defect::UnknownCategory => ViolationKind::UnknownCategory,
            Defect::UnknownLabel => ViolationKind::UnknownLabel,
        }
    }

    fn inject(self, data: &mut Dataset, at: usize) {
        let n = data.articles.len();
        let a = &mut data.articles[at % n];
        match self {
            Defect::EmptyId => a.id.clear(),
            Defect::DuplicateId => {
                let copy = a.clone();
                data.articles.push(copy);
            }
            Defect::EmptyBody => a.body = "  ".into(),
            Defect::UnknownCategory => a.category = "Sports".into(),
            Defect::UnknownLabel => a.impact_type = Some("Maybe".into()),
        }
    }
}

proptest! {
    #[test]
    fn generated_datasets_are_valid(data in arb_dataset()) {
        prop_assert!(validate(&data).is_empty());
    }

    #[test]
    fn each_injected_defect_is_reported(
        data in arb_dataset(),
        defect in prop::sample::select(vec![
            Defect::EmptyId, Defect::DuplicateId, Defect::EmptyBody,
            Defect::UnknownCategory, Defect::UnknownLabel,
        ]),
        at in any::<usize>(),
    ) {
        let mut data = data;
        defect.inject(&mut data, at);
        let violations = validate(&data);
        prop_assert_eq!(violations.len(), 1, "{:?}", violations);
        prop_assert_eq!(violations[0].kind, defect.expected());
    }

    #[test]
    fn jsonl_round_trip(data in arb_dataset()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("generated.jsonl");
        data.save_jsonl(&path).unwrap();
        let loaded = Dataset::load(&path).unwrap();
        prop_assert_eq!(&loaded.articles, &data.articles);
        prop_assert_eq!(loaded.content_hash(), data.content_hash());
    }

    #[test]
    fn stats_add_up(data in arb_dataset()) {
        for task in Task::ALL {
            let s = stats(&data, task);
            prop_assert_eq!(s.grand_total + s.unlabeled + s.invalid, data.len());
            prop_assert_eq!(s.row_totals.iter().sum::<usize>(), s.grand_total);
            prop_assert_eq!(s.col_totals.iter().sum::<usize>(), s.grand_total);
        }
    }
}

#[test]
fn reference_corpus_reproduces_published_counts() {
    let data = reference_corpus();
    assert!(validate(&data).is_empty());
    for (task, table) in [(Task::ImpactType, IMPACT_TYPE_COUNTS), (Task::ImpactDuration, IMPACT_DURATION_COUNTS)] {
        let s = stats(&data, task);
        for (i, (category, row)) in table.iter().enumerate() {
            assert_eq!(s.categories[i], category.as_str());
            assert_eq!(s.counts[i], row);
        }
    }
    let t = stats(&data, Task::ImpactType);
    assert_eq!(t.col_totals, [462, 229, 109]);
    assert_eq!(t.row_totals, [258, 205, 156, 153, 20, 8]);
    let d = stats(&data, Task::ImpactDuration);
    assert_eq!(d.col_totals, [446, 212, 142]);
    assert_eq!(d.grand_total, 800);
}

#[test]
fn malformed_lines_name_line_and_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    let good = r#"{"id":"a","title":"t","body":"b","category":"Opinion","split":"train"}"#;
    let bad = r#"{"id":"b","title":"t","body":"b","category":"Opinion","split":"later"}"#;
    std::fs::write(&path, format!("{good}\n{bad}\n")).unwrap();
    let err = Dataset::load(&path).unwrap_err().to_string();
    assert!(err.contains("line 2") && err.contains("split"), "{err}");
}

#[test]
fn duplicate_ids_are_rejected_on_load() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dup.jsonl");
    let row = r#"{"id":"a","title":"t","body":"b","category":"Opinion","split":"train"}"#;
    std::fs::write(&path, format!("{row}\n{row}\n")).unwrap();
    assert!(Dataset::load(&path).is_err());
}

#[test]
fn csv_and_jsonl_load_the_same_records() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("a.csv");
    std::fs::write(
        &csv,
        "id,title,body,category,impact_type,impact_duration,split\n\
         x1,제목,\"본문, 쉼표\",ESG Life,Risk,,test\n",
    )
    .unwrap();
    let jsonl = dir.path().join("a.jsonl");
    std::fs::write(
        &jsonl,
        r#"{"id":"x1","title":"제목","body":"본문, 쉼표","category":"ESG Life","impact_type":"Risk","split":"test"}"#,
    )
    .unwrap();
    assert_eq!(Dataset::load(&csv).unwrap().articles, Dataset::load(&jsonl).unwrap().articles);
}
