//! Labeled article datasets and the two label taxonomies.
//!
//! Label and category values are stored as the NFC-normalized strings found
//! in the source file. Membership in the closed sets is checked by exact
//! string comparison, so `"Opportunity "` (trailing space) is not a label.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

pub mod fixture;

pub(crate) fn nfc(s: &str) -> String {
    s.nfc().collect()
}

macro_rules! closed_set {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }

            /// Exact match against the canonical spelling.
            pub fn parse(s: &str) -> Option<Self> {
                match s {
                    $($text => Some($name::$variant),)+
                    _ => None,
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

closed_set!(
    /// News category of an article.
    Category {
        SustainableEconomics => "Sustainable Economics",
        CorporateGovernance => "Corporate Governance",
        EnvironmentSociety => "Environment & Society",
        DisclosureEvaluation => "Disclosure & Evaluation",
        EsgLife => "ESG Life",
        Opinion => "Opinion",
    }
);

closed_set!(
    ImpactType {
        Opportunity => "Opportunity",
        Risk => "Risk",
        CannotDistinguish => "Cannot Distinguish",
    }
);

closed_set!(
    ImpactDuration {
        LessThan2Years => "Less than 2 years",
        TwoTo5Years => "2 to 5 years",
        MoreThan5Years => "More than 5 years",
    }
);

/// One of the two three-way classification tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    ImpactType,
    ImpactDuration,
}

impl Task {
    pub const ALL: [Task; 2] = [Task::ImpactType, Task::ImpactDuration];

    /// Ordered label set. The order is the option order used for scoring
    /// and for breaking probability ties.
    pub fn labels(self) -> Vec<&'static str> {
        match self {
            Task::ImpactType => ImpactType::ALL.iter().map(|l| l.as_str()).collect(),
            Task::ImpactDuration => ImpactDuration::ALL.iter().map(|l| l.as_str()).collect(),
        }
    }

    pub fn is_label(self, s: &str) -> bool {
        match self {
            Task::ImpactType => ImpactType::parse(s).is_some(),
            Task::ImpactDuration => ImpactDuration::parse(s).is_some(),
        }
    }

    pub fn field(self) -> &'static str {
        match self {
            Task::ImpactType => "impact_type",
            Task::ImpactDuration => "impact_duration",
        }
    }

    /// Human-readable name, as used in sweep tables.
    pub fn title(self) -> &'static str {
        match self {
            Task::ImpactType => "Impact Type",
            Task::ImpactDuration => "Impact Duration",
        }
    }

    /// Accepts the identifier (`impact_type`) or the title (`Impact Type`).
    pub fn parse(s: &str) -> Option<Task> {
        match s.trim() {
            "impact_type" | "Impact Type" => Some(Task::ImpactType),
            "impact_duration" | "Impact Duration" => Some(Task::ImpactDuration),
            _ => None,
        }
    }

    /// Task whose label set equals `options` exactly, in order.
    pub fn from_options(options: &[String]) -> Option<Task> {
        Task::ALL
            .into_iter()
            .find(|task| task.labels().iter().copied().eq(options.iter().map(String::as_str)))
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.field())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// One labeled (or unlabeled) news article.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Article {
    pub id: String,
    pub title: String,
    pub body: String,
    pub category: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub impact_type: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub impact_duration: Option<String>,
    pub split: Split,
}

impl Article {
    pub fn label(&self, task: Task) -> Option<&str> {
        match task {
            Task::ImpactType => self.impact_type.as_deref(),
            Task::ImpactDuration => self.impact_duration.as_deref(),
        }
    }

    /// Title and body joined by a newline; the text indexed and queried by
    /// retrieval.
    pub fn retrieval_text(&self) -> String {
        if self.title.is_empty() {
            self.body.clone()
        } else {
            format!("{}\n{}", self.title, self.body)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Dataset {
    pub name: String,
    pub articles: Vec<Article>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Jsonl,
    Csv,
}

impl Format {
    /// `.csv` is CSV; everything else is treated as JSONL.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Jsonl,
        }
    }
}

const FIELDS: [&str; 7] = [
    "id",
    "title",
    "body",
    "category",
    "impact_type",
    "impact_duration",
    "split",
];

impl Dataset {
    pub fn new(name: impl Into<String>, articles: Vec<Article>) -> Self {
        Dataset {
            name: name.into(),
            articles,
        }
    }

    pub fn len(&self) -> usize {
        self.articles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.articles.is_empty()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Article> {
        self.articles.iter().filter(move |a| a.split == split)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Dataset> {
        let path = path.as_ref();
        load_dataset(path, Format::from_path(path))
    }

    /// Canonical JSONL serialization: one object per line, fields in schema
    /// order, absent labels omitted.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for article in &self.articles {
            out.push_str(&serde_json::to_string(article).expect("article serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut writer = BufWriter::new(file);
        writer
            .write_all(self.to_jsonl().as_bytes())
            .and_then(|_| writer.flush())
            .map_err(|e| Error::io(path, e))
    }

    /// SHA-256 of the canonical serialization.
    pub fn content_hash(&self) -> String {
        crate::hashing::digest(self.to_jsonl().as_bytes())
    }

    /// Concatenates datasets, rejecting ids that appear in more than one.
    pub fn merge(name: impl Into<String>, parts: Vec<Dataset>) -> Result<Dataset> {
        let mut seen: HashMap<String, String> = HashMap::new();
        let mut articles = Vec::new();
        for part in parts {
            for article in part.articles {
                if let Some(other) = seen.insert(article.id.clone(), part.name.clone()) {
                    return Err(Error::Invalid(format!(
                        "article id `{}` appears in both `{}` and `{}`",
                        article.id, other, part.name
                    )));
                }
                articles.push(article);
            }
        }
        Ok(Dataset::new(name, articles))
    }
}

/// Loads a dataset, validating every record. Errors name the 1-based line
/// number and the offending field.
pub fn load_dataset(path: &Path, format: Format) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let records = match format {
        Format::Jsonl => read_jsonl(BufReader::new(file), path)?,
        Format::Csv => read_csv(file)?,
    };
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    build_dataset(name, records)
}

/// Parses JSONL text that is already in memory.
pub fn parse_jsonl(name: &str, text: &str) -> Result<Dataset> {
    let records = read_jsonl(text.as_bytes(), Path::new(name))?;
    build_dataset(name.to_string(), records)
}

fn build_dataset(name: String, records: Vec<(usize, Article)>) -> Result<Dataset> {
    let mut first_line: HashMap<String, usize> = HashMap::new();
    let mut articles = Vec::with_capacity(records.len());
    for (line, article) in records {
        if let Some(violation) = article_violations(&article).into_iter().next() {
            return Err(Error::Record {
                line,
                field: violation.field.to_string(),
                message: violation.kind.to_string(),
            });
        }
        if let Some(&first) = first_line.get(&article.id) {
            return Err(Error::DuplicateId {
                id: article.id,
                first_line: first,
                second_line: line,
            });
        }
        first_line.insert(article.id.clone(), line);
        articles.push(article);
    }
    Ok(Dataset { name, articles })
}

fn read_jsonl(reader: impl BufRead, path: &Path) -> Result<Vec<(usize, Article)>> {
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| Error::Record {
            line: line_no,
            field: "<record>".into(),
            message: format!("not valid JSON: {e}"),
        })?;
        let Value::Object(obj) = value else {
            return Err(Error::Record {
                line: line_no,
                field: "<record>".into(),
                message: "expected a JSON object".into(),
            });
        };
        records.push((line_no, article_from_object(&obj, line_no)?));
    }
    Ok(records)
}

fn json_field(obj: &Map<String, Value>, field: &str, line: usize) -> Result<Option<String>> {
    match obj.get(field) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(nfc(s))),
        Some(other) => Err(Error::Record {
            line,
            field: field.into(),
            message: format!("expected a string, found {other}"),
        }),
    }
}

fn article_from_object(obj: &Map<String, Value>, line: usize) -> Result<Article> {
    let required = |field: &str| -> Result<String> {
        json_field(obj, field, line)?.ok_or_else(|| Error::Record {
            line,
            field: field.into(),
            message: "missing required field".into(),
        })
    };
    let split_text = required("split")?;
    let split = Split::parse(&split_text).ok_or_else(|| Error::Record {
        line,
        field: "split".into(),
        message: format!("`{split_text}` is not one of train, test"),
    })?;
    Ok(Article {
        id: required("id")?,
        title: json_field(obj, "title", line)?.unwrap_or_default(),
        body: required("body")?,
        category: required("category")?,
        impact_type: json_field(obj, "impact_type", line)?,
        impact_duration: json_field(obj, "impact_duration", line)?,
        split,
    })
}

fn read_csv(reader: impl std::io::Read) -> Result<Vec<(usize, Article)>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Record {
            line: 1,
            field: "<header>".into(),
            message: e.to_string(),
        })?
        .clone();
    let column = |name: &str| headers.iter().position(|h| h.trim() == name);
    let columns: Vec<Option<usize>> = FIELDS.iter().map(|f| column(f)).collect();

    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| Error::Record {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            field: "<record>".into(),
            message: e.to_string(),
        })?;
        let line = row.position().map(|p| p.line() as usize).unwrap_or(0);
        let cell = |i: usize| -> Option<String> {
            columns[i]
                .and_then(|c| row.get(c))
                .filter(|s| !s.is_empty())
                .map(nfc)
        };
        let required = |i: usize| -> Result<String> {
            cell(i).ok_or_else(|| Error::Record {
                line,
                field: FIELDS[i].into(),
                message: "missing required field".into(),
            })
        };
        let split_text = required(6)?;
        let split = Split::parse(&split_text).ok_or_else(|| Error::Record {
            line,
            field: "split".into(),
            message: format!("`{split_text}` is not one of train, test"),
        })?;
        records.push((
            line,
            Article {
                id: required(0)?,
                title: cell(1).unwrap_or_default(),
                body: required(2)?,
                category: required(3)?,
                impact_type: cell(4),
                impact_duration: cell(5),
                split,
            },
        ));
    }
    Ok(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    EmptyId,
    DuplicateId,
    EmptyBody,
    UnknownCategory,
    UnknownLabel,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ViolationKind::EmptyId => "id is empty",
            ViolationKind::DuplicateId => "id is not unique",
            ViolationKind::EmptyBody => "body is empty",
            ViolationKind::UnknownCategory => "not a known category",
            ViolationKind::UnknownLabel => "not a known label",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub article_id: String,
    pub field: &'static str,
    pub kind: ViolationKind,
    pub value: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "article `{}`: field `{}` {} ({:?})",
            self.article_id, self.field, self.kind, self.value
        )
    }
}

fn article_violations(article: &Article) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |field, kind, value: &str| {
        out.push(Violation {
            article_id: article.id.clone(),
            field,
            kind,
            value: value.to_string(),
        })
    };
    if article.id.is_empty() {
        push("id", ViolationKind::EmptyId, "");
    }
    if article.body.trim().is_empty() {
        push("body", ViolationKind::EmptyBody, &article.body);
    }
    if Category::parse(&article.category).is_none() {
        push("category", ViolationKind::UnknownCategory, &article.category);
    }
    for task in Task::ALL {
        if let Some(label) = article.label(task) {
            if !task.is_label(label) {
                push(task.field(), ViolationKind::UnknownLabel, label);
            }
        }
    }
    out
}

/// Every invariant violation in the dataset. Empty means valid.
///
/// A repeated id yields one violation for that id, however many times it
/// repeats.
pub fn validate(dataset: &Dataset) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for article in &dataset.articles {
        *counts.entry(article.id.as_str()).or_default() += 1;
        out.extend(article_violations(article));
    }
    let mut reported = std::collections::HashSet::new();
    for article in &dataset.articles {
        if counts[article.id.as_str()] > 1 && reported.insert(article.id.as_str()) {
            out.push(Violation {
                article_id: article.id.clone(),
                field: "id",
                kind: ViolationKind::DuplicateId,
                value: article.id.clone(),
            });
        }
    }
    out
}

/// Category × label counts for one task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DatasetStats {
    pub task: Task,
    pub categories: Vec<String>,
    pub labels: Vec<String>,
    /// `counts[category][label]`.
    pub counts: Vec<Vec<usize>>,
    pub row_totals: Vec<usize>,
    pub col_totals: Vec<usize>,
    pub grand_total: usize,
    /// Articles without a label for the task.
    pub unlabeled: usize,
    /// Articles whose category or label is outside the taxonomy.
    pub invalid: usize,
}

impl DatasetStats {
    pub fn col_total(&self, label: &str) -> Option<usize> {
        let j = self.labels.iter().position(|l| l == label)?;
        Some(self.col_totals[j])
    }
}

pub fn stats(dataset: &Dataset, task: Task) -> DatasetStats {
    let categories: Vec<String> = Category::ALL.iter().map(|c| c.to_string()).collect();
    let labels: Vec<String> = task.labels().into_iter().map(String::from).collect();
    let mut counts = vec![vec![0usize; labels.len()]; categories.len()];
    let (mut unlabeled, mut invalid) = (0, 0);

    for article in &dataset.articles {
        let Some(label) = article.label(task) else {
            unlabeled += 1;
            continue;
        };
        let row = categories.iter().position(|c| *c == article.category);
        let col = labels.iter().position(|l| l == label);
        match (row, col) {
            (Some(i), Some(j)) => counts[i][j] += 1,
            _ => invalid += 1,
        }
    }

    let row_totals: Vec<usize> = counts.iter().map(|r| r.iter().sum()).collect();
    let col_totals: Vec<usize> = (0..labels.len())
        .map(|j| counts.iter().map(|r| r[j]).sum())
        .collect();
    let grand_total = row_totals.iter().sum();
    DatasetStats {
        task,
        categories,
        labels,
        counts,
        row_totals,
        col_totals,
        grand_total,
        unlabeled,
        invalid,
    }
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let first = self
            .categories
            .iter()
            .map(|c| c.chars().count())
            .max()
            .unwrap_or(8)
            .max("Total".len());
        let widths: Vec<usize> = self.labels.iter().map(|l| l.chars().count().max(5)).collect();

        write!(f, "{:<first$}", "Category")?;
        for (label, w) in self.labels.iter().zip(&widths) {
            write!(f, "  {label:>w$}")?;
        }
        writeln!(f, "  {:>5}", "Total")?;
        for (i, category) in self.categories.iter().enumerate() {
            write!(f, "{category:<first$}")?;
            for (count, w) in self.counts[i].iter().zip(&widths) {
                write!(f, "  {count:>w$}")?;
            }
            writeln!(f, "  {:>5}", self.row_totals[i])?;
        }
        write!(f, "{:<first$}", "Total")?;
        for (count, w) in self.col_totals.iter().zip(&widths) {
            write!(f, "  {count:>w$}")?;
        }
        writeln!(f, "  {:>5}", self.grand_total)?;
        if self.unlabeled > 0 {
            writeln!(f, "unlabeled for {}: {}", self.task, self.unlabeled)?;
        }
        if self.invalid > 0 {
            writeln!(f, "invalid category or label: {}", self.invalid)?;
        }
        Ok(())
    }
}
