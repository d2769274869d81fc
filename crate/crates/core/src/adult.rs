//! UCI Adult census data: download, cleaning, and the label-proportion task.
//!
//! Cleaning drops `workclass` and `fnlwgt`, replaces `capital-gain` and
//! `capital-loss` by their difference `capital-change`, and collapses the
//! levels of `race`, `education`, `marital-status` and `native-country`
//! through the fixed maps in [`grouping_maps`]. Those maps are conventions of
//! this crate; accuracies obtained with them are comparable to, not identical
//! with, published numbers for other groupings.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datagen::{estimate_llp_statistics, LabeledSample};
use crate::error::{Error, Result};
use crate::model::FeatureMatrix;
use crate::objective::WeakDataset;
use crate::transition::TransitionMatrix;

pub const DEFAULT_SOURCE_URL: &str =
    "https://archive.ics.uci.edu/ml/machine-learning-databases/adult";
pub const TRAIN_FILE: &str = "adult.data";
pub const TEST_FILE: &str = "adult.test";
/// Records in the UCI train and test files together.
pub const EXPECTED_RECORDS: usize = 48842;

/// Column names of the raw files, in order.
pub const RAW_COLUMNS: [&str; 15] = [
    "age",
    "workclass",
    "fnlwgt",
    "education",
    "education-num",
    "marital-status",
    "occupation",
    "relationship",
    "race",
    "sex",
    "capital-gain",
    "capital-loss",
    "hours-per-week",
    "native-country",
    "income",
];

/// Feature attributes used for every task.
pub const FEATURES: [&str; 7] = [
    "age",
    "education-num",
    "race",
    "sex",
    "capital-change",
    "hours-per-week",
    "native-country",
];

// ---------------------------------------------------------------------------
// fetch

/// Paths of the cached raw files.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FetchedAdult {
    pub train: PathBuf,
    pub test: PathBuf,
    pub train_sha256: String,
    pub test_sha256: String,
    /// Whether anything was downloaded.
    pub downloaded: bool,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn download(url: &str) -> Result<Vec<u8>> {
    let failure = |reason: String| Error::NetworkFailure {
        url: url.to_string(),
        reason,
    };
    if let Some(path) = url.strip_prefix("file://") {
        return std::fs::read(path).map_err(|e| failure(e.to_string()));
    }
    let mut resp = ureq::get(url).call().map_err(|e| failure(e.to_string()))?;
    resp.body_mut()
        .with_config()
        .limit(64 * 1024 * 1024)
        .read_to_vec()
        .map_err(|e| failure(e.to_string()))
}

/// Returns the cached file, downloading it when absent. A digest file
/// `<name>.sha256` is written next to each download and checked on every
/// later use; `expected` additionally pins the digest.
fn fetch_one(base: &str, name: &str, dir: &Path, expected: Option<&str>) -> Result<(PathBuf, String, bool)> {
    let path = dir.join(name);
    let digest_path = dir.join(format!("{name}.sha256"));
    if path.exists() && digest_path.exists() {
        let bytes = std::fs::read(&path)?;
        let found = sha256_hex(&bytes);
        let recorded = std::fs::read_to_string(&digest_path)?.trim().to_string();
        let want = expected.map(str::to_string).unwrap_or(recorded);
        if found != want {
            return Err(Error::ChecksumMismatch {
                path: path.display().to_string(),
                expected: want,
                found,
            });
        }
        return Ok((path, found, false));
    }
    let url = format!("{}/{name}", base.trim_end_matches('/'));
    let bytes = download(&url)?;
    let found = sha256_hex(&bytes);
    if let Some(want) = expected {
        if found != want {
            return Err(Error::ChecksumMismatch {
                path: url,
                expected: want.to_string(),
                found,
            });
        }
    }
    std::fs::create_dir_all(dir)?;
    std::fs::write(&path, &bytes)?;
    std::fs::write(&digest_path, format!("{found}\n"))?;
    Ok((path, found, true))
}

/// Makes sure both raw files are cached under `cache_dir`. Idempotent: a
/// verified cache is used without touching the network.
pub fn fetch(source_url: &str, cache_dir: &Path) -> Result<FetchedAdult> {
    fetch_pinned(source_url, cache_dir, None)
}

/// As [`fetch`], with optional pinned `(train, test)` SHA-256 digests.
pub fn fetch_pinned(
    source_url: &str,
    cache_dir: &Path,
    pinned: Option<(&str, &str)>,
) -> Result<FetchedAdult> {
    let (train, train_sha256, d1) = fetch_one(source_url, TRAIN_FILE, cache_dir, pinned.map(|p| p.0))?;
    let (test, test_sha256, d2) = fetch_one(source_url, TEST_FILE, cache_dir, pinned.map(|p| p.1))?;
    Ok(FetchedAdult {
        train,
        test,
        train_sha256,
        test_sha256,
        downloaded: d1 || d2,
    })
}

// ---------------------------------------------------------------------------
// raw parsing

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// One raw record; `None` marks a missing value (`?`).
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub split: Split,
    pub fields: Vec<Option<String>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawAdult {
    pub records: Vec<RawRecord>,
}

impl RawAdult {
    pub fn load(files: &FetchedAdult) -> Result<Self> {
        let mut records = parse_raw(std::fs::File::open(&files.train)?, Split::Train)?;
        records.extend(parse_raw(std::fs::File::open(&files.test)?, Split::Test)?);
        Ok(Self { records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Parses one UCI file. Blank lines and `|` comment lines are skipped, fields
/// are trimmed, and the trailing `.` on test-file labels is removed.
pub fn parse_raw<R: Read>(mut input: R, split: Split) -> Result<Vec<RawRecord>> {
    let mut text = String::new();
    input.read_to_string(&mut text)?;
    let mut out = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('|') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != RAW_COLUMNS.len() {
            return Err(Error::SchemaMismatch(format!(
                "line {}: expected {} fields, found {}",
                line_no + 1,
                RAW_COLUMNS.len(),
                fields.len()
            )));
        }
        let fields = fields
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let f = if i == RAW_COLUMNS.len() - 1 { f.trim_end_matches('.') } else { f };
                (f != "?" && !f.is_empty()).then(|| f.to_string())
            })
            .collect();
        out.push(RawRecord { split, fields });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// level maps

const EDUCATION_MAP: [(&str, &str); 16] = [
    ("Preschool", "primary"),
    ("1st-4th", "primary"),
    ("5th-6th", "primary"),
    ("7th-8th", "primary"),
    ("9th", "some-high-school"),
    ("10th", "some-high-school"),
    ("11th", "some-high-school"),
    ("12th", "some-high-school"),
    ("HS-grad", "hs-grad"),
    ("Some-college", "some-college"),
    ("Assoc-voc", "associate"),
    ("Assoc-acdm", "associate"),
    ("Bachelors", "bachelors"),
    ("Masters", "masters"),
    ("Prof-school", "professional-doctorate"),
    ("Doctorate", "professional-doctorate"),
];
const EDUCATION_LEVELS: [&str; 8] = [
    "primary",
    "some-high-school",
    "hs-grad",
    "some-college",
    "associate",
    "bachelors",
    "masters",
    "professional-doctorate",
];

const MARITAL_MAP: [(&str, &str); 7] = [
    ("Married-civ-spouse", "married"),
    ("Married-AF-spouse", "married"),
    ("Married-spouse-absent", "married"),
    ("Never-married", "never-married"),
    ("Divorced", "previously-married"),
    ("Separated", "previously-married"),
    ("Widowed", "previously-married"),
];
const MARITAL_LEVELS: [&str; 3] = ["married", "never-married", "previously-married"];

const RACE_MAP: [(&str, &str); 5] = [
    ("White", "white"),
    ("Black", "black"),
    ("Asian-Pac-Islander", "other"),
    ("Amer-Indian-Eskimo", "other"),
    ("Other", "other"),
];
const RACE_LEVELS: [&str; 3] = ["white", "black", "other"];

const COUNTRY_MAP: [(&str, &str); 41] = [
    ("United-States", "north-america"),
    ("Canada", "north-america"),
    ("Outlying-US(Guam-USVI-etc)", "north-america"),
    ("Mexico", "latin-america"),
    ("Puerto-Rico", "latin-america"),
    ("Cuba", "latin-america"),
    ("Jamaica", "latin-america"),
    ("Honduras", "latin-america"),
    ("Dominican-Republic", "latin-america"),
    ("Ecuador", "latin-america"),
    ("Columbia", "latin-america"),
    ("Guatemala", "latin-america"),
    ("Nicaragua", "latin-america"),
    ("El-Salvador", "latin-america"),
    ("Haiti", "latin-america"),
    ("Peru", "latin-america"),
    ("Trinadad&Tobago", "latin-america"),
    ("India", "asia"),
    ("Japan", "asia"),
    ("China", "asia"),
    ("Iran", "asia"),
    ("Philippines", "asia"),
    ("Vietnam", "asia"),
    ("Laos", "asia"),
    ("Taiwan", "asia"),
    ("Thailand", "asia"),
    ("Cambodia", "asia"),
    ("Hong", "asia"),
    ("South", "asia"),
    ("England", "europe"),
    ("Germany", "europe"),
    ("Italy", "europe"),
    ("Poland", "europe"),
    ("Portugal", "europe"),
    ("France", "europe"),
    ("Greece", "europe"),
    ("Ireland", "europe"),
    ("Yugoslavia", "europe"),
    ("Hungary", "europe"),
    ("Scotland", "europe"),
    ("Holand-Netherlands", "europe"),
];
const COUNTRY_LEVELS: [&str; 4] = ["north-america", "latin-america", "asia", "europe"];

const OCCUPATION_LEVELS: [&str; 14] = [
    "Tech-support",
    "Craft-repair",
    "Other-service",
    "Sales",
    "Exec-managerial",
    "Prof-specialty",
    "Handlers-cleaners",
    "Machine-op-inspct",
    "Adm-clerical",
    "Farming-fishing",
    "Transport-moving",
    "Priv-house-serv",
    "Protective-serv",
    "Armed-Forces",
];
const RELATIONSHIP_LEVELS: [&str; 6] = [
    "Wife",
    "Own-child",
    "Husband",
    "Not-in-family",
    "Other-relative",
    "Unmarried",
];
const SEX_LEVELS: [&str; 2] = ["Female", "Male"];
const INCOME_LEVELS: [&str; 2] = ["<=50K", ">50K"];

fn level_map(attr: &str) -> Option<&'static [(&'static str, &'static str)]> {
    match attr {
        "education" => Some(&EDUCATION_MAP),
        "marital-status" => Some(&MARITAL_MAP),
        "race" => Some(&RACE_MAP),
        "native-country" => Some(&COUNTRY_MAP),
        _ => None,
    }
}

/// The level-grouping maps applied during cleaning, for run manifests.
pub fn grouping_maps() -> BTreeMap<String, BTreeMap<String, String>> {
    ["education", "marital-status", "race", "native-country"]
        .into_iter()
        .map(|a| {
            let map = level_map(a)
                .unwrap()
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect();
            (a.to_string(), map)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// schema

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttributeKind {
    Numeric,
    Categorical { levels: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub name: String,
    pub kind: AttributeKind,
}

/// Attributes of the cleaned table plus the roles of a task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularSchema {
    pub attributes: Vec<AttributeSpec>,
    pub features: Vec<String>,
    pub target: String,
    pub grouping: String,
}

fn categorical(name: &str, levels: &[&str]) -> AttributeSpec {
    AttributeSpec {
        name: name.to_string(),
        kind: AttributeKind::Categorical {
            levels: levels.iter().map(|s| s.to_string()).collect(),
        },
    }
}

fn numeric(name: &str) -> AttributeSpec {
    AttributeSpec {
        name: name.to_string(),
        kind: AttributeKind::Numeric,
    }
}

/// Attributes of the cleaned Adult table, in column order.
pub fn clean_attributes() -> Vec<AttributeSpec> {
    vec![
        numeric("age"),
        categorical("education", &EDUCATION_LEVELS),
        numeric("education-num"),
        categorical("marital-status", &MARITAL_LEVELS),
        categorical("occupation", &OCCUPATION_LEVELS),
        categorical("relationship", &RELATIONSHIP_LEVELS),
        categorical("race", &RACE_LEVELS),
        categorical("sex", &SEX_LEVELS),
        numeric("capital-change"),
        numeric("hours-per-week"),
        categorical("native-country", &COUNTRY_LEVELS),
        categorical("income", &INCOME_LEVELS),
    ]
}

impl TabularSchema {
    /// The Adult task predicting `target` from group-level proportions over
    /// `grouping`, with the standard seven features.
    pub fn adult(target: &str, grouping: &str) -> Result<Self> {
        let schema = Self {
            attributes: clean_attributes(),
            features: FEATURES.iter().map(|s| s.to_string()).collect(),
            target: target.to_string(),
            grouping: grouping.to_string(),
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.target == self.grouping {
            return Err(Error::SchemaMismatch(format!(
                "target and grouping are both {:?}",
                self.target
            )));
        }
        for role in [&self.target, &self.grouping] {
            match self.attribute(role) {
                Some(AttributeSpec { kind: AttributeKind::Categorical { .. }, .. }) => {}
                Some(_) => {
                    return Err(Error::SchemaMismatch(format!("{role:?} is not categorical")))
                }
                None => return Err(Error::SchemaMismatch(format!("unknown attribute {role:?}"))),
            }
        }
        for f in &self.features {
            if self.attribute(f).is_none() {
                return Err(Error::SchemaMismatch(format!("unknown feature {f:?}")));
            }
            if f == &self.target || f == &self.grouping {
                return Err(Error::SchemaMismatch(format!(
                    "feature {f:?} would leak the target or grouping"
                )));
            }
        }
        Ok(())
    }

    pub fn attribute(&self, name: &str) -> Option<&AttributeSpec> {
        self.attributes.iter().find(|a| a.name == name)
    }

    fn used(&self) -> Vec<&str> {
        let mut used: Vec<&str> = self.features.iter().map(String::as_str).collect();
        used.push(&self.target);
        used.push(&self.grouping);
        used
    }

    fn levels(&self, name: &str) -> &[String] {
        match &self.attribute(name).expect("validated attribute").kind {
            AttributeKind::Categorical { levels } => levels,
            AttributeKind::Numeric => &[],
        }
    }
}

// ---------------------------------------------------------------------------
// cleaning

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Num(f64),
    Cat(String),
    Missing,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CleanRow {
    pub split: Split,
    pub values: Vec<Value>,
}

/// Cleaned table with the columns of [`clean_attributes`].
#[derive(Debug, Clone, PartialEq)]
pub struct CleanTable {
    pub attributes: Vec<AttributeSpec>,
    pub rows: Vec<CleanRow>,
}

fn raw_index(name: &str) -> usize {
    RAW_COLUMNS.iter().position(|c| *c == name).expect("known raw column")
}

fn parse_num(s: &str, col: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| Error::SchemaMismatch(format!("{col}: {s:?} is not a number")))
}

fn clean_value(rec: &RawRecord, attr: &AttributeSpec) -> Result<Value> {
    let get = |col: &str| rec.fields[raw_index(col)].as_deref();
    if attr.name == "capital-change" {
        return Ok(match (get("capital-gain"), get("capital-loss")) {
            (Some(g), Some(l)) => Value::Num(parse_num(g, "capital-gain")? - parse_num(l, "capital-loss")?),
            _ => Value::Missing,
        });
    }
    let Some(raw) = get(&attr.name) else {
        return Ok(Value::Missing);
    };
    match &attr.kind {
        AttributeKind::Numeric => Ok(Value::Num(parse_num(raw, &attr.name)?)),
        AttributeKind::Categorical { levels } => {
            let mapped = match level_map(&attr.name) {
                Some(map) => map
                    .iter()
                    .find(|(k, _)| *k == raw)
                    .map(|(_, v)| *v)
                    .ok_or_else(|| {
                        Error::SchemaMismatch(format!("{}: unknown level {raw:?}", attr.name))
                    })?,
                None => raw,
            };
            if !levels.iter().any(|l| l == mapped) {
                return Err(Error::SchemaMismatch(format!(
                    "{}: unknown level {mapped:?}",
                    attr.name
                )));
            }
            Ok(Value::Cat(mapped.to_string()))
        }
    }
}

/// Cleans raw records for `schema`: derives `capital-change`, applies the
/// level maps, and drops rows missing any feature, target or grouping value.
pub fn preprocess(raw: &RawAdult, schema: &TabularSchema) -> Result<CleanTable> {
    schema.validate()?;
    let attributes = clean_attributes();
    let used: Vec<usize> = schema
        .used()
        .iter()
        .map(|u| attributes.iter().position(|a| a.name == *u).expect("validated"))
        .collect();
    let mut rows = Vec::with_capacity(raw.len());
    for rec in &raw.records {
        if rec.fields.len() != RAW_COLUMNS.len() {
            return Err(Error::SchemaMismatch(format!(
                "record has {} fields, expected {}",
                rec.fields.len(),
                RAW_COLUMNS.len()
            )));
        }
        let values = attributes
            .iter()
            .map(|a| clean_value(rec, a))
            .collect::<Result<Vec<_>>>()?;
        if used.iter().any(|&i| values[i] == Value::Missing) {
            continue;
        }
        rows.push(CleanRow {
            split: rec.split,
            values,
        });
    }
    Ok(CleanTable { attributes, rows })
}

impl CleanTable {
    fn column(&self, name: &str) -> Result<usize> {
        self.attributes
            .iter()
            .position(|a| a.name == name)
            .ok_or_else(|| Error::SchemaMismatch(format!("no column {name:?}")))
    }

    /// Deterministic CSV rendering, used for the cache and the round-trip check.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("split");
        for a in &self.attributes {
            out.push(',');
            out.push_str(&a.name);
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(match row.split {
                Split::Train => "train",
                Split::Test => "test",
            });
            for v in &row.values {
                out.push(',');
                match v {
                    Value::Num(x) => write!(out, "{x:?}").unwrap(),
                    Value::Cat(s) => out.push_str(s),
                    Value::Missing => out.push('?'),
                }
            }
            out.push('\n');
        }
        out
    }
}

// ---------------------------------------------------------------------------
// task construction

/// Training data with group observations, plus evaluation data.
#[derive(Debug, Clone)]
pub struct AdultTask {
    /// Features paired with group indices and the label-proportion matrix.
    pub train: WeakDataset,
    /// The same training rows with their true targets, for the
    /// direct-supervision baseline only.
    pub direct_train: LabeledSample,
    /// Held-out rows with true targets, for accuracy evaluation only.
    pub test: LabeledSample,
    pub feature_names: Vec<String>,
    pub class_levels: Vec<String>,
    pub group_levels: Vec<String>,
}

struct Encoder {
    // per feature: (column, numeric (mean, std) or categorical levels)
    columns: Vec<(usize, Encoding)>,
    names: Vec<String>,
}

enum Encoding {
    Standardize { mean: f64, std: f64 },
    OneHot(Vec<String>),
}

impl Encoder {
    fn fit(table: &CleanTable, schema: &TabularSchema, train_rows: &[&CleanRow]) -> Result<Self> {
        let mut columns = Vec::new();
        let mut names = Vec::new();
        for f in &schema.features {
            let col = table.column(f)?;
            match &table.attributes[col].kind {
                AttributeKind::Numeric => {
                    let vals: Vec<f64> = train_rows
                        .iter()
                        .map(|r| match r.values[col] {
                            Value::Num(x) => x,
                            _ => unreachable!("missing rows were dropped"),
                        })
                        .collect();
                    let n = vals.len().max(1) as f64;
                    let mean = vals.iter().sum::<f64>() / n;
                    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                    let std = if var > 0.0 { var.sqrt() } else { 1.0 };
                    columns.push((col, Encoding::Standardize { mean, std }));
                    names.push(f.clone());
                }
                AttributeKind::Categorical { levels } => {
                    names.extend(levels.iter().map(|l| format!("{f}={l}")));
                    columns.push((col, Encoding::OneHot(levels.clone())));
                }
            }
        }
        Ok(Self { columns, names })
    }

    fn encode(&self, rows: &[&CleanRow]) -> Result<FeatureMatrix> {
        let mut data = Vec::with_capacity(rows.len() * self.names.len());
        for r in rows {
            for (col, enc) in &self.columns {
                match (enc, &r.values[*col]) {
                    (Encoding::Standardize { mean, std }, Value::Num(x)) => data.push((x - mean) / std),
                    (Encoding::OneHot(levels), Value::Cat(s)) => {
                        data.extend(levels.iter().map(|l| if l == s { 1.0 } else { 0.0 }))
                    }
                    _ => return Err(Error::SchemaMismatch("value kind does not match schema".into())),
                }
            }
        }
        FeatureMatrix::new(rows.len(), self.names.len(), data)
    }
}

fn level_indices(rows: &[&CleanRow], col: usize, levels: &[String]) -> Result<Vec<usize>> {
    rows.iter()
        .map(|r| match &r.values[col] {
            Value::Cat(s) => levels
                .iter()
                .position(|l| l == s)
                .ok_or_else(|| Error::SchemaMismatch(format!("unknown level {s:?}"))),
            _ => Err(Error::SchemaMismatch("expected a categorical value".into())),
        })
        .collect()
}

/// Builds the label-proportion task: groups by `schema.grouping`, estimates
/// `p(Z | group)` and `p(group)` on the training split, and converts them to
/// `p(Y | Z)` by Bayes' rule. Numeric features are standardized with training
/// statistics and categorical features are one-hot encoded.
pub fn build_llp_task(table: &CleanTable, schema: &TabularSchema) -> Result<AdultTask> {
    schema.validate()?;
    let train_rows: Vec<&CleanRow> = table.rows.iter().filter(|r| r.split == Split::Train).collect();
    let test_rows: Vec<&CleanRow> = table.rows.iter().filter(|r| r.split == Split::Test).collect();
    if train_rows.is_empty() || test_rows.is_empty() {
        return Err(Error::SchemaMismatch("both splits need at least one row".into()));
    }
    let class_levels = schema.levels(&schema.target).to_vec();
    let group_levels = schema.levels(&schema.grouping).to_vec();
    let target_col = table.column(&schema.target)?;
    let group_col = table.column(&schema.grouping)?;

    let train_targets = level_indices(&train_rows, target_col, &class_levels)?;
    let train_groups = level_indices(&train_rows, group_col, &group_levels)?;
    let test_targets = level_indices(&test_rows, target_col, &class_levels)?;

    let (proportions, priors) =
        estimate_llp_statistics(&train_targets, &train_groups, class_levels.len(), group_levels.len())?;
    let transition = TransitionMatrix::llp_from_proportions(&proportions, &priors)?;

    let encoder = Encoder::fit(table, schema, &train_rows)?;
    let train_x = encoder.encode(&train_rows)?;
    let test_x = encoder.encode(&test_rows)?;
    let train = WeakDataset::new(
        format!("{}-by-{}", schema.target, schema.grouping),
        train_x.clone(),
        train_groups,
        transition,
    )?;
    Ok(AdultTask {
        train,
        direct_train: LabeledSample {
            features: train_x,
            targets: train_targets,
        },
        test: LabeledSample {
            features: test_x,
            targets: test_targets,
        },
        feature_names: encoder.names,
        class_levels,
        group_levels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const SAMPLE_TRAIN: &str = "\
39, State-gov, 77516, Bachelors, 13, Never-married, Adm-clerical, Not-in-family, White, Male, 2174, 0, 40, United-States, <=50K
50, Self-emp-not-inc, 83311, Bachelors, 13, Married-civ-spouse, Exec-managerial, Husband, White, Male, 0, 0, 13, United-States, <=50K
38, Private, 215646, HS-grad, 9, Divorced, Handlers-cleaners, Not-in-family, White, Male, 0, 0, 40, United-States, <=50K
53, Private, 234721, 11th, 7, Married-civ-spouse, Handlers-cleaners, Husband, Black, Male, 0, 0, 40, United-States, <=50K
28, Private, 338409, Bachelors, 13, Married-civ-spouse, Prof-specialty, Wife, Black, Female, 0, 0, 40, Cuba, <=50K
37, Private, 284582, Masters, 14, Married-civ-spouse, Exec-managerial, Wife, White, Female, 0, 0, 40, United-States, <=50K
49, Private, 160187, 9th, 5, Married-spouse-absent, Other-service, Not-in-family, Black, Female, 0, 0, 16, Jamaica, <=50K
52, Self-emp-not-inc, 209642, HS-grad, 9, Married-civ-spouse, Exec-managerial, Husband, White, Male, 0, 0, 45, United-States, >50K
31, Private, 45781, Masters, 14, Never-married, Prof-specialty, Not-in-family, White, Female, 14084, 0, 50, United-States, >50K
42, Private, 159449, Bachelors, 13, Married-civ-spouse, Exec-managerial, Husband, White, Male, 5178, 0, 40, United-States, >50K
54, ?, 180211, Some-college, 10, Married-civ-spouse, ?, Husband, Asian-Pac-Islander, Male, 0, 0, 60, South, >50K
";

    pub(crate) const SAMPLE_TEST: &str = "\
|1x3 Cross validator
25, Private, 226802, 11th, 7, Never-married, Machine-op-inspct, Own-child, Black, Male, 0, 0, 40, United-States, <=50K.
38, Private, 89814, HS-grad, 9, Married-civ-spouse, Farming-fishing, Husband, White, Male, 0, 0, 50, United-States, <=50K.
28, Local-gov, 336951, Assoc-acdm, 12, Married-civ-spouse, Protective-serv, Husband, White, Male, 0, 0, 40, United-States, >50K.
44, Private, 160323, Some-college, 10, Married-civ-spouse, Machine-op-inspct, Husband, Black, Male, 7688, 0, 40, United-States, >50K.
";

    fn sample() -> RawAdult {
        let mut records = parse_raw(SAMPLE_TRAIN.as_bytes(), Split::Train).unwrap();
        records.extend(parse_raw(SAMPLE_TEST.as_bytes(), Split::Test).unwrap());
        RawAdult { records }
    }

    #[test]
    fn parse_handles_test_file_quirks() {
        let raw = sample();
        assert_eq!(raw.len(), 15);
        let last = raw.records.last().unwrap();
        assert_eq!(last.split, Split::Test);
        assert_eq!(last.fields[14].as_deref(), Some(">50K"));
        assert_eq!(raw.records[10].fields[6], None);
        assert!(parse_raw("1, 2, 3\n".as_bytes(), Split::Train).is_err());
    }

    #[test]
    fn capital_change_and_grouping() {
        let schema = TabularSchema::adult("income", "education").unwrap();
        let table = preprocess(&sample(), &schema).unwrap();
        let cc = table.column("capital-change").unwrap();
        assert_eq!(table.rows[0].values[cc], Value::Num(2174.0));
        let raw = RawAdult {
            records: parse_raw(
                "30, Private, 1, HS-grad, 9, Widowed, Sales, Unmarried, White, Female, 5000, 1000, 40, Mexico, <=50K\n".as_bytes(),
                Split::Train,
            )
            .unwrap(),
        };
        let t = preprocess(&raw, &schema).unwrap();
        assert_eq!(t.rows[0].values[cc], Value::Num(4000.0));
        let ms = t.column("marital-status").unwrap();
        assert_eq!(t.rows[0].values[ms], Value::Cat("previously-married".into()));
        let nc = t.column("native-country").unwrap();
        assert_eq!(t.rows[0].values[nc], Value::Cat("latin-america".into()));
        assert!(t.attributes.iter().all(|a| a.name != "workclass" && a.name != "fnlwgt"));
    }

    #[test]
    fn level_counts() {
        let count = |name: &str| match &clean_attributes().into_iter().find(|a| a.name == name).unwrap().kind {
            AttributeKind::Categorical { levels } => levels.len(),
            AttributeKind::Numeric => 0,
        };
        assert_eq!(count("income"), 2);
        assert_eq!(count("marital-status"), 3);
        assert_eq!(count("education"), 8);
        assert_eq!(count("occupation"), 14);
        assert_eq!(count("relationship"), 6);
        // every raw level has a destination among the grouped levels
        for (attr, map) in grouping_maps() {
            let levels = match clean_attributes().into_iter().find(|a| a.name == attr).unwrap().kind {
                AttributeKind::Categorical { levels } => levels,
                AttributeKind::Numeric => unreachable!(),
            };
            for v in map.values() {
                assert!(levels.contains(v), "{attr}: {v}");
            }
        }
    }

    #[test]
    fn missing_values_drop_rows_only_when_used() {
        // row 10 is missing workclass (not used) and occupation
        let by_education = preprocess(&sample(), &TabularSchema::adult("income", "education").unwrap()).unwrap();
        assert_eq!(by_education.rows.len(), 15);
        let by_occupation = preprocess(&sample(), &TabularSchema::adult("income", "occupation").unwrap()).unwrap();
        assert_eq!(by_occupation.rows.len(), 14);
    }

    #[test]
    fn schema_guards() {
        assert!(TabularSchema::adult("income", "income").is_err());
        assert!(TabularSchema::adult("income", "age").is_err());
        assert!(TabularSchema::adult("salary", "education").is_err());
        let mut s = TabularSchema::adult("income", "education").unwrap();
        s.features.push("income".into());
        assert!(s.validate().is_err());
    }

    #[test]
    fn preprocess_is_deterministic() {
        let schema = TabularSchema::adult("income", "relationship").unwrap();
        let a = preprocess(&sample(), &schema).unwrap().to_csv();
        let b = preprocess(&sample(), &schema).unwrap().to_csv();
        assert_eq!(a, b);
        assert!(a.starts_with("split,age,education,education-num"));
    }

    #[test]
    fn llp_task_shapes_and_no_leakage() {
        let schema = TabularSchema::adult("income", "relationship").unwrap();
        let table = preprocess(&sample(), &schema).unwrap();
        // the small sample does not cover all six relationships in training
        let err = build_llp_task(&table, &schema).unwrap_err();
        assert!(matches!(err, Error::EmptyGroup { .. }));

        let schema = TabularSchema::adult("income", "marital-status").unwrap();
        let table = preprocess(&sample(), &schema).unwrap();
        let task = build_llp_task(&table, &schema).unwrap();
        assert_eq!(task.train.transition().n_y(), 3);
        assert_eq!(task.train.transition().n_z(), 2);
        assert_eq!(task.test.len(), 4);
        // 4 numeric + race(3) + sex(2) + country(4)
        assert_eq!(task.feature_names.len(), 13);
        assert!(task.feature_names.iter().all(|f| !f.starts_with("income") ));
        // standardized numeric columns have zero training mean
        let age_mean: f64 = task.train.features().rows().map(|r| r[0]).sum::<f64>() / task.train.len() as f64;
        assert!(age_mean.abs() < 1e-12);
    }

    #[test]
    fn fetch_uses_verified_cache() {
        let dir = tempfile::tempdir().unwrap();
        let src = tempfile::tempdir().unwrap();
        std::fs::write(src.path().join(TRAIN_FILE), SAMPLE_TRAIN).unwrap();
        std::fs::write(src.path().join(TEST_FILE), SAMPLE_TEST).unwrap();
        let url = format!("file://{}", src.path().display());
        let first = fetch(&url, dir.path()).unwrap();
        assert!(first.downloaded);
        assert_eq!(RawAdult::load(&first).unwrap().len(), 15);
        // cache hit: the source is gone, nothing is downloaded
        let second = fetch("http://127.0.0.1:9/unreachable", dir.path()).unwrap();
        assert!(!second.downloaded);
        assert_eq!(second.train_sha256, first.train_sha256);
        // corrupt the cache
        std::fs::write(dir.path().join(TRAIN_FILE), "garbage").unwrap();
        assert!(matches!(
            fetch("http://127.0.0.1:9/unreachable", dir.path()),
            Err(Error::ChecksumMismatch { .. })
        ));
    }

    #[test]
    fn fetch_failure_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let err = fetch("http://127.0.0.1:9", dir.path()).unwrap_err();
        assert!(matches!(err, Error::NetworkFailure { .. }));
        let err = fetch_pinned(
            &format!("file://{}", dir.path().display()),
            dir.path(),
            None,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NetworkFailure { .. }));
    }
}
