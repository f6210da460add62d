//! Corpus loading, validation, sampling, and perturbation.
//!
//! A corpus is a newline-delimited file of multiple-choice records. Each
//! record is validated, optionally down-sampled without replacement, and
//! then perturbed into condition-specific instances: a target answer (the
//! ground truth or a safe abstention), a seeded ordering of the incorrect
//! distractors, and for the flexibility conditions the option introduced at
//! the second turn.

use std::collections::{BTreeMap, HashSet};
use std::io::BufRead;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::{derive_seed, rng_from};

/// Reserved label for the abstention choice. Distinct from option labels,
/// which are single uppercase letters.
pub const ABSTENTION_LABEL: &str = "NA";
/// Text of the abstention choice as offered in prompts.
pub const ABSTENTION_TEXT: &str = "None of the Above";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetTag {
    Medqa,
    Medmcqa,
    JamaCc,
    Custom,
}

impl DatasetTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            DatasetTag::Medqa => "medqa",
            DatasetTag::Medmcqa => "medmcqa",
            DatasetTag::JamaCc => "jama_cc",
            DatasetTag::Custom => "custom",
        }
    }

    /// Distractor counts accepted for records of this dataset. Two
    /// distractors (three options) are tolerated only for custom data.
    fn distractor_range(&self) -> std::ops::RangeInclusive<usize> {
        match self {
            DatasetTag::Custom => 2..=4,
            _ => 3..=4,
        }
    }
}

impl std::str::FromStr for DatasetTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "medqa" => Ok(DatasetTag::Medqa),
            "medmcqa" => Ok(DatasetTag::Medmcqa),
            "jama_cc" => Ok(DatasetTag::JamaCc),
            "custom" => Ok(DatasetTag::Custom),
            other => Err(format!("unknown dataset tag '{other}'")),
        }
    }
}

impl std::fmt::Display for DatasetTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One source question: stem, labeled options, ground truth, dataset tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McqaRecord {
    pub id: String,
    pub question: String,
    /// Label -> option text, ordered by label.
    pub options: BTreeMap<String, String>,
    pub truth_label: String,
    pub dataset: DatasetTag,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, serde_json::Value>,
}

impl McqaRecord {
    /// Labels of the incorrect options, in label order.
    pub fn distractor_labels(&self) -> Vec<String> {
        self.options
            .keys()
            .filter(|l| **l != self.truth_label)
            .cloned()
            .collect()
    }

    pub fn option_text(&self, label: &str) -> Option<&str> {
        self.options.get(label).map(String::as_str)
    }

    pub fn truth_text(&self) -> &str {
        &self.options[&self.truth_label]
    }

    /// Structural validation. Field mapping alone is not enough: the truth
    /// label must exist, labels must be single uppercase letters, texts must
    /// be non-empty and pairwise distinct, and the distractor count must fit
    /// the dataset.
    pub fn validate(&self) -> Result<(), RecordIssue> {
        if self.id.trim().is_empty() {
            return Err(RecordIssue::EmptyId);
        }
        if self.question.trim().is_empty() {
            return Err(RecordIssue::EmptyQuestion);
        }
        for (label, text) in &self.options {
            let ok_label = label.len() == 1 && label.chars().all(|c| c.is_ascii_uppercase());
            if !ok_label {
                return Err(RecordIssue::BadLabel {
                    label: label.clone(),
                });
            }
            if text.trim().is_empty() {
                return Err(RecordIssue::EmptyOptionText {
                    label: label.clone(),
                });
            }
        }
        let mut seen_texts = HashSet::new();
        for text in self.options.values() {
            if !seen_texts.insert(text.trim()) {
                return Err(RecordIssue::DuplicateOptionText { text: text.clone() });
            }
        }
        if !self.options.contains_key(&self.truth_label) {
            return Err(RecordIssue::TruthNotAnOption {
                truth_label: self.truth_label.clone(),
            });
        }
        let distractors = self.options.len() - 1;
        let range = self.dataset.distractor_range();
        if !range.contains(&distractors) {
            return Err(RecordIssue::BadDistractorCount {
                count: distractors,
                dataset: self.dataset,
            });
        }
        Ok(())
    }
}

/// Why a record failed validation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum RecordIssue {
    #[error("record id is empty")]
    EmptyId,
    #[error("question text is empty")]
    EmptyQuestion,
    #[error("option label '{label}' is not a single uppercase letter")]
    BadLabel { label: String },
    #[error("option '{label}' has empty text")]
    EmptyOptionText { label: String },
    #[error("option text appears twice: '{text}'")]
    DuplicateOptionText { text: String },
    #[error("truth label '{truth_label}' is not among the options")]
    TruthNotAnOption { truth_label: String },
    #[error("{count} distractors is out of range for dataset '{dataset}'")]
    BadDistractorCount { count: usize, dataset: DatasetTag },
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: malformed record: {message}")]
    MalformedLine { line: u64, message: String },
    #[error("line {line}: {issue}")]
    InvalidRecord { line: u64, issue: RecordIssue },
    #[error("line {line}: duplicate record id '{id}'")]
    DuplicateId { line: u64, id: String },
    #[error("line {line}: record is tagged '{found}' but the file was declared '{expected}'")]
    DatasetMismatch {
        line: u64,
        expected: DatasetTag,
        found: DatasetTag,
    },
    #[error("cannot sample {requested} records from a corpus of {available}")]
    SampleTooLarge { requested: usize, available: usize },
    #[error("record '{id}' has {available} distractors but condition '{condition}' needs at least {needed}")]
    TooFewDistractors {
        id: String,
        condition: Condition,
        needed: usize,
        available: usize,
    },
    #[error("failed reading corpus: {0}")]
    Io(#[from] std::io::Error),
}

/// Raw wire form of one corpus line.
#[derive(Debug, Deserialize)]
struct RawRecord {
    id: String,
    question: String,
    options: BTreeMap<String, String>,
    answer: String,
    dataset: String,
    #[serde(default)]
    meta: BTreeMap<String, serde_json::Value>,
}

fn parse_line(line: &str, line_no: u64, schema: DatasetTag) -> Result<McqaRecord, CorpusError> {
    let raw: RawRecord = serde_json::from_str(line).map_err(|e| CorpusError::MalformedLine {
        line: line_no,
        message: e.to_string(),
    })?;
    let dataset: DatasetTag =
        raw.dataset
            .parse()
            .map_err(|message| CorpusError::MalformedLine {
                line: line_no,
                message,
            })?;
    if dataset != schema {
        return Err(CorpusError::DatasetMismatch {
            line: line_no,
            expected: schema,
            found: dataset,
        });
    }
    let record = McqaRecord {
        id: raw.id,
        question: raw.question,
        options: raw.options,
        truth_label: raw.answer,
        dataset,
        meta: raw.meta,
    };
    record
        .validate()
        .map_err(|issue| CorpusError::InvalidRecord {
            line: line_no,
            issue,
        })?;
    Ok(record)
}

/// Load records strictly: the first malformed or invalid line aborts the load.
///
/// Blank lines are skipped. Input order is preserved and duplicate ids are
/// rejected.
pub fn load_records(
    source: &mut dyn BufRead,
    schema: DatasetTag,
) -> Result<Vec<McqaRecord>, CorpusError> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for_each_line(source, |line, line_no| {
        let record = parse_line(line, line_no, schema)?;
        if !seen.insert(record.id.clone()) {
            return Err(CorpusError::DuplicateId {
                line: line_no,
                id: record.id,
            });
        }
        records.push(record);
        Ok(())
    })?;
    Ok(records)
}

/// A line skipped by the lenient loader, with its diagnostic.
#[derive(Debug)]
pub struct SkippedLine {
    pub line: u64,
    pub reason: String,
}

/// Load records leniently: lines that fail validation are skipped and
/// reported instead of aborting the load. Real corpora contain malformed
/// rows; sampling happens after this filter.
pub fn load_records_lenient(
    source: &mut dyn BufRead,
    schema: DatasetTag,
) -> Result<(Vec<McqaRecord>, Vec<SkippedLine>), CorpusError> {
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    let mut seen = HashSet::new();
    for_each_line(source, |line, line_no| {
        match parse_line(line, line_no, schema) {
            Ok(record) => {
                if seen.insert(record.id.clone()) {
                    records.push(record);
                } else {
                    skipped.push(SkippedLine {
                        line: line_no,
                        reason: format!("duplicate record id '{}'", record.id),
                    });
                }
            }
            Err(err @ CorpusError::Io(_)) => return Err(err),
            Err(err) => skipped.push(SkippedLine {
                line: line_no,
                reason: err.to_string(),
            }),
        }
        Ok(())
    })?;
    Ok((records, skipped))
}

fn for_each_line(
    source: &mut dyn BufRead,
    mut f: impl FnMut(&str, u64) -> Result<(), CorpusError>,
) -> Result<(), CorpusError> {
    let mut line = String::new();
    let mut line_no: u64 = 0;
    loop {
        line.clear();
        if source.read_line(&mut line)? == 0 {
            return Ok(());
        }
        line_no += 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        f(trimmed, line_no)?;
    }
}

/// Sample `n` distinct records without replacement, deterministically for a
/// fixed seed. The returned order is the sampled order.
pub fn sample_without_replacement(
    records: &[McqaRecord],
    n: usize,
    seed: u64,
) -> Result<Vec<McqaRecord>, CorpusError> {
    if n > records.len() {
        return Err(CorpusError::SampleTooLarge {
            requested: n,
            available: records.len(),
        });
    }
    let mut rng = rng_from(derive_seed(seed, &[b"sample"]));
    let mut indices: Vec<usize> = (0..records.len()).collect();
    for i in 0..n {
        let j = rng.random_range(i..indices.len());
        indices.swap(i, j);
    }
    Ok(indices[..n].iter().map(|&i| records[i].clone()).collect())
}

/// The experimental condition an instance is evaluated under.
///
/// Declaration order doubles as the canonical report ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    SingleShotFull,
    SingleShotBinary,
    PositiveConviction,
    NegativeConviction,
    Flexibility,
    FlexSensitivity,
}

impl Condition {
    pub const ALL: [Condition; 6] = [
        Condition::SingleShotFull,
        Condition::SingleShotBinary,
        Condition::PositiveConviction,
        Condition::NegativeConviction,
        Condition::Flexibility,
        Condition::FlexSensitivity,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Condition::SingleShotFull => "single_shot_full",
            Condition::SingleShotBinary => "single_shot_binary",
            Condition::PositiveConviction => "positive_conviction",
            Condition::NegativeConviction => "negative_conviction",
            Condition::Flexibility => "flexibility",
            Condition::FlexSensitivity => "flex_sensitivity",
        }
    }

    pub fn is_single_shot(&self) -> bool {
        matches!(
            self,
            Condition::SingleShotFull | Condition::SingleShotBinary
        )
    }

    pub fn is_conviction(&self) -> bool {
        matches!(
            self,
            Condition::PositiveConviction | Condition::NegativeConviction
        )
    }

    pub fn is_flexibility(&self) -> bool {
        matches!(self, Condition::Flexibility | Condition::FlexSensitivity)
    }

    /// Decision-space shown at the first turn.
    pub fn answer_space(&self) -> AnswerSpace {
        match self {
            Condition::SingleShotFull => AnswerSpace::Full,
            _ => AnswerSpace::Binary,
        }
    }

    /// Smallest distractor set a record needs for this condition.
    pub fn min_distractors(&self) -> usize {
        if self.is_flexibility() {
            2
        } else {
            1
        }
    }
}

impl std::str::FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Condition::ALL
            .iter()
            .copied()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown condition '{s}'"))
    }
}

impl std::fmt::Display for Condition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Full decision-space or a narrowed binary one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerSpace {
    Full,
    Binary,
}

/// What the respondent is supposed to hold on to.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetAnswer {
    /// An option label from the record (the ground truth for positive
    /// conditions).
    Label { label: String },
    /// The abstention sentinel.
    Abstain,
}

impl TargetAnswer {
    /// Token the respondent must produce at the first turn.
    pub fn token(&self) -> &str {
        match self {
            TargetAnswer::Label { label } => label,
            TargetAnswer::Abstain => ABSTENTION_LABEL,
        }
    }

    pub fn is_abstain(&self) -> bool {
        matches!(self, TargetAnswer::Abstain)
    }
}

/// A record transformed for one experimental condition.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedInstance {
    pub record: Arc<McqaRecord>,
    pub condition: Condition,
    pub target: TargetAnswer,
    /// Seeded permutation of the distractor labels. Turn 1 pairs the target
    /// with `distractor_order[0]`; conviction turns t > 1 introduce
    /// `distractor_order[t-1]`.
    pub distractor_order: Vec<String>,
    /// Option introduced at t=2 by the flexibility conditions.
    pub t2_option: Option<String>,
    pub seed: u64,
}

impl PerturbedInstance {
    pub fn record_id(&self) -> &str {
        &self.record.id
    }

    /// Maximum conversation length for this instance.
    pub fn max_turns(&self) -> u32 {
        match self.condition {
            Condition::SingleShotFull | Condition::SingleShotBinary => 1,
            Condition::PositiveConviction | Condition::NegativeConviction => {
                self.distractor_order.len() as u32
            }
            Condition::Flexibility | Condition::FlexSensitivity => 2,
        }
    }

    /// Label of the option introduced at turn `t` (2-based for follow-ups).
    pub fn option_introduced_at(&self, turn: u32) -> Option<&str> {
        debug_assert!(turn >= 2);
        if self.condition.is_flexibility() {
            if turn == 2 {
                self.t2_option.as_deref()
            } else {
                None
            }
        } else {
            self.distractor_order
                .get(turn as usize - 1)
                .map(String::as_str)
        }
    }

    /// Text of the target as it appears to the respondent.
    pub fn target_text(&self) -> &str {
        match &self.target {
            TargetAnswer::Label { label } => self.record.option_text(label).unwrap_or(""),
            TargetAnswer::Abstain => ABSTENTION_TEXT,
        }
    }
}

/// Perturb one record for one condition.
///
/// The distractor permutation depends only on (record, seed), never on the
/// condition, so the turn-1 pairing of a single-shot binary instance matches
/// turn 1 of the conviction instances built from the same seed.
pub fn make_instance(
    record: &Arc<McqaRecord>,
    condition: Condition,
    seed: u64,
) -> Result<PerturbedInstance, CorpusError> {
    let target = match condition {
        Condition::SingleShotFull | Condition::SingleShotBinary | Condition::PositiveConviction => {
            TargetAnswer::Label {
                label: record.truth_label.clone(),
            }
        }
        Condition::NegativeConviction | Condition::Flexibility | Condition::FlexSensitivity => {
            TargetAnswer::Abstain
        }
    };
    build_instance(record, condition, target, seed)
}

/// Abstention-flavored single-shot companion: the truth is removed from the
/// decision-space and the abstention sentinel is the target. This supplies
/// the single-shot abstention baselines that the multi-turn abstention
/// conditions are compared against.
pub fn make_abstention_instance(
    record: &Arc<McqaRecord>,
    space: AnswerSpace,
    seed: u64,
) -> Result<PerturbedInstance, CorpusError> {
    let condition = match space {
        AnswerSpace::Full => Condition::SingleShotFull,
        AnswerSpace::Binary => Condition::SingleShotBinary,
    };
    build_instance(record, condition, TargetAnswer::Abstain, seed)
}

fn build_instance(
    record: &Arc<McqaRecord>,
    condition: Condition,
    target: TargetAnswer,
    seed: u64,
) -> Result<PerturbedInstance, CorpusError> {
    let mut distractors = record.distractor_labels();
    let needed = condition.min_distractors();
    if distractors.len() < needed {
        return Err(CorpusError::TooFewDistractors {
            id: record.id.clone(),
            condition,
            needed,
            available: distractors.len(),
        });
    }
    // Permutation seed deliberately ignores the condition.
    let mut rng = rng_from(derive_seed(seed, &[b"perm"]));
    for i in (1..distractors.len()).rev() {
        let j = rng.random_range(0..=i);
        distractors.swap(i, j);
    }
    let t2_option = match condition {
        Condition::Flexibility => Some(record.truth_label.clone()),
        Condition::FlexSensitivity => Some(distractors[1].clone()),
        _ => None,
    };
    Ok(PerturbedInstance {
        record: Arc::clone(record),
        condition,
        target,
        distractor_order: distractors,
        t2_option,
        seed,
    })
}

/// Deterministic synthetic corpus for network-free simulation runs.
pub fn synthetic_records(n: usize, options_per_record: usize, seed: u64) -> Vec<McqaRecord> {
    assert!(
        (3..=5).contains(&options_per_record),
        "synthetic records support 3 to 5 options"
    );
    let labels: Vec<String> = (0..options_per_record)
        .map(|i| ((b'A' + i as u8) as char).to_string())
        .collect();
    (0..n)
        .map(|i| {
            let id = format!("syn-{i:06}");
            let mut rng = rng_from(derive_seed(seed, &[b"synthetic", id.as_bytes()]));
            let truth = labels[rng.random_range(0..labels.len())].clone();
            let options: BTreeMap<String, String> = labels
                .iter()
                .map(|l| (l.clone(), format!("synthetic finding {l} for case {i}")))
                .collect();
            McqaRecord {
                id,
                question: format!(
                    "Synthetic vignette {i}: which finding best explains the presentation?"
                ),
                options,
                truth_label: truth,
                dataset: DatasetTag::Custom,
                meta: BTreeMap::new(),
            }
        })
        .collect()
}
