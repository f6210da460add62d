//! Free-text answer extraction.
//!
//! Maps a raw completion onto one of the presented options, the abstention
//! sentinel, or an unparseable marker. Matchers run in fixed precedence:
//!
//! 1. explicit final-answer pattern ("final answer: X", "answer is X"),
//!    taking the last such occurrence;
//! 2. a standalone label token on its own line or sentence (plus the verbs
//!    "stick"/"switch" as aliases for labels 1/2 on follow-up turns);
//! 3. a unique full option-text substring match;
//! 4. abstention phrases, only when abstention was offered.
//!
//! Ties between different labels at the same precedence level are resolved
//! as unparseable rather than guessed. Matching is case-insensitive for
//! labels and abstention phrases, and whitespace-insensitive for option
//! text.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::ABSTENTION_LABEL;

/// One option as shown to the respondent on a given turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PresentedOption {
    pub label: String,
    pub text: String,
}

impl PresentedOption {
    pub fn new(label: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            text: text.into(),
        }
    }
}

/// Which matcher produced a selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchedBy {
    FinalAnswerPattern,
    LabelMatch,
    OptionTextMatch,
    AbstentionPhrase,
}

/// A parsed per-turn selection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Selection {
    Option {
        label: String,
        matched_by: MatchedBy,
        raw_span: String,
    },
    Abstain {
        matched_by: MatchedBy,
        raw_span: String,
    },
    Unparseable,
}

impl Selection {
    pub fn is_unparseable(&self) -> bool {
        matches!(self, Selection::Unparseable)
    }

    pub fn option_label(&self) -> Option<&str> {
        match self {
            Selection::Option { label, .. } => Some(label),
            _ => None,
        }
    }

    /// The token this selection corresponds to: a label, or the reserved
    /// abstention label.
    pub fn token(&self) -> Option<&str> {
        match self {
            Selection::Option { label, .. } => Some(label),
            Selection::Abstain { .. } => Some(ABSTENTION_LABEL),
            Selection::Unparseable => None,
        }
    }
}

const ABSTENTION_PHRASES: [&str; 3] = ["none of the above", "none of these", "neither"];

fn final_answer_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)\b(?:final\s+answer(?:\s+is)?\s*[:\-]?|answer\s+is\b\s*[:\-]?|answer\s*:)\s*",
        )
        .expect("final-answer pattern compiles")
    })
}

/// Internal resolution of a candidate value to a selection target.
enum Resolved {
    Label(String),
    Abstain,
}

/// Extract the selected option from a free-text completion.
///
/// `presented` lists the real options shown this turn; the abstention
/// choice, when offered, is covered by `abstention_offered` rather than
/// listed. Never returns a label outside the presented set.
pub fn extract_selection(
    raw: &str,
    presented: &[PresentedOption],
    abstention_offered: bool,
) -> Selection {
    debug_assert!(!presented.is_empty(), "presented options must be non-empty");
    let stick_switch = is_stick_switch_pair(presented);

    // 1. Final-answer pattern, last resolvable occurrence wins.
    let mut last: Option<(Resolved, String)> = None;
    for m in final_answer_re().find_iter(raw) {
        let rest = line_rest(raw, m.end());
        if let Some((resolved, consumed)) =
            resolve_value(rest, presented, abstention_offered, stick_switch)
        {
            let span = format!("{}{}", m.as_str(), consumed);
            last = Some((resolved, span));
        }
    }
    if let Some((resolved, span)) = last {
        return selection_from(resolved, MatchedBy::FinalAnswerPattern, span);
    }

    // 2. Standalone label token on its own line or sentence.
    let mut found: Option<(Resolved, String)> = None;
    let mut tie = false;
    for segment in raw.split(['\n', '.', '!', '?', ';']) {
        let token = segment.trim_matches(|c: char| !c.is_ascii_alphanumeric());
        if token.is_empty() || token.chars().any(|c| c.is_whitespace()) {
            continue;
        }
        if let Some(resolved) = token_to_target(token, presented, abstention_offered) {
            match &found {
                Some((prev, _)) if !same_target(prev, &resolved) => tie = true,
                _ => found = Some((resolved, segment.trim().to_string())),
            }
        }
    }
    if tie {
        return Selection::Unparseable;
    }
    if found.is_none() && stick_switch {
        found = stick_switch_verbs(raw);
    }
    if let Some((resolved, span)) = found {
        return selection_from(resolved, MatchedBy::LabelMatch, span);
    }

    // 3. Unique full option-text substring match.
    let normalized = normalize(raw);
    let mut text_hits: Vec<&PresentedOption> = presented
        .iter()
        .filter(|p| !normalize(&p.text).is_empty() && normalized.contains(&normalize(&p.text)))
        .collect();
    text_hits.dedup_by(|a, b| a.label == b.label);
    match text_hits.len() {
        1 => {
            let hit = text_hits[0];
            return Selection::Option {
                label: hit.label.clone(),
                matched_by: MatchedBy::OptionTextMatch,
                raw_span: hit.text.clone(),
            };
        }
        n if n > 1 => return Selection::Unparseable,
        _ => {}
    }

    // 4. Abstention phrases, only when abstention was offered.
    if abstention_offered {
        for phrase in ABSTENTION_PHRASES {
            if contains_phrase(&normalized, phrase) {
                return Selection::Abstain {
                    matched_by: MatchedBy::AbstentionPhrase,
                    raw_span: phrase.to_string(),
                };
            }
        }
    }

    Selection::Unparseable
}

fn selection_from(resolved: Resolved, matched_by: MatchedBy, raw_span: String) -> Selection {
    match resolved {
        Resolved::Label(label) => Selection::Option {
            label,
            matched_by,
            raw_span,
        },
        Resolved::Abstain => Selection::Abstain {
            matched_by,
            raw_span,
        },
    }
}

fn same_target(a: &Resolved, b: &Resolved) -> bool {
    match (a, b) {
        (Resolved::Label(x), Resolved::Label(y)) => x == y,
        (Resolved::Abstain, Resolved::Abstain) => true,
        _ => false,
    }
}

/// Follow-up turns present exactly the fresh labels "1" (stick) and
/// "2" (switch).
fn is_stick_switch_pair(presented: &[PresentedOption]) -> bool {
    presented.len() == 2 && presented[0].label == "1" && presented[1].label == "2"
}

fn line_rest(raw: &str, start: usize) -> &str {
    let rest = &raw[start..];
    match rest.find('\n') {
        Some(end) => &rest[..end],
        None => rest,
    }
}

/// Resolve the text following a final-answer marker. Returns the resolved
/// target and the consumed prefix of the value for span reporting.
fn resolve_value(
    value: &str,
    presented: &[PresentedOption],
    abstention_offered: bool,
    stick_switch: bool,
) -> Option<(Resolved, String)> {
    let trimmed = value.trim_start_matches(|c: char| {
        c.is_whitespace() || matches!(c, '*' | '_' | '"' | '\'' | '`' | '(' | '[' | '{')
    });
    let token: String = trimmed
        .chars()
        .take_while(|c| c.is_ascii_alphanumeric())
        .collect();
    if !token.is_empty() {
        if let Some(resolved) = token_to_target(&token, presented, abstention_offered) {
            return Some((resolved, token));
        }
        if stick_switch {
            match token.to_ascii_lowercase().as_str() {
                "stick" => return Some((Resolved::Label("1".into()), token)),
                "switch" => return Some((Resolved::Label("2".into()), token)),
                _ => {}
            }
        }
    }
    // The value may restate an option text or an abstention phrase.
    let norm = normalize(trimmed);
    if abstention_offered {
        for phrase in ABSTENTION_PHRASES {
            if norm.starts_with(phrase) {
                return Some((Resolved::Abstain, phrase.to_string()));
            }
        }
    }
    for option in presented {
        let opt_norm = normalize(&option.text);
        if !opt_norm.is_empty() && norm.starts_with(&opt_norm) {
            return Some((Resolved::Label(option.label.clone()), option.text.clone()));
        }
    }
    None
}

fn token_to_target(
    token: &str,
    presented: &[PresentedOption],
    abstention_offered: bool,
) -> Option<Resolved> {
    let upper = token.to_ascii_uppercase();
    if abstention_offered && upper == ABSTENTION_LABEL {
        return Some(Resolved::Abstain);
    }
    presented
        .iter()
        .find(|p| p.label.to_ascii_uppercase() == upper)
        .map(|p| Resolved::Label(p.label.clone()))
}

/// Verb aliases for follow-up turns: "stick" selects label 1, "switch"
/// selects label 2. Both verbs present is a tie and stays unresolved.
fn stick_switch_verbs(raw: &str) -> Option<(Resolved, String)> {
    let norm = normalize(raw);
    let stick = contains_phrase(&norm, "stick") || contains_phrase(&norm, "sticking");
    let switch = contains_phrase(&norm, "switch") || contains_phrase(&norm, "switching");
    match (stick, switch) {
        (true, false) => Some((Resolved::Label("1".into()), "stick".into())),
        (false, true) => Some((Resolved::Label("2".into()), "switch".into())),
        _ => None,
    }
}

fn normalize(s: &str) -> String {
    s.to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Word-boundary phrase search over normalized text.
fn contains_phrase(normalized: &str, phrase: &str) -> bool {
    let mut start = 0;
    while let Some(pos) = normalized[start..].find(phrase) {
        let begin = start + pos;
        let end = begin + phrase.len();
        let left_ok = begin == 0 || !normalized.as_bytes()[begin - 1].is_ascii_alphanumeric();
        let right_ok =
            end == normalized.len() || !normalized.as_bytes()[end].is_ascii_alphanumeric();
        if left_ok && right_ok {
            return true;
        }
        start = begin + 1;
    }
    false
}

/// Exact parse-failure accounting over a stream of per-turn selections.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParseAudit {
    pub total_turns: u64,
    pub unparseable: u64,
    pub rate: f64,
}

pub fn audit_parse_rate<'a>(selections: impl IntoIterator<Item = &'a Selection>) -> ParseAudit {
    let mut total = 0u64;
    let mut unparseable = 0u64;
    for selection in selections {
        total += 1;
        if selection.is_unparseable() {
            unparseable += 1;
        }
    }
    let rate = if total == 0 {
        0.0
    } else {
        unparseable as f64 / total as f64
    };
    ParseAudit {
        total_turns: total,
        unparseable,
        rate,
    }
}
