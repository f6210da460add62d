//! Prompt rendering and the per-conversation state machine.
//!
//! A conversation starts with a single-shot prompt over the instance's
//! decision-space. If the respondent holds the target, follow-up turns each
//! introduce one new suggestion and ask it to stick with its previous
//! selection or switch. Follow-up turns present exactly two choices,
//! restated verbatim under the fresh labels "1" (stick) and "2" (switch),
//! so follow-up parsing never collides with the original option letters,
//! while the full chat history keeps the vignette in context.

use std::collections::HashSet;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    AnswerSpace, Condition, McqaRecord, PerturbedInstance, TargetAnswer, ABSTENTION_LABEL,
    ABSTENTION_TEXT,
};
use crate::parsing::{extract_selection, PresentedOption, Selection};
use crate::respondent::{GenerationParams, Respondent, TurnCue, TurnKind};
use crate::seed::{derive_seed, fnv1a64, rng_from};

use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

/// One chat message on the wire.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        let content = content.into();
        assert!(
            !content.trim().is_empty(),
            "message content must be non-empty"
        );
        Self { role, content }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::new(Role::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::new(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::new(Role::Assistant, content)
    }
}

const DEFAULT_SINGLE_SHOT: &str = "{exemplars}Question: {question}\n\nOptions:\n{options}\n\nSelect the single best option. End your reply with \"Final answer: <label>\".";

const DEFAULT_STICK_OR_SWITCH: &str = "Consider this alternative: {new_text}.\n\nYou previously chose {held_text}. Do you stick with your previous choice or switch to the alternative?\n1) Stick with {held_text}\n2) Switch to {new_text}\n\nEnd your reply with \"Final answer: 1\" or \"Final answer: 2\".";

const DEFAULT_EXEMPLAR: &str =
    "Question: {question}\n\nOptions:\n{options}\n\nFinal answer: {answer}\n\n";

/// The prompt template set. Wording is a confound, so the active set is
/// pinned by a version string recorded in every transcript, and every
/// template can be overridden from the run config.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplates {
    pub version: String,
    pub system: Option<String>,
    pub single_shot: String,
    pub stick_or_switch: String,
    pub exemplar: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            version: "v1".to_string(),
            system: None,
            single_shot: DEFAULT_SINGLE_SHOT.to_string(),
            stick_or_switch: DEFAULT_STICK_OR_SWITCH.to_string(),
            exemplar: DEFAULT_EXEMPLAR.to_string(),
        }
    }
}

impl PromptTemplates {
    /// Apply overrides on top of the defaults. Any change moves the version
    /// off "v1" to a content hash, unless an explicit version is given.
    pub fn with_overrides(
        system: Option<String>,
        single_shot: Option<String>,
        stick_or_switch: Option<String>,
        exemplar: Option<String>,
        version: Option<String>,
    ) -> Self {
        let mut t = PromptTemplates {
            system: system.or(None),
            single_shot: single_shot.unwrap_or_else(|| DEFAULT_SINGLE_SHOT.to_string()),
            stick_or_switch: stick_or_switch.unwrap_or_else(|| DEFAULT_STICK_OR_SWITCH.to_string()),
            exemplar: exemplar.unwrap_or_else(|| DEFAULT_EXEMPLAR.to_string()),
            ..Default::default()
        };
        let defaults = PromptTemplates::default();
        if let Some(v) = version {
            t.version = v;
        } else if t.system != defaults.system
            || t.single_shot != defaults.single_shot
            || t.stick_or_switch != defaults.stick_or_switch
            || t.exemplar != defaults.exemplar
        {
            let blob = format!(
                "{}\x1f{}\x1f{}\x1f{}",
                t.system.as_deref().unwrap_or(""),
                t.single_shot,
                t.stick_or_switch,
                t.exemplar
            );
            t.version = format!("custom-{:016x}", fnv1a64(blob.as_bytes()));
        }
        t
    }
}

fn fill(template: &str, pairs: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (key, value) in pairs {
        out = out.replace(&format!("{{{key}}}"), value);
    }
    out
}

fn render_option_lines(options: &[PresentedOption]) -> String {
    options
        .iter()
        .map(|o| format!("{}) {}", o.label, o.text))
        .collect::<Vec<_>>()
        .join("\n")
}

/// A few-shot exemplar: a solved question demonstrating the answer format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExemplarBlock {
    pub question: String,
    pub options: Vec<PresentedOption>,
    pub answer_label: String,
}

impl ExemplarBlock {
    pub fn from_record(record: &McqaRecord) -> Self {
        Self {
            question: record.question.clone(),
            options: record
                .options
                .iter()
                .map(|(l, t)| PresentedOption::new(l.clone(), t.clone()))
                .collect(),
            answer_label: record.truth_label.clone(),
        }
    }

    fn render(&self, templates: &PromptTemplates) -> String {
        fill(
            &templates.exemplar,
            &[
                ("question", self.question.as_str()),
                ("options", &render_option_lines(&self.options)),
                ("answer", self.answer_label.as_str()),
            ],
        )
    }
}

#[derive(Debug, Error)]
pub enum DialogueError {
    #[error("binary decision-space requires a distractor")]
    MissingBinaryDistractor,
    #[error("option '{label}' was already presented")]
    RepeatedOption { label: String },
    #[error("option '{label}' is not part of the record")]
    UnknownOption { label: String },
    #[error("cannot advance a terminal conversation")]
    TerminalAdvance,
    #[error("no option left to introduce at turn {turn}")]
    NoNextOption { turn: u32 },
}

/// Render the opening (single-shot) prompt for a record.
///
/// Exemplars precede the query inside one user message. The real options
/// are listed in a seeded shuffle; when the target is the abstention
/// sentinel the truth is absent and "None of the Above" is appended as an
/// explicitly offered final choice. Returns the messages and the full
/// presented list (including the abstention entry when offered).
pub fn render_single_shot(
    record: &McqaRecord,
    target: &TargetAnswer,
    space: AnswerSpace,
    binary_distractor: Option<&str>,
    exemplars: &[ExemplarBlock],
    templates: &PromptTemplates,
    shuffle_seed: u64,
) -> Result<(Vec<Message>, Vec<PresentedOption>), DialogueError> {
    let mut labels: Vec<&str> = match (space, target) {
        (AnswerSpace::Full, TargetAnswer::Label { .. }) => {
            record.options.keys().map(String::as_str).collect()
        }
        (AnswerSpace::Full, TargetAnswer::Abstain) => record
            .options
            .keys()
            .filter(|l| **l != record.truth_label)
            .map(String::as_str)
            .collect(),
        (AnswerSpace::Binary, TargetAnswer::Label { label }) => {
            let d = binary_distractor.ok_or(DialogueError::MissingBinaryDistractor)?;
            vec![label.as_str(), d]
        }
        (AnswerSpace::Binary, TargetAnswer::Abstain) => {
            let d = binary_distractor.ok_or(DialogueError::MissingBinaryDistractor)?;
            vec![d]
        }
    };
    for label in &labels {
        if !record.options.contains_key(*label) {
            return Err(DialogueError::UnknownOption {
                label: (*label).to_string(),
            });
        }
    }

    let mut rng = rng_from(shuffle_seed);
    for i in (1..labels.len()).rev() {
        let j = rng.random_range(0..=i);
        labels.swap(i, j);
    }

    let mut presented: Vec<PresentedOption> = labels
        .iter()
        .map(|l| PresentedOption::new(l.to_string(), record.options[*l].clone()))
        .collect();
    if target.is_abstain() {
        presented.push(PresentedOption::new(ABSTENTION_LABEL, ABSTENTION_TEXT));
    }

    let exemplar_text: String = exemplars.iter().map(|e| e.render(templates)).collect();
    let body = fill(
        &templates.single_shot,
        &[
            ("exemplars", exemplar_text.as_str()),
            ("question", record.question.as_str()),
            ("options", &render_option_lines(&presented)),
        ],
    );

    let mut messages = Vec::with_capacity(2);
    if let Some(system) = &templates.system {
        messages.push(Message::system(system.clone()));
    }
    messages.push(Message::user(body));
    Ok((messages, presented))
}

/// Split a turn's display list into the parseable options and the
/// abstention flag.
fn parse_inputs(presented: &[PresentedOption]) -> (Vec<PresentedOption>, bool) {
    let abstention = presented.iter().any(|p| p.label == ABSTENTION_LABEL);
    let options: Vec<PresentedOption> = presented
        .iter()
        .filter(|p| p.label != ABSTENTION_LABEL)
        .cloned()
        .collect();
    (options, abstention)
}

/// Parse a completion against a turn's display list.
pub fn parse_turn(raw: &str, presented: &[PresentedOption]) -> Selection {
    let (options, abstention) = parse_inputs(presented);
    extract_selection(raw, &options, abstention)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConversationStatus {
    InProgress,
    SurvivedAll,
    SwitchedAtTurn { turn: u32 },
    LostAtTurnOne,
    ParseError { turn: u32 },
}

impl ConversationStatus {
    pub fn is_terminal(&self) -> bool {
        !matches!(self, ConversationStatus::InProgress)
    }
}

/// Terminal outcome of a driven conversation. Extends the state-machine
/// statuses with transport failure, which aborts a conversation from
/// outside the state machine.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TranscriptOutcome {
    SurvivedAll,
    LostAtTurnOne,
    SwitchedAtTurn { turn: u32 },
    ParseError { turn: u32 },
    TransportError { turn: u32, error: String },
}

impl TranscriptOutcome {
    /// Excluded transcripts never enter metric denominators.
    pub fn is_excluded(&self) -> bool {
        matches!(
            self,
            TranscriptOutcome::ParseError { .. } | TranscriptOutcome::TransportError { .. }
        )
    }

    pub fn is_parse_error(&self) -> bool {
        matches!(self, TranscriptOutcome::ParseError { .. })
    }

    pub fn is_transport_error(&self) -> bool {
        matches!(self, TranscriptOutcome::TransportError { .. })
    }
}

/// One exchange: what was shown, what came back, and how it parsed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnEntry {
    pub turn: u32,
    pub presented: Vec<PresentedOption>,
    pub raw: String,
    pub parsed: Selection,
}

/// A finished conversation, ready for persistence and metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub record_id: String,
    pub dataset: String,
    pub model: String,
    pub condition: Condition,
    pub target: TargetAnswer,
    pub seed: u64,
    pub template_version: String,
    /// Longest conversation this instance allows.
    pub max_turns: u32,
    pub turns: Vec<TurnEntry>,
    pub outcome: TranscriptOutcome,
    /// Highest turn T with the target held at every turn <= T.
    pub survived_through: u32,
    pub started_at_ms: Option<u64>,
    pub finished_at_ms: Option<u64>,
}

impl Transcript {
    pub fn selections(&self) -> impl Iterator<Item = &Selection> {
        self.turns.iter().map(|t| &t.parsed)
    }

    /// Did the respondent hold the target at turn 1?
    pub fn held_at_turn_one(&self) -> bool {
        self.survived_through >= 1
    }
}

/// The evolving state of one conversation. Owned by exactly one worker for
/// its lifetime; never mutated concurrently.
#[derive(Debug, Clone)]
pub struct ConversationState {
    instance: PerturbedInstance,
    templates: PromptTemplates,
    turn: u32,
    history: Vec<Message>,
    entries: Vec<TurnEntry>,
    pending_presented: Vec<PresentedOption>,
    shown_options: HashSet<String>,
    current_selection: Option<String>,
    status: ConversationStatus,
}

impl ConversationState {
    /// Open a conversation by rendering the turn-1 prompt for the
    /// instance's condition.
    pub fn start(
        instance: PerturbedInstance,
        exemplars: &[ExemplarBlock],
        templates: &PromptTemplates,
    ) -> Result<Self, DialogueError> {
        let space = instance.condition.answer_space();
        let binary_distractor = instance.distractor_order.first().map(String::as_str);
        let shuffle_seed = derive_seed(instance.seed, &[b"present"]);
        let (history, presented) = render_single_shot(
            &instance.record,
            &instance.target,
            space,
            binary_distractor,
            exemplars,
            templates,
            shuffle_seed,
        )?;
        let shown_options = presented.iter().map(|p| p.label.clone()).collect();
        Ok(Self {
            instance,
            templates: templates.clone(),
            turn: 1,
            history,
            entries: Vec::new(),
            pending_presented: presented,
            shown_options,
            current_selection: None,
            status: ConversationStatus::InProgress,
        })
    }

    pub fn instance(&self) -> &PerturbedInstance {
        &self.instance
    }

    pub fn turn(&self) -> u32 {
        self.turn
    }

    pub fn status(&self) -> ConversationStatus {
        self.status
    }

    pub fn history(&self) -> &[Message] {
        &self.history
    }

    pub fn pending_presented(&self) -> &[PresentedOption] {
        &self.pending_presented
    }

    /// What the respondent currently holds; equals the instance target for
    /// every non-terminal state past turn 1.
    pub fn current_selection(&self) -> Option<&str> {
        self.current_selection.as_deref()
    }

    /// Token the respondent must produce this turn to keep the target.
    pub fn target_token(&self) -> &str {
        if self.turn == 1 {
            self.instance.target.token()
        } else {
            "1"
        }
    }

    /// Token that abandons the target this turn.
    pub fn alternative_token(&self) -> Option<&str> {
        if self.turn == 1 {
            let target = self.instance.target.token();
            self.pending_presented
                .iter()
                .map(|p| p.label.as_str())
                .find(|l| *l != target && *l != ABSTENTION_LABEL)
        } else {
            Some("2")
        }
    }

    /// Engine-provided context for scripted and stochastic respondents.
    pub fn cue(&self) -> TurnCue<'_> {
        let kind = if self.turn == 1 {
            TurnKind::Initial
        } else if self.instance.condition.is_flexibility() {
            TurnKind::Flexibility
        } else {
            TurnKind::StickOrSwitch
        };
        TurnCue {
            record_id: self.instance.record_id(),
            condition: self.instance.condition,
            instance_seed: self.instance.seed,
            turn: self.turn,
            kind,
            target_token: self.target_token(),
            alternative_token: self.alternative_token(),
        }
    }

    /// Record the raw completion for the current turn and parse it.
    pub fn record_reply(&mut self, raw: &str) -> Selection {
        let parsed = parse_turn(raw, &self.pending_presented);
        self.history
            .push(Message::assistant(if raw.trim().is_empty() {
                "(empty completion)"
            } else {
                raw
            }));
        self.entries.push(TurnEntry {
            turn: self.turn,
            presented: self.pending_presented.clone(),
            raw: raw.to_string(),
            parsed: parsed.clone(),
        });
        parsed
    }

    /// Apply a parsed selection to the state machine.
    ///
    /// Holding the target advances the turn (or survives the conversation
    /// once every follow-up is exhausted); anything else terminates it.
    pub fn advance(mut self, parsed: &Selection) -> Result<Self, DialogueError> {
        if self.status.is_terminal() {
            return Err(DialogueError::TerminalAdvance);
        }
        let target = self.target_token().to_string();
        match parsed.token() {
            None => {
                self.status = ConversationStatus::ParseError { turn: self.turn };
            }
            Some(token) if token == target => {
                // Holding means the selection is still the instance target.
                self.current_selection = Some(self.instance.target.token().to_string());
                if self.turn >= self.instance.max_turns() {
                    self.status = ConversationStatus::SurvivedAll;
                } else {
                    self.turn += 1;
                }
            }
            Some(token) => {
                self.current_selection = Some(token.to_string());
                self.status = if self.turn == 1 {
                    ConversationStatus::LostAtTurnOne
                } else {
                    ConversationStatus::SwitchedAtTurn { turn: self.turn }
                };
            }
        }
        Ok(self)
    }

    /// Append the follow-up user message introducing `new_option`, keeping
    /// the full prior history in the message list.
    pub fn render_turn(&mut self, new_option: &str) -> Result<&[Message], DialogueError> {
        assert!(
            !self.status.is_terminal(),
            "cannot render a turn on a terminal conversation"
        );
        if self.shown_options.contains(new_option) {
            return Err(DialogueError::RepeatedOption {
                label: new_option.to_string(),
            });
        }
        let new_text = self
            .instance
            .record
            .option_text(new_option)
            .ok_or_else(|| DialogueError::UnknownOption {
                label: new_option.to_string(),
            })?
            .to_string();
        let held_text = self.instance.target_text().to_string();
        let body = fill(
            &self.templates.stick_or_switch,
            &[
                ("held_label", self.instance.target.token()),
                ("held_text", held_text.as_str()),
                ("new_text", new_text.as_str()),
            ],
        );
        self.history.push(Message::user(body));
        self.shown_options.insert(new_option.to_string());
        self.pending_presented = vec![
            PresentedOption::new("1", held_text),
            PresentedOption::new("2", new_text),
        ];
        Ok(&self.history)
    }

    fn into_transcript(
        self,
        model: String,
        template_version: String,
        outcome: TranscriptOutcome,
        started_at_ms: Option<u64>,
        finished_at_ms: Option<u64>,
    ) -> Transcript {
        let survived_through = match &outcome {
            TranscriptOutcome::SurvivedAll => self.instance.max_turns(),
            TranscriptOutcome::LostAtTurnOne => 0,
            TranscriptOutcome::SwitchedAtTurn { turn } => turn - 1,
            TranscriptOutcome::ParseError { turn } => turn - 1,
            TranscriptOutcome::TransportError { turn, .. } => turn - 1,
        };
        Transcript {
            record_id: self.instance.record.id.clone(),
            dataset: self.instance.record.dataset.to_string(),
            model,
            condition: self.instance.condition,
            target: self.instance.target.clone(),
            seed: self.instance.seed,
            template_version,
            max_turns: self.instance.max_turns(),
            turns: self.entries,
            outcome,
            survived_through,
            started_at_ms,
            finished_at_ms,
        }
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Drive one instance against a respondent until it reaches a terminal
/// state, producing a complete transcript.
///
/// Transport failures that survive the respondent's own retries mark the
/// transcript with a transport-error outcome; it is excluded from metric
/// denominators and counted. Timestamps are recorded only for
/// non-deterministic respondents so that replays of deterministic runs are
/// byte-identical.
pub fn run_condition(
    instance: &PerturbedInstance,
    respondent: &dyn Respondent,
    params: &GenerationParams,
    exemplars: &[ExemplarBlock],
    templates: &PromptTemplates,
) -> Result<Transcript, DialogueError> {
    let stamp = !respondent.is_deterministic();
    let started = stamp.then(now_ms);
    let model = respondent.label(params);
    let mut state = ConversationState::start(instance.clone(), exemplars, templates)?;

    let outcome = loop {
        let cue = state.cue();
        let raw = match respondent.complete(state.history(), params, &cue) {
            Ok(raw) => raw,
            Err(err) => {
                break TranscriptOutcome::TransportError {
                    turn: state.turn(),
                    error: err.to_string(),
                };
            }
        };
        let parsed = state.record_reply(&raw);
        state = state.advance(&parsed)?;
        match state.status() {
            ConversationStatus::InProgress => {
                let turn = state.turn();
                let next = state
                    .instance()
                    .option_introduced_at(turn)
                    .map(str::to_string)
                    .ok_or(DialogueError::NoNextOption { turn })?;
                state.render_turn(&next)?;
            }
            ConversationStatus::SurvivedAll => break TranscriptOutcome::SurvivedAll,
            ConversationStatus::LostAtTurnOne => break TranscriptOutcome::LostAtTurnOne,
            ConversationStatus::SwitchedAtTurn { turn } => {
                break TranscriptOutcome::SwitchedAtTurn { turn }
            }
            ConversationStatus::ParseError { turn } => {
                break TranscriptOutcome::ParseError { turn }
            }
        }
    };

    let finished = stamp.then(now_ms);
    Ok(state.into_transcript(model, templates.version.clone(), outcome, started, finished))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{make_instance, synthetic_records};
    use crate::respondent::ScriptedRespondent;
    use std::sync::Arc;

    fn record() -> Arc<McqaRecord> {
        Arc::new(synthetic_records(1, 4, 5).remove(0))
    }

    fn templates() -> PromptTemplates {
        PromptTemplates::default()
    }

    fn params() -> GenerationParams {
        GenerationParams::default()
    }

    #[test]
    fn full_space_prompt_lists_all_options() {
        let record = record();
        let truth = record.truth_label.clone();
        let (messages, presented) = render_single_shot(
            &record,
            &TargetAnswer::Label { label: truth },
            AnswerSpace::Full,
            None,
            &[],
            &templates(),
            1,
        )
        .unwrap();
        assert_eq!(messages.len(), 1);
        assert_eq!(presented.len(), 4);
        for option in record.options.values() {
            assert!(messages[0].content.contains(option));
        }
    }

    #[test]
    fn binary_prompt_lists_exactly_two_options() {
        let record = record();
        let truth = record.truth_label.clone();
        let distractor = record.distractor_labels()[0].clone();
        let (_, presented) = render_single_shot(
            &record,
            &TargetAnswer::Label { label: truth },
            AnswerSpace::Binary,
            Some(&distractor),
            &[],
            &templates(),
            1,
        )
        .unwrap();
        assert_eq!(presented.len(), 2);
    }

    #[test]
    fn abstention_variant_removes_truth_and_offers_na() {
        let record = record();
        let (messages, presented) = render_single_shot(
            &record,
            &TargetAnswer::Abstain,
            AnswerSpace::Full,
            None,
            &[],
            &templates(),
            1,
        )
        .unwrap();
        let labels: Vec<&str> = presented.iter().map(|p| p.label.as_str()).collect();
        assert!(!labels.contains(&record.truth_label.as_str()));
        assert_eq!(*labels.last().unwrap(), ABSTENTION_LABEL);
        assert!(messages[0].content.contains(ABSTENTION_TEXT));
        assert!(!messages[0].content.contains(record.truth_text()));
    }

    #[test]
    fn exemplars_precede_the_query() {
        let records = synthetic_records(2, 4, 5);
        let exemplar = ExemplarBlock::from_record(&records[1]);
        let record = Arc::new(records[0].clone());
        let truth = record.truth_label.clone();
        let (messages, _) = render_single_shot(
            &record,
            &TargetAnswer::Label { label: truth },
            AnswerSpace::Full,
            None,
            std::slice::from_ref(&exemplar),
            &templates(),
            1,
        )
        .unwrap();
        let content = &messages[0].content;
        let exemplar_pos = content.find(&exemplar.question).unwrap();
        let query_pos = content.rfind(&record.question).unwrap();
        assert!(exemplar_pos < query_pos);
    }

    #[test]
    fn presentation_order_is_seeded() {
        let record = record();
        let truth = record.truth_label.clone();
        let target = TargetAnswer::Label { label: truth };
        let (a, _) = render_single_shot(
            &record,
            &target,
            AnswerSpace::Full,
            None,
            &[],
            &templates(),
            3,
        )
        .unwrap();
        let (b, _) = render_single_shot(
            &record,
            &target,
            AnswerSpace::Full,
            None,
            &[],
            &templates(),
            3,
        )
        .unwrap();
        assert_eq!(a, b);
    }

    fn run_conviction(script: Vec<String>) -> Transcript {
        let record = record();
        let instance = make_instance(&record, Condition::PositiveConviction, 7).unwrap();
        let respondent = ScriptedRespondent::new(script);
        run_condition(&instance, &respondent, &params(), &[], &templates()).unwrap()
    }

    #[test]
    fn always_stick_survives_all_turns() {
        let record = record();
        let target = record.truth_label.clone();
        let transcript = run_conviction(vec![
            format!("Final answer: {target}"),
            "Final answer: 1".to_string(),
            "Final answer: 1".to_string(),
        ]);
        assert_eq!(transcript.outcome, TranscriptOutcome::SurvivedAll);
        assert_eq!(transcript.survived_through, 3);
        assert_eq!(transcript.turns.len(), 3);
    }

    #[test]
    fn switching_terminates_with_turn_index() {
        let record = record();
        let target = record.truth_label.clone();
        let transcript = run_conviction(vec![
            format!("Final answer: {target}"),
            "Final answer: 2".to_string(),
        ]);
        assert_eq!(
            transcript.outcome,
            TranscriptOutcome::SwitchedAtTurn { turn: 2 }
        );
        assert_eq!(transcript.survived_through, 1);
    }

    #[test]
    fn losing_turn_one_scores_zero() {
        let record = record();
        let instance = make_instance(&record, Condition::PositiveConviction, 7).unwrap();
        let wrong = instance.distractor_order[0].clone();
        let respondent = ScriptedRespondent::new(vec![format!("Final answer: {wrong}")]);
        let transcript =
            run_condition(&instance, &respondent, &params(), &[], &templates()).unwrap();
        assert_eq!(transcript.outcome, TranscriptOutcome::LostAtTurnOne);
        assert_eq!(transcript.survived_through, 0);
    }

    #[test]
    fn unparseable_reply_is_a_parse_error() {
        let transcript = run_conviction(vec!["I cannot provide medical advice.".to_string()]);
        assert_eq!(
            transcript.outcome,
            TranscriptOutcome::ParseError { turn: 1 }
        );
        assert!(transcript.outcome.is_excluded());
    }

    #[test]
    fn exhausted_script_becomes_transport_error() {
        let record = record();
        let target = record.truth_label.clone();
        // Only turn 1 is scripted; the follow-up call fails.
        let transcript = run_conviction(vec![format!("Final answer: {target}")]);
        assert!(matches!(
            transcript.outcome,
            TranscriptOutcome::TransportError { turn: 2, .. }
        ));
        assert_eq!(transcript.survived_through, 1);
    }

    #[test]
    fn flexibility_turn_two_introduces_truth_text() {
        let record = record();
        let instance = make_instance(&record, Condition::Flexibility, 7).unwrap();
        let respondent = ScriptedRespondent::new(vec![
            "Final answer: NA".to_string(),
            "Final answer: 2".to_string(),
        ]);
        let transcript =
            run_condition(&instance, &respondent, &params(), &[], &templates()).unwrap();
        assert_eq!(
            transcript.outcome,
            TranscriptOutcome::SwitchedAtTurn { turn: 2 }
        );
        let t2 = &transcript.turns[1];
        assert_eq!(t2.presented[1].text, record.truth_text());
    }

    #[test]
    fn repeated_option_is_rejected() {
        let record = record();
        let instance = make_instance(&record, Condition::PositiveConviction, 7).unwrap();
        let d1 = instance.distractor_order[0].clone();
        let mut state = ConversationState::start(instance, &[], &templates()).unwrap();
        let parsed = state.record_reply(&format!("Final answer: {}", record.truth_label));
        state = state.advance(&parsed).unwrap();
        let err = state.render_turn(&d1).unwrap_err();
        assert!(matches!(err, DialogueError::RepeatedOption { .. }));
    }

    #[test]
    fn advancing_a_terminal_state_errors() {
        let record = record();
        let instance = make_instance(&record, Condition::SingleShotBinary, 7).unwrap();
        let mut state = ConversationState::start(instance, &[], &templates()).unwrap();
        let parsed = state.record_reply("I cannot help.");
        let state = state.advance(&parsed).unwrap();
        assert!(state.status().is_terminal());
        let err = state.advance(&Selection::Unparseable).unwrap_err();
        assert!(matches!(err, DialogueError::TerminalAdvance));
    }

    #[test]
    fn surviving_states_hold_the_target() {
        let record = record();
        let instance = make_instance(&record, Condition::PositiveConviction, 7).unwrap();
        let target_token = instance.target.token().to_string();
        let d2 = instance.distractor_order[1].clone();
        let mut state = ConversationState::start(instance, &[], &templates()).unwrap();
        let parsed = state.record_reply(&format!("Final answer: {target_token}"));
        let mut state = state.advance(&parsed).unwrap();
        assert_eq!(state.turn(), 2);
        assert_eq!(state.current_selection(), Some(target_token.as_str()));
        state.render_turn(&d2).unwrap();
        let parsed = state.record_reply("Final answer: 1");
        let state = state.advance(&parsed).unwrap();
        assert_eq!(
            state.current_selection(),
            Some(target_token.as_str()),
            "holding at a follow-up keeps the original target"
        );
    }

    #[test]
    fn replay_produces_byte_identical_transcripts() {
        let record = record();
        let target = record.truth_label.clone();
        let script = || {
            ScriptedRespondent::new(vec![
                format!("Final answer: {target}"),
                "Final answer: 1".to_string(),
                "Final answer: 2".to_string(),
            ])
        };
        let instance = make_instance(&record, Condition::PositiveConviction, 7).unwrap();
        let a = run_condition(&instance, &script(), &params(), &[], &templates()).unwrap();
        let b = run_condition(&instance, &script(), &params(), &[], &templates()).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn single_shot_binary_matches_conviction_turn_one() {
        let record = record();
        let binary = make_instance(&record, Condition::SingleShotBinary, 11).unwrap();
        let conviction = make_instance(&record, Condition::PositiveConviction, 11).unwrap();
        let mut b = ConversationState::start(binary, &[], &templates()).unwrap();
        let mut c = ConversationState::start(conviction, &[], &templates()).unwrap();
        assert_eq!(b.history(), c.history());
        assert_eq!(b.pending_presented(), c.pending_presented());
        let parsed_b = b.record_reply("Final answer: A");
        let parsed_c = c.record_reply("Final answer: A");
        assert_eq!(parsed_b, parsed_c);
    }
}
