//! Batch evaluation harness for multi-turn "stick-or-switch" conversations
//! over multiple-choice clinical QA.
//!
//! The harness perturbs each question into condition-specific instances
//! (defend a correct diagnosis, defend a safe abstention, or recognize the
//! truth when it is introduced), drives them turn by turn against an answer
//! source, parses the free-text replies, and aggregates conviction,
//! flexibility, and conversation-tax metrics with exact exclusion
//! accounting.
//!
//! Modules follow the pipeline:
//!
//! - [`corpus`]: record loading, validation, sampling, perturbation
//! - [`dialogue`]: prompt templates, the turn state machine, transcripts
//! - [`respondent`]: remote endpoint, scripted replayer, stochastic agent
//! - [`parsing`]: free-text answer extraction
//! - [`metrics`]: survival curves, rates, taxes, bootstrap intervals
//! - [`runner`]: data-parallel batch execution and transcript logs
//! - [`report`]: report assembly, CSV summary, survival plots
//! - [`testing`]: bundled stub server and deterministic test respondents

pub mod corpus;
pub mod dialogue;
pub mod metrics;
pub mod parsing;
pub mod report;
pub mod respondent;
pub mod runner;
pub mod seed;
pub mod testing;

pub use corpus::{
    load_records, load_records_lenient, make_abstention_instance, make_instance,
    sample_without_replacement, synthetic_records, AnswerSpace, Condition, CorpusError, DatasetTag,
    McqaRecord, PerturbedInstance, TargetAnswer, ABSTENTION_LABEL, ABSTENTION_TEXT,
};
pub use dialogue::{
    render_single_shot, run_condition, ConversationState, ConversationStatus, DialogueError,
    ExemplarBlock, Message, PromptTemplates, Role, Transcript, TranscriptOutcome, TurnEntry,
};
pub use metrics::{
    bootstrap_ci, conversation_tax, single_shot_rates, survival_curve, switch_rates,
    ConversationTax, Interval, MetricsError, RateSummary, SurvivalCurve, SwitchRates,
};
pub use parsing::{audit_parse_rate, extract_selection, ParseAudit, PresentedOption, Selection};
pub use report::{build_report, write_report_files, MetricsReport, ReportOptions};
pub use respondent::{
    BernoulliAgent, BernoulliAgentSpec, GenerationParams, RemoteRespondent, Respondent,
    RespondentError, RetryPolicy, ScriptedRespondent, TurnCue, TurnKind, API_KEY_ENV,
};
pub use runner::{
    read_transcript_log, run_batch, run_batch_sequential, BatchContext, RunManifest, RunnerError,
    TranscriptWriter,
};
