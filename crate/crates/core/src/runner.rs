//! Batch execution and transcript persistence.
//!
//! Conversations are independent, so a batch runs data-parallel over a
//! worker pool sized by the concurrency limit (or sequentially without the
//! `parallel` feature). Each conversation is owned by exactly one worker
//! for its lifetime. Completed transcripts pass through a reorder buffer
//! that releases them in canonical input order, so the persisted log is
//! incremental, crash-safe, and byte-identical regardless of concurrency.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::PerturbedInstance;
use crate::dialogue::{run_condition, DialogueError, ExemplarBlock, PromptTemplates, Transcript};
use crate::respondent::{GenerationParams, Respondent};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Dialogue(#[from] DialogueError),
    #[error("io failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to build worker pool: {0}")]
    Pool(String),
    #[error("line {line}: bad transcript log entry: {message}")]
    BadLogLine { line: u64, message: String },
    #[error("transcript log is missing its manifest header")]
    MissingManifest,
    #[error("serialization failure: {0}")]
    Serde(#[from] serde_json::Error),
}

/// Provenance stamped into every output file of a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub master_seed: u64,
    pub template_version: String,
    pub harness_version: String,
}

impl RunManifest {
    pub fn new(config_hash: String, master_seed: u64, template_version: String) -> Self {
        Self {
            config_hash,
            master_seed,
            template_version,
            harness_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

/// One line of the transcript log: a manifest header followed by
/// transcripts.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogLine {
    Manifest(RunManifest),
    Transcript(Box<Transcript>),
}

/// Append-only transcript log. Every line is flushed as written, so an
/// interrupted run preserves a valid prefix.
pub struct TranscriptWriter {
    out: BufWriter<File>,
}

impl TranscriptWriter {
    /// Create a fresh log with its manifest header.
    pub fn create(path: &Path, manifest: &RunManifest) -> Result<Self, RunnerError> {
        let file = File::create(path)?;
        let mut writer = Self {
            out: BufWriter::new(file),
        };
        writer.write_line(&LogLine::Manifest(manifest.clone()))?;
        Ok(writer)
    }

    /// Reopen an existing log for appending (resumed runs).
    pub fn append_to(path: &Path) -> Result<Self, RunnerError> {
        let file = OpenOptions::new().append(true).open(path)?;
        Ok(Self {
            out: BufWriter::new(file),
        })
    }

    pub fn append(&mut self, transcript: &Transcript) -> Result<(), RunnerError> {
        self.write_line(&LogLine::Transcript(Box::new(transcript.clone())))
    }

    fn write_line(&mut self, line: &LogLine) -> Result<(), RunnerError> {
        serde_json::to_writer(&mut self.out, line)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}

/// Read a transcript log back: manifest header plus transcripts in file
/// order.
pub fn read_transcript_log(path: &Path) -> Result<(RunManifest, Vec<Transcript>), RunnerError> {
    let file = File::open(path)?;
    let mut reader = BufReader::new(file);
    let mut line = String::new();
    let mut line_no = 0u64;
    let mut manifest: Option<RunManifest> = None;
    let mut transcripts = Vec::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            break;
        }
        line_no += 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let parsed: LogLine =
            serde_json::from_str(trimmed).map_err(|e| RunnerError::BadLogLine {
                line: line_no,
                message: e.to_string(),
            })?;
        match parsed {
            LogLine::Manifest(m) => {
                if manifest.is_none() {
                    manifest = Some(m);
                } else {
                    return Err(RunnerError::BadLogLine {
                        line: line_no,
                        message: "duplicate manifest header".to_string(),
                    });
                }
            }
            LogLine::Transcript(t) => {
                if manifest.is_none() {
                    return Err(RunnerError::MissingManifest);
                }
                transcripts.push(*t);
            }
        }
    }
    let manifest = manifest.ok_or(RunnerError::MissingManifest)?;
    Ok((manifest, transcripts))
}

/// Reorder buffer: workers finish in any order, the sink releases results
/// in input order.
struct OrderedSink<'a> {
    next: usize,
    pending: BTreeMap<usize, Transcript>,
    ordered: Vec<Transcript>,
    on_complete: &'a mut (dyn FnMut(&Transcript) -> Result<(), RunnerError> + Send),
    sink_error: Option<RunnerError>,
}

impl<'a> OrderedSink<'a> {
    fn new(
        on_complete: &'a mut (dyn FnMut(&Transcript) -> Result<(), RunnerError> + Send),
    ) -> Self {
        Self {
            next: 0,
            pending: BTreeMap::new(),
            ordered: Vec::new(),
            on_complete,
            sink_error: None,
        }
    }

    fn push(&mut self, index: usize, transcript: Transcript) {
        self.pending.insert(index, transcript);
        while let Some(transcript) = self.pending.remove(&self.next) {
            if self.sink_error.is_none() {
                if let Err(err) = (self.on_complete)(&transcript) {
                    self.sink_error = Some(err);
                }
            }
            self.ordered.push(transcript);
            self.next += 1;
        }
    }

    fn finish(self) -> Result<Vec<Transcript>, RunnerError> {
        debug_assert!(self.pending.is_empty(), "all results must have drained");
        match self.sink_error {
            Some(err) => Err(err),
            None => Ok(self.ordered),
        }
    }
}

/// Everything a batch needs besides the instances themselves.
pub struct BatchContext<'a> {
    pub respondent: &'a dyn Respondent,
    pub params: &'a GenerationParams,
    pub exemplars: &'a [ExemplarBlock],
    pub templates: &'a PromptTemplates,
    /// Worker pool size. 1 forces sequential execution.
    pub concurrency: usize,
}

/// Execute a batch of instances, invoking `on_complete` once per transcript
/// in canonical input order, and returning the ordered transcripts.
pub fn run_batch(
    instances: &[PerturbedInstance],
    ctx: &BatchContext<'_>,
    on_complete: &mut (dyn FnMut(&Transcript) -> Result<(), RunnerError> + Send),
) -> Result<Vec<Transcript>, RunnerError> {
    let mut sink = OrderedSink::new(on_complete);
    execute(instances, ctx, &mut sink)?;
    sink.finish()
}

#[cfg(feature = "parallel")]
fn execute(
    instances: &[PerturbedInstance],
    ctx: &BatchContext<'_>,
    sink: &mut OrderedSink<'_>,
) -> Result<(), RunnerError> {
    if ctx.concurrency <= 1 || instances.len() <= 1 {
        return execute_sequential(instances, ctx, sink);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(ctx.concurrency)
        .build()
        .map_err(|e| RunnerError::Pool(e.to_string()))?;
    let shared = Mutex::new(sink);
    pool.install(|| {
        instances.par_iter().enumerate().try_for_each(
            |(index, instance)| -> Result<(), RunnerError> {
                let transcript = run_condition(
                    instance,
                    ctx.respondent,
                    ctx.params,
                    ctx.exemplars,
                    ctx.templates,
                )?;
                shared.lock().unwrap().push(index, transcript);
                Ok(())
            },
        )
    })
}

#[cfg(not(feature = "parallel"))]
fn execute(
    instances: &[PerturbedInstance],
    ctx: &BatchContext<'_>,
    sink: &mut OrderedSink<'_>,
) -> Result<(), RunnerError> {
    execute_sequential(instances, ctx, sink)
}

fn execute_sequential(
    instances: &[PerturbedInstance],
    ctx: &BatchContext<'_>,
    sink: &mut OrderedSink<'_>,
) -> Result<(), RunnerError> {
    for (index, instance) in instances.iter().enumerate() {
        let transcript = run_condition(
            instance,
            ctx.respondent,
            ctx.params,
            ctx.exemplars,
            ctx.templates,
        )?;
        sink.push(index, transcript);
    }
    Ok(())
}

/// Sequential reference entry point, available regardless of features, for
/// the bench comparison and determinism checks.
pub fn run_batch_sequential(
    instances: &[PerturbedInstance],
    ctx: &BatchContext<'_>,
    on_complete: &mut (dyn FnMut(&Transcript) -> Result<(), RunnerError> + Send),
) -> Result<Vec<Transcript>, RunnerError> {
    let mut sink = OrderedSink::new(on_complete);
    execute_sequential(instances, ctx, &mut sink)?;
    sink.finish()
}
