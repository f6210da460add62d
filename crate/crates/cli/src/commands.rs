//! Subcommand implementations: validate, run, simulate, report.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

use conviction_core::corpus::{
    load_records_lenient, make_abstention_instance, make_instance, sample_without_replacement,
    synthetic_records, Condition, CorpusError, McqaRecord, PerturbedInstance,
};
use conviction_core::dialogue::{DialogueError, ExemplarBlock, Transcript};
use conviction_core::metrics::MetricsError;
use conviction_core::report::{build_report, write_report_files, MetricsReport, ReportOptions};
use conviction_core::runner::{
    read_transcript_log, run_batch, BatchContext, RunManifest, RunnerError, TranscriptWriter,
};
use conviction_core::seed::{derive_seed, record_seed};

use crate::config::{RespondentKind, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("validation failed:\n{0}")]
    ChecksFailed(ValidationReport),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Dialogue(#[from] DialogueError),
    #[error(transparent)]
    Runner(#[from] RunnerError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("io failure: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// Exit code contract: 1 for validation failures, 2 for runtime
    /// failures with partial outputs preserved.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::ChecksFailed(_) => 1,
            _ => 2,
        }
    }
}

#[derive(Debug)]
pub struct CheckResult {
    pub name: String,
    pub ok: bool,
    pub detail: String,
}

#[derive(Debug, Default)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    fn push(&mut self, name: impl Into<String>, ok: bool, detail: impl Into<String>) {
        self.checks.push(CheckResult {
            name: name.into(),
            ok,
            detail: detail.into(),
        });
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.ok)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for check in &self.checks {
            writeln!(
                f,
                "{} {}: {}",
                if check.ok { "PASS" } else { "FAIL" },
                check.name,
                check.detail
            )?;
        }
        Ok(())
    }
}

struct LoadedDataset {
    tag: String,
    records: Vec<Arc<McqaRecord>>,
}

fn load_dataset_file(
    path: &Path,
    tag: conviction_core::DatasetTag,
) -> Result<(Vec<McqaRecord>, usize), CliError> {
    let file = File::open(path)
        .map_err(|e| CliError::Config(format!("cannot open dataset {}: {e}", path.display())))?;
    let mut reader = BufReader::new(file);
    let (records, skipped) = load_records_lenient(&mut reader, tag)?;
    for line in &skipped {
        eprintln!(
            "warning: {} line {}: skipped record: {}",
            path.display(),
            line.line,
            line.reason
        );
    }
    Ok((records, skipped.len()))
}

/// Load, validate, and sample every configured dataset. Falls back to a
/// synthetic corpus for dataset-free stochastic runs.
fn load_inference_data(config: &RunConfig) -> Result<Vec<LoadedDataset>, CliError> {
    if config.datasets.is_empty() {
        if config.respondent.kind != RespondentKind::Bernoulli {
            return Err(CliError::Config(
                "remote runs require at least one [[dataset]]".to_string(),
            ));
        }
        let records = synthetic_records(
            config.run.n,
            config.simulate.synthetic_options,
            config.run.master_seed,
        );
        return Ok(vec![LoadedDataset {
            tag: "custom".to_string(),
            records: records.into_iter().map(Arc::new).collect(),
        }]);
    }
    let mut out = Vec::new();
    for dataset in &config.datasets {
        let (records, _) = load_dataset_file(&dataset.path, dataset.tag)?;
        if records.len() < config.run.n {
            return Err(CliError::Config(format!(
                "dataset {} has {} valid records, fewer than run.n = {}",
                dataset.path.display(),
                records.len(),
                config.run.n
            )));
        }
        let sampled = sample_without_replacement(&records, config.run.n, config.run.master_seed)?;
        out.push(LoadedDataset {
            tag: dataset.tag.as_str().to_string(),
            records: sampled.into_iter().map(Arc::new).collect(),
        });
    }
    Ok(out)
}

fn load_exemplars(
    config: &RunConfig,
    inference_ids: &HashSet<String>,
) -> Result<Vec<ExemplarBlock>, CliError> {
    let Some(section) = &config.exemplars else {
        return Ok(Vec::new());
    };
    let (records, _) = load_dataset_file(&section.path, section.tag)?;
    if records.len() < section.k {
        return Err(CliError::Config(format!(
            "exemplar file {} has {} records, fewer than k = {}",
            section.path.display(),
            records.len(),
            section.k
        )));
    }
    let clashing: Vec<&str> = records
        .iter()
        .map(|r| r.id.as_str())
        .filter(|id| inference_ids.contains(*id))
        .collect();
    if !clashing.is_empty() {
        return Err(CliError::Config(format!(
            "exemplar ids overlap inference data ({} ids, e.g. {:?}); few-shot exemplars must come from a disjoint split",
            clashing.len(),
            &clashing[..clashing.len().min(3)]
        )));
    }
    let seed = derive_seed(config.run.master_seed, &[b"exemplars"]);
    let sampled = sample_without_replacement(&records, section.k, seed)?;
    Ok(sampled.iter().map(ExemplarBlock::from_record).collect())
}

/// Canonical identity of one planned conversation, used for resume
/// bookkeeping.
fn transcript_key(t: &Transcript) -> (String, Condition, bool, String) {
    (
        t.dataset.clone(),
        t.condition,
        t.target.is_abstain(),
        t.record_id.clone(),
    )
}

fn instance_key(dataset: &str, instance: &PerturbedInstance) -> (String, Condition, bool, String) {
    (
        dataset.to_string(),
        instance.condition,
        instance.target.is_abstain(),
        instance.record_id().to_string(),
    )
}

/// Expand the run matrix in canonical order: dataset, sampled record,
/// condition (config order). Single-shot conditions contribute both the
/// truth-targeted instance and its abstention-flavored companion, so
/// reports carry both single-shot baselines.
fn build_plan(
    config: &RunConfig,
    data: &[LoadedDataset],
) -> Result<Vec<(String, PerturbedInstance)>, CliError> {
    let mut plan = Vec::new();
    for dataset in data {
        for record in &dataset.records {
            let seed = record_seed(config.run.master_seed, &record.id);
            for condition in &config.run.conditions {
                let instance = make_instance(record, *condition, seed)?;
                plan.push((dataset.tag.clone(), instance));
                if condition.is_single_shot() {
                    let space = condition.answer_space();
                    let companion = make_abstention_instance(record, space, seed)?;
                    plan.push((dataset.tag.clone(), companion));
                }
            }
        }
    }
    Ok(plan)
}

/// Check the config, data, exemplars, respondent reachability, and
/// condition feasibility without running anything.
pub fn cmd_validate(config: &RunConfig) -> Result<ValidationReport, CliError> {
    let mut report = ValidationReport::default();

    let shape = config.shape_problems();
    report.push(
        "config",
        shape.is_empty(),
        if shape.is_empty() {
            "all fields well-formed".to_string()
        } else {
            shape.join("; ")
        },
    );
    if !shape.is_empty() {
        return Ok(report);
    }

    let mut sampled: Vec<LoadedDataset> = Vec::new();
    if config.datasets.is_empty() {
        report.push(
            "datasets",
            true,
            format!(
                "no dataset files; synthetic corpus of {} records with {} options",
                config.run.n, config.simulate.synthetic_options
            ),
        );
        match load_inference_data(config) {
            Ok(data) => sampled = data,
            Err(e) => report.push("datasets", false, e.to_string()),
        }
    } else {
        for dataset in &config.datasets {
            match load_dataset_file(&dataset.path, dataset.tag) {
                Ok((records, skipped)) => {
                    let ok = records.len() >= config.run.n;
                    report.push(
                        format!("dataset {}", dataset.tag),
                        ok,
                        if ok {
                            format!(
                                "{} valid records ({} skipped); sampling {}",
                                records.len(),
                                skipped,
                                config.run.n
                            )
                        } else {
                            format!(
                                "{} valid records is fewer than run.n = {}; lower n or fix the data",
                                records.len(),
                                config.run.n
                            )
                        },
                    );
                    if ok {
                        let sample = sample_without_replacement(
                            &records,
                            config.run.n,
                            config.run.master_seed,
                        )?;
                        sampled.push(LoadedDataset {
                            tag: dataset.tag.as_str().to_string(),
                            records: sample.into_iter().map(Arc::new).collect(),
                        });
                    }
                }
                Err(e) => report.push(format!("dataset {}", dataset.tag), false, e.to_string()),
            }
        }
    }

    let inference_ids: HashSet<String> = sampled
        .iter()
        .flat_map(|d| d.records.iter().map(|r| r.id.clone()))
        .collect();
    if config.exemplars.is_some() {
        match load_exemplars(config, &inference_ids) {
            Ok(exemplars) => report.push(
                "exemplars",
                true,
                format!("{} exemplars, disjoint from inference ids", exemplars.len()),
            ),
            Err(e) => report.push("exemplars", false, e.to_string()),
        }
    }

    match config.respondent.kind {
        RespondentKind::Remote => {
            let remote = conviction_core::respondent::RemoteRespondent::with_settings(
                config.respondent.base_url.clone().unwrap_or_default(),
                std::time::Duration::from_secs(config.respondent.timeout_secs),
                config.retry_policy(),
                config.respondent.max_in_flight,
                std::env::var(conviction_core::respondent::API_KEY_ENV).ok(),
            );
            match remote.ping(&config.generation_params()) {
                Ok(()) => report.push(
                    "respondent",
                    true,
                    format!("endpoint {} reachable", remote.base_url()),
                ),
                Err(e) => report.push(
                    "respondent",
                    false,
                    format!(
                        "endpoint {} unreachable: {e}; check base_url and {}",
                        remote.base_url(),
                        conviction_core::respondent::API_KEY_ENV
                    ),
                ),
            }
        }
        RespondentKind::Bernoulli => {
            report.push(
                "respondent",
                true,
                "stochastic agent, no network".to_string(),
            );
        }
    }

    let mut infeasible = 0usize;
    let mut first_failure = String::new();
    let mut attempted = 0usize;
    for dataset in &sampled {
        for record in &dataset.records {
            let seed = record_seed(config.run.master_seed, &record.id);
            for condition in &config.run.conditions {
                attempted += 1;
                if let Err(e) = make_instance(record, *condition, seed) {
                    infeasible += 1;
                    if first_failure.is_empty() {
                        first_failure = e.to_string();
                    }
                }
            }
        }
    }
    report.push(
        "condition feasibility",
        infeasible == 0,
        if infeasible == 0 {
            format!("{attempted} (record, condition) pairs instantiable")
        } else {
            format!("{infeasible} of {attempted} pairs infeasible; first: {first_failure}")
        },
    );

    Ok(report)
}

#[derive(Debug)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub transcript_path: PathBuf,
    pub new_transcripts: usize,
    pub total_transcripts: usize,
    pub report: MetricsReport,
}

/// Execute the configured run end to end: sample, perturb, drive every
/// conversation, persist transcripts incrementally, and emit the report.
pub fn cmd_run(config: &RunConfig, resume: bool) -> Result<RunOutcome, CliError> {
    let templates = config.build_templates();
    let manifest = RunManifest::new(
        config.experiment_fingerprint(),
        config.run.master_seed,
        templates.version.clone(),
    );

    let data = load_inference_data(config)?;
    let inference_ids: HashSet<String> = data
        .iter()
        .flat_map(|d| d.records.iter().map(|r| r.id.clone()))
        .collect();
    let exemplars = load_exemplars(config, &inference_ids)?;
    let plan = build_plan(config, &data)?;

    std::fs::create_dir_all(&config.run.out_dir)?;
    let transcript_path = config.run.out_dir.join("transcripts.jsonl");

    let mut done: Vec<Transcript> = Vec::new();
    let mut writer = if resume && transcript_path.exists() {
        let (existing_manifest, existing) = read_transcript_log(&transcript_path)?;
        if existing_manifest != manifest {
            return Err(CliError::Config(format!(
                "cannot resume: existing log {} was produced by config {} (seed {}), current config is {} (seed {})",
                transcript_path.display(),
                existing_manifest.config_hash,
                existing_manifest.master_seed,
                manifest.config_hash,
                manifest.master_seed,
            )));
        }
        done = existing;
        TranscriptWriter::append_to(&transcript_path)?
    } else {
        TranscriptWriter::create(&transcript_path, &manifest)?
    };

    let done_keys: HashSet<_> = done.iter().map(transcript_key).collect();
    let remaining: Vec<PerturbedInstance> = plan
        .iter()
        .filter(|(dataset, instance)| !done_keys.contains(&instance_key(dataset, instance)))
        .map(|(_, instance)| instance.clone())
        .collect();

    let respondent = config.build_respondent()?;
    let params = config.generation_params();
    let ctx = BatchContext {
        respondent: respondent.as_ref(),
        params: &params,
        exemplars: &exemplars,
        templates: &templates,
        concurrency: config.run.concurrency,
    };
    let new_transcripts = run_batch(&remaining, &ctx, &mut |t| writer.append(t))?;
    drop(writer);

    let mut all = done;
    all.extend(new_transcripts.iter().cloned());

    let report = build_report(&manifest, &all, &ReportOptions::default())?;
    write_report_files(&report, &config.run.out_dir)?;

    Ok(RunOutcome {
        out_dir: config.run.out_dir.clone(),
        transcript_path,
        new_transcripts: new_transcripts.len(),
        total_transcripts: all.len(),
        report,
    })
}

/// Network-free oracle mode: identical pipeline, stochastic respondent.
pub fn cmd_simulate(config: &RunConfig) -> Result<RunOutcome, CliError> {
    if config.respondent.kind != RespondentKind::Bernoulli {
        return Err(CliError::Config(
            "simulate requires respondent.kind = \"bernoulli\"".to_string(),
        ));
    }
    cmd_run(config, false)
}

/// Recompute metrics from persisted transcript logs without re-running
/// any model.
pub fn cmd_report(
    transcript_files: &[PathBuf],
    out_dir: &Path,
    allow_mixed: bool,
) -> Result<RunOutcome, CliError> {
    if transcript_files.is_empty() {
        return Err(CliError::Config(
            "report requires at least one transcript file".to_string(),
        ));
    }
    let mut manifests: Vec<RunManifest> = Vec::new();
    let mut transcripts: Vec<Transcript> = Vec::new();
    for path in transcript_files {
        let (manifest, mut batch) = read_transcript_log(path)?;
        manifests.push(manifest);
        transcripts.append(&mut batch);
    }
    let first = manifests[0].clone();
    for (path, manifest) in transcript_files.iter().zip(&manifests).skip(1) {
        let silently_mismatched = manifest.config_hash != first.config_hash
            || manifest.master_seed != first.master_seed
            || manifest.harness_version != first.harness_version;
        if silently_mismatched && !allow_mixed {
            return Err(CliError::Config(format!(
                "{} carries manifest {:?} which does not match {:?}; pass --allow-mixed to merge anyway",
                path.display(),
                manifest,
                first
            )));
        }
        if manifest.template_version != first.template_version {
            eprintln!(
                "warning: {} uses template version {} (first file uses {}); metrics are computed anyway and the report is flagged",
                path.display(),
                manifest.template_version,
                first.template_version
            );
        }
    }

    let report = build_report(&first, &transcripts, &ReportOptions::default())?;
    write_report_files(&report, out_dir)?;
    Ok(RunOutcome {
        out_dir: out_dir.to_path_buf(),
        transcript_path: transcript_files[0].clone(),
        new_transcripts: 0,
        total_transcripts: transcripts.len(),
        report,
    })
}

/// One-screen run summary.
pub fn format_summary(outcome: &RunOutcome) -> String {
    let report = &outcome.report;
    let mut out = String::new();
    let m = &report.manifest;
    out.push_str(&format!(
        "run {} seed {} templates {} harness {}{}\n",
        m.config_hash,
        m.master_seed,
        m.template_version,
        m.harness_version,
        if report.deterministic {
            ""
        } else {
            " [non-deterministic respondent]"
        }
    ));
    out.push_str(&format!(
        "transcripts: {} total ({} new) -> {}\n",
        outcome.total_transcripts,
        outcome.new_transcripts,
        outcome.transcript_path.display()
    ));
    out.push_str(&format!(
        "{:<16} {:<10} {:<20} {:<8} {:>5} {:>5} {:>5}  {}\n",
        "model", "dataset", "condition", "target", "n", "incl", "excl", "C_t"
    ));
    for g in &report.groups {
        let curve = g
            .curve
            .iter()
            .map(|v| format!("{v:.3}"))
            .collect::<Vec<_>>()
            .join(" ");
        out.push_str(&format!(
            "{:<16} {:<10} {:<20} {:<8} {:>5} {:>5} {:>5}  {} [{:.3}, {:.3}]\n",
            g.model,
            g.dataset,
            g.condition.as_str(),
            g.target,
            g.n_attempted,
            g.n_included,
            g.n_excluded_parse + g.n_excluded_transport,
            curve,
            g.final_ci.lo,
            g.final_ci.hi
        ));
    }
    for c in &report.comparisons {
        out.push_str(&format!(
            "{:<16} {:<10} {:<36} {:+.1} pp{}\n",
            c.model,
            c.dataset,
            c.metric,
            c.absolute_pp,
            match c.relative {
                Some(r) => format!(" ({:+.1}% relative)", r * 100.0),
                None => " (relative undefined)".to_string(),
            }
        ));
    }
    for s in &report.switching {
        out.push_str(&format!(
            "{:<16} {:<10} switch rates: correct {:.3} (n={}), incorrect {:.3} (n={})\n",
            s.model,
            s.dataset,
            s.rates.correct_switch_rate,
            s.rates.n_flex,
            s.rates.incorrect_switch_rate,
            s.rates.n_sens
        ));
    }
    out.push_str(&format!(
        "parse errors: {}/{} turns ({:.6})\n",
        report.overall_parse_audit.unparseable,
        report.overall_parse_audit.total_turns,
        report.overall_parse_audit.rate
    ));
    out
}
