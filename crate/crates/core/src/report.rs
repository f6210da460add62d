//! Report assembly and emission.
//!
//! One structured report per run (nested JSON), one flat summary table
//! (CSV, rows = model x dataset x condition x metric), and one survival
//! plot per multi-turn curve (SVG, with the single-shot baseline as a
//! horizontal reference line). Aggregation sorts transcripts by record id
//! before any seeded operation, so metrics are invariant to transcript
//! ordering, and every emitted artifact embeds the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Condition, TargetAnswer};
use crate::dialogue::Transcript;
use crate::metrics::{
    bootstrap_ci, conversation_tax, survival_curve, survives_through, switch_rates, Interval,
    MetricsError, SwitchRates,
};
use crate::parsing::{audit_parse_rate, ParseAudit};
use crate::runner::RunManifest;
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy)]
pub struct ReportOptions {
    pub ci_level: f64,
    pub resamples: usize,
}

impl Default for ReportOptions {
    fn default() -> Self {
        // Intervals are additive information, never gating.
        Self {
            ci_level: 0.95,
            resamples: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub model: String,
    pub dataset: String,
    pub condition: Condition,
    /// "truth" for accuracy-flavored groups, "abstain" for abstention.
    pub target: String,
    pub n_attempted: usize,
    pub n_included: usize,
    pub n_excluded_parse: usize,
    pub n_excluded_transport: usize,
    /// C_1 .. C_Tmax.
    pub curve: Vec<f64>,
    pub final_survival: f64,
    pub final_ci: Interval,
    pub parse_audit: ParseAudit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub model: String,
    pub dataset: String,
    pub metric: String,
    pub baseline_rate: f64,
    pub comparison_rate: f64,
    pub absolute_pp: f64,
    pub relative: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchReport {
    pub model: String,
    pub dataset: String,
    #[serde(flatten)]
    pub rates: SwitchRates,
    pub correct_ci: Interval,
    pub incorrect_ci: Interval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub manifest: RunManifest,
    /// False when any transcript came from a non-deterministic respondent.
    pub deterministic: bool,
    pub mixed_template_versions: bool,
    pub groups: Vec<GroupReport>,
    pub comparisons: Vec<Comparison>,
    pub switching: Vec<SwitchReport>,
    pub overall_parse_audit: ParseAudit,
}

fn target_kind(target: &TargetAnswer) -> &'static str {
    match target {
        TargetAnswer::Label { .. } => "truth",
        TargetAnswer::Abstain => "abstain",
    }
}

type GroupKey = (String, String, Condition, &'static str);

fn group_transcripts(transcripts: &[Transcript]) -> BTreeMap<GroupKey, Vec<&Transcript>> {
    let mut groups: BTreeMap<GroupKey, Vec<&Transcript>> = BTreeMap::new();
    for transcript in transcripts {
        let key = (
            transcript.model.clone(),
            transcript.dataset.clone(),
            transcript.condition,
            target_kind(&transcript.target),
        );
        groups.entry(key).or_default().push(transcript);
    }
    for members in groups.values_mut() {
        members.sort_by(|a, b| a.record_id.cmp(&b.record_id));
    }
    groups
}

/// Build the full metrics report from finished transcripts.
pub fn build_report(
    manifest: &RunManifest,
    transcripts: &[Transcript],
    opts: &ReportOptions,
) -> Result<MetricsReport, MetricsError> {
    let groups = group_transcripts(transcripts);

    let mut group_reports = Vec::new();
    for ((model, dataset, condition, target), members) in &groups {
        let t_max = members.iter().map(|t| t.max_turns).max().unwrap_or(1);
        let curve = survival_curve(members, t_max)?;
        curve.assert_monotone();
        let indicators: Vec<f64> = members
            .iter()
            .filter(|t| !t.outcome.is_excluded())
            .map(|t| f64::from(survives_through(t, t_max)))
            .collect();
        let ci_seed = derive_seed(
            manifest.master_seed,
            &[
                b"bootstrap",
                model.as_bytes(),
                dataset.as_bytes(),
                condition.as_str().as_bytes(),
                target.as_bytes(),
            ],
        );
        let final_ci = bootstrap_ci(&indicators, opts.ci_level, opts.resamples, ci_seed)?;
        let parse_audit = audit_parse_rate(members.iter().flat_map(|t| t.selections()));
        group_reports.push(GroupReport {
            model: model.clone(),
            dataset: dataset.clone(),
            condition: *condition,
            target: (*target).to_string(),
            n_attempted: members.len(),
            n_included: curve.n_included,
            n_excluded_parse: curve.n_excluded_parse,
            n_excluded_transport: curve.n_excluded_transport,
            final_survival: curve.final_survival(),
            curve: curve.values,
            final_ci,
            parse_audit,
        });
    }
    group_reports.sort_by(|a, b| {
        (&a.model, &a.dataset, a.condition, &a.target).cmp(&(
            &b.model,
            &b.dataset,
            b.condition,
            &b.target,
        ))
    });

    let find_rate = |model: &str, dataset: &str, condition: Condition, target: &str| {
        group_reports
            .iter()
            .find(|g| {
                g.model == model
                    && g.dataset == dataset
                    && g.condition == condition
                    && g.target == target
            })
            .map(|g| (g.curve[0], g.final_survival))
    };

    let mut pairs: Vec<(String, String)> = group_reports
        .iter()
        .map(|g| (g.model.clone(), g.dataset.clone()))
        .collect();
    pairs.dedup();

    let mut comparisons = Vec::new();
    let mut switching = Vec::new();
    for (model, dataset) in &pairs {
        let ss_full_acc = find_rate(model, dataset, Condition::SingleShotFull, "truth");
        let ss_bin_acc = find_rate(model, dataset, Condition::SingleShotBinary, "truth");
        let ss_full_abs = find_rate(model, dataset, Condition::SingleShotFull, "abstain");
        let ss_bin_abs = find_rate(model, dataset, Condition::SingleShotBinary, "abstain");
        let mt_acc = find_rate(model, dataset, Condition::PositiveConviction, "truth");
        let mt_abs = find_rate(model, dataset, Condition::NegativeConviction, "abstain");

        let mut push = |metric: &str, baseline: f64, comparison: f64| {
            let tax = conversation_tax(baseline, comparison);
            comparisons.push(Comparison {
                model: model.clone(),
                dataset: dataset.clone(),
                metric: metric.to_string(),
                baseline_rate: baseline,
                comparison_rate: comparison,
                absolute_pp: tax.absolute_pp,
                relative: tax.relative,
            });
        };
        if let (Some((ss, _)), Some((_, mt))) = (ss_full_acc, mt_acc) {
            push("conversation_tax_accuracy", ss, mt);
        }
        if let (Some((ss, _)), Some((_, mt))) = (ss_full_abs, mt_abs) {
            push("conversation_tax_abstention", ss, mt);
        }
        if let (Some((full, _)), Some((binary, _))) = (ss_full_acc, ss_bin_acc) {
            push("narrowing_gain_accuracy", full, binary);
        }
        if let (Some((full, _)), Some((binary, _))) = (ss_full_abs, ss_bin_abs) {
            push("narrowing_gain_abstention", full, binary);
        }

        let flex: Vec<&Transcript> = groups
            .get(&(
                model.clone(),
                dataset.clone(),
                Condition::Flexibility,
                "abstain",
            ))
            .cloned()
            .unwrap_or_default();
        let sens: Vec<&Transcript> = groups
            .get(&(
                model.clone(),
                dataset.clone(),
                Condition::FlexSensitivity,
                "abstain",
            ))
            .cloned()
            .unwrap_or_default();
        if !flex.is_empty() && !sens.is_empty() {
            // A respondent that never holds the abstention at turn 1 leaves
            // nothing to condition on; the switching section is omitted
            // rather than failing the whole report.
            let rates = match switch_rates(&flex, &sens) {
                Ok(rates) => rates,
                Err(MetricsError::EmptyDenominator { .. }) => continue,
                Err(err) => return Err(err),
            };
            let switch_indicators = |side: &[&Transcript]| -> Vec<f64> {
                side.iter()
                    .filter(|t| !t.outcome.is_excluded() && t.held_at_turn_one())
                    .map(|t| {
                        f64::from(matches!(
                            t.outcome,
                            crate::dialogue::TranscriptOutcome::SwitchedAtTurn { turn: 2 }
                        ))
                    })
                    .collect()
            };
            let correct_ci = bootstrap_ci(
                &switch_indicators(&flex),
                opts.ci_level,
                opts.resamples,
                derive_seed(
                    manifest.master_seed,
                    &[
                        b"bootstrap-switch",
                        model.as_bytes(),
                        dataset.as_bytes(),
                        b"flex",
                    ],
                ),
            )?;
            let incorrect_ci = bootstrap_ci(
                &switch_indicators(&sens),
                opts.ci_level,
                opts.resamples,
                derive_seed(
                    manifest.master_seed,
                    &[
                        b"bootstrap-switch",
                        model.as_bytes(),
                        dataset.as_bytes(),
                        b"sens",
                    ],
                ),
            )?;
            switching.push(SwitchReport {
                model: model.clone(),
                dataset: dataset.clone(),
                rates,
                correct_ci,
                incorrect_ci,
            });
        }
    }

    let overall_parse_audit = audit_parse_rate(transcripts.iter().flat_map(|t| t.selections()));
    let deterministic = transcripts.iter().all(|t| t.started_at_ms.is_none());
    let versions: std::collections::BTreeSet<&str> = transcripts
        .iter()
        .map(|t| t.template_version.as_str())
        .collect();

    Ok(MetricsReport {
        manifest: manifest.clone(),
        deterministic,
        mixed_template_versions: versions.len() > 1,
        groups: group_reports,
        comparisons,
        switching,
        overall_parse_audit,
    })
}

pub fn report_json(report: &MetricsReport) -> String {
    let mut out = serde_json::to_string_pretty(report).expect("report serializes");
    out.push('\n');
    out
}

fn csv_field(value: &str) -> String {
    if value.contains([',', '"', '\n']) {
        format!("\"{}\"", value.replace('"', "\"\""))
    } else {
        value.to_string()
    }
}

fn fmt_rate(value: f64) -> String {
    format!("{value:.6}")
}

/// Flat summary table: one row per (model, dataset, condition, target,
/// metric).
pub fn summary_csv(report: &MetricsReport) -> String {
    let mut out = String::new();
    let m = &report.manifest;
    out.push_str(&format!(
        "# config_hash={} master_seed={} template_version={} harness_version={}\n",
        m.config_hash, m.master_seed, m.template_version, m.harness_version
    ));
    out.push_str("model,dataset,condition,target,metric,value,denominator\n");
    let mut row = |model: &str,
                   dataset: &str,
                   condition: &str,
                   target: &str,
                   metric: &str,
                   value: String,
                   denominator: String| {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            csv_field(model),
            csv_field(dataset),
            csv_field(condition),
            csv_field(target),
            csv_field(metric),
            value,
            denominator
        ));
    };

    for g in &report.groups {
        let c = g.condition.as_str();
        row(
            &g.model,
            &g.dataset,
            c,
            &g.target,
            "n_attempted",
            g.n_attempted.to_string(),
            String::new(),
        );
        row(
            &g.model,
            &g.dataset,
            c,
            &g.target,
            "n_included",
            g.n_included.to_string(),
            String::new(),
        );
        row(
            &g.model,
            &g.dataset,
            c,
            &g.target,
            "n_excluded_parse",
            g.n_excluded_parse.to_string(),
            String::new(),
        );
        row(
            &g.model,
            &g.dataset,
            c,
            &g.target,
            "n_excluded_transport",
            g.n_excluded_transport.to_string(),
            String::new(),
        );
        for (i, value) in g.curve.iter().enumerate() {
            row(
                &g.model,
                &g.dataset,
                c,
                &g.target,
                &format!("c_{}", i + 1),
                fmt_rate(*value),
                g.n_included.to_string(),
            );
        }
        row(
            &g.model,
            &g.dataset,
            c,
            &g.target,
            "final_survival",
            fmt_rate(g.final_survival),
            g.n_included.to_string(),
        );
        row(
            &g.model,
            &g.dataset,
            c,
            &g.target,
            "final_ci_lo",
            fmt_rate(g.final_ci.lo),
            String::new(),
        );
        row(
            &g.model,
            &g.dataset,
            c,
            &g.target,
            "final_ci_hi",
            fmt_rate(g.final_ci.hi),
            String::new(),
        );
        row(
            &g.model,
            &g.dataset,
            c,
            &g.target,
            "parse_error_rate",
            fmt_rate(g.parse_audit.rate),
            g.parse_audit.total_turns.to_string(),
        );
    }
    for cmp in &report.comparisons {
        row(
            &cmp.model,
            &cmp.dataset,
            "-",
            "-",
            &format!("{}_absolute_pp", cmp.metric),
            format!("{:.4}", cmp.absolute_pp),
            String::new(),
        );
        if let Some(relative) = cmp.relative {
            row(
                &cmp.model,
                &cmp.dataset,
                "-",
                "-",
                &format!("{}_relative", cmp.metric),
                fmt_rate(relative),
                String::new(),
            );
        }
    }
    for s in &report.switching {
        row(
            &s.model,
            &s.dataset,
            "flexibility",
            "abstain",
            "correct_switch_rate",
            fmt_rate(s.rates.correct_switch_rate),
            s.rates.n_flex.to_string(),
        );
        row(
            &s.model,
            &s.dataset,
            "flex_sensitivity",
            "abstain",
            "incorrect_switch_rate",
            fmt_rate(s.rates.incorrect_switch_rate),
            s.rates.n_sens.to_string(),
        );
    }
    out.push_str(&format!(
        "-,-,-,-,overall_parse_error_rate,{},{}\n",
        fmt_rate(report.overall_parse_audit.rate),
        report.overall_parse_audit.total_turns
    ));
    out
}

fn sanitize(part: &str) -> String {
    part.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c.to_ascii_lowercase()
            } else {
                '-'
            }
        })
        .collect()
}

/// Render one survival curve as a standalone SVG: turn on the x-axis, C_t
/// on the y-axis, the single-shot baseline as a dashed horizontal line.
pub fn survival_svg(
    title: &str,
    curve: &[f64],
    baseline: Option<f64>,
    manifest: &RunManifest,
) -> String {
    let width = 480.0;
    let height = 320.0;
    let left = 56.0;
    let right = 24.0;
    let top = 40.0;
    let bottom = 48.0;
    let plot_w = width - left - right;
    let plot_h = height - top - bottom;
    let t_max = curve.len().max(1);

    let x = |turn: usize| -> f64 {
        if t_max == 1 {
            left + plot_w / 2.0
        } else {
            left + plot_w * (turn as f64 - 1.0) / (t_max as f64 - 1.0)
        }
    };
    let y = |rate: f64| -> f64 { top + plot_h * (1.0 - rate) };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n"
    ));
    svg.push_str(&format!(
        "<!-- config_hash={} master_seed={} template_version={} harness_version={} -->\n",
        manifest.config_hash,
        manifest.master_seed,
        manifest.template_version,
        manifest.harness_version
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"22\" font-family=\"sans-serif\" font-size=\"14\">{}</text>\n",
        left,
        title.replace('<', "&lt;").replace('>', "&gt;")
    ));

    for tick in 0..=4 {
        let rate = tick as f64 / 4.0;
        let ty = y(rate);
        svg.push_str(&format!(
            "<line x1=\"{left:.1}\" y1=\"{ty:.1}\" x2=\"{:.1}\" y2=\"{ty:.1}\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n",
            left + plot_w
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">{rate:.2}</text>\n",
            left - 6.0,
            ty + 3.0
        ));
    }
    for turn in 1..=t_max {
        let tx = x(turn);
        svg.push_str(&format!(
            "<text x=\"{tx:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">{turn}</text>\n",
            top + plot_h + 16.0
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">turn</text>\n",
        left + plot_w / 2.0,
        height - 12.0
    ));

    if let Some(rate) = baseline {
        let by = y(rate);
        svg.push_str(&format!(
            "<line x1=\"{left:.1}\" y1=\"{by:.1}\" x2=\"{:.1}\" y2=\"{by:.1}\" stroke=\"#888888\" stroke-width=\"1.5\" stroke-dasharray=\"6,4\"/>\n",
            left + plot_w
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"10\" fill=\"#555555\">single-shot {rate:.3}</text>\n",
            left + 4.0,
            by - 5.0
        ));
    }

    let points: Vec<String> = curve
        .iter()
        .enumerate()
        .map(|(i, rate)| format!("{:.1},{:.1}", x(i + 1), y(*rate)))
        .collect();
    svg.push_str(&format!(
        "<polyline fill=\"none\" stroke=\"#1f6fb2\" stroke-width=\"2\" points=\"{}\"/>\n",
        points.join(" ")
    ));
    for (i, rate) in curve.iter().enumerate() {
        svg.push_str(&format!(
            "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"#1f6fb2\"/>\n",
            x(i + 1),
            y(*rate)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Write report.json, summary.csv, and per-curve SVG plots into `out_dir`.
pub fn write_report_files(
    report: &MetricsReport,
    out_dir: &Path,
) -> std::io::Result<Vec<std::path::PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();

    let json_path = out_dir.join("report.json");
    fs::write(&json_path, report_json(report))?;
    written.push(json_path);

    let csv_path = out_dir.join("summary.csv");
    fs::write(&csv_path, summary_csv(report))?;
    written.push(csv_path);

    let multi_turn: Vec<&GroupReport> =
        report.groups.iter().filter(|g| g.curve.len() > 1).collect();
    if !multi_turn.is_empty() {
        let plot_dir = out_dir.join("plots");
        fs::create_dir_all(&plot_dir)?;
        for group in multi_turn {
            let baseline = report
                .groups
                .iter()
                .find(|g| {
                    g.model == group.model
                        && g.dataset == group.dataset
                        && g.condition == Condition::SingleShotFull
                        && g.target == group.target
                })
                .map(|g| g.final_survival);
            let title = format!(
                "{} / {} / {} ({})",
                group.model, group.dataset, group.condition, group.target
            );
            let svg = survival_svg(&title, &group.curve, baseline, &report.manifest);
            let name = format!(
                "{}_{}_{}_{}.svg",
                sanitize(&group.model),
                sanitize(&group.dataset),
                sanitize(group.condition.as_str()),
                sanitize(&group.target)
            );
            let path = plot_dir.join(name);
            fs::write(&path, svg)?;
            written.push(path);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dialogue::TranscriptOutcome;

    fn manifest() -> RunManifest {
        RunManifest::new("deadbeef".to_string(), 7, "v1".to_string())
    }

    fn transcript(
        record_id: &str,
        condition: Condition,
        target: TargetAnswer,
        outcome: TranscriptOutcome,
        survived_through: u32,
        max_turns: u32,
    ) -> Transcript {
        Transcript {
            record_id: record_id.to_string(),
            dataset: "custom".to_string(),
            model: "agent".to_string(),
            condition,
            target,
            seed: 0,
            template_version: "v1".to_string(),
            max_turns,
            turns: Vec::new(),
            outcome,
            survived_through,
            started_at_ms: None,
            finished_at_ms: None,
        }
    }

    fn truth() -> TargetAnswer {
        TargetAnswer::Label {
            label: "B".to_string(),
        }
    }

    fn sample_transcripts() -> Vec<Transcript> {
        let mut all = Vec::new();
        for i in 0..10 {
            all.push(transcript(
                &format!("q-{i:02}"),
                Condition::SingleShotFull,
                truth(),
                if i < 7 {
                    TranscriptOutcome::SurvivedAll
                } else {
                    TranscriptOutcome::LostAtTurnOne
                },
                u32::from(i < 7),
                1,
            ));
        }
        for i in 0..10 {
            let (outcome, survived) = if i < 5 {
                (TranscriptOutcome::SurvivedAll, 3)
            } else if i < 8 {
                (TranscriptOutcome::SwitchedAtTurn { turn: 2 }, 1)
            } else {
                (TranscriptOutcome::LostAtTurnOne, 0)
            };
            all.push(transcript(
                &format!("q-{i:02}"),
                Condition::PositiveConviction,
                truth(),
                outcome,
                survived,
                3,
            ));
        }
        all
    }

    #[test]
    fn report_groups_and_compares() {
        let report = build_report(
            &manifest(),
            &sample_transcripts(),
            &ReportOptions::default(),
        )
        .unwrap();
        assert_eq!(report.groups.len(), 2);
        let ss = &report.groups[0];
        assert_eq!(ss.condition, Condition::SingleShotFull);
        assert!((ss.final_survival - 0.7).abs() < 1e-12);
        let pc = &report.groups[1];
        assert_eq!(pc.curve.len(), 3);
        assert!((pc.curve[0] - 0.8).abs() < 1e-12);
        assert!((pc.final_survival - 0.5).abs() < 1e-12);

        assert_eq!(report.comparisons.len(), 1);
        let tax = &report.comparisons[0];
        assert_eq!(tax.metric, "conversation_tax_accuracy");
        assert!((tax.absolute_pp + 20.0).abs() < 1e-9);
        assert!(report.deterministic);
        assert!(!report.mixed_template_versions);
    }

    #[test]
    fn report_is_order_independent() {
        let transcripts = sample_transcripts();
        let mut reversed = transcripts.clone();
        reversed.reverse();
        let opts = ReportOptions::default();
        let a = build_report(&manifest(), &transcripts, &opts).unwrap();
        let b = build_report(&manifest(), &reversed, &opts).unwrap();
        assert_eq!(report_json(&a), report_json(&b));
    }

    #[test]
    fn csv_has_manifest_header_and_rows() {
        let report = build_report(
            &manifest(),
            &sample_transcripts(),
            &ReportOptions::default(),
        )
        .unwrap();
        let csv = summary_csv(&report);
        let mut lines = csv.lines();
        assert!(lines.next().unwrap().starts_with("# config_hash=deadbeef"));
        assert_eq!(
            lines.next().unwrap(),
            "model,dataset,condition,target,metric,value,denominator"
        );
        assert!(csv.contains("positive_conviction,truth,c_3,"));
        assert!(csv.contains("conversation_tax_accuracy_absolute_pp"));
    }

    #[test]
    fn svg_embeds_manifest_and_baseline() {
        let svg = survival_svg(
            "agent / custom / positive_conviction",
            &[0.8, 0.72, 0.648],
            Some(0.7),
            &manifest(),
        );
        assert!(svg.contains("config_hash=deadbeef"));
        assert!(svg.contains("polyline"));
        assert!(svg.contains("single-shot 0.700"));
    }

    #[test]
    fn mixed_template_versions_are_flagged() {
        let mut transcripts = sample_transcripts();
        transcripts[0].template_version = "custom-abc".to_string();
        let report = build_report(&manifest(), &transcripts, &ReportOptions::default()).unwrap();
        assert!(report.mixed_template_versions);
    }
}
