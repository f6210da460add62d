//! Metrics over finished transcripts.
//!
//! The central quantity is the cumulative survival rate: the fraction of
//! included queries whose respondent held the target at every turn up to T.
//! A query that abandons the target at any turn contributes 0 to all later
//! turns, so curves are non-increasing by construction; a query that
//! exhausts all of its follow-ups keeps contributing 1. Parse and transport
//! failures are excluded from every denominator and counted separately.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Condition;
use crate::dialogue::{Transcript, TranscriptOutcome};
use crate::seed::{derive_seed, rng_from};

use rand::Rng;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no included transcripts: the rate is undefined")]
    EmptyIncludedSet,
    #[error("empty switch-rate denominator for {side}")]
    EmptyDenominator { side: &'static str },
    #[error("expected condition {expected}, found {found}")]
    MixedConditions {
        expected: Condition,
        found: Condition,
    },
    #[error("{found} is not a single-shot condition")]
    NotSingleShot { found: Condition },
    #[error("bootstrap input is empty")]
    EmptyInput,
    #[error("confidence level must be in (0, 1), got {level}")]
    InvalidLevel { level: f64 },
    #[error("bootstrap needs at least one resample")]
    ZeroResamples,
    #[error("bootstrap indicators must be 0 or 1, got {value}")]
    InvalidIndicator { value: f64 },
}

/// Turn-indexed cumulative survival of a condition's target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCurve {
    pub condition: Condition,
    /// C_1 .. C_Tmax.
    pub values: Vec<f64>,
    pub n_included: usize,
    pub n_excluded_parse: usize,
    pub n_excluded_transport: usize,
}

impl SurvivalCurve {
    pub fn n_excluded(&self) -> usize {
        self.n_excluded_parse + self.n_excluded_transport
    }

    pub fn final_survival(&self) -> f64 {
        *self.values.last().expect("curve has at least one turn")
    }

    /// Every emitted curve must be non-increasing.
    pub fn assert_monotone(&self) {
        for window in self.values.windows(2) {
            assert!(
                window[1] <= window[0] + 1e-12,
                "survival curve must be non-increasing: {:?}",
                self.values
            );
        }
    }
}

fn is_included(transcript: &Transcript) -> bool {
    !transcript.outcome.is_excluded()
}

/// Does this transcript still hold the target after turn `t`?
///
/// Early failure zeroes all later turns; surviving every available
/// follow-up counts as survival at every later turn (the indicator product
/// over turns that do not exist is empty).
pub fn survives_through(transcript: &Transcript, t: u32) -> bool {
    transcript.survived_through >= t || matches!(transcript.outcome, TranscriptOutcome::SurvivedAll)
}

/// Cumulative survival over included transcripts of a single condition.
pub fn survival_curve(
    transcripts: &[&Transcript],
    t_max: u32,
) -> Result<SurvivalCurve, MetricsError> {
    assert!(t_max >= 1, "t_max must be at least 1");
    let condition = transcripts
        .first()
        .map(|t| t.condition)
        .ok_or(MetricsError::EmptyIncludedSet)?;
    for transcript in transcripts {
        if transcript.condition != condition {
            return Err(MetricsError::MixedConditions {
                expected: condition,
                found: transcript.condition,
            });
        }
    }
    let included: Vec<&&Transcript> = transcripts.iter().filter(|t| is_included(t)).collect();
    if included.is_empty() {
        return Err(MetricsError::EmptyIncludedSet);
    }
    let n = included.len() as f64;
    let values: Vec<f64> = (1..=t_max)
        .map(|t| included.iter().filter(|tr| survives_through(tr, t)).count() as f64 / n)
        .collect();
    let curve = SurvivalCurve {
        condition,
        values,
        n_included: included.len(),
        n_excluded_parse: transcripts
            .iter()
            .filter(|t| t.outcome.is_parse_error())
            .count(),
        n_excluded_transport: transcripts
            .iter()
            .filter(|t| t.outcome.is_transport_error())
            .count(),
    };
    curve.assert_monotone();
    Ok(curve)
}

/// A single rate with its exact accounting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub rate: f64,
    pub n_included: usize,
    pub n_excluded_parse: usize,
    pub n_excluded_transport: usize,
}

/// Single-shot accuracy (truth-targeted) or abstention rate
/// (abstention-targeted) over included transcripts.
pub fn single_shot_rates(transcripts: &[&Transcript]) -> Result<RateSummary, MetricsError> {
    if let Some(t) = transcripts.iter().find(|t| !t.condition.is_single_shot()) {
        return Err(MetricsError::NotSingleShot { found: t.condition });
    }
    let included: Vec<&&Transcript> = transcripts.iter().filter(|t| is_included(t)).collect();
    if included.is_empty() {
        return Err(MetricsError::EmptyIncludedSet);
    }
    let hits = included.iter().filter(|t| t.held_at_turn_one()).count();
    Ok(RateSummary {
        rate: hits as f64 / included.len() as f64,
        n_included: included.len(),
        n_excluded_parse: transcripts
            .iter()
            .filter(|t| t.outcome.is_parse_error())
            .count(),
        n_excluded_transport: transcripts
            .iter()
            .filter(|t| t.outcome.is_transport_error())
            .count(),
    })
}

/// End-to-end penalty of multi-turn presentation relative to single-shot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConversationTax {
    /// (multi-turn - single-shot) in percentage points.
    pub absolute_pp: f64,
    /// (multi-turn - single-shot) / single-shot; undefined when the
    /// single-shot rate is zero.
    pub relative: Option<f64>,
}

pub fn conversation_tax(ss_rate: f64, mt_final_survival: f64) -> ConversationTax {
    let delta = mt_final_survival - ss_rate;
    ConversationTax {
        absolute_pp: delta * 100.0,
        relative: if ss_rate == 0.0 {
            None
        } else {
            Some(delta / ss_rate)
        },
    }
}

/// Switch behavior after an initial abstention survived turn 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwitchRates {
    /// Rate of switching to the introduced truth (flexibility runs).
    pub correct_switch_rate: f64,
    /// Rate of switching to the introduced distractor (sensitivity runs).
    pub incorrect_switch_rate: f64,
    /// Denominators: transcripts that held the abstention at turn 1.
    pub n_flex: usize,
    pub n_sens: usize,
    /// Turn-1 failures, excluded from the denominators and counted.
    pub n_flex_failed_t1: usize,
    pub n_sens_failed_t1: usize,
    /// Parse/transport exclusions.
    pub n_flex_excluded: usize,
    pub n_sens_excluded: usize,
}

pub fn switch_rates(
    flex_transcripts: &[&Transcript],
    sens_transcripts: &[&Transcript],
) -> Result<SwitchRates, MetricsError> {
    let (correct, n_flex, flex_failed, flex_excluded) =
        one_sided_switch(flex_transcripts, "flexibility")?;
    let (incorrect, n_sens, sens_failed, sens_excluded) =
        one_sided_switch(sens_transcripts, "sensitivity")?;
    Ok(SwitchRates {
        correct_switch_rate: correct,
        incorrect_switch_rate: incorrect,
        n_flex,
        n_sens,
        n_flex_failed_t1: flex_failed,
        n_sens_failed_t1: sens_failed,
        n_flex_excluded: flex_excluded,
        n_sens_excluded: sens_excluded,
    })
}

fn one_sided_switch(
    transcripts: &[&Transcript],
    side: &'static str,
) -> Result<(f64, usize, usize, usize), MetricsError> {
    let included: Vec<&&Transcript> = transcripts.iter().filter(|t| is_included(t)).collect();
    let excluded = transcripts.len() - included.len();
    let failed_t1 = included.iter().filter(|t| !t.held_at_turn_one()).count();
    let denominator: Vec<&&&Transcript> =
        included.iter().filter(|t| t.held_at_turn_one()).collect();
    if denominator.is_empty() {
        return Err(MetricsError::EmptyDenominator { side });
    }
    let switched = denominator
        .iter()
        .filter(|t| matches!(t.outcome, TranscriptOutcome::SwitchedAtTurn { turn: 2 }))
        .count();
    Ok((
        switched as f64 / denominator.len() as f64,
        denominator.len(),
        failed_t1,
        excluded,
    ))
}

/// Percentile bootstrap interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub level: f64,
    pub lo: f64,
    pub hi: f64,
    pub resamples: usize,
}

/// Percentile bootstrap over per-query indicators, deterministic per seed.
///
/// Resample r draws its RNG from (seed, r), so the parallel and sequential
/// paths produce bit-identical intervals.
pub fn bootstrap_ci(
    per_query_indicators: &[f64],
    level: f64,
    resamples: usize,
    seed: u64,
) -> Result<Interval, MetricsError> {
    if per_query_indicators.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if !(0.0..1.0).contains(&level) || level <= 0.0 {
        return Err(MetricsError::InvalidLevel { level });
    }
    if resamples == 0 {
        return Err(MetricsError::ZeroResamples);
    }
    if let Some(&value) = per_query_indicators
        .iter()
        .find(|v| **v != 0.0 && **v != 1.0)
    {
        return Err(MetricsError::InvalidIndicator { value });
    }

    let mut stats = resample_means(per_query_indicators, resamples, seed);
    stats.sort_unstable_by(|a, b| a.total_cmp(b));
    let alpha = (1.0 - level) / 2.0;
    let b = stats.len();
    let lo_idx = ((alpha * b as f64).floor() as usize).min(b - 1);
    let hi_idx = (((1.0 - alpha) * b as f64).ceil() as usize)
        .saturating_sub(1)
        .min(b - 1);
    Ok(Interval {
        level,
        lo: stats[lo_idx],
        hi: stats[hi_idx],
        resamples,
    })
}

fn one_resample_mean(indicators: &[f64], seed: u64, index: usize) -> f64 {
    let mut rng = rng_from(derive_seed(seed, &[b"resample", &index.to_le_bytes()]));
    let n = indicators.len();
    let mut sum = 0.0;
    for _ in 0..n {
        sum += indicators[rng.random_range(0..n)];
    }
    sum / n as f64
}

#[cfg(feature = "parallel")]
fn resample_means(indicators: &[f64], resamples: usize, seed: u64) -> Vec<f64> {
    (0..resamples)
        .into_par_iter()
        .map(|r| one_resample_mean(indicators, seed, r))
        .collect()
}

#[cfg(not(feature = "parallel"))]
fn resample_means(indicators: &[f64], resamples: usize, seed: u64) -> Vec<f64> {
    (0..resamples)
        .map(|r| one_resample_mean(indicators, seed, r))
        .collect()
}

/// Sequential reference path, kept available for the bench comparison and
/// for bit-identity checks against the parallel path.
pub fn bootstrap_ci_sequential(
    per_query_indicators: &[f64],
    level: f64,
    resamples: usize,
    seed: u64,
) -> Result<Interval, MetricsError> {
    if per_query_indicators.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if !(0.0..1.0).contains(&level) || level <= 0.0 {
        return Err(MetricsError::InvalidLevel { level });
    }
    if resamples == 0 {
        return Err(MetricsError::ZeroResamples);
    }
    let mut stats: Vec<f64> = (0..resamples)
        .map(|r| one_resample_mean(per_query_indicators, seed, r))
        .collect();
    stats.sort_unstable_by(|a, b| a.total_cmp(b));
    let alpha = (1.0 - level) / 2.0;
    let b = stats.len();
    let lo_idx = ((alpha * b as f64).floor() as usize).min(b - 1);
    let hi_idx = (((1.0 - alpha) * b as f64).ceil() as usize)
        .saturating_sub(1)
        .min(b - 1);
    Ok(Interval {
        level,
        lo: stats[lo_idx],
        hi: stats[hi_idx],
        resamples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TargetAnswer;

    pub(crate) fn transcript(
        record_id: &str,
        condition: Condition,
        outcome: TranscriptOutcome,
        survived_through: u32,
    ) -> Transcript {
        let max_turns = match condition {
            Condition::SingleShotFull | Condition::SingleShotBinary => 1,
            Condition::Flexibility | Condition::FlexSensitivity => 2,
            _ => 3,
        };
        Transcript {
            record_id: record_id.to_string(),
            dataset: "custom".to_string(),
            model: "test".to_string(),
            condition,
            target: TargetAnswer::Label {
                label: "B".to_string(),
            },
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

    fn survived(record_id: &str, condition: Condition, max_turns: u32) -> Transcript {
        transcript(
            record_id,
            condition,
            TranscriptOutcome::SurvivedAll,
            max_turns,
        )
    }

    fn switched(record_id: &str, condition: Condition, turn: u32) -> Transcript {
        transcript(
            record_id,
            condition,
            TranscriptOutcome::SwitchedAtTurn { turn },
            turn - 1,
        )
    }

    fn lost(record_id: &str, condition: Condition) -> Transcript {
        transcript(record_id, condition, TranscriptOutcome::LostAtTurnOne, 0)
    }

    #[test]
    fn direct_count_example() {
        // 10 transcripts: 8 hold at t=1, 6 of those also hold at t=2.
        let condition = Condition::PositiveConviction;
        let mut transcripts = Vec::new();
        for i in 0..6 {
            transcripts.push(survived(&format!("s{i}"), condition, 3));
        }
        for i in 0..2 {
            transcripts.push(switched(&format!("w{i}"), condition, 2));
        }
        for i in 0..2 {
            transcripts.push(lost(&format!("l{i}"), condition));
        }
        let refs: Vec<&Transcript> = transcripts.iter().collect();
        let curve = survival_curve(&refs, 3).unwrap();
        assert_eq!(curve.values[0], 0.8);
        assert_eq!(curve.values[1], 0.6);
        assert_eq!(curve.n_included, 10);
    }

    #[test]
    fn always_stick_keeps_curve_flat() {
        let condition = Condition::PositiveConviction;
        let transcripts: Vec<Transcript> = (0..10)
            .map(|i| {
                if i < 7 {
                    survived(&format!("r{i}"), condition, 3)
                } else {
                    lost(&format!("r{i}"), condition)
                }
            })
            .collect();
        let refs: Vec<&Transcript> = transcripts.iter().collect();
        let curve = survival_curve(&refs, 3).unwrap();
        assert_eq!(curve.values, vec![0.7, 0.7, 0.7]);
    }

    #[test]
    fn exclusions_shrink_the_denominator() {
        let condition = Condition::PositiveConviction;
        let mut transcripts = vec![
            survived("a", condition, 3),
            survived("b", condition, 3),
            transcript("c", condition, TranscriptOutcome::ParseError { turn: 1 }, 0),
            transcript(
                "d",
                condition,
                TranscriptOutcome::TransportError {
                    turn: 2,
                    error: "boom".to_string(),
                },
                1,
            ),
        ];
        transcripts.push(lost("e", condition));
        let refs: Vec<&Transcript> = transcripts.iter().collect();
        let curve = survival_curve(&refs, 3).unwrap();
        assert_eq!(curve.n_included, 3);
        assert_eq!(curve.n_excluded_parse, 1);
        assert_eq!(curve.n_excluded_transport, 1);
        assert_eq!(curve.n_included + curve.n_excluded(), refs.len());
        assert!((curve.values[0] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_included_set_is_an_error() {
        let t = transcript(
            "a",
            Condition::PositiveConviction,
            TranscriptOutcome::ParseError { turn: 1 },
            0,
        );
        let refs = vec![&t];
        assert!(matches!(
            survival_curve(&refs, 3),
            Err(MetricsError::EmptyIncludedSet)
        ));
    }

    #[test]
    fn mixed_conditions_are_rejected() {
        let a = survived("a", Condition::PositiveConviction, 3);
        let b = survived("b", Condition::NegativeConviction, 3);
        let refs = vec![&a, &b];
        assert!(matches!(
            survival_curve(&refs, 3),
            Err(MetricsError::MixedConditions { .. })
        ));
    }

    #[test]
    fn single_shot_accuracy_corners() {
        let condition = Condition::SingleShotFull;
        let all_hit: Vec<Transcript> = (0..5)
            .map(|i| survived(&format!("r{i}"), condition, 1))
            .collect();
        let refs: Vec<&Transcript> = all_hit.iter().collect();
        assert_eq!(single_shot_rates(&refs).unwrap().rate, 1.0);

        let all_miss: Vec<Transcript> = (0..5).map(|i| lost(&format!("r{i}"), condition)).collect();
        let refs: Vec<&Transcript> = all_miss.iter().collect();
        assert_eq!(single_shot_rates(&refs).unwrap().rate, 0.0);
    }

    #[test]
    fn single_shot_rejects_multi_turn_conditions() {
        let t = survived("a", Condition::PositiveConviction, 3);
        let refs = vec![&t];
        assert!(matches!(
            single_shot_rates(&refs),
            Err(MetricsError::NotSingleShot { .. })
        ));
    }

    #[test]
    fn tax_matches_reference_shape() {
        let tax = conversation_tax(0.70, 0.53);
        assert!((tax.absolute_pp + 17.0).abs() < 1e-9);
        assert!((tax.relative.unwrap() + 0.242857142857).abs() < 1e-9);
    }

    #[test]
    fn tax_identity_and_undefined_relative() {
        let tax = conversation_tax(0.5, 0.5);
        assert_eq!(tax.absolute_pp, 0.0);
        assert_eq!(tax.relative, Some(0.0));
        assert_eq!(conversation_tax(0.0, 0.2).relative, None);
    }

    #[test]
    fn perfect_knowledge_switch_corner() {
        let flex: Vec<Transcript> = (0..10)
            .map(|i| switched(&format!("f{i}"), Condition::Flexibility, 2))
            .collect();
        let sens: Vec<Transcript> = (0..10)
            .map(|i| survived(&format!("s{i}"), Condition::FlexSensitivity, 2))
            .collect();
        let flex_refs: Vec<&Transcript> = flex.iter().collect();
        let sens_refs: Vec<&Transcript> = sens.iter().collect();
        let rates = switch_rates(&flex_refs, &sens_refs).unwrap();
        assert_eq!(rates.correct_switch_rate, 1.0);
        assert_eq!(rates.incorrect_switch_rate, 0.0);
    }

    #[test]
    fn turn_one_failures_leave_the_denominator() {
        let mut flex: Vec<Transcript> = (0..4)
            .map(|i| switched(&format!("f{i}"), Condition::Flexibility, 2))
            .collect();
        flex.push(lost("f4", Condition::Flexibility));
        flex.push(transcript(
            "f5",
            Condition::Flexibility,
            TranscriptOutcome::ParseError { turn: 2 },
            1,
        ));
        let sens: Vec<Transcript> = vec![survived("s0", Condition::FlexSensitivity, 2)];
        let flex_refs: Vec<&Transcript> = flex.iter().collect();
        let sens_refs: Vec<&Transcript> = sens.iter().collect();
        let rates = switch_rates(&flex_refs, &sens_refs).unwrap();
        assert_eq!(rates.n_flex, 4);
        assert_eq!(rates.n_flex_failed_t1, 1);
        assert_eq!(rates.n_flex_excluded, 1);
        assert_eq!(rates.correct_switch_rate, 1.0);
    }

    #[test]
    fn empty_switch_denominator_errors() {
        let flex = [lost("f0", Condition::Flexibility)];
        let sens = [survived("s0", Condition::FlexSensitivity, 2)];
        let flex_refs: Vec<&Transcript> = flex.iter().collect();
        let sens_refs: Vec<&Transcript> = sens.iter().collect();
        assert!(matches!(
            switch_rates(&flex_refs, &sens_refs),
            Err(MetricsError::EmptyDenominator {
                side: "flexibility"
            })
        ));
    }

    #[test]
    fn bootstrap_degenerate_inputs() {
        let ones = vec![1.0; 100];
        let interval = bootstrap_ci(&ones, 0.95, 1000, 7).unwrap();
        assert_eq!((interval.lo, interval.hi), (1.0, 1.0));

        let zeros = vec![0.0; 100];
        let interval = bootstrap_ci(&zeros, 0.95, 1000, 7).unwrap();
        assert_eq!((interval.lo, interval.hi), (0.0, 0.0));
    }

    #[test]
    fn bootstrap_is_deterministic_per_seed() {
        let data: Vec<f64> = (0..200).map(|i| f64::from(i % 2 == 0)).collect();
        let a = bootstrap_ci(&data, 0.95, 1000, 42).unwrap();
        let b = bootstrap_ci(&data, 0.95, 1000, 42).unwrap();
        assert_eq!(a, b);
        // Different seeds draw different resamples even when the interval
        // endpoints coincide.
        let means_a = resample_means(&data, 50, 42);
        let means_b = resample_means(&data, 50, 43);
        assert_ne!(means_a, means_b);
    }

    #[test]
    fn parallel_and_sequential_bootstraps_are_bit_identical() {
        let data: Vec<f64> = (0..500).map(|i| f64::from(i % 3 == 0)).collect();
        let par = bootstrap_ci(&data, 0.9, 500, 11).unwrap();
        let seq = bootstrap_ci_sequential(&data, 0.9, 500, 11).unwrap();
        assert_eq!(par, seq);
    }

    #[test]
    fn bootstrap_rejects_bad_inputs() {
        assert!(matches!(
            bootstrap_ci(&[], 0.95, 1000, 7),
            Err(MetricsError::EmptyInput)
        ));
        assert!(matches!(
            bootstrap_ci(&[1.0], 1.5, 1000, 7),
            Err(MetricsError::InvalidLevel { .. })
        ));
        assert!(matches!(
            bootstrap_ci(&[0.5], 0.95, 1000, 7),
            Err(MetricsError::InvalidIndicator { .. })
        ));
    }
}
