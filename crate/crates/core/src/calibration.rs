//! Empirical per-prompt reward calibration.
//!
//! A response's calibrated reward is the probability that it beats a fresh
//! sample from the base policy under the reward model, with ties counted at
//! one half. Given `K` offline rollouts per prompt, the empirical version is
//!
//! ```text
//! C(r) = (#{z_i < r} + 0.5 * #{z_i = r}) / K
//! ```
//!
//! computed against the sorted per-prompt rollout rewards. Tables are
//! immutable once built and safe to share across threads.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One reward rollout: a scored (prompt, response) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub prompt_id: String,
    pub response_id: String,
    pub reward: f64,
}

/// Sorted rollout rewards for a single prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationTable {
    prompt_id: String,
    sorted_rewards: Vec<f64>,
}

/// A calibrated reward score, guaranteed to lie in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct CalibratedScore(f64);

impl CalibratedScore {
    pub fn new(value: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::Domain { value });
        }
        Ok(Self(value))
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.0
    }
}

impl CalibrationTable {
    /// Build the table for `prompt_id` from a batch of records.
    ///
    /// Records for other prompts are ignored. Fails with
    /// [`Error::MissingPrompt`] if the batch holds no record for the prompt
    /// and with [`Error::InvalidReward`] on NaN/infinite rewards.
    pub fn build(records: &[RewardRecord], prompt_id: &str) -> Result<Self> {
        let mut rewards = Vec::new();
        for record in records.iter().filter(|r| r.prompt_id == prompt_id) {
            if !record.reward.is_finite() {
                return Err(Error::InvalidReward {
                    value: record.reward,
                    context: format!("prompt `{}` response `{}`", prompt_id, record.response_id),
                });
            }
            rewards.push(record.reward);
        }
        if rewards.is_empty() {
            return Err(Error::MissingPrompt(prompt_id.to_string()));
        }
        rewards.sort_by(|a, b| a.partial_cmp(b).expect("rewards are finite"));
        Ok(Self {
            prompt_id: prompt_id.to_string(),
            sorted_rewards: rewards,
        })
    }

    /// Build one table per prompt found in the batch, keyed by prompt id.
    pub fn build_all(records: &[RewardRecord]) -> Result<BTreeMap<String, Self>> {
        let mut grouped: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for record in records {
            if !record.reward.is_finite() {
                return Err(Error::InvalidReward {
                    value: record.reward,
                    context: format!(
                        "prompt `{}` response `{}`",
                        record.prompt_id, record.response_id
                    ),
                });
            }
            grouped
                .entry(record.prompt_id.clone())
                .or_default()
                .push(record.reward);
        }
        Ok(grouped
            .into_iter()
            .map(|(prompt_id, mut rewards)| {
                rewards.sort_by(|a, b| a.partial_cmp(b).expect("rewards are finite"));
                (
                    prompt_id.clone(),
                    Self {
                        prompt_id,
                        sorted_rewards: rewards,
                    },
                )
            })
            .collect())
    }

    pub fn prompt_id(&self) -> &str {
        &self.prompt_id
    }

    /// Number of rollouts backing the table.
    pub fn k(&self) -> usize {
        self.sorted_rewards.len()
    }

    pub fn sorted_rewards(&self) -> &[f64] {
        &self.sorted_rewards
    }

    /// Empirical calibrated reward of `reward` against this table.
    ///
    /// Strict-win and tie counts come from two binary searches over the
    /// sorted rollouts, so a query is O(log K). Ties use exact
    /// floating-point equality with weight one half.
    pub fn calibrate(&self, reward: f64) -> Result<CalibratedScore> {
        if !reward.is_finite() {
            return Err(Error::InvalidReward {
                value: reward,
                context: format!("query against prompt `{}`", self.prompt_id),
            });
        }
        let below = self.sorted_rewards.partition_point(|&z| z < reward);
        let below_or_equal = self.sorted_rewards.partition_point(|&z| z <= reward);
        let ties = below_or_equal - below;
        let score = (below as f64 + 0.5 * ties as f64) / self.k() as f64;
        Ok(CalibratedScore(score))
    }

    /// Apply a strictly increasing map to every stored reward.
    pub fn map_rewards(&self, map: impl Fn(f64) -> f64) -> Self {
        Self {
            prompt_id: self.prompt_id.clone(),
            sorted_rewards: self.sorted_rewards.iter().map(|&r| map(r)).collect(),
        }
    }
}

/// Distribution-free sup-norm error bound for an empirical calibration built
/// from `k` rollouts: with probability at least `1 - delta` the empirical
/// calibrated reward is within `sqrt(ln(2/delta) / (2k))` of the true one.
pub fn dkw_error_bound(k: usize, delta: f64) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be >= 1".into()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "delta must be in (0, 1), got {delta}"
        )));
    }
    Ok(((2.0 / delta).ln() / (2.0 * k as f64)).sqrt())
}

/// True iff calibrating each probe against `table` gives exactly the same
/// score as calibrating the mapped probe against the mapped table, for a
/// strictly increasing `monotone_map`.
pub fn check_monotone_invariance(
    table: &CalibrationTable,
    monotone_map: impl Fn(f64) -> f64,
    probe_rewards: &[f64],
) -> bool {
    let mapped = table.map_rewards(&monotone_map);
    probe_rewards.iter().all(|&r| {
        match (table.calibrate(r), mapped.calibrate(monotone_map(r))) {
            (Ok(a), Ok(b)) => a.value() == b.value(),
            _ => false,
        }
    })
}

/// Parse line-delimited reward records (one JSON object per line).
///
/// Enforces that (prompt_id, response_id) pairs are unique within the batch
/// and that rewards are finite; errors carry 1-based line numbers.
pub fn read_records(reader: impl BufRead) -> Result<Vec<RewardRecord>> {
    let mut records = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: RewardRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        if !record.reward.is_finite() {
            return Err(Error::Parse {
                line: idx + 1,
                message: format!("non-finite reward {}", record.reward),
            });
        }
        if !seen.insert((record.prompt_id.clone(), record.response_id.clone())) {
            return Err(Error::Parse {
                line: idx + 1,
                message: format!(
                    "duplicate record for prompt `{}` response `{}`",
                    record.prompt_id, record.response_id
                ),
            });
        }
        records.push(record);
    }
    Ok(records)
}

/// A reward record augmented with its calibrated (and optionally
/// transformed) score, as written by the calibration pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoredRecord {
    pub prompt_id: String,
    pub response_id: String,
    pub reward: f64,
    pub calibrated: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transformed: Option<f64>,
}

/// Write scored records as line-delimited JSON (UTF-8, `\n` endings).
pub fn write_scored_records(mut writer: impl Write, records: &[ScoredRecord]) -> Result<()> {
    for record in records {
        serde_json::to_writer(&mut writer, record).map_err(std::io::Error::other)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(prompt: &str, response: &str, reward: f64) -> RewardRecord {
        RewardRecord {
            prompt_id: prompt.into(),
            response_id: response.into(),
            reward,
        }
    }

    fn table_from(rewards: &[f64]) -> CalibrationTable {
        let records: Vec<_> = rewards
            .iter()
            .enumerate()
            .map(|(i, &r)| record("p", &format!("r{i}"), r))
            .collect();
        CalibrationTable::build(&records, "p").unwrap()
    }

    /// Direct count over the definition; the independent oracle for
    /// `calibrate`.
    fn brute_force_calibrate(rewards: &[f64], query: f64) -> f64 {
        let wins = rewards.iter().filter(|&&z| z < query).count() as f64;
        let ties = rewards.iter().filter(|&&z| z == query).count() as f64;
        (wins + 0.5 * ties) / rewards.len() as f64
    }

    #[test]
    fn build_sorts_rewards() {
        let t = table_from(&[3.0, 1.0, 2.0]);
        assert_eq!(t.sorted_rewards(), &[1.0, 2.0, 3.0]);
        assert_eq!(t.k(), 3);
    }

    #[test]
    fn build_singleton_and_duplicates() {
        let t = table_from(&[5.0]);
        assert_eq!(t.sorted_rewards(), &[5.0]);
        assert_eq!(t.k(), 1);

        let t = table_from(&[2.0, 2.0]);
        assert_eq!(t.sorted_rewards(), &[2.0, 2.0]);
        assert_eq!(t.k(), 2);
    }

    #[test]
    fn build_missing_prompt_fails() {
        let records = vec![record("p", "a", 1.0)];
        assert!(matches!(
            CalibrationTable::build(&records, "q"),
            Err(Error::MissingPrompt(_))
        ));
    }

    #[test]
    fn build_rejects_non_finite() {
        let records = vec![record("p", "a", f64::NAN)];
        assert!(matches!(
            CalibrationTable::build(&records, "p"),
            Err(Error::InvalidReward { .. })
        ));
    }

    #[test]
    fn calibrate_matches_brute_force_on_pinned_cases() {
        let rewards = [1.0, 2.0, 3.0, 4.0];
        let t = table_from(&rewards);
        // Frozen expectations computed with brute_force_calibrate.
        for (query, expected) in [(2.5, 0.5), (2.0, 0.375), (5.0, 1.0), (0.0, 0.0)] {
            assert_eq!(brute_force_calibrate(&rewards, query), expected);
            assert_eq!(t.calibrate(query).unwrap().value(), expected);
        }
    }

    #[test]
    fn calibrate_rejects_non_finite_query() {
        let t = table_from(&[1.0]);
        assert!(matches!(
            t.calibrate(f64::INFINITY),
            Err(Error::InvalidReward { .. })
        ));
    }

    #[test]
    fn dkw_bound_values() {
        // ln(2/delta) = 2 at delta = 2/e^2; bound is sqrt(2/200) = 0.1.
        let delta = 2.0 / std::f64::consts::E.powi(2);
        assert!((dkw_error_bound(100, delta).unwrap() - 0.1).abs() < 1e-15);
        // Quadrupling k halves the bound.
        let b1 = dkw_error_bound(50, 0.05).unwrap();
        let b4 = dkw_error_bound(200, 0.05).unwrap();
        assert!((b1 / b4 - 2.0).abs() < 1e-12);
        // delta -> 1 limit.
        let b = dkw_error_bound(100, 1.0 - 1e-12).unwrap();
        assert!((b - (2.0f64.ln() / 200.0).sqrt()).abs() < 1e-8);
        assert!(dkw_error_bound(100, 0.0).is_err());
        assert!(dkw_error_bound(100, 1.0).is_err());
        assert!(dkw_error_bound(0, 0.5).is_err());
    }

    #[test]
    fn monotone_invariance_for_affine_and_exponential_maps() {
        let t = table_from(&[1.0, 2.0, 2.0, 3.0, 7.5]);
        let probes = [0.5, 1.0, 2.0, 2.5, 7.5, 10.0];
        assert!(check_monotone_invariance(&t, |u| 2.0 * u + 1.0, &probes));
        assert!(check_monotone_invariance(&t, |u| (u / 4.0).exp(), &probes));
    }

    #[test]
    fn read_records_roundtrip_and_errors() {
        let input = "{\"prompt_id\":\"p\",\"response_id\":\"a\",\"reward\":1.5}\n\
                     {\"prompt_id\":\"p\",\"response_id\":\"b\",\"reward\":-0.5}\n";
        let records = read_records(input.as_bytes()).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[1].reward, -0.5);

        let bad = "{\"prompt_id\":\"p\"}\n";
        assert!(matches!(
            read_records(bad.as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));

        let dup = "{\"prompt_id\":\"p\",\"response_id\":\"a\",\"reward\":1.0}\n\
                   {\"prompt_id\":\"p\",\"response_id\":\"a\",\"reward\":2.0}\n";
        assert!(matches!(
            read_records(dup.as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    proptest! {
        #[test]
        fn scores_are_bounded_and_monotone(
            mut rewards in prop::collection::vec(-1e6f64..1e6, 1..60),
            mut probes in prop::collection::vec(-1e6f64..1e6, 2..20),
        ) {
            rewards.iter_mut().for_each(|r| *r = (*r * 4.0).round() / 4.0);
            probes.iter_mut().for_each(|r| *r = (*r * 4.0).round() / 4.0);
            let t = table_from(&rewards);
            probes.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let scores: Vec<f64> = probes
                .iter()
                .map(|&p| t.calibrate(p).unwrap().value())
                .collect();
            for w in scores.windows(2) {
                prop_assert!(w[0] <= w[1], "calibration must preserve reward order");
            }
            for (&p, &s) in probes.iter().zip(&scores) {
                prop_assert!((0.0..=1.0).contains(&s));
                prop_assert_eq!(s, brute_force_calibrate(&rewards, p));
            }
        }

        #[test]
        fn invariance_under_random_affine_maps(
            mut rewards in prop::collection::vec(-100f64..100.0, 1..40),
            mut probes in prop::collection::vec(-100f64..100.0, 1..10),
            scale in 0.01f64..50.0,
            shift in -100f64..100.0,
        ) {
            // Quantize so distinct values stay distinct under the float map.
            rewards.iter_mut().for_each(|r| *r = (*r * 4.0).round() / 4.0);
            probes.iter_mut().for_each(|r| *r = (*r * 4.0).round() / 4.0);
            let t = table_from(&rewards);
            prop_assert!(check_monotone_invariance(&t, |u| scale * u + shift, &probes));
        }
    }
}
