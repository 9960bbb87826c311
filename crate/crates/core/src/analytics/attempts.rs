use std::collections::BTreeMap;

use serde::Serialize;

use crate::synthesis::{AttemptLog, FailureStage};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttemptHistogram {
    pub jobs: usize,
    /// Attempt number → fraction of jobs first verified at that attempt.
    pub per_attempt_fraction: BTreeMap<u32, f64>,
    /// Fraction of jobs never verified.
    pub fail_fraction: f64,
    pub pass_fraction: f64,
    /// Failure stage → number of failed attempts across all jobs.
    pub failed_attempts_by_stage: BTreeMap<FailureStage, usize>,
}

pub fn attempt_histogram(logs: &[AttemptLog]) -> AttemptHistogram {
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    let mut failed = 0usize;
    let mut by_stage: BTreeMap<FailureStage, usize> = BTreeMap::new();
    for log in logs {
        match log.succeeded_at() {
            Some(n) => *counts.entry(n).or_default() += 1,
            None => failed += 1,
        }
        for stage in log.attempts.iter().filter_map(|a| a.failure_stage) {
            *by_stage.entry(stage).or_default() += 1;
        }
    }
    let jobs = logs.len();
    let frac = |c: usize| if jobs == 0 { 0.0 } else { c as f64 / jobs as f64 };
    AttemptHistogram {
        jobs,
        per_attempt_fraction: counts.iter().map(|(&n, &c)| (n, frac(c))).collect(),
        fail_fraction: frac(failed),
        pass_fraction: frac(jobs - failed),
        failed_attempts_by_stage: by_stage,
    }
}

/// Distribution implied by independent attempts that each pass with
/// probability `p`: `P(first pass at n) = (1-p)^(n-1) p`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeometricExpectation {
    pub per_attempt: BTreeMap<u32, f64>,
    pub pass_within_k: f64,
}

pub fn geometric_expectation(p: f64, k: u32) -> GeometricExpectation {
    let per_attempt = (1..=k).map(|n| (n, (1.0 - p).powi(n as i32 - 1) * p)).collect();
    GeometricExpectation { per_attempt, pass_within_k: 1.0 - (1.0 - p).powi(k as i32) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthesis::AttemptRecord;

    fn log(outcomes: &[Option<FailureStage>]) -> AttemptLog {
        AttemptLog {
            task_id: "t".into(),
            attempts: outcomes
                .iter()
                .enumerate()
                .map(|(i, f)| AttemptRecord {
                    attempt: i as u32 + 1,
                    failure_stage: *f,
                    reason: None,
                    verification: None,
                })
                .collect(),
        }
    }

    #[test]
    fn counting_fixture() {
        let fail = Some(FailureStage::DynamicTestFailed);
        let mut logs = Vec::new();
        logs.extend((0..30).map(|_| log(&[None])));
        logs.extend((0..25).map(|_| log(&[fail, None])));
        logs.extend((0..45).map(|_| log(&[fail; 5])));
        let h = attempt_histogram(&logs);
        assert_eq!(h.per_attempt_fraction, BTreeMap::from([(1, 0.30), (2, 0.25)]));
        assert_eq!(h.fail_fraction, 0.45);
        let total: f64 = h.per_attempt_fraction.values().sum::<f64>() + h.fail_fraction;
        assert!((total - 1.0).abs() < 1e-9);
        assert_eq!(h.failed_attempts_by_stage[&FailureStage::DynamicTestFailed], 25 + 45 * 5);
    }

    #[test]
    fn empty() {
        let h = attempt_histogram(&[]);
        assert!(h.per_attempt_fraction.is_empty());
        assert_eq!(h.fail_fraction, 0.0);
    }

    #[test]
    fn geometric() {
        let g = geometric_expectation(0.35, 5);
        assert!((g.pass_within_k - 0.884_0).abs() < 1e-4);
        let s: f64 = g.per_attempt.values().sum();
        assert!((s - g.pass_within_k).abs() < 1e-12);
    }
}
