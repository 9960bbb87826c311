//! Deterministic report generators: cost, attempts, reward alignment,
//! trajectory lengths, latency.

mod alignment;
mod attempts;
mod cost;
mod latency;
mod lengths;

pub use alignment::{
    bin_of, read_alignment_csv, reward_alignment, AlignmentRecord, AlignmentReport, ClassSummary, HIST_BINS,
};
pub use attempts::{attempt_histogram, geometric_expectation, AttemptHistogram, GeometricExpectation};
pub use cost::{
    concurrent_device_cost, device_cost_report, epoch_cost, round_cents, CostModel, CostReport, DeviceCostReport,
    Regime, HEADLINE_DAILY_DEVICE_COST, HEADLINE_EPOCH_COST_REAL,
};
pub use latency::{latency_stats, EpisodeTiming, LatencyReport, Summary};
pub use lengths::{length_distribution, LengthReport};

use crate::scalar::Scalar;

/// Linear-interpolation quantile of sorted data (`q` in `[0, 1]`).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Two-column aligned text.
pub fn kv_table(rows: &[(String, String)]) -> String {
    let width = rows.iter().map(|(k, _)| k.chars().count()).max().unwrap_or(0);
    rows.iter().map(|(k, v)| format!("{k:<width$}  {v}\n")).collect()
}

fn money(v: f64) -> String {
    let cents = (v * 100.0).round() as i64;
    let (sign, cents) = if cents < 0 { ("-", -cents) } else { ("", cents) };
    let whole = (cents / 100).to_string();
    let mut grouped = String::new();
    for (i, c) in whole.chars().enumerate() {
        if i > 0 && (whole.len() - i) % 3 == 0 {
            grouped.push(',');
        }
        grouped.push(c);
    }
    format!("{sign}${grouped}.{:02}", cents % 100)
}

fn pct(v: f64) -> String {
    format!("{:.2}%", v * 100.0)
}

/// Plain-text rendering for the CLI's `--format table`.
pub trait TableReport {
    fn to_table(&self) -> String;
}

impl<T: Scalar> TableReport for CostReport<T> {
    fn to_table(&self) -> String {
        let mut rows = vec![
            ("regime".to_string(), format!("{:?}", self.regime).to_lowercase()),
            (
                "trajectories".into(),
                format!("{} ({} envs x {} rollouts)", self.trajectories, self.n_envs, self.rollouts_per_env),
            ),
            ("device cost".into(), money(self.device_cost.as_f64())),
            ("verifier cost".into(), money(self.verifier_cost.as_f64())),
            ("total".into(), money(self.total.as_f64())),
        ];
        if let (Some(h), Some(r)) = (self.headline, self.headline_residual) {
            rows.push(("headline".into(), format!("> {}", money(h))));
            rows.push(("residual vs headline".into(), pct(r)));
        }
        kv_table(&rows)
    }
}

impl<T: Scalar> TableReport for DeviceCostReport<T> {
    fn to_table(&self) -> String {
        let mut rows = vec![
            ("devices".to_string(), self.n_devices.to_string()),
            ("hours".into(), format!("{}", self.hours)),
            ("total".into(), money(self.total.as_f64())),
        ];
        if let (Some(h), Some(r)) = (self.headline, self.headline_residual) {
            rows.push(("headline".into(), format!("~ {}", money(h))));
            rows.push(("residual vs headline".into(), pct(r)));
        }
        kv_table(&rows)
    }
}

impl TableReport for AttemptHistogram {
    fn to_table(&self) -> String {
        let mut rows = vec![("jobs".to_string(), self.jobs.to_string())];
        for (n, f) in &self.per_attempt_fraction {
            rows.push((format!("verified at attempt {n}"), pct(*f)));
        }
        rows.push(("never verified".into(), pct(self.fail_fraction)));
        for (stage, c) in &self.failed_attempts_by_stage {
            rows.push((format!("failed attempts: {stage}"), c.to_string()));
        }
        kv_table(&rows)
    }
}

impl TableReport for AlignmentReport {
    fn to_table(&self) -> String {
        let mut rows = Vec::new();
        for c in &self.classes {
            let l = c.label;
            rows.push((format!("label {l} count"), c.count.to_string()));
            rows.push((
                format!("label {l} quartiles"),
                c.quartiles.map_or("-".into(), |q| format!("{:.3} / {:.3} / {:.3}", q[0], q[1], q[2])),
            ));
            rows.push((format!("label {l} reward <= 0.6"), pct(c.frac_le_0_6)));
            rows.push((format!("label {l} reward > 0.8"), pct(c.frac_gt_0_8)));
            let hist: Vec<String> = c.histogram.iter().map(usize::to_string).collect();
            rows.push((format!("label {l} histogram (0.1 bins)"), hist.join(" ")));
        }
        kv_table(&rows)
    }
}

impl TableReport for LengthReport {
    fn to_table(&self) -> String {
        let mut rows = vec![
            ("clip".to_string(), format!("> {} steps removed", self.clip)),
            ("kept".into(), format!("{} of {}", self.kept, self.total)),
            ("removed".into(), self.removed.to_string()),
            ("mean steps".into(), format!("{:.2}", self.mean)),
        ];
        for (len, c) in &self.histogram {
            rows.push((format!("{len} steps"), c.to_string()));
        }
        kv_table(&rows)
    }
}

impl TableReport for LatencyReport {
    fn to_table(&self) -> String {
        let fmt = |s: &Option<Summary>, digits: usize| {
            s.map_or("-".to_string(), |s| {
                format!("mean {:.d$}  p50 {:.d$}  p95 {:.d$}  (n={})", s.mean, s.p50, s.p95, s.n, d = digits)
            })
        };
        kv_table(&[
            ("per interaction (s)".to_string(), fmt(&self.per_interaction_s, 4)),
            ("per rollout (h)".into(), fmt(&self.per_rollout_h, 6)),
            ("excluded (0 steps)".into(), self.excluded.to_string()),
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn money_format() {
        assert_eq!(money(27_869.28), "$27,869.28");
        assert_eq!(money(10.2), "$10.20");
        assert_eq!(money(0.0), "$0.00");
        assert_eq!(money(1_234_567.5), "$1,234,567.50");
    }

    #[test]
    fn quantiles() {
        assert_eq!(quantile(&[1.0], 0.75), 1.0);
        assert_eq!(quantile(&[0.0, 1.0], 0.25), 0.25);
    }

    #[test]
    fn cost_table_mentions_residual() {
        let t = epoch_cost(&CostModel::<f64>::default(), 1000, 12, Regime::Real).to_table();
        assert!(t.contains("$27,869.28") && t.contains("> $28,000.00") && t.contains("-0.47%"), "{t}");
    }
}
