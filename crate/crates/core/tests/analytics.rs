mod common;

use std::fs;

use envforge::analytics::{
    attempt_histogram, concurrent_device_cost, device_cost_report, epoch_cost, latency_stats, length_distribution,
    read_alignment_csv, reward_alignment, CostModel, EpisodeTiming, Regime, TableReport,
};
use envforge::rollout::TrajectoryRecord;
use envforge::synthesis::{AttemptLog, AttemptRecord, FailureStage};
use envforge::trace::{clip_traces, ingest_traces};

fn records() -> Vec<TrajectoryRecord> {
    fs::read_to_string(common::fixtures().join("trajectories.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn alignment_fixture_reproduces_anchors() {
    let csv = fs::File::open(common::fixtures().join("alignment.csv")).unwrap();
    let recs = read_alignment_csv(csv).unwrap();
    assert_eq!(recs.len(), 2000);
    let report = reward_alignment(&recs);
    let fail = report.class(0);
    let ok = report.class(1);
    assert_eq!((fail.count, ok.count), (1000, 1000));
    assert_eq!(fail.frac_le_0_6, 0.75);
    assert!(ok.frac_gt_0_8 >= 0.75);
    assert_eq!(ok.frac_gt_0_8, 0.8);
    assert_eq!(fail.histogram.iter().sum::<usize>(), 1000);
    assert_eq!(ok.histogram.iter().sum::<usize>(), 1000);
    let q = fail.quartiles.unwrap();
    assert!(q[0] <= q[1] && q[1] <= q[2] && (0.6..0.61).contains(&q[2]), "{q:?}");
}

#[test]
fn alignment_csv_rejects_bad_input() {
    assert!(read_alignment_csv("label,reward\n0,0.5\n".as_bytes()).is_err());
    assert!(read_alignment_csv("vlm_label,code_reward\n2,0.5\n".as_bytes()).is_err());
    assert!(read_alignment_csv("vlm_label,code_reward\n0,1.5\n".as_bytes()).is_err());
    let empty = reward_alignment(&[]);
    assert_eq!(empty.class(0).count, 0);
    assert!(empty.class(1).quartiles.is_none());
}

#[test]
fn length_fixture_mean_after_clipping() {
    let lengths: Vec<usize> = records().iter().map(TrajectoryRecord::steps_taken).collect();
    let r = length_distribution(&lengths, 20);
    let kept: Vec<usize> = lengths.iter().copied().filter(|&l| l <= 20).collect();
    let oracle = kept.iter().sum::<usize>() as f64 / kept.len() as f64;
    assert!((r.mean - 5.63).abs() <= 0.01, "{}", r.mean);
    assert!((r.mean - oracle).abs() < 1e-9);
    assert_eq!(r.kept, kept.len());
    assert_eq!(r.removed, lengths.len() - kept.len());
    assert_eq!(r.histogram.values().sum::<usize>(), r.kept);

    let all_long = length_distribution(&[21; 10], 20);
    assert_eq!((all_long.kept, all_long.mean), (0, 0.0));
}

#[test]
fn trace_clipping_agrees_with_length_report() {
    let mut lines = String::new();
    let lengths = [3usize, 25, 5, 20, 21, 1];
    for (n, len) in lengths.iter().enumerate() {
        let steps: Vec<String> = (0..*len)
            .map(|i| {
                format!(r#"{{"i":{i},"screenshot":"s{i}.png","action":{{"kind":"tap","target":"/x","payload":null}}}}"#)
            })
            .collect();
        lines += &format!(r#"{{"v":1,"task_id":"t{n}","succeeded":false,"steps":[{}]}}"#, steps.join(","));
        lines.push('\n');
    }
    let (set, _) = ingest_traces(lines.as_bytes()).unwrap();
    let (clipped, stats) = clip_traces(&set, 20).unwrap();
    let report = length_distribution(&lengths, 20);
    assert_eq!(stats.kept, report.kept);
    assert_eq!(clipped.len(), report.kept);
    assert!((stats.mean_length - report.mean).abs() < 1e-12);
}

#[test]
fn latency_on_fixture() {
    let timings: Vec<EpisodeTiming> =
        records().iter().map(|r| EpisodeTiming { wall_clock_s: r.wall_clock_s, step_count: r.steps_taken() }).collect();
    let r = latency_stats(&timings);
    let s = r.per_interaction_s.unwrap();
    assert_eq!(s.n, timings.len());
    assert!(s.mean > 0.3 && s.mean < 0.55);
    assert!(s.p50 <= s.p95);
    assert_eq!(r.excluded, 0);
}

#[test]
fn cost_anchors() {
    let m = CostModel::<f64>::default();
    let day = concurrent_device_cost(&m, 100, 24.0);
    assert!((day - 100.0 * 24.0 * 60.0 * 0.17).abs() < 1e-6);
    let rep = device_cost_report(&m, 100, 24.0);
    assert!(rep.headline_residual.unwrap().abs() <= 0.02 + 1e-12);

    let epoch = epoch_cost(&m, 1000, 12, Regime::Real);
    let oracle = 12_000.0 * (0.2272 * 60.0 * 0.17) + 12_000.0 * 0.005;
    assert!((epoch.total - oracle).abs() < 1e-6);
    assert!((epoch.total - 27_869.28).abs() < 0.005);
    assert!(epoch.headline_residual.unwrap().abs() <= 0.02);
    let json = serde_json::to_value(&epoch).unwrap();
    assert_eq!(json["total"], 27_869.28);

    assert_eq!(epoch_cost(&m, 1000, 12, Regime::Synth).total, 0.0);
    let free = CostModel { device_cost_per_minute: 0.0, verifier_cost_per_trajectory: 0.0, ..m.clone() };
    assert_eq!(epoch_cost(&free, 1000, 12, Regime::Real).total, 0.0);

    // Linear in both size arguments.
    let base = epoch_cost(&m, 10, 3, Regime::Real).total;
    assert!((epoch_cost(&m, 20, 3, Regime::Real).total - 2.0 * base).abs() < 1e-9);
    assert!((epoch_cost(&m, 10, 6, Regime::Real).total - 2.0 * base).abs() < 1e-9);

    // Same model in single precision.
    let m32 = CostModel::<f32>::default();
    assert!((concurrent_device_cost(&m32, 1, 1.0f32) - 10.2).abs() < 1e-4);
}

#[test]
fn attempt_histogram_counting_fixture() {
    let log = |id: usize, ok_at: Option<u32>| {
        let n = ok_at.unwrap_or(5);
        AttemptLog {
            task_id: format!("t{id}"),
            attempts: (1..=n)
                .map(|a| AttemptRecord {
                    attempt: a,
                    failure_stage: if Some(a) == ok_at { None } else { Some(FailureStage::DynamicTestFailed) },
                    reason: None,
                    verification: None,
                })
                .collect(),
        }
    };
    let logs: Vec<AttemptLog> = (0..100)
        .map(|i| match i {
            0..=29 => log(i, Some(1)),
            30..=54 => log(i, Some(2)),
            _ => log(i, None),
        })
        .collect();
    let h = attempt_histogram(&logs);
    assert_eq!(h.per_attempt_fraction[&1], 0.30);
    assert_eq!(h.per_attempt_fraction[&2], 0.25);
    assert_eq!(h.fail_fraction, 0.45);
    let total: f64 = h.per_attempt_fraction.values().sum::<f64>() + h.fail_fraction;
    assert!((total - 1.0).abs() < 1e-9);
    assert_eq!(h.failed_attempts_by_stage[&FailureStage::DynamicTestFailed], 25 + 45 * 5);

    let empty = attempt_histogram(&[]);
    assert!(empty.per_attempt_fraction.is_empty());
    assert_eq!(empty.fail_fraction, 0.0);
}

#[test]
fn reports_are_deterministic() {
    let csv = fs::read(common::fixtures().join("alignment.csv")).unwrap();
    let a = reward_alignment(&read_alignment_csv(&csv[..]).unwrap());
    let b = reward_alignment(&read_alignment_csv(&csv[..]).unwrap());
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert_eq!(a.to_table(), b.to_table());
    assert!(a.to_table().contains("label 0 reward <= 0.6") && a.to_table().contains("75.00%"));
}
