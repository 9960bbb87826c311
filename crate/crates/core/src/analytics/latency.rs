use serde::Serialize;

use super::quantile;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Self {
            n: v.len(),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            p50: quantile(&v, 0.5),
            p95: quantile(&v, 0.95),
        })
    }
}

/// Timing of one episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeTiming {
    pub wall_clock_s: f64,
    pub step_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyReport {
    pub per_interaction_s: Option<Summary>,
    pub per_rollout_h: Option<Summary>,
    /// Episodes without steps, left out of both summaries.
    pub excluded: usize,
}

pub fn latency_stats(episodes: &[EpisodeTiming]) -> LatencyReport {
    let usable: Vec<&EpisodeTiming> = episodes.iter().filter(|e| e.step_count > 0).collect();
    let excluded = episodes.len() - usable.len();
    if excluded > 0 {
        log::warn!("{excluded} episode(s) with zero steps excluded from latency stats");
    }
    let per_interaction: Vec<f64> = usable.iter().map(|e| e.wall_clock_s / e.step_count as f64).collect();
    let per_rollout: Vec<f64> = usable.iter().map(|e| e.wall_clock_s / 3600.0).collect();
    LatencyReport {
        per_interaction_s: Summary::of(&per_interaction),
        per_rollout_h: Summary::of(&per_rollout),
        excluded,
    }
}
