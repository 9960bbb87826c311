use std::io::Read;

use serde::{Deserialize, Serialize};

use super::quantile;

pub const HIST_BINS: usize = 10;

/// A judged episode: the visual judge's binary label and the code reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRecord {
    pub vlm_label: u8,
    pub code_reward: f64,
}

impl AlignmentRecord {
    pub fn validate(&self) -> Result<(), String> {
        if self.vlm_label > 1 {
            return Err(format!("vlm_label must be 0 or 1, got {}", self.vlm_label));
        }
        if !(0.0..=1.0).contains(&self.code_reward) {
            return Err(format!("code_reward must be in [0, 1], got {}", self.code_reward));
        }
        Ok(())
    }
}

/// Reads `vlm_label,code_reward` CSV (with header).
pub fn read_alignment_csv<R: Read>(source: R) -> Result<Vec<AlignmentRecord>, String> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let headers = reader.headers().map_err(|e| e.to_string())?.clone();
    if headers.iter().collect::<Vec<_>>() != ["vlm_label", "code_reward"] {
        return Err(format!(
            "expected header `vlm_label,code_reward`, got `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        ));
    }
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<AlignmentRecord>().enumerate() {
        let rec = row.map_err(|e| format!("row {}: {e}", i + 2))?;
        rec.validate().map_err(|e| format!("row {}: {e}", i + 2))?;
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassSummary {
    pub label: u8,
    pub count: usize,
    /// 25th, 50th and 75th percentiles (linear interpolation); absent when empty.
    pub quartiles: Option<[f64; 3]>,
    pub frac_le_0_6: f64,
    pub frac_gt_0_8: f64,
    /// Counts over `[0,0.1), [0.1,0.2), …, [0.9,1.0]`.
    pub histogram: [usize; HIST_BINS],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentReport {
    pub classes: [ClassSummary; 2],
}

impl AlignmentReport {
    pub fn class(&self, label: u8) -> &ClassSummary {
        &self.classes[label as usize]
    }
}

pub fn bin_of(r: f64) -> usize {
    ((r * HIST_BINS as f64).floor() as usize).min(HIST_BINS - 1)
}

fn summarize(label: u8, mut rewards: Vec<f64>) -> ClassSummary {
    rewards.sort_by(f64::total_cmp);
    let n = rewards.len();
    let frac = |c: usize| if n == 0 { 0.0 } else { c as f64 / n as f64 };
    let mut histogram = [0usize; HIST_BINS];
    for &r in &rewards {
        histogram[bin_of(r)] += 1;
    }
    ClassSummary {
        label,
        count: n,
        quartiles: (n > 0).then(|| [quantile(&rewards, 0.25), quantile(&rewards, 0.5), quantile(&rewards, 0.75)]),
        frac_le_0_6: frac(rewards.iter().filter(|&&r| r <= 0.6).count()),
        frac_gt_0_8: frac(rewards.iter().filter(|&&r| r > 0.8).count()),
        histogram,
    }
}

pub fn reward_alignment(records: &[AlignmentRecord]) -> AlignmentReport {
    let of = |label: u8| records.iter().filter(|r| r.vlm_label == label).map(|r| r.code_reward).collect();
    AlignmentReport { classes: [summarize(0, of(0)), summarize(1, of(1))] }
}
