use std::collections::BTreeMap;

use serde::Serialize;

/// Step-count distribution after removing trajectories longer than `clip`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LengthReport {
    pub clip: usize,
    pub total: usize,
    pub kept: usize,
    pub removed: usize,
    /// Mean step count of the kept trajectories (0 when none are kept).
    pub mean: f64,
    /// Step count → number of kept trajectories.
    pub histogram: BTreeMap<usize, usize>,
}

/// Same boundary as trace clipping: lengths strictly above `clip` are removed.
pub fn length_distribution(lengths: &[usize], clip: usize) -> LengthReport {
    assert!(clip >= 1, "clip must be at least 1");
    let kept: Vec<usize> = lengths.iter().copied().filter(|&l| l <= clip).collect();
    let mut histogram = BTreeMap::new();
    for &l in &kept {
        *histogram.entry(l).or_insert(0) += 1;
    }
    LengthReport {
        clip,
        total: lengths.len(),
        kept: kept.len(),
        removed: lengths.len() - kept.len(),
        mean: crate::trace::mean_len(&kept),
        histogram,
    }
}
