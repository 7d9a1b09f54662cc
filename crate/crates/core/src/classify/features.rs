//! Feature culling from query frequencies.

use crate::error::{FilterError, Result};

/// Linear-interpolation percentile of `values` (`p` in `[0, 100]`).
pub fn percentile(values: &[u64], p: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of empty slice");
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let (lo, hi) = (rank.floor() as usize, rank.ceil() as usize);
    let w = rank - lo as f64;
    sorted[lo] as f64 * (1.0 - w) + sorted[hi] as f64 * w
}

/// Features whose query count reaches the `p`-th percentile of all counts,
/// zero counts included in the percentile. For `p > 0` features that were
/// never queried are dropped; `p = 0` keeps everything.
pub fn feature_select(histogram: &[u64], p: f64) -> Result<Vec<usize>> {
    if !(0.0..100.0).contains(&p) {
        return Err(FilterError::InvalidConfig(format!("percentile must be in [0, 100), got {p}")));
    }
    if histogram.is_empty() || p == 0.0 {
        return Ok((0..histogram.len()).collect());
    }
    let threshold = percentile(histogram, p);
    Ok(histogram.iter().enumerate().filter(|&(_, &c)| c > 0 && c as f64 >= threshold).map(|(i, _)| i).collect())
}

/// `(percentile, retained feature count)` rows.
pub fn percentile_table(histogram: &[u64], percentiles: &[f64]) -> Result<Vec<(f64, usize)>> {
    percentiles.iter().map(|&p| Ok((p, feature_select(histogram, p)?.len()))).collect()
}

/// `feature,count` CSV with a header row.
pub fn histogram_csv(histogram: &[u64]) -> String {
    let mut out = String::from("feature,count\n");
    for (i, c) in histogram.iter().enumerate() {
        out.push_str(&format!("{i},{c}\n"));
    }
    out
}

pub fn parse_histogram_csv(text: &str) -> Result<Vec<u64>> {
    let mut counts = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (n == 0 && line.starts_with("feature")) {
            continue;
        }
        let bad = || FilterError::InvalidConfig(format!("bad histogram line {}: {line:?}", n + 1));
        let (idx, count) = line.split_once(',').ok_or_else(bad)?;
        let idx: usize = idx.trim().parse().map_err(|_| bad())?;
        let count: u64 = count.trim().parse().map_err(|_| bad())?;
        if idx >= counts.len() {
            counts.resize(idx + 1, 0);
        }
        counts[idx] = count;
    }
    Ok(counts)
}

/// Query frequencies as a `width`-column grid (28 for MNIST), no header.
pub fn heatmap_csv(histogram: &[u64], width: usize) -> String {
    let total = histogram.iter().sum::<u64>().max(1) as f64;
    histogram
        .chunks(width)
        .map(|row| row.iter().map(|&c| format!("{}", c as f64 / total)).collect::<Vec<_>>().join(",") + "\n")
        .collect()
}
