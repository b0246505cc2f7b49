//! Measurements reported for both environments.

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::record::{CleanupRecord, CoopTally};

/// Maps a mean payoff per game from `[-c, b]` onto `[0, 1]`. Values outside
/// the interval are returned as is.
pub fn normalized_reward(mean_reward: f64, b: f64, c: f64) -> f64 {
    (mean_reward + c) / (b + c)
}

/// Inverse Gini index, `1 - sum_i sum_j |r_i - r_j| / (2 n^2 mean)`.
///
/// Returns `None` when the mean is zero (or the vector is empty), where the
/// index is undefined; callers drop such samples before aggregating.
pub fn equality(rewards: &[f64]) -> Option<f64> {
    let n = rewards.len();
    if n == 0 {
        return None;
    }
    let mean = rewards.iter().sum::<f64>() / n as f64;
    if mean == 0.0 || !mean.is_finite() {
        return None;
    }
    let mut sorted = rewards.to_vec();
    sorted.sort_by(f64::total_cmp);
    // each ordered pair counted once per direction: sum over i of
    // (2i - n + 1) * x_(i) for the ascending order statistics
    let abs_diff_sum: f64 = 2.0
        * sorted
            .iter()
            .enumerate()
            .map(|(i, &x)| (2.0 * i as f64 - n as f64 + 1.0) * x)
            .sum::<f64>();
    if abs_diff_sum == 0.0 {
        return Some(1.0);
    }
    Some(1.0 - abs_diff_sum / (2.0 * (n * n) as f64 * mean))
}

/// Equality of a vector that may contain negative rewards.
///
/// If any entry is negative the whole vector is first shifted by `-floor`,
/// where `floor` is the lowest reward the environment can hand out over the
/// same horizon, so the index is computed on non-negative support.
pub fn equality_with_floor(rewards: &[f64], floor: f64) -> Option<f64> {
    if rewards.iter().any(|&r| r < 0.0) {
        let shifted: Vec<f64> = rewards.iter().map(|r| r - floor.min(0.0)).collect();
        equality(&shifted)
    } else {
        equality(rewards)
    }
}

/// Fraction of cooperative actions per window of episodes, towards
/// teammates and towards others. A window without any action of a kind
/// yields `None` rather than zero.
pub fn cooperation_rates(tallies: &[CoopTally], window: usize) -> (Vec<Option<f64>>, Vec<Option<f64>>) {
    let window = window.max(1);
    let mut teammate = Vec::with_capacity(tallies.len() / window + 1);
    let mut other = Vec::with_capacity(tallies.len() / window + 1);
    for chunk in tallies.chunks(window) {
        let mut t = CoopTally::default();
        for x in chunk {
            t.merge(x);
        }
        teammate.push(ratio(t.teammate_coop, t.teammate_total));
        other.push(ratio(t.other_coop, t.other_total));
    }
    (teammate, other)
}

fn ratio(num: u32, den: u32) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Merged tally over the final quarter of the episodes.
pub fn last_quartile_tally(tallies: &[CoopTally]) -> CoopTally {
    let mut t = CoopTally::default();
    for x in &tallies[last_quartile_start(tallies.len())..] {
        t.merge(x);
    }
    t
}

/// First index of the final quarter of a series of length `n`.
pub fn last_quartile_start(n: usize) -> usize {
    n - n / 4
}

/// Mean over exactly the final quarter of the series (the whole series if
/// it has fewer than four points).
pub fn last_quartile_mean(series: &[f64]) -> f64 {
    let n = series.len();
    let start = if n < 4 { 0 } else { last_quartile_start(n) };
    let tail = &series[start..];
    if tail.is_empty() {
        return f64::NAN;
    }
    tail.iter().sum::<f64>() / tail.len() as f64
}

/// Per-agent apples and clean-beam counts per episode.
#[derive(Clone, Debug, PartialEq)]
pub struct LaborSeries {
    /// `apples[agent][episode]`
    pub apples: Vec<Vec<f64>>,
    /// `cleans[agent][episode]`
    pub cleans: Vec<Vec<f64>>,
}

pub fn division_of_labor(record: &CleanupRecord) -> LaborSeries {
    let n = record.episodes.first().map(|e| e.apples.len()).unwrap_or(0);
    let mut apples = vec![Vec::with_capacity(record.episodes.len()); n];
    let mut cleans = vec![Vec::with_capacity(record.episodes.len()); n];
    for ep in &record.episodes {
        for a in 0..n {
            apples[a].push(ep.apples[a] as f64);
            cleans[a].push(ep.cleans[a] as f64);
        }
    }
    LaborSeries { apples, cleans }
}

/// Trailing moving average over `window` points.
pub fn smooth(series: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(series.len());
    let mut acc = 0.0;
    for (i, &x) in series.iter().enumerate() {
        acc += x;
        if i >= window {
            acc -= series[i - window];
        }
        out.push(acc / (i + 1).min(window) as f64);
    }
    out
}

/// Student-t confidence interval of the mean, returned as
/// `(mean, half_width)`. Trials are the unit of replication.
pub fn confidence_interval(samples: &[f64], level: f64) -> Result<(f64, f64)> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!("confidence level {level} outside (0, 1)")));
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let stderr = (var / n as f64).sqrt();
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.5 + level / 2.0);
    Ok((mean, t * stderr))
}
