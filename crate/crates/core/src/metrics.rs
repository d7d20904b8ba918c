//! Running averages and the post-attack metrics: recovery time and the maximum
//! and total shortfall of the running average below the benchmark.

use serde::Serialize;

/// Mean of `series[t-window+1 ..= t]`, truncated at slot 0.
pub fn running_average(series: &[f64], window: usize, t: usize) -> f64 {
    assert!(window >= 1, "window must be at least 1");
    let start = (t + 1).saturating_sub(window);
    let slice = &series[start..=t];
    slice.iter().sum::<f64>() / slice.len() as f64
}

/// Running average at every slot, computed from prefix sums.
pub fn running_average_series(series: &[f64], window: usize) -> Vec<f64> {
    assert!(window >= 1, "window must be at least 1");
    let mut prefix = Vec::with_capacity(series.len() + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for &x in series {
        acc += x;
        prefix.push(acc);
    }
    (0..series.len())
        .map(|t| {
            let start = (t + 1).saturating_sub(window);
            (prefix[t + 1] - prefix[start]) / (t + 1 - start) as f64
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Recovery {
    pub slots: usize,
    /// The benchmark was never reached; `slots` is the remaining horizon.
    pub censored: bool,
}

/// Slots after `attack_stop` until the running average first reaches `benchmark`.
pub fn recovery_time(
    series: &[f64],
    attack_stop: usize,
    benchmark: f64,
    window: usize,
) -> Recovery {
    let averages = running_average_series(series, window);
    recovery_from_averages(&averages, attack_stop, benchmark)
}

pub fn recovery_from_averages(averages: &[f64], attack_stop: usize, benchmark: f64) -> Recovery {
    let tail = averages.get(attack_stop..).unwrap_or(&[]);
    match tail.iter().position(|&a| a >= benchmark) {
        Some(n) => Recovery {
            slots: n,
            censored: false,
        },
        None => Recovery {
            slots: tail.len(),
            censored: true,
        },
    }
}

/// Largest and accumulated shortfall `(benchmark - running average)+` over
/// slots `attack_stop ..= attack_stop + recovery`.
pub fn reward_reductions(
    averages: &[f64],
    attack_stop: usize,
    benchmark: f64,
    recovery: usize,
) -> (f64, f64) {
    let end = (attack_stop + recovery + 1).min(averages.len());
    let mut max: f64 = 0.0;
    let mut total = 0.0;
    for &a in averages.get(attack_stop..end).unwrap_or(&[]) {
        let gap = (benchmark - a).max(0.0);
        max = max.max(gap);
        total += gap;
    }
    (max, total)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub baseline_reward: f64,
    pub recovery_time: usize,
    pub censored: bool,
    pub max_reduction: f64,
    pub total_reduction: f64,
    /// Running average at every slot of the run.
    #[serde(skip)]
    pub series: Vec<f64>,
}

impl MetricsReport {
    pub fn compute(rewards: &[f64], window: usize, attack_stop: usize, benchmark: f64) -> Self {
        let series = running_average_series(rewards, window);
        let rec = recovery_from_averages(&series, attack_stop, benchmark);
        let (max_reduction, total_reduction) =
            reward_reductions(&series, attack_stop, benchmark, rec.slots);
        Self {
            baseline_reward: benchmark,
            recovery_time: rec.slots,
            censored: rec.censored,
            max_reduction,
            total_reduction,
            series,
        }
    }
}
