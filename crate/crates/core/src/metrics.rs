//! Episode metrics. The headline number is average travel time: the mean of
//! (exit - entry) over completed vehicles, with every vehicle still in the
//! system at the horizon contributing a truncated (horizon - entry). The
//! truncation rule penalizes gridlock instead of hiding it and is recorded in
//! the emitted metadata.

use crate::sim::DepartedRecord;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    /// Mean travel time in seconds; 0.0 with `empty` set when no vehicle ever
    /// entered the system.
    pub average_travel_time: f64,
    /// Vehicles that completed their route (throughput).
    pub throughput: u32,
    /// Vehicles counted in the average that were still in the system at the
    /// horizon (truncated travel times).
    pub truncated: u32,
    /// Vehicles that physically entered the network.
    pub injected: u32,
    /// No vehicle was scheduled; the average is a placeholder.
    pub empty: bool,
    /// Total queued vehicles per tick over the episode.
    pub queue_series: Vec<u32>,
    pub config_hash: String,
    pub seed: u64,
}

impl EpisodeMetrics {
    pub fn completed(&self) -> u32 {
        self.throughput
    }
}

/// Computes metrics from departed records plus the entry times of vehicles
/// still in the system when the episode ended.
pub fn compute_metrics(departed: &[DepartedRecord], remaining_entry_times: &[f64], horizon: u32) -> EpisodeMetrics {
    let n = departed.len() + remaining_entry_times.len();
    if n == 0 {
        return EpisodeMetrics {
            average_travel_time: 0.0,
            throughput: 0,
            truncated: 0,
            injected: 0,
            empty: true,
            queue_series: Vec::new(),
            config_hash: String::new(),
            seed: 0,
        };
    }
    let h = horizon as f64;
    let mut total = 0.0;
    for d in departed {
        total += d.exit_time - d.entry_time;
    }
    for &entry in remaining_entry_times {
        total += (h - entry).max(0.0);
    }
    EpisodeMetrics {
        average_travel_time: total / n as f64,
        throughput: departed.len() as u32,
        truncated: remaining_entry_times.len() as u32,
        injected: 0,
        empty: false,
        queue_series: Vec::new(),
        config_hash: String::new(),
        seed: 0,
    }
}

/// Mean and half-width of a normal-approximation 95% confidence interval.
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * (var / n).sqrt())
}

/// Least-squares slope of a series against its index, for queue-trend checks.
pub fn linear_trend(series: &[u32]) -> f64 {
    let n = series.len();
    if n < 2 {
        return 0.0;
    }
    let nf = n as f64;
    let mean_x = (nf - 1.0) / 2.0;
    let mean_y = series.iter().map(|&v| v as f64).sum::<f64>() / nf;
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &v) in series.iter().enumerate() {
        let dx = i as f64 - mean_x;
        num += dx * (v as f64 - mean_y);
        den += dx * dx;
    }
    num / den
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(entry: f64, exit: f64) -> DepartedRecord {
        DepartedRecord { vehicle: 0, entry_time: entry, exit_time: exit }
    }

    #[test]
    fn mean_of_completed_trips() {
        let m = compute_metrics(&[rec(0.0, 100.0), rec(50.0, 250.0)], &[], 3600);
        assert_eq!(m.average_travel_time, 150.0);
        assert_eq!(m.throughput, 2);
        assert!(!m.empty);
    }

    #[test]
    fn no_vehicles_flags_empty() {
        let m = compute_metrics(&[], &[], 3600);
        assert_eq!(m.average_travel_time, 0.0);
        assert!(m.empty);
    }

    #[test]
    fn unfinished_trips_are_truncated_at_horizon() {
        // One trip of 120 s plus one vehicle that entered at 3000 and never
        // left before the 3600 s horizon: (120 + 600) / 2.
        let m = compute_metrics(&[rec(100.0, 220.0)], &[3000.0], 3600);
        assert_eq!(m.average_travel_time, 360.0);
        assert_eq!(m.throughput, 1);
        assert_eq!(m.truncated, 1);
    }

    #[test]
    fn trend_signs() {
        assert!(linear_trend(&[0, 1, 2, 3, 4]) > 0.0);
        assert!(linear_trend(&[4, 3, 2, 1, 0]) < 0.0);
        assert_eq!(linear_trend(&[2, 2, 2, 2]), 0.0);
    }

    #[test]
    fn ci_is_zero_for_single_sample() {
        let (mean, ci) = mean_ci95(&[5.0]);
        assert_eq!((mean, ci), (5.0, 0.0));
        let (mean, ci) = mean_ci95(&[1.0, 3.0]);
        assert_eq!(mean, 2.0);
        assert!(ci > 0.0);
    }
}
