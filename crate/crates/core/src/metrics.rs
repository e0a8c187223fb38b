//! Answer F1 and delay/throughput aggregation over simulation reports.

use crate::sim::{QueryResult, SimReport};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("report has no queries")]
    EmptyReport,
}

fn tokens(s: &str) -> Vec<String> {
    s.to_lowercase()
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect::<String>()
        .split_whitespace()
        .map(str::to_owned)
        .collect()
}

/// Token-level F1 after lowercasing and stripping punctuation.
pub fn f1_score(prediction: &str, truth: &str) -> f64 {
    let pred = tokens(prediction);
    let gold = tokens(truth);
    if pred.is_empty() || gold.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &gold {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in &pred {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let p = common as f64 / pred.len() as f64;
    let r = common as f64 / gold.len() as f64;
    2.0 * p * r / (p + r)
}

/// Nearest-rank percentile of an ascending slice; `q` in (0, 100].
pub fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let rank = ((q / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

pub const SUMMARY_HEADER: &str = "policy,mean_delay,p50,p95,throughput,mean_quality,fallback_rate";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub policy: String,
    pub queries: usize,
    pub mean_delay: f64,
    pub p50: f64,
    pub p95: f64,
    pub p99: f64,
    pub max_delay: f64,
    pub throughput: f64,
    /// Mean over queries that carry a quality score.
    pub mean_quality: Option<f64>,
    pub fallback_rate: f64,
    pub gate_fallback_rate: f64,
    pub profiler_fraction_mean: f64,
    pub profiler_fraction_max: f64,
}

impl Summary {
    pub fn csv_row(&self) -> String {
        let quality = self.mean_quality.map(|q| format!("{q:.6}")).unwrap_or_default();
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{},{:.6}",
            self.policy, self.mean_delay, self.p50, self.p95, self.throughput, quality, self.fallback_rate
        )
    }
}

/// Renders a summary table with the fixed header.
pub fn summary_csv<'a>(rows: impl IntoIterator<Item = &'a Summary>) -> String {
    let mut s = String::from(SUMMARY_HEADER);
    s.push('\n');
    for row in rows {
        let _ = writeln!(s, "{}", row.csv_row());
    }
    s
}

pub fn summarize(report: &SimReport) -> Result<Summary, MetricsError> {
    summarize_results(&report.policy, &report.queries)
}

pub fn summarize_results(policy: &str, results: &[QueryResult]) -> Result<Summary, MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::EmptyReport);
    }
    let n = results.len() as f64;
    let mut delays: Vec<f64> = results.iter().map(|r| r.delay).collect();
    delays.sort_by(f64::total_cmp);
    let first_arrival = results.iter().map(|r| r.arrival).fold(f64::INFINITY, f64::min);
    let last_completion = results.iter().map(|r| r.completion).fold(f64::NEG_INFINITY, f64::max);
    let makespan = last_completion - first_arrival;
    let qualities: Vec<f64> = results.iter().filter_map(|r| r.quality).collect();
    let fractions: Vec<f64> =
        results.iter().map(|r| if r.delay > 0.0 { r.profiler_secs / r.delay } else { 0.0 }).collect();
    Ok(Summary {
        policy: policy.to_owned(),
        queries: results.len(),
        mean_delay: delays.iter().sum::<f64>() / n,
        p50: nearest_rank(&delays, 50.0),
        p95: nearest_rank(&delays, 95.0),
        p99: nearest_rank(&delays, 99.0),
        max_delay: *delays.last().expect("nonempty"),
        throughput: if makespan > 0.0 { n / makespan } else { 0.0 },
        mean_quality: (!qualities.is_empty()).then(|| qualities.iter().sum::<f64>() / qualities.len() as f64),
        fallback_rate: results.iter().filter(|r| r.is_fallback).count() as f64 / n,
        gate_fallback_rate: results.iter().filter(|r| r.gate.is_fallback()).count() as f64 / n,
        profiler_fraction_mean: fractions.iter().sum::<f64>() / n,
        profiler_fraction_max: fractions.iter().copied().fold(0.0, f64::max),
    })
}
