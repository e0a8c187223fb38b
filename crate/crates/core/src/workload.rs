//! Synthetic workloads and the line-delimited trace format.

use crate::mapping::IntRange;
use crate::types::{ConfigError, QueryRecord, TrueProfile};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("cannot read trace {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: {message}")]
    Format { path: PathBuf, line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum ArrivalMode {
    /// Exponential inter-arrival gaps with the given mean rate (queries/s).
    Poisson { rate: f64 },
    /// Each query arrives when the previous one completes.
    Sequential,
    /// Queries and arrival offsets are read from a trace file.
    Trace { path: PathBuf },
}

/// Token length ranges of one dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LengthProfile {
    /// Range the per-query `query_token_len` is drawn from.
    pub input_tokens: IntRange,
    /// Range of final answer lengths; the upper end is the generation budget.
    pub output_tokens: IntRange,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetPreset {
    Squad,
    Musique,
    KgRagFinsec,
    Qmsum,
}

impl DatasetPreset {
    pub fn lengths(self) -> LengthProfile {
        let (input, output) = match self {
            DatasetPreset::Squad => ((400, 2000), (5, 10)),
            DatasetPreset::Musique => ((1000, 5000), (5, 20)),
            DatasetPreset::KgRagFinsec => ((4000, 10000), (20, 40)),
            DatasetPreset::Qmsum => ((4000, 12000), (20, 60)),
        };
        LengthProfile {
            input_tokens: IntRange::new(input.0, input.1),
            output_tokens: IntRange::new(output.0, output.1),
        }
    }
}

/// How hidden per-query truths are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TruthDistribution {
    /// Probability that a query needs joint reasoning over several pieces.
    pub joint_prob: f64,
    /// Probability that a query is of high complexity.
    pub complex_prob: f64,
    /// Pieces needed by single-fact queries.
    pub single_pieces: IntRange,
    /// Pieces needed by joint-reasoning queries.
    pub joint_pieces: IntRange,
    /// Relative weight of each joint piece count, lowest count first.
    /// Empty means uniform over `joint_pieces`.
    pub joint_piece_weights: Vec<f64>,
    pub summary_len: IntRange,
}

impl Default for TruthDistribution {
    fn default() -> Self {
        TruthDistribution {
            joint_prob: 0.3,
            complex_prob: 0.3,
            single_pieces: IntRange::new(1, 1),
            joint_pieces: IntRange::new(2, 10),
            // Most multi-fact questions need two to four facts, with a long tail.
            joint_piece_weights: vec![6.0, 4.0, 3.0, 2.0, 2.0, 2.0, 2.0, 2.0, 2.0],
            summary_len: IntRange::new(30, 60),
        }
    }
}

impl TruthDistribution {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, p) in [("joint_prob", self.joint_prob), ("complex_prob", self.complex_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(ConfigError::Invalid(format!("truth.{name} = {p} outside [0,1]")));
            }
        }
        for (name, r, lo, hi) in [
            ("single_pieces", self.single_pieces, TrueProfile::PIECES_MIN, TrueProfile::PIECES_MAX),
            ("joint_pieces", self.joint_pieces, TrueProfile::PIECES_MIN, TrueProfile::PIECES_MAX),
            ("summary_len", self.summary_len, TrueProfile::SUMMARY_MIN, TrueProfile::SUMMARY_MAX),
        ] {
            if r.low > r.high || r.low < lo || r.high > hi {
                return Err(ConfigError::Invalid(format!("truth.{name} must be a nonempty range within [{lo}, {hi}]")));
            }
        }
        let n = (self.joint_pieces.high - self.joint_pieces.low + 1) as usize;
        let w = &self.joint_piece_weights;
        if !w.is_empty()
            && (w.len() != n || w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || w.iter().sum::<f64>() <= 0.0)
        {
            return Err(ConfigError::Invalid(format!(
                "truth.joint_piece_weights needs {n} nonnegative weights with a positive sum"
            )));
        }
        Ok(())
    }

    fn sample(&self, rng: &mut impl Rng) -> TrueProfile {
        let needs_joint_reasoning = rng.random::<f64>() < self.joint_prob;
        let complexity_high = rng.random::<f64>() < self.complex_prob;
        let u = rng.random::<f64>();
        let pieces_required = if needs_joint_reasoning {
            pick_weighted(self.joint_pieces, &self.joint_piece_weights, u)
        } else {
            pick_weighted(self.single_pieces, &[], u)
        };
        let required_summary_len = rng.random_range(self.summary_len.low..=self.summary_len.high);
        TrueProfile { needs_joint_reasoning, complexity_high, pieces_required, required_summary_len }
    }
}

/// Maps a uniform `u` in [0,1) onto `range`, optionally weighted.
fn pick_weighted(range: IntRange, weights: &[f64], u: f64) -> u32 {
    let n = range.high - range.low + 1;
    if weights.is_empty() {
        return range.low + ((u * f64::from(n)) as u32).min(n - 1);
    }
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w / total;
        if u < acc {
            return range.low + i as u32;
        }
    }
    range.high
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    pub num_queries: usize,
    pub arrival: ArrivalMode,
    pub lengths: LengthProfile,
    #[serde(default)]
    pub truth: TruthDistribution,
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if let ArrivalMode::Poisson { rate } = self.arrival {
            if !(rate.is_finite() && rate > 0.0) {
                return Err(ConfigError::Invalid(format!("poisson rate must be positive, got {rate}")));
            }
        }
        for (name, r) in [("input_tokens", self.lengths.input_tokens), ("output_tokens", self.lengths.output_tokens)] {
            if r.low > r.high || r.low == 0 {
                return Err(ConfigError::Invalid(format!("lengths.{name} must be a nonempty positive range")));
            }
        }
        self.truth.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadItem {
    pub query: QueryRecord,
    /// Arrival time in seconds; ignored in sequential mode.
    pub arrival: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Workload {
    pub items: Vec<WorkloadItem>,
    /// Arrivals are chained to completions instead of `arrival`.
    pub sequential: bool,
}

impl Workload {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Draws a workload. Trace mode reads the file named in the spec.
pub fn gen_workload(spec: &WorkloadSpec, seed: u64) -> Result<Workload, ConfigError> {
    spec.validate()?;
    if let ArrivalMode::Trace { path } = &spec.arrival {
        return load_trace(path).map_err(|e| ConfigError::Invalid(e.to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gaps = match spec.arrival {
        ArrivalMode::Poisson { rate } => Some(Exp::new(rate).map_err(|e| ConfigError::Invalid(e.to_string()))?),
        _ => None,
    };
    let input = spec.lengths.input_tokens;
    let mut t = 0.0;
    let mut items = Vec::with_capacity(spec.num_queries);
    for i in 0..spec.num_queries {
        let gap = gaps.as_ref().map_or(0.0, |g| g.sample(&mut rng));
        if i > 0 {
            t += gap;
        }
        let query_token_len = rng.random_range(input.low..=input.high);
        let truth = spec.truth.sample(&mut rng);
        items.push(WorkloadItem {
            query: QueryRecord {
                id: format!("q{i:05}"),
                text: format!("synthetic query {i}"),
                query_token_len,
                ground_truth: None,
                hidden_truth: Some(truth),
            },
            arrival: t,
        });
    }
    Ok(Workload { items, sequential: matches!(spec.arrival, ArrivalMode::Sequential) })
}

/// One line of a trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub text: String,
    pub query_token_len: u32,
    pub arrival_offset_secs: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub needs_joint_reasoning: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub complexity_high: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pieces_required: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub required_summary_len: Option<u32>,
}

impl TraceRecord {
    pub fn from_item(item: &WorkloadItem) -> Self {
        let t = item.query.hidden_truth;
        TraceRecord {
            id: Some(item.query.id.clone()),
            text: item.query.text.clone(),
            query_token_len: item.query.query_token_len,
            arrival_offset_secs: item.arrival,
            ground_truth: item.query.ground_truth.clone(),
            needs_joint_reasoning: t.map(|t| t.needs_joint_reasoning),
            complexity_high: t.map(|t| t.complexity_high),
            pieces_required: t.map(|t| t.pieces_required),
            required_summary_len: t.map(|t| t.required_summary_len),
        }
    }

    /// Truth fields must be given all together or not at all.
    pub fn into_item(self, index: usize) -> Result<WorkloadItem, String> {
        let truth =
            match (self.needs_joint_reasoning, self.complexity_high, self.pieces_required, self.required_summary_len) {
                (Some(j), Some(c), Some(p), Some(s)) => Some(TrueProfile {
                    needs_joint_reasoning: j,
                    complexity_high: c,
                    pieces_required: p,
                    required_summary_len: s,
                }),
                (None, None, None, None) => None,
                _ => return Err("truth fields must be all present or all absent".into()),
            };
        if !(self.arrival_offset_secs.is_finite() && self.arrival_offset_secs >= 0.0) {
            return Err("arrival_offset_secs must be a nonnegative number".into());
        }
        let query = QueryRecord {
            id: self.id.unwrap_or_else(|| format!("q{index:05}")),
            text: self.text,
            query_token_len: self.query_token_len,
            ground_truth: self.ground_truth,
            hidden_truth: truth,
        };
        query.validate().map_err(|e| e.to_string())?;
        Ok(WorkloadItem { query, arrival: self.arrival_offset_secs })
    }
}

pub fn write_trace(workload: &Workload, mut out: impl Write) -> io::Result<()> {
    for item in &workload.items {
        serde_json::to_writer(&mut out, &TraceRecord::from_item(item))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_trace(workload: &Workload, path: &Path) -> Result<(), TraceError> {
    let io_err = |source| TraceError::Io { path: path.to_path_buf(), source };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    write_trace(workload, &mut w).map_err(io_err)?;
    w.flush().map_err(io_err)
}

/// Reads a trace; records are stably sorted by arrival offset.
pub fn load_trace(path: &Path) -> Result<Workload, TraceError> {
    let io_err = |source| TraceError::Io { path: path.to_path_buf(), source };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut items = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let fmt = |message: String| TraceError::Format { path: path.to_path_buf(), line: i + 1, message };
        let rec: TraceRecord = serde_json::from_str(&line).map_err(|e| fmt(e.to_string()))?;
        items.push(rec.into_item(items.len()).map_err(fmt)?);
    }
    items.sort_by(|a, b| a.arrival.total_cmp(&b.arrival));
    Ok(Workload { items, sequential: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(arrival: ArrivalMode, n: usize) -> WorkloadSpec {
        WorkloadSpec { num_queries: n, arrival, lengths: DatasetPreset::Musique.lengths(), truth: Default::default() }
    }

    #[test]
    fn poisson_mean_gap() {
        let w = gen_workload(&spec(ArrivalMode::Poisson { rate: 2.0 }, 200), 42).unwrap();
        let mean = w.items.last().unwrap().arrival / 199.0;
        assert!((mean - 0.5).abs() <= 0.5 * 0.15, "mean gap {mean}");
        assert!(w.items.windows(2).all(|p| p[0].arrival <= p[1].arrival));
    }

    #[test]
    fn musique_lengths() {
        let w = gen_workload(&spec(ArrivalMode::Sequential, 500), 1).unwrap();
        assert!(w.sequential);
        assert!(w.items.iter().all(|i| (1000..=5000).contains(&i.query.query_token_len)));
    }

    #[test]
    fn seeded() {
        let s = spec(ArrivalMode::Poisson { rate: 3.0 }, 50);
        assert_eq!(gen_workload(&s, 9).unwrap(), gen_workload(&s, 9).unwrap());
        assert_ne!(gen_workload(&s, 9).unwrap(), gen_workload(&s, 10).unwrap());
    }

    #[test]
    fn trace_round_trip() {
        let w = gen_workload(&spec(ArrivalMode::Poisson { rate: 2.0 }, 40), 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        save_trace(&w, &path).unwrap();
        assert_eq!(load_trace(&path).unwrap(), w);
    }

    #[test]
    fn trace_sorted_and_partial_truth_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        std::fs::write(
            &path,
            "{\"text\":\"b\",\"query_token_len\":5,\"arrival_offset_secs\":2.0}\n\n\
             {\"text\":\"a\",\"query_token_len\":5,\"arrival_offset_secs\":1.0}\n",
        )
        .unwrap();
        let w = load_trace(&path).unwrap();
        assert_eq!(w.items[0].query.text, "a");
        assert_eq!(w.items[1].query.id, "q00000");

        std::fs::write(
            &path,
            "{\"text\":\"a\",\"query_token_len\":5,\"arrival_offset_secs\":1.0,\"pieces_required\":2}\n",
        )
        .unwrap();
        assert!(matches!(load_trace(&path), Err(TraceError::Format { line: 1, .. })));
        assert!(matches!(load_trace(&dir.path().join("missing")), Err(TraceError::Io { .. })));
    }

    #[test]
    fn invalid_specs() {
        assert!(spec(ArrivalMode::Poisson { rate: 0.0 }, 1).validate().is_err());
        let mut s = spec(ArrivalMode::Sequential, 1);
        s.truth.joint_piece_weights = vec![1.0; 3];
        assert!(s.validate().is_err());
        s.truth.joint_piece_weights = vec![1.0; 9];
        assert!(s.validate().is_ok());
    }

    #[test]
    fn weighted_pieces() {
        let r = IntRange::new(2, 4);
        assert_eq!(pick_weighted(r, &[1.0, 0.0, 1.0], 0.49), 2);
        assert_eq!(pick_weighted(r, &[1.0, 0.0, 1.0], 0.51), 4);
        assert_eq!(pick_weighted(r, &[], 0.999), 4);
        assert_eq!(pick_weighted(r, &[], 0.0), 2);
    }

    proptest! {
        #[test]
        fn sampled_truths_are_valid(seed: u64, joint in 0.0f64..=1.0) {
            let mut s = spec(ArrivalMode::Sequential, 20);
            s.truth.joint_prob = joint;
            for item in gen_workload(&s, seed).unwrap().items {
                prop_assert!(item.query.validate().is_ok());
            }
        }
    }
}
