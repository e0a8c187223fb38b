//! TOML run configuration shared by the command-line driver and the tests.

use crate::mapping::{EnumGranularity, IntRange, PrunedConfigSpace};
use crate::memory::MemoryModel;
use crate::profiler::{
    Estimator, HeuristicEstimator, MockEstimator, NoiseParams, ProfilerError, RemoteEstimator, RemoteSettings,
    DEFAULT_GATE_THRESHOLD,
};
use crate::sim::{CostModel, QualityModel, SimSettings};
use crate::types::{ConfigError, ConfigLimits, DatasetMeta, ModelSpec, SynthesisMethod};
use crate::workload::{ArrivalMode, DatasetPreset, LengthProfile, TruthDistribution, WorkloadSpec};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// KV-cache budget of the default scenario.
pub const DEFAULT_CAPACITY_BYTES: u64 = 16_000_000_000;

/// Query lengths of the default scenario. Retrieved text is accounted for
/// separately through the chunk count, so only the question itself is here.
pub const DEFAULT_LENGTHS: LengthProfile =
    LengthProfile { input_tokens: IntRange { low: 20, high: 100 }, output_tokens: IntRange { low: 5, high: 20 } };

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EstimatorConfig {
    /// Seeded perturbation of the hidden truth.
    Mock {
        #[serde(default)]
        noise: NoiseParams,
        /// Defaults to the run seed.
        #[serde(default)]
        seed: Option<u64>,
    },
    /// Keyword rules over the query text.
    Heuristic,
    /// OpenAI-compatible endpoint; the key is read from the environment.
    Remote(RemoteSettings),
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig::Mock { noise: NoiseParams::default(), seed: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProfilerConfig {
    pub threshold: f64,
    pub estimator: EstimatorConfig,
}

impl Default for ProfilerConfig {
    fn default() -> Self {
        ProfilerConfig { threshold: DEFAULT_GATE_THRESHOLD, estimator: EstimatorConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchedulerConfig {
    pub granularity: EnumGranularity,
    pub limits: ConfigLimits,
    /// Space used by low-confidence queries before any profile was accepted.
    pub default_space: PrunedConfigSpace,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig {
            granularity: EnumGranularity::default(),
            limits: ConfigLimits::default(),
            default_space: PrunedConfigSpace::new([SynthesisMethod::Stuff], IntRange::new(1, 6), None),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadConfig {
    pub num_queries: usize,
    pub arrival: ArrivalMode,
    /// Token lengths of a known dataset; overridden by `lengths`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<DatasetPreset>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lengths: Option<LengthProfile>,
    #[serde(default)]
    pub truth: TruthDistribution,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            num_queries: 200,
            arrival: ArrivalMode::Poisson { rate: 2.0 },
            preset: None,
            lengths: None,
            truth: TruthDistribution::default(),
        }
    }
}

impl WorkloadConfig {
    pub fn lengths(&self) -> LengthProfile {
        self.lengths.or(self.preset.map(DatasetPreset::lengths)).unwrap_or(DEFAULT_LENGTHS)
    }

    pub fn spec(&self) -> WorkloadSpec {
        WorkloadSpec {
            num_queries: self.num_queries,
            arrival: self.arrival.clone(),
            lengths: self.lengths(),
            truth: self.truth.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub report: PathBuf,
    pub summary: PathBuf,
    /// Admission trace, written only when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<PathBuf>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { report: "report.jsonl".into(), summary: "summary.csv".into(), trace: None }
    }
}

/// Everything one simulation run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_capacity")]
    pub capacity_bytes: u64,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub dataset: DatasetMeta,
    #[serde(default)]
    pub cost: CostModel,
    #[serde(default)]
    pub quality: QualityModel,
    #[serde(default)]
    pub profiler: ProfilerConfig,
    #[serde(default)]
    pub scheduler: SchedulerConfig,
    #[serde(default)]
    pub workload: WorkloadConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_capacity() -> u64 {
    DEFAULT_CAPACITY_BYTES
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            capacity_bytes: DEFAULT_CAPACITY_BYTES,
            model: ModelSpec::default(),
            dataset: DatasetMeta::default(),
            cost: CostModel::default(),
            quality: QualityModel::default(),
            profiler: ProfilerConfig::default(),
            scheduler: SchedulerConfig::default(),
            workload: WorkloadConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

fn check_range(name: &str, r: IntRange) -> Result<(), ConfigError> {
    if r.low > r.high {
        return Err(ConfigError::Invalid(format!("{name} is empty: [{}, {}]", r.low, r.high)));
    }
    Ok(())
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file. Relative paths inside it are resolved against the
    /// file's directory, and referenced input files must exist.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Invalid(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        if let ArrivalMode::Trace { path } = &mut self.workload.arrival {
            fix(path);
        }
        fix(&mut self.output.report);
        fix(&mut self.output.summary);
        if let Some(t) = &mut self.output.trace {
            fix(t);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model.validate()?;
        self.dataset.validate()?;
        self.sim_settings().validate()?;
        let limits = self.scheduler.limits;
        if limits.max_chunks == 0 {
            return Err(ConfigError::Invalid("scheduler.limits.max_chunks must be positive".into()));
        }
        let space = &self.scheduler.default_space;
        check_range("scheduler.default_space.num_chunks_range", space.num_chunks_range)?;
        if space.synthesis_methods.is_empty() || space.num_chunks_range.low == 0 {
            return Err(ConfigError::Invalid("scheduler.default_space must name a method and positive chunks".into()));
        }
        if space.synthesis_methods.contains(&SynthesisMethod::MapReduce) {
            match space.intermediate_length_range {
                Some(r) if r.low > 0 => check_range("scheduler.default_space.intermediate_length_range", r)?,
                _ => {
                    return Err(ConfigError::Invalid(
                        "scheduler.default_space with map_reduce needs a positive intermediate_length_range".into(),
                    ))
                }
            }
        }
        self.workload.spec().validate()?;
        if let ArrivalMode::Trace { path } = &self.workload.arrival {
            if !path.is_file() {
                return Err(ConfigError::Invalid(format!("trace file {} does not exist", path.display())));
            }
        }
        if let EstimatorConfig::Mock { noise, .. } = &self.profiler.estimator {
            noise.validate()?;
        }
        Ok(())
    }

    pub fn memory_model(&self) -> MemoryModel {
        MemoryModel::new(
            self.model.clone(),
            self.dataset.clone(),
            self.scheduler.limits,
            self.workload.lengths().output_tokens.high,
        )
    }

    pub fn sim_settings(&self) -> SimSettings {
        SimSettings {
            capacity_bytes: self.capacity_bytes,
            granularity: self.scheduler.granularity,
            cost: self.cost,
            quality: self.quality,
            gate_threshold: self.profiler.threshold,
            default_space: self.scheduler.default_space.clone(),
            seed: self.seed,
        }
    }

    pub fn estimator(&self) -> Result<Box<dyn Estimator>, ProfilerError> {
        Ok(match &self.profiler.estimator {
            EstimatorConfig::Mock { noise, seed } => Box::new(MockEstimator::new(*noise, seed.unwrap_or(self.seed))),
            EstimatorConfig::Heuristic => Box::new(HeuristicEstimator),
            EstimatorConfig::Remote(settings) => Box::new(RemoteEstimator::new(settings.clone())?),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }
}

/// Reads a standalone `[dataset]`-style TOML file (description, chunk_size).
pub fn load_dataset_meta(path: &Path) -> Result<DatasetMeta, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Invalid(format!("cannot read {}: {e}", path.display())))?;
    let meta: DatasetMeta = toml::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    meta.validate()?;
    Ok(meta)
}
