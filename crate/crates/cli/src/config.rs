//! Job configuration file.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use hybridcast::bootstrap::DEFAULT_PATHS;
use hybridcast::combine::{HybridConfig, MeanDefinition};
use hybridcast::evaluate::{BenchMethod, BenchmarkConfig, CvPlan, HybridPoint};
use hybridcast::forecasters::{DemographicInputs, Method};
use hybridcast::ingest::CsvSchema;
use hybridcast::{QuantileGrid, Variant};
use serde::{Deserialize, Deserializer};

use crate::error::{CliError, Result};

/// A method name from the registry, validated while parsing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodName(pub BenchMethod);

impl<'de> Deserialize<'de> for MethodName {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map(MethodName).map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for MethodName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

fn default_methods() -> Vec<MethodName> {
    BenchMethod::all()
        .into_iter()
        .filter(|m| *m != BenchMethod::Demographic)
        .map(MethodName)
        .collect()
}

fn default_paths() -> usize {
    DEFAULT_PATHS
}

fn default_variant() -> Variant {
    Variant::WeightedAverage
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobConfig {
    pub dataset: PathBuf,
    #[serde(default)]
    pub schema: CsvSchema,
    #[serde(default = "default_methods")]
    pub methods: Vec<MethodName>,
    #[serde(default)]
    pub cv: CvPlan,
    /// Quantile levels; the 99 percentiles when absent.
    #[serde(default)]
    pub grid: Option<Vec<f64>>,
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_variant")]
    pub variant: Variant,
    #[serde(default)]
    pub mean_definition: MeanDefinition,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub demographic: Option<PathBuf>,
    #[serde(default = "yes")]
    pub pre_average: bool,
    #[serde(default)]
    pub dump_paths: bool,
    #[serde(default)]
    pub hybrid_point: Option<HybridPoint>,
    #[serde(default)]
    pub commit_log: Option<PathBuf>,
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub variant: Option<Variant>,
    pub mean_definition: Option<MeanDefinition>,
}

impl JobConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::config(path, e.into_inner())
        })
    }

    /// Reads, validates and resolves relative paths against the file's directory.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut config = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        config.apply(overrides);
        config.validate()?;
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.dataset);
        join(&mut self.output_dir);
        if let Some(p) = self.demographic.as_mut() {
            join(p);
        }
        if let Some(p) = self.commit_log.as_mut() {
            join(p);
        }
    }

    pub fn apply(&mut self, overrides: &Overrides) {
        if let Some(seed) = overrides.seed {
            self.seed = seed;
        }
        if let Some(v) = overrides.variant {
            self.variant = v;
        }
        if let Some(m) = overrides.mean_definition {
            self.mean_definition = m;
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.dataset.is_file() {
            return Err(CliError::config(
                "dataset",
                format!("dataset file {} does not exist", self.dataset.display()),
            ));
        }
        if let Some(p) = &self.demographic {
            if !p.is_file() {
                return Err(CliError::config(
                    "demographic",
                    format!("file {} does not exist", p.display()),
                ));
            }
        }
        if self.methods.is_empty() {
            return Err(CliError::config("methods", "at least one method is required"));
        }
        self.grid()?;
        if self.paths < 2 {
            return Err(CliError::config("paths", "at least 2 paths are needed"));
        }
        if self.cv.origins == 0 || self.cv.horizon == 0 || self.cv.step == 0 {
            return Err(CliError::config("cv", "origins, horizon and step must be at least 1"));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<QuantileGrid> {
        match &self.grid {
            None => Ok(QuantileGrid::percentiles()),
            Some(levels) => {
                QuantileGrid::new(levels.clone()).map_err(|e| CliError::config("grid", e))
            }
        }
    }

    /// Creates the output directory and checks that it accepts files.
    pub fn prepare_output(&self) -> Result<PathBuf> {
        let dir = &self.output_dir;
        fs::create_dir_all(dir).map_err(|e| CliError::config("output_dir", format!("{}: {e}", dir.display())))?;
        let probe = dir.join(".write-check");
        fs::write(&probe, b"").map_err(|e| CliError::config("output_dir", format!("{}: {e}", dir.display())))?;
        let _ = fs::remove_file(probe);
        Ok(dir.clone())
    }

    pub fn demographic_inputs(&self) -> Result<Option<DemographicInputs>> {
        self.demographic
            .as_ref()
            .map(|p| DemographicInputs::load(p).map_err(|e| CliError::config("demographic", e)))
            .transpose()
    }

    pub fn bench_methods(&self) -> Vec<BenchMethod> {
        self.methods.iter().map(|m| m.0).collect()
    }

    /// Probabilistic base methods listed in the config, or the default pool.
    pub fn pool_members(&self) -> Vec<Method> {
        let listed: Vec<Method> = self
            .methods
            .iter()
            .filter_map(|m| match m.0 {
                BenchMethod::Base(method) if method.is_probabilistic() => Some(method),
                _ => None,
            })
            .collect();
        if listed.is_empty() {
            BenchmarkConfig::default().pool_members
        } else {
            listed
        }
    }

    pub fn hybrid_config(&self) -> HybridConfig {
        HybridConfig {
            mean_definition: self.mean_definition,
            ..HybridConfig::default()
        }
    }

    pub fn benchmark_config(&self) -> Result<BenchmarkConfig> {
        let hybrid_point = self.hybrid_point.unwrap_or(if self.demographic.is_some() {
            HybridPoint::Demographic
        } else {
            HybridPoint::Method(Method::ses())
        });
        Ok(BenchmarkConfig {
            plan: self.cv,
            grid: self.grid()?,
            paths: self.paths,
            seed: self.seed,
            pool_members: self.pool_members(),
            hybrid: self.hybrid_config(),
            hybrid_point,
            pre_average: self.pre_average,
            ..BenchmarkConfig::default()
        })
    }
}
