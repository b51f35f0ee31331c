//! Run configuration: one JSON document, optionally overridden by flags.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use ddpinn_core::geometry::{PartitionModel, SamplePlan};
use ddpinn_core::nn::NetworkSpec;
use ddpinn_core::optim::{AdamConfig, AscentRates};
use ddpinn_core::problems::{Problem, ProblemKind};
use ddpinn_core::train::{Algorithm, TrainConfig};

/// Epochs at which errors are reported unless the config says otherwise.
pub const DEFAULT_CHECKPOINTS: [usize; 4] = [10_000, 20_000, 50_000, 100_000];

/// How the domain is split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PartitionRecipe {
    /// The problem's own partition (2×1, 2×2, or its circles).
    #[default]
    Native,
    /// `nx × ny` rectangles.
    Grid { nx: usize, ny: usize },
}

impl fmt::Display for PartitionRecipe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PartitionRecipe::Native => f.write_str("native"),
            PartitionRecipe::Grid { nx, ny } => write!(f, "{nx}x{ny}"),
        }
    }
}

impl FromStr for PartitionRecipe {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "native" {
            return Ok(PartitionRecipe::Native);
        }
        let err = || format!("partition must be \"native\" or \"NXxNY\" (e.g. 2x2), got {s:?}");
        let (a, b) = s.split_once('x').ok_or_else(err)?;
        let nx = a.parse().map_err(|_| err())?;
        let ny = b.parse().map_err(|_| err())?;
        Ok(PartitionRecipe::Grid { nx, ny })
    }
}

impl TryFrom<String> for PartitionRecipe {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<PartitionRecipe> for String {
    fn from(p: PartitionRecipe) -> String {
        p.to_string()
    }
}

fn default_rates() -> AscentRates {
    AscentRates { alpha0: 0.1, alpha_lambda: 0.1, alpha_d: 0.1 }
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

fn default_true() -> bool {
    true
}

fn default_stride() -> usize {
    1000
}

fn default_grid() -> usize {
    501
}

fn default_workers() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: String,
    pub algorithm: Algorithm,
    #[serde(default)]
    pub partition: PartitionRecipe,
    /// Hidden widths overriding the per-problem default network.
    #[serde(default)]
    pub widths: Option<Vec<usize>>,
    /// Total epochs (`N_o · N_l` for a3).
    pub epochs: usize,
    /// `N_l` for a3.
    #[serde(default)]
    pub inner_epochs: Option<usize>,
    #[serde(default)]
    pub checkpoints: Option<Vec<usize>>,
    #[serde(default = "default_rates")]
    pub rates: AscentRates,
    #[serde(default = "default_true")]
    pub with_divergence: bool,
    #[serde(default)]
    pub samples: Option<SamplePlan>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Loss trace every this many epochs (0 = off).
    #[serde(default = "default_stride")]
    pub trace_stride: usize,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default)]
    pub reset_adam_each_outer: bool,
    /// Test grid points per axis.
    #[serde(default = "default_grid")]
    pub grid_points: usize,
    /// Threads for per-subdomain work; 1 runs sequentially.
    #[serde(default = "default_workers")]
    pub workers: usize,
}

impl RunConfig {
    pub fn new(problem: ProblemKind, algorithm: Algorithm, epochs: usize) -> Self {
        Self {
            problem: problem.name().to_string(),
            algorithm,
            partition: PartitionRecipe::Native,
            widths: None,
            epochs,
            inner_epochs: None,
            checkpoints: None,
            rates: default_rates(),
            with_divergence: true,
            samples: None,
            seeds: default_seeds(),
            output: None,
            trace_stride: default_stride(),
            adam: AdamConfig::default(),
            reset_adam_each_outer: false,
            grid_points: default_grid(),
            workers: 1,
        }
    }

    pub fn from_json(text: &str) -> anyhow::Result<Self> {
        let c: RunConfig = serde_json::from_str(text).context("invalid run config")?;
        Ok(c)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn kind(&self) -> anyhow::Result<ProblemKind> {
        Ok(ProblemKind::from_name(&self.problem)?)
    }

    pub fn build_problem(&self) -> anyhow::Result<Problem> {
        let kind = self.kind()?;
        Ok(match self.partition {
            PartitionRecipe::Native => Problem::native(kind),
            PartitionRecipe::Grid { nx, ny } => Problem::new(kind, PartitionModel::grid(kind.domain(), nx, ny)?)?,
        })
    }

    pub fn network_specs(&self, problem: &Problem) -> anyhow::Result<Vec<NetworkSpec>> {
        let n = problem.n_subdomains();
        let spec = match &self.widths {
            Some(w) => NetworkSpec { input_dim: 2, hidden_widths: w.clone(), branch: None, output_dim: problem.field_count() },
            None => problem.kind.default_network(n)?,
        };
        spec.validate()?;
        Ok(vec![spec; n])
    }

    pub fn sample_plan(&self, problem: &Problem) -> SamplePlan {
        self.samples.clone().unwrap_or_else(|| problem.kind.default_samples(problem.n_subdomains()))
    }

    /// Configured checkpoints, or the defaults up to `epochs` (at least `epochs` itself).
    pub fn resolved_checkpoints(&self) -> Vec<usize> {
        let mut c = match &self.checkpoints {
            Some(c) => c.clone(),
            None => {
                let mut c: Vec<usize> = DEFAULT_CHECKPOINTS.iter().copied().filter(|&c| c <= self.epochs).collect();
                if c.is_empty() {
                    c.push(self.epochs);
                }
                c
            }
        };
        c.sort_unstable();
        c.dedup();
        c
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            algorithm: self.algorithm,
            epochs: self.epochs,
            inner_epochs: self.inner_epochs.unwrap_or(1),
            rates: self.rates,
            adam: self.adam,
            with_divergence: self.with_divergence,
            checkpoints: self.resolved_checkpoints(),
            trace_stride: self.trace_stride,
            reset_adam_each_outer: self.reset_adam_each_outer,
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        let problem = self.build_problem()?;
        self.network_specs(&problem)?;
        if self.algorithm == Algorithm::A3 && self.inner_epochs.is_none() {
            bail!("a3 needs inner_epochs (N_l)");
        }
        self.train_config().validate()?;
        if self.seeds.is_empty() {
            bail!("at least one seed is required");
        }
        if self.workers == 0 {
            bail!("workers must be at least 1");
        }
        if self.grid_points < 2 {
            bail!("grid_points must be at least 2");
        }
        Ok(())
    }
}

/// Flag values that replace config keys.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub problem: Option<String>,
    pub algorithm: Option<Algorithm>,
    pub partition: Option<PartitionRecipe>,
    pub widths: Option<Vec<usize>>,
    pub epochs: Option<usize>,
    pub inner_epochs: Option<usize>,
    pub checkpoints: Option<Vec<usize>>,
    pub alpha0: Option<f64>,
    pub alpha_lambda: Option<f64>,
    pub alpha_d: Option<f64>,
    pub no_divergence: bool,
    pub seeds: Option<Vec<u64>>,
    pub output: Option<PathBuf>,
    pub trace_stride: Option<usize>,
    pub reset_adam_each_outer: bool,
    pub grid_points: Option<usize>,
    pub workers: Option<usize>,
}

impl Overrides {
    pub fn apply(self, c: &mut RunConfig) {
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field {
                    c.$field = v;
                }
            )*};
        }
        set!(problem, algorithm, partition, epochs, seeds, trace_stride, grid_points, workers);
        if self.widths.is_some() {
            c.widths = self.widths;
        }
        if self.inner_epochs.is_some() {
            c.inner_epochs = self.inner_epochs;
        }
        if self.checkpoints.is_some() {
            c.checkpoints = self.checkpoints;
        }
        if self.output.is_some() {
            c.output = self.output;
        }
        if let Some(a) = self.alpha0 {
            c.rates.alpha0 = a;
        }
        if let Some(a) = self.alpha_lambda {
            c.rates.alpha_lambda = a;
        }
        if let Some(a) = self.alpha_d {
            c.rates.alpha_d = a;
        }
        if self.no_divergence {
            c.with_divergence = false;
        }
        if self.reset_adam_each_outer {
            c.reset_adam_each_outer = true;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_json_uses_defaults() {
        let c = RunConfig::from_json(r#"{"problem":"poisson_smooth","algorithm":"a2","partition":"2x1","epochs":100}"#).unwrap();
        assert_eq!(c.partition, PartitionRecipe::Grid { nx: 2, ny: 1 });
        assert_eq!(c.seeds.len(), 5);
        assert_eq!(c.rates.alpha0, 0.1);
        assert_eq!(c.resolved_checkpoints(), vec![100]);
        c.validate().unwrap();
        let back = RunConfig::from_json(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn default_checkpoints_stop_at_epochs() {
        let c = RunConfig::new(ProblemKind::PoissonSmooth, Algorithm::A1, 50_000);
        assert_eq!(c.resolved_checkpoints(), vec![10_000, 20_000, 50_000]);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(RunConfig::from_json(r#"{"problem":"poisson_smooth","algorithm":"a2","epochs":1,"bogus":1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"problem":"poisson_smooth","algorithm":"a2","partition":"2by2","epochs":1}"#).is_err());
        let mut c = RunConfig::new(ProblemKind::PoissonSmooth, Algorithm::A3, 100);
        assert!(c.validate().is_err());
        c.inner_epochs = Some(30);
        assert!(c.validate().is_err());
        c.inner_epochs = Some(50);
        c.partition = PartitionRecipe::Grid { nx: 2, ny: 1 };
        c.validate().unwrap();
        c.checkpoints = Some(vec![200]);
        assert!(c.validate().is_err());
        let c = RunConfig { problem: "heat".into(), ..RunConfig::new(ProblemKind::PoissonSmooth, Algorithm::A1, 1) };
        assert!(c.validate().is_err());
    }

    #[test]
    fn flags_override_file_values() {
        let mut c = RunConfig::new(ProblemKind::PoissonSmooth, Algorithm::A1, 10);
        Overrides { algorithm: Some(Algorithm::A3), inner_epochs: Some(5), alpha_lambda: Some(0.05), seeds: Some(vec![7]), ..Default::default() }
            .apply(&mut c);
        assert_eq!(c.algorithm, Algorithm::A3);
        assert_eq!(c.inner_epochs, Some(5));
        assert_eq!(c.rates.alpha_lambda, 0.05);
        assert_eq!(c.rates.alpha0, 0.1);
        assert_eq!(c.seeds, vec![7]);
    }
}
