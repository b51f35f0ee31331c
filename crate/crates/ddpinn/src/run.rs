//! Executes a [`RunConfig`] over its seeds and collects a [`RunRecord`].

use std::time::Instant;

use anyhow::Context;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use ddpinn_core::geometry::build_samples;
use ddpinn_core::loss::LossBreakdown;
use ddpinn_core::metrics::{evaluate_on_grid, ErrorReport, TestGrid};
use ddpinn_core::nn::Network;
use ddpinn_core::rng::RNG_ALGORITHM;
use ddpinn_core::train::{self, Abort, Executor, Sequential, TracePoint};

use crate::config::RunConfig;

pub const ARTIFACT_VERSION: &str = concat!("ddpinn ", env!("CARGO_PKG_VERSION"));

/// Runs subdomains on a private rayon pool.
#[derive(Debug)]
pub struct RayonExecutor {
    pool: rayon::ThreadPool,
}

impl RayonExecutor {
    pub fn new(threads: usize) -> anyhow::Result<Self> {
        Ok(Self { pool: rayon::ThreadPoolBuilder::new().num_threads(threads).build()? })
    }
}

impl Executor for RayonExecutor {
    fn map<T, R, F>(&self, items: &mut [T], f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(usize, &mut T) -> R + Sync + Send,
    {
        self.pool.install(|| items.par_iter_mut().enumerate().map(|(i, t)| f(i, t)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointResult {
    pub epoch: usize,
    pub communications: usize,
    pub errors: ErrorReport,
    /// Best plain loss per subdomain.
    pub best_values: Vec<f64>,
    pub losses: Vec<LossBreakdown>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub parameter_counts: Vec<usize>,
    pub sample_counts: SampleCounts,
    pub communications: usize,
    pub checkpoints: Vec<CheckpointResult>,
    pub trace: Vec<TracePoint>,
    pub abort: Option<Abort>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleCounts {
    pub interior: Vec<usize>,
    pub boundary: Vec<usize>,
    pub interface: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub total_seconds: f64,
    pub per_seed_seconds: Vec<f64>,
}

/// Everything needed to rerun and compare a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub artifact_version: String,
    pub rng_algorithm: String,
    pub config: RunConfig,
    pub results: Vec<SeedResult>,
    /// Wall clock, kept apart from the numerical payload.
    pub timings: Timings,
}

impl RunRecord {
    /// JSON of the deterministic part of the record: everything except
    /// timings and the settings that only affect where and how fast it ran.
    pub fn payload_json(&self) -> String {
        let config = RunConfig { workers: 1, output: None, ..self.config.clone() };
        serde_json::to_string(&(&self.artifact_version, &self.rng_algorithm, &config, &self.results)).expect("record serializes")
    }

    pub fn aborted(&self) -> bool {
        self.results.iter().any(|r| r.abort.is_some())
    }

    /// Checkpoint epochs shared by all seeds.
    pub fn checkpoint_epochs(&self) -> Vec<usize> {
        self.results.first().map(|r| r.checkpoints.iter().map(|c| c.epoch).collect()).unwrap_or_default()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("record serializes")
    }

    pub fn from_json(text: &str) -> anyhow::Result<Self> {
        serde_json::from_str(text).context("invalid run record")
    }
}

/// Trains every seed of `config` and evaluates all checkpoints.
pub fn run(config: &RunConfig) -> anyhow::Result<RunRecord> {
    config.validate()?;
    let start = Instant::now();
    let mut results = Vec::with_capacity(config.seeds.len());
    let mut per_seed = Vec::with_capacity(config.seeds.len());
    let parallel = if config.workers > 1 { Some(RayonExecutor::new(config.workers)?) } else { None };
    for &seed in &config.seeds {
        let t = Instant::now();
        let r = match &parallel {
            Some(p) => run_seed(config, seed, p)?,
            None => run_seed(config, seed, &Sequential)?,
        };
        results.push(r);
        per_seed.push(t.elapsed().as_secs_f64());
    }
    Ok(RunRecord {
        artifact_version: ARTIFACT_VERSION.to_string(),
        rng_algorithm: RNG_ALGORITHM.to_string(),
        config: config.clone(),
        results,
        timings: Timings { total_seconds: start.elapsed().as_secs_f64(), per_seed_seconds: per_seed },
    })
}

pub fn run_seed<E: Executor>(config: &RunConfig, seed: u64, executor: &E) -> anyhow::Result<SeedResult> {
    let problem = config.build_problem()?;
    let specs = config.network_specs(&problem)?;
    let samples = build_samples(&problem.partition, &config.sample_plan(&problem), seed)?;
    let outcome = train::train(&problem, &samples, &specs, &config.train_config(), seed, executor)?;

    let nets = specs.iter().map(|s| Network::new(s.clone())).collect::<Result<Vec<_>, _>>()?;
    let grid = TestGrid { domain: problem.kind.domain(), n: config.grid_points };
    let mut checkpoints = Vec::with_capacity(outcome.checkpoints.len());
    for cp in &outcome.checkpoints {
        let errors = evaluate_on_grid(&problem, &nets, &cp.best_params, &grid, cp.epoch)?;
        checkpoints.push(CheckpointResult {
            epoch: cp.epoch,
            communications: cp.communications,
            errors,
            best_values: cp.best_values.clone(),
            losses: cp.losses.clone(),
        });
    }
    // JSON has no NaN or infinity; keep the numbers in the message instead
    let abort = outcome.abort.map(|mut a| {
        if let Some(b) = a.losses.filter(|b| !breakdown_is_finite(b)) {
            a.reason = format!("{} ({b:?})", a.reason);
            a.losses = None;
        }
        a
    });
    Ok(SeedResult {
        seed,
        parameter_counts: specs.iter().map(|s| s.param_count()).collect(),
        sample_counts: SampleCounts {
            interior: samples.interior.iter().map(Vec::len).collect(),
            boundary: samples.boundary.iter().map(Vec::len).collect(),
            interface: samples.interface.iter().map(Vec::len).collect(),
        },
        communications: outcome.state.communications,
        checkpoints,
        trace: outcome.trace,
        abort,
    })
}

fn breakdown_is_finite(b: &LossBreakdown) -> bool {
    [b.l_f, b.l_div, b.l_g, b.f_u, b.f_n, b.lambda_0, b.lambda_i, b.lambda_div, b.plain, b.total].iter().all(|v| v.is_finite())
}
