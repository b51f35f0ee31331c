//! The three training schedules: exchange every epoch (plain or with
//! multipliers) and outer iterations that exchange once every `N_l` epochs.
//!
//! Each epoch runs in two phases. First every subdomain evaluates its network
//! and emits its interface traces; then, after the exchange, every subdomain
//! updates multipliers, tracks its best parameters and takes one Adam step.
//! Both phases touch only per-subdomain state plus an immutable snapshot, so
//! an [`Executor`] may run them in parallel without changing any bit of the
//! result.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::geometry::SampleSet;
use crate::loss::{self, LocalBatch, LocalEvals, LossBreakdown, LossError, LossInputs, LossMode, MultiplierState, TildeValues, Trace};
use crate::nn::{Network, NetworkSpec, NnError, Params};
use crate::optim::{ascent_step, AdamConfig, AdamState, AscentRates, OptimError};
use crate::problems::{Jump, Problem};
use crate::rng;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("expected {expected} network specs, got {got}")]
    SpecCount { expected: usize, got: usize },
    #[error("no trace from subdomain {sender} for interface {interface}")]
    MissingMessage { interface: usize, sender: usize },
    #[error("duplicate trace from subdomain {sender} for interface {interface}")]
    DuplicateMessage { interface: usize, sender: usize },
    #[error("stale trace from subdomain {sender} for interface {interface}: epoch {got}, expected {expected}")]
    StaleMessage { interface: usize, sender: usize, expected: usize, got: usize },
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Network(#[from] NnError),
    #[error(transparent)]
    Optim(#[from] OptimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Plain localized loss, exchange every epoch.
    A1,
    /// Augmented loss with multiplier ascent, exchange every epoch.
    A2,
    /// Augmented loss, `N_l` local epochs per exchange.
    A3,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::A1 => "a1",
            Algorithm::A2 => "a2",
            Algorithm::A3 => "a3",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        [Algorithm::A1, Algorithm::A2, Algorithm::A3].into_iter().find(|a| a.name() == name)
    }

    pub fn mode(self) -> LossMode {
        match self {
            Algorithm::A1 => LossMode::Plain,
            _ => LossMode::Augmented,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    /// Total epochs `N`; for A3 this is `N_o · N_l`.
    pub epochs: usize,
    /// `N_l`, used by A3 only.
    pub inner_epochs: usize,
    pub rates: AscentRates,
    pub adam: AdamConfig,
    /// Carry divergence multipliers (Stokes, augmented modes).
    pub with_divergence: bool,
    /// Epochs at which the best parameters are snapshotted.
    pub checkpoints: Vec<usize>,
    /// Record the loss every this many epochs; 0 disables the trace.
    pub trace_stride: usize,
    pub reset_adam_each_outer: bool,
}

impl TrainConfig {
    pub fn new(algorithm: Algorithm, epochs: usize) -> Self {
        Self {
            algorithm,
            epochs,
            inner_epochs: 1,
            rates: AscentRates::default(),
            adam: AdamConfig::default(),
            with_divergence: true,
            checkpoints: vec![epochs],
            trace_stride: 0,
            reset_adam_each_outer: false,
        }
    }

    /// Communications the schedule performs.
    pub fn expected_communications(&self) -> usize {
        match self.algorithm {
            Algorithm::A3 => self.epochs / self.inner_epochs.max(1),
            _ => self.epochs,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !self.rates.is_valid() {
            return bad(format!("ascent rates must be finite and non-negative: {:?}", self.rates));
        }
        if self.algorithm == Algorithm::A3 {
            if self.inner_epochs == 0 {
                return bad("a3 needs inner_epochs >= 1".into());
            }
            if self.epochs == 0 || self.epochs % self.inner_epochs != 0 {
                return bad(format!("a3 needs epochs ({}) to be a positive multiple of inner_epochs ({})", self.epochs, self.inner_epochs));
            }
        }
        if let Some(c) = self.checkpoints.iter().find(|&&c| c > self.epochs) {
            return bad(format!("checkpoint {c} exceeds {} epochs", self.epochs));
        }
        Ok(())
    }
}

/// Interface trace sent by one subdomain after a forward pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMessage {
    pub interface: usize,
    pub sender: usize,
    pub epoch: usize,
    pub trace: Trace,
}

/// Combines one message per interface side into a new snapshot.
///
/// Interfaces are processed in partition order (ascending `(lo, hi)`), so the
/// result does not depend on the order of `messages`.
pub fn synchronize(problem: &Problem, jumps: &[Vec<Jump>], messages: &[TraceMessage], epoch: usize) -> Result<TildeValues, TrainError> {
    let mut seen = BTreeSet::new();
    for m in messages {
        if !seen.insert((m.interface, m.sender)) {
            return Err(TrainError::DuplicateMessage { interface: m.interface, sender: m.sender });
        }
    }
    let find = |interface: usize, sender: usize| -> Result<&Trace, TrainError> {
        let m = messages
            .iter()
            .find(|m| m.interface == interface && m.sender == sender)
            .ok_or(TrainError::MissingMessage { interface, sender })?;
        if m.epoch != epoch {
            return Err(TrainError::StaleMessage { interface, sender, expected: epoch, got: m.epoch });
        }
        Ok(&m.trace)
    };
    let mut tilde = TildeValues::default();
    for (k, f) in problem.partition.interfaces().iter().enumerate() {
        let jk = jumps.get(k).ok_or(LossError::LengthMismatch { what: "interface jumps", expected: k + 1, got: jumps.len() })?;
        tilde.interfaces.push(loss::compute_tilde(f.hi, f.lo, find(k, f.hi)?, find(k, f.lo)?, jk)?);
    }
    Ok(tilde)
}

/// Runs per-subdomain closures, returning results in subdomain order.
pub trait Executor {
    fn map<T, R, F>(&self, items: &mut [T], f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(usize, &mut T) -> R + Sync + Send;
}

/// Runs subdomains one after another.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<T, R, F>(&self, items: &mut [T], f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(usize, &mut T) -> R + Sync + Send,
    {
        items.iter_mut().enumerate().map(|(i, t)| f(i, t)).collect()
    }
}

/// Training state of one subdomain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubdomainState {
    pub params: Params,
    pub adam: AdamState,
    pub multipliers: MultiplierState,
    /// `θ_i*`
    pub best_params: Params,
    /// `𝒥_i(θ_i*)` at the time it was recorded.
    pub best_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub subdomains: Vec<SubdomainState>,
    /// Last epoch reached.
    pub epoch: usize,
    /// Completed outer iterations (A3), otherwise 0.
    pub outer: usize,
    pub communications: usize,
    pub tilde: TildeValues,
}

/// Best parameters of every subdomain at one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub epoch: usize,
    pub communications: usize,
    pub best_params: Vec<Params>,
    pub best_values: Vec<f64>,
    /// Loss terms of the current parameters.
    pub losses: Vec<LossBreakdown>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub epoch: usize,
    /// Plain `𝒥_i` per subdomain.
    pub plain: Vec<f64>,
    /// Minimized objective per subdomain.
    pub total: Vec<f64>,
}

/// Why a run stopped early.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Abort {
    pub epoch: usize,
    pub subdomain: usize,
    pub reason: String,
    pub losses: Option<LossBreakdown>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub checkpoints: Vec<Checkpoint>,
    pub trace: Vec<TracePoint>,
    pub abort: Option<Abort>,
}

struct Worker {
    net: Network,
    batch: LocalBatch,
    state: SubdomainState,
    evals: Option<LocalEvals>,
}

/// Per-epoch instructions shared by all workers in the second phase.
struct StepPlan<'a> {
    epoch: usize,
    last: bool,
    mode: LossMode,
    /// Snapshot for the best check (and the step, unless `switch_to` is set).
    tilde: &'a TildeValues,
    /// A3 exchange: snapshot that takes over after the best check.
    switch_to: Option<&'a TildeValues>,
    ascend: bool,
    reinit: bool,
    reset_adam: bool,
    rates: AscentRates,
}

struct StepReport {
    check: LossBreakdown,
    total: f64,
}

type StepResult = Result<StepReport, (String, Option<LossBreakdown>)>;

impl Worker {
    fn messages(&mut self, epoch: usize) -> Result<Vec<TraceMessage>, TrainError> {
        let evals = loss::evaluate(&self.net, &self.state.params, &self.batch)?;
        let traces = loss::traces(&self.batch, &evals)?;
        self.evals = Some(evals);
        Ok(self
            .batch
            .sides
            .iter()
            .zip(traces)
            .map(|(s, trace)| TraceMessage { interface: s.interface, sender: self.batch.subdomain, epoch, trace })
            .collect())
    }

    fn step(&mut self, plan: &StepPlan<'_>) -> StepResult {
        let fail = |e: &dyn core::fmt::Display| (format!("{e}"), None);
        let evals = self.evals.take().ok_or_else(|| (String::from("missing forward pass"), None))?;
        let batch = &self.batch;
        let st = &mut self.state;

        if plan.ascend {
            let r = loss::constraint_residuals(batch, &evals, plan.tilde).map_err(|e| fail(&e))?;
            let m = &mut st.multipliers;
            ascent_step(m.boundary.as_flattened_mut(), r.boundary.as_flattened(), plan.rates.alpha0).map_err(|e| fail(&e))?;
            for (l, r) in m.interface.iter_mut().zip(&r.interface) {
                ascent_step(l.as_flattened_mut(), r.as_flattened(), plan.rates.alpha_lambda).map_err(|e| fail(&e))?;
            }
            if !m.divergence.is_empty() {
                ascent_step(&mut m.divergence, &r.divergence, plan.rates.alpha_d).map_err(|e| fail(&e))?;
            }
        }

        let mut seeds = evals.zero_seeds();
        let check_only = plan.last || plan.switch_to.is_some();
        let check = loss::total_loss(LossInputs { batch, evals: &evals, tilde: plan.tilde, multipliers: &st.multipliers }, plan.mode, if check_only { None } else { Some(&mut seeds) })
            .map_err(|e| fail(&e))?;
        if !check.plain.is_finite() || !check.total.is_finite() {
            return Err((format!("non-finite loss at epoch {}", plan.epoch), Some(check)));
        }
        if plan.epoch == 0 || check.plain < st.best_value {
            st.best_value = check.plain;
            st.best_params.values.copy_from_slice(&st.params.values);
        }
        if plan.last {
            return Ok(StepReport { check, total: check.total });
        }

        let mut total = check.total;
        if let Some(next) = plan.switch_to {
            if plan.reinit {
                let r = loss::constraint_residuals(batch, &evals, next).map_err(|e| fail(&e))?;
                st.multipliers.interface = r.interface;
                if !st.multipliers.divergence.is_empty() {
                    st.multipliers.divergence = r.divergence;
                }
            }
            if plan.reset_adam {
                st.adam.reset();
            }
            let b = loss::total_loss(LossInputs { batch, evals: &evals, tilde: next, multipliers: &st.multipliers }, plan.mode, Some(&mut seeds)).map_err(|e| fail(&e))?;
            if !b.total.is_finite() {
                return Err((format!("non-finite loss at epoch {}", plan.epoch), Some(b)));
            }
            total = b.total;
        }

        let mut grad = vec![0.0; st.params.len()];
        loss::backward(&self.net, &st.params, &evals, &seeds, &mut grad).map_err(|e| fail(&e))?;
        st.adam.step(&mut st.params.values, &grad).map_err(|e| (format!("epoch {}: {e}", plan.epoch), Some(check)))?;
        Ok(StepReport { check, total })
    }
}

/// Trains one network per subdomain of `problem` on `samples`.
///
/// Network `i` is initialised from `(seed, STREAM_INIT + i)`.
pub fn train<E: Executor>(
    problem: &Problem,
    samples: &SampleSet,
    specs: &[NetworkSpec],
    config: &TrainConfig,
    seed: u64,
    executor: &E,
) -> Result<TrainOutcome, TrainError> {
    train_observed(problem, samples, specs, config, seed, executor, |_, _, _| {})
}

/// As [`train`], calling `observer(epoch, i, state)` for every subdomain after
/// the update of each epoch.
pub fn train_observed<E: Executor>(
    problem: &Problem,
    samples: &SampleSet,
    specs: &[NetworkSpec],
    config: &TrainConfig,
    seed: u64,
    executor: &E,
    mut observer: impl FnMut(usize, usize, &SubdomainState),
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let n_sub = problem.n_subdomains();
    if specs.len() != n_sub {
        return Err(TrainError::SpecCount { expected: n_sub, got: specs.len() });
    }
    let mode = config.algorithm.mode();
    let with_div = config.with_divergence && mode == LossMode::Augmented;
    let mut workers = Vec::with_capacity(n_sub);
    for (i, spec) in specs.iter().enumerate() {
        let net = Network::new(spec.clone())?;
        let params = net.init_params_with(&mut rng::stream(seed, rng::STREAM_INIT + i as u64));
        let batch = LocalBatch::new(problem, samples, i)?;
        let state = SubdomainState {
            adam: AdamState::new(params.len(), config.adam),
            multipliers: MultiplierState::zeros(&batch, with_div),
            best_params: params.clone(),
            best_value: f64::INFINITY,
            params,
        };
        workers.push(Worker { net, batch, state, evals: None });
    }
    let jumps = loss::interface_jumps(problem, samples)?;
    let checkpoints: BTreeSet<usize> = config.checkpoints.iter().copied().collect();

    let n = config.epochs;
    let n_l = config.inner_epochs.max(1);
    let mut tilde = TildeValues::default();
    let mut communications = 0;
    let mut outer = 0;
    let mut saved = Vec::new();
    let mut trace = Vec::new();
    let mut abort = None;
    let mut epoch = 0;

    loop {
        let messages: Vec<TraceMessage> = executor
            .map(&mut workers, |_, w| w.messages(epoch))
            .into_iter()
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .flatten()
            .collect();

        let exchange = match config.algorithm {
            Algorithm::A1 | Algorithm::A2 => true,
            Algorithm::A3 => epoch == 0 || epoch % n_l == 0,
        };
        let fresh = if exchange { Some(synchronize(problem, &jumps, &messages, epoch)?) } else { None };
        if exchange && epoch > 0 {
            communications += 1;
        }
        let a3_exchange = config.algorithm == Algorithm::A3 && epoch > 0 && exchange;
        if !a3_exchange {
            if let Some(t) = fresh.clone() {
                tilde = t;
            }
        }
        if a3_exchange {
            outer += 1;
        }

        let plan = StepPlan {
            epoch,
            last: epoch == n,
            mode,
            tilde: &tilde,
            switch_to: if a3_exchange { fresh.as_ref() } else { None },
            ascend: epoch > 0 && mode == LossMode::Augmented,
            reinit: a3_exchange,
            reset_adam: a3_exchange && config.reset_adam_each_outer,
            rates: config.rates,
        };
        let reports = executor.map(&mut workers, |_, w| w.step(&plan));
        if a3_exchange {
            tilde = fresh.expect("exchange produced a snapshot");
        }

        let mut checks = Vec::with_capacity(n_sub);
        let mut totals = Vec::with_capacity(n_sub);
        for (i, r) in reports.into_iter().enumerate() {
            match r {
                Ok(r) => {
                    checks.push(r.check);
                    totals.push(r.total);
                }
                Err((reason, losses)) if abort.is_none() => abort = Some(Abort { epoch, subdomain: i, reason, losses }),
                Err(_) => {}
            }
        }
        if abort.is_some() {
            break;
        }
        if config.trace_stride > 0 && epoch % config.trace_stride == 0 {
            trace.push(TracePoint { epoch, plain: checks.iter().map(|b| b.plain).collect(), total: totals });
        }
        if checkpoints.contains(&epoch) {
            saved.push(Checkpoint {
                epoch,
                communications,
                best_params: workers.iter().map(|w| w.state.best_params.clone()).collect(),
                best_values: workers.iter().map(|w| w.state.best_value).collect(),
                losses: checks,
            });
        }
        if epoch == n {
            break;
        }
        for (i, w) in workers.iter().enumerate() {
            observer(epoch, i, &w.state);
        }
        epoch += 1;
    }

    let state = TrainState {
        subdomains: workers.into_iter().map(|w| w.state).collect(),
        epoch,
        outer,
        communications,
        tilde,
    };
    Ok(TrainOutcome { state, checkpoints: saved, trace, abort })
}
