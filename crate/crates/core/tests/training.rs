use ddpinn_core::geometry::{build_samples, PartitionModel, SamplePlan, SampleSet};
use ddpinn_core::loss::{self, LocalBatch, Trace};
use ddpinn_core::nn::{Network, NetworkSpec};
use ddpinn_core::optim::{AdamConfig, AscentRates};
use ddpinn_core::problems::{Jump, Problem, ProblemKind};
use ddpinn_core::train::{synchronize, train, train_observed, Algorithm, Sequential, TraceMessage, TrainConfig, TrainError};

fn setup(kind: ProblemKind, nx: usize, ny: usize) -> (Problem, SampleSet, Vec<NetworkSpec>) {
    let problem = if kind == ProblemKind::StokesInterface {
        Problem::native(kind)
    } else {
        Problem::new(kind, PartitionModel::grid(kind.domain(), nx, ny).unwrap()).unwrap()
    };
    let plan = SamplePlan { interior: 120, boundary_per_edge: 12, interface_per_line: vec![16] };
    let samples = build_samples(&problem.partition, &plan, 3).unwrap();
    let spec = if kind == ProblemKind::StokesInterface {
        ddpinn_core::oracle::small_spec(kind)
    } else {
        NetworkSpec::scalar(2, 2, 8)
    };
    let specs = vec![spec; problem.n_subdomains()];
    (problem, samples, specs)
}

fn config(algorithm: Algorithm, epochs: usize) -> TrainConfig {
    let mut c = TrainConfig::new(algorithm, epochs);
    c.rates = AscentRates { alpha0: 0.1, alpha_lambda: 0.1, alpha_d: 0.1 };
    c
}

#[test]
fn communication_counts_follow_the_schedule() {
    let (problem, samples, specs) = setup(ProblemKind::PoissonSmooth, 2, 1);
    for (alg, n, n_l, expected) in [(Algorithm::A1, 7, 1, 7), (Algorithm::A2, 5, 1, 5), (Algorithm::A3, 12, 3, 4), (Algorithm::A3, 12, 12, 1)] {
        let mut c = config(alg, n);
        c.inner_epochs = n_l;
        c.checkpoints = vec![0, n / 2, n];
        let out = train(&problem, &samples, &specs, &c, 1, &Sequential).unwrap();
        assert_eq!(out.state.communications, expected, "{alg:?}");
        assert_eq!(c.expected_communications(), expected);
        assert_eq!(out.checkpoints.len(), 3);
        assert_eq!(out.checkpoints[0].communications, 0);
        assert_eq!(out.checkpoints[2].communications, expected);
        if alg == Algorithm::A3 {
            assert_eq!(out.state.outer, expected);
        }
    }
}

#[test]
fn zero_epochs_keeps_initial_parameters() {
    let (problem, samples, specs) = setup(ProblemKind::PoissonSmooth, 2, 1);
    for alg in [Algorithm::A1, Algorithm::A2] {
        let out = train(&problem, &samples, &specs, &config(alg, 0), 4, &Sequential).unwrap();
        assert_eq!(out.state.communications, 0);
        for (i, s) in out.state.subdomains.iter().enumerate() {
            let init = Network::new(specs[i].clone())
                .unwrap()
                .init_params_with(&mut ddpinn_core::rng::stream(4, ddpinn_core::rng::STREAM_INIT + i as u64));
            assert_eq!(s.best_params, init);
            assert_eq!(s.params, init);
            assert!(s.best_value.is_finite());
        }
    }
}

#[test]
fn best_loss_is_non_increasing() {
    let (problem, samples, specs) = setup(ProblemKind::DiscCoeff, 2, 2);
    for alg in [Algorithm::A1, Algorithm::A2, Algorithm::A3] {
        let mut c = config(alg, 60);
        c.inner_epochs = 10;
        c.adam.lr = 0.01;
        let mut last = vec![f64::INFINITY; 4];
        let mut improved = 0;
        train_observed(&problem, &samples, &specs, &c, 2, &Sequential, |_, i, s| {
            assert!(s.best_value <= last[i]);
            if s.best_value < last[i] {
                improved += 1;
            }
            last[i] = s.best_value;
        })
        .unwrap();
        assert!(improved > 4);
    }
}

#[test]
fn zero_rates_reduce_to_plain_training() {
    for kind in [ProblemKind::PoissonSmooth, ProblemKind::StokesInterface] {
        let (problem, samples, specs) = setup(kind, 2, 1);
        let mut plain = Vec::new();
        let c1 = config(Algorithm::A1, 40);
        train_observed(&problem, &samples, &specs, &c1, 9, &Sequential, |_, _, s| plain.push(s.params.clone())).unwrap();
        let mut c2 = TrainConfig { algorithm: Algorithm::A2, ..c1.clone() };
        c2.rates = AscentRates::default();
        let mut k = 0;
        train_observed(&problem, &samples, &specs, &c2, 9, &Sequential, |_, _, s| {
            assert_eq!(s.params.values, plain[k].values, "diverged at record {k}");
            assert!(s.multipliers.interface.iter().flatten().all(|l| *l == [0.0; 3]));
            k += 1;
        })
        .unwrap();
        assert_eq!(k, plain.len());
    }
}

#[test]
fn multiplier_ascent_after_one_epoch() {
    let (problem, samples, specs) = setup(ProblemKind::PoissonSmooth, 2, 1);
    let mut c = config(Algorithm::A2, 1);
    c.rates = AscentRates { alpha0: 0.3, alpha_lambda: 0.1, alpha_d: 0.0 };
    let out = train(&problem, &samples, &specs, &c, 5, &Sequential).unwrap();
    for (i, s) in out.state.subdomains.iter().enumerate() {
        let net = Network::new(specs[i].clone()).unwrap();
        let batch = LocalBatch::new(&problem, &samples, i).unwrap();
        let evals = loss::evaluate(&net, &s.params, &batch).unwrap();
        let r = loss::constraint_residuals(&batch, &evals, &out.state.tilde).unwrap();
        for (l, r) in s.multipliers.interface.iter().flatten().zip(r.interface.iter().flatten()) {
            assert_eq!(l[0], 0.1 * r[0]);
        }
        for (l, r) in s.multipliers.boundary.iter().zip(&r.boundary) {
            assert_eq!(l[0], 0.3 * r[0]);
        }
    }
}

#[test]
fn algorithm3_reinitializes_interface_multipliers() {
    let (problem, samples, specs) = setup(ProblemKind::PoissonSmooth, 2, 1);
    let mut c = config(Algorithm::A3, 6);
    c.inner_epochs = 3;
    c.rates.alpha_lambda = 0.0;
    let mut seen = Vec::new();
    train_observed(&problem, &samples, &specs, &c, 5, &Sequential, |e, _, s| {
        let any = s.multipliers.interface.iter().flatten().any(|l| l[0] != 0.0);
        seen.push((e, any));
    })
    .unwrap();
    // zero through the first outer iteration, U − Ũ afterwards
    for (e, any) in seen {
        assert_eq!(any, e >= 3, "epoch {e}");
    }
}

#[test]
fn adam_state_persists_or_resets() {
    let (problem, samples, specs) = setup(ProblemKind::PoissonSmooth, 2, 1);
    let mut c = config(Algorithm::A3, 8);
    c.inner_epochs = 4;
    let out = train(&problem, &samples, &specs, &c, 1, &Sequential).unwrap();
    assert!(out.state.subdomains.iter().all(|s| s.adam.step_count == 8));
    c.reset_adam_each_outer = true;
    let out = train(&problem, &samples, &specs, &c, 1, &Sequential).unwrap();
    assert!(out.state.subdomains.iter().all(|s| s.adam.step_count == 4));
}

#[test]
fn training_is_deterministic() {
    let (problem, samples, specs) = setup(ProblemKind::StokesInterface, 1, 1);
    let mut c = config(Algorithm::A3, 20);
    c.inner_epochs = 5;
    c.trace_stride = 5;
    c.checkpoints = vec![10, 20];
    let a = train(&problem, &samples, &specs, &c, 8, &Sequential).unwrap();
    let b = train(&problem, &samples, &specs, &c, 8, &Sequential).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.trace.len(), 5);
    let other = train(&problem, &samples, &specs, &c, 9, &Sequential).unwrap();
    assert_ne!(a.state.subdomains[0].params, other.state.subdomains[0].params);
}

#[test]
fn single_subdomain_has_no_interface_terms() {
    let (problem, samples, specs) = setup(ProblemKind::PoissonSmooth, 1, 1);
    let out = train(&problem, &samples, &specs, &config(Algorithm::A2, 3), 1, &Sequential).unwrap();
    let cp = out.checkpoints.last().unwrap();
    assert_eq!(cp.losses[0].f_u, 0.0);
    assert_eq!(cp.losses[0].f_n, 0.0);
    assert!(out.state.tilde.interfaces.is_empty());
    assert_eq!(out.state.communications, 3);
}

#[test]
fn non_finite_loss_aborts_with_diagnostic() {
    let (problem, samples, specs) = setup(ProblemKind::PoissonSmooth, 2, 1);
    let mut c = config(Algorithm::A1, 10);
    c.adam = AdamConfig { lr: 1e300, ..AdamConfig::default() };
    let out = train(&problem, &samples, &specs, &c, 1, &Sequential).unwrap();
    let abort = out.abort.expect("aborted");
    assert_eq!(abort.epoch, 1);
    assert!(abort.reason.contains("non-finite"));
    assert!(out.state.epoch < 10);
}

#[test]
fn invalid_configs_are_rejected() {
    let (problem, samples, specs) = setup(ProblemKind::PoissonSmooth, 2, 1);
    let mut c = config(Algorithm::A3, 10);
    c.inner_epochs = 3;
    assert!(matches!(train(&problem, &samples, &specs, &c, 1, &Sequential), Err(TrainError::Config(_))));
    let mut c = config(Algorithm::A1, 10);
    c.checkpoints = vec![20];
    assert!(matches!(train(&problem, &samples, &specs, &c, 1, &Sequential), Err(TrainError::Config(_))));
    assert!(matches!(train(&problem, &samples, &specs[..1], &config(Algorithm::A1, 1), 1, &Sequential), Err(TrainError::SpecCount { .. })));
}

fn message(interface: usize, sender: usize, epoch: usize, v: f64, q: f64, n: usize) -> TraceMessage {
    TraceMessage { interface, sender, epoch, trace: Trace { values: vec![[v, 0.0, 0.0]; n], fluxes: vec![[q, 0.0, 0.0]; n] } }
}

#[test]
fn synchronize_contract() {
    let problem = Problem::new(ProblemKind::PoissonSmooth, PartitionModel::grid(ProblemKind::PoissonSmooth.domain(), 2, 2).unwrap()).unwrap();
    let n = 3;
    let jumps = vec![vec![Jump::default(); n]; 4];
    let mut msgs = Vec::new();
    for (k, f) in problem.partition.interfaces().iter().enumerate() {
        msgs.push(message(k, f.hi, 7, 1.5, -2.0, n));
        msgs.push(message(k, f.lo, 7, 1.5, -2.0, n));
    }
    let t = synchronize(&problem, &jumps, &msgs, 7).unwrap();
    for i in &t.interfaces {
        assert!(i.value_hi.iter().chain(&i.value_lo).all(|v| v[0] == 1.5));
        assert!(i.flux_hi.iter().chain(&i.flux_lo).all(|v| v[0] == -2.0));
    }
    let mut shuffled = msgs.clone();
    shuffled.reverse();
    shuffled.swap(0, 3);
    assert_eq!(synchronize(&problem, &jumps, &shuffled, 7).unwrap(), t);

    let mut stale = msgs.clone();
    stale[2].epoch = 6;
    assert!(matches!(synchronize(&problem, &jumps, &stale, 7), Err(TrainError::StaleMessage { .. })));
    assert!(matches!(synchronize(&problem, &jumps, &msgs[1..], 7), Err(TrainError::MissingMessage { .. })));
    let mut dup = msgs.clone();
    dup.push(msgs[0].clone());
    assert!(matches!(synchronize(&problem, &jumps, &dup, 7), Err(TrainError::DuplicateMessage { .. })));
}
