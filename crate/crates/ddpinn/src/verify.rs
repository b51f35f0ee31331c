//! Oracle suite behind `ddpinn verify`.
//!
//! Every check reports the worst observed value next to its tolerance. The
//! PDE check takes the forcing as a parameter so that a corrupted forcing can
//! be fed in as a negative control.

use std::fmt;
use std::time::Instant;

use anyhow::Context;
use serde::Serialize;

use ddpinn_core::geometry::{build_samples, latin_hypercube, InterfaceGeometry, SamplePlan};
use ddpinn_core::loss::{compute_tilde, Term, Trace};
use ddpinn_core::optim::AscentRates;
use ddpinn_core::oracle::{derivative_case, worst_input_derivative_error, GradientInstance};
use ddpinn_core::problems::{exact_jet, PdeForm, Problem, ProblemKind};
use ddpinn_core::train::{train_observed, Algorithm, Sequential, TrainConfig};
use ddpinn_core::Point;

use crate::config::{PartitionRecipe, RunConfig};
use crate::run::run;

pub const GRADIENT_TOL: f64 = 1e-6;
pub const DERIVATIVE_TOL: f64 = 1e-5;
pub const EXACT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub tolerance: f64,
    pub observed: f64,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    /// Passes when `observed <= tolerance`.
    pub fn at_most(name: impl Into<String>, observed: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        Self { name: name.into(), tolerance, observed, passed: observed <= tolerance, detail: detail.into() }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status} {:<36} observed {:<12.3e} tolerance {:.1e}", self.name, self.observed, self.tolerance)?;
        if !self.detail.is_empty() {
            write!(f, "  {}", self.detail)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Report {
    pub checks: Vec<Check>,
    pub seconds: f64,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        let failed = self.failures().count();
        write!(f, "{} checks, {failed} failed, {:.1}s", self.checks.len(), self.seconds)
    }
}

pub type Forcing<'a> = &'a dyn Fn(ProblemKind, Point) -> [f64; 2];

pub const TERM_NAMES: [&str; 8] = ["L_f", "L_div", "L_g", "F_u", "F_n", "Lambda_0", "Lambda_i", "Lambda_div"];

/// Parameter gradients of every loss term against double-double central
/// differences. `stokes` instances exercise all eight terms, `scalar` ones
/// (per scalar benchmark) the six that apply there.
pub fn gradient_checks(stokes: u64, scalar: u64) -> anyhow::Result<Vec<Check>> {
    let mut worst = [0.0f64; 8];
    let mut count = [0usize; 8];
    let mut run_kind = |kind: ProblemKind, n: u64| -> anyhow::Result<()> {
        for seed in 0..n {
            let inst = GradientInstance::random(kind, seed)?;
            let errors = inst.worst_gradient_errors()?;
            for (k, term) in Term::ALL.into_iter().enumerate() {
                let applies = kind.form() != PdeForm::Poisson || !matches!(term, Term::Divergence | Term::LagrangeDivergence);
                let on_interface = matches!(term, Term::InterfaceValue | Term::InterfaceFlux | Term::LagrangeInterface);
                if applies && (!on_interface || !inst.batch.sides.is_empty()) {
                    worst[k] = worst[k].max(errors[k]);
                    count[k] += 1;
                }
            }
        }
        Ok(())
    };
    run_kind(ProblemKind::StokesInterface, stokes)?;
    for kind in [ProblemKind::PoissonSmooth, ProblemKind::DiscCoeff, ProblemKind::PoissonInterface] {
        run_kind(kind, scalar)?;
    }
    Ok((0..8)
        .map(|k| Check::at_most(format!("gradient {}", TERM_NAMES[k]), worst[k], GRADIENT_TOL, format!("{} instances", count[k])))
        .collect())
}

/// Input gradients and Laplacians of random networks against central differences.
pub fn derivative_check(cases: u64) -> anyhow::Result<Check> {
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let (net, params, x) = derivative_case(case)?;
        worst = worst.max(worst_input_derivative_error(&net, &params, x)?);
    }
    Ok(Check::at_most("network input derivatives", worst, DERIVATIVE_TOL, format!("{cases} networks")))
}

/// `n` points of solution region `region`, by rejection from Latin hypercubes.
pub fn points_in_region(kind: ProblemKind, region: usize, n: usize, seed: u64) -> anyhow::Result<Vec<Point>> {
    let d = kind.domain();
    let mut out = Vec::with_capacity(n);
    let mut s = seed;
    while out.len() < n {
        let pts = latin_hypercube(4 * n, &[(d.x[0], d.x[1]), (d.y[0], d.y[1])], s)?;
        out.extend(pts.iter().map(|p| [p[0], p[1]]).filter(|&x| kind.region(x) == region));
        s += 1;
    }
    out.truncate(n);
    Ok(out)
}

/// `n` points on interface `k`.
pub fn points_on_interface(problem: &Problem, k: usize, n: usize, seed: u64) -> anyhow::Result<Vec<Point>> {
    let f = problem.partition.interfaces()[k];
    let ts = latin_hypercube(n, &[(0.0, 1.0)], seed)?;
    Ok(ts
        .iter()
        .map(|t| match f.geometry {
            InterfaceGeometry::Segment { a, b } => [a[0] + t[0] * (b[0] - a[0]), a[1] + t[0] * (b[1] - a[1])],
            InterfaceGeometry::Circle { center, radius } => {
                let th = std::f64::consts::TAU * t[0];
                [center[0] + radius * th.cos(), center[1] + radius * th.sin()]
            }
        })
        .collect())
}

/// Worst PDE residual of the exact solution under `forcing`, `n` points per region.
pub fn residual_check(kind: ProblemKind, n: usize, forcing: Forcing<'_>) -> anyhow::Result<Check> {
    let mut worst: f64 = 0.0;
    for region in 0..kind.region_count() {
        for x in points_in_region(kind, region, n, 11 + region as u64)? {
            let u = exact_jet(kind, region, x);
            let f = forcing(kind, x);
            match kind.form() {
                PdeForm::Poisson => worst = worst.max((-kind.coefficient(x) * u[0].l - f[0]).abs()),
                PdeForm::Stokes { mu } => {
                    for k in 0..2 {
                        worst = worst.max((-mu * u[k].l + u[2].g[k] - f[k]).abs());
                    }
                    worst = worst.max((u[0].g[0] + u[1].g[1]).abs());
                }
            }
        }
    }
    Ok(Check::at_most(format!("pde residual {}", kind.name()), worst, EXACT_TOL, format!("{n} points per region")))
}

/// Jump data against two-sided traces of the exact solution.
pub fn jump_check(kind: ProblemKind, n: usize) -> anyhow::Result<Check> {
    let problem = Problem::native(kind);
    let mut worst: f64 = 0.0;
    let mut points = 0;
    for (k, f) in problem.partition.interfaces().iter().enumerate() {
        let (clo, chi) = (problem.flux_coefficients(f.lo), problem.flux_coefficients(f.hi));
        for x in points_on_interface(&problem, k, n, 21 + k as u64)? {
            let nrm = problem.partition.canonical_normal(k, x)?;
            let (jlo, jhi) = (exact_jet(kind, kind.region(offset(x, nrm, -1e-9)), x), exact_jet(kind, kind.region(offset(x, nrm, 1e-9)), x));
            let jump = problem.jump(k, x)?;
            for fld in 0..kind.field_count() {
                let p = jhi[fld].v - jlo[fld].v;
                let q = chi[fld] * jhi[fld].dn(nrm) - clo[fld] * jlo[fld].dn(nrm);
                worst = worst.max((p - jump.p[fld]).abs()).max((q - jump.q[fld]).abs());
            }
            points += 1;
        }
    }
    Ok(Check::at_most(format!("interface jumps {}", kind.name()), worst, EXACT_TOL, format!("{points} points")))
}

// The canonical normal points out of the higher-index subdomain, so a step
// along it from the interface lands on the lower-index side.
fn offset(x: Point, n: Point, t: f64) -> Point {
    [x[0] - t * n[0], x[1] - t * n[1]]
}

/// Boundary data against the exact solution on the outer edges.
pub fn boundary_check(kind: ProblemKind, n: usize) -> anyhow::Result<Check> {
    let mut worst: f64 = 0.0;
    let per_edge = n.div_ceil(4);
    for (a, b) in kind.domain().edges() {
        for t in latin_hypercube(per_edge, &[(0.0, 1.0)], 4)? {
            let x = [a[0] + t[0] * (b[0] - a[0]), a[1] + t[0] * (b[1] - a[1])];
            let (g, u) = (kind.boundary(x), kind.exact(x));
            for f in 0..kind.boundary_field_count() {
                worst = worst.max((g[f] - u[f]).abs());
            }
        }
    }
    Ok(Check::at_most(format!("boundary data {}", kind.name()), worst, EXACT_TOL, format!("{} points", 4 * per_edge)))
}

/// Tilde values built from exact traces reproduce those traces, and in
/// general differ by the jump and keep the trace average.
pub fn tilde_check(kind: ProblemKind, n: usize) -> anyhow::Result<Check> {
    let problem = Problem::native(kind);
    let mut worst: f64 = 0.0;
    for (k, f) in problem.partition.interfaces().iter().enumerate() {
        let pts = points_on_interface(&problem, k, n, 31 + k as u64)?;
        let jumps = pts.iter().map(|&x| problem.jump(k, x)).collect::<Result<Vec<_>, _>>()?;
        let trace = |sub: usize, side: f64| -> anyhow::Result<Trace> {
            let c = problem.flux_coefficients(sub);
            let mut t = Trace::default();
            for &x in &pts {
                let nrm = problem.partition.canonical_normal(k, x)?;
                let j = exact_jet(kind, kind.region(offset(x, nrm, side * 1e-9)), x);
                t.values.push([j[0].v, j[1].v, j[2].v]);
                t.fluxes.push([c[0] * j[0].dn(nrm), c[1] * j[1].dn(nrm), c[2] * j[2].dn(nrm)]);
            }
            Ok(t)
        };
        let (hi, lo) = (trace(f.hi, 1.0)?, trace(f.lo, -1.0)?);
        let t = compute_tilde(f.hi, f.lo, &hi, &lo, &jumps)?;
        for p in 0..pts.len() {
            for fld in 0..kind.field_count() {
                let scale = 1.0 + hi.values[p][fld].abs().max(hi.fluxes[p][fld].abs());
                let errs = [
                    t.value_hi[p][fld] - hi.values[p][fld],
                    t.value_lo[p][fld] - lo.values[p][fld],
                    t.flux_hi[p][fld] - hi.fluxes[p][fld],
                    t.flux_lo[p][fld] - lo.fluxes[p][fld],
                    (t.value_hi[p][fld] - t.value_lo[p][fld]) - jumps[p].p[fld],
                    (t.flux_hi[p][fld] - t.flux_lo[p][fld]) - jumps[p].q[fld],
                    (t.value_hi[p][fld] + t.value_lo[p][fld]) - (hi.values[p][fld] + lo.values[p][fld]),
                ];
                for e in errs {
                    worst = worst.max(e.abs() / scale);
                }
            }
        }
    }
    // exact traces only satisfy the jump to the accuracy of the closed forms
    Ok(Check::at_most(format!("tilde reconstruction {}", kind.name()), worst, EXACT_TOL, format!("{n} points per interface")))
}

/// Small but complete run configuration for the training checks.
pub fn tiny_config(kind: ProblemKind, algorithm: Algorithm, epochs: usize) -> RunConfig {
    let mut c = RunConfig::new(kind, algorithm, epochs);
    c.widths = Some(vec![8, 8]);
    if kind == ProblemKind::PoissonSmooth {
        c.partition = PartitionRecipe::Grid { nx: 2, ny: 2 };
    }
    c.samples = Some(SamplePlan {
        interior: 200,
        boundary_per_edge: 10,
        interface_per_line: if kind == ProblemKind::PoissonInterface { vec![12, 20] } else { vec![12] },
    });
    c.seeds = vec![0, 1];
    c.grid_points = 21;
    c.trace_stride = 5;
    c
}

/// Runs `config` twice sequentially and once with `workers` threads and
/// compares the numerical payloads byte for byte.
pub fn determinism_check(config: &RunConfig, workers: usize) -> anyhow::Result<Check> {
    let sequential = RunConfig { workers: 1, ..config.clone() };
    let a = run(&sequential)?.payload_json();
    let b = run(&sequential)?.payload_json();
    let c = run(&RunConfig { workers, ..config.clone() })?.payload_json();
    let differing = [&b, &c].iter().filter(|p| p.as_str() != a.as_str()).count();
    Ok(Check::at_most(
        format!("determinism {} {}", config.problem, config.algorithm.name()),
        differing as f64,
        0.0,
        format!("{} payload bytes, {workers} workers", a.len()),
    ))
}

/// Parameter trajectories of A2 with zero ascent rates against A1; `observed`
/// counts epochs whose parameters differ in any bit.
pub fn zero_rate_check(kind: ProblemKind, epochs: usize) -> anyhow::Result<Check> {
    let config = tiny_config(kind, Algorithm::A1, epochs);
    let problem = config.build_problem()?;
    let specs = config.network_specs(&problem)?;
    let samples = build_samples(&problem.partition, &config.sample_plan(&problem), 3)?;
    let plain_config = TrainConfig { checkpoints: vec![epochs], ..TrainConfig::new(Algorithm::A1, epochs) };
    let mut plain = Vec::new();
    train_observed(&problem, &samples, &specs, &plain_config, 3, &Sequential, |_, _, s| plain.push(s.params.values.clone()))?;
    let zero = TrainConfig { algorithm: Algorithm::A2, rates: AscentRates::default(), ..plain_config };
    let mut k = 0;
    let mut differing = 0usize;
    let mut last = usize::MAX;
    train_observed(&problem, &samples, &specs, &zero, 3, &Sequential, |e, _, s| {
        let same = plain.get(k).is_some_and(|p| p.iter().zip(&s.params.values).all(|(a, b)| a.to_bits() == b.to_bits()));
        if !same && e != last {
            differing += 1;
            last = e;
        }
        k += 1;
    })?;
    if k != plain.len() {
        differing += 1;
    }
    Ok(Check::at_most(format!("zero-rate reduction {}", kind.name()), differing as f64, 0.0, format!("{epochs} epochs, {k} updates")))
}

/// How much of the suite to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scope {
    pub stokes_gradient_instances: u64,
    pub scalar_gradient_instances: u64,
    pub derivative_cases: u64,
    pub exact_points: usize,
    pub zero_rate_epochs: usize,
    pub workers: usize,
}

impl Default for Scope {
    fn default() -> Self {
        Self {
            stokes_gradient_instances: 20,
            scalar_gradient_instances: 5,
            derivative_cases: 100,
            exact_points: 1000,
            zero_rate_epochs: 1000,
            workers: 4,
        }
    }
}

pub fn verify(scope: &Scope) -> anyhow::Result<Report> {
    verify_with(scope, &|kind, x| kind.forcing(x))
}

/// The suite with a substitute forcing for the PDE-consistency checks.
pub fn verify_with(scope: &Scope, forcing: Forcing<'_>) -> anyhow::Result<Report> {
    let start = Instant::now();
    let mut checks = gradient_checks(scope.stokes_gradient_instances, scope.scalar_gradient_instances).context("gradient oracle")?;
    checks.push(derivative_check(scope.derivative_cases)?);
    for kind in ProblemKind::ALL {
        checks.push(residual_check(kind, scope.exact_points, forcing)?);
        checks.push(jump_check(kind, scope.exact_points)?);
        checks.push(boundary_check(kind, scope.exact_points)?);
        checks.push(tilde_check(kind, scope.exact_points.min(200))?);
    }
    let mut a3 = tiny_config(ProblemKind::PoissonSmooth, Algorithm::A3, 40);
    a3.inner_epochs = Some(10);
    checks.push(determinism_check(&a3, scope.workers)?);
    checks.push(determinism_check(&tiny_config(ProblemKind::StokesInterface, Algorithm::A2, 4), scope.workers)?);
    checks.push(zero_rate_check(ProblemKind::PoissonSmooth, scope.zero_rate_epochs)?);
    checks.push(zero_rate_check(ProblemKind::StokesInterface, scope.zero_rate_epochs.min(50))?);
    Ok(Report { checks, seconds: start.elapsed().as_secs_f64() })
}
