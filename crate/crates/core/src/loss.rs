//! Localized loss terms, tilde interface values and Lagrangian terms.
//!
//! A subdomain evaluates its network on three batches: interior points with
//! Laplacians, boundary points with values and interface points with
//! gradients. Every term can also write its derivative with respect to those
//! network outputs into a [`LocalSeeds`], which the network turns into a
//! parameter gradient.
//!
//! Quadratic terms are means over their point sets, Lagrangian terms are
//! plain sums.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::nn::{points_view, BatchEval, BatchSeed, DerivOrder, Network, NnError, Params};
use crate::problems::{Fields, Jump, PdeForm, Problem, ProblemError};
use crate::geometry::SampleSet;
use crate::Point;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LossError {
    #[error("length mismatch in {what}: expected {expected}, got {got}")]
    LengthMismatch { what: &'static str, expected: usize, got: usize },
    #[error("subdomain {0} has no interior samples")]
    EmptyBatch(usize),
    #[error("no tilde values for interface {interface} (neighbour {neighbor})")]
    MissingTilde { interface: usize, neighbor: usize },
    #[error(transparent)]
    Network(#[from] NnError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

/// One interface as seen from a subdomain.
#[derive(Debug, Clone, PartialEq)]
pub struct InterfaceSide {
    pub interface: usize,
    pub neighbor: usize,
    /// Whether this subdomain is the higher-index side (takes `+½p`).
    pub is_hi: bool,
    /// Range of this interface inside `LocalBatch::interface_points`.
    pub offset: usize,
    pub len: usize,
    pub normals: Vec<Point>,
    /// Flux coefficient per field on this side.
    pub flux_coefficients: Fields,
}

/// Everything one subdomain needs to assemble its losses.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalBatch {
    pub subdomain: usize,
    pub form: PdeForm,
    pub fields: usize,
    pub boundary_fields: usize,
    pub interior: Vec<Point>,
    pub forcing: Vec<[f64; 2]>,
    /// Diffusion coefficient at each interior point.
    pub coefficient: Vec<f64>,
    pub boundary: Vec<Point>,
    pub boundary_data: Vec<Fields>,
    /// Interfaces ordered by neighbour index.
    pub sides: Vec<InterfaceSide>,
    pub interface_points: Vec<Point>,
}

impl LocalBatch {
    pub fn new(problem: &Problem, samples: &SampleSet, subdomain: usize) -> Result<Self, LossError> {
        let kind = problem.kind;
        let n_sub = problem.n_subdomains();
        for (what, got) in [
            ("interior sample groups", samples.interior.len()),
            ("boundary sample groups", samples.boundary.len()),
        ] {
            if got != n_sub {
                return Err(LossError::LengthMismatch { what, expected: n_sub, got });
            }
        }
        let n_if = problem.partition.interfaces().len();
        if samples.interface.len() != n_if {
            return Err(LossError::LengthMismatch { what: "interface sample groups", expected: n_if, got: samples.interface.len() });
        }
        let interior = samples.interior[subdomain].clone();
        if interior.is_empty() {
            return Err(LossError::EmptyBatch(subdomain));
        }
        let forcing = interior.iter().map(|&x| kind.forcing(x)).collect();
        let coefficient = interior.iter().map(|&x| kind.coefficient(x)).collect();
        let boundary = samples.boundary[subdomain].clone();
        let boundary_data = boundary.iter().map(|&x| kind.boundary(x)).collect();

        let mut sides = Vec::new();
        let mut interface_points = Vec::new();
        for k in problem.partition.neighbors(subdomain) {
            let f = problem.partition.interfaces()[k];
            let pts = &samples.interface[k];
            let normals = pts
                .iter()
                .map(|&x| problem.partition.canonical_normal(k, x))
                .collect::<Result<Vec<_>, _>>()
                .map_err(ProblemError::from)?;
            sides.push(InterfaceSide {
                interface: k,
                neighbor: f.other(subdomain).expect("neighbour interface"),
                is_hi: f.hi == subdomain,
                offset: interface_points.len(),
                len: pts.len(),
                normals,
                flux_coefficients: problem.flux_coefficients(subdomain),
            });
            interface_points.extend_from_slice(pts);
        }

        Ok(Self {
            subdomain,
            form: kind.form(),
            fields: kind.field_count(),
            boundary_fields: kind.boundary_field_count(),
            interior,
            forcing,
            coefficient,
            boundary,
            boundary_data,
            sides,
            interface_points,
        })
    }

    pub fn is_stokes(&self) -> bool {
        matches!(self.form, PdeForm::Stokes { .. })
    }
}

/// Jump data at every interface sample, per interface.
pub fn interface_jumps(problem: &Problem, samples: &SampleSet) -> Result<Vec<Vec<Jump>>, LossError> {
    samples
        .interface
        .iter()
        .enumerate()
        .map(|(k, pts)| pts.iter().map(|&x| problem.jump(k, x)).collect::<Result<Vec<_>, _>>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(LossError::from)
}

/// Network outputs of one subdomain on its three batches.
#[derive(Debug, Clone)]
pub struct LocalEvals {
    pub interior: BatchEval,
    pub boundary: BatchEval,
    pub interface: BatchEval,
}

/// Loss derivatives with respect to the outputs in [`LocalEvals`].
#[derive(Debug, Clone)]
pub struct LocalSeeds {
    pub interior: BatchSeed,
    pub boundary: BatchSeed,
    pub interface: BatchSeed,
}

impl LocalEvals {
    pub fn zero_seeds(&self) -> LocalSeeds {
        LocalSeeds {
            interior: self.interior.zero_seed(),
            boundary: self.boundary.zero_seed(),
            interface: self.interface.zero_seed(),
        }
    }
}

pub fn evaluate(net: &Network, params: &Params, batch: &LocalBatch) -> Result<LocalEvals, LossError> {
    Ok(LocalEvals {
        interior: net.eval_batch(params, points_view(&batch.interior), DerivOrder::Laplacian)?,
        boundary: net.eval_batch(params, points_view(&batch.boundary), DerivOrder::Value)?,
        interface: net.eval_batch(params, points_view(&batch.interface_points), DerivOrder::Gradient)?,
    })
}

/// Adds the parameter gradient of the seeded loss to `grad`.
pub fn backward(net: &Network, params: &Params, evals: &LocalEvals, seeds: &LocalSeeds, grad: &mut [f64]) -> Result<(), LossError> {
    net.backward(params, &evals.interior, &seeds.interior, grad)?;
    net.backward(params, &evals.boundary, &seeds.boundary, grad)?;
    net.backward(params, &evals.interface, &seeds.interface, grad)?;
    Ok(())
}

/// Values and fluxes of one subdomain on one interface.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trace {
    pub values: Vec<Fields>,
    /// Coefficient-weighted derivatives along the canonical normal.
    pub fluxes: Vec<Fields>,
}

/// Traces of every interface side of the batch, in `sides` order.
pub fn traces(batch: &LocalBatch, evals: &LocalEvals) -> Result<Vec<Trace>, LossError> {
    let ev = &evals.interface;
    let mut out = Vec::with_capacity(batch.sides.len());
    for side in &batch.sides {
        let mut t = Trace { values: vec![[0.0; 3]; side.len], fluxes: vec![[0.0; 3]; side.len] };
        for f in 0..batch.fields {
            let (u, gx, gy) = (ev.value(f), ev.gradient(f, 0)?, ev.gradient(f, 1)?);
            let c = side.flux_coefficients[f];
            for p in 0..side.len {
                let n = side.normals[p];
                let q = side.offset + p;
                t.values[p][f] = u[q];
                t.fluxes[p][f] = c * (n[0] * gx[q] + n[1] * gy[q]);
            }
        }
        out.push(t);
    }
    Ok(out)
}

/// Tilde values of one interface for both sides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterfaceTilde {
    pub hi: usize,
    pub lo: usize,
    /// `Ũ_{hi,lo} = ½(U_hi + U_lo) + ½p`.
    pub value_hi: Vec<Fields>,
    /// `Ũ_{lo,hi} = ½(U_hi + U_lo) − ½p`.
    pub value_lo: Vec<Fields>,
    pub flux_hi: Vec<Fields>,
    pub flux_lo: Vec<Fields>,
}

impl InterfaceTilde {
    /// `(Ũ, Ũ_n)` targets seen by subdomain `i`.
    pub fn side(&self, i: usize) -> Option<(&[Fields], &[Fields])> {
        if i == self.hi {
            Some((&self.value_hi, &self.flux_hi))
        } else if i == self.lo {
            Some((&self.value_lo, &self.flux_lo))
        } else {
            None
        }
    }

    pub fn len(&self) -> usize {
        self.value_hi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value_hi.is_empty()
    }
}

/// Snapshot of all interface targets, indexed like the partition interfaces.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TildeValues {
    pub interfaces: Vec<InterfaceTilde>,
}

/// Averages the traces of both sides and splits the jumps between them.
pub fn compute_tilde(hi: usize, lo: usize, trace_hi: &Trace, trace_lo: &Trace, jumps: &[Jump]) -> Result<InterfaceTilde, LossError> {
    let n = jumps.len();
    for (what, got) in [
        ("hi values", trace_hi.values.len()),
        ("hi fluxes", trace_hi.fluxes.len()),
        ("lo values", trace_lo.values.len()),
        ("lo fluxes", trace_lo.fluxes.len()),
    ] {
        if got != n {
            return Err(LossError::LengthMismatch { what, expected: n, got });
        }
    }
    let mut t = InterfaceTilde {
        hi,
        lo,
        value_hi: vec![[0.0; 3]; n],
        value_lo: vec![[0.0; 3]; n],
        flux_hi: vec![[0.0; 3]; n],
        flux_lo: vec![[0.0; 3]; n],
    };
    for p in 0..n {
        for f in 0..3 {
            let avg = 0.5 * (trace_hi.values[p][f] + trace_lo.values[p][f]);
            let half = 0.5 * jumps[p].p[f];
            t.value_hi[p][f] = avg + half;
            t.value_lo[p][f] = avg - half;
            let avg = 0.5 * (trace_hi.fluxes[p][f] + trace_lo.fluxes[p][f]);
            let half = 0.5 * jumps[p].q[f];
            t.flux_hi[p][f] = avg + half;
            t.flux_lo[p][f] = avg - half;
        }
    }
    Ok(t)
}

/// Lagrange multipliers of one subdomain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplierState {
    /// `λ_i0` per boundary point and constrained field.
    pub boundary: Vec<Fields>,
    /// `λ_ij` per interface side (batch order), point and field.
    pub interface: Vec<Vec<Fields>>,
    /// `λ_div,i` per interior point; empty when the term is not used.
    pub divergence: Vec<f64>,
}

impl MultiplierState {
    /// All-zero multipliers aligned with `batch`.
    pub fn zeros(batch: &LocalBatch, with_divergence: bool) -> Self {
        Self {
            boundary: vec![[0.0; 3]; batch.boundary.len()],
            interface: batch.sides.iter().map(|s| vec![[0.0; 3]; s.len]).collect(),
            divergence: if with_divergence && batch.is_stokes() { vec![0.0; batch.interior.len()] } else { Vec::new() },
        }
    }

    fn check(&self, batch: &LocalBatch) -> Result<(), LossError> {
        let mismatch = |what, expected, got| Err(LossError::LengthMismatch { what, expected, got });
        if self.boundary.len() != batch.boundary.len() {
            return mismatch("boundary multipliers", batch.boundary.len(), self.boundary.len());
        }
        if self.interface.len() != batch.sides.len() {
            return mismatch("interface multiplier groups", batch.sides.len(), self.interface.len());
        }
        for (l, s) in self.interface.iter().zip(&batch.sides) {
            if l.len() != s.len {
                return mismatch("interface multipliers", s.len, l.len());
            }
        }
        if !self.divergence.is_empty() && self.divergence.len() != batch.interior.len() {
            return mismatch("divergence multipliers", batch.interior.len(), self.divergence.len());
        }
        Ok(())
    }
}

/// Constraint residuals that drive the multiplier updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// `U_i − g` per boundary point.
    pub boundary: Vec<Fields>,
    /// `U_i − Ũ_ij` per interface side and point.
    pub interface: Vec<Vec<Fields>>,
    /// `∇·U_i` per interior point (Stokes), otherwise empty.
    pub divergence: Vec<f64>,
}

fn side_targets<'a>(batch: &LocalBatch, tilde: &'a TildeValues, side: &InterfaceSide) -> Result<(&'a [Fields], &'a [Fields]), LossError> {
    let missing = LossError::MissingTilde { interface: side.interface, neighbor: side.neighbor };
    let t = tilde.interfaces.get(side.interface).ok_or(missing.clone())?;
    let (v, q) = t.side(batch.subdomain).ok_or(missing.clone())?;
    if v.len() != side.len || q.len() != side.len {
        return Err(missing);
    }
    Ok((v, q))
}

pub fn constraint_residuals(batch: &LocalBatch, evals: &LocalEvals, tilde: &TildeValues) -> Result<Residuals, LossError> {
    let mut boundary = vec![[0.0; 3]; batch.boundary.len()];
    for f in 0..batch.boundary_fields {
        let u = evals.boundary.value(f);
        for (p, r) in boundary.iter_mut().enumerate() {
            r[f] = u[p] - batch.boundary_data[p][f];
        }
    }
    let mut interface = Vec::with_capacity(batch.sides.len());
    for side in &batch.sides {
        let (target, _) = side_targets(batch, tilde, side)?;
        let mut r = vec![[0.0; 3]; side.len];
        for f in 0..batch.fields {
            let u = evals.interface.value(f);
            for p in 0..side.len {
                r[p][f] = u[side.offset + p] - target[p][f];
            }
        }
        interface.push(r);
    }
    let divergence = if batch.is_stokes() {
        let (ux, vy) = (evals.interior.gradient(0, 0)?, evals.interior.gradient(1, 1)?);
        (0..batch.interior.len()).map(|p| ux[p] + vy[p]).collect()
    } else {
        Vec::new()
    };
    Ok(Residuals { boundary, interface, divergence })
}

/// The individual loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    /// `L_f`
    Residual,
    /// `L_div` (Stokes)
    Divergence,
    /// `L_g`
    Boundary,
    /// `F_u`
    InterfaceValue,
    /// `F_n`
    InterfaceFlux,
    /// `Λ_i0`
    LagrangeBoundary,
    /// `Λ_i`
    LagrangeInterface,
    /// `Λ_div` (Stokes)
    LagrangeDivergence,
}

impl Term {
    pub const ALL: [Term; 8] = [
        Term::Residual,
        Term::Divergence,
        Term::Boundary,
        Term::InterfaceValue,
        Term::InterfaceFlux,
        Term::LagrangeBoundary,
        Term::LagrangeInterface,
        Term::LagrangeDivergence,
    ];

    pub fn is_lagrangian(self) -> bool {
        matches!(self, Term::LagrangeBoundary | Term::LagrangeInterface | Term::LagrangeDivergence)
    }
}

/// Borrowed inputs of the loss of one subdomain.
#[derive(Debug, Clone, Copy)]
pub struct LossInputs<'a> {
    pub batch: &'a LocalBatch,
    pub evals: &'a LocalEvals,
    pub tilde: &'a TildeValues,
    pub multipliers: &'a MultiplierState,
}

/// Value of one term; with `seeds`, also adds `weight ×` its output derivative.
pub fn term_value(term: Term, inputs: LossInputs<'_>, seeds: Option<(&mut LocalSeeds, f64)>) -> Result<f64, LossError> {
    let LossInputs { batch, evals, tilde, multipliers } = inputs;
    match term {
        Term::Residual => residual_loss(batch, evals, seeds),
        Term::Divergence => divergence_loss(batch, evals, seeds),
        Term::Boundary => boundary_loss(batch, evals, seeds),
        Term::InterfaceValue => interface_value_loss(batch, evals, tilde, seeds),
        Term::InterfaceFlux => interface_flux_loss(batch, evals, tilde, seeds),
        Term::LagrangeBoundary => {
            multipliers.check(batch)?;
            lagrange_boundary(batch, evals, multipliers, seeds)
        }
        Term::LagrangeInterface => {
            multipliers.check(batch)?;
            lagrange_interface(batch, evals, tilde, multipliers, seeds)
        }
        Term::LagrangeDivergence => {
            multipliers.check(batch)?;
            lagrange_divergence(batch, evals, multipliers, seeds)
        }
    }
}

/// `L_f`: mean squared PDE residual over the interior samples.
pub fn residual_loss(batch: &LocalBatch, evals: &LocalEvals, mut seeds: Option<(&mut LocalSeeds, f64)>) -> Result<f64, LossError> {
    let n = batch.interior.len();
    if n == 0 {
        return Err(LossError::EmptyBatch(batch.subdomain));
    }
    let ev = &evals.interior;
    let inv = 1.0 / n as f64;
    let mut sum = 0.0;
    match batch.form {
        PdeForm::Poisson => {
            let lap = ev.laplacian(0)?;
            let r: Vec<f64> = (0..n).map(|p| -batch.coefficient[p] * lap[p] - batch.forcing[p][0]).collect();
            sum += r.iter().map(|r| r * r).sum::<f64>();
            if let Some((s, w)) = seeds.as_mut() {
                let d = s.interior.laplacian_mut(0)?;
                for p in 0..n {
                    d[p] += *w * 2.0 * r[p] * (-batch.coefficient[p]) * inv;
                }
            }
        }
        PdeForm::Stokes { mu } => {
            for k in 0..2 {
                let lap = ev.laplacian(k)?;
                let dp = ev.gradient(2, k)?;
                let r: Vec<f64> = (0..n).map(|p| -mu * lap[p] + dp[p] - batch.forcing[p][k]).collect();
                sum += r.iter().map(|r| r * r).sum::<f64>();
                if let Some((s, w)) = seeds.as_mut() {
                    let d = s.interior.laplacian_mut(k)?;
                    for p in 0..n {
                        d[p] += *w * 2.0 * r[p] * (-mu) * inv;
                    }
                    let d = s.interior.gradient_mut(2, k)?;
                    for p in 0..n {
                        d[p] += *w * 2.0 * r[p] * inv;
                    }
                }
            }
        }
    }
    Ok(sum * inv)
}

/// `L_div`: mean squared velocity divergence; zero for scalar problems.
pub fn divergence_loss(batch: &LocalBatch, evals: &LocalEvals, seeds: Option<(&mut LocalSeeds, f64)>) -> Result<f64, LossError> {
    if !batch.is_stokes() {
        return Ok(0.0);
    }
    let n = batch.interior.len();
    if n == 0 {
        return Err(LossError::EmptyBatch(batch.subdomain));
    }
    let inv = 1.0 / n as f64;
    let (ux, vy) = (evals.interior.gradient(0, 0)?, evals.interior.gradient(1, 1)?);
    let div: Vec<f64> = (0..n).map(|p| ux[p] + vy[p]).collect();
    if let Some((s, w)) = seeds {
        for (o, k) in [(0, 0), (1, 1)] {
            let d = s.interior.gradient_mut(o, k)?;
            for p in 0..n {
                d[p] += w * 2.0 * div[p] * inv;
            }
        }
    }
    Ok(div.iter().map(|d| d * d).sum::<f64>() * inv)
}

/// `L_g`: mean squared boundary mismatch; zero without boundary samples.
pub fn boundary_loss(batch: &LocalBatch, evals: &LocalEvals, mut seeds: Option<(&mut LocalSeeds, f64)>) -> Result<f64, LossError> {
    let m = batch.boundary.len();
    if m == 0 {
        return Ok(0.0);
    }
    let inv = 1.0 / m as f64;
    let mut sum = 0.0;
    for f in 0..batch.boundary_fields {
        let u = evals.boundary.value(f);
        let r: Vec<f64> = (0..m).map(|p| u[p] - batch.boundary_data[p][f]).collect();
        sum += r.iter().map(|r| r * r).sum::<f64>();
        if let Some((s, w)) = seeds.as_mut() {
            let d = s.boundary.value_mut(f);
            for p in 0..m {
                d[p] += *w * 2.0 * r[p] * inv;
            }
        }
    }
    Ok(sum * inv)
}

/// `F_u`: per-interface mean squared distance to the tilde values, summed over neighbours.
pub fn interface_value_loss(
    batch: &LocalBatch,
    evals: &LocalEvals,
    tilde: &TildeValues,
    mut seeds: Option<(&mut LocalSeeds, f64)>,
) -> Result<f64, LossError> {
    let mut total = 0.0;
    for side in &batch.sides {
        let (target, _) = side_targets(batch, tilde, side)?;
        if side.len == 0 {
            continue;
        }
        let inv = 1.0 / side.len as f64;
        let mut sum = 0.0;
        for f in 0..batch.fields {
            let u = evals.interface.value(f);
            let r: Vec<f64> = (0..side.len).map(|p| u[side.offset + p] - target[p][f]).collect();
            sum += r.iter().map(|r| r * r).sum::<f64>();
            if let Some((s, w)) = seeds.as_mut() {
                let d = s.interface.value_mut(f);
                for p in 0..side.len {
                    d[side.offset + p] += *w * 2.0 * r[p] * inv;
                }
            }
        }
        total += sum * inv;
    }
    Ok(total)
}

/// `F_n`: as [`interface_value_loss`] for the weighted normal fluxes.
pub fn interface_flux_loss(
    batch: &LocalBatch,
    evals: &LocalEvals,
    tilde: &TildeValues,
    mut seeds: Option<(&mut LocalSeeds, f64)>,
) -> Result<f64, LossError> {
    let mut total = 0.0;
    for side in &batch.sides {
        let (_, target) = side_targets(batch, tilde, side)?;
        if side.len == 0 {
            continue;
        }
        let inv = 1.0 / side.len as f64;
        let mut sum = 0.0;
        for f in 0..batch.fields {
            let c = side.flux_coefficients[f];
            let (gx, gy) = (evals.interface.gradient(f, 0)?, evals.interface.gradient(f, 1)?);
            let r: Vec<f64> = (0..side.len)
                .map(|p| {
                    let (q, n) = (side.offset + p, side.normals[p]);
                    c * (n[0] * gx[q] + n[1] * gy[q]) - target[p][f]
                })
                .collect();
            sum += r.iter().map(|r| r * r).sum::<f64>();
            if let Some((s, w)) = seeds.as_mut() {
                for k in 0..2 {
                    let d = s.interface.gradient_mut(f, k)?;
                    for p in 0..side.len {
                        d[side.offset + p] += *w * 2.0 * r[p] * c * side.normals[p][k] * inv;
                    }
                }
            }
        }
        total += sum * inv;
    }
    Ok(total)
}

/// `Λ_i0 = Σ λ_i0 · (U_i − g)`.
pub fn lagrange_boundary(
    batch: &LocalBatch,
    evals: &LocalEvals,
    multipliers: &MultiplierState,
    mut seeds: Option<(&mut LocalSeeds, f64)>,
) -> Result<f64, LossError> {
    let mut sum = 0.0;
    for f in 0..batch.boundary_fields {
        let u = evals.boundary.value(f);
        for p in 0..batch.boundary.len() {
            sum += multipliers.boundary[p][f] * (u[p] - batch.boundary_data[p][f]);
        }
        if let Some((s, w)) = seeds.as_mut() {
            let d = s.boundary.value_mut(f);
            for p in 0..batch.boundary.len() {
                d[p] += *w * multipliers.boundary[p][f];
            }
        }
    }
    Ok(sum)
}

/// `Λ_i = Σ_j Σ λ_ij · (U_i − Ũ_ij)`.
pub fn lagrange_interface(
    batch: &LocalBatch,
    evals: &LocalEvals,
    tilde: &TildeValues,
    multipliers: &MultiplierState,
    mut seeds: Option<(&mut LocalSeeds, f64)>,
) -> Result<f64, LossError> {
    let mut sum = 0.0;
    for (side, lam) in batch.sides.iter().zip(&multipliers.interface) {
        let (target, _) = side_targets(batch, tilde, side)?;
        for f in 0..batch.fields {
            let u = evals.interface.value(f);
            for p in 0..side.len {
                sum += lam[p][f] * (u[side.offset + p] - target[p][f]);
            }
            if let Some((s, w)) = seeds.as_mut() {
                let d = s.interface.value_mut(f);
                for p in 0..side.len {
                    d[side.offset + p] += *w * lam[p][f];
                }
            }
        }
    }
    Ok(sum)
}

/// `Λ_div = Σ λ_div ∇·U_i`; zero when no divergence multipliers are held.
pub fn lagrange_divergence(
    batch: &LocalBatch,
    evals: &LocalEvals,
    multipliers: &MultiplierState,
    seeds: Option<(&mut LocalSeeds, f64)>,
) -> Result<f64, LossError> {
    if multipliers.divergence.is_empty() || !batch.is_stokes() {
        return Ok(0.0);
    }
    let lam = &multipliers.divergence;
    let (ux, vy) = (evals.interior.gradient(0, 0)?, evals.interior.gradient(1, 1)?);
    let sum = (0..lam.len()).map(|p| lam[p] * (ux[p] + vy[p])).sum();
    if let Some((s, w)) = seeds {
        for (o, k) in [(0, 0), (1, 1)] {
            let d = s.interior.gradient_mut(o, k)?;
            for p in 0..lam.len() {
                d[p] += w * lam[p];
            }
        }
    }
    Ok(sum)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// `𝒥_i`
    Plain,
    /// `𝒥_{i,Λ}`
    Augmented,
}

/// Term values of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_f: f64,
    pub l_div: f64,
    pub l_g: f64,
    pub f_u: f64,
    pub f_n: f64,
    pub lambda_0: f64,
    pub lambda_i: f64,
    pub lambda_div: f64,
    /// `𝒥_i`
    pub plain: f64,
    /// Quantity minimized under the requested mode.
    pub total: f64,
}

/// `𝒥_i` or `𝒥_{i,Λ}` with its breakdown; seeds receive the gradient of `total`.
pub fn total_loss(inputs: LossInputs<'_>, mode: LossMode, mut seeds: Option<&mut LocalSeeds>) -> Result<LossBreakdown, LossError> {
    let mut values = [0.0; 8];
    for (slot, term) in values.iter_mut().zip(Term::ALL) {
        if term.is_lagrangian() && mode == LossMode::Plain {
            continue;
        }
        *slot = term_value(term, inputs, seeds.as_deref_mut().map(|s| (s, 1.0)))?;
    }
    let [l_f, l_div, l_g, f_u, f_n, lambda_0, lambda_i, lambda_div] = values;
    let plain = l_f + l_div + l_g + f_u + f_n;
    let total = match mode {
        LossMode::Plain => plain,
        LossMode::Augmented => plain + lambda_0 + lambda_i + lambda_div,
    };
    Ok(LossBreakdown { l_f, l_div, l_g, f_u, f_n, lambda_0, lambda_i, lambda_div, plain, total })
}
