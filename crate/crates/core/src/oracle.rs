//! Independent reference evaluation and finite-difference oracles for the
//! analytic derivatives of the network and the loss terms.
//!
//! The reference code evaluates the network one point at a time and the loss
//! terms straight from their formulas, generic over [`Real`]. Central
//! differences are taken in double-double arithmetic so that rounding does not
//! swamp small gradient components of large losses.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Add, Div, Mul, Neg, Sub};

use rand::Rng;
use rand_distr::Uniform;

use crate::geometry::{build_samples, SamplePlan};
use crate::loss::{self, InterfaceTilde, LocalBatch, LossError, LossInputs, MultiplierState, Term, TildeValues, Trace};
use crate::nn::{Activation, BranchSpec, Layout, Network, NetworkSpec, NnError, Params};
use crate::problems::{PdeForm, Problem, ProblemKind};
use crate::rng;
use crate::Point;

/// Scalar type of the reference evaluation.
pub trait Real:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> + Neg<Output = Self>
{
    fn of(x: f64) -> Self;
    fn sin_cos(self) -> (Self, Self);
    fn to_f64(self) -> f64;
}

impl Real for f64 {
    fn of(x: f64) -> Self {
        x
    }
    fn sin_cos(self) -> (Self, Self) {
        (libm::sin(self), libm::cos(self))
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Double-double number `hi + lo`, about 32 significant digits.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

fn split(a: f64) -> (f64, f64) {
    let t = 134_217_729.0 * a;
    let hi = t - (t - a);
    (hi, a - hi)
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    let (ah, al) = split(a);
    let (bh, bl) = split(b);
    (p, ((ah * bh - p) + ah * bl + al * bh) + al * bl)
}

impl Dd {
    pub const fn new(hi: f64, lo: f64) -> Self {
        Self { hi, lo }
    }

    fn norm(hi: f64, lo: f64) -> Self {
        let (hi, lo) = quick_two_sum(hi, lo);
        Self { hi, lo }
    }

    fn abs_hi(self) -> f64 {
        libm::fabs(self.hi)
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, b: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, b.hi);
        let (t, f) = two_sum(self.lo, b.lo);
        let (s, e) = quick_two_sum(s, e + t);
        Dd::norm(s, e + f)
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd { hi: -self.hi, lo: -self.lo }
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, b: Dd) -> Dd {
        self + (-b)
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, b: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, b.hi);
        Dd::norm(p, e + (self.hi * b.lo + self.lo * b.hi))
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, b: Dd) -> Dd {
        let q1 = self.hi / b.hi;
        let r = self - b * Dd::of(q1);
        let q2 = r.hi / b.hi;
        let r = r - b * Dd::of(q2);
        let q3 = r.hi / b.hi;
        Dd::norm(q1, q2) + Dd::of(q3)
    }
}

const HALF_PI: Dd = Dd::new(1.570_796_326_794_896_6, 6.123_233_995_736_766e-17);

impl Real for Dd {
    fn of(x: f64) -> Self {
        Dd { hi: x, lo: 0.0 }
    }

    fn sin_cos(self) -> (Self, Self) {
        let k = libm::round(self.hi / HALF_PI.hi);
        let r = self - HALF_PI * Dd::of(k);
        let r2 = r * r;
        let (mut s, mut c) = (r, Dd::of(1.0));
        let (mut ts, mut tc) = (r, Dd::of(1.0));
        for n in 1..24 {
            let m = (2 * n) as f64;
            ts = -(ts * r2) / Dd::of(m * (m + 1.0));
            tc = -(tc * r2) / Dd::of((m - 1.0) * m);
            s = s + ts;
            c = c + tc;
            if ts.abs_hi() < 1e-34 && tc.abs_hi() < 1e-34 {
                break;
            }
        }
        match (k as i64).rem_euclid(4) {
            0 => (s, c),
            1 => (c, -s),
            2 => (-s, -c),
            _ => (-c, s),
        }
    }

    fn to_f64(self) -> f64 {
        self.hi + self.lo
    }
}

/// Value, input gradient and Laplacian of one scalar.
#[derive(Debug, Clone, Copy)]
pub struct Channels<R> {
    pub value: R,
    pub grad: [R; 2],
    pub lap: R,
}

/// Point-wise network evaluation, independent of the batched kernels.
pub fn reference_forward<R: Real>(layout: &Layout, theta: &[R], x: Point) -> Vec<Channels<R>> {
    let zero = R::of(0.0);
    let input = |v: f64, k: usize| Channels { value: R::of(v), grad: [R::of((k == 0) as u8 as f64), R::of((k == 1) as u8 as f64)], lap: zero };
    let mut nodes: Vec<Vec<Channels<R>>> = vec![vec![input(x[0], 0), input(x[1], 1)]];
    for layer in &layout.layers {
        let src = &nodes[layer.source];
        let mut out = Vec::with_capacity(layer.fan_out);
        for r in 0..layer.fan_out {
            let mut z = Channels { value: theta[layer.bias_offset + r], grad: [zero; 2], lap: zero };
            for c in 0..layer.fan_in {
                let w = theta[layer.weight_offset + r * layer.fan_in + c];
                let a = src[layer.source_start + c];
                z.value = z.value + w * a.value;
                z.grad = [z.grad[0] + w * a.grad[0], z.grad[1] + w * a.grad[1]];
                z.lap = z.lap + w * a.lap;
            }
            if layer.activation == Activation::Sine {
                let (s, co) = z.value.sin_cos();
                let g2 = z.grad[0] * z.grad[0] + z.grad[1] * z.grad[1];
                z = Channels { value: s, grad: [co * z.grad[0], co * z.grad[1]], lap: co * z.lap - s * g2 };
            }
            out.push(z);
        }
        nodes.push(out);
    }
    layout.outputs.iter().map(|&(node, row)| nodes[node][row]).collect()
}

/// `∂f/∂θ_i` by a fourth-order central stencil in double-double arithmetic.
pub fn central_difference<const N: usize>(mut f: impl FnMut(&[Dd]) -> [Dd; N], theta: &[f64], i: usize, h: f64) -> [f64; N] {
    let mut t: Vec<Dd> = theta.iter().map(|&v| Dd::of(v)).collect();
    let mut at = |s: f64| {
        t[i] = Dd::of(theta[i]) + Dd::of(s);
        f(&t)
    };
    let (p2, p1, m1, m2) = (at(2.0 * h), at(h), at(-h), at(-2.0 * h));
    let mut out = [0.0; N];
    for k in 0..N {
        let d = (Dd::of(8.0) * (p1[k] - m1[k]) - (p2[k] - m2[k])) / (Dd::of(12.0) * Dd::of(h));
        out[k] = d.to_f64();
    }
    out
}

/// Step of the parameter-gradient oracle.
pub const PARAM_STEP: f64 = 1e-6;
/// Step of the input-derivative oracle.
pub const INPUT_STEP: f64 = 1e-5;

/// `|a − b| / (|a| + 1e-12)`.
pub fn relative_error(analytic: f64, reference: f64) -> f64 {
    libm::fabs(analytic - reference) / (libm::fabs(analytic) + 1e-12)
}

/// A subdomain loss problem with random parameters, tilde values and multipliers.
#[derive(Debug, Clone)]
pub struct GradientInstance {
    pub problem: Problem,
    pub net: Network,
    pub params: Params,
    pub batch: LocalBatch,
    pub tilde: TildeValues,
    pub multipliers: MultiplierState,
}

/// Small network of the right arity for `kind`.
pub fn small_spec(kind: ProblemKind) -> NetworkSpec {
    if kind.field_count() == 3 {
        NetworkSpec {
            input_dim: 2,
            hidden_widths: vec![12, 12],
            branch: Some(BranchSpec { split_layer_index: 2, branch_width: 4, branch_count: 3 }),
            output_dim: 3,
        }
    } else {
        NetworkSpec::scalar(2, 4, 10)
    }
}

impl GradientInstance {
    /// Deterministic random instance; the subdomain cycles with `seed`.
    pub fn random(kind: ProblemKind, seed: u64) -> Result<Self, LossError> {
        let problem = Problem::native(kind);
        let n_sub = problem.n_subdomains();
        let lines = if kind == ProblemKind::PoissonInterface { vec![4, 4] } else { vec![4] };
        let plan = SamplePlan { interior: 16 * n_sub, boundary_per_edge: 2, interface_per_line: lines };
        let samples = build_samples(&problem.partition, &plan, seed).map_err(crate::problems::ProblemError::from)?;
        let i = (seed as usize) % n_sub;
        let batch = LocalBatch::new(&problem, &samples, i)?;

        let net = Network::new(small_spec(kind))?;
        let mut r = rng::stream(seed, rng::STREAM_INIT - 1);
        let noise = Uniform::new(-0.1, 0.1);
        let mut params = net.init_params_with(&mut r);
        for v in params.values.iter_mut() {
            *v += r.sample(noise);
        }

        let unit = Uniform::new(-1.0, 1.0);
        let jumps = loss::interface_jumps(&problem, &samples)?;
        let mut tilde = TildeValues::default();
        for (k, f) in problem.partition.interfaces().iter().enumerate() {
            let n = samples.interface[k].len();
            let mut rand_trace = || Trace {
                values: (0..n).map(|_| [r.sample(unit), r.sample(unit), r.sample(unit)]).collect(),
                fluxes: (0..n).map(|_| [r.sample(unit), r.sample(unit), r.sample(unit)]).collect(),
            };
            let (hi, lo) = (rand_trace(), rand_trace());
            let t: InterfaceTilde = loss::compute_tilde(f.hi, f.lo, &hi, &lo, &jumps[k])?;
            tilde.interfaces.push(t);
        }

        let mut multipliers = MultiplierState::zeros(&batch, true);
        for l in multipliers.boundary.iter_mut().chain(multipliers.interface.iter_mut().flatten()) {
            *l = [r.sample(unit), r.sample(unit), r.sample(unit)];
        }
        for l in multipliers.divergence.iter_mut() {
            *l = r.sample(unit);
        }
        Ok(Self { problem, net, params, batch, tilde, multipliers })
    }

    /// Value of `term` at parameter vector `theta`.
    pub fn term_at(&self, term: Term, theta: &[f64]) -> Result<f64, LossError> {
        let params = self.net.params_from_values(theta.to_vec())?;
        let evals = loss::evaluate(&self.net, &params, &self.batch)?;
        let inputs = LossInputs { batch: &self.batch, evals: &evals, tilde: &self.tilde, multipliers: &self.multipliers };
        loss::term_value(term, inputs, None)
    }

    /// Analytic parameter gradient of `term`.
    pub fn term_gradient(&self, term: Term) -> Result<(f64, Vec<f64>), LossError> {
        let evals = loss::evaluate(&self.net, &self.params, &self.batch)?;
        let mut seeds = evals.zero_seeds();
        let inputs = LossInputs { batch: &self.batch, evals: &evals, tilde: &self.tilde, multipliers: &self.multipliers };
        let value = loss::term_value(term, inputs, Some((&mut seeds, 1.0)))?;
        let mut grad = vec![0.0; self.params.len()];
        loss::backward(&self.net, &self.params, &evals, &seeds, &mut grad)?;
        Ok((value, grad))
    }

    /// All eight terms, in [`Term::ALL`] order, evaluated from their formulas.
    pub fn reference_terms<R: Real>(&self, theta: &[R]) -> [R; 8] {
        let b = &self.batch;
        let layout = self.net.layout();
        let zero = R::of(0.0);
        let mut out = [zero; 8];
        let mean = |sum: R, n: usize| sum / R::of(n as f64);

        let (mut l_f, mut l_div, mut lam_div) = (zero, zero, zero);
        for (p, &x) in b.interior.iter().enumerate() {
            let u = reference_forward(layout, theta, x);
            match b.form {
                PdeForm::Poisson => {
                    let r = -R::of(b.coefficient[p]) * u[0].lap - R::of(b.forcing[p][0]);
                    l_f = l_f + r * r;
                }
                PdeForm::Stokes { mu } => {
                    for k in 0..2 {
                        let r = -R::of(mu) * u[k].lap + u[2].grad[k] - R::of(b.forcing[p][k]);
                        l_f = l_f + r * r;
                    }
                    let div = u[0].grad[0] + u[1].grad[1];
                    l_div = l_div + div * div;
                    if let Some(&l) = self.multipliers.divergence.get(p) {
                        lam_div = lam_div + R::of(l) * div;
                    }
                }
            }
        }
        out[0] = mean(l_f, b.interior.len());
        out[1] = mean(l_div, b.interior.len());
        out[7] = lam_div;

        let (mut l_g, mut lam0) = (zero, zero);
        for (p, &x) in b.boundary.iter().enumerate() {
            let u = reference_forward(layout, theta, x);
            for f in 0..b.boundary_fields {
                let r = u[f].value - R::of(b.boundary_data[p][f]);
                l_g = l_g + r * r;
                lam0 = lam0 + R::of(self.multipliers.boundary[p][f]) * r;
            }
        }
        if !b.boundary.is_empty() {
            out[2] = mean(l_g, b.boundary.len());
        }
        out[5] = lam0;

        for (s, side) in b.sides.iter().enumerate() {
            let (tv, tq) = self.tilde.interfaces[side.interface].side(b.subdomain).expect("tilde side");
            let (mut fu, mut fnn) = (zero, zero);
            for p in 0..side.len {
                let u = reference_forward(layout, theta, b.interface_points[side.offset + p]);
                let n = side.normals[p];
                for f in 0..b.fields {
                    let r = u[f].value - R::of(tv[p][f]);
                    fu = fu + r * r;
                    out[6] = out[6] + R::of(self.multipliers.interface[s][p][f]) * r;
                    let c = R::of(side.flux_coefficients[f]);
                    let q = c * (R::of(n[0]) * u[f].grad[0] + R::of(n[1]) * u[f].grad[1]) - R::of(tq[p][f]);
                    fnn = fnn + q * q;
                }
            }
            if side.len > 0 {
                out[3] = out[3] + mean(fu, side.len);
                out[4] = out[4] + mean(fnn, side.len);
            }
        }
        out
    }

    /// Finite-difference gradient of every term, one row per parameter.
    pub fn fd_gradients(&self) -> Vec<[f64; 8]> {
        let theta = &self.params.values;
        (0..theta.len()).map(|i| central_difference(|t| self.reference_terms(t), theta, i, PARAM_STEP)).collect()
    }

    /// Largest per-component relative error of the analytic gradient, per term.
    pub fn worst_gradient_errors(&self) -> Result<[f64; 8], LossError> {
        let fd = self.fd_gradients();
        let mut worst = [0.0f64; 8];
        for (k, term) in Term::ALL.into_iter().enumerate() {
            let (_, grad) = self.term_gradient(term)?;
            worst[k] = grad.iter().zip(&fd).map(|(&a, b)| relative_error(a, b[k])).fold(0.0, f64::max);
        }
        Ok(worst)
    }
}

/// Network, perturbed parameters and input point of derivative case `case`:
/// scalar networks of random depth and width, every fourth one branched.
pub fn derivative_case(case: u64) -> Result<(Network, Params, Point), NnError> {
    let mut r = rng::stream(case, rng::STREAM_INIT - 2);
    let spec = if case % 4 == 3 {
        small_spec(ProblemKind::StokesInterface)
    } else {
        NetworkSpec::scalar(2, r.gen_range(1..=4), r.gen_range(2..=16))
    };
    let net = Network::new(spec)?;
    let mut params = net.init_params_with(&mut r);
    let noise = Uniform::new(-0.1, 0.1);
    for v in params.values.iter_mut() {
        *v += r.sample(noise);
    }
    let x = [r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0)];
    Ok((net, params, x))
}

/// Worst relative error of `forward_derivs` against central differences of
/// the network output at `x`, over all outputs, gradient entries and Laplacians.
pub fn worst_input_derivative_error(net: &Network, params: &Params, x: Point) -> Result<f64, NnError> {
    let bundle = net.forward_derivs(params, &x)?;
    let theta: Vec<Dd> = params.values.iter().map(|&v| Dd::of(v)).collect();
    let values = |y: Point| -> Vec<Dd> { reference_forward(net.layout(), &theta, y).iter().map(|c| c.value).collect() };
    let centre = values(x);
    let mut worst: f64 = 0.0;
    let mut lap = vec![Dd::of(0.0); net.output_dim()];
    for k in 0..2 {
        let (mut yp, mut ym) = (x, x);
        yp[k] += INPUT_STEP;
        ym[k] -= INPUT_STEP;
        // actual (representable) step lengths
        let (hp, hm) = (Dd::of(yp[k]) - Dd::of(x[k]), Dd::of(x[k]) - Dd::of(ym[k]));
        let (plus, minus) = (values(yp), values(ym));
        for o in 0..net.output_dim() {
            let (dp, dm) = ((plus[o] - centre[o]) / hp, (centre[o] - minus[o]) / hm);
            let g = (dp * hm + dm * hp) / (hp + hm);
            worst = worst.max(relative_error(bundle.grad_x[o][k], g.to_f64()));
            lap[o] = lap[o] + Dd::of(2.0) * (dp - dm) / (hp + hm);
        }
    }
    for o in 0..net.output_dim() {
        worst = worst.max(relative_error(bundle.laplacian[o], lap[o].to_f64()));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn double_double_arithmetic() {
        let third = Dd::of(1.0) / Dd::of(3.0);
        let back = third * Dd::of(3.0) - Dd::of(1.0);
        assert!(back.to_f64().abs() < 1e-31);
        for i in -40..40 {
            let x = Dd::of(i as f64 * 0.173);
            let (s, c) = x.sin_cos();
            assert!((s.to_f64() - libm::sin(x.hi)).abs() < 1e-15);
            assert!((c.to_f64() - libm::cos(x.hi)).abs() < 1e-15);
            let one = s * s + c * c - Dd::of(1.0);
            assert!(one.to_f64().abs() < 1e-30, "{one:?}");
        }
        // sin(π/6) = 1/2 to double-double accuracy
        let (s, _) = (HALF_PI / Dd::of(3.0)).sin_cos();
        assert!((s - Dd::of(0.5)).to_f64().abs() < 1e-30);
    }

    #[test]
    fn stencil_is_exact_on_quartics() {
        let f = |t: &[Dd]| [t[0] * t[0] * t[0] * t[0] - Dd::of(3.0) * t[0] * t[1]];
        let d = central_difference(f, &[0.7, 1.5], 0, 1e-3);
        assert!((d[0] - (4.0 * 0.7f64.powi(3) - 4.5)).abs() < 1e-14);
    }

    #[test]
    fn reference_forward_matches_network() {
        for spec in [small_spec(ProblemKind::PoissonSmooth), small_spec(ProblemKind::StokesInterface)] {
            let net = Network::new(spec).unwrap();
            let params = net.init_params(5);
            let x = [0.3, -0.8];
            let b = net.forward_derivs(&params, &x).unwrap();
            let r = reference_forward(net.layout(), &params.values, x);
            for o in 0..net.output_dim() {
                assert!((b.value[o] - r[o].value).abs() < 1e-13);
                assert!((b.grad_x[o][1] - r[o].grad[1]).abs() < 1e-13);
                assert!((b.laplacian[o] - r[o].lap).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn instances_are_deterministic() {
        let a = GradientInstance::random(ProblemKind::StokesInterface, 3).unwrap();
        let b = GradientInstance::random(ProblemKind::StokesInterface, 3).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.multipliers, b.multipliers);
        assert_eq!(a.term_gradient(Term::Residual).unwrap(), b.term_gradient(Term::Residual).unwrap());
    }
}
