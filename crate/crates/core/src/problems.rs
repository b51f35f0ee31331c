//! The four benchmark problems.
//!
//! Exact solutions, forcings and interface jump data are written out in
//! closed form. [`Jet`] offers an independent route to first and second
//! derivatives of the same solutions; the test suites use it to check the
//! closed forms.

use alloc::vec::Vec;
use core::f64::consts::PI;
use core::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::geometry::{GeometryError, PartitionKind, PartitionModel, Rect, SamplePlan};
use crate::nn::NetworkSpec;
use crate::Point;

/// Up to three solution fields; unused trailing entries are zero.
pub type Fields = [f64; 3];

/// Viscosity of the Stokes benchmark.
pub const STOKES_MU: f64 = 1.0;
/// Coefficient of the bottom-left and top-right quadrants of `disc_coeff`.
pub const DISC_HIGH: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProblemError {
    #[error("unknown problem {0:?}")]
    UnknownProblem(alloc::string::String),
    #[error("partition does not fit {problem}: {reason}")]
    IncompatiblePartition { problem: &'static str, reason: &'static str },
    #[error("no default network for {problem} with {subdomains} subdomains")]
    NoDefaultNetwork { problem: &'static str, subdomains: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    PoissonSmooth,
    DiscCoeff,
    PoissonInterface,
    StokesInterface,
}

/// Shape of the differential operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PdeForm {
    /// `−c Δu = f`, with `c` constant inside each subdomain.
    Poisson,
    /// `−μ Δ(u, v) + ∇p = h`, `∇·(u, v) = 0`; outputs are `(u, v, p)`.
    Stokes { mu: f64 },
}

impl ProblemKind {
    pub const ALL: [ProblemKind; 4] =
        [ProblemKind::PoissonSmooth, ProblemKind::DiscCoeff, ProblemKind::PoissonInterface, ProblemKind::StokesInterface];

    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::PoissonSmooth => "poisson_smooth",
            ProblemKind::DiscCoeff => "disc_coeff",
            ProblemKind::PoissonInterface => "poisson_interface",
            ProblemKind::StokesInterface => "stokes_interface",
        }
    }

    pub fn from_name(name: &str) -> Result<Self, ProblemError> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| ProblemError::UnknownProblem(name.into()))
    }

    pub fn domain(self) -> Rect {
        match self {
            ProblemKind::PoissonSmooth => Rect::square(0.0, 1.0),
            ProblemKind::DiscCoeff => Rect::square(0.0, 4.0),
            ProblemKind::PoissonInterface => Rect::square(-1.0, 1.0),
            ProblemKind::StokesInterface => Rect::square(-2.0, 2.0),
        }
    }

    pub fn form(self) -> PdeForm {
        match self {
            ProblemKind::StokesInterface => PdeForm::Stokes { mu: STOKES_MU },
            _ => PdeForm::Poisson,
        }
    }

    /// Network outputs per point.
    pub fn field_count(self) -> usize {
        match self.form() {
            PdeForm::Poisson => 1,
            PdeForm::Stokes { .. } => 3,
        }
    }

    /// Leading fields carrying Dirichlet data (the Stokes pressure has none).
    pub fn boundary_field_count(self) -> usize {
        match self.form() {
            PdeForm::Poisson => 1,
            PdeForm::Stokes { .. } => 2,
        }
    }

    /// Number of residual components (momentum equations for Stokes).
    pub fn residual_count(self) -> usize {
        match self.form() {
            PdeForm::Poisson => 1,
            PdeForm::Stokes { .. } => 2,
        }
    }

    /// Partition the benchmark is usually solved on.
    pub fn native_partition(self) -> PartitionModel {
        let d = self.domain();
        let p = match self {
            ProblemKind::PoissonSmooth => PartitionModel::grid(d, 2, 1),
            ProblemKind::DiscCoeff => PartitionModel::grid(d, 2, 2),
            ProblemKind::PoissonInterface => PartitionModel::radial(d, [0.0, 0.0], alloc::vec![0.5, 0.8]),
            ProblemKind::StokesInterface => PartitionModel::radial(d, [0.0, 0.0], alloc::vec![1.0]),
        };
        p.expect("built-in partitions are valid")
    }

    /// Number of pieces of the piecewise exact solution.
    pub fn region_count(self) -> usize {
        match self {
            ProblemKind::PoissonSmooth => 1,
            ProblemKind::DiscCoeff => 4,
            ProblemKind::PoissonInterface => 3,
            ProblemKind::StokesInterface => 2,
        }
    }

    /// Piece of the exact solution owning `x` (same tie rules as `locate`).
    pub fn region(self, x: Point) -> usize {
        match self {
            ProblemKind::PoissonSmooth => 0,
            ProblemKind::DiscCoeff => (x[1] >= 2.0) as usize * 2 + (x[0] >= 2.0) as usize,
            ProblemKind::PoissonInterface => {
                let r = libm::hypot(x[0], x[1]);
                (r >= 0.5) as usize + (r >= 0.8) as usize
            }
            ProblemKind::StokesInterface => (libm::hypot(x[0], x[1]) >= 1.0) as usize,
        }
    }

    /// Diffusion coefficient of a region (`c` or `μ`).
    pub fn region_coefficient(self, region: usize) -> f64 {
        match self {
            ProblemKind::DiscCoeff if region == 0 || region == 3 => DISC_HIGH,
            ProblemKind::StokesInterface => STOKES_MU,
            _ => 1.0,
        }
    }

    pub fn coefficient(self, x: Point) -> f64 {
        self.region_coefficient(self.region(x))
    }

    /// Exact solution of `region`, extended to any `x`.
    pub fn exact_in_region(self, region: usize, x: Point) -> Fields {
        let [x, y] = x;
        match self {
            ProblemKind::PoissonSmooth => [libm::sin(2.0 * PI * x) * libm::sin(2.0 * PI * y), 0.0, 0.0],
            ProblemKind::DiscCoeff => {
                [libm::sin(PI * x) * libm::sin(PI * y) / self.region_coefficient(region), 0.0, 0.0]
            }
            ProblemKind::PoissonInterface => {
                let s = libm::sin(PI * x) * libm::sin(PI * y);
                let u = match region {
                    0 => -s,
                    1 => libm::exp(-x * x - y * y),
                    _ => s,
                };
                [u, 0.0, 0.0]
            }
            ProblemKind::StokesInterface => stokes_exact(region, x, y),
        }
    }

    pub fn exact(self, x: Point) -> Fields {
        self.exact_in_region(self.region(x), x)
    }

    /// Dirichlet data on the outer boundary.
    pub fn boundary(self, x: Point) -> Fields {
        self.exact(x)
    }

    /// Right-hand side per residual component (`f`, or `h` for Stokes).
    pub fn forcing(self, x: Point) -> [f64; 2] {
        let [x, y] = x;
        match self {
            // −Δ sin(2πx)sin(2πy) = 8π² sin(2πx)sin(2πy)
            ProblemKind::PoissonSmooth => [8.0 * PI * PI * libm::sin(2.0 * PI * x) * libm::sin(2.0 * PI * y), 0.0],
            ProblemKind::DiscCoeff => [2.0 * PI * PI * libm::sin(PI * x) * libm::sin(PI * y), 0.0],
            ProblemKind::PoissonInterface => {
                let s = libm::sin(PI * x) * libm::sin(PI * y);
                let r2 = x * x + y * y;
                let f = match self.region([x, y]) {
                    0 => -2.0 * PI * PI * s,
                    1 => (4.0 - 4.0 * r2) * libm::exp(-r2),
                    _ => 2.0 * PI * PI * s,
                };
                [f, 0.0]
            }
            // both velocity branches are Stokes flows without body force
            ProblemKind::StokesInterface => [0.0, 0.0],
        }
    }

    /// Default local network for `subdomains` pieces.
    pub fn default_network(self, subdomains: usize) -> Result<NetworkSpec, ProblemError> {
        let width = match (self, subdomains) {
            (ProblemKind::StokesInterface, 2) => return Ok(NetworkSpec::stokes_branched()),
            (ProblemKind::PoissonInterface, 3) => 30,
            (ProblemKind::PoissonSmooth | ProblemKind::DiscCoeff, 1) => 50,
            (ProblemKind::PoissonSmooth, 2) => 35,
            (ProblemKind::PoissonSmooth | ProblemKind::DiscCoeff, 4) => 23,
            (ProblemKind::PoissonSmooth, 9) => 16,
            (ProblemKind::PoissonSmooth, 16) => 11,
            _ => return Err(ProblemError::NoDefaultNetwork { problem: self.name(), subdomains }),
        };
        Ok(NetworkSpec::scalar(2, 4, width))
    }

    /// Default collocation counts for `subdomains` pieces.
    pub fn default_samples(self, subdomains: usize) -> SamplePlan {
        let (interior, boundary_per_edge, interface_per_line) = match self {
            ProblemKind::PoissonSmooth if subdomains == 1 => (1000, 200, alloc::vec![200]),
            ProblemKind::PoissonSmooth | ProblemKind::DiscCoeff => (2000, 200, alloc::vec![200]),
            ProblemKind::PoissonInterface => (2000, 100, alloc::vec![150, 300]),
            ProblemKind::StokesInterface => (5000, 200, alloc::vec![200]),
        };
        SamplePlan { interior, boundary_per_edge, interface_per_line }
    }
}

fn stokes_exact(region: usize, x: f64, y: f64) -> Fields {
    let r2 = x * x + y * y;
    let (re2, im2) = (x * x - y * y, 2.0 * x * y);
    let (re3, _) = (x * x * x - 3.0 * x * y * y, 0.0);
    let (re4, im4) = (re2 * re2 - im2 * im2, 2.0 * re2 * im2);
    if region == 0 {
        [
            1.25 * re2 + 0.625 * re4 - 2.5 * r2 * re2,
            -1.25 * im2 + 0.625 * im4 + 2.5 * r2 * im2,
            -10.0 * re3,
        ]
    } else {
        let r4 = r2 * r2;
        let r6 = r4 * r2;
        let r8 = r4 * r4;
        [
            -1.25 * re2 / r4 + 3.125 * re4 / r8 - 2.5 * re4 / r6,
            1.25 * im2 / r4 + 3.125 * im4 / r8 - 2.5 * im4 / r6,
            -10.0 * re3 / r6,
        ]
    }
}

/// Tangential interface force `F_τ(s) = 20 sin 3s` of the Stokes benchmark.
pub fn tangential_force(s: f64) -> f64 {
    20.0 * libm::sin(3.0 * s)
}

/// Jump data at an interface point: `p` for values, `q` for fluxes.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Jump {
    pub p: Fields,
    pub q: Fields,
}

/// A benchmark bound to a compatible partition.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub kind: ProblemKind,
    pub partition: PartitionModel,
    /// Flux coefficients per subdomain and field (`c_i`, or `μ, μ, 1`).
    flux: Vec<Fields>,
}

impl Problem {
    pub fn new(kind: ProblemKind, partition: PartitionModel) -> Result<Self, ProblemError> {
        let bad = |reason| Err(ProblemError::IncompatiblePartition { problem: kind.name(), reason });
        if partition.domain != kind.domain() {
            return bad("partition domain differs from the problem domain");
        }
        let flux = match (kind, &partition.kind) {
            (ProblemKind::PoissonSmooth, _) => alloc::vec![[1.0, 0.0, 0.0]; partition.n_subdomains()],
            (ProblemKind::DiscCoeff, PartitionKind::Grid { nx, ny }) => {
                let aligned = (*nx == 1 && *ny == 1) || (nx % 2 == 0 && ny % 2 == 0);
                if !aligned {
                    return bad("grid lines must include x = 2 and y = 2");
                }
                let (nx, ny) = (*nx, *ny);
                (0..nx * ny)
                    .map(|i| {
                        let cx = (i % nx) as f64 + 0.5;
                        let cy = (i / nx) as f64 + 0.5;
                        [kind.coefficient([4.0 * cx / nx as f64, 4.0 * cy / ny as f64]), 0.0, 0.0]
                    })
                    .collect()
            }
            (ProblemKind::DiscCoeff, _) => return bad("needs a grid partition"),
            (ProblemKind::PoissonInterface | ProblemKind::StokesInterface, _) => {
                if partition != kind.native_partition() {
                    return bad("needs the concentric partition matching the jump circles");
                }
                match kind.form() {
                    PdeForm::Stokes { mu } => alloc::vec![[mu, mu, 1.0]; partition.n_subdomains()],
                    PdeForm::Poisson => alloc::vec![[1.0, 0.0, 0.0]; partition.n_subdomains()],
                }
            }
        };
        Ok(Self { kind, partition, flux })
    }

    /// Benchmark on its native partition.
    pub fn native(kind: ProblemKind) -> Self {
        Self::new(kind, kind.native_partition()).expect("native partition fits")
    }

    pub fn field_count(&self) -> usize {
        self.kind.field_count()
    }

    pub fn n_subdomains(&self) -> usize {
        self.partition.n_subdomains()
    }

    pub fn flux_coefficients(&self, subdomain: usize) -> Fields {
        self.flux[subdomain]
    }

    /// `p` and `q` on interface `k` at `x`, oriented by the canonical normal.
    pub fn jump(&self, k: usize, x: Point) -> Result<Jump, ProblemError> {
        let n = self.partition.canonical_normal(k, x)?;
        Ok(match self.kind {
            ProblemKind::PoissonSmooth | ProblemKind::DiscCoeff => Jump::default(),
            ProblemKind::PoissonInterface => {
                let [x0, y0] = x;
                let s = libm::sin(PI * x0) * libm::sin(PI * y0);
                let ds = [PI * libm::cos(PI * x0) * libm::sin(PI * y0), PI * libm::sin(PI * x0) * libm::cos(PI * y0)];
                let e = libm::exp(-x0 * x0 - y0 * y0);
                let de = [-2.0 * x0 * e, -2.0 * y0 * e];
                let dn = |g: [f64; 2]| g[0] * n[0] + g[1] * n[1];
                let iface = self.partition.interfaces()[k];
                // branch values and normal derivatives on the lo and hi sides
                let ((ulo, qlo), (uhi, qhi)) = match iface.lo {
                    0 => ((-s, -dn(ds)), (e, dn(de))),
                    _ => ((e, dn(de)), (s, dn(ds))),
                };
                Jump { p: [uhi - ulo, 0.0, 0.0], q: [qhi - qlo, 0.0, 0.0] }
            }
            ProblemKind::StokesInterface => {
                let s = libm::atan2(x[1], x[0]);
                let f = tangential_force(s);
                let t = [-libm::sin(s), libm::cos(s)];
                // the normal points into the disk: velocity-flux jump +F_τ t,
                // pressure normal-derivative jump −dF_τ/ds
                Jump { p: [0.0; 3], q: [f * t[0], f * t[1], -60.0 * libm::cos(3.0 * s)] }
            }
        })
    }
}

/// Value, gradient and Laplacian of a scalar function of two variables.
///
/// Arithmetic propagates all three exactly, so composing jets yields exact
/// second-order data for closed-form expressions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    pub v: f64,
    pub g: [f64; 2],
    pub l: f64,
}

impl Jet {
    pub fn constant(v: f64) -> Self {
        Self { v, g: [0.0; 2], l: 0.0 }
    }

    /// Coordinate `axis` at `x`.
    pub fn var(x: Point, axis: usize) -> Self {
        let mut g = [0.0; 2];
        g[axis] = 1.0;
        Self { v: x[axis], g, l: 0.0 }
    }

    /// `f ∘ self` for a scalar `f` with derivatives `d1`, `d2` at `self.v`.
    pub fn chain(self, f: f64, d1: f64, d2: f64) -> Self {
        let gg = self.g[0] * self.g[0] + self.g[1] * self.g[1];
        Self { v: f, g: [d1 * self.g[0], d1 * self.g[1]], l: d1 * self.l + d2 * gg }
    }

    pub fn sin(self) -> Self {
        let (s, c) = libm::sincos(self.v);
        self.chain(s, c, -s)
    }

    pub fn cos(self) -> Self {
        let (s, c) = libm::sincos(self.v);
        self.chain(c, -s, -c)
    }

    pub fn exp(self) -> Self {
        let e = libm::exp(self.v);
        self.chain(e, e, e)
    }

    pub fn recip(self) -> Self {
        let r = 1.0 / self.v;
        self.chain(r, -r * r, 2.0 * r * r * r)
    }

    pub fn powi(self, n: i32) -> Self {
        let p = |k: i32| libm::pow(self.v, k as f64);
        let nf = n as f64;
        self.chain(p(n), nf * p(n - 1), nf * (nf - 1.0) * p(n - 2))
    }

    pub fn scale(self, a: f64) -> Self {
        Self { v: a * self.v, g: [a * self.g[0], a * self.g[1]], l: a * self.l }
    }

    pub fn dn(&self, n: Point) -> f64 {
        self.g[0] * n[0] + self.g[1] * n[1]
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(self, o: Jet) -> Jet {
        Jet { v: self.v + o.v, g: [self.g[0] + o.g[0], self.g[1] + o.g[1]], l: self.l + o.l }
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, o: Jet) -> Jet {
        self + (-o)
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, o: Jet) -> Jet {
        Jet {
            v: self.v * o.v,
            g: [self.v * o.g[0] + o.v * self.g[0], self.v * o.g[1] + o.v * self.g[1]],
            l: self.v * o.l + o.v * self.l + 2.0 * (self.g[0] * o.g[0] + self.g[1] * o.g[1]),
        }
    }
}

impl Mul<Jet> for f64 {
    type Output = Jet;
    fn mul(self, o: Jet) -> Jet {
        o.scale(self)
    }
}

/// Exact solution of `region` as jets, one per field (unused fields zero).
pub fn exact_jet(kind: ProblemKind, region: usize, x: Point) -> [Jet; 3] {
    let (jx, jy) = (Jet::var(x, 0), Jet::var(x, 1));
    let zero = Jet::constant(0.0);
    match kind {
        ProblemKind::PoissonSmooth => [(2.0 * PI * jx).sin() * (2.0 * PI * jy).sin(), zero, zero],
        ProblemKind::DiscCoeff => {
            let c = kind.region_coefficient(region);
            [((PI * jx).sin() * (PI * jy).sin()).scale(1.0 / c), zero, zero]
        }
        ProblemKind::PoissonInterface => {
            let s = (PI * jx).sin() * (PI * jy).sin();
            let u = match region {
                0 => -s,
                1 => (-(jx * jx) - jy * jy).exp(),
                _ => s,
            };
            [u, zero, zero]
        }
        ProblemKind::StokesInterface => {
            // polar form: r^k cos(ms) = Re z^m · r^(k−m)
            let r2 = jx * jx + jy * jy;
            let re2 = jx * jx - jy * jy;
            let im2 = 2.0 * (jx * jy);
            let re3 = jx * jx * jx - 3.0 * (jx * jy * jy);
            let re4 = re2 * re2 - im2 * im2;
            let im4 = 2.0 * (re2 * im2);
            if region == 0 {
                [
                    1.25 * re2 + 0.625 * re4 - 2.5 * (r2 * re2),
                    -1.25 * im2 + 0.625 * im4 + 2.5 * (r2 * im2),
                    -10.0 * re3,
                ]
            } else {
                let inv = r2.recip();
                let inv2 = inv * inv;
                let inv3 = inv2 * inv;
                let inv4 = inv2 * inv2;
                [
                    -1.25 * (re2 * inv2) + 3.125 * (re4 * inv4) - 2.5 * (re4 * inv3),
                    1.25 * (im2 * inv2) + 3.125 * (im4 * inv4) - 2.5 * (im4 * inv3),
                    -10.0 * (re3 * inv3),
                ]
            }
        }
    }
}
