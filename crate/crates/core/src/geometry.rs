//! Subdomain partitions, interfaces with canonical normals, and collocation
//! sampling.
//!
//! Subdomains are numbered from 0. Grid cells are row-major from the
//! bottom-left corner; radial regions count outwards from the innermost disk.
//! On an interface between subdomains `lo < hi` the canonical normal is the
//! outward normal of `hi`, and every jump is `(hi side) − (lo side)`.
//!
//! Tie rules for [`PartitionModel::locate`]: grid cells are half-open
//! `[lo, hi)` along each axis except the last cell, which is closed; radial
//! regions are `r < r_1`, `r_1 ≤ r < r_2`, …, `r ≥ r_last`.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{rng, Point};

/// Distance within which a point counts as lying on an interface.
pub const ON_INTERFACE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("empty interval [{0}, {1}]")]
    EmptyInterval(f64, f64),
    #[error("sample count must be at least 1")]
    ZeroCount,
    #[error("invalid partition: {0}")]
    InvalidPartition(&'static str),
    #[error("point ({0}, {1}) is not on interface {2}")]
    OffInterface(f64, f64, usize),
    #[error("subdomain {0} received no interior samples")]
    EmptySubdomain(usize),
    #[error("interface plan lists {got} counts, partition has {expected} interface lines")]
    PlanMismatch { expected: usize, got: usize },
}

/// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x: [f64; 2],
    pub y: [f64; 2],
}

impl Rect {
    pub fn new(x: [f64; 2], y: [f64; 2]) -> Self {
        Self { x, y }
    }

    pub fn square(lo: f64, hi: f64) -> Self {
        Self { x: [lo, hi], y: [lo, hi] }
    }

    pub fn contains(&self, p: Point) -> bool {
        p[0] >= self.x[0] && p[0] <= self.x[1] && p[1] >= self.y[0] && p[1] <= self.y[1]
    }

    /// Bottom, right, top, left as `(start, end)` pairs (counter-clockwise).
    pub fn edges(&self) -> [(Point, Point); 4] {
        let [x0, x1] = self.x;
        let [y0, y1] = self.y;
        [([x0, y0], [x1, y0]), ([x1, y0], [x1, y1]), ([x1, y1], [x0, y1]), ([x0, y1], [x0, y0])]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PartitionKind {
    Grid { nx: usize, ny: usize },
    Radial { center: Point, radii: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InterfaceGeometry {
    Segment { a: Point, b: Point },
    Circle { center: Point, radius: f64 },
}

/// Shared boundary piece `Γ_{hi,lo}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interface {
    pub hi: usize,
    pub lo: usize,
    pub geometry: InterfaceGeometry,
    /// Full line (grid) or circle (radial) the piece lies on.
    pub line: usize,
}

impl Interface {
    /// Distance of `x` from the interface geometry.
    pub fn distance(&self, x: Point) -> f64 {
        match self.geometry {
            InterfaceGeometry::Segment { a, b } => {
                let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
                let len2 = dx * dx + dy * dy;
                let t = (((x[0] - a[0]) * dx + (x[1] - a[1]) * dy) / len2).clamp(0.0, 1.0);
                libm::hypot(x[0] - a[0] - t * dx, x[1] - a[1] - t * dy)
            }
            InterfaceGeometry::Circle { center, radius } => {
                libm::fabs(libm::hypot(x[0] - center[0], x[1] - center[1]) - radius)
            }
        }
    }

    /// Other subdomain of the interface, if `i` is one side.
    pub fn other(&self, i: usize) -> Option<usize> {
        if i == self.hi {
            Some(self.lo)
        } else if i == self.lo {
            Some(self.hi)
        } else {
            None
        }
    }
}

/// Non-overlapping partition of a rectangular domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionModel {
    pub domain: Rect,
    pub kind: PartitionKind,
    interfaces: Vec<Interface>,
}

fn cell_edge(lo: f64, hi: f64, n: usize, k: usize) -> f64 {
    if k == n {
        hi
    } else {
        lo + (hi - lo) * (k as f64) / (n as f64)
    }
}

/// Half-open cell index along one axis, last cell closed.
fn cell_index(v: f64, lo: f64, hi: f64, n: usize) -> usize {
    let guess = libm::floor((v - lo) / (hi - lo) * n as f64);
    let mut k = if guess.is_nan() || guess < 0.0 { 0 } else { (guess as usize).min(n - 1) };
    while k + 1 < n && v >= cell_edge(lo, hi, n, k + 1) {
        k += 1;
    }
    while k > 0 && v < cell_edge(lo, hi, n, k) {
        k -= 1;
    }
    k
}

impl PartitionModel {
    /// `nx × ny` equal cells.
    pub fn grid(domain: Rect, nx: usize, ny: usize) -> Result<Self, GeometryError> {
        if nx == 0 || ny == 0 {
            return Err(GeometryError::InvalidPartition("grid needs at least one cell per axis"));
        }
        check_rect(&domain)?;
        let [x0, x1] = domain.x;
        let [y0, y1] = domain.y;
        let mut interfaces = Vec::new();
        // vertical lines first, then horizontal ones
        for c in 1..nx {
            let xc = cell_edge(x0, x1, nx, c);
            for r in 0..ny {
                let a = [xc, cell_edge(y0, y1, ny, r)];
                let b = [xc, cell_edge(y0, y1, ny, r + 1)];
                interfaces.push(Interface {
                    hi: r * nx + c,
                    lo: r * nx + c - 1,
                    geometry: InterfaceGeometry::Segment { a, b },
                    line: c - 1,
                });
            }
        }
        for r in 1..ny {
            let yr = cell_edge(y0, y1, ny, r);
            for c in 0..nx {
                let a = [cell_edge(x0, x1, nx, c), yr];
                let b = [cell_edge(x0, x1, nx, c + 1), yr];
                interfaces.push(Interface {
                    hi: r * nx + c,
                    lo: (r - 1) * nx + c,
                    geometry: InterfaceGeometry::Segment { a, b },
                    line: nx - 1 + r - 1,
                });
            }
        }
        interfaces.sort_by_key(|f| (f.lo, f.hi));
        Ok(Self { domain, kind: PartitionKind::Grid { nx, ny }, interfaces })
    }

    /// Concentric regions around `center`, separated by circles of `radii`.
    pub fn radial(domain: Rect, center: Point, radii: Vec<f64>) -> Result<Self, GeometryError> {
        check_rect(&domain)?;
        if radii.iter().any(|r| !(r.is_finite() && *r > 0.0)) || radii.windows(2).any(|w| w[0] >= w[1]) {
            return Err(GeometryError::InvalidPartition("radii must be positive and strictly increasing"));
        }
        if let Some(&rmax) = radii.last() {
            let fits = center[0] - rmax > domain.x[0]
                && center[0] + rmax < domain.x[1]
                && center[1] - rmax > domain.y[0]
                && center[1] + rmax < domain.y[1];
            if !fits {
                return Err(GeometryError::InvalidPartition("circles must lie strictly inside the domain"));
            }
        }
        let interfaces = radii
            .iter()
            .enumerate()
            .map(|(k, &radius)| Interface {
                hi: k + 1,
                lo: k,
                geometry: InterfaceGeometry::Circle { center, radius },
                line: k,
            })
            .collect();
        Ok(Self { domain, kind: PartitionKind::Radial { center, radii }, interfaces })
    }

    pub fn n_subdomains(&self) -> usize {
        match &self.kind {
            PartitionKind::Grid { nx, ny } => nx * ny,
            PartitionKind::Radial { radii, .. } => radii.len() + 1,
        }
    }

    /// Interfaces ordered by `(lo, hi)`.
    pub fn interfaces(&self) -> &[Interface] {
        &self.interfaces
    }

    /// Number of full interface lines (grid) or circles (radial).
    pub fn n_interface_lines(&self) -> usize {
        match &self.kind {
            PartitionKind::Grid { nx, ny } => nx - 1 + ny - 1,
            PartitionKind::Radial { radii, .. } => radii.len(),
        }
    }

    /// Interface indices touching subdomain `i`, ordered by neighbour index.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        let mut v: Vec<usize> = (0..self.interfaces.len()).filter(|&k| self.interfaces[k].other(i).is_some()).collect();
        v.sort_by_key(|&k| self.interfaces[k].other(i));
        v
    }

    /// Subdomain owning `x` under the tie rules.
    pub fn locate(&self, x: Point) -> usize {
        match &self.kind {
            PartitionKind::Grid { nx, ny } => {
                let c = cell_index(x[0], self.domain.x[0], self.domain.x[1], *nx);
                let r = cell_index(x[1], self.domain.y[0], self.domain.y[1], *ny);
                r * nx + c
            }
            PartitionKind::Radial { center, radii } => {
                let r = libm::hypot(x[0] - center[0], x[1] - center[1]);
                radii.iter().take_while(|&&ri| r >= ri).count()
            }
        }
    }

    /// Outward normal of the higher-index subdomain at `x` on interface `k`.
    pub fn canonical_normal(&self, k: usize, x: Point) -> Result<Point, GeometryError> {
        let f = &self.interfaces[k];
        if f.distance(x) > ON_INTERFACE_TOL {
            return Err(GeometryError::OffInterface(x[0], x[1], k));
        }
        Ok(match f.geometry {
            // grid neighbours: hi sits to the right of / above lo
            InterfaceGeometry::Segment { a, b } => {
                if a[0] == b[0] {
                    [-1.0, 0.0]
                } else {
                    [0.0, -1.0]
                }
            }
            // radial: hi is the outer region, its normal points to the centre
            InterfaceGeometry::Circle { center, .. } => {
                let (dx, dy) = (x[0] - center[0], x[1] - center[1]);
                let r = libm::hypot(dx, dy);
                [-dx / r, -dy / r]
            }
        })
    }
}

fn check_rect(r: &Rect) -> Result<(), GeometryError> {
    if !(r.x[0] < r.x[1]) {
        return Err(GeometryError::EmptyInterval(r.x[0], r.x[1]));
    }
    if !(r.y[0] < r.y[1]) {
        return Err(GeometryError::EmptyInterval(r.y[0], r.y[1]));
    }
    Ok(())
}

/// Latin hypercube design: `n` points in `bounds`, one per stratum per axis.
pub fn latin_hypercube_with<R: Rng + ?Sized>(
    n: usize,
    bounds: &[(f64, f64)],
    rng: &mut R,
) -> Result<Vec<Vec<f64>>, GeometryError> {
    if n == 0 {
        return Err(GeometryError::ZeroCount);
    }
    if let Some(&(lo, hi)) = bounds.iter().find(|(lo, hi)| !(lo < hi)) {
        return Err(GeometryError::EmptyInterval(lo, hi));
    }
    let mut points = vec![vec![0.0; bounds.len()]; n];
    let mut strata: Vec<usize> = (0..n).collect();
    for (axis, &(lo, hi)) in bounds.iter().enumerate() {
        strata.shuffle(rng);
        for (pt, &k) in points.iter_mut().zip(&strata) {
            let u: f64 = rng.gen();
            let v = lo + (k as f64 + u) / n as f64 * (hi - lo);
            // rounding must not leave the stratum
            let top = lo + (k + 1) as f64 / n as f64 * (hi - lo);
            pt[axis] = if v >= top && k + 1 < n { libm::nextafter(top, lo) } else { v.min(hi) };
        }
    }
    Ok(points)
}

/// Seeded [`latin_hypercube_with`].
pub fn latin_hypercube(n: usize, bounds: &[(f64, f64)], seed: u64) -> Result<Vec<Vec<f64>>, GeometryError> {
    latin_hypercube_with(n, bounds, &mut rng::stream(seed, 0))
}

/// Collocation counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePlan {
    /// Points drawn over the whole domain, then split by subdomain.
    pub interior: usize,
    pub boundary_per_edge: usize,
    /// Points per full interface line or circle; a single entry applies to all.
    pub interface_per_line: Vec<usize>,
}

/// Collocation points grouped by owner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub seed: u64,
    /// `X_{Ω_i}` per subdomain.
    pub interior: Vec<Vec<Point>>,
    /// `X_{Γ_i0}` per subdomain (possibly empty).
    pub boundary: Vec<Vec<Point>>,
    /// `X_{Γ_ij}` per interface, shared by both sides.
    pub interface: Vec<Vec<Point>>,
}

impl SampleSet {
    pub fn interior_total(&self) -> usize {
        self.interior.iter().map(Vec::len).sum()
    }

    pub fn boundary_total(&self) -> usize {
        self.boundary.iter().map(Vec::len).sum()
    }

    pub fn interface_total(&self) -> usize {
        self.interface.iter().map(Vec::len).sum()
    }
}

/// Draws interior, boundary and interface samples for `partition`.
pub fn build_samples(partition: &PartitionModel, plan: &SamplePlan, seed: u64) -> Result<SampleSet, GeometryError> {
    if plan.interior == 0 {
        return Err(GeometryError::ZeroCount);
    }
    let n_sub = partition.n_subdomains();
    let d = &partition.domain;

    let mut interior = vec![Vec::new(); n_sub];
    let pts = latin_hypercube_with(plan.interior, &[(d.x[0], d.x[1]), (d.y[0], d.y[1])], &mut rng::stream(seed, rng::STREAM_INTERIOR))?;
    for p in pts {
        let x = [p[0], p[1]];
        interior[partition.locate(x)].push(x);
    }
    if let Some(i) = interior.iter().position(Vec::is_empty) {
        return Err(GeometryError::EmptySubdomain(i));
    }

    let mut boundary = vec![Vec::new(); n_sub];
    if plan.boundary_per_edge > 0 {
        let mut brng = rng::stream(seed, rng::STREAM_BOUNDARY);
        for (a, b) in d.edges() {
            for t in latin_hypercube_with(plan.boundary_per_edge, &[(0.0, 1.0)], &mut brng)? {
                let x = lerp(a, b, t[0]);
                boundary[partition.locate(x)].push(x);
            }
        }
    }

    let lines = partition.n_interface_lines();
    let counts: Vec<usize> = match plan.interface_per_line.len() {
        1 => vec![plan.interface_per_line[0]; lines],
        n if n == lines => plan.interface_per_line.clone(),
        0 if lines == 0 => Vec::new(),
        n => return Err(GeometryError::PlanMismatch { expected: lines, got: n }),
    };
    let mut interface = vec![Vec::new(); partition.interfaces().len()];
    let mut irng = rng::stream(seed, rng::STREAM_INTERFACE);
    match &partition.kind {
        PartitionKind::Grid { nx, ny } => {
            let (nx, ny) = (*nx, *ny);
            for (line, &count) in counts.iter().enumerate() {
                if count == 0 {
                    continue;
                }
                let vertical = line < nx - 1;
                let (lo, hi) = if vertical { (d.y[0], d.y[1]) } else { (d.x[0], d.x[1]) };
                for t in latin_hypercube_with(count, &[(lo, hi)], &mut irng)? {
                    let x = if vertical {
                        [cell_edge(d.x[0], d.x[1], nx, line + 1), t[0]]
                    } else {
                        [t[0], cell_edge(d.y[0], d.y[1], ny, line - (nx - 1) + 1)]
                    };
                    let seg = if vertical { cell_index(t[0], lo, hi, ny) } else { cell_index(t[0], lo, hi, nx) };
                    let k = partition
                        .interfaces()
                        .iter()
                        .enumerate()
                        .filter(|(_, f)| f.line == line)
                        .map(|(k, _)| k)
                        .nth(seg)
                        .expect("one piece per cell along the line");
                    interface[k].push(x);
                }
            }
        }
        PartitionKind::Radial { center, radii } => {
            for (k, (&count, &radius)) in counts.iter().zip(radii).enumerate() {
                if count == 0 {
                    continue;
                }
                for s in latin_hypercube_with(count, &[(0.0, 2.0 * PI * radius)], &mut irng)? {
                    let theta = s[0] / radius;
                    let (sn, cs) = libm::sincos(theta);
                    interface[k].push([center[0] + radius * cs, center[1] + radius * sn]);
                }
            }
        }
    }

    Ok(SampleSet { seed, interior, boundary, interface })
}

fn lerp(a: Point, b: Point, t: f64) -> Point {
    [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
}
