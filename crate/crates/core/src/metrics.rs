//! Relative L² errors on the uniform test grid and replicate statistics.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::geometry::Rect;
use crate::nn::{points_view, DerivOrder, Network, NnError, Params};
use crate::problems::{Fields, Problem};
use crate::Point;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("length mismatch: exact has {exact} entries, predicted {predicted}")]
    LengthMismatch { exact: usize, predicted: usize },
    #[error("empty input")]
    Empty,
    #[error("exact values are identically zero")]
    ZeroDenominator,
    #[error("no network for subdomain {0}")]
    MissingNetwork(usize),
    #[error(transparent)]
    Network(#[from] NnError),
}

/// `sqrt(Σ(u − U)² / Σu²)`.
pub fn relative_l2(exact: &[f64], predicted: &[f64]) -> Result<f64, MetricsError> {
    if exact.len() != predicted.len() {
        return Err(MetricsError::LengthMismatch { exact: exact.len(), predicted: predicted.len() });
    }
    if exact.is_empty() {
        return Err(MetricsError::Empty);
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (u, p) in exact.iter().zip(predicted) {
        num += (u - p) * (u - p);
        den += u * u;
    }
    if den == 0.0 {
        return Err(MetricsError::ZeroDenominator);
    }
    Ok(libm::sqrt(num / den))
}

/// Relative error of a vector field with the pointwise Euclidean norm.
pub fn relative_l2_vector(exact: &[[f64; 2]], predicted: &[[f64; 2]]) -> Result<f64, MetricsError> {
    relative_l2(exact.as_flattened(), predicted.as_flattened())
}

/// Inclusive uniform grid with `n` points per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestGrid {
    pub domain: Rect,
    pub n: usize,
}

impl TestGrid {
    pub const DEFAULT_N: usize = 501;

    pub fn new(domain: Rect) -> Self {
        Self { domain, n: Self::DEFAULT_N }
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn coord(lo: f64, hi: f64, k: usize, n: usize) -> f64 {
        if k + 1 == n {
            hi
        } else {
            lo + (hi - lo) * k as f64 / (n - 1) as f64
        }
    }

    /// Row-major points, `x` fastest.
    pub fn points(&self) -> Vec<Point> {
        let d = self.domain;
        let mut out = Vec::with_capacity(self.len());
        for j in 0..self.n {
            let y = Self::coord(d.y[0], d.y[1], j, self.n);
            for i in 0..self.n {
                out.push([Self::coord(d.x[0], d.x[1], i, self.n), y]);
            }
        }
        out
    }

    /// Whether grid point `(i, j)` lies off the outer boundary.
    fn interior(&self, idx: usize) -> bool {
        let (i, j) = (idx % self.n, idx / self.n);
        i > 0 && j > 0 && i + 1 < self.n && j + 1 < self.n
    }
}

/// Network output at one grid point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Prediction {
    pub fields: Fields,
    /// `∂u/∂x + ∂v/∂y` (vector problems only).
    pub divergence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubdomainError {
    pub subdomain: usize,
    pub points: usize,
    /// `None` when the exact solution vanishes on every point of the subdomain.
    pub epsilon_u: Option<f64>,
    pub epsilon_p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub epoch: usize,
    /// Scalar solution error, or velocity error for Stokes.
    pub epsilon_u: f64,
    /// Pressure error as defined, without gauge fixing.
    pub epsilon_p: Option<f64>,
    /// Pressure error after removing the grid-mean offset.
    pub epsilon_p_adjusted: Option<f64>,
    /// Mean `|∇·U|` over grid points off the outer boundary.
    pub mean_abs_divergence: Option<f64>,
    pub per_subdomain: Vec<SubdomainError>,
    pub grid: TestGrid,
}

/// Errors of `predict(subdomain, points)` against the exact solution.
///
/// Each grid point goes to the subdomain returned by `locate`.
pub fn evaluate_with(
    problem: &Problem,
    grid: &TestGrid,
    epoch: usize,
    mut predict: impl FnMut(usize, &[Point]) -> Result<Vec<Prediction>, MetricsError>,
) -> Result<ErrorReport, MetricsError> {
    let kind = problem.kind;
    let vector = kind.field_count() == 3;
    let points = grid.points();
    let owner: Vec<usize> = points.iter().map(|&x| problem.partition.locate(x)).collect();
    let n_sub = problem.n_subdomains();
    let mut pred = vec![Prediction::default(); points.len()];
    for s in 0..n_sub {
        let idx: Vec<usize> = (0..points.len()).filter(|&k| owner[k] == s).collect();
        if idx.is_empty() {
            continue;
        }
        let pts: Vec<Point> = idx.iter().map(|&k| points[k]).collect();
        let out = predict(s, &pts)?;
        if out.len() != pts.len() {
            return Err(MetricsError::LengthMismatch { exact: pts.len(), predicted: out.len() });
        }
        for (&k, p) in idx.iter().zip(out) {
            pred[k] = p;
        }
    }
    let exact: Vec<Fields> = points.iter().map(|&x| kind.exact(x)).collect();

    let field = |v: &[Fields], f: usize, sel: &dyn Fn(usize) -> bool| -> Vec<f64> { (0..v.len()).filter(|&k| sel(k)).map(|k| v[k][f]).collect() };
    let predicted: Vec<Fields> = pred.iter().map(|p| p.fields).collect();
    let velocity = |sel: &dyn Fn(usize) -> bool| -> Result<f64, MetricsError> {
        if vector {
            let e: Vec<[f64; 2]> = (0..points.len()).filter(|&k| sel(k)).map(|k| [exact[k][0], exact[k][1]]).collect();
            let p: Vec<[f64; 2]> = (0..points.len()).filter(|&k| sel(k)).map(|k| [predicted[k][0], predicted[k][1]]).collect();
            relative_l2_vector(&e, &p)
        } else {
            relative_l2(&field(&exact, 0, sel), &field(&predicted, 0, sel))
        }
    };
    let all = |_: usize| true;
    let epsilon_u = velocity(&all)?;
    let (mut epsilon_p, mut epsilon_p_adjusted, mut mean_abs_divergence) = (None, None, None);
    if vector {
        let (pe, pp) = (field(&exact, 2, &all), field(&predicted, 2, &all));
        epsilon_p = Some(relative_l2(&pe, &pp)?);
        let offset = pe.iter().zip(&pp).map(|(e, p)| p - e).sum::<f64>() / pe.len() as f64;
        let shifted: Vec<f64> = pp.iter().map(|p| p - offset).collect();
        epsilon_p_adjusted = Some(relative_l2(&pe, &shifted)?);
        let inner: Vec<f64> = (0..points.len()).filter(|&k| grid.interior(k)).map(|k| libm::fabs(pred[k].divergence)).collect();
        if !inner.is_empty() {
            mean_abs_divergence = Some(inner.iter().sum::<f64>() / inner.len() as f64);
        }
    }

    let mut per_subdomain = Vec::with_capacity(n_sub);
    for s in 0..n_sub {
        let sel = |k: usize| owner[k] == s;
        let count = owner.iter().filter(|&&o| o == s).count();
        let ok = |r: Result<f64, MetricsError>| r.ok();
        per_subdomain.push(SubdomainError {
            subdomain: s,
            points: count,
            epsilon_u: ok(velocity(&sel)),
            epsilon_p: if vector { ok(relative_l2(&field(&exact, 2, &sel), &field(&predicted, 2, &sel))) } else { None },
        });
    }
    Ok(ErrorReport { epoch, epsilon_u, epsilon_p, epsilon_p_adjusted, mean_abs_divergence, per_subdomain, grid: *grid })
}

/// Points per network call.
const CHUNK: usize = 4096;

/// Errors of the stitched network `U(x) = U_i(x; θ_i)` for `x ∈ Ω_i`.
pub fn evaluate_on_grid(problem: &Problem, nets: &[Network], params: &[Params], grid: &TestGrid, epoch: usize) -> Result<ErrorReport, MetricsError> {
    let vector = problem.kind.field_count() == 3;
    let order = if vector { DerivOrder::Gradient } else { DerivOrder::Value };
    evaluate_with(problem, grid, epoch, |s, pts| {
        let (net, theta) = nets.get(s).zip(params.get(s)).ok_or(MetricsError::MissingNetwork(s))?;
        let mut out = Vec::with_capacity(pts.len());
        for chunk in pts.chunks(CHUNK) {
            let ev = net.eval_batch(theta, points_view(chunk), order)?;
            let fields = net.output_dim().min(3);
            for p in 0..chunk.len() {
                let mut pr = Prediction::default();
                for f in 0..fields {
                    pr.fields[f] = ev.value(f)[p];
                }
                if vector {
                    pr.divergence = ev.gradient(0, 0)?[p] + ev.gradient(1, 1)?[p];
                }
                out.push(pr);
            }
        }
        Ok(out)
    })
}

/// Mean and sample standard deviation of replicate values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// `n − 1` divisor; absent for a single replicate.
    pub std: Option<f64>,
    pub n: usize,
}

/// Order-independent mean and standard deviation.
pub fn aggregate(values: &[f64]) -> Result<Summary, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let mean = v.iter().sum::<f64>() / n as f64;
    let std = (n >= 2).then(|| libm::sqrt(v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64));
    Ok(Summary { mean, std, n })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::ProblemKind;
    use proptest::prelude::*;

    #[test]
    fn relative_l2_examples() {
        assert_eq!(relative_l2(&[1.0, -2.0], &[1.0, -2.0]).unwrap(), 0.0);
        assert_eq!(relative_l2(&[1.0, -2.0, 0.5], &[0.0; 3]).unwrap(), 1.0);
        assert!((relative_l2_vector(&[[3.0, 4.0]], &[[3.0, 0.0]]).unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(relative_l2(&[0.0, 0.0], &[1.0, 0.0]), Err(MetricsError::ZeroDenominator));
        assert!(matches!(relative_l2(&[1.0], &[1.0, 2.0]), Err(MetricsError::LengthMismatch { .. })));
        assert_eq!(relative_l2(&[], &[]), Err(MetricsError::Empty));
    }

    #[test]
    fn grid_is_corner_inclusive() {
        let g = TestGrid::new(Rect::square(0.0, 1.0));
        let pts = g.points();
        assert_eq!(pts.len(), 251_001);
        assert_eq!(pts[0], [0.0, 0.0]);
        assert_eq!(pts[1], [1.0 / 500.0, 0.0]);
        assert_eq!(pts[pts.len() - 1], [1.0, 1.0]);
        assert_eq!(TestGrid::new(ProblemKind::StokesInterface.domain()).points().len(), 251_001);
    }

    #[test]
    fn exact_predictions_have_zero_error() {
        for kind in ProblemKind::ALL {
            let problem = Problem::native(kind);
            let grid = TestGrid { domain: kind.domain(), n: 101 };
            let r = evaluate_with(&problem, &grid, 0, |_, pts| {
                Ok(pts.iter().map(|&x| Prediction { fields: kind.exact(x), divergence: 0.0 }).collect())
            })
            .unwrap();
            assert!(r.epsilon_u < 1e-12);
            if kind == ProblemKind::StokesInterface {
                assert!(r.epsilon_p.unwrap() < 1e-12 && r.epsilon_p_adjusted.unwrap() < 1e-12);
            }
        }
    }

    #[test]
    fn pressure_offset_only_affects_literal_error() {
        let kind = ProblemKind::StokesInterface;
        let problem = Problem::native(kind);
        let grid = TestGrid { domain: kind.domain(), n: 51 };
        let r = evaluate_with(&problem, &grid, 0, |_, pts| {
            Ok(pts
                .iter()
                .map(|&x| {
                    let e = kind.exact(x);
                    Prediction { fields: [e[0], e[1], e[2] + 3.0], divergence: 0.0 }
                })
                .collect())
        })
        .unwrap();
        assert!(r.epsilon_p.unwrap() > 1e-3);
        assert!(r.epsilon_p_adjusted.unwrap() < 1e-12);
        assert!(r.epsilon_u < 1e-12);
    }

    #[test]
    fn aggregate_examples() {
        let s = aggregate(&[2.0, 2.0, 2.0]).unwrap();
        assert_eq!((s.mean, s.std), (2.0, Some(0.0)));
        let s = aggregate(&[1.0, 3.0]).unwrap();
        assert_eq!(s.mean, 2.0);
        assert!((s.std.unwrap() - 1.41421).abs() < 1e-5);
        assert_eq!(aggregate(&[4.0]).unwrap().std, None);
        assert_eq!(aggregate(&[]), Err(MetricsError::Empty));
    }

    proptest! {
        #[test]
        fn relative_l2_is_scale_invariant(v in proptest::collection::vec((-10.0..10.0f64, -10.0..10.0f64), 1..40), c in 0.01..100.0f64, neg in any::<bool>()) {
            let c = if neg { -c } else { c };
            let (e, p): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
            prop_assume!(e.iter().any(|x| x.abs() > 1e-3));
            let a = relative_l2(&e, &p).unwrap();
            let es: Vec<f64> = e.iter().map(|x| x * c).collect();
            let ps: Vec<f64> = p.iter().map(|x| x * c).collect();
            let b = relative_l2(&es, &ps).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }

        #[test]
        fn aggregate_is_order_independent(mut v in proptest::collection::vec(-1e3..1e3f64, 2..12), seed in any::<u64>()) {
            let a = aggregate(&v).unwrap();
            let k = (seed % v.len() as u64) as usize;
            v.rotate_left(k);
            v.reverse();
            prop_assert_eq!(a, aggregate(&v).unwrap());
        }

        #[test]
        fn error_is_zero_only_for_exact(v in proptest::collection::vec(-10.0..10.0f64, 1..20), k in 0usize..20, d in 1e-6..1.0f64) {
            prop_assume!(v.iter().any(|x| *x != 0.0));
            prop_assert_eq!(relative_l2(&v, &v).unwrap(), 0.0);
            let mut w = v.clone();
            let k = k % w.len();
            w[k] += d;
            prop_assert!(relative_l2(&v, &w).unwrap() > 0.0);
        }
    }
}
