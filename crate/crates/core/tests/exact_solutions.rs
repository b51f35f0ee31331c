use ddpinn_core::geometry::{latin_hypercube, InterfaceGeometry};
use ddpinn_core::problems::{exact_jet, tangential_force, PdeForm, Problem, ProblemKind};
use ddpinn_core::Point;

fn random_points(kind: ProblemKind, region: usize, n: usize, seed: u64) -> Vec<Point> {
    let d = kind.domain();
    let mut out = Vec::new();
    let mut s = seed;
    while out.len() < n {
        let pts = latin_hypercube(4 * n, &[(d.x[0], d.x[1]), (d.y[0], d.y[1])], s).unwrap();
        out.extend(pts.iter().map(|p| [p[0], p[1]]).filter(|&x| kind.region(x) == region));
        s += 1;
    }
    out.truncate(n);
    out
}

fn points_on(problem: &Problem, k: usize, n: usize, seed: u64) -> Vec<Point> {
    let f = problem.partition.interfaces()[k];
    let ts = latin_hypercube(n, &[(0.0, 1.0)], seed).unwrap();
    ts.iter()
        .map(|t| match f.geometry {
            InterfaceGeometry::Segment { a, b } => [a[0] + t[0] * (b[0] - a[0]), a[1] + t[0] * (b[1] - a[1])],
            InterfaceGeometry::Circle { center, radius } => {
                let th = 2.0 * std::f64::consts::PI * t[0];
                [center[0] + radius * th.cos(), center[1] + radius * th.sin()]
            }
        })
        .collect()
}

#[test]
fn pde_residual_of_exact_solution_vanishes() {
    for kind in ProblemKind::ALL {
        for region in 0..kind.region_count() {
            let mut worst = 0.0f64;
            for x in random_points(kind, region, 1000, 11 + region as u64) {
                let u = exact_jet(kind, region, x);
                let f = kind.forcing(x);
                match kind.form() {
                    PdeForm::Poisson => {
                        let c = kind.coefficient(x);
                        worst = worst.max((-c * u[0].l - f[0]).abs());
                    }
                    PdeForm::Stokes { mu } => {
                        for k in 0..2 {
                            worst = worst.max((-mu * u[k].l + u[2].g[k] - f[k]).abs());
                        }
                        worst = worst.max((u[0].g[0] + u[1].g[1]).abs());
                    }
                }
            }
            assert!(worst < 1e-8, "{} region {region}: residual {worst:e}", kind.name());
        }
    }
}

#[test]
fn closed_form_values_match_jets() {
    for kind in ProblemKind::ALL {
        for region in 0..kind.region_count() {
            for x in random_points(kind, region, 200, 3) {
                let closed = kind.exact_in_region(region, x);
                let jets = exact_jet(kind, region, x);
                for f in 0..kind.field_count() {
                    assert!((closed[f] - jets[f].v).abs() < 1e-12 * closed[f].abs().max(1.0));
                }
            }
        }
    }
}

#[test]
fn jets_match_five_point_stencils() {
    let h = 1e-4;
    for kind in ProblemKind::ALL {
        for region in 0..kind.region_count() {
            for x in random_points(kind, region, 100, 5) {
                let jets = exact_jet(kind, region, x);
                for f in 0..kind.field_count() {
                    let u = |dx: f64, dy: f64| kind.exact_in_region(region, [x[0] + dx, x[1] + dy])[f];
                    let d1 = |e: [f64; 2]| {
                        (-u(2.0 * h * e[0], 2.0 * h * e[1]) + 8.0 * u(h * e[0], h * e[1]) - 8.0 * u(-h * e[0], -h * e[1])
                            + u(-2.0 * h * e[0], -2.0 * h * e[1]))
                            / (12.0 * h)
                    };
                    let d2 = |e: [f64; 2]| {
                        (-u(2.0 * h * e[0], 2.0 * h * e[1]) + 16.0 * u(h * e[0], h * e[1]) - 30.0 * u(0.0, 0.0)
                            + 16.0 * u(-h * e[0], -h * e[1])
                            - u(-2.0 * h * e[0], -2.0 * h * e[1]))
                            / (12.0 * h * h)
                    };
                    let fd_g = [d1([1.0, 0.0]), d1([0.0, 1.0])];
                    let fd_l = d2([1.0, 0.0]) + d2([0.0, 1.0]);
                    let j = jets[f];
                    // stencil rounding grows with |u|, so compare relative to the local scale
                    let scale = j.v.abs().max(j.g[0].abs()).max(j.g[1].abs()).max(j.l.abs()).max(1.0);
                    for k in 0..2 {
                        assert!((fd_g[k] - j.g[k]).abs() < 1e-6 * scale, "{} grad", kind.name());
                    }
                    assert!((fd_l - j.l).abs() < 1e-6 * scale, "{} lap {fd_l} {}", kind.name(), j.l);
                }
            }
        }
    }
}

#[test]
fn jump_data_matches_two_sided_derivatives() {
    for kind in ProblemKind::ALL {
        let problem = Problem::native(kind);
        for (k, f) in problem.partition.interfaces().iter().enumerate() {
            // native partitions number subdomains like the solution regions
            let (lo, hi) = (f.lo, f.hi);
            let (clo, chi) = (problem.flux_coefficients(lo), problem.flux_coefficients(hi));
            for x in points_on(&problem, k, 1000, 21 + k as u64) {
                let n = problem.partition.canonical_normal(k, x).unwrap();
                let jlo = exact_jet(kind, lo, x);
                let jhi = exact_jet(kind, hi, x);
                let jump = problem.jump(k, x).unwrap();
                for fld in 0..kind.field_count() {
                    let p = jhi[fld].v - jlo[fld].v;
                    let q = chi[fld] * jhi[fld].dn(n) - clo[fld] * jlo[fld].dn(n);
                    assert!((p - jump.p[fld]).abs() < 1e-8, "{} p {p} vs {}", kind.name(), jump.p[fld]);
                    assert!((q - jump.q[fld]).abs() < 1e-8, "{} q {q} vs {}", kind.name(), jump.q[fld]);
                }
            }
        }
    }
}

#[test]
fn smooth_and_stokes_value_jumps_vanish() {
    for kind in [ProblemKind::PoissonSmooth, ProblemKind::StokesInterface] {
        let problem = Problem::native(kind);
        for k in 0..problem.partition.interfaces().len() {
            for x in points_on(&problem, k, 200, 2) {
                let j = problem.jump(k, x).unwrap();
                assert_eq!(j.p, [0.0; 3]);
                if kind == ProblemKind::PoissonSmooth {
                    assert_eq!(j.q, [0.0; 3]);
                }
            }
        }
    }
}

#[test]
fn stokes_flux_jump_is_tangential_force() {
    let problem = Problem::native(ProblemKind::StokesInterface);
    for i in 0..1000 {
        let s = 2.0 * std::f64::consts::PI * (i as f64 + 0.5) / 1000.0;
        let x = [s.cos(), s.sin()];
        let n = problem.partition.canonical_normal(0, x).unwrap();
        let inner = exact_jet(ProblemKind::StokesInterface, 0, x);
        let outer = exact_jet(ProblemKind::StokesInterface, 1, x);
        let t = [-s.sin(), s.cos()];
        for k in 0..2 {
            let q = outer[k].dn(n) - inner[k].dn(n);
            assert!((q - tangential_force(s) * t[k]).abs() < 1e-8);
        }
        // pressure continuity, F_n = 0
        assert!((outer[2].v - inner[2].v).abs() < 1e-12);
    }
}

#[test]
fn stokes_matches_polar_form() {
    for region in 0..2 {
        for x in random_points(ProblemKind::StokesInterface, region, 300, 9) {
            let r = x[0].hypot(x[1]);
            let s = x[1].atan2(x[0]);
            let c = |m: f64| (m * s).cos();
            let sn = |m: f64| (m * s).sin();
            let (u, v, p) = if region == 0 {
                (
                    1.25 * r.powi(2) * c(2.0) + 0.625 * r.powi(4) * c(4.0) - 2.5 * r.powi(4) * c(2.0),
                    -1.25 * r.powi(2) * sn(2.0) + 0.625 * r.powi(4) * sn(4.0) + 2.5 * r.powi(4) * sn(2.0),
                    -10.0 * r.powi(3) * c(3.0),
                )
            } else {
                (
                    -1.25 * r.powi(-2) * c(2.0) + 3.125 * r.powi(-4) * c(4.0) - 2.5 * r.powi(-2) * c(4.0),
                    1.25 * r.powi(-2) * sn(2.0) + 3.125 * r.powi(-4) * sn(4.0) - 2.5 * r.powi(-2) * sn(4.0),
                    -10.0 * r.powi(-3) * c(3.0),
                )
            };
            let e = ProblemKind::StokesInterface.exact_in_region(region, x);
            assert!((e[0] - u).abs() < 1e-10 && (e[1] - v).abs() < 1e-10 && (e[2] - p).abs() < 1e-10);
        }
    }
}

#[test]
fn stokes_velocity_is_continuous_across_circle() {
    for i in 0..360 {
        let s = (i as f64).to_radians();
        let x = [s.cos(), s.sin()];
        let a = ProblemKind::StokesInterface.exact_in_region(0, x);
        let b = ProblemKind::StokesInterface.exact_in_region(1, x);
        assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
    }
}

#[test]
fn boundary_data_is_the_exact_solution() {
    for kind in ProblemKind::ALL {
        let d = kind.domain();
        for (a, b) in d.edges() {
            for t in latin_hypercube(250, &[(0.0, 1.0)], 4).unwrap() {
                let x = [a[0] + t[0] * (b[0] - a[0]), a[1] + t[0] * (b[1] - a[1])];
                let g = kind.boundary(x);
                let u = kind.exact(x);
                for f in 0..kind.boundary_field_count() {
                    assert!((g[f] - u[f]).abs() < 1e-12);
                }
            }
        }
    }
}
