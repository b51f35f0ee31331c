//! Partitioned physics-informed neural networks for second-order PDEs on
//! non-overlapping subdomain partitions.
//!
//! Every subdomain `Ω_i` carries its own small sine-activated network
//! `U_i(x; θ_i)`. Training uses localized losses: the coupling to neighbours
//! enters only through frozen interface targets (averaged traces plus half of
//! the prescribed jump), optionally enriched with Lagrange multiplier terms on
//! the boundary, interface and divergence constraints. Three schedules are
//! provided in [`train`]: exchange every epoch without multipliers, exchange
//! every epoch with multipliers, and an outer iteration that exchanges once
//! every `N_l` local epochs.
//!
//! The crate is `no_std` (with `alloc`). The default `std` feature only turns
//! on runtime CPU feature detection in the matrix kernels and `std` error
//! impls; results are bitwise identical either way because all transcendental
//! functions come from `libm`.
#![no_std]
#![warn(missing_debug_implementations)]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod geometry;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod oracle;
pub mod problems;
pub mod rng;
pub mod train;

/// A point in the plane.
pub type Point = [f64; 2];
