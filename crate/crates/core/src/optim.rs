//! Adam descent on network parameters and gradient ascent on multipliers.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OptimError {
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("non-finite gradient entry at index {0}")]
    NonFiniteGradient(usize),
}

/// Adam hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Moment estimates of one parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self { config, first_moment: vec![0.0; len], second_moment: vec![0.0; len], step_count: 0 }
    }

    pub fn reset(&mut self) {
        self.first_moment.fill(0.0);
        self.second_moment.fill(0.0);
        self.step_count = 0;
    }

    /// One bias-corrected Adam update of `params` in place.
    ///
    /// The gradient is checked before anything is touched, so a rejected step
    /// leaves both the state and the parameters unchanged.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<(), OptimError> {
        let n = self.first_moment.len();
        if params.len() != n {
            return Err(OptimError::LengthMismatch { expected: n, got: params.len() });
        }
        if grad.len() != n {
            return Err(OptimError::LengthMismatch { expected: n, got: grad.len() });
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(OptimError::NonFiniteGradient(i));
        }
        let AdamConfig { lr, beta1, beta2, epsilon } = self.config;
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - libm::pow(beta1, t as f64);
        let bc2 = 1.0 - libm::pow(beta2, t as f64);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (libm::sqrt(v_hat) + epsilon);
        }
        Ok(())
    }
}

/// Ascent rates of the three multiplier families.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AscentRates {
    /// Outer-boundary multipliers.
    pub alpha0: f64,
    /// Interface multipliers.
    pub alpha_lambda: f64,
    /// Divergence multipliers (Stokes only).
    #[serde(default)]
    pub alpha_d: f64,
}

impl AscentRates {
    pub fn is_valid(&self) -> bool {
        [self.alpha0, self.alpha_lambda, self.alpha_d].iter().all(|a| a.is_finite() && *a >= 0.0)
    }
}

/// `λ ← λ + rate · residual`, componentwise.
pub fn ascent_step(multipliers: &mut [f64], residuals: &[f64], rate: f64) -> Result<(), OptimError> {
    if multipliers.len() != residuals.len() {
        return Err(OptimError::LengthMismatch { expected: multipliers.len(), got: residuals.len() });
    }
    for (l, r) in multipliers.iter_mut().zip(residuals) {
        *l += rate * r;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut st = AdamState::new(3, AdamConfig::default());
        let mut p = vec![0.5, -1.0, 2.0];
        st.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![0.5, -1.0, 2.0]);
        assert_eq!(st.step_count, 1);
    }

    #[test]
    fn first_step_by_hand() {
        // m = 0.2, v = 0.004, m̂ = 2, v̂ = 4, Δ = 0.001·2/(2 + 1e-8)
        let mut st = AdamState::new(1, AdamConfig::default());
        let mut p = vec![0.0];
        st.step(&mut p, &[2.0]).unwrap();
        let expected = -0.001 * 2.0 / (2.0 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-18);
        assert!((p[0] + 0.000_999_999_995).abs() < 1e-15);
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut st = AdamState::new(2, AdamConfig::default());
            let mut p = vec![0.3, 0.7];
            for k in 0..10 {
                st.step(&mut p, &[0.1 * k as f64, -0.3]).unwrap();
            }
            (st, p)
        };
        let (a, pa) = run();
        let (b, pb) = run();
        assert_eq!(a, b);
        assert_eq!(pa.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), pb.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn rejects_bad_input() {
        let mut st = AdamState::new(2, AdamConfig::default());
        let mut p = vec![1.0, 1.0];
        assert!(matches!(st.step(&mut p, &[1.0]), Err(OptimError::LengthMismatch { .. })));
        assert!(matches!(st.step(&mut p, &[1.0, f64::NAN]), Err(OptimError::NonFiniteGradient(1))));
        assert_eq!(st.step_count, 0);
        assert_eq!(p, vec![1.0, 1.0]);
    }

    #[test]
    fn one_step_decreases_a_quadratic() {
        // f(θ) = θᵀAθ / 2 with A = [[3, 1], [1, 2]]
        let f = |t: &[f64]| 0.5 * (3.0 * t[0] * t[0] + 2.0 * t[0] * t[1] + 2.0 * t[1] * t[1]);
        for start in [[1.0, -0.5], [-0.2, 0.9], [1e-3, 2e-3]] {
            let mut st = AdamState::new(2, AdamConfig::default());
            let mut t = start.to_vec();
            let g = [3.0 * t[0] + t[1], t[0] + 2.0 * t[1]];
            let before = f(&t);
            st.step(&mut t, &g).unwrap();
            assert!(f(&t) < before);
        }
    }

    #[test]
    fn ascent_examples() {
        let mut l = vec![0.3];
        ascent_step(&mut l, &[-0.5], 0.1).unwrap();
        assert!((l[0] - 0.25).abs() < 1e-15);

        let mut l = vec![0.3, -1.0];
        ascent_step(&mut l, &[5.0, 7.0], 0.0).unwrap();
        assert_eq!(l, vec![0.3, -1.0]);

        let mut l = vec![0.0];
        for _ in 0..7 {
            ascent_step(&mut l, &[0.5], 0.25).unwrap();
        }
        assert!((l[0] - 7.0 * 0.25 * 0.5).abs() < 1e-15);

        assert!(ascent_step(&mut [0.0], &[1.0, 2.0], 0.1).is_err());
    }

    proptest! {
        #[test]
        fn ascent_is_linear(l1 in -10.0..10.0f64, l2 in -10.0..10.0f64, r in -10.0..10.0f64, a in 0.0..1.0f64) {
            let mut lhs = vec![l1 + l2];
            ascent_step(&mut lhs, &[r], a).unwrap();
            let mut rhs = vec![l1];
            ascent_step(&mut rhs, &[r], a).unwrap();
            prop_assert!((lhs[0] - (rhs[0] + l2)).abs() < 1e-12);
        }
    }
}
