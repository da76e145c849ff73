//! Two-agent Sznajd consensus model.
//!
//! Pair dynamics: `ẋ_i = (β/2)(1 − x_i²)(x_j − x_i) + u_i` (and symmetric for
//! `j`), with state space `Ω = [−1, 1]`. The SDRE problem is posed in the
//! coordinates `(x_i, x̄)`, `x̄ = (x_i + x_j)/2`, where the drift factors as
//! `A(x)·x` with `A = [[−P, P], [−P̄, P̄]]`.

use serde::{Deserialize, Serialize};

use crate::linalg::{Mat2, Vec2};
use crate::{Error, Result};

/// Tolerance for reconstructed opinions slightly outside `Ω`.
pub const DOMAIN_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Kernel strength; negative values separate opinions.
    pub beta: f64,
    /// Control penalty, `R = (γ/2)·I`.
    pub gamma: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        // γ is not reported alongside the experiment; 0.025 reproduces the
        // reported ratio between the control and value-gradient errors.
        ModelConfig { beta: -1.0, gamma: 0.025 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.beta.is_finite() {
            return Err(Error::InvalidConfig(format!("beta must be finite, got {}", self.beta)));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidConfig(format!("gamma must be positive, got {}", self.gamma)));
        }
        Ok(())
    }

    /// Scalar `r` with `R = r·I₂`.
    pub fn r_scalar(&self) -> f64 {
        0.5 * self.gamma
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinaryState {
    pub xi: f64,
    pub xj: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformedState {
    pub xi: f64,
    pub xbar: f64,
}

fn in_domain(x: f64) -> bool {
    (-1.0 - DOMAIN_TOL..=1.0 + DOMAIN_TOL).contains(&x)
}

impl BinaryState {
    pub fn new(xi: f64, xj: f64) -> Self {
        BinaryState { xi, xj }
    }

    pub fn validate(&self) -> Result<()> {
        if !(in_domain(self.xi) && in_domain(self.xj)) {
            return Err(Error::DomainViolation(format!("({}, {})", self.xi, self.xj)));
        }
        Ok(())
    }

    pub fn gap(&self) -> f64 {
        (self.xi - self.xj).abs()
    }

    pub fn swapped(&self) -> Self {
        BinaryState { xi: self.xj, xj: self.xi }
    }
}

impl TransformedState {
    pub fn new(xi: f64, xbar: f64) -> Self {
        TransformedState { xi, xbar }
    }

    pub fn as_vec(&self) -> Vec2 {
        [self.xi, self.xbar]
    }

    /// Opinion of the partner implied by the pair mean.
    pub fn partner(&self) -> f64 {
        2.0 * self.xbar - self.xi
    }

    pub fn validate(&self) -> Result<()> {
        if !(in_domain(self.xi) && in_domain(self.partner())) {
            return Err(Error::DomainViolation(format!(
                "(xi={}, xbar={}) implies xj={}",
                self.xi,
                self.xbar,
                self.partner()
            )));
        }
        Ok(())
    }
}

/// Sznajd kernel `β(1 − x²)`.
#[inline]
pub fn kernel(xi: f64, beta: f64) -> f64 {
    beta * (1.0 - xi * xi)
}

/// Uncontrolled pair drift; the `1/2` is the `1/N_a` prefactor at `N_a = 2`.
#[inline]
pub fn binary_drift(s: BinaryState, cfg: &ModelConfig) -> (f64, f64) {
    let half = 0.5 * cfg.beta;
    (
        half * (1.0 - s.xi * s.xi) * (s.xj - s.xi),
        half * (1.0 - s.xj * s.xj) * (s.xi - s.xj),
    )
}

pub fn to_transformed(s: BinaryState) -> TransformedState {
    TransformedState { xi: s.xi, xbar: 0.5 * (s.xi + s.xj) }
}

pub fn from_transformed(t: TransformedState) -> Result<BinaryState> {
    let s = BinaryState { xi: t.xi, xj: t.partner() };
    s.validate()?;
    Ok(s)
}

/// Semilinear factor `A(x)` with `A(x)·x` equal to the transformed drift.
pub fn semilinear_a(t: TransformedState, cfg: &ModelConfig) -> Mat2 {
    let p = kernel(t.xi, cfg.beta);
    let xj = t.partner();
    // ẋ̄ = (β/2)(x_j² − x_i²)(x̄ − x_i)
    let p_bar = 0.5 * cfg.beta * (xj * xj - t.xi * t.xi);
    Mat2([[-p, p], [-p_bar, p_bar]])
}

/// Transformed drift `(ẋ_i, (ẋ_i + ẋ_j)/2)` computed from the pair dynamics.
pub fn transformed_drift(s: BinaryState, cfg: &ModelConfig) -> Vec2 {
    let (di, dj) = binary_drift(s, cfg);
    [di, 0.5 * (di + dj)]
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostWeights {
    pub q: Mat2,
    pub r: Mat2,
    pub b: Mat2,
}

/// `Q = 2I − J`, `R = (γ/2)I`, `B = I`.
pub fn cost_weights(cfg: &ModelConfig) -> CostWeights {
    CostWeights {
        q: Mat2::new(1.0, -1.0, -1.0, 1.0),
        r: Mat2::scaled_identity(cfg.r_scalar()),
        b: Mat2::IDENTITY,
    }
}

/// Running cost `xᵀQx + uᵀRu` with `x` in transformed coordinates.
pub fn running_cost(t: TransformedState, u: Vec2, cfg: &ModelConfig) -> f64 {
    let w = cost_weights(cfg);
    w.q.quad_form(t.as_vec()) + w.r.quad_form(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const CFG: ModelConfig = ModelConfig { beta: -1.0, gamma: 0.025 };

    #[test]
    fn kernel_values() {
        assert_eq!(kernel(1.0, -1.0), 0.0);
        assert_eq!(kernel(-1.0, 3.5), 0.0);
        assert_eq!(kernel(0.0, -1.0), -1.0);
        assert_eq!(kernel(0.5, -1.0), -0.75);
    }

    #[test]
    fn drift_examples() {
        assert_eq!(binary_drift(BinaryState::new(0.3, 0.3), &CFG), (0.0, 0.0));
        let (a, b) = binary_drift(BinaryState::new(0.0, 0.5), &CFG);
        assert_abs_diff_eq!(a, -0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(b, 0.1875, epsilon = 1e-15);
        let (a, b) = binary_drift(BinaryState::new(-0.5, 0.5), &CFG);
        assert_abs_diff_eq!(a, -0.375, epsilon = 1e-15);
        assert_abs_diff_eq!(b, 0.375, epsilon = 1e-15);
    }

    #[test]
    fn change_of_variables() {
        let t = to_transformed(BinaryState::new(0.2, 0.4));
        assert_abs_diff_eq!(t.xbar, 0.3, epsilon = 1e-16);
        let back = from_transformed(t).unwrap();
        assert_abs_diff_eq!(back.xj, 0.4, epsilon = 1e-15);
        assert_eq!(to_transformed(BinaryState::new(0.7, 0.7)), TransformedState::new(0.7, 0.7));
        assert_eq!(to_transformed(BinaryState::new(-1.0, 1.0)), TransformedState::new(-1.0, 0.0));
        assert!(matches!(
            from_transformed(TransformedState::new(-1.0, 0.5)),
            Err(Error::DomainViolation(_))
        ));
    }

    #[test]
    fn semilinear_factor_at_origin() {
        let a = semilinear_a(TransformedState::new(0.0, 0.0), &CFG);
        assert_eq!(a, Mat2::new(1.0, -1.0, 0.0, 0.0));
    }

    #[test]
    fn consensus_nullspace() {
        let w = cost_weights(&CFG);
        assert_eq!(w.q.mul_vec([1.0, 1.0]), [0.0, 0.0]);
        for k in 0..=200 {
            let c = -1.0 + k as f64 / 100.0;
            let a = semilinear_a(TransformedState::new(c, c), &CFG);
            assert_eq!(a.mul_vec([1.0, 1.0]), [0.0, 0.0]);
        }
    }

    #[test]
    fn semilinear_consistency_over_uniform_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let s = BinaryState::new(rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0));
            let t = to_transformed(s);
            let lhs = semilinear_a(t, &CFG).mul_vec(t.as_vec());
            let rhs = transformed_drift(s, &CFG);
            assert!((lhs[0] - rhs[0]).abs() <= 1e-12 && (lhs[1] - rhs[1]).abs() <= 1e-12);
        }
    }

    #[test]
    fn weights_and_state_cost() {
        let w = cost_weights(&CFG);
        assert_eq!(w.r, Mat2::scaled_identity(0.0125));
        assert_eq!(w.b, Mat2::IDENTITY);
        // xᵀQx = (x_i − x̄)² = ½ Σ_k (x_k − x̄)² for two agents
        let s = BinaryState::new(0.9, -0.3);
        let t = to_transformed(s);
        let mean_form = 0.5 * ((s.xi - t.xbar).powi(2) + (s.xj - t.xbar).powi(2));
        assert_abs_diff_eq!(w.q.quad_form(t.as_vec()), mean_form, epsilon = 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig { beta: -1.0, gamma: 0.0 }.validate().is_err());
        assert!(ModelConfig { beta: f64::NAN, gamma: 1.0 }.validate().is_err());
        assert!(CFG.validate().is_ok());
    }

    proptest! {
        #[test]
        fn transform_round_trip(xi in -1.0f64..=1.0, xj in -1.0f64..=1.0) {
            let back = from_transformed(to_transformed(BinaryState::new(xi, xj))).unwrap();
            prop_assert_eq!(back.xi, xi);
            prop_assert!((back.xj - xj).abs() <= 4.0 * f64::EPSILON);
        }
    }
}
