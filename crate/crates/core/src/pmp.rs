//! Open-loop baseline from Pontryagin's conditions on a finite horizon.
//!
//! The pair problem is discretized first (explicit Euler on the same grid as
//! the closed-loop integrator) and then optimized by forward–backward sweeps.
//! The backward sweep propagates the costate together with a Gauss–Newton
//! value Hessian; the latter preconditions the update, which matters because
//! the uncontrolled dynamics separate opinions and plain adjoint sweeps blow
//! up like `e^T`. Each update is accepted by Armijo backtracking on the cost.
//! At a fixed point the discrete optimality condition `2r·u_k + λ_{k+1} = 0`
//! holds.

use crate::linalg::{dot, Mat2, Vec2};
use crate::model::{self, BinaryState, ModelConfig};
use crate::sdre::{euler_pair_step, integrate_closed_loop, n_steps, PairController, TrajectoryRecord};
use crate::{Error, Result};

const ARMIJO_C: f64 = 1e-4;
const MIN_STEP: f64 = 1e-12;
const ROUNDING_FLOOR: f64 = 64.0 * f64::EPSILON;

#[derive(Clone, Debug)]
pub struct PmpResult {
    pub trajectory: TrajectoryRecord,
    /// Piecewise-constant pair controls `(u_i, u_j)`, one per Euler step.
    pub controls: Vec<(f64, f64)>,
    /// Discrete cost `Σ dt·(xᵀQx + uᵀRu)` of the returned controls.
    pub cost: f64,
    pub sweeps: usize,
    /// False when `max_sweeps` ran out or the line search stalled; the best
    /// iterate is still returned.
    pub converged: bool,
}

struct Problem<'a> {
    s0: BinaryState,
    dt: f64,
    steps: usize,
    cfg: &'a ModelConfig,
}

/// States `x_0..x_N`, controls, cost, and per step a 0/1 mask of the
/// components of `x_{k+1}` that were not clamped to `Ω`.
struct Rollout {
    xs: Vec<BinaryState>,
    us: Vec<(f64, f64)>,
    free: Vec<Vec2>,
    cost: f64,
}

struct Sweep {
    feedforward: Vec<Vec2>,
    gains: Vec<Mat2>,
    /// Predicted change `α·lin + α²·quad` of the cost.
    lin: f64,
    quad: f64,
}

impl Problem<'_> {
    /// Rollout with `u_k = ū_k + α·k_k + K_k(x_k − x̄_k)`; without an update
    /// the controls in `base` are applied as given.
    fn rollout(&self, base: &[(f64, f64)], update: Option<(&Rollout, &Sweep, f64)>) -> Rollout {
        let mut ro = Rollout {
            xs: Vec::with_capacity(self.steps + 1),
            us: Vec::with_capacity(self.steps),
            free: Vec::with_capacity(self.steps),
            cost: 0.0,
        };
        let mut s = self.s0;
        for k in 0..self.steps {
            let mut u = base[k];
            if let Some((nom, sw, alpha)) = update {
                let dx = [s.xi - nom.xs[k].xi, s.xj - nom.xs[k].xj];
                let fb = sw.gains[k].mul_vec(dx);
                u.0 += alpha * sw.feedforward[k][0] + fb[0];
                u.1 += alpha * sw.feedforward[k][1] + fb[1];
            }
            ro.xs.push(s);
            ro.us.push(u);
            ro.cost += self.dt * model::running_cost(model::to_transformed(s), [u.0, u.1], self.cfg);
            let (di, dj) = model::binary_drift(s, self.cfg);
            let inside = |x: f64| if (-1.0..=1.0).contains(&x) { 1.0 } else { 0.0 };
            ro.free.push([inside(s.xi + self.dt * (di + u.0)), inside(s.xj + self.dt * (dj + u.1))]);
            s = euler_pair_step(s, u, self.dt, self.cfg).0;
        }
        ro.xs.push(s);
        ro
    }

    /// `x_{k+1} = F(x_k, u_k)` linearized: `(A_k, B_k)`.
    fn linearize(&self, s: BinaryState, free: Vec2) -> (Mat2, Mat2) {
        let h = 0.5 * self.cfg.beta;
        let (xi, xj) = (s.xi, s.xj);
        let j = Mat2::new(
            h * (-2.0 * xi * (xj - xi) - (1.0 - xi * xi)),
            h * (1.0 - xi * xi),
            h * (1.0 - xj * xj),
            h * (-2.0 * xj * (xi - xj) - (1.0 - xj * xj)),
        );
        let mask = Mat2::diag(free[0], free[1]);
        (mask * (Mat2::IDENTITY + j.scale(self.dt)), mask.scale(self.dt))
    }

    /// Stage-cost gradient `ℓ_x` at `x_k`; the Hessian is constant.
    fn cost_grad(&self, s: BinaryState) -> Vec2 {
        let g = 0.5 * (s.xi - s.xj);
        [self.dt * g, -self.dt * g]
    }

    fn backward(&self, nom: &Rollout) -> Sweep {
        let r = self.cfg.r_scalar();
        let lxx = Mat2::new(0.5, -0.5, -0.5, 0.5).scale(self.dt);
        let luu = Mat2::scaled_identity(2.0 * r * self.dt);
        let mut vx = [0.0, 0.0];
        let mut vxx = Mat2::ZERO;
        let mut sw = Sweep {
            feedforward: vec![[0.0; 2]; self.steps],
            gains: vec![Mat2::ZERO; self.steps],
            lin: 0.0,
            quad: 0.0,
        };
        for k in (0..self.steps).rev() {
            let s = nom.xs[k];
            let u = nom.us[k];
            let (a, b) = self.linearize(s, nom.free[k]);
            let (at, bt) = (a.transpose(), b.transpose());
            let lx = self.cost_grad(s);
            let atvx = at.mul_vec(vx);
            let btvx = bt.mul_vec(vx);
            let qx = [lx[0] + atvx[0], lx[1] + atvx[1]];
            let qu = [2.0 * r * self.dt * u.0 + btvx[0], 2.0 * r * self.dt * u.1 + btvx[1]];
            let qxx = lxx + at * vxx * a;
            let quu = (luu + bt * vxx * b).symmetrize();
            let qux = bt * vxx * a;
            let quu_inv = quu.inverse().expect("control Hessian is positive definite");
            let kff = quu_inv.mul_vec(qu).map(|v| -v);
            let gain = -(quu_inv * qux);
            let gt = gain.transpose();
            let t1 = gt.mul_vec(quu.mul_vec(kff));
            let t2 = gt.mul_vec(qu);
            let t3 = qux.transpose().mul_vec(kff);
            vx = [qx[0] + t1[0] + t2[0] + t3[0], qx[1] + t1[1] + t2[1] + t3[1]];
            vxx = (qxx + gt * quu * gain + gt * qux + qux.transpose() * gain).symmetrize();
            sw.lin += dot(kff, qu);
            sw.quad += 0.5 * quu.quad_form(kff);
            sw.feedforward[k] = kff;
            sw.gains[k] = gain;
        }
        sw
    }

    /// Exact open-loop adjoint: entry `k` holds `free_k ⊙ λ_{k+1}`, so that
    /// `∂J/∂u_k = dt·(2r·u_k + entry_k)`. Only well conditioned on short horizons.
    #[cfg(test)]
    fn adjoint(&self, ro: &Rollout) -> Vec<Vec2> {
        let mut lam = vec![[0.0; 2]; self.steps];
        let mut next = [0.0, 0.0];
        for k in (0..self.steps).rev() {
            let f = ro.free[k];
            let masked = [f[0] * next[0], f[1] * next[1]];
            lam[k] = masked;
            if k == 0 {
                break;
            }
            let s = ro.xs[k];
            let (a, _) = self.linearize(s, [1.0, 1.0]);
            let back = a.transpose().mul_vec(masked);
            let lx = self.cost_grad(s);
            next = [lx[0] + back[0], lx[1] + back[1]];
        }
        lam
    }
}

/// Solves the finite-horizon pair problem starting from `u ≡ 0`. Converged
/// when the largest control update of a sweep is below `tol`, or when the
/// predicted decrease is already at the rounding level of the cost.
pub fn pmp_open_loop(
    s0: BinaryState,
    horizon: f64,
    dt: f64,
    cfg: &ModelConfig,
    max_sweeps: usize,
    tol: f64,
) -> Result<PmpResult> {
    s0.validate()?;
    cfg.validate()?;
    if !(tol > 0.0) {
        return Err(Error::InvalidConfig(format!("PMP tolerance must be positive, got {tol}")));
    }
    let steps = n_steps(dt, horizon)?;
    let prob = Problem { s0, dt, steps, cfg };

    let mut nom = prob.rollout(&vec![(0.0, 0.0); steps], None);
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < max_sweeps {
        sweeps += 1;
        let sw = prob.backward(&nom);
        let kmax = sw.feedforward.iter().fold(0.0f64, |m, v| m.max(v[0].abs()).max(v[1].abs()));
        if kmax < tol || -sw.lin <= ROUNDING_FLOOR * nom.cost {
            converged = true;
            break;
        }
        let mut alpha = 1.0;
        let accepted = loop {
            let trial = prob.rollout(&nom.us, Some((&nom, &sw, alpha)));
            let predicted = alpha * sw.lin + alpha * alpha * sw.quad;
            if trial.cost.is_finite() && trial.cost <= nom.cost + ARMIJO_C * predicted {
                nom = trial;
                break true;
            }
            alpha *= 0.5;
            if alpha < MIN_STEP {
                break false;
            }
        };
        if !accepted {
            break;
        }
    }
    if nom.xs.iter().any(|s| !(s.xi.is_finite() && s.xj.is_finite())) {
        return Err(Error::NonFinite("PMP forward pass".into()));
    }
    let trajectory = integrate_closed_loop(s0, &PairController::OpenLoop(&nom.us), dt, horizon, cfg)?;
    Ok(PmpResult { trajectory, controls: nom.us, cost: nom.cost, sweeps, converged })
}
