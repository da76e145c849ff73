//! Frozen-coefficient SDRE feedback and closed-loop pair trajectories.

use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::{dot, Mat2, Vec2};
use crate::model::{self, BinaryState, ModelConfig, TransformedState};
use crate::riccati::{solve_care, RiccatiProblem};
use crate::{Error, Result};

/// Below this many states a feedback batch is evaluated serially.
const PAR_THRESHOLD: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeedbackEval {
    /// Control in transformed coordinates.
    pub u: Vec2,
    pub pi: Mat2,
    pub value: f64,
    pub grad_v: Vec2,
}

/// `u = −½ R⁻¹ Bᵀ ∇V` with `B = I`, `R = (γ/2) I`.
#[inline]
pub fn control_from_gradient(grad: Vec2, cfg: &ModelConfig) -> Vec2 {
    let c = -0.5 / cfg.r_scalar();
    [c * grad[0], c * grad[1]]
}

pub fn riccati_problem(t: TransformedState, cfg: &ModelConfig) -> RiccatiProblem {
    let w = model::cost_weights(cfg);
    RiccatiProblem::new(model::semilinear_a(t, cfg), w.b, w.q, w.r)
}

/// Freezes `A(x)` at `t`, solves the algebraic Riccati equation and returns
/// the feedback `u = −R⁻¹BᵀΠx` with `V = xᵀΠx`, `∇V ≈ 2Πx`.
pub fn sdre_feedback(t: TransformedState, cfg: &ModelConfig) -> Result<FeedbackEval> {
    let p = riccati_problem(t, cfg);
    let sol = solve_care(&p).map_err(|source| Error::RiccatiAt { xi: t.xi, xbar: t.xbar, source })?;
    let x = t.as_vec();
    let pix = sol.pi.mul_vec(x);
    let grad_v = [2.0 * pix[0], 2.0 * pix[1]];
    Ok(FeedbackEval {
        u: control_from_gradient(grad_v, cfg),
        pi: sol.pi,
        value: dot(x, pix),
        grad_v,
    })
}

/// A state feedback defined on transformed pair states.
pub trait FeedbackLaw: Sync {
    fn controls(&self, states: &[TransformedState]) -> Result<Vec<Vec2>>;
}

#[derive(Clone, Copy, Debug)]
pub struct SdreLaw {
    pub cfg: ModelConfig,
}

impl FeedbackLaw for SdreLaw {
    fn controls(&self, states: &[TransformedState]) -> Result<Vec<Vec2>> {
        let eval = |t: &TransformedState| sdre_feedback(*t, &self.cfg).map(|f| f.u);
        if states.len() < PAR_THRESHOLD {
            states.iter().map(eval).collect()
        } else {
            states.par_iter().map(eval).collect()
        }
    }
}

/// States at which each agent of the pair evaluates the feedback: its own
/// opinion and the shared pair mean.
pub fn pair_views(s: BinaryState) -> [TransformedState; 2] {
    let xbar = 0.5 * (s.xi + s.xj);
    [TransformedState::new(s.xi, xbar), TransformedState::new(s.xj, xbar)]
}

/// Controls `(u(x_i, x_j), u(x_j, x_i))` from any feedback law.
pub fn pair_controls_with(law: &dyn FeedbackLaw, s: BinaryState) -> Result<(f64, f64)> {
    let u = law.controls(&pair_views(s))?;
    Ok((u[0][0], u[1][0]))
}

pub fn pair_controls(s: BinaryState, cfg: &ModelConfig) -> Result<(f64, f64)> {
    pair_controls_with(&SdreLaw { cfg: *cfg }, s)
}

/// Explicit Euler step of the controlled pair, clamped to `Ω`. The second
/// value counts clamped coordinates.
#[inline]
pub fn euler_pair_step(s: BinaryState, u: (f64, f64), dt: f64, cfg: &ModelConfig) -> (BinaryState, u32) {
    let (di, dj) = model::binary_drift(s, cfg);
    let xi = s.xi + dt * (di + u.0);
    let xj = s.xj + dt * (dj + u.1);
    let mut hits = 0;
    let mut clamp = |x: f64| {
        if x > 1.0 || x < -1.0 {
            hits += 1;
        }
        x.clamp(-1.0, 1.0)
    };
    let next = BinaryState::new(clamp(xi), clamp(xj));
    (next, hits)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    None,
    Sdre,
    NnValue,
    NnDirect,
    OpenLoop,
}

impl FromStr for ControllerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => ControllerKind::None,
            "sdre" => ControllerKind::Sdre,
            "nn_value" | "nn-value" => ControllerKind::NnValue,
            "nn_direct" | "nn-direct" => ControllerKind::NnDirect,
            "openloop" | "open_loop" | "pmp" => ControllerKind::OpenLoop,
            other => return Err(Error::InvalidConfig(format!("unknown controller '{other}'"))),
        })
    }
}

impl std::fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ControllerKind::None => "none",
            ControllerKind::Sdre => "sdre",
            ControllerKind::NnValue => "nn_value",
            ControllerKind::NnDirect => "nn_direct",
            ControllerKind::OpenLoop => "openloop",
        })
    }
}

pub enum PairController<'a> {
    Uncontrolled,
    Feedback(&'a dyn FeedbackLaw),
    /// Piecewise-constant controls `(u_i, u_j)` per Euler step; zero past the end.
    OpenLoop(&'a [(f64, f64)]),
}

impl PairController<'_> {
    fn controls(&self, s: BinaryState, step: usize) -> Result<(f64, f64)> {
        match self {
            PairController::Uncontrolled => Ok((0.0, 0.0)),
            PairController::Feedback(law) => pair_controls_with(*law, s),
            PairController::OpenLoop(u) => Ok(u.get(step).copied().unwrap_or((0.0, 0.0))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub states: Vec<BinaryState>,
    pub controls: Vec<(f64, f64)>,
    pub running_cost: Vec<f64>,
    pub consensus_gap: Vec<f64>,
    pub clamp_hits: u32,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Left-point quadrature of the running cost over the recorded horizon.
    pub fn total_cost(&self) -> f64 {
        self.times
            .windows(2)
            .zip(&self.running_cost)
            .map(|(w, c)| (w[1] - w[0]) * c)
            .sum()
    }

    /// First recorded time with gap below `threshold`.
    pub fn first_time_below(&self, threshold: f64) -> Option<f64> {
        self.consensus_gap
            .iter()
            .position(|g| *g < threshold)
            .map(|k| self.times[k])
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,xi,xj,ui,uj,cost,gap")?;
        for k in 0..self.len() {
            let s = self.states[k];
            let u = self.controls[k];
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                self.times[k], s.xi, s.xj, u.0, u.1, self.running_cost[k], self.consensus_gap[k]
            )?;
        }
        Ok(())
    }

    fn push(&mut self, t: f64, s: BinaryState, u: (f64, f64), cfg: &ModelConfig) {
        let ts = model::to_transformed(s);
        self.times.push(t);
        self.states.push(s);
        self.controls.push(u);
        self.running_cost.push(model::running_cost(ts, [u.0, u.1], cfg));
        self.consensus_gap.push(s.gap());
    }
}

pub fn n_steps(dt: f64, horizon: f64) -> Result<usize> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidConfig(format!("dt must be positive, got {dt}")));
    }
    if !(horizon >= dt) {
        return Err(Error::InvalidConfig(format!("horizon {horizon} shorter than dt {dt}")));
    }
    Ok((horizon / dt).round() as usize)
}

/// Forward-Euler pair trajectory under the given controller, recording cost
/// `xᵀQx + uᵀRu` (transformed state, physical pair controls) at every node.
pub fn integrate_closed_loop(
    s0: BinaryState,
    controller: &PairController<'_>,
    dt: f64,
    horizon: f64,
    cfg: &ModelConfig,
) -> Result<TrajectoryRecord> {
    s0.validate()?;
    let steps = n_steps(dt, horizon)?;
    let mut rec = TrajectoryRecord::default();
    let mut s = s0;
    for k in 0..=steps {
        let u = controller.controls(s, k)?;
        rec.push(k as f64 * dt, s, u, cfg);
        if k == steps {
            break;
        }
        let (next, hits) = euler_pair_step(s, u, dt, cfg);
        if !(next.xi.is_finite() && next.xj.is_finite()) {
            return Err(Error::NonFinite(format!("pair state at t = {}", (k + 1) as f64 * dt)));
        }
        rec.clamp_hits += hits;
        s = next;
    }
    Ok(rec)
}
