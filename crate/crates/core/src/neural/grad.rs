//! Batched forward pass with input tangents and the matching reverse pass.
//!
//! Each layer carries the activations `a_m` and, for the value network, the
//! two input-direction tangents `T_m^c = ∂a_m/∂x_c`. The reverse pass
//! propagates adjoints of both, which yields the parameter gradient of the
//! gradient-matching loss term.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};

use super::mlp::{Activation, Mlp};
use crate::dataset::LabeledSample;
use crate::linalg::Vec2;

/// Rows per chunk when evaluating large batches.
pub(crate) const CHUNK: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Target {
    /// Scalar `V_θ` fitted to `V` and `∇V`.
    Value,
    /// Two-component `u_θ` fitted to `u`.
    Control,
}

impl Target {
    pub fn out_dim(self) -> usize {
        match self {
            Target::Value => 1,
            Target::Control => 2,
        }
    }
}

/// `total = value + μ·gradient`; for the control target `gradient` is zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub value: f64,
    pub gradient: f64,
}

pub struct LossGrad {
    pub loss: LossParts,
    /// Same shape as the network.
    pub grads: Mlp,
}

struct Tape {
    /// `a_0 … a_L`.
    acts: Vec<Array2<f64>>,
    /// `σ'(z_m)` for sigmoid layers, `None` for identity layers.
    dact: Vec<Option<Array2<f64>>>,
    /// Pre-activation tangents `T_{m−1}^c W_mᵀ`, one pair per layer.
    tz: Vec<[Array2<f64>; 2]>,
    /// Post-activation tangents `T_0^c … T_L^c`.
    tang: Vec<[Array2<f64>; 2]>,
}

fn input_tangents(rows: usize) -> [Array2<f64>; 2] {
    let mut t0 = Array2::zeros((rows, 2));
    let mut t1 = Array2::zeros((rows, 2));
    t0.column_mut(0).fill(1.0);
    t1.column_mut(1).fill(1.0);
    [t0, t1]
}

fn forward_tape(net: &Mlp, x: ArrayView2<'_, f64>, tangents: bool) -> Tape {
    let n = net.layers.len();
    let mut tape = Tape {
        acts: Vec::with_capacity(n + 1),
        dact: Vec::with_capacity(n),
        tz: Vec::new(),
        tang: Vec::new(),
    };
    tape.acts.push(x.to_owned());
    if tangents {
        tape.tang.push(input_tangents(x.nrows()));
    }
    for (m, l) in net.layers.iter().enumerate() {
        let wt = l.weights.t();
        let mut z = tape.acts[m].dot(&wt);
        z += &l.bias.view().insert_axis(Axis(0));
        let tz = if tangents {
            let prev = &tape.tang[m];
            Some([prev[0].dot(&wt), prev[1].dot(&wt)])
        } else {
            None
        };
        match l.activation {
            Activation::Identity => {
                tape.dact.push(None);
                if let Some(tz) = tz {
                    tape.tang.push(tz.clone());
                    tape.tz.push(tz);
                }
            }
            Activation::Sigmoid => {
                z.mapv_inplace(|v| Activation::Sigmoid.apply(v));
                let ds = z.mapv(|s| s * (1.0 - s));
                if let Some(tz) = tz {
                    tape.tang.push([&tz[0] * &ds, &tz[1] * &ds]);
                    tape.tz.push(tz);
                }
                tape.dact.push(Some(ds));
            }
        }
        tape.acts.push(z);
    }
    tape
}

/// Reverse pass from output adjoints `ā_L` and (optionally) tangent adjoints `T̄_L^c`.
fn backward(net: &Mlp, tape: &Tape, mut abar: Array2<f64>, mut tbar: Option<[Array2<f64>; 2]>) -> Mlp {
    let mut grads = net.zeros_like();
    for m in (0..net.layers.len()).rev() {
        let layer = &net.layers[m];
        let a_prev = &tape.acts[m];
        let (zbar, tzbar) = match &tape.dact[m] {
            None => (abar, tbar),
            Some(ds) => {
                let mut zbar = &abar * ds;
                let tzbar = tbar.map(|tb| {
                    let s = &tape.acts[m + 1];
                    let tz = &tape.tz[m];
                    // σ'' = σ'(1 − 2σ) multiplies Σ_c T̄^c ⊙ Tz^c.
                    let mut sbar = &tb[0] * &tz[0];
                    Zip::from(&mut sbar).and(&tb[1]).and(&tz[1]).for_each(|acc, &b1, &z1| *acc += b1 * z1);
                    Zip::from(&mut zbar).and(ds).and(s).and(&sbar).for_each(|zb, &d, &sv, &sb| {
                        *zb += d * (1.0 - 2.0 * sv) * sb;
                    });
                    [&tb[0] * ds, &tb[1] * ds]
                });
                (zbar, tzbar)
            }
        };
        let g = &mut grads.layers[m];
        g.weights = zbar.t().dot(a_prev);
        if let Some(tzb) = &tzbar {
            let tprev = &tape.tang[m];
            g.weights += &tzb[0].t().dot(&tprev[0]);
            g.weights += &tzb[1].t().dot(&tprev[1]);
        }
        g.bias = zbar.sum_axis(Axis(0));
        if m > 0 {
            abar = zbar.dot(&layer.weights);
            tbar = tzbar.map(|tzb| [tzb[0].dot(&layer.weights), tzb[1].dot(&layer.weights)]);
        } else {
            abar = Array2::zeros((0, 0));
            tbar = None;
        }
    }
    grads
}

pub(crate) fn inputs(batch: &[LabeledSample]) -> Array2<f64> {
    Array2::from_shape_fn((batch.len(), 2), |(i, c)| {
        let s = batch[i].state;
        if c == 0 {
            s.xi
        } else {
            s.xbar
        }
    })
}

/// Output residuals `(pred − target)` and, for the value target, gradient residuals.
fn residuals(tape: &Tape, batch: &[LabeledSample], target: Target) -> (Array2<f64>, Option<[Array2<f64>; 2]>) {
    let out = tape.acts.last().expect("network has layers");
    match target {
        Target::Value => {
            let mut res = out.clone();
            let tang = tape.tang.last().expect("tangents recorded");
            let mut g0 = tang[0].clone();
            let mut g1 = tang[1].clone();
            for (i, smp) in batch.iter().enumerate() {
                res[[i, 0]] -= smp.value;
                g0[[i, 0]] -= smp.grad_v[0];
                g1[[i, 0]] -= smp.grad_v[1];
            }
            (res, Some([g0, g1]))
        }
        Target::Control => {
            let mut res = out.clone();
            for (i, smp) in batch.iter().enumerate() {
                res[[i, 0]] -= smp.u[0];
                res[[i, 1]] -= smp.u[1];
            }
            (res, None)
        }
    }
}

fn check_target(net: &Mlp, target: Target) {
    assert_eq!(net.out_dim(), target.out_dim(), "network output width does not match the target");
}

fn parts(res: &Array2<f64>, gres: &Option<[Array2<f64>; 2]>, mu: f64, n: f64) -> LossParts {
    let value = res.iter().map(|r| r * r).sum::<f64>() / n;
    let gradient = gres.as_ref().map_or(0.0, |g| {
        (g[0].iter().map(|r| r * r).sum::<f64>() + g[1].iter().map(|r| r * r).sum::<f64>()) / n
    });
    LossParts { total: value + mu * gradient, value, gradient }
}

/// `ℒ₂(V, V_θ) + μ ℒ₂(∇V, ∇V_θ)` for the value target, `ℒ₂(u, u_θ)` for the
/// control target, without parameter gradients.
pub fn loss(net: &Mlp, batch: &[LabeledSample], target: Target, mu_dv: f64) -> LossParts {
    check_target(net, target);
    if batch.is_empty() {
        return LossParts { total: 0.0, value: 0.0, gradient: 0.0 };
    }
    let mut sums = (0.0, 0.0);
    for chunk in batch.chunks(CHUNK) {
        let x = inputs(chunk);
        let tape = forward_tape(net, x.view(), target == Target::Value);
        let (res, gres) = residuals(&tape, chunk, target);
        let p = parts(&res, &gres, mu_dv, 1.0);
        sums.0 += p.value;
        sums.1 += p.gradient;
    }
    let n = batch.len() as f64;
    let (value, gradient) = (sums.0 / n, sums.1 / n);
    LossParts { total: value + mu_dv * gradient, value, gradient }
}

/// Loss and its exact gradient with respect to every weight and bias.
pub fn loss_and_param_grad(net: &Mlp, batch: &[LabeledSample], target: Target, mu_dv: f64) -> LossGrad {
    check_target(net, target);
    if batch.is_empty() {
        return LossGrad { loss: LossParts { total: 0.0, value: 0.0, gradient: 0.0 }, grads: net.zeros_like() };
    }
    let n = batch.len() as f64;
    let x = inputs(batch);
    let tape = forward_tape(net, x.view(), target == Target::Value);
    let (res, gres) = residuals(&tape, batch, target);
    let loss = parts(&res, &gres, mu_dv, n);
    let abar = res * (2.0 / n);
    let tbar = if mu_dv != 0.0 {
        gres.map(|g| {
            let c = 2.0 * mu_dv / n;
            [g[0].clone() * c, g[1].clone() * c]
        })
    } else {
        None
    };
    LossGrad { loss, grads: backward(net, &tape, abar, tbar) }
}

/// Value and input gradient of a scalar network at one point.
pub fn input_gradient(net: &Mlp, x: Vec2) -> (f64, Vec2) {
    assert_eq!(net.out_dim(), 1, "input_gradient requires a scalar network");
    let xa = Array2::from_shape_vec((1, 2), x.to_vec()).expect("1×2 input");
    let tape = forward_tape(net, xa.view(), true);
    let tang = tape.tang.last().expect("tangents recorded");
    (tape.acts.last().expect("network has layers")[[0, 0]], [tang[0][[0, 0]], tang[1][[0, 0]]])
}

/// Batched values and input gradients of a scalar network.
pub fn values_and_gradients(net: &Mlp, x: ArrayView2<'_, f64>) -> (Array1<f64>, Array2<f64>) {
    assert_eq!(net.out_dim(), 1, "values_and_gradients requires a scalar network");
    let rows = x.nrows();
    let mut v = Array1::zeros(rows);
    let mut g = Array2::zeros((rows, 2));
    let mut start = 0;
    while start < rows {
        let end = (start + CHUNK).min(rows);
        let tape = forward_tape(net, x.slice(s![start..end, ..]), true);
        let out = tape.acts.last().expect("network has layers");
        let tang = tape.tang.last().expect("tangents recorded");
        v.slice_mut(s![start..end]).assign(&out.column(0));
        g.slice_mut(s![start..end, 0]).assign(&tang[0].column(0));
        g.slice_mut(s![start..end, 1]).assign(&tang[1].column(0));
        start = end;
    }
    (v, g)
}
