use std::io::Write;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::grad::{values_and_gradients, CHUNK};
use super::mlp::Mlp;
use crate::dataset::{labels, LabeledSample};
use crate::linalg::Vec2;
use crate::model::{self, BinaryState, ModelConfig, TransformedState};
use crate::sdre::{control_from_gradient, FeedbackLaw};
use crate::{Error, Result};

/// Points whose target norm is at most this are left out of the MRE.
pub const MRE_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitMetrics {
    pub mse: f64,
    pub r2: f64,
    pub mre: f64,
}

/// Metrics over `n` points of dimension `dim`, both slices row-major.
///
/// `mse` is the mean squared error norm per point, `r2` uses one mean over
/// all flattened components. A constant target yields `r2 = 1` for an exact
/// fit and `0` otherwise.
pub fn fit_metrics(truth: &[f64], pred: &[f64], dim: usize) -> FitMetrics {
    assert_eq!(truth.len(), pred.len());
    assert!(dim > 0 && truth.len() % dim == 0);
    let n = truth.len() / dim;
    if n == 0 {
        return FitMetrics { mse: 0.0, r2: 1.0, mre: 0.0 };
    }
    let ss_res: f64 = truth.iter().zip(pred).map(|(t, p)| (t - p) * (t - p)).sum();
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean) * (t - mean)).sum();
    let r2 = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res == 0.0 {
        1.0
    } else {
        0.0
    };
    let (mut rel_sum, mut counted) = (0.0, 0usize);
    for (t, p) in truth.chunks(dim).zip(pred.chunks(dim)) {
        let tn = t.iter().map(|v| v * v).sum::<f64>().sqrt();
        if tn > MRE_FLOOR {
            let en = t.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            rel_sum += en / tn;
            counted += 1;
        }
    }
    let mre = if counted == 0 { 0.0 } else { rel_sum / counted as f64 };
    FitMetrics { mse: ss_res / n as f64, r2, mre }
}

/// A learned approximation of `V` with its state gradient.
pub trait ValueModel: Sync {
    fn value_and_gradient(&self, states: &[TransformedState]) -> Result<(Vec<f64>, Vec<Vec2>)>;
}

/// A learned approximation of the feedback `u`.
pub trait ControlModel: Sync {
    fn control(&self, states: &[TransformedState]) -> Result<Vec<Vec2>>;
}

pub(crate) fn state_matrix(states: &[TransformedState]) -> Array2<f64> {
    Array2::from_shape_fn((states.len(), 2), |(i, c)| if c == 0 { states[i].xi } else { states[i].xbar })
}

impl ValueModel for Mlp {
    fn value_and_gradient(&self, states: &[TransformedState]) -> Result<(Vec<f64>, Vec<Vec2>)> {
        if self.out_dim() != 1 || self.input_dim != 2 {
            return Err(Error::ModelMismatch(format!("value model needs 2 inputs and 1 output, found {:?}", self.layer_dims())));
        }
        let (v, g) = values_and_gradients(self, state_matrix(states).view());
        let grads = g.outer_iter().map(|r| [r[0], r[1]]).collect();
        Ok((v.to_vec(), grads))
    }
}

impl ControlModel for Mlp {
    fn control(&self, states: &[TransformedState]) -> Result<Vec<Vec2>> {
        if self.out_dim() != 2 || self.input_dim != 2 {
            return Err(Error::ModelMismatch(format!("control model needs 2 inputs and 2 outputs, found {:?}", self.layer_dims())));
        }
        let x = state_matrix(states);
        let mut out = Vec::with_capacity(states.len());
        for chunk in x.axis_chunks_iter(ndarray::Axis(0), CHUNK) {
            out.extend(self.forward_batch(chunk).outer_iter().map(|r| [r[0], r[1]]));
        }
        Ok(out)
    }
}

/// Feedback `u_V = −½R⁻¹∇V_θ` from a value model.
pub struct ValueNetLaw<M> {
    pub model: M,
    pub cfg: ModelConfig,
}

impl<M: ValueModel> FeedbackLaw for ValueNetLaw<M> {
    fn controls(&self, states: &[TransformedState]) -> Result<Vec<Vec2>> {
        let (_, g) = self.model.value_and_gradient(states)?;
        Ok(g.into_iter().map(|g| control_from_gradient(g, &self.cfg)).collect())
    }
}

/// Feedback read directly from a control model.
pub struct DirectNetLaw<M> {
    pub model: M,
}

impl<M: ControlModel> FeedbackLaw for DirectNetLaw<M> {
    fn controls(&self, states: &[TransformedState]) -> Result<Vec<Vec2>> {
        self.model.control(states)
    }
}

/// Rows of the goodness-of-fit table; absent quantities are `None`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub v: Option<FitMetrics>,
    pub dv: Option<FitMetrics>,
    pub u_v: Option<FitMetrics>,
    pub u: Option<FitMetrics>,
}

impl EvalReport {
    pub fn rows(&self) -> Vec<(&'static str, FitMetrics)> {
        [("V_theta", self.v), ("dV_theta", self.dv), ("u_V", self.u_v), ("u_theta", self.u)]
            .into_iter()
            .filter_map(|(name, m)| m.map(|m| (name, m)))
            .collect()
    }

    pub fn merge(self, other: EvalReport) -> EvalReport {
        EvalReport {
            v: self.v.or(other.v),
            dv: self.dv.or(other.dv),
            u_v: self.u_v.or(other.u_v),
            u: self.u.or(other.u),
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "quantity,mse,r2,mre")?;
        for (name, m) in self.rows() {
            writeln!(w, "{name},{:e},{:.10},{:e}", m.mse, m.r2, m.mre)?;
        }
        Ok(())
    }
}

fn flatten(v: &[Vec2]) -> Vec<f64> {
    v.iter().flat_map(|x| x.iter().copied()).collect()
}

/// `V`, `∇V` and `u_V` metrics against labeled truth.
pub fn evaluate_value(model: &dyn ValueModel, truth: &[LabeledSample], cfg: &ModelConfig) -> Result<EvalReport> {
    let states: Vec<_> = truth.iter().map(|s| s.state).collect();
    let (v, g) = model.value_and_gradient(&states)?;
    let u_v: Vec<Vec2> = g.iter().map(|g| control_from_gradient(*g, cfg)).collect();
    let tv: Vec<f64> = truth.iter().map(|s| s.value).collect();
    let tg: Vec<Vec2> = truth.iter().map(|s| s.grad_v).collect();
    let tu: Vec<Vec2> = truth.iter().map(|s| s.u).collect();
    Ok(EvalReport {
        v: Some(fit_metrics(&tv, &v, 1)),
        dv: Some(fit_metrics(&flatten(&tg), &flatten(&g), 2)),
        u_v: Some(fit_metrics(&flatten(&tu), &flatten(&u_v), 2)),
        u: None,
    })
}

pub fn evaluate_control(model: &dyn ControlModel, truth: &[LabeledSample]) -> Result<EvalReport> {
    let states: Vec<_> = truth.iter().map(|s| s.state).collect();
    let u = model.control(&states)?;
    let tu: Vec<Vec2> = truth.iter().map(|s| s.u).collect();
    Ok(EvalReport { u: Some(fit_metrics(&flatten(&tu), &flatten(&u), 2)), ..EvalReport::default() })
}

/// Uniform `n × n` grid on `(x_i, x_j) ∈ [−1, 1]²` in transformed coordinates.
pub fn evaluation_grid(n: usize) -> Vec<TransformedState> {
    let node = |k: usize| if n == 1 { 0.0 } else { -1.0 + 2.0 * k as f64 / (n - 1) as f64 };
    (0..n)
        .flat_map(|a| (0..n).map(move |b| model::to_transformed(BinaryState::new(node(a), node(b)))))
        .collect()
}

/// SDRE ground truth on `grid`, then the metrics of `net` for its target.
pub fn evaluate(net: &Mlp, grid: &[TransformedState], cfg: &ModelConfig) -> Result<EvalReport> {
    for t in grid {
        t.validate()?;
    }
    let truth = labels(grid, cfg)?;
    match net.out_dim() {
        1 => evaluate_value(net, &truth, cfg),
        2 => evaluate_control(net, &truth),
        d => Err(Error::ModelMismatch(format!("unsupported output width {d}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdre::sdre_feedback;

    const CFG: ModelConfig = ModelConfig { beta: -1.0, gamma: 0.025 };

    /// Reproduces the SDRE labels exactly.
    struct Exact;

    impl ValueModel for Exact {
        fn value_and_gradient(&self, states: &[TransformedState]) -> Result<(Vec<f64>, Vec<Vec2>)> {
            let f: Vec<_> = states.iter().map(|t| sdre_feedback(*t, &CFG)).collect::<Result<_>>()?;
            Ok((f.iter().map(|e| e.value).collect(), f.iter().map(|e| e.grad_v).collect()))
        }
    }

    impl ControlModel for Exact {
        fn control(&self, states: &[TransformedState]) -> Result<Vec<Vec2>> {
            states.iter().map(|t| sdre_feedback(*t, &CFG).map(|e| e.u)).collect()
        }
    }

    #[test]
    fn exact_model_is_perfect() {
        let truth = labels(&evaluation_grid(15), &CFG).unwrap();
        let r = evaluate_value(&Exact, &truth, &CFG).unwrap().merge(evaluate_control(&Exact, &truth).unwrap());
        assert_eq!(r.rows().len(), 4);
        for (name, m) in r.rows() {
            assert_eq!((m.mse, m.r2, m.mre), (0.0, 1.0, 0.0), "{name}");
        }
    }

    #[test]
    fn constant_mean_predictor_has_zero_r2() {
        let truth = [0.3, -1.2, 2.5, 0.7, 0.0];
        let mean = truth.iter().sum::<f64>() / truth.len() as f64;
        let m = fit_metrics(&truth, &[mean; 5], 1);
        assert_eq!(m.r2, 0.0);
        assert!(m.mse > 0.0);
    }

    #[test]
    fn hand_computed_metrics() {
        let truth = [1.0, 0.0, 0.0, 0.0, 3.0, 4.0];
        let pred = [1.0, 1.0, 1.0, 0.0, 3.0, 4.0];
        let m = fit_metrics(&truth, &pred, 2);
        assert!((m.mse - 2.0 / 3.0).abs() < 1e-15);
        // the zero-truth point is excluded from the MRE
        assert!((m.mre - 0.5).abs() < 1e-15);
        let mean = 8.0 / 6.0;
        let ss_tot: f64 = truth.iter().map(|t| (t - mean) * (t - mean)).sum();
        assert!((m.r2 - (1.0 - 2.0 / ss_tot)).abs() < 1e-15);
    }

    #[test]
    fn u_v_is_a_uniform_rescaling_of_the_gradient() {
        let net = Mlp::reference(1, 11);
        let truth = labels(&evaluation_grid(12), &CFG).unwrap();
        let r = evaluate_value(&net, &truth, &CFG).unwrap();
        let (dv, uv) = (r.dv.unwrap(), r.u_v.unwrap());
        assert!((dv.mre - uv.mre).abs() <= 1e-12 * dv.mre);
        assert!((dv.r2 - uv.r2).abs() <= 1e-12 * dv.r2.abs().max(1.0));
        let states: Vec<_> = truth.iter().map(|s| s.state).collect();
        let law = ValueNetLaw { model: net.clone(), cfg: CFG };
        let u = law.controls(&states).unwrap();
        let (_, g) = net.value_and_gradient(&states).unwrap();
        let c = -1.0 / (2.0 * CFG.r_scalar());
        for (ui, gi) in u.iter().zip(&g) {
            assert_eq!(ui[0], c * gi[0]);
            assert_eq!(ui[1], c * gi[1]);
        }
    }

    #[test]
    fn grid_shape() {
        let g = evaluation_grid(316);
        assert_eq!(g.len(), 99_856);
        assert!(g.iter().all(|t| t.validate().is_ok()));
        assert_eq!(g[0], TransformedState::new(-1.0, -1.0));
    }

    #[test]
    fn wrong_output_width_is_rejected() {
        let net = Mlp::reference(2, 0);
        assert!(matches!(ValueModel::value_and_gradient(&net, &[]), Err(Error::ModelMismatch(_))));
        assert!(matches!(ControlModel::control(&Mlp::reference(1, 0), &[]), Err(Error::ModelMismatch(_))));
    }
}
