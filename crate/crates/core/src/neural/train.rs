use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::grad::{loss, loss_and_param_grad, Target};
use super::mlp::Mlp;
use crate::dataset::{rng_for, Dataset, LabeledSample};
use crate::{Error, Result};

const MINIBATCH_STREAM: u64 = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mu_dv: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    /// `None` means full batch.
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub optimizer: Optimizer,
    /// Hidden sigmoid layer width.
    pub width: usize,
    /// Number of hidden sigmoid layers.
    pub depth: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mu_dv: 0.05,
            learning_rate: 1e-3,
            epochs: 5000,
            batch_size: None,
            seed: 0,
            optimizer: Optimizer::Adam,
            width: 100,
            depth: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu_dv >= 0.0 && self.mu_dv.is_finite()) {
            return Err(Error::InvalidConfig(format!("mu_dv must be non-negative, got {}", self.mu_dv)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == Some(0) {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        if self.width == 0 {
            return Err(Error::InvalidConfig("hidden width must be positive".into()));
        }
        Ok(())
    }

    pub fn init_net(&self, target: Target) -> Mlp {
        Mlp::new(2, &Mlp::layout(self.width, self.depth, target.out_dim()), self.seed)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters with the lowest validation loss seen.
    pub net: Mlp,
    /// Row `e` holds the losses after `e` optimizer epochs.
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

fn apply_step(net: &mut Mlp, opt: &mut Adam, grads: &Mlp) {
    let mut p = net.params_flat();
    opt.step(&mut p, &grads.params_flat());
    net.set_params_flat(&p);
}

pub fn train(d: &Dataset, target: Target, tc: &TrainConfig) -> Result<TrainOutcome> {
    if d.split.train.is_empty() {
        return Err(Error::InvalidConfig("dataset has an empty training split".into()));
    }
    train_on(&d.train(), &d.validation(), target, tc)
}

/// Trains from the seeded initialization; validation falls back to the
/// training loss when `val` is empty.
pub fn train_on(train: &[LabeledSample], val: &[LabeledSample], target: Target, tc: &TrainConfig) -> Result<TrainOutcome> {
    tc.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidConfig("training set is empty".into()));
    }
    let mut net = tc.init_net(target);
    let mut opt = Adam::new(net.n_params(), tc.learning_rate);
    let minibatch = tc.batch_size.filter(|&b| b < train.len());
    let mut rng = rng_for(tc.seed, MINIBATCH_STREAM);
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut history = Vec::with_capacity(tc.epochs + 1);
    let mut best = (f64::INFINITY, net.clone(), 0);
    for epoch in 0..=tc.epochs {
        let full_step = minibatch.is_none() && epoch < tc.epochs;
        let (train_loss, grads) = if full_step {
            let lg = loss_and_param_grad(&net, train, target, tc.mu_dv);
            (lg.loss.total, Some(lg.grads))
        } else {
            (loss(&net, train, target, tc.mu_dv).total, None)
        };
        let val_loss = if val.is_empty() { train_loss } else { loss(&net, val, target, tc.mu_dv).total };
        if !(train_loss.is_finite() && val_loss.is_finite()) {
            return Err(Error::DivergedTraining { epoch, history });
        }
        history.push(EpochRecord { epoch, train_loss, val_loss });
        if val_loss < best.0 {
            best = (val_loss, net.clone(), epoch);
        }
        if epoch == tc.epochs {
            break;
        }
        match (grads, minibatch) {
            (Some(g), _) => apply_step(&mut net, &mut opt, &g),
            (None, Some(b)) => {
                order.shuffle(&mut rng);
                for idx in order.chunks(b) {
                    let chunk: Vec<LabeledSample> = idx.iter().map(|&i| train[i]).collect();
                    let lg = loss_and_param_grad(&net, &chunk, target, tc.mu_dv);
                    apply_step(&mut net, &mut opt, &lg.grads);
                }
            }
            (None, None) => unreachable!("full-batch epochs always compute gradients"),
        }
    }
    Ok(TrainOutcome { net: best.1, history, best_epoch: best.2 })
}

pub fn write_history_csv<W: Write>(history: &[EpochRecord], mut w: W) -> std::io::Result<()> {
    writeln!(w, "epoch,train_loss,val_loss")?;
    for r in history {
        writeln!(w, "{},{:e},{:e}", r.epoch, r.train_loss, r.val_loss)?;
    }
    Ok(())
}
