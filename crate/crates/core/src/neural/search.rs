use std::io::Write;

use serde::{Deserialize, Serialize};

use super::grad::Target;
use super::metrics::{evaluate_control, evaluate_value, FitMetrics};
use super::mlp::Mlp;
use super::train::{train, TrainConfig};
use crate::dataset::Dataset;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub mu_dv: Vec<f64>,
    pub widths: Vec<usize>,
    pub depths: Vec<usize>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { mu_dv: vec![0.0, 0.05, 0.5, 1.0, 2.0], widths: vec![100], depths: vec![2] }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.mu_dv.is_empty() || self.widths.is_empty() || self.depths.is_empty() {
            return Err(Error::InvalidConfig("grid search needs at least one value per axis".into()));
        }
        if let Some(bad) = self.mu_dv.iter().find(|m| !(0.0..=2.0).contains(*m)) {
            return Err(Error::InvalidConfig(format!("mu_dv {bad} outside [0, 2]")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    pub mu_dv: f64,
    pub width: usize,
    pub depth: usize,
    /// NaN for failed runs.
    pub val_mre: f64,
    pub val_mse: f64,
    pub val_r2: f64,
    pub error: Option<String>,
}

pub struct SearchOutcome {
    pub best: TrainConfig,
    pub best_net: Mlp,
    /// Ascending by validation MRE, failures last.
    pub leaderboard: Vec<LeaderboardEntry>,
}

/// Validation metric used for ranking: `u_V` for value models, `u` for control models.
fn ranking_metric(net: &Mlp, d: &Dataset, target: Target) -> Result<FitMetrics> {
    let val = d.validation();
    let report = match target {
        Target::Value => evaluate_value(net, &val, &d.cfg)?,
        Target::Control => evaluate_control(net, &val)?,
    };
    Ok(match target {
        Target::Value => report.u_v,
        Target::Control => report.u,
    }
    .expect("report carries the ranking quantity"))
}

/// Trains one model per configuration and ranks them by validation MRE.
pub fn grid_search(d: &Dataset, target: Target, base: &TrainConfig, spec: &GridSpec) -> Result<SearchOutcome> {
    spec.validate()?;
    let mut entries: Vec<(LeaderboardEntry, Option<(TrainConfig, Mlp)>)> = Vec::new();
    for &depth in &spec.depths {
        for &width in &spec.widths {
            for &mu_dv in &spec.mu_dv {
                let tc = TrainConfig { mu_dv, width, depth, ..base.clone() };
                let run = train(d, target, &tc).and_then(|o| ranking_metric(&o.net, d, target).map(|m| (o.net, m)));
                let (entry, model) = match run {
                    Ok((net, m)) => (
                        LeaderboardEntry { mu_dv, width, depth, val_mre: m.mre, val_mse: m.mse, val_r2: m.r2, error: None },
                        Some((tc, net)),
                    ),
                    Err(e) => (
                        LeaderboardEntry {
                            mu_dv,
                            width,
                            depth,
                            val_mre: f64::NAN,
                            val_mse: f64::NAN,
                            val_r2: f64::NAN,
                            error: Some(e.to_string()),
                        },
                        None,
                    ),
                };
                entries.push((entry, model));
            }
        }
    }
    entries.sort_by(|a, b| match (a.0.val_mre.is_nan(), b.0.val_mre.is_nan()) {
        (false, false) => a.0.val_mre.total_cmp(&b.0.val_mre),
        (x, y) => x.cmp(&y),
    });
    let Some((_, Some((best, best_net)))) = entries.first().cloned() else {
        return Err(Error::NonFinite("every grid-search configuration failed".into()));
    };
    Ok(SearchOutcome { best, best_net, leaderboard: entries.into_iter().map(|e| e.0).collect() })
}

pub fn write_leaderboard_csv<W: Write>(rows: &[LeaderboardEntry], mut w: W) -> std::io::Result<()> {
    writeln!(w, "mu_dV,width,depth,val_mre,val_mse,val_r2")?;
    for r in rows {
        writeln!(w, "{},{},{},{:e},{:e},{:.10}", r.mu_dv, r.width, r.depth, r.val_mre, r.val_mse, r.val_r2)?;
    }
    Ok(())
}
