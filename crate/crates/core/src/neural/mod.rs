//! Feed-forward surrogates for the SDRE value function and feedback.

mod grad;
mod metrics;
mod mlp;
mod search;
mod train;

pub use grad::{input_gradient, loss, loss_and_param_grad, values_and_gradients, LossGrad, LossParts, Target};
pub use metrics::{
    evaluate, evaluate_control, evaluate_value, evaluation_grid, fit_metrics, ControlModel, DirectNetLaw, EvalReport,
    FitMetrics, ValueModel, ValueNetLaw, MRE_FLOOR,
};
pub use mlp::{Activation, Layer, Mlp, MODEL_FORMAT};
pub use search::{grid_search, write_leaderboard_csv, GridSpec, LeaderboardEntry, SearchOutcome};
pub use train::{train, train_on, write_history_csv, Adam, EpochRecord, Optimizer, TrainConfig, TrainOutcome};
