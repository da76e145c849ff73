//! Subcommand implementations. Each validates its inputs before creating
//! any output and returns a short printable summary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use consensus_core::dataset::{self, Dataset};
use consensus_core::io::write_atomic;
use consensus_core::kinetic::{self, bin_centers, write_histogram_csv, write_moments_csv, KineticRun};
use consensus_core::neural::{
    evaluate, evaluation_grid, grid_search, train, write_history_csv, write_leaderboard_csv, DirectNetLaw, EvalReport,
    GridSpec, Mlp, ValueNetLaw,
};
use consensus_core::pmp::pmp_open_loop;
use consensus_core::sdre::{integrate_closed_loop, ControllerKind, FeedbackLaw, PairController, SdreLaw, TrajectoryRecord};
use consensus_core::{BinaryState, Error};

use crate::config::RunConfig;
use crate::plot::{density_plot, surface_svg, write_svg, LinePlot, Series};
use crate::{CliError, Command, ModelPaths, TargetArg};

type CmdResult = Result<String, CliError>;

pub fn dispatch(cmd: Command, mut cfg: RunConfig) -> CmdResult {
    match cmd {
        Command::GenData { n, out } => {
            if let Some(n) = n {
                cfg.dataset.n_samples = n;
            }
            if let Some(out) = out {
                cfg.dataset.path = Some(out);
            }
            gen_data(&cfg)
        }
        Command::Train { target, data, out, mu_dv, epochs } => {
            if let Some(m) = mu_dv {
                cfg.train.mu_dv = m;
            }
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if let Some(d) = data {
                cfg.dataset.path = Some(d);
            }
            let out = out.unwrap_or_else(|| model_path(&cfg, target));
            train_cmd(&cfg, target, &out)
        }
        Command::GridSearch { target, data, mu_dv, epochs } => {
            if let Some(m) = mu_dv {
                cfg.grid_search = GridSpec { mu_dv: vec![m], ..cfg.grid_search };
            }
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if let Some(d) = data {
                cfg.dataset.path = Some(d);
            }
            grid_search_cmd(&cfg, target)
        }
        Command::Eval { models, grid_n, out } => {
            if let Some(n) = grid_n {
                cfg.eval.grid_n = n;
            }
            let explicit = models.value_model.is_some() || models.control_model.is_some();
            apply_model_paths(&mut cfg, models);
            let out = out.unwrap_or_else(|| cfg.out_dir.join("table1.csv"));
            eval_cmd(&cfg, explicit, &out)
        }
        Command::SimulateBinary { controller, xi0, xj0, models } => {
            if let Some(x) = xi0 {
                cfg.binary.xi0 = x;
            }
            if let Some(x) = xj0 {
                cfg.binary.xj0 = x;
            }
            apply_model_paths(&mut cfg, models);
            simulate_binary(&cfg, controller.unwrap_or(ControllerKind::Sdre))
        }
        Command::SimulateKinetic { controller, eps, n_agents, steps, models } => {
            if let Some(c) = controller {
                cfg.kinetic.controller = c;
            }
            if let Some(e) = eps {
                cfg.kinetic.eps = e;
            }
            if let Some(n) = n_agents {
                cfg.kinetic.n_agents = n;
            }
            if let Some(s) = steps {
                cfg.kinetic.n_steps = s;
            }
            apply_model_paths(&mut cfg, models);
            simulate_kinetic(&cfg)
        }
        Command::Plot { inputs, out } => {
            let out = out.unwrap_or_else(|| cfg.out_dir.join("plots"));
            let written = crate::plot::plot_files(&inputs, &out)?;
            Ok(written.iter().map(|p| format!("wrote {}", p.display())).collect::<Vec<_>>().join("\n"))
        }
    }
}

fn apply_model_paths(cfg: &mut RunConfig, m: ModelPaths) {
    if m.value_model.is_some() {
        cfg.paths.value_model = m.value_model;
    }
    if m.control_model.is_some() {
        cfg.paths.control_model = m.control_model;
    }
}

fn model_path(cfg: &RunConfig, target: TargetArg) -> PathBuf {
    match target {
        TargetArg::Value => cfg.value_model_path(),
        TargetArg::Control => cfg.control_model_path(),
    }
}

fn ensure_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => ensure_dir(p),
        _ => Ok(()),
    }
}

fn require_file(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "input file not found")).into())
    }
}

fn min_max(v: impl Iterator<Item = f64>) -> (f64, f64) {
    v.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)))
}

pub fn gen_data(cfg: &RunConfig) -> CmdResult {
    cfg.validate()?;
    let path = cfg.dataset_path();
    let d = dataset::generate(cfg.dataset.n_samples, cfg.dataset.seed, &cfg.model)?;
    ensure_parent(&path)?;
    dataset::save(&d, &path)?;
    let (v0, v1) = min_max(d.samples.iter().map(|s| s.value));
    let (u0, u1) = min_max(d.samples.iter().flat_map(|s| s.u));
    Ok(format!(
        "wrote {} ({} samples: {} train / {} validation)\nV in [{v0:.4e}, {v1:.4e}], u in [{u0:.4e}, {u1:.4e}]",
        path.display(),
        d.len(),
        d.split.train.len(),
        d.split.validation.len()
    ))
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let path = cfg.dataset_path();
    require_file(&path)?;
    let d = dataset::load(&path)?;
    if d.cfg != cfg.model {
        return Err(CliError::Validation(format!(
            "{} was labeled with beta={}, gamma={} but the run uses beta={}, gamma={}",
            path.display(),
            d.cfg.beta,
            d.cfg.gamma,
            cfg.model.beta,
            cfg.model.gamma
        )));
    }
    Ok(d)
}

fn history_path(cfg: &RunConfig, target: TargetArg) -> PathBuf {
    cfg.out_dir.join(format!("history_{}.csv", target.name()))
}

pub fn train_cmd(cfg: &RunConfig, target: TargetArg, out: &Path) -> CmdResult {
    cfg.validate()?;
    let d = load_dataset(cfg)?;
    let hist = history_path(cfg, target);
    ensure_dir(&cfg.out_dir)?;
    ensure_parent(out)?;
    match train(&d, target.into(), &cfg.train) {
        Ok(o) => {
            o.net.save(out)?;
            write_atomic(&hist, |w| write_history_csv(&o.history, w))?;
            let last = o.history.last().expect("history has the initial row");
            Ok(format!(
                "wrote {} and {}\nbest epoch {} (val loss {:.4e}); final train loss {:.4e}",
                out.display(),
                hist.display(),
                o.best_epoch,
                o.history[o.best_epoch].val_loss,
                last.train_loss
            ))
        }
        Err(Error::DivergedTraining { epoch, history }) => {
            write_atomic(&hist, |w| write_history_csv(&history, w))?;
            Err(Error::DivergedTraining { epoch, history }.into())
        }
        Err(e) => Err(e.into()),
    }
}

pub fn grid_search_cmd(cfg: &RunConfig, target: TargetArg) -> CmdResult {
    cfg.validate()?;
    let d = load_dataset(cfg)?;
    ensure_dir(&cfg.out_dir)?;
    let out = grid_search(&d, target.into(), &cfg.train, &cfg.grid_search)?;
    let board = cfg.out_dir.join(format!("leaderboard_{}.csv", target.name()));
    let best = cfg.out_dir.join(format!("grid_best_{}.json", target.name()));
    write_atomic(&board, |w| write_leaderboard_csv(&out.leaderboard, w))?;
    out.best_net.save(&best)?;
    let mut s = format!("wrote {} and {}\n", board.display(), best.display());
    for e in &out.leaderboard {
        let _ = writeln!(
            s,
            "mu_dV={:<6} width={:<4} depth={} val_mre={:.4e}{}",
            e.mu_dv,
            e.width,
            e.depth,
            e.val_mre,
            e.error.as_deref().map(|m| format!(" ({m})")).unwrap_or_default()
        );
    }
    Ok(s.trim_end().to_string())
}

fn load_model(path: &Path, out_dim: usize) -> Result<Mlp, CliError> {
    require_file(path)?;
    let net = Mlp::load(path)?;
    if net.input_dim != 2 || net.out_dim() != out_dim {
        return Err(Error::ModelMismatch(format!(
            "{} maps {} -> {}, expected 2 -> {out_dim}",
            path.display(),
            net.input_dim,
            net.out_dim()
        ))
        .into());
    }
    Ok(net)
}

pub fn eval_cmd(cfg: &RunConfig, explicit: bool, out: &Path) -> CmdResult {
    cfg.validate()?;
    let candidates = [(cfg.value_model_path(), 1, cfg.paths.value_model.is_some()), (cfg.control_model_path(), 2, cfg.paths.control_model.is_some())];
    let mut nets = Vec::new();
    for (path, dim, given) in candidates {
        if given || (!explicit && path.is_file()) {
            nets.push(load_model(&path, dim)?);
        }
    }
    if nets.is_empty() {
        return Err(CliError::Validation(format!(
            "no model to evaluate: pass --value-model/--control-model or train into {}",
            cfg.out_dir.display()
        )));
    }
    let grid = evaluation_grid(cfg.eval.grid_n);
    let mut report = EvalReport::default();
    for net in &nets {
        report = report.merge(evaluate(net, &grid, &cfg.model)?);
    }
    ensure_parent(out)?;
    write_atomic(out, |w| report.write_csv(w))?;
    let mut s = format!("wrote {} ({} grid points)\n", out.display(), grid.len());
    for (name, m) in report.rows() {
        let _ = writeln!(s, "{name:<9} mse={:.4e} r2={:.6} mre={:.4e}", m.mse, m.r2, m.mre);
    }
    Ok(s.trim_end().to_string())
}

/// Network feedback for the `nn_*` controllers, `None` otherwise.
fn network_law(cfg: &RunConfig, kind: ControllerKind) -> Result<Option<Box<dyn FeedbackLaw>>, CliError> {
    Ok(match kind {
        ControllerKind::NnValue => {
            Some(Box::new(ValueNetLaw { model: load_model(&cfg.value_model_path(), 1)?, cfg: cfg.model }))
        }
        ControllerKind::NnDirect => Some(Box::new(DirectNetLaw { model: load_model(&cfg.control_model_path(), 2)? })),
        _ => None,
    })
}

pub fn simulate_binary(cfg: &RunConfig, kind: ControllerKind) -> CmdResult {
    cfg.validate()?;
    let b = &cfg.binary;
    let s0 = BinaryState::new(b.xi0, b.xj0);
    let net = network_law(cfg, kind)?;
    let sdre = SdreLaw { cfg: cfg.model };
    let mut note = String::new();
    let rec: TrajectoryRecord = match kind {
        ControllerKind::None => integrate_closed_loop(s0, &PairController::Uncontrolled, b.dt, b.horizon, &cfg.model)?,
        ControllerKind::Sdre => integrate_closed_loop(s0, &PairController::Feedback(&sdre), b.dt, b.horizon, &cfg.model)?,
        ControllerKind::NnValue | ControllerKind::NnDirect => {
            let law = net.as_deref().expect("network law loaded");
            integrate_closed_loop(s0, &PairController::Feedback(law), b.dt, b.horizon, &cfg.model)?
        }
        ControllerKind::OpenLoop => {
            let r = pmp_open_loop(s0, b.horizon, b.dt, &cfg.model, b.pmp_max_sweeps, b.pmp_tol)?;
            note = format!(
                "\nopen-loop optimizer: {} after {} sweeps",
                if r.converged { "converged" } else { "not converged" },
                r.sweeps
            );
            r.trajectory
        }
    };
    ensure_dir(&cfg.out_dir)?;
    let csv = cfg.out_dir.join(format!("binary_{kind}.csv"));
    let svg = cfg.out_dir.join(format!("binary_{kind}.svg"));
    write_atomic(&csv, |w| rec.write_csv(w))?;
    let points: Vec<(f64, f64)> = rec.times.iter().copied().zip(rec.consensus_gap.iter().copied()).collect();
    write_svg(&svg, &LinePlot::new(&format!("Consensus gap ({kind})"), "time t", "|x_i - x_j|").with_series(&kind.to_string(), points).to_svg())?;
    let reach = rec
        .first_time_below(b.gap_threshold)
        .map(|t| format!("{t:.4}"))
        .unwrap_or_else(|| "never".into());
    Ok(format!(
        "wrote {} and {}\ncost {:.6e}; gap below {} at t = {reach}; clamp hits {}{note}",
        csv.display(),
        svg.display(),
        rec.total_cost(),
        b.gap_threshold,
        rec.clamp_hits
    ))
}

fn write_kinetic_outputs(dir: &Path, run: &KineticRun, label: &str) -> Result<(), CliError> {
    write_atomic(&dir.join("moments.csv"), |w| write_moments_csv(&run.steps, w))?;
    let centers = bin_centers(run.steps[0].density.len());
    let mut overlay = Vec::new();
    for s in &run.steps {
        write_atomic(&dir.join(format!("hist_step_{:02}.csv", s.step)), |w| write_histogram_csv(s, w))?;
        let series = Series { label: format!("step {}", s.step), points: centers.iter().copied().zip(s.density.iter().copied()).collect() };
        write_svg(&dir.join(format!("density_step_{:02}.svg", s.step)), &density_plot(&format!("Density at step {} ({label})", s.step), vec![series.clone()]))?;
        overlay.push(series);
    }
    write_svg(&dir.join("overlay.svg"), &density_plot(&format!("Density evolution ({label})"), overlay))?;
    let steps: Vec<f64> = run.steps.iter().map(|s| s.step as f64).collect();
    let rows: Vec<Vec<f64>> = run.steps.iter().map(|s| s.density.clone()).collect();
    write_svg(&dir.join("surface.svg"), &surface_svg(&format!("Density surface ({label})"), "opinion x", "step", &centers, &steps, &rows))?;
    let var = LinePlot::new(&format!("Variance ({label})"), "step", "variance")
        .with_series("variance", run.steps.iter().map(|s| (s.step as f64, s.variance)).collect());
    write_svg(&dir.join("variance.svg"), &var.to_svg())?;
    Ok(())
}

pub fn simulate_kinetic(cfg: &RunConfig) -> CmdResult {
    cfg.validate()?;
    let kind = cfg.kinetic.controller;
    let net = network_law(cfg, kind)?;
    let run = kinetic::run(&cfg.kinetic, &cfg.model, net.as_deref())?;
    let dir = cfg.out_dir.join(format!("kinetic_{kind}"));
    ensure_dir(&dir)?;
    write_kinetic_outputs(&dir, &run, &kind.to_string())?;
    let first = &run.steps[0];
    let last = run.steps.last().expect("initial step recorded");
    Ok(format!(
        "wrote {}\n{} agents, {} steps, eps {}: variance {:.4e} -> {:.4e} (ratio {:.4}); clamp hits {}",
        dir.display(),
        run.population.len(),
        run.steps.len() - 1,
        cfg.kinetic.eps,
        first.variance,
        last.variance,
        last.variance / first.variance,
        run.clamp_hits
    ))
}

