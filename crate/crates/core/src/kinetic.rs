//! Direct Simulation Monte Carlo for the controlled Sznajd population.
//!
//! With `Δt = ε` and interaction frequency `1/ε` every agent collides once
//! per step, so each step is a uniform random perfect matching followed by
//! the controlled binary rule on every pair.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::rng_for;
use crate::linalg::Vec2;
use crate::model::{BinaryState, ModelConfig, TransformedState};
use crate::sdre::{euler_pair_step, pair_views, ControllerKind, FeedbackLaw, SdreLaw};
use crate::{Error, Result};

const INITIAL_STREAM: u64 = 3;
const MATCHING_STREAM: u64 = 4;
/// Draws before the acceptance rate is judged.
const STALL_WINDOW: usize = 1000;
const MIN_ACCEPTANCE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: f64,
    pub std: f64,
}

/// Mixture of normals truncated to `[−1, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub components: Vec<MixtureComponent>,
}

impl Default for MixtureSpec {
    fn default() -> Self {
        MixtureSpec {
            components: vec![
                MixtureComponent { weight: 0.5, mean: -0.5, std: 0.15 },
                MixtureComponent { weight: 0.5, mean: 0.5, std: 0.15 },
            ],
        }
    }
}

impl MixtureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::InvalidConfig("mixture has no components".into()));
        }
        let mut total = 0.0;
        for c in &self.components {
            if !(c.weight >= 0.0 && c.weight.is_finite()) {
                return Err(Error::InvalidConfig(format!("mixture weight {} is negative", c.weight)));
            }
            if !(c.std > 0.0 && c.std.is_finite()) {
                return Err(Error::InvalidConfig(format!("mixture std {} must be positive", c.std)));
            }
            if !(-1.0..=1.0).contains(&c.mean) {
                return Err(Error::InvalidConfig(format!("mixture mean {} outside [-1, 1]", c.mean)));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("mixture weights sum to {total}, not 1")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Population {
    pub opinions: Vec<f64>,
    pub step_count: usize,
    pub rng_seed: u64,
}

impl Population {
    pub fn len(&self) -> usize {
        self.opinions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.opinions.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.opinions.len() < 2 || self.opinions.len() % 2 != 0 {
            return Err(Error::InvalidConfig(format!("population size {} must be even and ≥ 2", self.opinions.len())));
        }
        if let Some(x) = self.opinions.iter().find(|x| !(-1.0..=1.0).contains(*x)) {
            return Err(Error::DomainViolation(format!("opinion {x}")));
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        self.opinions.iter().sum::<f64>() / self.opinions.len() as f64
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        let n = self.opinions.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean();
        self.opinions.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
    }

    /// Density on `bins` equal cells of `[−1, 1]`; `Σ density·width = 1`.
    pub fn histogram(&self, bins: usize) -> Vec<f64> {
        let width = 2.0 / bins as f64;
        let mut counts = vec![0usize; bins];
        for x in &self.opinions {
            let k = (((x + 1.0) / width).floor() as usize).min(bins - 1);
            counts[k] += 1;
        }
        let norm = 1.0 / (self.opinions.len() as f64 * width);
        counts.into_iter().map(|c| c as f64 * norm).collect()
    }
}

pub fn bin_centers(bins: usize) -> Vec<f64> {
    let width = 2.0 / bins as f64;
    (0..bins).map(|k| -1.0 + (k as f64 + 0.5) * width).collect()
}

/// Rejection sampling from the truncated mixture.
pub fn sample_initial(spec: &MixtureSpec, n: usize, seed: u64) -> Result<Population> {
    spec.validate()?;
    if n < 2 || n % 2 != 0 {
        return Err(Error::InvalidConfig(format!("population size {n} must be even and ≥ 2")));
    }
    let normals: Vec<Normal<f64>> = spec
        .components
        .iter()
        .map(|c| Normal::new(c.mean, c.std).map_err(|e| Error::InvalidConfig(e.to_string())))
        .collect::<Result<_>>()?;
    let mut cumulative = Vec::with_capacity(spec.components.len());
    let mut acc = 0.0;
    for c in &spec.components {
        acc += c.weight;
        cumulative.push(acc);
    }
    let mut rng = rng_for(seed, INITIAL_STREAM);
    let mut opinions = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while opinions.len() < n {
        let pick: f64 = rng.random::<f64>() * acc;
        let k = cumulative.iter().position(|c| pick < *c).unwrap_or(cumulative.len() - 1);
        let x = normals[k].sample(&mut rng);
        attempts += 1;
        if (-1.0..=1.0).contains(&x) {
            opinions.push(x);
        }
        if attempts >= STALL_WINDOW {
            let rate = opinions.len() as f64 / attempts as f64;
            if rate < MIN_ACCEPTANCE {
                return Err(Error::RejectionStall { rate });
            }
        }
    }
    Ok(Population { opinions, step_count: 0, rng_seed: seed })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KineticConfig {
    pub n_agents: usize,
    /// Interaction strength and time step; the collision frequency is `1/eps`.
    pub eps: f64,
    pub n_steps: usize,
    pub controller: ControllerKind,
    pub f0: MixtureSpec,
    pub histogram_bins: usize,
    pub seed: u64,
}

impl Default for KineticConfig {
    fn default() -> Self {
        KineticConfig {
            n_agents: 100_000,
            eps: 0.1,
            n_steps: 10,
            controller: ControllerKind::Sdre,
            f0: MixtureSpec::default(),
            histogram_bins: 100,
            seed: 0,
        }
    }
}

impl KineticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_agents < 2 || self.n_agents % 2 != 0 {
            return Err(Error::InvalidConfig(format!("n_agents {} must be even and ≥ 2", self.n_agents)));
        }
        self.f0.validate()?;
        self.validate_stepping()
    }

    fn validate_stepping(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::InvalidConfig(format!("eps must be positive, got {}", self.eps)));
        }
        if self.histogram_bins == 0 {
            return Err(Error::InvalidConfig("histogram needs at least one bin".into()));
        }
        if self.controller == ControllerKind::OpenLoop {
            return Err(Error::InvalidConfig("open-loop control is not defined for the population".into()));
        }
        Ok(())
    }
}

/// One binary collision `x* = x + η(drift + u)`, clamped to `Ω`.
pub fn collide_pair(s: BinaryState, eta: f64, u: (f64, f64), cfg: &ModelConfig) -> BinaryState {
    euler_pair_step(s, u, eta, cfg).0
}

/// Uniform random perfect matching: shuffle, then pair neighbours.
pub fn random_matching<R: Rng>(n: usize, rng: &mut R) -> Vec<(usize, usize)> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks_exact(2).map(|c| (c[0], c[1])).collect()
}

/// Collides every matched pair once. Controls for all pairs are requested
/// from `law` in one batch, each agent seeing `(own opinion, pair mean)`.
pub fn collide_all(
    p: &mut Population,
    pairs: &[(usize, usize)],
    eta: f64,
    law: Option<&dyn FeedbackLaw>,
    cfg: &ModelConfig,
) -> Result<u32> {
    let states: Vec<BinaryState> = pairs.iter().map(|&(i, j)| BinaryState::new(p.opinions[i], p.opinions[j])).collect();
    let controls: Vec<(f64, f64)> = match law {
        None => vec![(0.0, 0.0); pairs.len()],
        Some(law) => {
            let views: Vec<TransformedState> = states.iter().flat_map(|s| pair_views(*s)).collect();
            let u: Vec<Vec2> = law.controls(&views)?;
            u.chunks_exact(2).map(|c| (c[0][0], c[1][0])).collect()
        }
    };
    let mut hits = 0;
    for ((&(i, j), s), u) in pairs.iter().zip(&states).zip(&controls) {
        let (next, h) = euler_pair_step(*s, *u, eta, cfg);
        if !(next.xi.is_finite() && next.xj.is_finite()) {
            return Err(Error::NonFinite(format!("collision of agents {i} and {j}")));
        }
        hits += h;
        p.opinions[i] = next.xi;
        p.opinions[j] = next.xj;
    }
    p.step_count += 1;
    Ok(hits)
}

#[derive(Clone, Debug, PartialEq)]
pub struct KineticStep {
    pub step: usize,
    pub mean: f64,
    pub variance: f64,
    pub density: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct KineticRun {
    /// Diagnostics before the first step and after each step.
    pub steps: Vec<KineticStep>,
    pub population: Population,
    pub clamp_hits: u64,
}

fn record(p: &Population, bins: usize) -> KineticStep {
    KineticStep { step: p.step_count, mean: p.mean(), variance: p.variance(), density: p.histogram(bins) }
}

fn resolve_law<'a>(
    kc: &KineticConfig,
    sdre: &'a SdreLaw,
    law: Option<&'a dyn FeedbackLaw>,
) -> Result<Option<&'a dyn FeedbackLaw>> {
    match kc.controller {
        ControllerKind::None => Ok(None),
        ControllerKind::Sdre => Ok(Some(law.unwrap_or(sdre))),
        ControllerKind::NnValue | ControllerKind::NnDirect => law
            .map(Some)
            .ok_or_else(|| Error::InvalidConfig(format!("controller {} needs a trained network", kc.controller))),
        ControllerKind::OpenLoop => Err(Error::InvalidConfig("open-loop control is not defined for the population".into())),
    }
}

/// Samples `f₀` and evolves it for `kc.n_steps` steps. `law` supplies the
/// network feedback for the `nn_*` controllers and may override the SDRE law.
pub fn run(kc: &KineticConfig, cfg: &ModelConfig, law: Option<&dyn FeedbackLaw>) -> Result<KineticRun> {
    kc.validate()?;
    let p = sample_initial(&kc.f0, kc.n_agents, kc.seed)?;
    run_from(p, kc, cfg, law)
}

/// Evolves a given population; `kc.n_agents` and `kc.f0` are ignored.
pub fn run_from(
    mut p: Population,
    kc: &KineticConfig,
    cfg: &ModelConfig,
    law: Option<&dyn FeedbackLaw>,
) -> Result<KineticRun> {
    cfg.validate()?;
    kc.validate_stepping()?;
    p.validate()?;
    let sdre = SdreLaw { cfg: *cfg };
    let law = resolve_law(kc, &sdre, law)?;
    let mut rng = rng_for(p.rng_seed, MATCHING_STREAM);
    let mut steps = vec![record(&p, kc.histogram_bins)];
    let mut clamp_hits = 0u64;
    for _ in 0..kc.n_steps {
        let pairs = random_matching(p.len(), &mut rng);
        clamp_hits += u64::from(collide_all(&mut p, &pairs, kc.eps, law, cfg)?);
        p.validate()?;
        steps.push(record(&p, kc.histogram_bins));
    }
    Ok(KineticRun { steps, population: p, clamp_hits })
}

pub fn write_moments_csv<W: Write>(steps: &[KineticStep], mut w: W) -> std::io::Result<()> {
    writeln!(w, "step,mean,variance")?;
    for s in steps {
        writeln!(w, "{},{:e},{:e}", s.step, s.mean, s.variance)?;
    }
    Ok(())
}

pub fn write_histogram_csv<W: Write>(step: &KineticStep, mut w: W) -> std::io::Result<()> {
    writeln!(w, "bin_center,density")?;
    for (c, d) in bin_centers(step.density.len()).iter().zip(&step.density) {
        writeln!(w, "{c},{d:e}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdre::{integrate_closed_loop, PairController};

    const CFG: ModelConfig = ModelConfig { beta: -1.0, gamma: 0.025 };

    fn small(controller: ControllerKind, n_agents: usize) -> KineticConfig {
        KineticConfig { n_agents, controller, ..KineticConfig::default() }
    }

    #[test]
    fn degenerate_mixture_concentrates() {
        let spec = MixtureSpec { components: vec![MixtureComponent { weight: 1.0, mean: 0.0, std: 1e-6 }] };
        let p = sample_initial(&spec, 1000, 1).unwrap();
        assert!(p.opinions.iter().all(|x| x.abs() < 1e-4));
    }

    #[test]
    fn default_mixture_is_symmetric_and_supported() {
        let n = 20_000;
        let p = sample_initial(&MixtureSpec::default(), n, 2).unwrap();
        assert!(p.opinions.iter().all(|x| (-1.0..=1.0).contains(x)));
        let sigma = p.variance().sqrt();
        assert!(p.mean().abs() <= 3.0 * sigma / (n as f64).sqrt());
        assert_eq!(p, sample_initial(&MixtureSpec::default(), n, 2).unwrap());
    }

    #[test]
    fn pathological_mixture_stalls() {
        // almost all mass of a very wide component falls outside Ω
        let spec = MixtureSpec { components: vec![MixtureComponent { weight: 1.0, mean: 1.0, std: 1e4 }] };
        assert!(matches!(sample_initial(&spec, 100, 0), Err(Error::RejectionStall { .. })));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = MixtureSpec::default();
        spec.components[0].weight = 0.7;
        assert!(spec.validate().is_err());
        assert!(sample_initial(&MixtureSpec::default(), 3, 0).is_err());
        assert!(small(ControllerKind::OpenLoop, 10).validate().is_err());
        assert!(KineticConfig { eps: 0.0, ..KineticConfig::default() }.validate().is_err());
    }

    #[test]
    fn collision_examples() {
        let s = BinaryState::new(0.0, 0.5);
        assert_eq!(collide_pair(s, 0.0, (0.0, 0.0), &CFG), s);
        let out = collide_pair(s, 0.1, (0.0, 0.0), &CFG);
        assert!((out.xi + 0.025).abs() < 1e-15 && (out.xj - 0.51875).abs() < 1e-15);
        let c = BinaryState::new(0.4, 0.4);
        let u = crate::sdre::pair_controls(c, &CFG).unwrap();
        assert_eq!(collide_pair(c, 0.1, u, &CFG), c);
    }

    #[test]
    fn matching_is_perfect() {
        let mut rng = rng_for(5, 0);
        for n in [2, 10, 1000] {
            let m = random_matching(n, &mut rng);
            let mut seen = vec![0u8; n];
            for (i, j) in m {
                seen[i] += 1;
                seen[j] += 1;
            }
            assert!(seen.iter().all(|c| *c == 1));
        }
    }

    #[test]
    fn consensus_population_is_fixed() {
        let p = Population { opinions: vec![0.3; 64], step_count: 0, rng_seed: 0 };
        for ctl in [ControllerKind::None, ControllerKind::Sdre] {
            let run = run_from(p.clone(), &small(ctl, 64), &CFG, None).unwrap();
            assert_eq!(run.population.opinions, p.opinions);
            assert_eq!(run.population.step_count, 10);
        }
    }

    #[test]
    fn histogram_is_normalized() {
        let p = sample_initial(&MixtureSpec::default(), 5000, 3).unwrap();
        let d = p.histogram(100);
        let mass: f64 = d.iter().sum::<f64>() * 0.02;
        assert!((mass - 1.0).abs() < 1e-12);
        let edge = Population { opinions: vec![-1.0, 1.0], step_count: 0, rng_seed: 0 };
        let h = edge.histogram(4);
        assert_eq!(h, vec![1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn uncontrolled_mean_stays_near_zero() {
        let kc = KineticConfig { n_agents: 20_000, controller: ControllerKind::None, seed: 4, ..KineticConfig::default() };
        let run = run(&kc, &CFG, None).unwrap();
        for s in &run.steps {
            let se = (s.variance / kc.n_agents as f64).sqrt();
            assert!(s.mean.abs() <= 5.0 * se, "step {}: {}", s.step, s.mean);
        }
        assert!(run.steps.last().unwrap().variance >= run.steps[0].variance);
    }

    #[test]
    fn two_agents_match_pair_integrator() {
        let s0 = BinaryState::new(-0.45, 0.6);
        let kc = KineticConfig { n_agents: 2, n_steps: 25, ..KineticConfig::default() };
        let p = Population { opinions: vec![s0.xi, s0.xj], step_count: 0, rng_seed: 9 };
        let run = run_from(p, &kc, &CFG, None).unwrap();
        let sdre = SdreLaw { cfg: CFG };
        let traj = integrate_closed_loop(s0, &PairController::Feedback(&sdre), kc.eps, kc.eps * 25.0, &CFG).unwrap();
        let last = traj.states.last().unwrap();
        assert_eq!(run.population.opinions, vec![last.xi, last.xj]);
    }
}
