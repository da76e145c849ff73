//! Supervised datasets of SDRE labels: value, value gradient and control at
//! uniformly sampled pair states, persisted as CSV plus a key-value sidecar.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::io::{parse_csv, parse_f64, read_to_string, write_atomic};
use crate::linalg::Vec2;
use crate::model::{self, BinaryState, ModelConfig, TransformedState};
use crate::sdre::sdre_feedback;
use crate::{Error, Result};

pub const CSV_HEADER: [&str; 7] = ["xi", "xbar", "V", "dV1", "dV2", "u1", "u2"];
pub const TRAIN_FRACTION_NUM: usize = 4;
pub const TRAIN_FRACTION_DEN: usize = 5;
const RECHECK_ROWS: usize = 10;
const RECHECK_TOL: f64 = 1e-9;

// Independent ChaCha streams derived from one seed.
const STREAM_STATES: u64 = 0;
const STREAM_SPLIT: u64 = 1;
const STREAM_RECHECK: u64 = 2;

pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabeledSample {
    pub state: TransformedState,
    pub value: f64,
    pub grad_v: Vec2,
    pub u: Vec2,
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<LabeledSample>,
    pub seed: u64,
    pub cfg: ModelConfig,
    pub split: Split,
}

impl Dataset {
    pub fn train(&self) -> Vec<LabeledSample> {
        self.split.train.iter().map(|&i| self.samples[i]).collect()
    }

    pub fn validation(&self) -> Vec<LabeledSample> {
        self.split.validation.iter().map(|&i| self.samples[i]).collect()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Uniform draws of `(x_i, x_j) ∈ [−1, 1]²` mapped to `(x_i, x̄)`.
pub fn sample_states(n: usize, seed: u64) -> Vec<TransformedState> {
    let mut rng = rng_for(seed, STREAM_STATES);
    (0..n)
        .map(|_| {
            let xi = rng.random_range(-1.0..=1.0);
            let xj = rng.random_range(-1.0..=1.0);
            model::to_transformed(BinaryState::new(xi, xj))
        })
        .collect()
}

/// SDRE labels at a single state.
pub fn label(state: TransformedState, cfg: &ModelConfig) -> Result<LabeledSample> {
    let f = sdre_feedback(state, cfg)?;
    Ok(LabeledSample { state, value: f.value, grad_v: f.grad_v, u: f.u })
}

pub fn labels(states: &[TransformedState], cfg: &ModelConfig) -> Result<Vec<LabeledSample>> {
    states.par_iter().map(|s| label(*s, cfg)).collect()
}

/// Training-set size for `n` samples: `⌊4n/5⌋`, kept within `[1, n − 1]`.
pub fn train_size(n: usize) -> usize {
    (n * TRAIN_FRACTION_NUM / TRAIN_FRACTION_DEN).clamp(1, n.saturating_sub(1).max(1))
}

pub fn split_indices(n: usize, seed: u64) -> Split {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_for(seed, STREAM_SPLIT));
    let validation = idx.split_off(train_size(n));
    Split { train: idx, validation }
}

pub fn generate(n: usize, seed: u64, cfg: &ModelConfig) -> Result<Dataset> {
    cfg.validate()?;
    if n < 2 {
        return Err(Error::InvalidConfig(format!("dataset needs at least 2 samples, got {n}")));
    }
    let states = sample_states(n, seed);
    let samples = labels(&states, cfg)?;
    for (k, s) in samples.iter().enumerate() {
        if !(s.value >= 0.0) {
            return Err(Error::LabelMismatch { row: k, deviation: s.value });
        }
    }
    Ok(Dataset { samples, seed, cfg: *cfg, split: split_indices(n, seed) })
}

pub fn meta_path(csv: &Path) -> PathBuf {
    let mut s = csv.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

fn join(ids: &[usize]) -> String {
    ids.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

pub fn save(d: &Dataset, path: &Path) -> Result<()> {
    let mut meta = String::new();
    let _ = writeln!(meta, "n = {}", d.samples.len());
    let _ = writeln!(meta, "seed = {}", d.seed);
    let _ = writeln!(meta, "beta = {}", d.cfg.beta);
    let _ = writeln!(meta, "gamma = {}", d.cfg.gamma);
    let _ = writeln!(meta, "train = {}", join(&d.split.train));
    let _ = writeln!(meta, "validation = {}", join(&d.split.validation));
    write_atomic(path, |w| {
        writeln!(w, "{}", CSV_HEADER.join(","))?;
        for s in &d.samples {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                s.state.xi, s.state.xbar, s.value, s.grad_v[0], s.grad_v[1], s.u[0], s.u[1]
            )?;
        }
        Ok(())
    })?;
    write_atomic(&meta_path(path), |w| w.write_all(meta.as_bytes()))
}

/// Parses a flat `key = value` file; `#` starts a comment.
pub fn parse_key_values(path: &Path, text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::schema(path, format!("expected 'key = value', found '{line}'")))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

fn parse_ids(path: &Path, s: &str) -> Result<Vec<usize>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|_| Error::schema(path, format!("bad index '{t}'"))))
        .collect()
}

pub fn load(path: &Path) -> Result<Dataset> {
    let text = read_to_string(path)?;
    let rows = parse_csv(path, &text, &CSV_HEADER)?;
    let mut samples = Vec::with_capacity(rows.len());
    for row in rows {
        let f: Vec<f64> = row.iter().map(|x| parse_f64(path, x)).collect::<Result<_>>()?;
        samples.push(LabeledSample {
            state: TransformedState::new(f[0], f[1]),
            value: f[2],
            grad_v: [f[3], f[4]],
            u: [f[5], f[6]],
        });
    }

    let mpath = meta_path(path);
    let meta = parse_key_values(&mpath, &read_to_string(&mpath)?)?;
    let get = |k: &str| meta.get(k).ok_or_else(|| Error::schema(&mpath, format!("missing key '{k}'")));
    let num = |k: &str| -> Result<f64> { parse_f64(&mpath, get(k)?) };
    let seed = get("seed")?
        .parse::<u64>()
        .map_err(|_| Error::schema(&mpath, "seed is not an integer"))?;
    let cfg = ModelConfig { beta: num("beta")?, gamma: num("gamma")? };
    let split = Split { train: parse_ids(&mpath, get("train")?)?, validation: parse_ids(&mpath, get("validation")?)? };

    let n = samples.len();
    if num("n")? as usize != n {
        return Err(Error::schema(&mpath, format!("metadata n disagrees with {n} CSV rows")));
    }
    let mut seen = vec![false; n];
    for &i in split.train.iter().chain(&split.validation) {
        if i >= n || std::mem::replace(&mut seen[i], true) {
            return Err(Error::schema(&mpath, "split is not a disjoint cover of the rows"));
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::schema(&mpath, "split is not a disjoint cover of the rows"));
    }

    let d = Dataset { samples, seed, cfg, split };
    recheck_labels(&d)?;
    Ok(d)
}

/// Recomputes the SDRE labels of a few random rows.
pub fn recheck_labels(d: &Dataset) -> Result<()> {
    if d.samples.is_empty() {
        return Ok(());
    }
    let mut rng = rng_for(d.seed, STREAM_RECHECK);
    for _ in 0..RECHECK_ROWS.min(d.samples.len()) {
        let row = rng.random_range(0..d.samples.len());
        let stored = d.samples[row];
        let fresh = label(stored.state, &d.cfg)?;
        let pairs = [
            (stored.value, fresh.value),
            (stored.grad_v[0], fresh.grad_v[0]),
            (stored.grad_v[1], fresh.grad_v[1]),
            (stored.u[0], fresh.u[0]),
            (stored.u[1], fresh.u[1]),
        ];
        for (a, b) in pairs {
            let dev = (a - b).abs();
            if !(dev <= RECHECK_TOL * b.abs().max(1.0)) {
                return Err(Error::LabelMismatch { row, deviation: dev });
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdre::control_from_gradient;

    const CFG: ModelConfig = ModelConfig { beta: -1.0, gamma: 0.025 };

    #[test]
    fn sampling_is_deterministic_and_valid() {
        assert_eq!(sample_states(1, 42), sample_states(1, 42));
        assert_ne!(sample_states(1, 42), sample_states(1, 43));
        for t in sample_states(500, 1) {
            t.validate().unwrap();
        }
    }

    #[test]
    fn uniform_mean_within_three_sigma() {
        let n = 10_000;
        let mean = sample_states(n, 9).iter().map(|t| t.xi).sum::<f64>() / n as f64;
        let sigma = 1.0 / (3.0 * n as f64).sqrt();
        assert!(mean.abs() <= 3.0 * sigma, "{mean}");
    }

    #[test]
    fn split_sizes() {
        assert_eq!(train_size(1000), 800);
        assert_eq!(train_size(4), 3);
        assert_eq!(train_size(5), 4);
        assert_eq!(train_size(2), 1);
        let s = split_indices(1000, 3);
        assert_eq!((s.train.len(), s.validation.len()), (800, 200));
        let mut all: Vec<_> = s.train.iter().chain(&s.validation).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
    }

    #[test]
    fn labels_satisfy_ansatz() {
        let d = generate(200, 5, &CFG).unwrap();
        for s in &d.samples {
            assert!(s.value >= 0.0);
            assert_eq!(s.u, control_from_gradient(s.grad_v, &CFG));
            let u = [-s.grad_v[0] / (2.0 * CFG.r_scalar()), -s.grad_v[1] / (2.0 * CFG.r_scalar())];
            assert!((u[0] - s.u[0]).abs() <= 1e-12 * u[0].abs().max(1.0));
        }
        assert!(generate(1, 5, &CFG).is_err());
    }

    #[test]
    fn generation_is_bit_identical() {
        assert_eq!(generate(64, 77, &CFG).unwrap(), generate(64, 77, &CFG).unwrap());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let d = generate(3, 8, &CFG).unwrap();
        save(&d, &path).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(back, d);
        assert_eq!(back.split, d.split);
    }

    #[test]
    fn missing_column_is_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let d = generate(5, 8, &CFG).unwrap();
        save(&d, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, text.replacen("dV2,", "", 1)).unwrap();
        assert!(matches!(load(&path), Err(Error::Schema { .. })));
    }

    #[test]
    fn tampered_labels_are_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let d = generate(10, 8, &CFG).unwrap();
        save(&d, &path).unwrap();
        // Metadata now claims a different γ than the labels were built with.
        let meta = std::fs::read_to_string(meta_path(&path)).unwrap();
        std::fs::write(meta_path(&path), meta.replace("gamma = 0.025", "gamma = 0.5")).unwrap();
        assert!(matches!(load(&path), Err(Error::LabelMismatch { .. })));
    }
}
