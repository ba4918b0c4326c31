//! Two-sample energy test of invariance: fresh samples of an invariant
//! measure against the images of independent fresh samples under a map.

use crate::error::{Error, Result};
use crate::pvp::{f_step, sample_mu0};
use crate::rng::{derive_seed, stream, uniform_hemisphere};
use crate::sections::{poincare_n, sample_measure, Section, SectionPoint};
use crate::tube::{QuenchedTube, TubeConfig};
use crate::vec3::Vec3;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvarianceMap {
    Identity,
    /// The transparent-wall map on the gates.
    PoincareN,
    /// One step of the point-of-view-of-the-particle map, with a fresh
    /// environment for every sample.
    FStep,
}

impl std::str::FromStr for InvarianceMap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Self::Identity),
            "poincare_n" => Ok(Self::PoincareN),
            "f_step" => Ok(Self::FStep),
            _ => Err(Error::InvalidArgument(format!("unknown map {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InvarianceConfig {
    /// Samples per block; the statistic is the mean of per-block energy statistics.
    pub block: usize,
    pub permutations: usize,
    pub level: f64,
    pub seed: u64,
    /// Draw the reference sample with uniform instead of cosine-weighted
    /// velocities (a negative control that must fail).
    pub biased_reference: bool,
}

impl Default for InvarianceConfig {
    fn default() -> Self {
        Self { block: 100, permutations: 199, level: 0.99, seed: 0, biased_reference: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub map: InvarianceMap,
    pub samples: usize,
    pub blocks: usize,
    pub statistic: f64,
    pub threshold: f64,
    pub p_value: f64,
    pub pass: bool,
    /// Pushforward draws that hit a singular orbit and were redrawn.
    pub redrawn: u64,
}

/// Gate coordinates `(y, z, v)` of an N-point, plus an environment feature for
/// the PVP map.
pub type Features = Vec<f64>;

fn gate_features(p: &SectionPoint) -> Features {
    p.gate_coords().to_vec()
}

fn fresh_n(tube: &QuenchedTube, rng: &mut impl Rng, biased: bool) -> Result<SectionPoint> {
    let mut p = sample_measure(tube, &Section::N { n: 0, gate: None }, 1, rng)?[0];
    if biased {
        let inward = Vec3::new(p.local.v.x.signum(), 0.0, 0.0);
        p.local.v = uniform_hemisphere(inward, rng);
        p.x.v = p.local.v;
    }
    Ok(p)
}

fn env_tube(base: &TubeConfig, rng: &mut impl Rng) -> Result<QuenchedTube> {
    QuenchedTube::new(TubeConfig { seed: rng.random(), ..base.clone() })
}

fn env_feature(tube: &QuenchedTube, offset: i64) -> f64 {
    tube.draw(offset).cigars[0].rho
}

/// A fresh sample of the invariant measure of `map`.
pub fn reference_sample(tube: &QuenchedTube, map: InvarianceMap, rng: &mut impl Rng, biased: bool) -> Result<Features> {
    match map {
        InvarianceMap::Identity | InvarianceMap::PoincareN => Ok(gate_features(&fresh_n(tube, rng, biased)?)),
        InvarianceMap::FStep => {
            let env = env_tube(tube.config(), rng)?;
            let p = fresh_n(&env, rng, biased)?;
            let mut f = gate_features(&p);
            f.push(env_feature(&env, 0));
            Ok(f)
        }
    }
}

/// The image of a fresh sample under `map`; singular or trapped draws are
/// redrawn, and counted in the second component.
pub fn pushforward_sample(tube: &QuenchedTube, map: InvarianceMap, rng: &mut impl Rng) -> Result<(Features, u64)> {
    let mut redrawn = 0;
    loop {
        let r = match map {
            InvarianceMap::Identity => Ok(gate_features(&fresh_n(tube, rng, false)?)),
            InvarianceMap::PoincareN => poincare_n(tube, &fresh_n(tube, rng, false)?).map(|r| gate_features(&r.point)),
            InvarianceMap::FStep => {
                let env = env_tube(tube.config(), rng)?;
                let s = sample_mu0(&env, rng)?;
                f_step(&env, &s).map(|(s2, _)| {
                    let (q, v) = (s2.x.q, s2.x.v);
                    vec![q.y, q.z, v.x, v.y, v.z, env_feature(&env, s2.env_offset)]
                })
            }
        };
        match r {
            Ok(f) => return Ok((f, redrawn)),
            Err(Error::SingularOrbit(_) | Error::NotExited { .. }) => redrawn += 1,
            Err(e) => return Err(e),
        }
    }
}

/// `n` reference and `n` pushforward samples, each drawn from its own stream.
pub fn invariance_samples(
    tube: &QuenchedTube,
    map: InvarianceMap,
    n: usize,
    cfg: &InvarianceConfig,
) -> Result<(Vec<Features>, Vec<Features>, u64)> {
    let xs = (0..n)
        .into_par_iter()
        .map(|i| reference_sample(tube, map, &mut stream(cfg.seed, 2 * i as u64), cfg.biased_reference))
        .collect::<Result<Vec<_>>>()?;
    let ys = (0..n)
        .into_par_iter()
        .map(|i| pushforward_sample(tube, map, &mut stream(cfg.seed, 2 * i as u64 + 1)))
        .collect::<Result<Vec<_>>>()?;
    let redrawn = ys.iter().map(|y| y.1).sum();
    Ok((xs, ys.into_iter().map(|y| y.0).collect(), redrawn))
}

/// Outcome of [`energy_test`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyTest {
    pub blocks: usize,
    pub statistic: f64,
    pub threshold: f64,
    pub p_value: f64,
    pub pass: bool,
}

/// Standardizes every coordinate by the pooled standard deviation (constant
/// coordinates are left alone).
fn standardize(xs: &[Features], ys: &[Features]) -> (Vec<Features>, Vec<Features>) {
    let dim = xs[0].len();
    let all = || xs.iter().chain(ys.iter());
    let count = (xs.len() + ys.len()) as f64;
    let scale: Vec<(f64, f64)> = (0..dim)
        .map(|k| {
            let mean = all().map(|f| f[k]).sum::<f64>() / count;
            let var = all().map(|f| (f[k] - mean).powi(2)).sum::<f64>() / count;
            (mean, if var > 0.0 { var.sqrt() } else { 1.0 })
        })
        .collect();
    let apply = |v: &[Features]| v.iter().map(|f| f.iter().zip(&scale).map(|(x, (m, s))| (x - m) / s).collect()).collect();
    (apply(xs), apply(ys))
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `sᵀ D s` for the ±1 labels `s`.
fn quadratic(d: &[f64], s: &[f64]) -> f64 {
    let m = s.len();
    (0..m).map(|i| s[i] * d[i * m..(i + 1) * m].iter().zip(s).map(|(a, b)| a * b).sum::<f64>()).sum()
}

/// Block energy test: the mean over blocks of the two-sample energy statistic
/// of `cfg.block` reference against `cfg.block` pushforward points, calibrated
/// by relabelling within blocks.
pub fn energy_test(xs: &[Features], ys: &[Features], cfg: &InvarianceConfig) -> Result<EnergyTest> {
    let b = cfg.block;
    if b < 2 || xs.len() != ys.len() || xs.len() < b {
        return Err(Error::InvalidArgument("need equal samples of at least one block".into()));
    }
    let (xs, ys) = standardize(xs, ys);
    let blocks = xs.len() / b;
    let m = 2 * b;
    let labels: Vec<f64> = (0..m).map(|i| if i < b { 1.0 } else { -1.0 }).collect();
    let norm = 1.0 / (b * b) as f64;
    // per block: the observed statistic and the permuted ones
    let per_block: Vec<(f64, Vec<f64>)> = (0..blocks)
        .into_par_iter()
        .map(|k| {
            let pts: Vec<&Features> = xs[k * b..(k + 1) * b].iter().chain(&ys[k * b..(k + 1) * b]).collect();
            let mut d = vec![0.0; m * m];
            for i in 0..m {
                for j in 0..i {
                    let v = distance(pts[i], pts[j]);
                    d[i * m + j] = v;
                    d[j * m + i] = v;
                }
            }
            let observed = -quadratic(&d, &labels) * norm;
            let mut rng = stream(derive_seed(cfg.seed, 0xe7e7), k as u64);
            let mut s = labels.clone();
            let perms = (0..cfg.permutations)
                .map(|_| {
                    s.shuffle(&mut rng);
                    -quadratic(&d, &s) * norm
                })
                .collect();
            (observed, perms)
        })
        .collect();
    let statistic = per_block.iter().map(|p| p.0).sum::<f64>() / blocks as f64;
    let mut null: Vec<f64> = (0..cfg.permutations)
        .map(|p| per_block.iter().map(|b| b.1[p]).sum::<f64>() / blocks as f64)
        .collect();
    null.sort_by(f64::total_cmp);
    let above = null.iter().filter(|&&t| t >= statistic).count();
    let p_value = (1 + above) as f64 / (cfg.permutations + 1) as f64;
    let k = ((cfg.level * (cfg.permutations + 1) as f64).ceil() as usize).clamp(1, null.len()) - 1;
    Ok(EnergyTest { blocks, statistic, threshold: null[k], p_value, pass: p_value > 1.0 - cfg.level })
}

/// Tests whether `map` preserves its invariant measure, from `n_samples`
/// reference and `n_samples` pushforward points.
pub fn measure_invariance_test(tube: &QuenchedTube, map: InvarianceMap, n_samples: usize, cfg: &InvarianceConfig) -> Result<InvarianceReport> {
    let (xs, ys, redrawn) = invariance_samples(tube, map, n_samples, cfg)?;
    let t = energy_test(&xs, &ys, cfg)?;
    Ok(InvarianceReport {
        map,
        samples: n_samples,
        blocks: t.blocks,
        statistic: t.statistic,
        threshold: t.threshold,
        p_value: t.p_value,
        pass: t.pass,
        redrawn,
    })
}
