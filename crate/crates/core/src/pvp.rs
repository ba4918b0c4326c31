//! The particle's point of view: instead of following the particle from cell to
//! cell, the environment is shifted so that the particle always sits in the
//! reference cell. The exit signs form an integer cocycle whose zeros are the
//! returns of the particle to its starting cell.

use crate::error::{Error, Result, SingularKind};
use crate::flow::{EventKind, Flow};
use crate::rng;
use crate::sections::{sample_measure, Section, SectionTag};
use crate::tube::{QuenchedTube, TubeConfig};
use crate::vec3::LineElement;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;

/// Collision budget for a single cell passage.
pub const CELL_BUDGET: u64 = 1_000_000;

/// A point of `N₀ × Ω^ℤ`: a line element entering the reference cell through
/// `gate`, with the environment shifted by `env_offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PvpState {
    /// Cell-frame coordinates.
    pub x: LineElement,
    pub gate: u8,
    pub env_offset: i64,
}

impl PvpState {
    pub fn new(x: LineElement, gate: u8) -> Self {
        Self { x, gate, env_offset: 0 }
    }
}

/// Result of one cell passage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellExit {
    /// The element entering the neighbouring cell, in its own frame.
    pub x: LineElement,
    /// Gate of the neighbouring cell it enters through.
    pub gate: u8,
    /// `+1` out through G², `−1` out through G¹.
    pub exit: i8,
    pub collisions: u64,
    pub time: f64,
}

/// `R_ω`: follows an element entering cell `cell` until it first crosses one
/// of the cell's gates.
pub fn r_omega(tube: &QuenchedTube, cell: i64, x: LineElement, gate: u8) -> Result<CellExit> {
    r_omega_budget(tube, cell, x, gate, CELL_BUDGET)
}

pub fn r_omega_budget(tube: &QuenchedTube, cell: i64, x: LineElement, gate: u8, budget: u64) -> Result<CellExit> {
    let inward = if gate == 1 { x.v.x } else { -x.v.x };
    if !(inward > 0.0) || !(gate == 1 || gate == 2) {
        return Err(Error::InvalidArgument("element does not enter the cell through a gate".into()));
    }
    let mut f = Flow::<f64>::local(tube, cell, x, None)?;
    loop {
        if f.collisions() >= budget {
            return Err(Error::NotExited { budget });
        }
        let st = f.step()?;
        match st.kind {
            EventKind::GateCrossing => {
                let exit: i8 = if f.cell_index() > cell { 1 } else { -1 };
                return Ok(CellExit {
                    x: f.line(),
                    gate: if exit > 0 { 1 } else { 2 },
                    exit,
                    collisions: f.collisions(),
                    time: f.time(),
                });
            }
            k if k.is_singular() => {
                return Err(Error::SingularOrbit(k.singular_kind().unwrap_or(SingularKind::Edge)));
            }
            _ => {}
        }
    }
}

/// `F(x, λ) = (R_{λ₀}(x), σ^{e}(λ))`.
pub fn f_step(tube: &QuenchedTube, s: &PvpState) -> Result<(PvpState, i8)> {
    let e = r_omega(tube, s.env_offset, s.x, s.gate)?;
    Ok((PvpState { x: e.x, gate: e.gate, env_offset: s.env_offset + e.exit as i64 }, e.exit))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrbitEnd {
    /// Ran the requested number of steps (or stopped early as requested).
    Completed,
    Singular,
    NotExited,
}

impl OrbitEnd {
    fn as_str(self) -> &'static str {
        match self {
            OrbitEnd::Completed => "completed",
            OrbitEnd::Singular => "singular",
            OrbitEnd::NotExited => "not_exited",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocycleRecord {
    pub exits: Vec<i8>,
    /// `S_0, …, S_n`.
    pub sums: Vec<i64>,
    /// Least `n ≥ 1` with `S_n = 0`.
    pub first_zero: Option<u64>,
    pub end: OrbitEnd,
}

impl CocycleRecord {
    /// Builds the record from a sequence of exit signs.
    pub fn from_exits(exits: Vec<i8>, end: OrbitEnd) -> Self {
        let mut sums = Vec::with_capacity(exits.len() + 1);
        sums.push(0i64);
        let mut first_zero = None;
        for (k, &e) in exits.iter().enumerate() {
            let s = sums[k] + e as i64;
            if s == 0 && first_zero.is_none() {
                first_zero = Some(k as u64 + 1);
            }
            sums.push(s);
        }
        Self { exits, sums, first_zero, end }
    }

    pub fn steps(&self) -> u64 {
        self.exits.len() as u64
    }
}

/// Iterates `F` from `x0` for up to `n_max` steps.
pub fn cocycle(tube: &QuenchedTube, x0: &PvpState, n_max: u64) -> CocycleRecord {
    cocycle_until(tube, x0, n_max, None)
}

/// Like [`cocycle`]; with `stop_after_zero = Some(m)` the orbit stops at the
/// first zero of `S` once at least `m` steps were made.
pub fn cocycle_until(tube: &QuenchedTube, x0: &PvpState, n_max: u64, stop_after_zero: Option<u64>) -> CocycleRecord {
    let mut s = *x0;
    let mut exits = Vec::new();
    let mut zero_seen = false;
    let mut end = OrbitEnd::Completed;
    while (exits.len() as u64) < n_max {
        match f_step(tube, &s) {
            Ok((next, e)) => {
                exits.push(e);
                s = next;
                zero_seen |= s.env_offset == x0.env_offset;
                if stop_after_zero.is_some_and(|m| zero_seen && exits.len() as u64 >= m) {
                    break;
                }
            }
            Err(Error::NotExited { .. }) => {
                end = OrbitEnd::NotExited;
                break;
            }
            Err(_) => {
                end = OrbitEnd::Singular;
                break;
            }
        }
    }
    CocycleRecord::from_exits(exits, end)
}

/// Draws an initial condition from `μ₀` (the invariant measure on `N₀`).
pub fn sample_mu0(tube: &QuenchedTube, rng: &mut impl rand::Rng) -> Result<PvpState> {
    let p = sample_measure(tube, &Section::N { n: 0, gate: None }, 1, rng)?[0];
    let SectionTag::N { gate, .. } = p.section else { unreachable!() };
    Ok(PvpState::new(p.local, gate))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub tube: TubeConfig,
    /// One quenched realization per seed.
    pub tube_seeds: Vec<u64>,
    pub orbits_per_tube: usize,
    pub n_max: u64,
    /// Seed of the per-orbit initial-condition streams.
    pub master_seed: u64,
    /// Step at which `S_n` is recorded for the drift estimate; orbits run at
    /// least this long even after returning.
    pub drift_horizon: u64,
}

impl EnsembleConfig {
    pub fn new(tube: TubeConfig, tube_seeds: Vec<u64>, orbits_per_tube: usize, n_max: u64) -> Self {
        Self { tube, tube_seeds, orbits_per_tube, n_max, master_seed: 0, drift_horizon: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitRecord {
    pub seed: u64,
    pub orbit: usize,
    pub first_zero: Option<u64>,
    pub n_max: u64,
    pub steps: u64,
    /// `S` at the drift horizon, when reached.
    pub s_horizon: Option<i64>,
    pub termination: OrbitEnd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftEstimate {
    pub horizon: u64,
    pub samples: usize,
    /// `mean(S_n) / n`.
    pub drift: f64,
    /// `3 · RMS(S_n) / (n √N)`.
    pub band: f64,
    pub within_band: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrenceReport {
    pub orbits: usize,
    pub n_max: u64,
    pub return_fraction: f64,
    /// First-return time → number of orbits.
    pub return_time_histogram: BTreeMap<u64, u64>,
    pub drift: DriftEstimate,
    pub not_exited: usize,
    pub singular: usize,
    pub records: Vec<OrbitRecord>,
}

impl RecurrenceReport {
    /// Aggregates per-orbit records (in any order).
    pub fn from_records(mut records: Vec<OrbitRecord>, n_max: u64, horizon: u64) -> Self {
        records.sort_by_key(|r| (r.seed, r.orbit));
        let orbits = records.len();
        let returned = records.iter().filter(|r| r.first_zero.is_some_and(|z| z <= n_max)).count();
        let mut hist = BTreeMap::new();
        for z in records.iter().filter_map(|r| r.first_zero) {
            *hist.entry(z).or_insert(0) += 1;
        }
        let s: Vec<f64> = records.iter().filter_map(|r| r.s_horizon).map(|s| s as f64).collect();
        let n = horizon.max(1) as f64;
        let drift = if s.is_empty() {
            DriftEstimate { horizon, samples: 0, drift: 0.0, band: 0.0, within_band: true }
        } else {
            let k = s.len() as f64;
            let mean = s.iter().sum::<f64>() / k;
            let rms = (s.iter().map(|x| x * x).sum::<f64>() / k).sqrt();
            let band = 3.0 * rms / (n * k.sqrt());
            let drift = mean / n;
            DriftEstimate { horizon, samples: s.len(), drift, band, within_band: drift.abs() <= band }
        };
        Self {
            orbits,
            n_max,
            return_fraction: if orbits == 0 { 0.0 } else { returned as f64 / orbits as f64 },
            return_time_histogram: hist,
            drift,
            not_exited: records.iter().filter(|r| r.termination == OrbitEnd::NotExited).count(),
            singular: records.iter().filter(|r| r.termination == OrbitEnd::Singular).count(),
            records,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))
    }

    /// Per-orbit CSV: seed, orbit, first_zero (empty if none), n_max, termination.
    pub fn write_orbits_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["seed", "orbit", "first_zero", "n_max", "termination"])?;
        for r in &self.records {
            w.write_record([
                r.seed.to_string(),
                r.orbit.to_string(),
                r.first_zero.map_or(String::new(), |z| z.to_string()),
                r.n_max.to_string(),
                r.termination.as_str().to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs one orbit of the ensemble.
pub fn run_orbit(tube: &QuenchedTube, cfg: &EnsembleConfig, tube_idx: usize, orbit: usize) -> Result<OrbitRecord> {
    let seed = cfg.tube_seeds[tube_idx];
    let id = (tube_idx * cfg.orbits_per_tube + orbit) as u64;
    let mut r = rng::stream(cfg.master_seed, id);
    let x0 = sample_mu0(tube, &mut r)?;
    let horizon = cfg.drift_horizon.min(cfg.n_max);
    let rec = cocycle_until(tube, &x0, cfg.n_max, Some(horizon));
    Ok(OrbitRecord {
        seed,
        orbit,
        first_zero: rec.first_zero,
        n_max: cfg.n_max,
        steps: rec.steps(),
        s_horizon: (rec.steps() >= horizon).then(|| rec.sums[horizon as usize]),
        termination: rec.end,
    })
}

/// Recurrence statistics over quenched realizations and `μ₀` initial
/// conditions. Per-orbit results do not depend on scheduling.
pub fn recurrence_ensemble(cfg: &EnsembleConfig) -> Result<RecurrenceReport> {
    if cfg.tube_seeds.is_empty() || cfg.orbits_per_tube == 0 {
        return Err(Error::InvalidArgument("ensemble needs at least one tube and one orbit".into()));
    }
    let tubes: Vec<QuenchedTube> = cfg
        .tube_seeds
        .iter()
        .map(|&seed| QuenchedTube::new(TubeConfig { seed, ..cfg.tube.clone() }))
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> =
        (0..tubes.len()).flat_map(|t| (0..cfg.orbits_per_tube).map(move |o| (t, o))).collect();
    let records = jobs
        .par_iter()
        .map(|&(t, o)| run_orbit(&tubes[t], cfg, t, o))
        .collect::<Result<Vec<_>>>()?;
    Ok(RecurrenceReport::from_records(records, cfg.n_max, cfg.drift_horizon.min(cfg.n_max)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tube::TemplateParams;
    use crate::vec3::Vec3;

    #[test]
    fn cocycle_sums_from_exits() {
        let r = CocycleRecord::from_exits(vec![1, -1, 1, -1], OrbitEnd::Completed);
        assert_eq!(r.sums, vec![0, 1, 0, 1, 0]);
        assert_eq!(r.first_zero, Some(2));
        let r = CocycleRecord::from_exits(vec![], OrbitEnd::Completed);
        assert_eq!(r.sums, vec![0]);
        assert_eq!(r.first_zero, None);
    }

    #[test]
    fn empty_cell_passes_straight_through() {
        let tube = QuenchedTube::periodic(TemplateParams::empty()).unwrap();
        let x = LineElement::new(Vec3::new(0.0, 0.5, 0.5), Vec3::X);
        let e = r_omega(&tube, 0, x, 1).unwrap();
        assert_eq!(e.exit, 1);
        assert_eq!(e.gate, 1);
        assert_eq!(e.x, LineElement::new(Vec3::new(0.0, 0.5, 0.5), Vec3::X));
        let rec = cocycle(&tube, &PvpState::new(x, 1), 0);
        assert_eq!(rec.sums, vec![0]);
    }

    #[test]
    fn reversed_exit_goes_back() {
        let tube = QuenchedTube::new(TubeConfig::default()).unwrap();
        let mut r = rng::stream(11, 0);
        let mut checked = 0;
        // long passages are chaotic far beyond floating-point reversibility;
        // use the short ones
        while checked < 20 {
            let s = sample_mu0(&tube, &mut r).unwrap();
            let e = match r_omega_budget(&tube, 0, s.x, s.gate, 20) {
                Ok(e) => e,
                Err(Error::NotExited { .. }) => continue,
                Err(e) => panic!("{e}"),
            };
            checked += 1;
            // the exit element seen from cell 0, reversed
            let mut back = e.x;
            back.v = -back.v;
            let (gate, q_x) = if e.exit > 0 { (2, tube.h()) } else { (1, 0.0) };
            back.q.x = q_x;
            let b = r_omega(&tube, 0, back, gate).unwrap();
            // out through the gate the original came in by
            assert_eq!(b.exit, if s.gate == 1 { -1 } else { 1 });
            assert_eq!(b.gate, if s.gate == 1 { 2 } else { 1 });
            assert!((b.x.q.y - s.x.q.y).abs() < 1e-6 && (b.x.v + s.x.v).norm() < 1e-6);
        }
    }

    #[test]
    fn env_offset_tracks_the_cocycle() {
        let tube = QuenchedTube::new(TubeConfig::default()).unwrap();
        let x0 = sample_mu0(&tube, &mut rng::stream(12, 0)).unwrap();
        let mut s = x0;
        let mut exits = Vec::new();
        for _ in 0..20 {
            let (next, e) = f_step(&tube, &s).unwrap();
            exits.push(e);
            s = next;
        }
        let rec = CocycleRecord::from_exits(exits, OrbitEnd::Completed);
        assert_eq!(s.env_offset, *rec.sums.last().unwrap());
        assert_eq!(rec, cocycle(&tube, &x0, 20));
    }

    #[test]
    fn periodic_dynamics_ignores_the_offset() {
        let tube = QuenchedTube::periodic(TemplateParams::appendix()).unwrap();
        let x0 = sample_mu0(&tube, &mut rng::stream(13, 0)).unwrap();
        let (a, ea) = f_step(&tube, &x0).unwrap();
        let (b, eb) = f_step(&tube, &PvpState { env_offset: 17, ..x0 }).unwrap();
        assert_eq!((a.x, a.gate, ea), (b.x, b.gate, eb));
        assert_eq!(b.env_offset - 17, a.env_offset);
    }

    #[test]
    fn zero_budget_never_returns() {
        let cfg = EnsembleConfig::new(TubeConfig::default(), vec![1, 2], 3, 0);
        let rep = recurrence_ensemble(&cfg).unwrap();
        assert_eq!(rep.return_fraction, 0.0);
        assert_eq!(rep.orbits, 6);
    }
}
