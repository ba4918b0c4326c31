//! Lyapunov exponents of the flow, per unit time, by the tangent map
//! (Benettin with Gram–Schmidt) or by a renormalized shadow orbit.

use super::tangent::Jacobi;
use crate::error::{Error, Result};
use crate::flow::{start_cell, EventKind, Flow, FlowState};
use crate::geometry::ShapeOperator;
use crate::rng::{frame, stream};
use crate::sections::{sample_measure, Section};
use crate::tube::QuenchedTube;
use crate::vec3::{LineElement, Vec3};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LyapunovMethod {
    Tangent,
    Shadow,
}

impl std::str::FromStr for LyapunovMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tangent" => Ok(Self::Tangent),
            "shadow" => Ok(Self::Shadow),
            _ => Err(Error::InvalidArgument(format!("unknown Lyapunov method {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LyapunovConfig {
    /// Reflections per orbit.
    pub n_events: u64,
    pub method: LyapunovMethod,
    /// Initial separation of the shadow orbit.
    pub shadow_offset: f64,
    /// Bootstrap blocks per orbit.
    pub blocks: usize,
    pub resamples: usize,
    pub confidence: f64,
    pub seed: u64,
    /// Running estimates are recorded every this many reflections.
    pub record_every: u64,
}

impl Default for LyapunovConfig {
    fn default() -> Self {
        Self {
            n_events: 10_000,
            method: LyapunovMethod::Tangent,
            shadow_offset: 1e-9,
            blocks: 20,
            resamples: 1000,
            confidence: 0.99,
            seed: 0,
            record_every: 100,
        }
    }
}

/// Log growth and elapsed time over a stretch of orbit.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Block {
    pub log1: f64,
    pub log2: f64,
    pub time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunningEstimate {
    pub orbit: usize,
    pub events: u64,
    pub time: f64,
    pub lambda1: f64,
    pub lambda2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitExponents {
    pub lambda1: f64,
    pub lambda2: Option<f64>,
    pub time: f64,
    pub events: u64,
    /// Fresh starts after singular events.
    pub restarts: u64,
    /// Shadow intervals dropped because the two orbits took different paths.
    pub discarded: u64,
    pub blocks: Vec<Block>,
    pub running: Vec<RunningEstimate>,
}

struct Accumulator<'c> {
    cfg: &'c LyapunovConfig,
    orbit: usize,
    total: Block,
    blocks: Vec<Block>,
    events: u64,
    restarts: u64,
    discarded: u64,
    running: Vec<RunningEstimate>,
    two: bool,
}

impl<'c> Accumulator<'c> {
    fn new(cfg: &'c LyapunovConfig, orbit: usize, two: bool) -> Self {
        Self {
            cfg,
            orbit,
            total: Block::default(),
            blocks: vec![Block::default(); cfg.blocks.max(1)],
            events: 0,
            restarts: 0,
            discarded: 0,
            running: Vec::new(),
            two,
        }
    }

    fn done(&self) -> bool {
        self.events >= self.cfg.n_events
    }

    /// Adds the growth over an interval holding `events` reflections.
    fn push(&mut self, log1: f64, log2: f64, time: f64, events: u64) {
        let k = ((self.events as u128 * self.blocks.len() as u128) / self.cfg.n_events.max(1) as u128) as usize;
        let last = self.blocks.len() - 1;
        let b = &mut self.blocks[k.min(last)];
        for acc in [b, &mut self.total] {
            acc.log1 += log1;
            acc.log2 += log2;
            acc.time += time;
        }
        self.count(events);
    }

    fn count(&mut self, events: u64) {
        let every = self.cfg.record_every.max(1);
        let before = self.events / every;
        self.events += events;
        if self.events / every > before && self.total.time > 0.0 {
            self.running.push(RunningEstimate {
                orbit: self.orbit,
                events: self.events,
                time: self.total.time,
                lambda1: self.total.log1 / self.total.time,
                lambda2: self.two.then(|| self.total.log2 / self.total.time),
            });
        }
    }

    fn finish(self) -> OrbitExponents {
        let t = self.total.time;
        OrbitExponents {
            lambda1: self.total.log1 / t,
            lambda2: self.two.then(|| self.total.log2 / t),
            time: t,
            events: self.events,
            restarts: self.restarts,
            discarded: self.discarded,
            blocks: self.blocks,
            running: self.running,
        }
    }
}

fn fresh_start(tube: &QuenchedTube, rng: &mut impl Rng) -> Result<LineElement> {
    Ok(sample_measure(tube, &Section::N { n: 0, gate: None }, 1, rng)?[0].x)
}

fn flow_at(tube: &QuenchedTube, x: LineElement) -> Result<Flow<'_, f64>> {
    Flow::new(tube, &FlowState::new(x, start_cell(tube, &x)))
}

fn shape_of(f: &Flow<'_, f64>, kind: EventKind, surface: usize, p: Vec3) -> ShapeOperator {
    if kind == EventKind::Dispersing {
        f.cell().local[surface].shape_operator_unchecked(p)
    } else {
        ShapeOperator::FLAT
    }
}

/// Exponents along one orbit by the tangent map.
pub fn tangent_orbit(tube: &QuenchedTube, x0: LineElement, cfg: &LyapunovConfig, orbit: usize, rng: &mut impl Rng) -> Result<OrbitExponents> {
    let mut acc = Accumulator::new(cfg, orbit, true);
    let mut x = x0;
    'segment: while !acc.done() {
        let mut f = flow_at(tube, x)?;
        let (e1, e2) = frame(f.line().v);
        let mut js = [Jacobi::new(e1, Vec3::ZERO), Jacobi::new(e2, Vec3::ZERO)];
        let mut pending = 0.0;
        while !acc.done() {
            let st = match f.step() {
                Ok(st) if !st.kind.is_singular() => st,
                Ok(_) | Err(Error::SingularOrbit(_)) => {
                    acc.restarts += 1;
                    x = fresh_start(tube, rng)?;
                    continue 'segment;
                }
                Err(e) => return Err(e),
            };
            pending += st.flight;
            let shape = shape_of(&f, st.kind, st.surface, st.hit.point);
            let v = f.line().v;
            js = js.map(|j| j.step(&st, &shape).transverse(v));
            if !st.kind.is_reflection() {
                continue;
            }
            let [a, b] = js;
            let r1 = a.norm();
            let a = a.scaled(1.0 / r1);
            let b = b.sub(&a, a.dot(&b));
            let r2 = b.norm();
            js = [a, b.scaled(1.0 / r2)];
            acc.push(r1.ln(), r2.ln(), pending, 1);
            pending = 0.0;
        }
    }
    Ok(acc.finish())
}

fn random_direction(v: Vec3, rng: &mut impl Rng) -> Jacobi {
    let (e1, e2) = frame(v);
    let c: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
    let j = Jacobi::new(e1 * c[0] + e2 * c[1], e1 * c[2] + e2 * c[3]);
    j.scaled(1.0 / j.norm())
}

fn displaced<'a>(tube: &'a QuenchedTube, at: &Flow<'a, f64>, dir: &Jacobi, d0: f64) -> Result<Flow<'a, f64>> {
    let x = at.line();
    let x = LineElement::new(x.q + dir.dq * d0, (x.v + dir.dv * d0).normalized());
    Flow::local(tube, at.cell_index(), x, None)
}

/// `f` moved to the middle of its next free flight.
fn midpoint<'a>(f: &Flow<'a, f64>) -> Result<Flow<'a, f64>> {
    let mut m = f.clone();
    let t = f.peek()?.hit.t;
    m.advance_free(0.5 * t);
    Ok(m)
}

type Itinerary = Vec<(i64, usize, EventKind)>;

/// Largest exponent along one orbit from the separation of a shadow orbit,
/// renormalized to `cfg.shadow_offset` halfway through every free flight.
pub fn shadow_orbit(tube: &QuenchedTube, x0: LineElement, cfg: &LyapunovConfig, orbit: usize, rng: &mut impl Rng) -> Result<OrbitExponents> {
    let d0 = cfg.shadow_offset;
    let mut acc = Accumulator::new(cfg, orbit, false);
    let mut x = x0;
    'segment: while !acc.done() {
        let mut f = flow_at(tube, x)?;
        let restart = |acc: &mut Accumulator, x: &mut LineElement, rng: &mut _| -> Result<()> {
            acc.restarts += 1;
            *x = fresh_start(tube, rng)?;
            Ok(())
        };
        let Ok(mut mid) = midpoint(&f) else {
            restart(&mut acc, &mut x, rng)?;
            continue 'segment;
        };
        let mut shadow = displaced(tube, &mid, &random_direction(mid.line().v, rng), d0)?;
        while !acc.done() {
            // the reference moves on by one reflection
            let mut path: Itinerary = Vec::new();
            let mut reflections = 0;
            while reflections == 0 {
                match f.step() {
                    Ok(st) if !st.kind.is_singular() => {
                        path.push((st.cell, st.surface, st.kind));
                        reflections += st.kind.is_reflection() as u64;
                    }
                    Ok(_) | Err(Error::SingularOrbit(_)) => {
                        restart(&mut acc, &mut x, rng)?;
                        continue 'segment;
                    }
                    Err(e) => return Err(e),
                }
            }
            let next = match midpoint(&f) {
                Ok(m) => m,
                Err(Error::SingularOrbit(_)) => {
                    restart(&mut acc, &mut x, rng)?;
                    continue 'segment;
                }
                Err(e) => return Err(e),
            };
            let elapsed = next.time() - mid.time();
            let followed = follow(&mut shadow, elapsed);
            let same = matches!(&followed, Ok(p) if *p == path) && shadow.cell_index() == next.cell_index();
            let v = next.line().v;
            let dir = if same {
                let (a, b) = (shadow.line(), next.line());
                let diff = Jacobi::new(a.q - b.q, a.v - b.v).transverse(v);
                let d = diff.norm();
                acc.push((d / d0).ln(), 0.0, elapsed, reflections);
                diff.scaled(1.0 / d)
            } else {
                acc.discarded += 1;
                acc.count(reflections);
                random_direction(v, rng)
            };
            shadow = displaced(tube, &next, &dir, d0)?;
            mid = next;
        }
    }
    Ok(acc.finish())
}

/// Runs `f` for `dt` more time and returns the events on the way.
fn follow(f: &mut Flow<'_, f64>, dt: f64) -> Result<Itinerary> {
    let end = f.time() + dt;
    let mut path = Vec::new();
    loop {
        let c = f.peek()?;
        if f.time() + c.hit.t > end {
            f.advance_free(end - f.time());
            return Ok(path);
        }
        let st = f.apply(c)?;
        if st.kind.is_singular() {
            return Err(Error::SingularOrbit(st.kind.singular_kind().expect("singular")));
        }
        path.push((st.cell, st.surface, st.kind));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovReport {
    pub method: LyapunovMethod,
    pub orbits: usize,
    pub events: u64,
    pub time: f64,
    pub lambda1: f64,
    pub lambda2: Option<f64>,
    pub confidence: f64,
    pub ci1: [f64; 2],
    pub ci2: Option<[f64; 2]>,
    pub restarts: u64,
    pub discarded: u64,
    pub per_orbit: Vec<f64>,
    #[serde(skip)]
    pub running: Vec<RunningEstimate>,
}

impl LyapunovReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))
    }

    /// Running estimates: `orbit,events,time,lambda1,lambda2`.
    pub fn write_running_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.running {
            w.serialize(r)?;
        }
        if self.running.is_empty() {
            w.write_record(["orbit", "events", "time", "lambda1", "lambda2"])?;
        }
        w.flush()?;
        Ok(())
    }

    fn pool(method: LyapunovMethod, cfg: &LyapunovConfig, orbits: Vec<OrbitExponents>) -> Self {
        let blocks: Vec<Block> = orbits.iter().flat_map(|o| o.blocks.iter().copied()).filter(|b| b.time > 0.0).collect();
        let time: f64 = blocks.iter().map(|b| b.time).sum();
        let l1 = blocks.iter().map(|b| b.log1).sum::<f64>() / time;
        let l2 = blocks.iter().map(|b| b.log2).sum::<f64>() / time;
        let mut rng = stream(cfg.seed, u64::MAX);
        let two = method == LyapunovMethod::Tangent;
        let ci1 = bootstrap(&blocks, |b| b.log1, cfg, &mut rng);
        let ci2 = two.then(|| bootstrap(&blocks, |b| b.log2, cfg, &mut rng));
        Self {
            method,
            orbits: orbits.len(),
            events: orbits.iter().map(|o| o.events).sum(),
            time,
            lambda1: l1,
            lambda2: two.then_some(l2),
            confidence: cfg.confidence,
            ci1,
            ci2,
            restarts: orbits.iter().map(|o| o.restarts).sum(),
            discarded: orbits.iter().map(|o| o.discarded).sum(),
            per_orbit: orbits.iter().map(|o| o.lambda1).collect(),
            running: orbits.into_iter().flat_map(|o| o.running).collect(),
        }
    }
}

/// Percentile interval of the ratio estimator under block resampling.
fn bootstrap(blocks: &[Block], log: impl Fn(&Block) -> f64, cfg: &LyapunovConfig, rng: &mut impl Rng) -> [f64; 2] {
    if blocks.len() < 2 {
        return [f64::NAN, f64::NAN];
    }
    let mut stats: Vec<f64> = (0..cfg.resamples.max(1))
        .map(|_| {
            let (mut l, mut t) = (0.0, 0.0);
            for _ in 0..blocks.len() {
                let b = &blocks[rng.random_range(0..blocks.len())];
                l += log(b);
                t += b.time;
            }
            l / t
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    let tail = 0.5 * (1.0 - cfg.confidence);
    let at = |p: f64| stats[((p * (stats.len() - 1) as f64).round() as usize).min(stats.len() - 1)];
    [at(tail), at(1.0 - tail)]
}

/// Exponents over independent orbits started at `starts`, pooled.
pub fn lyapunov_spectrum(tube: &QuenchedTube, starts: &[LineElement], cfg: &LyapunovConfig) -> Result<LyapunovReport> {
    if cfg.n_events == 0 || starts.is_empty() {
        return Err(Error::InvalidArgument("need at least one orbit and one event".into()));
    }
    let orbits = starts
        .par_iter()
        .enumerate()
        .map(|(i, &x)| {
            let mut rng = stream(cfg.seed, i as u64);
            match cfg.method {
                LyapunovMethod::Tangent => tangent_orbit(tube, x, cfg, i, &mut rng),
                LyapunovMethod::Shadow => shadow_orbit(tube, x, cfg, i, &mut rng),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LyapunovReport::pool(cfg.method, cfg, orbits))
}

/// `count` starting points drawn from the gate measure of cell 0.
pub fn sample_starts(tube: &QuenchedTube, count: usize, seed: u64) -> Result<Vec<LineElement>> {
    let mut rng = stream(seed, u64::MAX - 1);
    Ok(sample_measure(tube, &Section::N { n: 0, gate: None }, count, &mut rng)?.into_iter().map(|p| p.x).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tube::{TemplateParams, TubeConfig};

    fn cfg(method: LyapunovMethod, n: u64) -> LyapunovConfig {
        LyapunovConfig { n_events: n, method, ..LyapunovConfig::default() }
    }

    #[test]
    fn flat_box_has_no_exponent() {
        let tube = QuenchedTube::periodic(TemplateParams::empty()).unwrap();
        let starts = sample_starts(&tube, 1, 1).unwrap();
        let r = lyapunov_spectrum(&tube, &starts, &cfg(LyapunovMethod::Tangent, 100_000)).unwrap();
        assert!(r.lambda1.abs() < 1e-3, "{}", r.lambda1);
        assert_eq!(r.restarts, 0);
    }

    #[test]
    fn default_tube_is_hyperbolic() {
        let tube = QuenchedTube::new(TubeConfig::default()).unwrap();
        let starts = sample_starts(&tube, 2, 2).unwrap();
        let r = lyapunov_spectrum(&tube, &starts, &cfg(LyapunovMethod::Tangent, 5000)).unwrap();
        assert!(r.ci1[0] > 0.0, "{r:?}");
        assert!(r.lambda1 >= r.lambda2.unwrap());
        assert!(r.lambda2.unwrap() > 0.0);
    }

    #[test]
    fn tangent_and_shadow_agree() {
        let tube = QuenchedTube::new(TubeConfig::default()).unwrap();
        let starts = sample_starts(&tube, 1, 3).unwrap();
        let a = lyapunov_spectrum(&tube, &starts, &cfg(LyapunovMethod::Tangent, 10_000)).unwrap();
        let b = lyapunov_spectrum(&tube, &starts, &cfg(LyapunovMethod::Shadow, 10_000)).unwrap();
        let rel = (a.lambda1 - b.lambda1).abs() / a.lambda1;
        assert!(rel < 0.05, "tangent {} shadow {}", a.lambda1, b.lambda1);
    }

    #[test]
    fn running_estimates_are_recorded() {
        let tube = QuenchedTube::new(TubeConfig::default()).unwrap();
        let starts = sample_starts(&tube, 1, 4).unwrap();
        let r = lyapunov_spectrum(&tube, &starts, &cfg(LyapunovMethod::Tangent, 1000)).unwrap();
        assert_eq!(r.running.len(), 10);
        let mut buf = Vec::new();
        r.write_running_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("orbit,events,time,lambda1,lambda2\n"));
        assert_eq!(text.lines().count(), 11);
    }
}
