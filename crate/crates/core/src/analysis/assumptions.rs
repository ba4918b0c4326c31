//! Numerical checks of the curvature bounds (A3), the head-on collision
//! property (A4) and the linear size of singularity neighbourhoods (A6).

use crate::error::{Error, Result, SingularKind};
use crate::flow::{start_cell, EventKind, Flow, FlowState, StopRule, Termination};
use crate::geometry::{Axis, Surface, SurfaceKind};
use crate::rng::{frame, stream};
use crate::sections::{poincare_m_with, sample_measure, sample_uniform_m, Section, SectionPoint};
use crate::tube::{CellConfig, QuenchedTube};
use crate::vec3::{LineElement, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct A3Report {
    pub samples: usize,
    pub dispersing_pieces: usize,
    /// Flat pieces, left out of the curvature range.
    pub flat_pieces: usize,
    /// Range of the circumferential curvature.
    pub k_transverse: [f64; 2],
    /// Range of the curvature along the axis.
    pub k_longitudinal: [f64; 2],
    pub k_min: f64,
    pub k_max: f64,
    /// Sampled points with a non-positive principal curvature.
    pub violations: usize,
}

impl A3Report {
    pub fn pass(&self) -> bool {
        self.violations == 0
    }
}

fn axis_of(s: &Surface) -> Option<&Axis> {
    match &s.kind {
        SurfaceKind::Cylinder(c) => Some(&c.axis),
        SurfaceKind::Cigar(c) => Some(&c.axis),
        _ => None,
    }
}

fn radius_of(s: &Surface, z: f64) -> f64 {
    match &s.kind {
        SurfaceKind::Cylinder(c) => c.radius,
        SurfaceKind::Cigar(c) => c.radius_at(z),
        _ => 0.0,
    }
}

/// Samples `samples` points on every dispersing piece of `cell` and records
/// the principal curvatures seen from the billiard domain.
pub fn check_a3(cell: &CellConfig, samples: usize, seed: u64) -> A3Report {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = A3Report {
        samples: 0,
        dispersing_pieces: 0,
        flat_pieces: 0,
        k_transverse: [f64::INFINITY, f64::NEG_INFINITY],
        k_longitudinal: [f64::INFINITY, f64::NEG_INFINITY],
        k_min: f64::INFINITY,
        k_max: f64::NEG_INFINITY,
        violations: 0,
    };
    for s in cell.local.iter().filter(|s| s.enabled && !s.is_gate()) {
        let Some(ax) = axis_of(s).filter(|_| s.dispersing) else {
            rep.flat_pieces += 1;
            continue;
        };
        rep.dispersing_pieces += 1;
        for _ in 0..samples {
            let z = rng.random_range(ax.lo..=ax.hi);
            let phi = rng.random_range(ax.phi_span[0]..=ax.phi_span[1]);
            let shape = s.shape_operator_unchecked(ax.point_at(z, phi, radius_of(s, z)));
            let (k1, k2) = (shape.k1, shape.k2);
            rep.k_transverse = [rep.k_transverse[0].min(k1), rep.k_transverse[1].max(k1)];
            rep.k_longitudinal = [rep.k_longitudinal[0].min(k2), rep.k_longitudinal[1].max(k2)];
            rep.k_min = rep.k_min.min(k1.min(k2));
            rep.k_max = rep.k_max.max(k1.max(k2));
            if k1.min(k2) <= 0.0 {
                rep.violations += 1;
            }
            rep.samples += 1;
        }
    }
    rep
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct A4Config {
    pub n_trajectories: usize,
    pub windows_per_traj: usize,
    /// Defaults to the tube's `L`.
    pub window_length: Option<f64>,
    /// Offset between consecutive windows; defaults to half the window.
    pub slide: Option<f64>,
    pub seed: u64,
    /// Offending windows kept in the report.
    pub max_dumped: usize,
}

impl Default for A4Config {
    fn default() -> Self {
        Self { n_trajectories: 100, windows_per_traj: 100, window_length: None, slide: None, seed: 0, max_dumped: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct A4Window {
    pub trajectory: usize,
    /// Start of the orbit piece the window belongs to, in tube coordinates.
    pub orbit_start: LineElement,
    pub window_start: f64,
    pub collisions: u64,
    pub headon: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct A4Report {
    pub windows: u64,
    pub window_length: f64,
    pub max_collisions_per_l: u64,
    pub k3: u64,
    pub headon_window_fraction: f64,
    pub eps_used: f64,
    /// Fresh starts after singular events.
    pub restarts: u64,
    pub offending_count: u64,
    pub offending: Vec<A4Window>,
}

impl A4Report {
    pub fn pass(&self) -> bool {
        self.headon_window_fraction == 1.0 && self.max_collisions_per_l <= self.k3
    }
}

struct TrajectoryWindows {
    windows: Vec<A4Window>,
    restarts: u64,
}

fn a4_trajectory(tube: &QuenchedTube, cfg: &A4Config, length: f64, slide: f64, eps: f64, id: usize) -> Result<TrajectoryWindows> {
    let mut rng = stream(cfg.seed, id as u64);
    let mut out = TrajectoryWindows { windows: Vec::new(), restarts: 0 };
    while out.windows.len() < cfg.windows_per_traj {
        let left = cfg.windows_per_traj - out.windows.len();
        let x0 = sample_measure(tube, &Section::N { n: 0, gate: None }, 1, &mut rng)?[0].x;
        let mut f = Flow::<f64>::new(tube, &FlowState::new(x0, start_cell(tube, &x0)))?;
        // reflection times, with whether they were head-on
        let mut events: Vec<(f64, bool)> = Vec::new();
        let horizon = length + slide * (left - 1) as f64;
        let run = f.run(StopRule::time(horizon), |f, st| {
            if st.kind.is_reflection() {
                events.push((f.time(), st.kind == EventKind::Dispersing && -st.hit.cos_incidence > eps));
            }
        });
        let end = match run {
            Ok(Termination::Budget) => horizon,
            Ok(_) | Err(Error::SingularOrbit(_)) => {
                out.restarts += 1;
                f.time()
            }
            Err(e) => return Err(e),
        };
        let mut k = 0;
        while out.windows.len() < cfg.windows_per_traj {
            let a = k as f64 * slide;
            if a + length > end {
                break;
            }
            let lo = events.partition_point(|e| e.0 < a);
            let hi = events.partition_point(|e| e.0 < a + length);
            let inside = &events[lo..hi.max(lo)];
            out.windows.push(A4Window {
                trajectory: id,
                orbit_start: x0,
                window_start: a,
                collisions: inside.len() as u64,
                headon: inside.iter().any(|e| e.1),
            });
            k += 1;
        }
    }
    Ok(out)
}

/// Slides windows of length `L` along sampled orbits of the tube, counting
/// reflections and looking for a head-on dispersing collision in each.
pub fn check_a4(tube: &QuenchedTube, cfg: &A4Config) -> Result<A4Report> {
    let k = tube.constants();
    let length = cfg.window_length.unwrap_or(k.l);
    let slide = cfg.slide.unwrap_or(0.5 * length);
    if !(length >= 0.0 && slide >= 0.0) || (slide == 0.0 && length > 0.0) {
        return Err(Error::InvalidArgument("window length and slide must be non-negative, slide positive".into()));
    }
    let parts = (0..cfg.n_trajectories)
        .into_par_iter()
        .map(|i| a4_trajectory(tube, cfg, length, slide, k.eps, i))
        .collect::<Result<Vec<_>>>()?;
    let windows: Vec<A4Window> = parts.iter().flat_map(|p| p.windows.iter().copied()).collect();
    let bad: Vec<A4Window> = windows.iter().filter(|w| !w.headon || w.collisions > k.k3).copied().collect();
    let headon = windows.iter().filter(|w| w.headon).count();
    Ok(A4Report {
        windows: windows.len() as u64,
        window_length: length,
        max_collisions_per_l: windows.iter().map(|w| w.collisions).max().unwrap_or(0),
        k3: k.k3,
        headon_window_fraction: if windows.is_empty() { 0.0 } else { headon as f64 / windows.len() as f64 },
        eps_used: k.eps,
        restarts: parts.iter().map(|p| p.restarts).sum(),
        offending_count: bad.len() as u64,
        offending: bad.into_iter().take(cfg.max_dumped).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct A6Config {
    pub samples: usize,
    pub seed: u64,
    /// Collision budget for each return to M.
    pub budget: u64,
}

impl Default for A6Config {
    fn default() -> Self {
        Self { samples: 20_000, seed: 0, budget: 100_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct A6Row {
    pub delta: f64,
    /// Points whose probe cross saw a discontinuity.
    pub hits: usize,
    pub fraction: f64,
    pub measure: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct A6Report {
    pub cell: i64,
    pub piece: usize,
    pub samples: usize,
    /// Estimated `Leb(M_α)`.
    pub leb_m: f64,
    pub rows: Vec<A6Row>,
}

impl A6Report {
    /// Largest over smallest ratio (1 when all ratios vanish).
    pub fn ratio_spread(&self) -> f64 {
        let (lo, hi) = self
            .rows
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), r| (lo.min(r.ratio), hi.max(r.ratio)));
        if hi == 0.0 {
            1.0
        } else {
            hi / lo
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Ending {
    Returned,
    Singular(SingularKind),
    NoReturn,
    /// Not a valid point of `M_α` (below the cap or off the piece).
    Outside,
}

type Itinerary = (Vec<(i64, usize)>, Ending);

fn itinerary(tube: &QuenchedTube, p: &SectionPoint, eps: f64, budget: u64) -> Itinerary {
    let mut path = Vec::new();
    let r = poincare_m_with(tube, p, eps, budget, |st| {
        if st.kind.is_reflection() {
            path.push((st.cell, st.surface));
        }
    });
    let end = match r {
        Ok(_) => Ending::Returned,
        Err(Error::SingularOrbit(k)) => Ending::Singular(k),
        Err(Error::NoReturn { .. }) => Ending::NoReturn,
        Err(_) => Ending::Outside,
    };
    (path, end)
}

/// Whether `q` (on the surface of piece `j`) lies on its visible patch.
fn on_piece(cell: &CellConfig, j: usize, q: Vec3) -> bool {
    let s = &cell.local[j];
    let Some(ax) = axis_of(s) else { return false };
    let (z, w) = ax.split(q);
    if z < ax.lo || z > ax.hi {
        return false;
    }
    let mut phi = w.dot(ax.e_b).atan2(w.dot(ax.e_a));
    while phi < ax.phi_span[0] {
        phi += TAU;
    }
    if phi > ax.phi_span[1] {
        return false;
    }
    !cell
        .local
        .iter()
        .enumerate()
        .any(|(k, o)| k != j && o.enabled && o.dispersing && o.implicit(q) < 0.0)
}

/// The eight probes around `p`: the base point moved by `delta` both ways
/// along the two principal directions, and the velocity turned by `delta`
/// both ways towards two directions orthogonal to it.
fn probes(tube: &QuenchedTube, cell: &CellConfig, p: &SectionPoint, j: usize, delta: f64) -> Vec<Option<SectionPoint>> {
    let s = &cell.local[j];
    let (q, v) = (p.local.q, p.local.v);
    let shape = s.shape_operator_unchecked(q);
    let mut out = Vec::with_capacity(8);
    for t in [shape.d1, shape.d2] {
        for sign in [1.0, -1.0] {
            let mut q2 = q + t * (sign * delta);
            for _ in 0..3 {
                q2 = q2 - s.normal_at(q2) * s.implicit(q2);
            }
            out.push(on_piece(cell, j, q2).then(|| SectionPoint::from_local(tube, p.section, LineElement::new(q2, v))));
        }
    }
    let (e1, e2) = frame(v);
    for e in [e1, e2] {
        for sign in [1.0, -1.0] {
            let v2 = (v * delta.cos() + e * (sign * delta.sin())).normalized();
            out.push(Some(SectionPoint::from_local(tube, p.section, LineElement::new(q, v2))));
        }
    }
    out
}

/// Monte Carlo estimate of `Leb` of the `δ`-neighbourhood of the singular set
/// in `M_α`, α = (cell, piece), for each `δ` in `deltas`.
pub fn check_a6(tube: &QuenchedTube, alpha: (i64, usize), deltas: &[f64], cfg: &A6Config) -> Result<A6Report> {
    if deltas.is_empty() || deltas.iter().any(|&d| !(d >= 1e-5)) || deltas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument("deltas must be decreasing and at least 1e-5".into()));
    }
    let (n, j) = alpha;
    let cell = tube.cell(n)?;
    let zero = |samples| A6Report {
        cell: n,
        piece: j,
        samples,
        leb_m: 0.0,
        rows: deltas.iter().map(|&delta| A6Row { delta, hits: 0, fraction: 0.0, measure: 0.0, ratio: 0.0 }).collect(),
    };
    if cell.dispersing().next().is_none() {
        return Ok(zero(0));
    }
    let eps = tube.constants().eps;
    let mut rng = stream(cfg.seed, n as u64 ^ ((j as u64) << 48));
    let (points, leb) = sample_uniform_m(tube, n, j, eps, cfg.samples, &mut rng)?;
    let hits: Vec<Vec<bool>> = points
        .par_iter()
        .map(|p| {
            let base = itinerary(tube, p, eps, cfg.budget);
            deltas
                .iter()
                .map(|&d| {
                    probes(tube, &cell, p, j, d)
                        .iter()
                        .any(|probe| probe.as_ref().is_none_or(|pp| itinerary(tube, pp, eps, cfg.budget) != base))
                })
                .collect()
        })
        .collect();
    let mut rep = zero(points.len());
    rep.leb_m = leb;
    for (k, row) in rep.rows.iter_mut().enumerate() {
        row.hits = hits.iter().filter(|h| h[k]).count();
        row.fraction = row.hits as f64 / points.len() as f64;
        row.measure = row.fraction * leb;
        row.ratio = row.measure / row.delta;
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tube::{TemplateParams, TubeConfig, TubeMode};

    fn default_tube() -> QuenchedTube {
        QuenchedTube::new(TubeConfig::default()).unwrap()
    }

    #[test]
    fn a3_default_cell() {
        let tube = default_tube();
        let rep = check_a3(&tube.cell(0).unwrap(), 2000, 1);
        assert_eq!(rep.violations, 0);
        assert_eq!(rep.dispersing_pieces, 4);
        assert!(rep.flat_pieces > 0);
        assert!(rep.k_transverse[0] >= 1.0 / 0.68 && rep.k_transverse[1] <= 1.0 / 0.5, "{rep:?}");
        for k in rep.k_longitudinal {
            assert!((k * 1200.0 - 1.0).abs() < 0.01, "{k}");
        }
    }

    #[test]
    fn a3_flags_a_concave_profile() {
        let t = TemplateParams { r_long: Some(-1200.0), ..TemplateParams::appendix() };
        let tube = QuenchedTube::periodic(t).unwrap();
        let rep = check_a3(&tube.cell(0).unwrap(), 100, 1);
        assert!(rep.violations > 0);
        assert!(!rep.pass());
    }

    #[test]
    fn a4_zero_length_windows_are_empty() {
        let tube = default_tube();
        let cfg = A4Config { n_trajectories: 2, windows_per_traj: 5, window_length: Some(0.0), slide: Some(1.0), ..A4Config::default() };
        let rep = check_a4(&tube, &cfg).unwrap();
        assert_eq!(rep.windows, 10);
        assert_eq!(rep.max_collisions_per_l, 0);
    }

    #[test]
    fn a4_default_windows_are_head_on() {
        let tube = default_tube();
        let cfg = A4Config { n_trajectories: 8, windows_per_traj: 20, ..A4Config::default() };
        let rep = check_a4(&tube, &cfg).unwrap();
        assert_eq!(rep.windows, 160);
        assert_eq!(rep.headon_window_fraction, 1.0, "{:?}", rep.offending);
        assert!(rep.max_collisions_per_l <= rep.k3);
        assert!(rep.pass());
    }

    #[test]
    fn a6_empty_cell_has_no_singular_neighbourhood() {
        let tube = QuenchedTube::periodic(TemplateParams::empty()).unwrap();
        let rep = check_a6(&tube, (0, 0), &[1e-2, 1e-3], &A6Config::default()).unwrap();
        assert!(rep.rows.iter().all(|r| r.measure == 0.0));
    }

    #[test]
    fn a6_rejects_bad_deltas() {
        let tube = default_tube();
        assert!(check_a6(&tube, (0, 0), &[1e-3, 1e-2], &A6Config::default()).is_err());
        assert!(check_a6(&tube, (0, 0), &[1e-6], &A6Config::default()).is_err());
    }

    #[test]
    fn a6_probes_are_on_the_surface() {
        let tube = default_tube();
        let cell = tube.cell(0).unwrap();
        let eps = tube.constants().eps;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (pts, leb) = sample_uniform_m(&tube, 0, 1, eps, 50, &mut rng).unwrap();
        assert!(leb > 0.0);
        for p in &pts {
            for probe in probes(&tube, &cell, p, 1, 1e-3).into_iter().flatten() {
                assert!(cell.local[1].implicit(probe.local.q).abs() < 1e-12);
                assert!((probe.local.v.norm() - 1.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn a6_small_run_scales() {
        let tube = default_tube();
        let cfg = A6Config { samples: 4000, ..A6Config::default() };
        let rep = check_a6(&tube, (0, 0), &[1e-2, 1e-3], &cfg).unwrap();
        assert!(rep.rows[0].hits > rep.rows[1].hits);
        assert!(rep.rows[1].hits > 0);
    }

    #[test]
    fn a6_finite_omega_tubes_stay_bounded() {
        let a = TemplateParams::appendix();
        let b = TemplateParams { rho: 0.57, ..TemplateParams::appendix() };
        let tube = QuenchedTube::new(TubeConfig {
            mode: TubeMode::FiniteOmega { templates: vec![a, b] },
            seed: 4,
            ..TubeConfig::default()
        })
        .unwrap();
        let cfg = A6Config { samples: 2000, ..A6Config::default() };
        let ratios: Vec<f64> = (0..10)
            .map(|k| check_a6(&tube, (k / 2, (k % 2) as usize), &[1e-2], &cfg).unwrap().rows[0].ratio)
            .collect();
        let hi = ratios.iter().cloned().fold(0.0, f64::max);
        let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(lo > 0.0 && hi / lo <= 3.0, "{ratios:?}");
    }
}
