//! Poincaré sections of the flow and their return maps.
//!
//! * `M`: post-collisional line elements on a dispersing piece with `v·o ≥ ε`
//!   (head-on collisions).
//! * `N`: line elements entering a cell through one of its gates.
//! * `D`: post-collisional line elements on a fixed finite set of pieces.

use crate::error::{Error, Result, SingularKind};
use crate::flow::{EventKind, Flow, Step};
use crate::geometry::{SurfaceKind, SurfaceRole, TANGENCY_TOL};
use crate::rng::{cosine_cap, cosine_hemisphere, uniform_cap};
use crate::tube::{CellConfig, QuenchedTube};
use crate::vec3::{LineElement, Vec3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Collision budget of the return maps when none is given.
pub const DEFAULT_BUDGET: u64 = 1_000_000;

/// Half-width of the band around `v·o = ε` treated as the section boundary.
pub const SECTION_TOL: f64 = TANGENCY_TOL;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "section", rename_all = "snake_case")]
pub enum SectionTag {
    /// Head-on section of dispersing piece `j` of cell `n`.
    M { n: i64, j: usize },
    /// Entering cell `n` through gate `gate ∈ {1, 2}`.
    N { n: i64, gate: u8 },
    /// Post-collisional on piece `j` of cell `n`.
    D { n: i64, j: usize },
}

impl SectionTag {
    pub fn cell(&self) -> i64 {
        match *self {
            SectionTag::M { n, .. } | SectionTag::N { n, .. } | SectionTag::D { n, .. } => n,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            SectionTag::M { .. } => "M",
            SectionTag::N { .. } => "N",
            SectionTag::D { .. } => "D",
        }
    }

    fn index(&self) -> usize {
        match *self {
            SectionTag::M { j, .. } | SectionTag::D { j, .. } => j,
            SectionTag::N { gate, .. } => gate as usize,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectionPoint {
    /// Tube coordinates.
    pub x: LineElement,
    /// Coordinates in the frame of cell `section.cell()`; the return maps
    /// restart from these, so restarts are exact.
    pub local: LineElement,
    pub section: SectionTag,
}

impl SectionPoint {
    pub fn from_local(tube: &QuenchedTube, section: SectionTag, local: LineElement) -> Self {
        let mut x = local;
        x.q.x += section.cell() as f64 * tube.h();
        Self { x, local, section }
    }

    pub fn cell(&self) -> i64 {
        self.section.cell()
    }

    /// `v·o` with `o` the inner normal of the base piece.
    pub fn cos_normal(&self, tube: &QuenchedTube) -> Result<f64> {
        let cell = tube.cell(self.cell())?;
        let s = match self.section {
            SectionTag::M { j, .. } | SectionTag::D { j, .. } => &cell.local[j],
            SectionTag::N { gate, .. } => &cell.local[gate_surface(&cell, gate)?],
        };
        Ok(self.local.v.dot(s.normal_at(self.local.q)))
    }

    /// Position on the gate and velocity, for N-points.
    pub fn gate_coords(&self) -> [f64; 5] {
        let (q, v) = (self.local.q, self.local.v);
        [q.y, q.z, v.x, v.y, v.z]
    }
}

/// A finite union of whole pieces of the boundary, or, with `all_cells`, the
/// union of the listed pieces over every cell of the tube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DSet {
    pub pieces: Vec<(i64, usize)>,
    #[serde(default)]
    pub all_cells: bool,
}

impl DSet {
    pub fn new(pieces: Vec<(i64, usize)>) -> Self {
        Self { pieces, all_cells: false }
    }

    /// Pieces `js` of every cell; points are sampled in cell 0.
    pub fn every_cell(js: Vec<usize>) -> Self {
        Self { pieces: js.into_iter().map(|j| (0, j)).collect(), all_cells: true }
    }

    pub fn contains(&self, n: i64, j: usize) -> bool {
        self.pieces.iter().any(|&(m, k)| k == j && (self.all_cells || m == n))
    }

    fn validate(&self, tube: &QuenchedTube) -> Result<()> {
        if self.pieces.is_empty() {
            return Err(Error::InvalidSection("D has no pieces".into()));
        }
        for &(n, j) in &self.pieces {
            let cell = tube.cell(n)?;
            match cell.local.get(j) {
                Some(s) if s.enabled && !s.is_gate() => {}
                _ => return Err(Error::InvalidSection(format!("piece {j} of cell {n} is not a wall"))),
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Section {
    /// `M_α` for α = (n, j).
    M { n: i64, j: usize, eps: f64 },
    /// Gates of cell `n`; both of them when `gate` is `None`.
    N { n: i64, gate: Option<u8> },
    D(DSet),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SectionReturn {
    pub point: SectionPoint,
    pub time: f64,
    /// Reflections on the way, the final one included.
    pub collisions: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DReturn {
    Returned(SectionReturn),
    NotReturned { budget: u64 },
}

fn gate_surface(cell: &CellConfig, gate: u8) -> Result<usize> {
    cell.local
        .iter()
        .position(|s| s.role == SurfaceRole::Gate(gate))
        .ok_or_else(|| Error::InvalidSection(format!("no gate {gate}")))
}

/// Rejection proposal for uniform (area) sampling of the visible part of a piece.
struct Proposal {
    j: usize,
    area: f64,
}

fn proposal(cell: &CellConfig, j: usize) -> Result<Proposal> {
    let s = &cell.local[j];
    let area = match &s.kind {
        SurfaceKind::Cigar(c) => {
            let ax = &c.axis;
            let slope = c.slope_at(ax.lo).abs().max(c.slope_at(ax.hi).abs());
            (ax.hi - ax.lo) * (ax.phi_span[1] - ax.phi_span[0]) * c.radius_range().0 * (1.0 + slope * slope).sqrt()
        }
        SurfaceKind::Cylinder(c) => (c.axis.hi - c.axis.lo) * (c.axis.phi_span[1] - c.axis.phi_span[0]) * c.radius,
        SurfaceKind::Plane(p) | SurfaceKind::BulkheadFace(p) => {
            let outer = p.outer.as_ref().ok_or_else(|| Error::InvalidSection("unbounded piece".into()))?;
            let (lo, hi) = outer.bounding_box();
            (hi[0] - lo[0]) * (hi[1] - lo[1])
        }
        SurfaceKind::GatePlane(g) => g.patch.outer.as_ref().map_or(0.0, |o| o.area()),
    };
    Ok(Proposal { j, area })
}

/// One proposal draw on piece `j`; `None` when rejected.
fn propose(cell: &CellConfig, j: usize, rng: &mut impl Rng) -> Option<Vec3> {
    let s = &cell.local[j];
    let q = match &s.kind {
        SurfaceKind::Cigar(c) => {
            let ax = &c.axis;
            let z = rng.random_range(ax.lo..ax.hi);
            let phi = rng.random_range(ax.phi_span[0]..ax.phi_span[1]);
            let slope = c.slope_at(ax.lo).abs().max(c.slope_at(ax.hi).abs());
            let w_max = c.radius_range().0 * (1.0 + slope * slope).sqrt();
            let r = c.radius_at(z);
            let w = r * (1.0 + c.slope_at(z).powi(2)).sqrt();
            if rng.random::<f64>() * w_max > w {
                return None;
            }
            ax.point_at(z, phi, r)
        }
        SurfaceKind::Cylinder(c) => {
            let ax = &c.axis;
            ax.point_at(rng.random_range(ax.lo..ax.hi), rng.random_range(ax.phi_span[0]..ax.phi_span[1]), c.radius)
        }
        SurfaceKind::Plane(p) | SurfaceKind::BulkheadFace(p) => {
            let (lo, hi) = p.outer.as_ref()?.bounding_box();
            let uv = [rng.random_range(lo[0]..hi[0]), rng.random_range(lo[1]..hi[1])];
            if !p.contains(uv) {
                return None;
            }
            p.lift(uv)
        }
        SurfaceKind::GatePlane(g) => {
            let (lo, hi) = g.patch.outer.as_ref()?.bounding_box();
            g.patch.lift([rng.random_range(lo[0]..hi[0]), rng.random_range(lo[1]..hi[1])])
        }
    };
    // hidden inside another solid piece
    let covered = cell
        .local
        .iter()
        .enumerate()
        .any(|(k, o)| k != j && o.enabled && matches!(o.kind, SurfaceKind::Cigar(_) | SurfaceKind::Cylinder(_)) && o.implicit(q) < 0.0);
    (!covered).then_some(q)
}

/// Uniform point on the union of the given pieces of `cell`.
fn sample_position(cell: &CellConfig, props: &[Proposal], rng: &mut impl Rng) -> Result<(usize, Vec3)> {
    let total: f64 = props.iter().map(|p| p.area).sum();
    for _ in 0..1_000_000 {
        let mut u = rng.random::<f64>() * total;
        let mut pick = &props[props.len() - 1];
        for p in props {
            if u < p.area {
                pick = p;
                break;
            }
            u -= p.area;
        }
        if let Some(q) = propose(cell, pick.j, rng) {
            return Ok((pick.j, q));
        }
    }
    Err(Error::InvalidSection("base set has no visible area".into()))
}

/// Draws `count` points from the invariant measure `(v·o) dq dv` of a section
/// (for `M`, restricted to the cap `v·o ≥ ε`).
pub fn sample_measure(tube: &QuenchedTube, section: &Section, count: usize, rng: &mut impl Rng) -> Result<Vec<SectionPoint>> {
    if count == 0 {
        return Err(Error::InvalidArgument("count must be at least 1".into()));
    }
    match section {
        Section::M { n, j, eps } => {
            if !(*eps >= 0.0 && *eps < 1.0) {
                return Err(Error::InvalidSection(format!("empty head-on cap for eps = {eps}")));
            }
            let cell = tube.cell(*n)?;
            if !cell.local.get(*j).is_some_and(|s| s.enabled && s.dispersing) {
                return Err(Error::InvalidSection(format!("piece {j} is not dispersing")));
            }
            let props = [proposal(&cell, *j)?];
            (0..count)
                .map(|_| {
                    let (_, q) = sample_position(&cell, &props, rng)?;
                    let v = cosine_cap(cell.local[*j].normal_at(q), *eps, rng);
                    Ok(SectionPoint::from_local(tube, SectionTag::M { n: *n, j: *j }, LineElement::new(q, v)))
                })
                .collect()
        }
        Section::N { n, gate } => {
            let cell = tube.cell(*n)?;
            let gates: Vec<u8> = gate.map_or(vec![1, 2], |g| vec![g]);
            let idx: Vec<usize> = gates.iter().map(|&g| gate_surface(&cell, g)).collect::<Result<_>>()?;
            (0..count)
                .map(|_| {
                    let k = rng.random_range(0..gates.len());
                    let s = &cell.local[idx[k]];
                    let q = propose(&cell, idx[k], rng).expect("gates are never covered");
                    let v = cosine_hemisphere(s.normal_at(q), rng);
                    Ok(SectionPoint::from_local(tube, SectionTag::N { n: *n, gate: gates[k] }, LineElement::new(q, v)))
                })
                .collect()
        }
        Section::D(d) => {
            d.validate(tube)?;
            let areas: Vec<(i64, Proposal)> = d
                .pieces
                .iter()
                .map(|&(n, j)| -> Result<(i64, Proposal)> { Ok((n, proposal(&*tube.cell(n)?, j)?)) })
                .collect::<Result<_>>()?;
            let total: f64 = areas.iter().map(|a| a.1.area).sum();
            let mut out = Vec::with_capacity(count);
            while out.len() < count {
                let mut u = rng.random::<f64>() * total;
                let mut pick = &areas[areas.len() - 1];
                for a in &areas {
                    if u < a.1.area {
                        pick = a;
                        break;
                    }
                    u -= a.1.area;
                }
                let cell = tube.cell(pick.0)?;
                if let Some(q) = propose(&cell, pick.1.j, rng) {
                    let v = cosine_hemisphere(cell.local[pick.1.j].normal_at(q), rng);
                    out.push(SectionPoint::from_local(tube, SectionTag::D { n: pick.0, j: pick.1.j }, LineElement::new(q, v)));
                }
            }
            Ok(out)
        }
    }
}

/// Draws `count` points of `M_α` uniformly for the Lebesgue measure `dq dv`
/// (velocities uniform on the cap), together with an estimate of `Leb(M_α)`.
pub fn sample_uniform_m(
    tube: &QuenchedTube,
    n: i64,
    j: usize,
    eps: f64,
    count: usize,
    rng: &mut impl Rng,
) -> Result<(Vec<SectionPoint>, f64)> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::InvalidSection(format!("empty head-on cap for eps = {eps}")));
    }
    let cell = tube.cell(n)?;
    if !cell.local.get(j).is_some_and(|s| s.enabled && s.dispersing) {
        return Err(Error::InvalidSection(format!("piece {j} is not dispersing")));
    }
    let prop = proposal(&cell, j)?;
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0u64;
    while out.len() < count {
        attempts += 1;
        if attempts > 1000 * (count as u64 + 1) {
            return Err(Error::InvalidSection("base set has no visible area".into()));
        }
        if let Some(q) = propose(&cell, j, rng) {
            let v = uniform_cap(cell.local[j].normal_at(q), eps, rng);
            out.push(SectionPoint::from_local(tube, SectionTag::M { n, j }, LineElement::new(q, v)));
        }
    }
    let area = prop.area * count as f64 / attempts as f64;
    Ok((out, area * std::f64::consts::TAU * (1.0 - eps)))
}

fn singular(kind: EventKind) -> Error {
    Error::SingularOrbit(kind.singular_kind().unwrap_or(SingularKind::Edge))
}

/// The head-on return map `T` on `M`, using the tube's `ε`.
pub fn poincare_m(tube: &QuenchedTube, p: &SectionPoint) -> Result<SectionReturn> {
    poincare_m_with(tube, p, tube.constants().eps, DEFAULT_BUDGET, |_| {})
}

/// The head-on return map with explicit `ε` and budget; `on_step` sees every
/// event on the way, the returning collision included.
pub fn poincare_m_with(
    tube: &QuenchedTube,
    p: &SectionPoint,
    eps: f64,
    budget: u64,
    mut on_step: impl FnMut(&Step<f64>),
) -> Result<SectionReturn> {
    let SectionTag::M { n, j } = p.section else {
        return Err(Error::InvalidSection("not an M-point".into()));
    };
    let cell = tube.cell(n)?;
    let c0 = p.local.v.dot(cell.local[j].normal_at(p.local.q));
    if (c0 - eps).abs() < SECTION_TOL {
        return Err(Error::SingularOrbit(SingularKind::SectionBoundary));
    }
    if c0 < eps {
        return Err(Error::InvalidSection(format!("v·o = {c0} is below eps")));
    }
    let mut f = Flow::<f64>::local(tube, n, p.local, Some(j))?;
    loop {
        if f.collisions() >= budget {
            return Err(Error::NoReturn { budget });
        }
        let st = f.step()?;
        on_step(&st);
        match st.kind {
            EventKind::Dispersing => {
                let c = -st.hit.cos_incidence;
                if (c - eps).abs() < SECTION_TOL {
                    return Err(Error::SingularOrbit(SingularKind::SectionBoundary));
                }
                if c >= eps {
                    let tag = SectionTag::M { n: st.cell, j: st.surface };
                    return Ok(SectionReturn {
                        point: SectionPoint::from_local(tube, tag, f.line()),
                        time: f.time(),
                        collisions: f.collisions(),
                    });
                }
            }
            k if k.is_singular() => return Err(singular(k)),
            _ => {}
        }
    }
}

/// The transparent-wall map on `N`: from entering a cell to entering the next
/// one.
pub fn poincare_n(tube: &QuenchedTube, p: &SectionPoint) -> Result<SectionReturn> {
    poincare_n_with(tube, p, DEFAULT_BUDGET, |_| {})
}

pub fn poincare_n_with(
    tube: &QuenchedTube,
    p: &SectionPoint,
    budget: u64,
    mut on_step: impl FnMut(&Step<f64>),
) -> Result<SectionReturn> {
    let SectionTag::N { n, gate } = p.section else {
        return Err(Error::InvalidSection("not an N-point".into()));
    };
    let inward = if gate == 1 { p.local.v.x } else { -p.local.v.x };
    if inward <= 0.0 {
        return Err(Error::InvalidSection("N-point does not enter its cell".into()));
    }
    let mut f = Flow::<f64>::local(tube, n, p.local, None)?;
    loop {
        if f.collisions() >= budget {
            return Err(Error::NotExited { budget });
        }
        let st = f.step()?;
        on_step(&st);
        match st.kind {
            EventKind::GateCrossing => {
                // leaving through G² enters the next cell through its G¹
                let entered = if f.cell_index() > st.cell { 1 } else { 2 };
                let tag = SectionTag::N { n: f.cell_index(), gate: entered };
                return Ok(SectionReturn {
                    point: SectionPoint::from_local(tube, tag, f.line()),
                    time: f.time(),
                    collisions: f.collisions(),
                });
            }
            k if k.is_singular() => return Err(singular(k)),
            _ => {}
        }
    }
}

/// First return to `D` within `budget` collisions.
pub fn first_return_d(tube: &QuenchedTube, d: &DSet, p: &SectionPoint, budget: u64) -> Result<DReturn> {
    let (n, contact) = match p.section {
        SectionTag::D { n, j } | SectionTag::M { n, j } => (n, Some(j)),
        SectionTag::N { n, .. } => (n, None),
    };
    let mut f = Flow::<f64>::local(tube, n, p.local, contact)?;
    loop {
        if f.collisions() >= budget {
            return Ok(DReturn::NotReturned { budget });
        }
        let st = f.step()?;
        match st.kind {
            EventKind::Dispersing | EventKind::Flat if d.contains(st.cell, st.surface) => {
                let tag = SectionTag::D { n: st.cell, j: st.surface };
                return Ok(DReturn::Returned(SectionReturn {
                    point: SectionPoint::from_local(tube, tag, f.line()),
                    time: f.time(),
                    collisions: f.collisions(),
                }));
            }
            k if k.is_singular() => return Err(singular(k)),
            _ => {}
        }
    }
}

/// Distance between two points of the same section piece: Euclidean in
/// position (the chord, which agrees with the intrinsic distance to second
/// order) combined with the great-circle angle between velocities.
pub fn section_distance(a: &SectionPoint, b: &SectionPoint) -> Option<f64> {
    if a.section != b.section {
        return None;
    }
    let dq = (a.local.q - b.local.q).norm();
    let dv = a.local.v.dot(b.local.v).clamp(-1.0, 1.0).acos();
    Some((dq * dq + dv * dv).sqrt())
}

/// Section-point CSV: tag, cell, piece (or gate), position and velocity in tube
/// coordinates.
pub fn write_section_csv<W: Write>(points: &[SectionPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["section", "n", "index", "qx", "qy", "qz", "vx", "vy", "vz"])?;
    for p in points {
        let (q, v) = (p.x.q, p.x.v);
        w.write_record([
            p.section.name().to_string(),
            p.cell().to_string(),
            p.section.index().to_string(),
            q.x.to_string(),
            q.y.to_string(),
            q.z.to_string(),
            v.x.to_string(),
            v.y.to_string(),
            v.z.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::next_event;
    use crate::flow::FlowState;
    use crate::tube::{layout, TemplateParams, TubeConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn default_tube() -> QuenchedTube {
        QuenchedTube::new(TubeConfig::default()).unwrap()
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn degenerate_cap_is_rejected() {
        let tube = default_tube();
        let err = sample_measure(&tube, &Section::M { n: 0, j: 0, eps: 1.0 }, 10, &mut rng(1)).unwrap_err();
        assert!(matches!(err, Error::InvalidSection(_)));
    }

    #[test]
    fn gate_sample_cosine_moment() {
        let tube = default_tube();
        let pts = sample_measure(&tube, &Section::N { n: 0, gate: None }, 100_000, &mut rng(2)).unwrap();
        let c: Vec<f64> = pts.iter().map(|p| p.cos_normal(&tube).unwrap()).collect();
        let mean = c.iter().sum::<f64>() / c.len() as f64;
        // quadrature of ∫ c · 2c dc over [0, 1]
        let k = 10_000;
        let expected: f64 = (0..k).map(|i| (i as f64 + 0.5) / k as f64).map(|c| 2.0 * c * c).sum::<f64>() / k as f64;
        let sd = (c.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / c.len() as f64).sqrt();
        assert!((mean - expected).abs() < 3.0 * sd / (c.len() as f64).sqrt(), "{mean} vs {expected}");
        assert!(c.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn gate_positions_are_uniform() {
        let tube = default_tube();
        let g = tube.g();
        let pts = sample_measure(&tube, &Section::N { n: 0, gate: Some(1) }, 100_000, &mut rng(3)).unwrap();
        let mut counts = [[0usize; 10]; 10];
        for p in &pts {
            let a = (((p.local.q.y - (0.5 - g / 2.0)) / g) * 10.0).floor().clamp(0.0, 9.0) as usize;
            let b = (((p.local.q.z - (0.5 - g / 2.0)) / g) * 10.0).floor().clamp(0.0, 9.0) as usize;
            counts[a][b] += 1;
        }
        let e = pts.len() as f64 / 100.0;
        let chi2: f64 = counts.iter().flatten().map(|&c| (c as f64 - e).powi(2) / e).sum();
        // Wilson–Hilferty 99% quantile for 99 degrees of freedom
        let k: f64 = 99.0;
        let z = 2.326_347_874;
        let crit = k * (1.0 - 2.0 / (9.0 * k) + z * (2.0 / (9.0 * k)).sqrt()).powi(3);
        assert!(chi2 < crit, "chi2 = {chi2}, critical {crit}");
    }

    #[test]
    fn m_points_satisfy_membership() {
        let tube = default_tube();
        let eps = tube.constants().eps;
        for j in layout::CIGARS {
            let pts = sample_measure(&tube, &Section::M { n: 0, j, eps }, 500, &mut rng(4 + j as u64)).unwrap();
            let cell = tube.cell(0).unwrap();
            for p in &pts {
                assert!(cell.local[j].implicit(p.local.q).abs() < 1e-12);
                assert!(p.cos_normal(&tube).unwrap() >= eps);
                for (k, s) in cell.local.iter().enumerate() {
                    if k != j && s.enabled && s.dispersing {
                        assert!(s.implicit(p.local.q) >= 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn m_return_obeys_the_head_on_bounds() {
        let tube = default_tube();
        let k = tube.constants();
        let mut r = rng(5);
        let mut done = 0;
        for i in 0..10_000 {
            let j = i % 4;
            let p = sample_measure(&tube, &Section::M { n: 0, j, eps: k.eps }, 1, &mut r).unwrap()[0];
            match poincare_m(&tube, &p) {
                Ok(ret) => {
                    assert!(ret.time <= k.l, "return time {}", ret.time);
                    assert!(ret.collisions <= k.k3);
                    assert!(ret.point.cos_normal(&tube).unwrap() >= k.eps);
                    done += 1;
                }
                Err(Error::SingularOrbit(_)) => {}
                Err(e) => panic!("{e}"),
            }
        }
        assert!(done > 9_900);
    }

    #[test]
    fn section_boundary_is_singular() {
        let tube = default_tube();
        let eps = tube.constants().eps;
        let cell = tube.cell(0).unwrap();
        let p = sample_measure(&tube, &Section::M { n: 0, j: 0, eps }, 1, &mut rng(6)).unwrap()[0];
        let o = cell.local[0].normal_at(p.local.q);
        let (t, _) = crate::rng::frame(o);
        let v = o * eps + t * (1.0 - eps * eps).sqrt();
        let q = SectionPoint::from_local(&tube, p.section, LineElement::new(p.local.q, v));
        assert_eq!(poincare_m(&tube, &q).unwrap_err(), Error::SingularOrbit(SingularKind::SectionBoundary));
    }

    fn itinerary(tube: &QuenchedTube, p: &SectionPoint) -> (Vec<(i64, usize)>, Option<Error>) {
        let mut it = Vec::new();
        let r = poincare_m_with(tube, p, tube.constants().eps, DEFAULT_BUDGET, |s| {
            if s.kind.is_reflection() {
                it.push((s.cell, s.surface))
            }
        });
        (it, r.err())
    }

    #[test]
    fn nearby_points_across_a_singularity_split() {
        let tube = default_tube();
        let eps = tube.constants().eps;
        let mut r = rng(7);
        let cell = tube.cell(0).unwrap();
        let mut found = 0;
        for _ in 0..50 {
            let pts = sample_measure(&tube, &Section::M { n: 0, j: 1, eps }, 2, &mut r).unwrap();
            let (a, b) = (pts[0], pts[1]);
            // walk the velocity from a's to a rotated one at fixed position
            let o = cell.local[1].normal_at(a.local.q);
            let vb = (b.local.v - o * b.local.v.dot(o)) + o * a.local.v.dot(o);
            let at = |s: f64| {
                let v = (a.local.v * (1.0 - s) + vb.normalized() * s).normalized();
                SectionPoint::from_local(&tube, a.section, LineElement::new(a.local.q, v))
            };
            let (mut lo, mut hi) = (0.0, 1.0);
            let i0 = itinerary(&tube, &at(lo));
            if itinerary(&tube, &at(hi)) == i0 {
                continue;
            }
            while section_distance(&at(lo), &at(hi)).unwrap() > 1e-6 {
                let mid = 0.5 * (lo + hi);
                if itinerary(&tube, &at(mid)) == i0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let (pl, ph) = (at(lo), at(hi));
            assert!(section_distance(&pl, &ph).unwrap() <= 1e-6);
            assert_ne!(itinerary(&tube, &pl), itinerary(&tube, &ph));
            found += 1;
        }
        assert!(found > 0);
    }

    #[test]
    fn empty_cell_gate_to_gate() {
        let tube = QuenchedTube::periodic(TemplateParams::empty()).unwrap();
        let p = SectionPoint::from_local(&tube, SectionTag::N { n: 0, gate: 1 }, LineElement::new(Vec3::new(0.0, 0.5, 0.5), Vec3::X));
        let r = poincare_n(&tube, &p).unwrap();
        assert_eq!(r.point.section, SectionTag::N { n: 1, gate: 1 });
        assert_eq!(r.point.x.q, Vec3::new(12.0, 0.5, 0.5));
        assert_eq!(r.collisions, 0);
    }

    #[test]
    fn no_free_gate_to_gate_lines() {
        let tube = default_tube();
        let pts = sample_measure(&tube, &Section::N { n: 0, gate: None }, 100_000, &mut rng(8)).unwrap();
        for p in &pts {
            let s = FlowState { contact: None, ..FlowState::new(p.x, 0) };
            let e = next_event(&tube, &s).unwrap();
            assert_ne!(e.kind, EventKind::GateCrossing, "free line from {:?}", p.x);
        }
    }

    #[test]
    fn ping_pong_return() {
        let tube = QuenchedTube::periodic(TemplateParams::empty()).unwrap();
        let cell = tube.cell(0).unwrap();
        let j = cell.local.iter().position(|s| s.role == SurfaceRole::SideFacet(0)).unwrap();
        let s = &cell.local[j];
        let q = Vec3::new(3.0, 0.3, 0.3);
        // project onto the facet
        let o = s.normal_at(q);
        let q = q - o * s.implicit(q);
        let p = SectionPoint::from_local(&tube, SectionTag::D { n: 0, j }, LineElement::new(q, o));
        let d = DSet::new(vec![(0, j)]);
        let DReturn::Returned(r) = first_return_d(&tube, &d, &p, 10).unwrap() else { panic!() };
        assert_eq!(r.collisions, 2);
        assert!((r.time - 2.0).abs() < 1e-12);
        assert!((r.point.local.q - q).norm() < 1e-12);
        assert_eq!(first_return_d(&tube, &d, &p, 0).unwrap(), DReturn::NotReturned { budget: 0 });
    }

    #[test]
    fn m_and_n_orbits_share_the_trajectory() {
        let tube = default_tube();
        let p = sample_measure(&tube, &Section::N { n: 0, gate: Some(1) }, 1, &mut rng(9)).unwrap()[0];
        // reference: all head-on events and gate crossings of one run
        let eps = tube.constants().eps;
        let mut heads = Vec::new();
        let mut gates = Vec::new();
        let mut f = Flow::<f64>::local(&tube, 0, p.local, None).unwrap();
        while gates.len() < 3 {
            let st = f.step().unwrap();
            match st.kind {
                EventKind::Dispersing if -st.hit.cos_incidence >= eps => heads.push((st.cell, st.surface, f.line())),
                EventKind::GateCrossing => gates.push((f.cell_index(), f.line())),
                k => assert!(!k.is_singular()),
            }
        }
        let mut x = p;
        for g in &gates {
            x = poincare_n(&tube, &x).unwrap().point;
            assert_eq!(x.cell(), g.0);
            assert!((x.local.q - g.1.q).norm() < 1e-10 && (x.local.v - g.1.v).norm() < 1e-10);
        }
        let (n, j, l) = heads[0];
        let mut m = SectionPoint::from_local(&tube, SectionTag::M { n, j }, l);
        for h in heads.iter().skip(1).take(500) {
            m = poincare_m(&tube, &m).unwrap().point;
            assert_eq!(m.section, SectionTag::M { n: h.0, j: h.1 });
            assert!((m.local.q - h.2.q).norm() < 1e-10 && (m.local.v - h.2.v).norm() < 1e-10);
        }
    }
}
