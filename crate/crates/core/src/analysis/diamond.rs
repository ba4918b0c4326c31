//! The planar diamond billiard (unit square minus four corner disks) and the
//! check that the transverse projection of the cylindrical tube follows it.

use crate::error::{Error, Result, SingularKind};
use crate::flow::{cell_of, EventKind, Flow, FlowState};
use crate::geometry::{EDGE_TOL, TANGENCY_TOL};
use crate::tube::{QuenchedTube, CORNERS};
use crate::vec3::{LineElement, Vec3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiamondState {
    pub p: [f64; 2],
    /// Unit velocity.
    pub w: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiamondStep {
    /// State right after the collision.
    pub state: DiamondState,
    /// Flight length to the collision.
    pub time: f64,
    /// Corner whose arc was hit.
    pub arc: usize,
    /// `cos φ` of the incidence angle.
    pub cos_phi: f64,
    pub phi: f64,
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// The four diamond vertices (where neighbouring arcs meet); vertex `k` lies
/// between the arcs of corners `k` and `k + 1`.
pub fn vertices(rho: f64) -> [[f64; 2]; 4] {
    let a = (rho * rho - 0.25).sqrt();
    [[0.5, a], [1.0 - a, 0.5], [0.5, 1.0 - a], [a, 0.5]]
}

/// Zone of a boundary point: index of the nearest vertex.
pub fn zone(rho: f64, p: [f64; 2]) -> usize {
    let v = vertices(rho);
    (0..4)
        .min_by(|&i, &j| {
            let di = (p[0] - v[i][0]).hypot(p[1] - v[i][1]);
            let dj = (p[0] - v[j][0]).hypot(p[1] - v[j][1]);
            di.total_cmp(&dj)
        })
        .unwrap()
}

/// One collision of the diamond billiard with corner arcs of radius `rho`.
pub fn diamond_step(rho: f64, s: &DiamondState) -> Result<DiamondStep> {
    if !(rho > 0.5 && rho < std::f64::consts::FRAC_1_SQRT_2) {
        return Err(Error::InvalidArgument(format!("diamond needs 1/2 < rho < 1/sqrt(2), got {rho}")));
    }
    let mut best: Option<(f64, usize)> = None;
    for (k, c) in CORNERS.iter().enumerate() {
        let d = [s.p[0] - c[0], s.p[1] - c[1]];
        let b = dot(d, s.w);
        if b >= 0.0 {
            continue;
        }
        let cc = dot(d, d) - rho * rho;
        let disc = b * b - cc;
        if disc < 0.0 {
            continue;
        }
        let t = cc / (-b + disc.sqrt());
        if t > 1e-12 && best.is_none_or(|(bt, _)| t < bt) {
            best = Some((t, k));
        }
    }
    let (t, k) = best.ok_or(Error::StuckTrajectory { cell: 0, horizon: f64::INFINITY })?;
    let p = [s.p[0] + t * s.w[0], s.p[1] + t * s.w[1]];
    let c = CORNERS[k];
    let r = (p[0] - c[0]).hypot(p[1] - c[1]);
    let n = [(p[0] - c[0]) / r, (p[1] - c[1]) / r];
    let cos = dot(s.w, n);
    if cos.abs() < TANGENCY_TOL {
        return Err(Error::SingularOrbit(SingularKind::Tangential));
    }
    let at_vertex = CORNERS
        .iter()
        .enumerate()
        .any(|(j, o)| j != k && ((p[0] - o[0]).hypot(p[1] - o[1]) - rho).abs() < EDGE_TOL);
    if at_vertex {
        return Err(Error::SingularOrbit(SingularKind::Edge));
    }
    let w = [s.w[0] - 2.0 * cos * n[0], s.w[1] - 2.0 * cos * n[1]];
    let norm = w[0].hypot(w[1]);
    Ok(DiamondStep {
        state: DiamondState { p, w: [w[0] / norm, w[1] / norm] },
        time: t,
        arc: k,
        cos_phi: cos.abs(),
        phi: cos.abs().min(1.0).acos(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ProjectionReport {
    pub collisions: usize,
    /// Largest distance between the projected 3D collision point and the 2D one.
    pub max_point_deviation: f64,
    /// Largest `|cos θ − |v_yz| cos φ|`.
    pub max_cos_deviation: f64,
}

impl ProjectionReport {
    pub fn max_deviation(&self) -> f64 {
        self.max_point_deviation.max(self.max_cos_deviation)
    }

    pub fn merge(&mut self, o: &ProjectionReport) {
        self.collisions += o.collisions;
        self.max_point_deviation = self.max_point_deviation.max(o.max_point_deviation);
        self.max_cos_deviation = self.max_cos_deviation.max(o.max_cos_deviation);
    }
}

/// Uniform point of the diamond table with a uniform direction.
pub fn sample_state(rho: f64, rng: &mut impl Rng) -> DiamondState {
    loop {
        let p = [rng.random::<f64>(), rng.random::<f64>()];
        if CORNERS.iter().all(|c| (p[0] - c[0]).hypot(p[1] - c[1]) > rho) {
            let a = TAU * rng.random::<f64>();
            return DiamondState { p, w: [a.cos(), a.sin()] };
        }
    }
}

/// Mid-cell start for [`projection_check`]: a diamond state lifted with a
/// longitudinal velocity uniform in (−0.9, 0.9).
pub fn oracle_start(tube: &QuenchedTube, rng: &mut impl Rng) -> LineElement {
    let s = sample_state(tube.template().rho, rng);
    let vx: f64 = rng.random_range(-0.9..0.9);
    let k = (1.0 - vx * vx).sqrt();
    LineElement::new(Vec3::new(0.5 * tube.h(), s.p[0], s.p[1]), Vec3::new(vx, k * s.w[0], k * s.w[1]))
}

fn project(x: &LineElement) -> Result<DiamondState> {
    let n = x.v.y.hypot(x.v.z);
    if n == 0.0 {
        return Err(Error::InvalidArgument("purely longitudinal velocity has no projection".into()));
    }
    Ok(DiamondState { p: [x.q.y, x.q.z], w: [x.v.y / n, x.v.z / n] })
}

/// Follows `x0` for `n` dispersing collisions in a tube of pure cylinders
/// without bulkheads and compares every collision with the diamond billiard
/// started from the projection of the preceding one.
pub fn projection_check(tube: &QuenchedTube, x0: LineElement, n: usize) -> Result<ProjectionReport> {
    let t = tube.template();
    if t.r_long.is_some() || t.bulkhead || !t.cigars {
        return Err(Error::InvalidArgument("projection check needs cylinders and no bulkhead".into()));
    }
    let rho = t.rho;
    let mut f = Flow::<f64>::new(tube, &FlowState::new(x0, cell_of(tube, x0.q.x)))?;
    let mut s2 = project(&x0)?;
    let mut rep = ProjectionReport::default();
    while rep.collisions < n {
        let st = f.step()?;
        match st.kind {
            EventKind::Dispersing => {
                let d = diamond_step(rho, &s2)?;
                let p = st.hit.point;
                let dev = (p.y - d.state.p[0]).hypot(p.z - d.state.p[1]);
                let v_yz = st.v_in.y.hypot(st.v_in.z);
                let cos_dev = (st.hit.cos_incidence.abs() - v_yz * d.cos_phi).abs();
                rep.max_point_deviation = rep.max_point_deviation.max(dev);
                rep.max_cos_deviation = rep.max_cos_deviation.max(cos_dev);
                rep.collisions += 1;
                s2 = project(&f.line())?;
            }
            EventKind::Flat => {
                // end facets flip v_x only
                if st.hit.normal.y.hypot(st.hit.normal.z) > 1e-15 {
                    return Err(Error::InvalidArgument("flat piece with a transverse normal".into()));
                }
            }
            EventKind::GateCrossing => {}
            k => return Err(Error::SingularOrbit(k.singular_kind().unwrap_or(SingularKind::Edge))),
        }
    }
    Ok(rep)
}
