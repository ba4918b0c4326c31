//! Ray–surface intersection, normals, curvature and the reflection law for the
//! surface types that occur in the tube.
//!
//! Every surface carries the *inner* normal, i.e. the unit normal pointing into
//! the billiard domain. For the solid scatterers (cylinders, cigars) this is the
//! outward normal of the solid; flat pieces are one-sided and can only be hit
//! from the side their normal points to.

use crate::error::{Error, Result};
use crate::polygon::Polygon;
use crate::real::Real;
use crate::vec3::{Line, LineElement, Vec3, V3};
use serde::{Deserialize, Serialize};

/// |cos θ| below this marks a tangential (singular) collision.
pub const TANGENCY_TOL: f64 = 1e-9;
/// Hits closer than this to a patch border are edge (singular) hits.
pub const EDGE_TOL: f64 = 1e-9;
/// Required residual of a polished root.
pub const ROOT_TOL: f64 = 1e-12;

const NEWTON_BUDGET: usize = 200;

/// Specular reflection `v - 2 (v·o) o`, renormalised to unit length.
#[inline]
pub fn reflect(v: Vec3, o: Vec3) -> Vec3 {
    reflect_r(v, o)
}

#[inline]
pub fn reflect_r<R: Real>(v: V3<R>, o: V3<R>) -> V3<R> {
    (v - o * v.dot(o).scale(2.0)).normalized()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct SurfaceId {
    pub cell: i64,
    pub scatterer: u16,
    pub piece: u16,
}

/// What a surface is within a tube cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurfaceRole {
    /// Dispersing piece along one of the four long cell edges (corner index 0..4).
    Cigar(u8),
    /// One of the two oriented faces of the thin bulkhead.
    Bulkhead(u8),
    /// Perforated square facet: 0 at the left end, 1 at the right end.
    EndFacet(u8),
    /// Rectangular side facet.
    SideFacet(u8),
    /// Transparent gate: 1 = G¹ (left), 2 = G² (right).
    Gate(u8),
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HitOf<R> {
    pub t: R,
    pub point: V3<R>,
    /// Inner unit normal at `point`.
    pub normal: V3<R>,
    /// `v·o`; non-positive for a ray approaching from the free region.
    pub cos_incidence: f64,
    pub tangential: bool,
    pub near_edge: bool,
}

pub type Hit = HitOf<f64>;

impl<R: Real> HitOf<R> {
    pub fn to_f64(&self) -> Hit {
        HitOf {
            t: self.t.to_f64(),
            point: self.point.to_f64(),
            normal: self.normal.to_f64(),
            cos_incidence: self.cos_incidence,
            tangential: self.tangential,
            near_edge: self.near_edge,
        }
    }
}

/// Flat patch: the plane through `origin` with inner normal `normal`, clipped
/// to `outer` minus `holes` (polygons in the in-plane frame `e1`, `e2`).
#[derive(Debug, Clone, PartialEq)]
pub struct PlanePatch {
    pub origin: Vec3,
    pub normal: Vec3,
    pub e1: Vec3,
    pub e2: Vec3,
    pub outer: Option<Polygon>,
    pub holes: Vec<Polygon>,
}

impl PlanePatch {
    /// Unclipped plane with an arbitrary in-plane frame.
    pub fn unbounded(origin: Vec3, normal: Vec3) -> Self {
        let normal = normal.normalized();
        let e1 = normal.any_orthonormal();
        let e2 = normal.cross(e1);
        Self { origin, normal, e1, e2, outer: None, holes: Vec::new() }
    }

    #[inline]
    pub fn coords(&self, p: Vec3) -> [f64; 2] {
        let d = p - self.origin;
        [d.dot(self.e1), d.dot(self.e2)]
    }

    pub fn lift(&self, uv: [f64; 2]) -> Vec3 {
        self.origin + self.e1 * uv[0] + self.e2 * uv[1]
    }

    pub fn contains(&self, uv: [f64; 2]) -> bool {
        self.outer.as_ref().is_none_or(|o| o.contains(uv)) && !self.holes.iter().any(|h| h.contains(uv))
    }

    pub fn border_distance(&self, uv: [f64; 2]) -> f64 {
        let outer = self.outer.as_ref().map_or(f64::INFINITY, |o| o.boundary_distance(uv));
        self.holes
            .iter()
            .map(|h| h.boundary_distance(uv))
            .fold(outer, f64::min)
    }

    fn intersect<R: Real>(&self, x: &Line<R>, t_min: R, t_max: R) -> Option<HitOf<R>> {
        let normal = V3::from_f64(self.normal).normalized();
        let denom = x.v.dot(normal);
        if denom >= R::zero() {
            return None;
        }
        let t = (V3::from_f64(self.origin) - x.q).dot(normal) / denom;
        if !(t > t_min && t <= t_max) {
            return None;
        }
        let point = x.at(t);
        let uv = self.coords(point.to_f64());
        let border = self.border_distance(uv);
        let near_edge = border < EDGE_TOL;
        if !near_edge && !self.contains(uv) {
            return None;
        }
        let cos = denom.to_f64();
        Some(HitOf {
            t,
            point,
            normal,
            cos_incidence: cos,
            tangential: cos.abs() < TANGENCY_TOL,
            near_edge,
        })
    }

    fn gap(&self, p: Vec3) -> f64 {
        let h = (p - self.origin).dot(self.normal).abs();
        let uv = self.coords(p);
        if self.contains(uv) {
            h
        } else {
            let b = self.border_distance(uv);
            (h * h + b * b).sqrt()
        }
    }

    fn translated(&self, d: Vec3) -> Self {
        Self { origin: self.origin + d, ..self.clone() }
    }
}

/// Transverse geometry shared by cylinders and cigars: an axis through
/// `axis_point` along unit `axis_dir`, clipped to axial parameter `[lo, hi]`,
/// with the angular patch `phi_span` measured from `e_a` towards `e_b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub point: Vec3,
    pub dir: Vec3,
    pub lo: f64,
    pub hi: f64,
    pub e_a: Vec3,
    pub e_b: Vec3,
    pub phi_span: [f64; 2],
}

impl Axis {
    pub fn new(point: Vec3, dir: Vec3, lo: f64, hi: f64) -> Self {
        let dir = dir.normalized();
        let e_a = dir.any_orthonormal();
        let e_b = dir.cross(e_a);
        Self { point, dir, lo, hi, e_a, e_b, phi_span: [0.0, std::f64::consts::TAU] }
    }

    pub fn with_patch(mut self, e_a: Vec3, phi_span: [f64; 2]) -> Self {
        self.e_a = e_a.reject(self.dir).normalized();
        self.e_b = self.dir.cross(self.e_a);
        self.phi_span = phi_span;
        self
    }

    /// (axial parameter, transverse offset vector) of `p`.
    #[inline]
    pub fn split(&self, p: Vec3) -> (f64, Vec3) {
        self.split_r(p)
    }

    #[inline]
    pub fn split_r<R: Real>(&self, p: V3<R>) -> (R, V3<R>) {
        let dir = V3::from_f64(self.dir);
        let d = p - V3::from_f64(self.point);
        let s = d.dot(dir);
        (s, d - dir * s)
    }

    pub fn point_at(&self, s: f64, phi: f64, radius: f64) -> Vec3 {
        self.point + self.dir * s + (self.e_a * phi.cos() + self.e_b * phi.sin()) * radius
    }

    fn axial_edge_distance(&self, s: f64) -> f64 {
        (s - self.lo).min(self.hi - s)
    }

    /// Interval of ray parameters with axial coordinate inside the clip.
    fn clip_interval<R: Real>(&self, s0: R, vs: R) -> Option<(R, R)> {
        if vs == R::zero() {
            let inside = s0 >= R::from_f64(self.lo) && s0 <= R::from_f64(self.hi);
            return inside.then(|| (R::from_f64(-HUGE), R::from_f64(HUGE)));
        }
        let a = (R::from_f64(self.lo) - s0) / vs;
        let b = (R::from_f64(self.hi) - s0) / vs;
        Some((a.min(b), a.max(b)))
    }
}

/// Stand-in for an unbounded parameter in kernel arithmetic.
const HUGE: f64 = 1e300;

#[derive(Debug, Clone, PartialEq)]
pub struct Cylinder {
    pub axis: Axis,
    pub radius: f64,
}

impl Cylinder {
    fn intersect<R: Real>(&self, x: &Line<R>, t_min: R, t_max: R) -> Option<HitOf<R>> {
        let dir = V3::from_f64(self.axis.dir);
        let (s0, p0) = self.axis.split_r(x.q);
        let vs = x.v.dot(dir);
        let pv = x.v - dir * vs;
        let (t1, _) = quadratic_entry(p0, pv, R::from_f64(self.radius))?;
        if !(t1 > t_min && t1 <= t_max) {
            return None;
        }
        let s = (s0 + t1 * vs).to_f64();
        let edge = self.axis.axial_edge_distance(s);
        if edge < -EDGE_TOL {
            return None;
        }
        let point = x.at(t1);
        let (_, w) = self.axis.split_r(point);
        let normal = w.normalized();
        let cos = x.v.dot(normal).to_f64();
        Some(HitOf {
            t: t1,
            point,
            normal,
            cos_incidence: cos,
            tangential: cos.abs() < TANGENCY_TOL,
            near_edge: edge.abs() < EDGE_TOL,
        })
    }
}

/// Entry parameter into the infinite cylinder `|p0 + t pv| = r`, together with
/// the exit parameter. `None` if the line misses it, starts inside it, or runs
/// parallel to the axis.
#[inline]
fn quadratic_entry<R: Real>(p0: V3<R>, pv: V3<R>, r: R) -> Option<(R, R)> {
    if p0.norm_sq() < r * r {
        return None;
    }
    cylinder_span(p0, pv, r)
}

/// Both parameters where the line meets the infinite cylinder of radius `r`.
#[inline]
fn cylinder_span<R: Real>(p0: V3<R>, pv: V3<R>, r: R) -> Option<(R, R)> {
    let a = pv.norm_sq();
    if a == R::zero() {
        return None;
    }
    let b = p0.dot(pv);
    let c = p0.norm_sq() - r * r;
    let disc = b * b - a * c;
    if disc < R::zero() {
        return None;
    }
    let root = disc.sqrt();
    let q = if b < R::zero() { root - b } else { -(b + root) };
    if q == R::zero() {
        return Some((R::zero(), R::zero()));
    }
    let (r1, r2) = (q / a, c / q);
    Some((r1.min(r2), r1.max(r2)))
}

/// Cylinder-like scatterer along a cell edge whose radius has a circular
/// longitudinal profile
/// `r(s) = rho - sign(R) (|R| - sqrt(R² - (s - center)²))`.
///
/// For `r_long > 0` the solid is convex (radius maximal at `center`); a negative
/// `r_long` gives a concave profile and only exists for negative tests.
#[derive(Debug, Clone, PartialEq)]
pub struct Cigar {
    pub axis: Axis,
    pub rho: f64,
    pub r_long: f64,
    pub center: f64,
}

impl Cigar {
    #[inline]
    pub fn radius_at(&self, s: f64) -> f64 {
        self.radius_at_r(s)
    }

    /// dr/ds.
    #[inline]
    pub fn slope_at(&self, s: f64) -> f64 {
        self.slope_at_r(s)
    }

    #[inline]
    fn radius_at_r<R: Real>(&self, s: R) -> R {
        let u = s - R::from_f64(self.center);
        let big = R::from_f64(self.r_long.abs());
        let sag = u * u / (big + (big * big - u * u).sqrt());
        R::from_f64(self.rho) - sag.scale(self.r_long.signum())
    }

    #[inline]
    fn slope_at_r<R: Real>(&self, s: R) -> R {
        let u = s - R::from_f64(self.center);
        let big = R::from_f64(self.r_long.abs());
        -(u / (big * big - u * u).sqrt()).scale(self.r_long.signum())
    }

    #[inline]
    fn r_max(&self) -> f64 {
        if self.r_long > 0.0 && self.center >= self.axis.lo && self.center <= self.axis.hi {
            self.rho
        } else {
            self.radius_range().0
        }
    }

    /// Largest and smallest radius over the axial clip.
    pub fn radius_range(&self) -> (f64, f64) {
        let (lo, hi) = (self.axis.lo, self.axis.hi);
        let ends = (self.radius_at(lo), self.radius_at(hi));
        let inner = self.radius_at(self.center.clamp(lo, hi));
        let max = ends.0.max(ends.1).max(inner);
        let min = ends.0.min(ends.1).min(inner);
        (max, min)
    }

    /// Signed gap `d - r(s)`: positive outside the solid.
    #[inline]
    pub fn implicit(&self, p: Vec3) -> f64 {
        let (s, w) = self.axis.split(p);
        w.norm() - self.radius_at(s)
    }

    fn normal_at<R: Real>(&self, p: V3<R>) -> V3<R> {
        let (s, w) = self.axis.split_r(p);
        let slope = self.slope_at_r(s);
        (w.normalized() - V3::from_f64(self.axis.dir) * slope).normalized()
    }

    fn intersect<R: Real>(&self, x: &Line<R>, t_min: R, t_max: R) -> Result<Option<HitOf<R>>> {
        let dir = V3::from_f64(self.axis.dir);
        let (s0, p0) = self.axis.split_r(x.q);
        let vs = x.v.dot(dir);
        let pv = x.v - dir * vs;
        let r_max = R::from_f64(self.r_max());

        let (mut ta, mut tb) = match self.axis.clip_interval(s0, vs) {
            Some(iv) => iv,
            None => return Ok(None),
        };
        if pv.norm_sq() == R::zero() {
            if p0.norm() > r_max {
                return Ok(None);
            }
        } else {
            match cylinder_span(p0, pv, r_max) {
                Some((t1, t2)) => {
                    ta = ta.max(t1);
                    tb = tb.min(t2);
                }
                None => return Ok(None),
            }
        }
        ta = ta.max(t_min);
        tb = tb.min(t_max);
        if ta > tb {
            return Ok(None);
        }

        let f = |t: R| -> (R, R) {
            let w = p0 + pv * t;
            let d = w.norm();
            let s = s0 + vs * t;
            let dd = if d > R::zero() { w.dot(pv) / d } else { -pv.norm() };
            (d - self.radius_at_r(s), dd - self.slope_at_r(s) * vs)
        };

        let root = if self.r_long > 0.0 {
            newton_first_root(f, ta, tb)?
        } else {
            let lip = pv.norm().to_f64() + vs.abs().to_f64() * self.max_abs_slope();
            lipschitz_first_root(|t| f(t).0, ta, tb, lip)?
        };
        let t = match root {
            Some(t) if t > t_min => t,
            _ => return Ok(None),
        };
        let point = x.at(t);
        let normal = self.normal_at(point);
        let cos = x.v.dot(normal).to_f64();
        let (s, _) = self.axis.split(point.to_f64());
        Ok(Some(HitOf {
            t,
            point,
            normal,
            cos_incidence: cos,
            tangential: cos.abs() < TANGENCY_TOL,
            near_edge: self.axis.axial_edge_distance(s) < EDGE_TOL,
        }))
    }

    fn max_abs_slope(&self) -> f64 {
        self.slope_at(self.axis.lo).abs().max(self.slope_at(self.axis.hi).abs())
    }
}

/// First root of a convex function on `[ta, tb]`, by Newton's method from the
/// left. For convex `f` the iterates increase monotonically towards the first
/// root and never step over it; a non-negative slope at a positive value
/// proves there is no root ahead.
fn newton_first_root<R: Real>(f: impl Fn(R) -> (R, R), ta: R, tb: R) -> Result<Option<R>> {
    let tight = R::from_f64(R::POLISH_TOL);
    let accept = R::from_f64(ROOT_TOL);
    let mut t = ta;
    let (mut val, mut slope) = f(t);
    if val < -accept {
        // the interval starts inside the solid: the ray started there or
        // enters the clip range through an end cap
        return Ok(None);
    }
    for _ in 0..NEWTON_BUDGET {
        if val <= tight {
            return Ok(Some(t));
        }
        if slope >= R::zero() {
            return Ok(None);
        }
        let next = t - val / slope;
        if next > tb {
            return Ok(None);
        }
        if next <= t {
            // no further progress in floating point
            return Ok((val < accept).then_some(t));
        }
        t = next;
        (val, slope) = f(t);
    }
    if val.abs() < accept {
        Ok(Some(t))
    } else {
        Err(Error::NumericFailure { residual: val.to_f64(), iterations: NEWTON_BUDGET })
    }
}

/// First sign change of a `lipschitz`-Lipschitz function on `[ta, tb]`:
/// march with steps `f / lipschitz` (which cannot jump a root), then bisect.
fn lipschitz_first_root<R: Real>(
    f: impl Fn(R) -> R,
    ta: R,
    tb: R,
    lipschitz: f64,
) -> Result<Option<R>> {
    let lip = R::from_f64(lipschitz.max(1e-12));
    let min_step = R::from_f64(1e-13);
    let tight = R::from_f64(R::POLISH_TOL);
    let mut t = ta;
    let mut val = f(t);
    if val < R::zero() {
        return Ok(None);
    }
    let mut steps = 0usize;
    while t < tb {
        if val <= tight {
            return Ok(Some(t));
        }
        let next = (t + (val / lip).max(min_step)).min(tb);
        let nv = f(next);
        if nv <= R::zero() {
            let (mut lo, mut hi) = (t, next);
            for _ in 0..400 {
                let mid = (lo + hi).scale(0.5);
                if mid <= lo || mid >= hi {
                    break;
                }
                if f(mid) > R::zero() {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let r = f(hi).to_f64();
            return if r.abs() < ROOT_TOL {
                Ok(Some(hi))
            } else {
                Err(Error::NumericFailure { residual: r, iterations: 400 })
            };
        }
        if next >= tb {
            break;
        }
        t = next;
        val = nv;
        steps += 1;
        if steps > 10_000_000 {
            return Err(Error::NumericFailure { residual: val.to_f64(), iterations: steps });
        }
    }
    Ok(None)
}

/// Transparent square gate. `normal` is the inner normal of the cell the gate
/// belongs to; the gate is *crossed* by rays leaving that cell (`v·normal < 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct GatePlane {
    pub patch: PlanePatch,
}

impl GatePlane {
    pub fn square(center: Vec3, normal: Vec3, e1: Vec3, side: f64) -> Self {
        let normal = normal.normalized();
        let e1 = e1.reject(normal).normalized();
        let e2 = normal.cross(e1);
        Self {
            patch: PlanePatch {
                origin: center,
                normal,
                e1,
                e2,
                outer: Some(Polygon::square([0.0, 0.0], side)),
                holes: Vec::new(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SurfaceKind {
    Plane(PlanePatch),
    Cylinder(Cylinder),
    Cigar(Cigar),
    BulkheadFace(PlanePatch),
    GatePlane(GatePlane),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Surface {
    pub kind: SurfaceKind,
    pub dispersing: bool,
    pub id: SurfaceId,
    pub role: SurfaceRole,
    /// Disabled surfaces keep their slot in a cell but take no part in the dynamics.
    pub enabled: bool,
}

/// Principal curvatures and directions at a point (shape operator of the
/// inner normal field).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeOperator {
    pub k1: f64,
    pub d1: Vec3,
    pub k2: f64,
    pub d2: Vec3,
}

impl ShapeOperator {
    pub const FLAT: ShapeOperator =
        ShapeOperator { k1: 0.0, d1: Vec3::ZERO, k2: 0.0, d2: Vec3::ZERO };

    /// Derivative of the inner normal along tangent vector `a`.
    #[inline]
    pub fn apply(&self, a: Vec3) -> Vec3 {
        self.d1 * (self.k1 * self.d1.dot(a)) + self.d2 * (self.k2 * self.d2.dot(a))
    }
}

impl Surface {
    pub fn new(kind: SurfaceKind, id: SurfaceId, role: SurfaceRole) -> Self {
        let dispersing = matches!(kind, SurfaceKind::Cylinder(_) | SurfaceKind::Cigar(_));
        Self { kind, dispersing, id, role, enabled: true }
    }

    pub fn plane(patch: PlanePatch) -> Self {
        Self::new(SurfaceKind::Plane(patch), SurfaceId::default(), SurfaceRole::Free)
    }

    pub fn cylinder(axis: Axis, radius: f64) -> Self {
        Self::new(SurfaceKind::Cylinder(Cylinder { axis, radius }), SurfaceId::default(), SurfaceRole::Free)
    }

    pub fn cigar(axis: Axis, rho: f64, r_long: f64, center: f64) -> Self {
        Self::new(
            SurfaceKind::Cigar(Cigar { axis, rho, r_long, center }),
            SurfaceId::default(),
            SurfaceRole::Free,
        )
    }

    pub fn with_id(mut self, id: SurfaceId, role: SurfaceRole) -> Self {
        self.id = id;
        self.role = role;
        self
    }

    pub fn is_gate(&self) -> bool {
        matches!(self.kind, SurfaceKind::GatePlane(_))
    }

    /// Smallest `t` in `(t_min, t_max]` at which the ray meets the clipped
    /// surface from its free side.
    pub fn intersect_ray(&self, x: &LineElement, t_min: f64, t_max: f64) -> Result<Option<Hit>> {
        self.intersect_ray_r(x, t_min, t_max)
    }

    /// [`Surface::intersect_ray`] in an arbitrary kernel scalar.
    pub fn intersect_ray_r<R: Real>(&self, x: &Line<R>, t_min: R, t_max: R) -> Result<Option<HitOf<R>>> {
        match &self.kind {
            SurfaceKind::Plane(p) | SurfaceKind::BulkheadFace(p) => Ok(p.intersect(x, t_min, t_max)),
            SurfaceKind::GatePlane(g) => Ok(g.patch.intersect(x, t_min, t_max)),
            SurfaceKind::Cylinder(c) => Ok(c.intersect(x, t_min, t_max)),
            SurfaceKind::Cigar(c) => c.intersect(x, t_min, t_max),
        }
    }

    /// Inner unit normal at a point of the surface.
    pub fn normal_at(&self, p: Vec3) -> Vec3 {
        self.normal_at_r(p)
    }

    pub fn normal_at_r<R: Real>(&self, p: V3<R>) -> V3<R> {
        match &self.kind {
            SurfaceKind::Plane(pl) | SurfaceKind::BulkheadFace(pl) => V3::from_f64(pl.normal).normalized(),
            SurfaceKind::GatePlane(g) => V3::from_f64(g.patch.normal),
            SurfaceKind::Cylinder(c) => c.axis.split_r(p).1.normalized(),
            SurfaceKind::Cigar(c) => c.normal_at(p),
        }
    }

    /// Signed distance-like function: zero on the surface, positive on the free side.
    pub fn implicit(&self, p: Vec3) -> f64 {
        match &self.kind {
            SurfaceKind::Plane(pl) | SurfaceKind::BulkheadFace(pl) => (p - pl.origin).dot(pl.normal),
            SurfaceKind::GatePlane(g) => (p - g.patch.origin).dot(g.patch.normal),
            SurfaceKind::Cylinder(c) => c.axis.split(p).1.norm() - c.radius,
            SurfaceKind::Cigar(c) => c.implicit(p),
        }
    }

    /// Principal curvatures seen from the billiard domain, transverse
    /// (circumferential) first for the round pieces.
    pub fn curvature_at(&self, p: Vec3) -> Result<(f64, f64)> {
        let shape = self.shape_operator(p)?;
        Ok((shape.k1, shape.k2))
    }

    pub fn shape_operator(&self, p: Vec3) -> Result<ShapeOperator> {
        let dist = self.edge_distance(p);
        if dist < EDGE_TOL {
            return Err(Error::EdgeProximity { distance: dist });
        }
        Ok(self.shape_operator_unchecked(p))
    }

    /// Shape operator without the edge-proximity guard (used inside the flow,
    /// where edge hits have already been classified).
    pub fn shape_operator_unchecked(&self, p: Vec3) -> ShapeOperator {
        match &self.kind {
            SurfaceKind::Plane(_) | SurfaceKind::BulkheadFace(_) | SurfaceKind::GatePlane(_) => {
                ShapeOperator::FLAT
            }
            SurfaceKind::Cylinder(c) => {
                let (_, w) = c.axis.split(p);
                let circ = c.axis.dir.cross(w.normalized());
                ShapeOperator { k1: 1.0 / c.radius, d1: circ, k2: 0.0, d2: c.axis.dir }
            }
            SurfaceKind::Cigar(c) => {
                let (s, w) = c.axis.split(p);
                let w_hat = w.normalized();
                let slope = c.slope_at(s);
                let stretch = (1.0 + slope * slope).sqrt();
                let circ = c.axis.dir.cross(w_hat);
                let meridian = (c.axis.dir + w_hat * slope) / stretch;
                ShapeOperator {
                    k1: 1.0 / (c.radius_at(s) * stretch),
                    d1: circ,
                    k2: 1.0 / c.r_long,
                    d2: meridian,
                }
            }
        }
    }

    /// Distance from `p` (on the surface) to the border of the clipped patch.
    pub fn edge_distance(&self, p: Vec3) -> f64 {
        match &self.kind {
            SurfaceKind::Plane(pl) | SurfaceKind::BulkheadFace(pl) => {
                pl.border_distance(pl.coords(p)).max(0.0)
            }
            SurfaceKind::GatePlane(g) => g.patch.border_distance(g.patch.coords(p)),
            SurfaceKind::Cylinder(c) => c.axis.axial_edge_distance(c.axis.split(p).0).max(0.0),
            SurfaceKind::Cigar(c) => c.axis.axial_edge_distance(c.axis.split(p).0).max(0.0),
        }
    }

    /// Approximate distance from an arbitrary point to this clipped patch;
    /// exact for planes, first-order for the round pieces. Used to detect hits
    /// on the seams where two pieces meet.
    /// `gap(p) < tol`, with cheap early exits.
    pub fn is_near(&self, p: Vec3, tol: f64) -> bool {
        match &self.kind {
            SurfaceKind::Plane(pl) | SurfaceKind::BulkheadFace(pl) => {
                (p - pl.origin).dot(pl.normal).abs() < tol && pl.gap(p) < tol
            }
            SurfaceKind::GatePlane(_) => false,
            SurfaceKind::Cylinder(_) | SurfaceKind::Cigar(_) => self.gap(p) < tol,
        }
    }

    pub fn gap(&self, p: Vec3) -> f64 {
        match &self.kind {
            SurfaceKind::Plane(pl) | SurfaceKind::BulkheadFace(pl) => pl.gap(p),
            SurfaceKind::GatePlane(_) => f64::INFINITY,
            SurfaceKind::Cylinder(c) => {
                let (s, w) = c.axis.split(p);
                let over = (c.axis.lo - s).max(s - c.axis.hi).max(0.0);
                let r = w.norm() - c.radius;
                (r * r + over * over).sqrt()
            }
            SurfaceKind::Cigar(c) => {
                let (s, w) = c.axis.split(p);
                if (s - c.center).abs() >= c.r_long.abs() {
                    return f64::INFINITY;
                }
                let over = (c.axis.lo - s).max(s - c.axis.hi).max(0.0);
                let r = w.norm() - c.radius_at(s);
                (r * r + over * over).sqrt()
            }
        }
    }

    /// The same surface moved by `d`.
    pub fn translated(&self, d: Vec3) -> Surface {
        let kind = match &self.kind {
            SurfaceKind::Plane(p) => SurfaceKind::Plane(p.translated(d)),
            SurfaceKind::BulkheadFace(p) => SurfaceKind::BulkheadFace(p.translated(d)),
            SurfaceKind::GatePlane(g) => SurfaceKind::GatePlane(GatePlane { patch: g.patch.translated(d) }),
            SurfaceKind::Cylinder(c) => SurfaceKind::Cylinder(Cylinder {
                axis: Axis { point: c.axis.point + d, ..c.axis.clone() },
                radius: c.radius,
            }),
            SurfaceKind::Cigar(c) => SurfaceKind::Cigar(Cigar {
                axis: Axis { point: c.axis.point + d, ..c.axis.clone() },
                ..c.clone()
            }),
        };
        Surface { kind, ..self.clone() }
    }
}
