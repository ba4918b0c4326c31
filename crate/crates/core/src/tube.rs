//! The template cell, its quenched random realizations along the tube, and the
//! closed-form constants of the geometry.
//!
//! Cell `n` occupies `x ∈ [n h, (n + 1) h]`, `y, z ∈ [0, 1]`. Its left square
//! facet carries the gate G¹, the right one G²; τ = (h, 0, 0).

use crate::error::{Error, Result};
use crate::geometry::{
    Axis, Cigar, Cylinder, GatePlane, PlanePatch, Surface, SurfaceId, SurfaceKind, SurfaceRole,
};
use crate::polygon::Polygon;
use crate::rng::derive_seed;
use crate::vec3::Vec3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, PI};
use std::sync::{Arc, RwLock};

/// Corners of the unit square carrying the four cigar axes, in the order used
/// for cigar indices and their angular patches.
pub const CORNERS: [[f64; 2]; 4] = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];

/// Index layout of the surfaces of a cell.
pub mod layout {
    pub const CIGARS: std::ops::Range<usize> = 0..4;
    pub const BULKHEAD: [usize; 2] = [4, 5];
    pub const END_FACETS: [usize; 2] = [6, 7];
    pub const SIDE_FACETS: std::ops::Range<usize> = 8..12;
    /// G¹ then G².
    pub const GATES: [usize; 2] = [12, 13];
    pub const COUNT: usize = 14;
}

fn yes() -> bool {
    true
}

/// Parameters of the template cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateParams {
    pub h: f64,
    pub g: f64,
    pub rho: f64,
    /// Longitudinal curvature radius of the cigars; `None` gives straight cylinders.
    #[serde(default)]
    pub r_long: Option<f64>,
    /// Bulkhead hole, in the face frame (see [`bulkhead_frame`]).
    pub hole: Polygon,
    #[serde(default = "yes")]
    pub cigars: bool,
    #[serde(default = "yes")]
    pub bulkhead: bool,
}

impl Default for TemplateParams {
    fn default() -> Self {
        Self::appendix()
    }
}

impl TemplateParams {
    /// h = 12, g = 0.05, ρ = 0.55, R_long = 1200, square hole of side 0.1 at (0.2, 0.2).
    pub fn appendix() -> Self {
        Self {
            h: 12.0,
            g: 0.05,
            rho: 0.55,
            r_long: Some(1200.0),
            hole: Polygon::square([0.2, 0.2], 0.1),
            cigars: true,
            bulkhead: true,
        }
    }

    /// Straight cylinders and no bulkhead: the cross-section is exactly the
    /// diamond billiard.
    pub fn cylindrical() -> Self {
        Self { r_long: None, bulkhead: false, ..Self::appendix() }
    }

    /// A bare box: only facets and gates.
    pub fn empty() -> Self {
        Self { cigars: false, bulkhead: false, ..Self::appendix() }
    }

    /// Upper bound on the cigar radius, `(1 - g)/√2`.
    pub fn rho_max(&self) -> f64 {
        (1.0 - self.g) * FRAC_1_SQRT_2
    }

    pub fn validate(&self) -> Result<()> {
        let draw = CellDraw::unperturbed(self, 0);
        validate_draw(self, &draw)
    }
}

/// Per-cigar shape actually used in a cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CigarShape {
    pub rho: f64,
    pub r_long: Option<f64>,
    /// Axial position of the widest section, relative to the cell start.
    pub center: f64,
}

impl CigarShape {
    pub fn radius_at(&self, s: f64) -> f64 {
        match self.r_long {
            None => self.rho,
            Some(r) => {
                let u = s - self.center;
                let big = r.abs();
                self.rho - r.signum() * u * u / (big + (big * big - u * u).sqrt())
            }
        }
    }
}

/// The local configuration ω_n: everything drawn for one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellDraw {
    pub template_index: usize,
    pub cigars: [CigarShape; 4],
    pub hole_offset: [f64; 2],
}

impl CellDraw {
    pub fn unperturbed(t: &TemplateParams, template_index: usize) -> Self {
        let shape = CigarShape { rho: t.rho, r_long: t.r_long, center: 0.5 * t.h };
        Self { template_index, cigars: [shape; 4], hole_offset: [0.0, 0.0] }
    }

    /// Independent uniform perturbations of size at most `m`: ρ and the axial
    /// placement by ±m, the hole by ±m in each face coordinate, and R_long by
    /// a relative amount in [0, m] (upwards only, so that R_long ≥ 100h keeps
    /// holding when the template sits on that bound).
    pub fn perturbed(t: &TemplateParams, template_index: usize, m: f64, rng: &mut impl Rng) -> Self {
        let mut draw = Self::unperturbed(t, template_index);
        let sym = |rng: &mut dyn rand::RngCore| m * rng.random_range(-1.0..=1.0);
        for c in draw.cigars.iter_mut() {
            c.rho += sym(rng);
            c.center += sym(rng);
            let up: f64 = rng.random();
            c.r_long = c.r_long.map(|r| r * (1.0 + m * up));
        }
        draw.hole_offset = [sym(rng), sym(rng)];
        draw
    }
}

/// Centre, unit normal and in-plane frame of the bulkhead plane
/// `x + y + z = h/2 + 1` in the local frame of a cell.
pub fn bulkhead_frame(h: f64) -> (Vec3, Vec3, Vec3, Vec3) {
    let c = Vec3::new(0.5 * h, 0.5, 0.5);
    let n = Vec3::new(1.0, 1.0, 1.0).normalized();
    let e1 = Vec3::new(-1.0, 1.0, 0.0).normalized();
    let e2 = n.cross(e1);
    (c, n, e1, e2)
}

/// The bulkhead's cut through the cell: the unit square lifted onto the plane,
/// in face coordinates.
fn bulkhead_outline(h: f64) -> Polygon {
    let (c, _, e1, e2) = bulkhead_frame(h);
    Polygon::new(
        CORNERS
            .iter()
            .map(|&[y, z]| {
                let d = Vec3::new(0.5 * h + 1.0 - y - z, y, z) - c;
                [d.dot(e1), d.dot(e2)]
            })
            .collect(),
    )
}

/// `(y, z)` projection of a bulkhead point given in face coordinates.
fn face_to_yz(h: f64, uv: [f64; 2]) -> [f64; 2] {
    let (c, _, e1, e2) = bulkhead_frame(h);
    let p = c + e1 * uv[0] + e2 * uv[1];
    [p.y, p.z]
}

fn validate_draw(t: &TemplateParams, draw: &CellDraw) -> Result<()> {
    let bad = |msg: String| Err(Error::InvalidGeometry(msg));
    let finite = [t.h, t.g, t.rho].iter().all(|v| v.is_finite())
        && t.r_long.is_none_or(f64::is_finite)
        && t.hole.vertices.iter().all(|p| p[0].is_finite() && p[1].is_finite());
    if !finite {
        return bad("all parameters must be finite".into());
    }
    if t.h <= 10.0 {
        return bad(format!("h > 10 violated (h = {})", t.h));
    }
    if !(t.g > 0.0 && t.g < 0.1) {
        return bad(format!("0 < g < 0.1 violated (g = {})", t.g));
    }
    let rho_max = t.rho_max();
    if t.cigars {
        for (k, c) in draw.cigars.iter().enumerate() {
            if c.rho <= 0.5 {
                return bad(format!("1/2 < rho violated (rho = {}, cigar {k})", c.rho));
            }
            if c.rho >= rho_max {
                return bad(format!(
                    "rho < (1-g)/sqrt(2) = {rho_max:.6} violated (rho = {}, cigar {k})",
                    c.rho
                ));
            }
            if let Some(r) = c.r_long {
                if r.abs() < 100.0 * t.h {
                    return bad(format!("|R_long| >= 100 h = {} violated (R_long = {r})", 100.0 * t.h));
                }
            }
            if !(0.0..=t.h).contains(&c.center) {
                return bad(format!("cigar {k} centre {} outside [0, h]", c.center));
            }
            for s in [0.0, c.center, t.h] {
                let r = c.radius_at(s);
                if !(r > 0.5 && r < rho_max) {
                    return bad(format!(
                        "cigar {k} radius {r} at x = {s} outside (1/2, (1-g)/sqrt(2))"
                    ));
                }
            }
        }
    }
    if t.bulkhead {
        let hole = t.hole.translated(draw.hole_offset);
        if hole.len() < 3 {
            return bad("bulkhead hole needs at least 3 vertices".into());
        }
        let outline = bulkhead_outline(t.h);
        if !hole.vertices.iter().all(|&p| outline.contains(p)) {
            return bad("bulkhead hole must lie inside the bulkhead".into());
        }
        if hole.contains([0.0, 0.0]) {
            return bad("bulkhead hole must be off-centre".into());
        }
        let shadow = Polygon::new(hole.vertices.iter().map(|&uv| face_to_yz(t.h, uv)).collect());
        let corridor = Polygon::square([0.5, 0.5], t.g);
        if shadow.overlaps(&corridor) {
            return bad("bulkhead hole lets a straight line join the gates".into());
        }
        if t.cigars && !hole_has_free_point(t, draw, &hole) {
            return bad("bulkhead hole is entirely covered by the cigars".into());
        }
    }
    Ok(())
}

fn hole_has_free_point(t: &TemplateParams, draw: &CellDraw, hole: &Polygon) -> bool {
    let (c, _, e1, e2) = bulkhead_frame(t.h);
    let (lo, hi) = hole.bounding_box();
    let k = 32;
    (0..=k).any(|i| {
        (0..=k).any(|j| {
            let uv = [
                lo[0] + (hi[0] - lo[0]) * i as f64 / k as f64,
                lo[1] + (hi[1] - lo[1]) * j as f64 / k as f64,
            ];
            if !hole.contains(uv) {
                return false;
            }
            let p = c + e1 * uv[0] + e2 * uv[1];
            draw.cigars.iter().zip(CORNERS).all(|(shape, [cy, cz])| {
                (p.y - cy).hypot(p.z - cz) > shape.radius_at(p.x)
            })
        })
    })
}

fn square_patch(origin: Vec3, normal: Vec3, e1: Vec3, e2: Vec3, outer: Polygon, holes: Vec<Polygon>) -> PlanePatch {
    PlanePatch { origin, normal, e1, e2, outer: Some(outer), holes }
}

/// All surfaces of a cell built from `draw`, shifted along the tube by `shift`
/// (use `0` for the local frame of the cell).
fn build_surfaces(t: &TemplateParams, draw: &CellDraw, shift: f64, cell: i64) -> Vec<Surface> {
    let off = Vec3::new(shift, 0.0, 0.0);
    let h = t.h;
    let id = |scatterer: usize, piece: u16| SurfaceId { cell, scatterer: scatterer as u16, piece };
    let mut out = Vec::with_capacity(layout::COUNT);

    for (k, (shape, [cy, cz])) in draw.cigars.iter().zip(CORNERS).enumerate() {
        let start = k as f64 * FRAC_PI_2;
        let axis = Axis::new(Vec3::new(0.0, cy, cz) + off, Vec3::X, 0.0, h)
            .with_patch(Vec3::Y, [start, start + FRAC_PI_2]);
        let kind = match shape.r_long {
            None => SurfaceKind::Cylinder(Cylinder { axis, radius: shape.rho }),
            Some(r_long) => SurfaceKind::Cigar(Cigar { axis, rho: shape.rho, r_long, center: shape.center }),
        };
        let mut s = Surface::new(kind, id(k, 0), SurfaceRole::Cigar(k as u8));
        s.enabled = t.cigars;
        out.push(s);
    }

    let (c, n, e1, e2) = bulkhead_frame(h);
    let outline = bulkhead_outline(h);
    let hole = t.hole.translated(draw.hole_offset);
    for (side, normal) in [n, -n].into_iter().enumerate() {
        let patch = square_patch(c + off, normal, e1, e2, outline.clone(), vec![hole.clone()]);
        let mut s = Surface::new(SurfaceKind::BulkheadFace(patch), id(4, side as u16), SurfaceRole::Bulkhead(side as u8));
        s.enabled = t.bulkhead;
        out.push(s);
    }

    let unit = Polygon::square([0.0, 0.0], 1.0);
    let gate = Polygon::square([0.0, 0.0], t.g);
    for (end, (x, normal)) in [(0.0, Vec3::X), (h, -Vec3::X)].into_iter().enumerate() {
        let patch = square_patch(
            Vec3::new(x, 0.5, 0.5) + off,
            normal,
            Vec3::Y,
            Vec3::Z,
            unit.clone(),
            vec![gate.clone()],
        );
        out.push(Surface::new(SurfaceKind::Plane(patch), id(5 + end, 0), SurfaceRole::EndFacet(end as u8)));
    }

    let strip = Polygon::rect([0.0, 0.0], [h, 1.0]);
    let sides = [
        (Vec3::new(0.0, 0.0, 0.0), Vec3::Y, Vec3::Z),
        (Vec3::new(0.0, 1.0, 0.0), -Vec3::Y, Vec3::Z),
        (Vec3::new(0.0, 0.0, 0.0), Vec3::Z, Vec3::Y),
        (Vec3::new(0.0, 0.0, 1.0), -Vec3::Z, Vec3::Y),
    ];
    for (k, (origin, normal, across)) in sides.into_iter().enumerate() {
        let patch = square_patch(origin + off, normal, Vec3::X, across, strip.clone(), Vec::new());
        let mut s = Surface::new(SurfaceKind::Plane(patch), id(7 + k, 0), SurfaceRole::SideFacet(k as u8));
        // with cigars of radius > 1/2 at every edge the side facets are covered
        s.enabled = !t.cigars;
        out.push(s);
    }

    for (j, (x, normal)) in [(0.0, Vec3::X), (h, -Vec3::X)].into_iter().enumerate() {
        let g = GatePlane::square(Vec3::new(x, 0.5, 0.5) + off, normal, Vec3::Y, t.g);
        out.push(Surface::new(SurfaceKind::GatePlane(g), id(11 + j, 0), SurfaceRole::Gate(j as u8 + 1)));
    }
    debug_assert_eq!(out.len(), layout::COUNT);
    out
}

/// A validated template cell (the cell C₀ of the periodic tube).
#[derive(Debug, Clone)]
pub struct CellTemplate {
    pub params: TemplateParams,
    pub surfaces: Vec<Surface>,
}

impl CellTemplate {
    pub fn new(params: TemplateParams) -> Result<Self> {
        params.validate()?;
        let surfaces = build_surfaces(&params, &CellDraw::unperturbed(&params, 0), 0.0, 0);
        Ok(Self { params, surfaces })
    }

    pub fn constants(&self) -> DerivedConstants {
        derived_constants(&self.params)
    }
}

/// Template with four cigars, a holed bulkhead, perforated end facets, side
/// facets and gates.
pub fn build_appendix_cell(h: f64, g: f64, rho: f64, r_long: Option<f64>, hole: Polygon) -> Result<CellTemplate> {
    CellTemplate::new(TemplateParams { h, g, rho, r_long, hole, cigars: true, bulkhead: true })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    pub gamma: f64,
    #[serde(rename = "M")]
    pub m: u64,
    #[serde(rename = "L1")]
    pub l1: f64,
    #[serde(rename = "L2")]
    pub l2: f64,
    #[serde(rename = "L3")]
    pub l3: f64,
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "K3")]
    pub k3: u64,
    pub eta: f64,
    pub eps: f64,
}

pub fn derived_constants(t: &TemplateParams) -> DerivedConstants {
    let gamma = (1.0 / (2.0 * t.rho)).acos();
    let m = (PI / gamma).ceil() as u64;
    let l1 = FRAC_1_SQRT_2 - t.rho;
    let l2 = 2.0 * t.h * m as f64;
    let l3 = 3.0 * t.h / (1.0 - 1e-4f64).sqrt();
    let l = 2.0 * (l2 + l3);
    let k3 = (l / l1).ceil() as u64 * m + (3.0 * l / t.h).ceil() as u64;
    let eta = FRAC_PI_2 - (1e-2 * (gamma / 2.0).sin()).acos();
    let eps = (FRAC_PI_2 - eta).cos();
    DerivedConstants { gamma, m, l1, l2, l3, l, k3, eta, eps }
}

/// How cells are drawn along the tube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TubeMode {
    /// Every cell is the template with its own small perturbation.
    Perturbed,
    /// Every cell picks one of finitely many templates (then perturbed as above).
    FiniteOmega { templates: Vec<TemplateParams> },
}

/// Serializable description of a quenched tube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TubeConfig {
    pub template: TemplateParams,
    pub seed: u64,
    pub perturbation_magnitude: f64,
    pub mode: TubeMode,
}

impl Default for TubeConfig {
    fn default() -> Self {
        Self {
            template: TemplateParams::appendix(),
            seed: 0,
            perturbation_magnitude: DEFAULT_PERTURBATION,
            mode: TubeMode::Perturbed,
        }
    }
}

/// Default perturbation size for the random tube.
pub const DEFAULT_PERTURBATION: f64 = 0.005;

impl TubeConfig {
    pub fn periodic(template: TemplateParams) -> Self {
        Self { template, seed: 0, perturbation_magnitude: 0.0, mode: TubeMode::Perturbed }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}

/// The realized cell C_n.
#[derive(Debug, Clone, PartialEq)]
pub struct CellConfig {
    pub n: i64,
    /// Surfaces in tube coordinates.
    pub surfaces: Vec<Surface>,
    /// The same surfaces in the cell's own frame (`x ∈ [0, h]`), as used by the flow.
    pub local: Vec<Surface>,
    pub omega: CellDraw,
}

/// Lazily realized bi-infinite random tube.
#[derive(Debug)]
pub struct QuenchedTube {
    config: TubeConfig,
    templates: Vec<TemplateParams>,
    constants: DerivedConstants,
    cache: RwLock<HashMap<i64, Arc<CellConfig>>>,
}

impl QuenchedTube {
    pub fn new(config: TubeConfig) -> Result<Self> {
        let m = config.perturbation_magnitude;
        if !(m.is_finite() && m >= 0.0) {
            return Err(Error::InvalidGeometry(format!("perturbation_magnitude must be >= 0 (got {m})")));
        }
        config.template.validate()?;
        let templates = match &config.mode {
            TubeMode::Perturbed => vec![config.template.clone()],
            TubeMode::FiniteOmega { templates } => {
                if templates.is_empty() {
                    return Err(Error::InvalidGeometry("finite-omega mode needs at least one template".into()));
                }
                for t in templates {
                    t.validate()?;
                    if t.h != config.template.h || t.g != config.template.g {
                        return Err(Error::InvalidGeometry("finite-omega templates must share h and g".into()));
                    }
                }
                templates.clone()
            }
        };
        let constants = derived_constants(&config.template);
        Ok(Self { config, templates, constants, cache: RwLock::new(HashMap::new()) })
    }

    /// Periodic tube: every cell is the template.
    pub fn periodic(template: TemplateParams) -> Result<Self> {
        Self::new(TubeConfig::periodic(template))
    }

    pub fn config(&self) -> &TubeConfig {
        &self.config
    }

    pub fn template(&self) -> &TemplateParams {
        &self.config.template
    }

    pub fn h(&self) -> f64 {
        self.config.template.h
    }

    pub fn g(&self) -> f64 {
        self.config.template.g
    }

    pub fn constants(&self) -> &DerivedConstants {
        &self.constants
    }

    /// Which template cell `n` uses.
    pub fn template_index(&self, n: i64) -> usize {
        let k = self.templates.len() as u128;
        ((derive_seed(self.config.seed, n as u64) as u128 * k) >> 64) as usize
    }

    /// ω_n, a pure function of `(seed, n)`.
    pub fn draw(&self, n: i64) -> CellDraw {
        let seed = derive_seed(self.config.seed, n as u64);
        let index = self.template_index(n);
        let t = &self.templates[index];
        let m = self.config.perturbation_magnitude;
        if m == 0.0 {
            return CellDraw::unperturbed(t, index);
        }
        CellDraw::perturbed(t, index, m, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Builds cell `n` from scratch (no cache).
    pub fn realize_cell(&self, n: i64) -> Result<CellConfig> {
        let omega = self.draw(n);
        let t = &self.templates[omega.template_index];
        validate_draw(t, &omega)?;
        Ok(CellConfig {
            n,
            surfaces: build_surfaces(t, &omega, n as f64 * t.h, n),
            local: build_surfaces(t, &omega, 0.0, n),
            omega,
        })
    }

    /// Cached [`QuenchedTube::realize_cell`].
    pub fn cell(&self, n: i64) -> Result<Arc<CellConfig>> {
        if let Some(c) = self.cache.read().expect("cell cache poisoned").get(&n) {
            return Ok(c.clone());
        }
        let built = Arc::new(self.realize_cell(n)?);
        let mut cache = self.cache.write().expect("cell cache poisoned");
        Ok(cache.entry(n).or_insert(built).clone())
    }

    pub fn cached_cells(&self) -> usize {
        self.cache.read().expect("cell cache poisoned").len()
    }

    pub fn clear_cache(&self) {
        self.cache.write().expect("cell cache poisoned").clear();
    }
}

impl CellConfig {
    pub fn template_index(&self) -> usize {
        self.omega.template_index
    }

    /// Indices of the enabled dispersing surfaces.
    pub fn dispersing(&self) -> impl Iterator<Item = usize> + '_ {
        self.local.iter().enumerate().filter(|(_, s)| s.enabled && s.dispersing).map(|(i, _)| i)
    }
}
