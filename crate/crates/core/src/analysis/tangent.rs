//! Linearized flow: Jacobi fields `(dq, dv)` orthogonal to the velocity,
//! carried through free flights and reflections.

use crate::flow::{EventKind, Step};
use crate::geometry::ShapeOperator;
use crate::vec3::Vec3;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Jacobi {
    pub dq: Vec3,
    pub dv: Vec3,
}

impl Jacobi {
    pub fn new(dq: Vec3, dv: Vec3) -> Self {
        Self { dq, dv }
    }

    pub fn dot(&self, o: &Jacobi) -> f64 {
        self.dq.dot(o.dq) + self.dv.dot(o.dv)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scaled(&self, k: f64) -> Jacobi {
        Jacobi { dq: self.dq * k, dv: self.dv * k }
    }

    pub fn sub(&self, o: &Jacobi, k: f64) -> Jacobi {
        Jacobi { dq: self.dq - o.dq * k, dv: self.dv - o.dv * k }
    }

    /// Drops the components along `v` (a shift along the orbit and a change
    /// of speed, both neutral).
    pub fn transverse(&self, v: Vec3) -> Jacobi {
        Jacobi { dq: self.dq - v * self.dq.dot(v), dv: self.dv - v * self.dv.dot(v) }
    }

    /// Free flight for time `t`.
    pub fn flight(&self, t: f64) -> Jacobi {
        Jacobi { dq: self.dq + self.dv * t, dv: self.dv }
    }

    /// Reflection with incoming velocity `v_in` at a point with inner unit
    /// normal `n` and shape operator `shape`.
    pub fn collision(&self, v_in: Vec3, n: Vec3, shape: &ShapeOperator) -> Jacobi {
        let c = v_in.dot(n);
        // displacement of the hit point along the wall
        let u = self.dq - v_in * (n.dot(self.dq) / c);
        let dn = shape.apply(u);
        let dq = self.dq - n * (2.0 * self.dq.dot(n));
        let dv = self.dv - n * (2.0 * self.dv.dot(n)) - n * (2.0 * v_in.dot(dn)) - dn * (2.0 * c);
        Jacobi { dq, dv }
    }

    /// Applies one kernel step (flight, then the wall if it reflects).
    pub fn step(&self, st: &Step<f64>, shape: &ShapeOperator) -> Jacobi {
        let j = self.flight(st.flight);
        match st.kind {
            EventKind::Dispersing | EventKind::Flat => j.collision(st.v_in, st.hit.normal, shape),
            _ => j,
        }
    }
}

/// Two-dimensional frame transverse to `base.v`, with the accumulated 2×2
/// matrix of `dq` coordinates (orthogonal Jacobi metric).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransverseFrame {
    pub base: crate::vec3::LineElement,
    pub basis: [Vec3; 2],
    pub matrix: [[f64; 2]; 2],
}

impl TransverseFrame {
    /// Frame of the two Jacobi fields `fields`, read off in an orthonormal
    /// basis of the plane orthogonal to `base.v`.
    pub fn from_fields(base: crate::vec3::LineElement, fields: &[Jacobi; 2]) -> Self {
        let (e1, e2) = crate::rng::frame(base.v);
        let matrix = [
            [fields[0].dq.dot(e1), fields[1].dq.dot(e1)],
            [fields[0].dq.dot(e2), fields[1].dq.dot(e2)],
        ];
        Self { base, basis: [e1, e2], matrix }
    }

    /// Singular values of `matrix`, largest first.
    pub fn singular_values(&self) -> [f64; 2] {
        let [[a, b], [c, d]] = self.matrix;
        let s = a * a + b * b + c * c + d * d;
        let det = (a * d - b * c).abs();
        let big = (0.5 * (s + (s * s - 4.0 * det * det).max(0.0).sqrt())).sqrt();
        [big, if big > 0.0 { det / big } else { 0.0 }]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{cell_of, Flow, FlowState};
    use crate::rng::frame;
    use crate::sections::{sample_measure, Section};
    use crate::tube::{QuenchedTube, TubeConfig};
    use crate::vec3::LineElement;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tube() -> QuenchedTube {
        QuenchedTube::new(TubeConfig { seed: 3, ..TubeConfig::default() }).unwrap()
    }

    /// Position of `x` after running `k` reflections and then `extra` more time.
    fn run(tube: &QuenchedTube, x: LineElement, k: u64, until: f64) -> Option<(LineElement, Vec<(i64, usize)>)> {
        let mut f = Flow::<f64>::new(tube, &FlowState::new(x, cell_of(tube, x.q.x))).ok()?;
        let mut path = Vec::new();
        while f.collisions() < k || f.time() < until {
            let c = f.peek().ok()?;
            if f.collisions() >= k && f.time() + c.hit.t > until {
                f.advance_free(until - f.time());
                break;
            }
            let st = f.apply(c).ok()?;
            if st.kind.is_singular() {
                return None;
            }
            if st.kind.is_reflection() {
                path.push((st.cell, st.surface));
            }
        }
        Some((f.state().x, path))
    }

    #[test]
    fn matches_finite_differences() {
        let tube = tube();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let starts = sample_measure(&tube, &Section::N { n: 0, gate: None }, 40, &mut rng).unwrap();
        let mut checked = 0;
        for p in starts {
            let first = Flow::<f64>::local(&tube, 0, p.local, None).unwrap().peek().unwrap().hit.t;
            let x0 = LineElement::new(p.local.q + p.local.v * (0.5 * first), p.local.v);
            let (e1, e2) = frame(x0.v);
            let j0 = Jacobi::new(e1 * rng.random_range(-1.0..1.0), e2 * rng.random_range(-1.0..1.0) + e1 * 0.3);
            // the tangent propagation along the reference orbit
            let mut f = Flow::<f64>::new(&tube, &FlowState::new(x0, cell_of(&tube, x0.q.x))).unwrap();
            let mut j = j0;
            let mut ok = true;
            while f.collisions() < 6 {
                let st = match f.step() {
                    Ok(st) if !st.kind.is_singular() => st,
                    _ => {
                        ok = false;
                        break;
                    }
                };
                let shape = f.cell().local[st.surface].shape_operator_unchecked(st.hit.point.to_f64());
                j = j.step(&st, &shape);
            }
            if !ok {
                continue;
            }
            let half = f.peek().unwrap().hit.t * 0.5;
            let until = f.time() + half;
            let j = j.flight(half);
            let (xr, path_r) = run(&tube, x0, 6, until).unwrap();

            let h = 1e-7;
            let xp = LineElement::new(x0.q + j0.dq * h, (x0.v + j0.dv * h).normalized());
            let xm = LineElement::new(x0.q - j0.dq * h, (x0.v - j0.dv * h).normalized());
            let (Some((a, pa)), Some((b, pb))) = (run(&tube, xp, 6, until), run(&tube, xm, 6, until)) else {
                continue;
            };
            if pa != path_r || pb != path_r {
                continue;
            }
            let fd = Jacobi::new((a.q - b.q) / (2.0 * h), (a.v - b.v) / (2.0 * h)).transverse(xr.v);
            let an = j.transverse(xr.v);
            let err = fd.sub(&an, 1.0).norm() / an.norm();
            assert!(err < 1e-4, "relative error {err}: fd {fd:?} vs {an:?}");
            checked += 1;
        }
        assert!(checked >= 20, "only {checked} orbits checked");
    }

    #[test]
    fn stays_orthogonal_to_the_velocity() {
        let tube = tube();
        let x0 = LineElement::new(Vec3::new(1.0, 0.5, 0.5), Vec3::new(0.3, 0.8, 0.2).normalized());
        let mut f = Flow::<f64>::new(&tube, &FlowState::new(x0, 0)).unwrap();
        let (e1, e2) = frame(x0.v);
        let mut j = Jacobi::new(e1, e2 * 0.5);
        for _ in 0..50 {
            let st = f.step().unwrap();
            let shape = f.cell().local[st.surface].shape_operator_unchecked(st.hit.point.to_f64());
            j = j.step(&st, &shape);
            let v = f.line().v;
            let scale = j.norm();
            assert!(j.dq.dot(v).abs() < 1e-9 * scale && j.dv.dot(v).abs() < 1e-9 * scale);
            j = j.scaled(1.0 / scale);
        }
    }

    #[test]
    fn flat_wall_only_reflects() {
        let j = Jacobi::new(Vec3::new(0.0, 1.0, 0.0), Vec3::new(0.0, 0.0, 2.0));
        let v = Vec3::new(1.0, 0.0, 0.0);
        let out = j.collision(v, Vec3::new(-1.0, 0.0, 0.0), &ShapeOperator::FLAT);
        assert_eq!(out, j);
    }

    #[test]
    fn frame_singular_values() {
        let x = LineElement::new(Vec3::ZERO, Vec3::new(0.0, 0.0, 1.0));
        let (e1, e2) = frame(x.v);
        let f = TransverseFrame::from_fields(x, &[Jacobi::new(e1 * 3.0, Vec3::ZERO), Jacobi::new(e2 * 0.5, Vec3::ZERO)]);
        let s = f.singular_values();
        assert!((s[0] - 3.0).abs() < 1e-14 && (s[1] - 0.5).abs() < 1e-14);
    }
}
