//! Expansion of a dispersing beam between head-on returns, in the orthogonal
//! Jacobi metric (the `dq` part of the Jacobi field).

use super::tangent::Jacobi;
use crate::error::{Error, Result, SingularKind};
use crate::flow::{EventKind, Flow};
use crate::geometry::ShapeOperator;
use crate::rng::frame;
use crate::sections::{SectionPoint, SectionTag, DEFAULT_BUDGET, SECTION_TOL};
use crate::tube::QuenchedTube;
use crate::vec3::Vec3;

/// Signed number stored as `(sign, ln |x|)`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct LogNum {
    sign: f64,
    ln: f64,
}

impl LogNum {
    const ZERO: LogNum = LogNum { sign: 0.0, ln: f64::NEG_INFINITY };

    fn of(x: f64) -> Self {
        if x == 0.0 {
            Self::ZERO
        } else {
            Self { sign: x.signum(), ln: x.abs().ln() }
        }
    }

    fn mul(self, o: LogNum) -> Self {
        if self.sign == 0.0 || o.sign == 0.0 {
            return Self::ZERO;
        }
        Self { sign: self.sign * o.sign, ln: self.ln + o.ln }
    }

    fn add(self, o: LogNum) -> Self {
        if self.sign == 0.0 {
            return o;
        }
        if o.sign == 0.0 {
            return self;
        }
        let (big, small) = if self.ln >= o.ln { (self, o) } else { (o, self) };
        let r = small.sign * big.sign * (small.ln - big.ln).exp();
        let s = 1.0 + r;
        if s == 0.0 {
            return Self::ZERO;
        }
        Self { sign: big.sign * s.signum(), ln: big.ln + s.abs().ln() }
    }
}

/// Upper-triangular `[[a, b], [0, d]]` with entries in log form.
#[derive(Debug, Clone, Copy)]
struct Triangle {
    a: LogNum,
    b: LogNum,
    d: LogNum,
}

impl Triangle {
    const IDENTITY: Triangle = Triangle { a: LogNum { sign: 1.0, ln: 0.0 }, b: LogNum::ZERO, d: LogNum { sign: 1.0, ln: 0.0 } };

    /// `new · self`.
    fn left_mul(&self, new: &Triangle) -> Triangle {
        Triangle {
            a: new.a.mul(self.a),
            b: new.a.mul(self.b).add(new.b.mul(self.d)),
            d: new.d.mul(self.d),
        }
    }

    /// `ln σ_min`.
    fn ln_smallest_singular(&self) -> f64 {
        let (la, lb, ld) = (self.a.ln, self.b.ln, self.d.ln);
        let m = la.max(lb).max(ld);
        let sum = (2.0 * (la - m)).exp() + (2.0 * (lb - m)).exp() + (2.0 * (ld - m)).exp();
        let ln_s = 2.0 * m + sum.ln();
        let ln_det = la + ld;
        // σ_max² = S (1 + sqrt(1 − 4 det²/S²)) / 2
        let x = (2.0 * ln_det - 2.0 * ln_s + 4f64.ln()).exp().min(1.0);
        let ln_big_sq = ln_s + (0.5 * (1.0 + (1.0 - x).sqrt())).ln();
        ln_det - 0.5 * ln_big_sq
    }
}

/// `ln` of the smallest singular value of the beam map after each of
/// `k_returns` head-on returns, starting from a plane-front beam at the
/// M-point `p` (the first entry, for zero returns, is `0`).
pub fn expansion_profile(tube: &QuenchedTube, p: &SectionPoint, k_returns: u64) -> Result<Vec<f64>> {
    let SectionTag::M { n, j } = p.section else {
        return Err(Error::InvalidSection("not an M-point".into()));
    };
    let eps = tube.constants().eps;
    let mut f = Flow::<f64>::local(tube, n, p.local, Some(j))?;
    let (e1, e2) = frame(f.line().v);
    let mut js = [Jacobi::new(e1, Vec3::ZERO), Jacobi::new(e2, Vec3::ZERO)];
    let mut r = Triangle::IDENTITY;
    let mut out = Vec::with_capacity(k_returns as usize + 1);
    out.push(0.0);
    let mut returns = 0;
    let mut last = 0;
    while returns < k_returns {
        if f.collisions() - last >= DEFAULT_BUDGET {
            return Err(Error::NoReturn { budget: DEFAULT_BUDGET });
        }
        let st = f.step()?;
        if let Some(k) = st.kind.singular_kind() {
            return Err(Error::SingularOrbit(k));
        }
        let shape = if st.kind == EventKind::Dispersing {
            f.cell().local[st.surface].shape_operator_unchecked(st.hit.point)
        } else {
            ShapeOperator::FLAT
        };
        let v = f.line().v;
        js = js.map(|x| x.step(&st, &shape).transverse(v));
        if !st.kind.is_reflection() {
            continue;
        }
        // QR in the dq metric, carrying dv along
        let r11 = js[0].dq.norm();
        let a = js[0].scaled(1.0 / r11);
        let r12 = a.dq.dot(js[1].dq);
        let b = js[1].sub(&a, r12);
        let r22 = b.dq.norm();
        js = [a, b.scaled(1.0 / r22)];
        r = r.left_mul(&Triangle { a: LogNum::of(r11), b: LogNum::of(r12), d: LogNum::of(r22) });
        if st.kind == EventKind::Dispersing {
            let c = -st.hit.cos_incidence;
            if (c - eps).abs() < SECTION_TOL {
                return Err(Error::SingularOrbit(SingularKind::SectionBoundary));
            }
            if c >= eps {
                returns += 1;
                last = f.collisions();
                out.push(r.ln_smallest_singular());
            }
        }
    }
    Ok(out)
}

/// Growth of the smallest singular value of the transverse beam map over
/// `k_returns` returns to M (`+∞` once it leaves the f64 range).
pub fn expansion_factor(tube: &QuenchedTube, p: &SectionPoint, k_returns: u64) -> Result<f64> {
    Ok(expansion_profile(tube, p, k_returns)?.last().copied().unwrap_or(0.0).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sections::{sample_measure, Section};
    use crate::tube::TubeConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn points(count: usize) -> (QuenchedTube, Vec<SectionPoint>) {
        let tube = QuenchedTube::new(TubeConfig { seed: 9, ..TubeConfig::default() }).unwrap();
        let eps = tube.constants().eps;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = sample_measure(&tube, &Section::M { n: 0, j: 0, eps }, count, &mut rng).unwrap();
        (tube, pts)
    }

    #[test]
    fn no_returns_is_identity() {
        let (tube, pts) = points(1);
        assert_eq!(expansion_factor(&tube, &pts[0], 0).unwrap(), 1.0);
    }

    #[test]
    fn log_numbers() {
        let x = LogNum::of(3.0).add(LogNum::of(-5.0)).mul(LogNum::of(0.5));
        assert_eq!(x.sign, -1.0);
        assert!(x.ln.abs() < 1e-15);
        assert_eq!(LogNum::of(2.0).add(LogNum::of(-2.0)), LogNum::ZERO);
    }

    #[test]
    fn smallest_singular_value_of_a_triangle() {
        let t = Triangle { a: LogNum::of(2.0), b: LogNum::of(1.0), d: LogNum::of(0.5) };
        // reference: eigenvalues of MᵀM
        let (a, b, d): (f64, f64, f64) = (2.0, 1.0, 0.5);
        let s = a * a + b * b + d * d;
        let det = a * d;
        let small = ((s - (s * s - 4.0 * det * det).sqrt()) / 2.0).sqrt();
        assert!((t.ln_smallest_singular() - small.ln()).abs() < 1e-14);
    }

    #[test]
    fn beams_never_contract() {
        let (tube, pts) = points(20);
        let mut done = 0;
        for p in &pts {
            let Ok(profile) = expansion_profile(&tube, p, 200) else { continue };
            for w in profile.windows(2) {
                assert!(w[1] >= w[0] - 1e-9, "contraction {} -> {}", w[0], w[1]);
            }
            assert!(profile[200] > 0.0);
            done += 1;
        }
        assert!(done >= 15);
    }
}
