#![allow(dead_code)]

use lorentz_tube::flow::Flow;
use lorentz_tube::real::{Dd, Real};
use lorentz_tube::sections::{sample_measure, Section};
use lorentz_tube::tube::{QuenchedTube, TubeConfig};
use lorentz_tube::vec3::Line;
use lorentz_tube::{LineElement, Result};
use rand::Rng;

pub fn default_tube() -> QuenchedTube {
    QuenchedTube::new(TubeConfig::default()).unwrap()
}

/// A μ_N point of cell 0 moved halfway along its first flight, in the cell frame.
pub fn mid_flight_start(tube: &QuenchedTube, rng: &mut impl Rng) -> Result<LineElement> {
    let p = sample_measure(tube, &Section::N { n: 0, gate: None }, 1, rng)?[0];
    let f = Flow::<f64>::local(tube, 0, p.local, None)?;
    let t = f.peek()?.hit.t;
    Ok(LineElement::new(p.local.q + p.local.v * (0.5 * t), p.local.v))
}

/// Runs `x` (cell-0 frame) forward until `collisions` reflections, reverses,
/// runs back over the same events in double-double arithmetic and returns
/// the largest of the position and velocity errors against the reversed
/// start.
pub fn reversal_error(tube: &QuenchedTube, x: LineElement, collisions: u64) -> Result<f64> {
    let mut f = Flow::<Dd>::local(tube, 0, Line::from_f64(&x), None)?;
    let mut steps = 0;
    let mut first = None;
    while f.collisions() < collisions {
        let st = f.step()?;
        if let Some(k) = st.kind.singular_kind() {
            return Err(lorentz_tube::Error::SingularOrbit(k));
        }
        first.get_or_insert(st.flight);
        steps += 1;
    }
    f.reverse();
    for _ in 0..steps {
        f.step()?;
    }
    f.advance_free(first.unwrap_or(Dd::zero()));
    let end = f.line().to_f64();
    if f.cell_index() != 0 {
        return Ok(f64::INFINITY);
    }
    Ok((end.q - x.q).norm().max((end.v + x.v).norm()))
}

/// Largest `||v| − 1|` over `events` kernel events, restarting from fresh
/// gate samples after singular terminations.
pub fn max_speed_drift(tube: &QuenchedTube, events: u64, rng: &mut impl Rng) -> Result<f64> {
    let mut done = 0u64;
    let mut worst = 0.0f64;
    while done < events {
        let x = mid_flight_start(tube, rng)?;
        let mut f = Flow::<f64>::local(tube, 0, x, None)?;
        while done < events {
            let Ok(st) = f.step() else { break };
            done += 1;
            worst = worst.max((f.line().v.norm() - 1.0).abs());
            if st.kind.is_singular() {
                break;
            }
        }
    }
    Ok(worst)
}
