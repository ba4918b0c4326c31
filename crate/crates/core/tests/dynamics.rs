mod common;

use common::{default_tube, max_speed_drift, mid_flight_start, reversal_error};
use lorentz_tube::flow::{trace, StopRule};
use lorentz_tube::pvp::{f_step, r_omega, recurrence_ensemble, sample_mu0, EnsembleConfig, PvpState};
use lorentz_tube::rng::stream;
use lorentz_tube::sections::{first_return_d, poincare_n, sample_measure, DReturn, DSet, Section, SectionPoint, SectionTag};
use lorentz_tube::tube::TubeConfig;
use lorentz_tube::Error;
use rayon::prelude::*;

#[test]
fn speed_is_conserved_over_a_million_events() {
    let tube = default_tube();
    let worst = max_speed_drift(&tube, 1_000_000, &mut stream(1, 0)).unwrap();
    assert!(worst <= 1e-12, "speed drift {worst:e}");
}

#[test]
fn orbits_are_reversible() {
    let tube = default_tube();
    let mut rng = stream(2, 0);
    let mut done = 0;
    let mut worst = 0.0f64;
    while done < 100 {
        let x = mid_flight_start(&tube, &mut rng).unwrap();
        match reversal_error(&tube, x, 50) {
            Ok(e) => {
                worst = worst.max(e);
                done += 1;
            }
            Err(Error::SingularOrbit(_)) => {}
            Err(e) => panic!("{e}"),
        }
    }
    assert!(worst <= 1e-7, "reversal error {worst:e}");
}

#[test]
fn collisions_in_a_window_of_length_l_stay_below_k3() {
    let tube = default_tube();
    let c = *tube.constants();
    let max = (0..10_000u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(3, i);
            let p = sample_measure(&tube, &Section::N { n: 0, gate: None }, 1, &mut rng).unwrap()[0];
            trace(&tube, p.x, StopRule::time(c.l)).map_or(0, |t| t.events.iter().filter(|e| e.kind.is_reflection()).count())
        })
        .max()
        .unwrap();
    assert!(max as u64 <= c.k3, "{max} collisions");
}

#[test]
fn orbits_come_back_to_a_cigar() {
    let tube = default_tube();
    let d = DSet::new(vec![(0, 0)]);
    let outcomes: Vec<Option<bool>> = (0..1000u64)
        .into_par_iter()
        .map(|i| {
            let p = sample_measure(&tube, &Section::D(d.clone()), 1, &mut stream(4, i)).unwrap()[0];
            match first_return_d(&tube, &d, &p, 1_000_000) {
                Ok(DReturn::Returned(_)) => Some(true),
                Ok(DReturn::NotReturned { .. }) => Some(false),
                Err(Error::SingularOrbit(_)) => None,
                Err(e) => panic!("{e}"),
            }
        })
        .collect();
    let valid: Vec<bool> = outcomes.into_iter().flatten().collect();
    let fraction = valid.iter().filter(|r| **r).count() as f64 / valid.len() as f64;
    assert!(valid.len() >= 990);
    assert!(fraction >= 0.99, "return fraction {fraction}");
}

#[test]
fn exit_sign_has_zero_mean() {
    let tube = default_tube();
    let n = 100_000u64;
    let exits: Vec<i8> = (0..n)
        .into_par_iter()
        .filter_map(|i| {
            let s = sample_mu0(&tube, &mut stream(5, i)).unwrap();
            r_omega(&tube, 0, s.x, s.gate).ok().map(|e| e.exit)
        })
        .collect();
    assert!(exits.len() as u64 >= n - 100);
    let mean = exits.iter().map(|&e| e as f64).sum::<f64>() / exits.len() as f64;
    assert!(mean.abs() <= 3.0 / (exits.len() as f64).sqrt(), "mean exit {mean}");
}

#[test]
fn particle_view_matches_the_physical_orbit() {
    let tube = default_tube();
    let h = tube.h();
    let mut checked = 0;
    for i in 0..20u64 {
        let s0 = sample_mu0(&tube, &mut stream(6, i)).unwrap();
        let mut p = SectionPoint::from_local(&tube, SectionTag::N { n: 0, gate: s0.gate }, s0.x);
        let mut s: PvpState = s0;
        for _ in 0..20 {
            let (Ok(r), Ok((next, _))) = (poincare_n(&tube, &p), f_step(&tube, &s)) else { break };
            p = r.point;
            s = next;
            let SectionTag::N { n, gate } = p.section else { unreachable!() };
            assert_eq!(n, s.env_offset);
            assert_eq!(gate, s.gate);
            let mut back = p.x;
            back.q.x -= n as f64 * h;
            assert!((back.q - s.x.q).norm() <= 1e-9 && (back.v - s.x.v).norm() <= 1e-9);
            checked += 1;
        }
    }
    assert!(checked >= 300);
}

#[test]
fn return_fraction_grows_with_the_budget() {
    let fractions: Vec<(f64, Vec<Option<u64>>)> = [0, 10, 100, 1000]
        .iter()
        .map(|&n_max| {
            let mut cfg = EnsembleConfig::new(TubeConfig::default(), vec![0, 1], 15, n_max);
            cfg.drift_horizon = 0;
            let r = recurrence_ensemble(&cfg).unwrap();
            (r.return_fraction, r.records.iter().map(|o| o.first_zero).collect())
        })
        .collect();
    assert_eq!(fractions[0].0, 0.0);
    for w in fractions.windows(2) {
        assert!(w[1].0 >= w[0].0);
        // an orbit that came back keeps its return time under a larger budget
        for (a, b) in w[0].1.iter().zip(&w[1].1) {
            if a.is_some() {
                assert_eq!(a, b);
            }
        }
    }
}
