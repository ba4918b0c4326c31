use lorentz_tube::flow::{trace, EventKind, StopRule};
use lorentz_tube::geometry::reflect;
use lorentz_tube::pvp::{cocycle, sample_mu0};
use lorentz_tube::sections::{sample_measure, Section};
use lorentz_tube::tube::{derived_constants, QuenchedTube, TemplateParams, TubeConfig};
use lorentz_tube::Vec3;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

fn unit() -> impl Strategy<Value = Vec3> {
    (-1.0f64..1.0, 0.0f64..2.0 * PI).prop_map(|(z, phi)| {
        let r = (1.0 - z * z).sqrt();
        Vec3::new(r * phi.cos(), r * phi.sin(), z)
    })
}

fn tube(seed: u64) -> QuenchedTube {
    QuenchedTube::new(TubeConfig { seed, ..TubeConfig::default() }).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn reflection_is_an_involution(v in unit(), o in unit()) {
        let w = reflect(v, o);
        prop_assert!((w.norm() - 1.0).abs() <= 1e-14);
        prop_assert!((reflect(w, o) - v).norm() <= 1e-14);
    }

    #[test]
    fn constants_follow_their_formulas(rho in 0.501f64..0.67, h in 8.0f64..40.0) {
        let t = TemplateParams { rho, h, r_long: Some(100.0 * h), ..TemplateParams::appendix() };
        let c = derived_constants(&t);
        let gamma = (0.5 / rho).acos();
        let m = (PI / gamma).ceil();
        let l2 = 2.0 * h * m;
        let l3 = 3.0 * h / (0.9999f64).sqrt();
        let l = 2.0 * (l2 + l3);
        let l1 = 0.5f64.sqrt() - rho;
        prop_assert!((c.gamma - gamma).abs() <= 1e-12 * gamma);
        prop_assert_eq!(c.m, m as u64);
        prop_assert!((c.l1 - l1).abs() <= 1e-12 * l1);
        prop_assert_eq!(c.l2, l2);
        prop_assert!((c.l3 - l3).abs() <= 1e-12 * l3);
        prop_assert!((c.l - l).abs() <= 1e-12 * l);
        prop_assert_eq!(c.k3, ((l / l1).ceil() * m + (3.0 * l / h).ceil()) as u64);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn config_round_trips(seed in any::<u64>(), rho in 0.52f64..0.6, m in 0.0f64..0.005) {
        let c = TubeConfig {
            seed,
            perturbation_magnitude: m,
            template: TemplateParams { rho, ..TemplateParams::appendix() },
            ..TubeConfig::default()
        };
        prop_assert_eq!(TubeConfig::from_json(&c.to_json().unwrap()).unwrap(), c);
    }

    #[test]
    fn cells_are_translates_of_their_local_frame(seed in any::<u64>(), n in -1000i64..1000) {
        let t = tube(seed);
        let cell = t.realize_cell(n).unwrap();
        let shift = Vec3::new(n as f64 * t.h(), 0.0, 0.0);
        for (g, l) in cell.surfaces.iter().zip(&cell.local) {
            prop_assert_eq!(g, &l.translated(shift));
        }
    }

    #[test]
    fn realized_cells_are_valid(seed in any::<u64>(), n in any::<i64>()) {
        prop_assert!(tube(seed).realize_cell(n).is_ok());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn orbits_keep_unit_speed_and_move_one_cell_at_a_time(tube_seed in 0u64..1000, seed in any::<u64>()) {
        let t = tube(tube_seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = sample_measure(&t, &Section::N { n: 0, gate: None }, 1, &mut rng).unwrap()[0];
        let tr = trace(&t, p.x, StopRule::collisions(500)).unwrap();
        let (mut cell, mut time) = (tr.start.cell, tr.start.time);
        for e in &tr.events {
            prop_assert!((e.state_after.x.v.norm() - 1.0).abs() <= 1e-12);
            prop_assert!(e.state_after.time - time <= 2.0 * t.h());
            time = e.state_after.time;
            if e.kind == EventKind::GateCrossing {
                prop_assert_eq!((e.state_after.cell - cell).abs(), 1);
            } else {
                prop_assert_eq!(e.state_after.cell, cell);
            }
            cell = e.state_after.cell;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn environment_offset_is_the_cocycle(tube_seed in 0u64..1000, seed in any::<u64>()) {
        let t = tube(tube_seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0 = sample_mu0(&t, &mut rng).unwrap();
        let rec = cocycle(&t, &x0, 8);
        prop_assert!(rec.exits.iter().all(|e| *e == 1 || *e == -1));
        let mut s = x0;
        for (k, _) in rec.exits.iter().enumerate() {
            s = lorentz_tube::pvp::f_step(&t, &s).unwrap().0;
            prop_assert_eq!(s.env_offset, rec.sums[k + 1]);
        }
    }
}
