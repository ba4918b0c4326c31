mod common;

use common::default_tube;
use lorentz_tube::analysis::{energy_test, invariance_samples, reference_sample, InvarianceConfig, InvarianceMap};
use lorentz_tube::rng::stream;

fn check(map: InvarianceMap) {
    let tube = default_tube();
    let cfg = InvarianceConfig { seed: 11, ..InvarianceConfig::default() };
    let (xs, ys, _) = invariance_samples(&tube, map, 10_000, &cfg).unwrap();
    let t = energy_test(&xs, &ys, &cfg).unwrap();
    assert!(t.pass, "{map:?}: {t:?}");
    let biased: Vec<_> = (0..xs.len())
        .map(|i| reference_sample(&tube, map, &mut stream(12, i as u64), true).unwrap())
        .collect();
    let t = energy_test(&biased, &ys, &cfg).unwrap();
    assert!(!t.pass, "{map:?} biased: {t:?}");
}

#[test]
fn gate_map_preserves_the_gate_measure() {
    check(InvarianceMap::PoincareN);
}

#[test]
fn particle_view_step_preserves_its_measure() {
    check(InvarianceMap::FStep);
}
