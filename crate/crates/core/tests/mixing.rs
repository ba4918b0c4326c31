use lorentz_tube::analysis::{autocorrelation, CorrelationConfig};
use lorentz_tube::sections::DSet;
use lorentz_tube::tube::{QuenchedTube, TubeConfig};

#[test]
fn head_on_cosine_decorrelates() {
    let tube = QuenchedTube::new(TubeConfig::default()).unwrap();
    let d = DSet::new(vec![(0, 0), (0, 1), (0, 2), (0, 3)]);
    let cfg = CorrelationConfig { returns: 1_000_000, ..CorrelationConfig::default() };
    let r = autocorrelation(&tube, &d, |p| p.cos_normal(&tube).unwrap(), &[1, 50], &cfg).unwrap();
    assert!(r.values[1].stderr < 0.05);
    assert!(r.values[1].value.abs() < 0.05, "{r:?}");
}
