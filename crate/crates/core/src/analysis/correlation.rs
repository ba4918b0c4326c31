//! Autocorrelation of observables along orbits of the first-return map to a
//! set of boundary pieces.

use crate::error::{Error, Result};
use crate::rng::stream;
use crate::sections::{first_return_d, sample_measure, DReturn, DSet, Section, SectionPoint, DEFAULT_BUDGET};
use crate::tube::QuenchedTube;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorrelationConfig {
    pub returns: usize,
    /// Subtract the mean before correlating.
    pub centered: bool,
    pub batches: usize,
    pub seed: u64,
    pub budget: u64,
}

impl Default for CorrelationConfig {
    fn default() -> Self {
        Self { returns: 100_000, centered: true, batches: 20, seed: 0, budget: DEFAULT_BUDGET }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub lag: usize,
    pub value: f64,
    /// Batch-means standard error.
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub returns: usize,
    /// Fresh starts after a singular orbit or a missed return.
    pub restarts: u64,
    pub centered: bool,
    pub mean: f64,
    pub variance: f64,
    pub values: Vec<Correlation>,
}

/// Observable values along `T_D` orbits; a new segment starts after every
/// restart, and lags never straddle segments.
fn series(tube: &QuenchedTube, d: &DSet, observable: &dyn Fn(&SectionPoint) -> f64, cfg: &CorrelationConfig) -> Result<(Vec<Vec<f64>>, u64)> {
    let mut rng = stream(cfg.seed, 0);
    let section = Section::D(d.clone());
    let mut segments: Vec<Vec<f64>> = Vec::new();
    let mut restarts = 0;
    let mut total = 0;
    'segment: while total < cfg.returns {
        let mut p = sample_measure(tube, &section, 1, &mut rng)?[0];
        let mut seg = vec![observable(&p)];
        total += 1;
        while total < cfg.returns {
            match first_return_d(tube, d, &p, cfg.budget) {
                Ok(DReturn::Returned(r)) => {
                    p = r.point;
                    seg.push(observable(&p));
                    total += 1;
                }
                Ok(DReturn::NotReturned { .. }) | Err(Error::SingularOrbit(_)) => {
                    restarts += 1;
                    segments.push(seg);
                    continue 'segment;
                }
                Err(e) => return Err(e),
            }
        }
        segments.push(seg);
    }
    Ok((segments, restarts))
}

/// `Σ (f_k − m)(f_{k+lag} − m)` and the number of pairs, over the part of the
/// concatenated series with indices in `range`.
fn lagged(segments: &[Vec<f64>], lag: usize, m: f64, range: std::ops::Range<usize>) -> (f64, usize) {
    let (mut sum, mut count, mut offset) = (0.0, 0, 0);
    for seg in segments {
        let lo = range.start.saturating_sub(offset).min(seg.len());
        let hi = range.end.saturating_sub(offset).min(seg.len());
        for k in lo..hi {
            if k + lag < seg.len() {
                sum += (seg[k] - m) * (seg[k + lag] - m);
                count += 1;
            }
        }
        offset += seg.len();
    }
    (sum, count)
}

/// Empirical autocorrelation of `observable` along `T_D` orbits at the given
/// lags, normalized by the lag-0 value.
pub fn autocorrelation(
    tube: &QuenchedTube,
    d: &DSet,
    observable: impl Fn(&SectionPoint) -> f64,
    lags: &[usize],
    cfg: &CorrelationConfig,
) -> Result<CorrelationReport> {
    if cfg.returns < 2 || cfg.batches == 0 {
        return Err(Error::InvalidArgument("need at least two returns and one batch".into()));
    }
    let (segments, restarts) = series(tube, d, &observable, cfg)?;
    let n: usize = segments.iter().map(Vec::len).sum();
    let mean = segments.iter().flatten().sum::<f64>() / n as f64;
    let variance = segments.iter().flatten().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    let m = if cfg.centered { mean } else { 0.0 };
    let corr = |lag: usize, range: std::ops::Range<usize>| {
        let (s0, c0) = lagged(&segments, 0, m, range.clone());
        let (s, c) = lagged(&segments, lag, m, range);
        if c == 0 || s0 <= 0.0 {
            0.0
        } else {
            (s / c as f64) / (s0 / c0 as f64)
        }
    };
    let b = cfg.batches;
    let values = lags
        .iter()
        .map(|&lag| {
            let value = corr(lag, 0..n);
            let per: Vec<f64> = (0..b).map(|k| corr(lag, k * n / b..(k + 1) * n / b)).collect();
            let avg = per.iter().sum::<f64>() / b as f64;
            let var = per.iter().map(|x| (x - avg).powi(2)).sum::<f64>() / (b.max(2) - 1) as f64;
            Correlation { lag, value, stderr: (var / b as f64).sqrt() }
        })
        .collect();
    Ok(CorrelationReport { returns: n, restarts, centered: cfg.centered, mean, variance, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tube::TubeConfig;

    fn setup() -> (QuenchedTube, DSet) {
        (QuenchedTube::new(TubeConfig::default()).unwrap(), DSet::every_cell(vec![0, 1, 2, 3]))
    }

    #[test]
    fn constant_observable() {
        let (tube, d) = setup();
        let cfg = CorrelationConfig { returns: 2000, centered: false, ..CorrelationConfig::default() };
        let r = autocorrelation(&tube, &d, |_| 2.5, &[0, 1, 7], &cfg).unwrap();
        assert!(r.values.iter().all(|c| (c.value - 1.0).abs() < 1e-12));
        let r = autocorrelation(&tube, &d, |_| 2.5, &[0, 1, 7], &CorrelationConfig { centered: true, ..cfg }).unwrap();
        assert!(r.values.iter().all(|c| c.value == 0.0));
    }

    #[test]
    fn lag_zero_is_one() {
        let (tube, d) = setup();
        let cfg = CorrelationConfig { returns: 2000, ..CorrelationConfig::default() };
        let r = autocorrelation(&tube, &d, |p| p.local.v.x, &[0], &cfg).unwrap();
        assert!((r.values[0].value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn segments_do_not_mix() {
        let segs = vec![vec![1.0, 2.0], vec![3.0, 4.0, 5.0]];
        assert_eq!(lagged(&segs, 1, 0.0, 0..5), (2.0 + 12.0 + 20.0, 3));
        assert_eq!(lagged(&segs, 1, 0.0, 1..3), (12.0, 1));
    }
}
