use crate::config::{MethodChoice, RunConfig};
use crate::Which;
use lorentz_tube::analysis::lyapunov::sample_starts;
use lorentz_tube::analysis::{
    check_a3, check_a4, check_a6, energy_test, invariance_samples, lyapunov_spectrum, oracle_start, projection_check,
    reference_sample, A3Report, A4Report, A6Report, InvarianceMap, LyapunovConfig, LyapunovMethod, LyapunovReport,
};
use lorentz_tube::flow::{trace, StopRule, Termination};
use lorentz_tube::pvp::{recurrence_ensemble, EnsembleConfig};
use lorentz_tube::rng::stream;
use lorentz_tube::sections::{sample_measure, Section};
use lorentz_tube::tube::{DerivedConstants, QuenchedTube, TemplateParams, TubeConfig};
use lorentz_tube::Error;
use rayon::prelude::*;
use serde::Serialize;
use std::fmt;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

#[derive(Debug)]
pub enum Failure {
    Parse(String),
    Geometry(String),
    Check(String),
    Other(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Parse(_) => 2,
            Failure::Geometry(_) => 3,
            Failure::Check(_) => 4,
            Failure::Other(_) => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Parse(m) | Failure::Geometry(m) | Failure::Other(m) => f.write_str(m),
            Failure::Check(m) => write!(f, "check failed: {m}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidGeometry(_) => Failure::Geometry(e.to_string()),
            Error::Config(_) | Error::InvalidArgument(_) | Error::InvalidSection(_) => Failure::Parse(e.to_string()),
            _ => Failure::Other(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Other(e.to_string())
    }
}

fn out_file(cfg: &RunConfig, name: &str) -> Result<PathBuf, Failure> {
    std::fs::create_dir_all(&cfg.out)?;
    Ok(cfg.out.join(name))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(w, value).map_err(|e| Failure::Other(e.to_string()))
}

/// Validates the tube and records the effective configuration.
fn prepare(cfg: &RunConfig) -> Result<QuenchedTube, Failure> {
    let tube = QuenchedTube::new(cfg.tube.clone())?;
    std::fs::write(out_file(cfg, "run_config.json")?, cfg.to_json())?;
    Ok(tube)
}

#[derive(Serialize)]
struct SimulatedOrbit {
    orbit: usize,
    q0: [f64; 3],
    v0: [f64; 3],
    events: usize,
    reflections: u64,
    time: f64,
    end_cell: i64,
    termination: Termination,
    file: String,
}

#[derive(Serialize)]
struct SimulateSummary<'a> {
    seed: u64,
    tube: &'a TubeConfig,
    constants: DerivedConstants,
    orbits: Vec<SimulatedOrbit>,
}

pub fn simulate(cfg: &RunConfig) -> Result<(), Failure> {
    let tube = prepare(cfg)?;
    let p = &cfg.simulate;
    if p.collisions.is_none() && p.max_time.is_none() {
        return Err(Failure::Parse("simulate needs a collision or time limit".into()));
    }
    let stop = StopRule { max_collisions: p.collisions, max_time: p.max_time };
    let mut orbits = Vec::with_capacity(p.orbits);
    for i in 0..p.orbits {
        let x = sample_measure(&tube, &Section::N { n: 0, gate: None }, 1, &mut stream(cfg.seed, i as u64))?[0].x;
        let t = trace(&tube, x, stop)?;
        let file = format!("trajectory_{i}.csv");
        t.write_csv(BufWriter::new(File::create(out_file(cfg, &file)?)?))?;
        orbits.push(SimulatedOrbit {
            orbit: i,
            q0: x.q.to_array(),
            v0: x.v.to_array(),
            events: t.events.len(),
            reflections: t.end.collisions,
            time: t.end.time,
            end_cell: t.end.cell,
            termination: t.termination,
            file,
        });
    }
    let summary = SimulateSummary { seed: cfg.seed, tube: &cfg.tube, constants: *tube.constants(), orbits };
    write_json(&out_file(cfg, "summary.json")?, &summary)
}

pub fn constants(cfg: &RunConfig) -> Result<(), Failure> {
    let tube = prepare(cfg)?;
    write_json(&out_file(cfg, "constants.json")?, tube.constants())?;
    println!("{}", serde_json::to_string_pretty(tube.constants()).expect("constants serialize"));
    Ok(())
}

pub fn recurrence(cfg: &RunConfig) -> Result<(), Failure> {
    prepare(cfg)?;
    let r = &cfg.recurrence;
    let mut e = EnsembleConfig::new(cfg.tube.clone(), r.tube_seeds.clone(), r.orbits_per_tube, r.n_max);
    e.master_seed = cfg.seed;
    e.drift_horizon = r.drift_horizon;
    let report = recurrence_ensemble(&e)?;
    write_json(&out_file(cfg, "recurrence.json")?, &report)?;
    report.write_orbits_csv(BufWriter::new(File::create(out_file(cfg, "recurrence_orbits.csv")?)?))?;
    println!(
        "return fraction {:.4} over {} orbits (n_max {}), drift {:.3e} within band: {}",
        report.return_fraction, report.orbits, report.n_max, report.drift.drift, report.drift.within_band
    );
    Ok(())
}

#[derive(Serialize)]
struct LyapunovOutput {
    tangent: Option<LyapunovReport>,
    shadow: Option<LyapunovReport>,
    /// `|λ₁(tangent) − λ₁(shadow)| / |λ₁(tangent)|`, when both ran.
    relative_difference: Option<f64>,
    agree: Option<bool>,
}

pub fn lyapunov(cfg: &RunConfig) -> Result<(), Failure> {
    let tube = prepare(cfg)?;
    let l = &cfg.lyapunov;
    let starts = sample_starts(&tube, l.orbits, cfg.seed)?;
    let run = |method: LyapunovMethod| -> Result<LyapunovReport, Failure> {
        let r = lyapunov_spectrum(&tube, &starts, &LyapunovConfig { method, ..l.estimator.clone() })?;
        let name = format!("lyapunov_running_{}.csv", if method == LyapunovMethod::Tangent { "tangent" } else { "shadow" });
        r.write_running_csv(BufWriter::new(File::create(out_file(cfg, &name)?)?))?;
        println!("{method:?}: lambda1 = {:.5}, {:.0}% CI [{:.5}, {:.5}]", r.lambda1, 100.0 * r.confidence, r.ci1[0], r.ci1[1]);
        Ok(r)
    };
    let tangent = matches!(l.method, MethodChoice::Tangent | MethodChoice::Both).then(|| run(LyapunovMethod::Tangent)).transpose()?;
    let shadow = matches!(l.method, MethodChoice::Shadow | MethodChoice::Both).then(|| run(LyapunovMethod::Shadow)).transpose()?;
    let relative_difference = match (&tangent, &shadow) {
        (Some(t), Some(s)) => Some((t.lambda1 - s.lambda1).abs() / t.lambda1.abs()),
        _ => None,
    };
    let out = LyapunovOutput { tangent, shadow, relative_difference, agree: relative_difference.map(|d| d <= l.agreement) };
    write_json(&out_file(cfg, "lyapunov.json")?, &out)
}

#[derive(Serialize)]
struct CheckOutput<T> {
    check: &'static str,
    pass: bool,
    report: T,
}

#[derive(Serialize)]
struct A3Output {
    cells: Vec<A3Report>,
}

#[derive(Serialize)]
struct A6Output {
    report: A6Report,
    /// Largest over smallest ratio; absent when some ratio vanished.
    spread: Option<f64>,
    max_spread: f64,
}

#[derive(Serialize)]
struct MeasureOutput {
    map: InvarianceMap,
    samples: usize,
    redrawn: u64,
    statistic: f64,
    threshold: f64,
    p_value: f64,
    /// Same pushforward sample against the biased reference; must fail.
    control_p_value: Option<f64>,
    control_pass: Option<bool>,
}

#[derive(Serialize)]
struct OracleOutput {
    template: TemplateParams,
    orbits: usize,
    collisions_per_orbit: usize,
    skipped_singular: usize,
    max_point_deviation: f64,
    max_cos_deviation: f64,
    point_tolerance: f64,
    cos_tolerance: f64,
}

fn emit<T: Serialize>(cfg: &RunConfig, name: &'static str, pass: bool, report: T) -> Result<bool, Failure> {
    write_json(&out_file(cfg, &format!("check_{name}.json"))?, &CheckOutput { check: name, pass, report })?;
    println!("{name}: {}", if pass { "PASS" } else { "FAIL" });
    Ok(pass)
}

fn check_one(cfg: &RunConfig, tube: &QuenchedTube, which: Which) -> Result<bool, Failure> {
    let k = &cfg.check;
    match which {
        Which::A3 => {
            let cells = (0..k.a3.cells.max(1))
                .map(|n| Ok(check_a3(&*tube.cell(n)?, k.a3.samples, cfg.seed.wrapping_add(n as u64))))
                .collect::<Result<Vec<A3Report>, Error>>()?;
            let pass = cells.iter().all(A3Report::pass);
            emit(cfg, "A3", pass, A3Output { cells })
        }
        Which::A4 => {
            let r: A4Report = check_a4(tube, &k.a4)?;
            emit(cfg, "A4", r.pass(), r)
        }
        Which::A6 => {
            let r = check_a6(tube, k.a6.alpha, &k.a6.deltas, &k.a6.estimator)?;
            let spread = r.ratio_spread();
            emit(cfg, "A6", spread <= k.a6.max_spread, A6Output { report: r, spread: spread.is_finite().then_some(spread), max_spread: k.a6.max_spread })
        }
        Which::Measure => {
            let m = &k.measure;
            let (xs, ys, redrawn) = invariance_samples(tube, m.map, m.samples, &m.test)?;
            let t = energy_test(&xs, &ys, &m.test)?;
            let control = if m.control {
                let biased = (0..xs.len())
                    .into_par_iter()
                    .map(|i| reference_sample(tube, m.map, &mut stream(cfg.seed ^ 0xB1A5, i as u64), true))
                    .collect::<Result<Vec<_>, Error>>()?;
                Some(energy_test(&biased, &ys, &m.test)?)
            } else {
                None
            };
            let pass = t.pass && control.is_none_or(|c| !c.pass);
            let out = MeasureOutput {
                map: m.map,
                samples: m.samples,
                redrawn,
                statistic: t.statistic,
                threshold: t.threshold,
                p_value: t.p_value,
                control_p_value: control.map(|c| c.p_value),
                control_pass: control.map(|c| c.pass),
            };
            emit(cfg, "measure", pass, out)
        }
        Which::Oracle => {
            let o = &k.oracle;
            let template = TemplateParams { r_long: None, bulkhead: false, cigars: true, ..cfg.tube.template.clone() };
            let cyl = QuenchedTube::periodic(template.clone())?;
            let mut rng = stream(cfg.seed, u64::MAX);
            let (mut done, mut skipped, mut point, mut cos) = (0, 0, 0.0f64, 0.0f64);
            while done < o.orbits {
                match projection_check(&cyl, oracle_start(&cyl, &mut rng), o.collisions) {
                    Ok(r) => {
                        point = point.max(r.max_point_deviation);
                        cos = cos.max(r.max_cos_deviation);
                        done += 1;
                    }
                    Err(Error::SingularOrbit(_)) => skipped += 1,
                    Err(e) => return Err(e.into()),
                }
            }
            let pass = point <= o.point_tolerance && cos <= o.cos_tolerance;
            let out = OracleOutput {
                template,
                orbits: o.orbits,
                collisions_per_orbit: o.collisions,
                skipped_singular: skipped,
                max_point_deviation: point,
                max_cos_deviation: cos,
                point_tolerance: o.point_tolerance,
                cos_tolerance: o.cos_tolerance,
            };
            emit(cfg, "oracle", pass, out)
        }
    }
}

pub fn check(cfg: &RunConfig, which: &[Which]) -> Result<(), Failure> {
    let tube = prepare(cfg)?;
    let mut failed = Vec::new();
    let mut seen = Vec::new();
    for &w in which {
        if seen.contains(&w) {
            continue;
        }
        seen.push(w);
        if !check_one(cfg, &tube, w)? {
            failed.push(format!("{w:?}"));
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Check(failed.join(", ")))
    }
}
