mod commands;
mod config;

use clap::{Args, Parser, Subcommand, ValueEnum};
use config::{MethodChoice, RunConfig};
use lorentz_tube::analysis::InvarianceMap;
use lorentz_tube::tube::TemplateParams;
use std::path::PathBuf;
use std::process::ExitCode;

/// Quenched random Lorentz tubes: simulation, recurrence statistics and
/// hyperbolicity checks.
#[derive(Debug, Parser)]
#[command(name = "lorentz-tube", version)]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true, env = "LORENTZ_TUBE_CONFIG")]
    config: Option<PathBuf>,
    /// Master seed for every per-orbit random stream.
    #[arg(long, global = true, env = "LORENTZ_TUBE_SEED")]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true, env = "LORENTZ_TUBE_WORKERS")]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, env = "LORENTZ_TUBE_OUT")]
    out: Option<PathBuf>,
    #[command(flatten)]
    tube: TubeArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Template {
    Appendix,
    Cylindrical,
    Empty,
}

#[derive(Debug, Args)]
struct TubeArgs {
    /// Start from a named template instead of the configured one.
    #[arg(long, global = true)]
    template: Option<Template>,
    #[arg(long, global = true)]
    h: Option<f64>,
    #[arg(long, global = true)]
    g: Option<f64>,
    #[arg(long, global = true)]
    rho: Option<f64>,
    /// Longitudinal curvature radius of the cigars.
    #[arg(long, global = true, conflicts_with = "straight")]
    r_long: Option<f64>,
    /// Straight cylinders instead of cigars.
    #[arg(long, global = true)]
    straight: bool,
    /// Seed of the quenched cell sequence.
    #[arg(long, global = true, env = "LORENTZ_TUBE_TUBE_SEED")]
    tube_seed: Option<u64>,
    #[arg(long, global = true)]
    perturbation: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Trace orbits started from the gate measure of cell 0.
    Simulate {
        #[arg(long)]
        orbits: Option<usize>,
        #[arg(long)]
        collisions: Option<u64>,
        #[arg(long)]
        max_time: Option<f64>,
    },
    /// Return statistics of the exit cocycle.
    Recurrence {
        /// Use quenched seeds 0..tubes.
        #[arg(long, conflicts_with = "tube_seeds")]
        tubes: Option<u64>,
        #[arg(long, value_delimiter = ',')]
        tube_seeds: Option<Vec<u64>>,
        #[arg(long)]
        orbits_per_tube: Option<usize>,
        #[arg(long)]
        n_max: Option<u64>,
        #[arg(long)]
        drift_horizon: Option<u64>,
    },
    /// Largest Lyapunov exponents with bootstrap confidence intervals.
    Lyapunov {
        #[arg(long)]
        orbits: Option<usize>,
        #[arg(long)]
        events: Option<u64>,
        #[arg(long, value_enum)]
        method: Option<MethodChoice>,
        #[arg(long)]
        record_every: Option<u64>,
    },
    /// Run checkers; exits with status 4 if any of them fails.
    Check {
        #[arg(value_enum, ignore_case = true, required = true)]
        which: Vec<Which>,
        /// Curvature samples per cell for A3.
        #[arg(long)]
        a3_samples: Option<usize>,
        /// Trajectories for A4.
        #[arg(long)]
        trajectories: Option<usize>,
        /// Windows per trajectory for A4.
        #[arg(long)]
        windows: Option<usize>,
        /// Samples of M_α for A6.
        #[arg(long)]
        a6_samples: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        deltas: Option<Vec<f64>>,
        /// Cell and piece of M_α, as `n,j`.
        #[arg(long, value_delimiter = ',', num_args = 2)]
        alpha: Option<Vec<i64>>,
        #[arg(long, value_enum)]
        map: Option<MapChoice>,
        /// Samples for the invariance test.
        #[arg(long)]
        measure_samples: Option<usize>,
        /// Orbits for the diamond oracle.
        #[arg(long)]
        oracle_orbits: Option<usize>,
    },
    /// Print the derived constants of the template.
    Constants,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Which {
    A3,
    A4,
    A6,
    Measure,
    Oracle,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MapChoice {
    Identity,
    PoincareN,
    FStep,
}

fn load(cli: &Cli) -> Result<RunConfig, commands::Failure> {
    let mut c = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| commands::Failure::Parse(format!("cannot read {}: {e}", path.display())))?;
            RunConfig::from_json(&text).map_err(|e| commands::Failure::Parse(format!("{}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    if let Some(w) = cli.workers {
        c.workers = Some(w);
    }
    if let Some(o) = &cli.out {
        c.out = o.clone();
    }
    let t = &cli.tube;
    if let Some(name) = t.template {
        c.tube.template = match name {
            Template::Appendix => TemplateParams::appendix(),
            Template::Cylindrical => TemplateParams::cylindrical(),
            Template::Empty => TemplateParams::empty(),
        };
    }
    let p = &mut c.tube.template;
    p.h = t.h.unwrap_or(p.h);
    p.g = t.g.unwrap_or(p.g);
    p.rho = t.rho.unwrap_or(p.rho);
    if t.straight {
        p.r_long = None;
    } else if let Some(r) = t.r_long {
        p.r_long = Some(r);
    }
    c.tube.seed = t.tube_seed.unwrap_or(c.tube.seed);
    c.tube.perturbation_magnitude = t.perturbation.unwrap_or(c.tube.perturbation_magnitude);

    match &cli.command {
        Command::Simulate { orbits, collisions, max_time } => {
            let s = &mut c.simulate;
            s.orbits = orbits.unwrap_or(s.orbits);
            if collisions.is_some() || max_time.is_some() {
                s.collisions = *collisions;
                s.max_time = *max_time;
            }
        }
        Command::Recurrence { tubes, tube_seeds, orbits_per_tube, n_max, drift_horizon } => {
            let r = &mut c.recurrence;
            if let Some(k) = tubes {
                r.tube_seeds = (0..*k).collect();
            }
            if let Some(s) = tube_seeds {
                r.tube_seeds = s.clone();
            }
            r.orbits_per_tube = orbits_per_tube.unwrap_or(r.orbits_per_tube);
            r.n_max = n_max.unwrap_or(r.n_max);
            r.drift_horizon = drift_horizon.unwrap_or(r.drift_horizon);
        }
        Command::Lyapunov { orbits, events, method, record_every } => {
            let l = &mut c.lyapunov;
            l.orbits = orbits.unwrap_or(l.orbits);
            l.method = method.unwrap_or(l.method);
            l.estimator.n_events = events.unwrap_or(l.estimator.n_events);
            l.estimator.record_every = record_every.unwrap_or(l.estimator.record_every);
        }
        Command::Check {
            a3_samples,
            trajectories,
            windows,
            a6_samples,
            deltas,
            alpha,
            map,
            measure_samples,
            oracle_orbits,
            ..
        } => {
            let k = &mut c.check;
            k.a3.samples = a3_samples.unwrap_or(k.a3.samples);
            k.a4.n_trajectories = trajectories.unwrap_or(k.a4.n_trajectories);
            k.a4.windows_per_traj = windows.unwrap_or(k.a4.windows_per_traj);
            k.a6.estimator.samples = a6_samples.unwrap_or(k.a6.estimator.samples);
            if let Some(d) = deltas {
                k.a6.deltas = d.clone();
            }
            if let Some(a) = alpha {
                if a[1] < 0 {
                    return Err(commands::Failure::Parse("alpha piece index must be >= 0".into()));
                }
                k.a6.alpha = (a[0], a[1] as usize);
            }
            if let Some(m) = map {
                k.measure.map = match m {
                    MapChoice::Identity => InvarianceMap::Identity,
                    MapChoice::PoincareN => InvarianceMap::PoincareN,
                    MapChoice::FStep => InvarianceMap::FStep,
                };
            }
            k.measure.samples = measure_samples.unwrap_or(k.measure.samples);
            k.oracle.orbits = oracle_orbits.unwrap_or(k.oracle.orbits);
        }
        Command::Constants => {}
    }
    // the master seed drives every estimator
    c.lyapunov.estimator.seed = c.seed;
    c.check.a4.seed = c.seed;
    c.check.a6.estimator.seed = c.seed;
    c.check.measure.test.seed = c.seed;
    Ok(c)
}

fn run(cli: &Cli) -> Result<(), commands::Failure> {
    let cfg = load(cli)?;
    if let Some(w) = cfg.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .map_err(|e| commands::Failure::Other(e.to_string()))?;
    }
    match &cli.command {
        Command::Simulate { .. } => commands::simulate(&cfg),
        Command::Recurrence { .. } => commands::recurrence(&cfg),
        Command::Lyapunov { .. } => commands::lyapunov(&cfg),
        Command::Check { which, .. } => commands::check(&cfg, which),
        Command::Constants => commands::constants(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
