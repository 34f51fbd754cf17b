//! `sns`: batch front end for simulations, ensembles, stability studies,
//! the acceptance suite and snapshot norms.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sns_core::config::{parse_config, RunConfig};
use sns_core::experiments::{
    run_ensemble, stability_run, uniform_bound_report, write_json, EnsembleStats,
};
use sns_core::fields::{norm, NormSpec};
use sns_core::integrator::{simulate, SaveSchedule, WienerPath};
use sns_core::snapshot::{read_snapshot, write_snapshot, Snapshot};
use sns_core::verify::{run_check, stability_levels, Scale, CRITERIA};
use sns_core::Error;

type Outcome<T = ()> = std::result::Result<T, Failure>;

#[derive(Parser)]
#[command(name = "sns", version, about = "Stochastic degenerate-viscosity Navier-Stokes runs and checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the noise seed (ensembles use it as the base seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "sns-out")]
    out: PathBuf,
    /// Overrides the grid size (and the ensemble resolutions).
    #[arg(long)]
    resolution: Option<usize>,
    /// Overrides the number of ensemble paths.
    #[arg(long)]
    paths: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one path, writing snapshots and JSON-lines diagnostics.
    Simulate(Common),
    /// Monte-Carlo moments over the configured resolutions.
    Ensemble(Common),
    /// Mollified levels under one shared Wiener path.
    Stability(Common),
    /// Run the acceptance checks and print PASS/FAIL per check.
    Verify {
        #[command(flatten)]
        common: Common,
        /// `smoke` or `desk`; defaults to the configured scale.
        #[arg(long)]
        scale: Option<String>,
        /// Restrict to these check ids.
        #[arg(long, value_delimiter = ',')]
        only: Vec<u8>,
    },
    /// Norms of the density and momentum stored in a snapshot.
    Norms {
        snapshot: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Norm names such as `l2`, `linf`, `l1.5`, `w-3,2`; overrides the config.
        #[arg(long = "norm")]
        norms: Vec<String>,
    },
}

enum Failure {
    Check(String),
    Config(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Config(e.to_string()),
            other => Failure::Run(other),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Run(e.into())
    }
}

fn load_config(path: Option<&Path>) -> Outcome<RunConfig> {
    let text = match path {
        Some(p) => fs::read_to_string(p)
            .map_err(|e| Failure::Config(format!("cannot read config {}: {e}", p.display())))?,
        None => String::new(),
    };
    Ok(parse_config(&text)?)
}

fn configure(c: &Common) -> Outcome<RunConfig> {
    let mut cfg = load_config(c.config.as_deref())?;
    if let Some(s) = c.seed {
        cfg.noise.seed = s;
    }
    if let Some(n) = c.resolution {
        cfg.grid.n = n;
        cfg.experiment.resolutions = vec![n];
    }
    if let Some(p) = c.paths {
        cfg.experiment.paths = p;
    }
    cfg.validate()?;
    fs::create_dir_all(&c.out)?;
    fs::write(c.out.join("effective_config.toml"), cfg.echo())?;
    Ok(cfg)
}

fn cmd_simulate(c: &Common) -> Outcome {
    let cfg = configure(c)?;
    let grid = cfg.grid()?;
    let params = cfg.params()?;
    let noise = cfg.noise().build(grid)?;
    let (rho, m) = cfg.initial_data(grid)?;
    let path = WienerPath::generate(cfg.noise.seed, params.t_final(), cfg.time.path_dt)?;
    let traj = simulate(&rho, &m, &params, &noise, &path, &SaveSchedule::EveryBase(cfg.time.save_every))?;

    let snaps = c.out.join("snapshots");
    fs::create_dir_all(&snaps)?;
    for (i, (t, s)) in traj.save_times.iter().zip(&traj.states).enumerate() {
        let snap = Snapshot { gamma: params.gamma(), t: *t, state: s.clone() };
        write_snapshot(&snap, &snaps.join(format!("snap_{i:05}.snsf")))?;
    }
    let mut w = BufWriter::new(fs::File::create(c.out.join("diagnostics.jsonl"))?);
    for r in &traj.records {
        serde_json::to_writer(&mut w, r).map_err(Error::from)?;
        writeln!(w)?;
    }
    w.flush()?;
    let last = traj.records.last().expect("initial record");
    println!(
        "simulated to t = {} in {} steps; {} snapshots; energy {:.6e} -> {:.6e}; clipped mass {:.3e}",
        traj.final_time(),
        traj.logs.len(),
        traj.states.len(),
        traj.records[0].energy,
        last.energy,
        last.clip_mass
    );
    Ok(())
}

fn cmd_ensemble(c: &Common) -> Outcome {
    let cfg = configure(c)?;
    let params = cfg.params()?;
    let mut ens = cfg.ensemble();
    ens.base_seed = cfg.noise.seed;
    let mut all: Vec<EnsembleStats> = Vec::new();
    for &n in &cfg.experiment.resolutions {
        let grid = cfg.grid()?.with_n(n)?;
        let (rho, m) = cfg.initial_data(grid)?;
        let stats = run_ensemble(&rho, &m, &params, &cfg.noise().build(grid)?, &ens)?;
        for p in &stats.paths {
            let dir = c.out.join(format!("n{n}")).join(format!("seed_{}", p.seed));
            fs::create_dir_all(&dir)?;
            write_json(p, &dir.join("summary.json"))?;
        }
        write_json(&stats, &c.out.join(format!("ensemble_n{n}.json")))?;
        stats.write_csv(&c.out.join(format!("ensemble_n{n}.csv")))?;
        println!("n = {n}: {} paths, {} failed", stats.paths.len(), stats.failed.len());
        for f in &stats.failed {
            println!("  seed {} failed: {}", f.seed, f.error);
        }
        all.push(stats);
    }
    let mut ok = all.iter().all(|s| s.failed.is_empty());
    if all.len() >= 3 {
        for &p in &cfg.experiment.moment_orders {
            let rep = uniform_bound_report(&all, p)?;
            write_json(&rep, &c.out.join(format!("bounds_p{p}.json")))?;
            println!("p = {p}: uniform bounds {}", if rep.verdict { "hold" } else { "FAIL" });
            for e in &rep.evidence {
                println!("  {e}");
            }
            ok &= rep.verdict;
        }
    }
    if ok {
        Ok(())
    } else {
        Err(Failure::Check("ensemble check failed".into()))
    }
}

fn cmd_stability(c: &Common) -> Outcome {
    let cfg = configure(c)?;
    let params = cfg.params()?;
    let e = &cfg.experiment;
    let reference = cfg.grid()?.with_n(e.reference)?;
    let (levels, reference) =
        stability_levels(|g| cfg.initial_data(g), reference, &e.levels, e.mollifier_width, params.eps_vac())?;
    let path = WienerPath::generate(cfg.noise.seed, params.t_final(), cfg.time.path_dt)?;
    let rep = stability_run(&levels, &reference, &params, &cfg.noise(), &path, cfg.time.save_every)?;
    write_json(&rep, &c.out.join("convergence.json"))?;
    rep.write_csv(&c.out.join("convergence.csv"))?;
    for (n, g) in rep.levels.iter().zip(&rep.gaps) {
        let cells: Vec<String> = g.iter().map(|v| format!("{v:.3e}")).collect();
        println!("n = {n:4}: {}", cells.join("  "));
    }
    for f in &rep.failures {
        println!("level n = {} failed: {}", f.n, f.error);
    }
    if rep.all_decreasing() {
        println!("all gaps strictly decreasing");
        Ok(())
    } else {
        Err(Failure::Check(format!("gaps not strictly decreasing: {:?}", rep.decreasing)))
    }
}

fn cmd_verify(c: &Common, scale: Option<&str>, only: &[u8]) -> Outcome {
    let cfg = load_config(c.config.as_deref())?;
    let scale: Scale = scale.unwrap_or(&cfg.experiment.scale).parse().map_err(|e: Error| Failure::Config(e.to_string()))?;
    let ids: Vec<u8> = if only.is_empty() { CRITERIA.iter().map(|c| c.0).collect() } else { only.to_vec() };
    let mut failed = 0;
    let mut outcomes = Vec::new();
    for id in ids {
        let o = run_check(id, scale).map_err(|e| Failure::Config(e.to_string()))?;
        println!("{}", o.line());
        failed += usize::from(!o.passed);
        outcomes.push(o);
    }
    fs::create_dir_all(&c.out)?;
    write_json(&outcomes, &c.out.join("verify.json"))?;
    if failed == 0 {
        Ok(())
    } else {
        Err(Failure::Check(format!("{failed} check(s) failed")))
    }
}

fn cmd_norms(snapshot: &Path, config: Option<&Path>, names: &[String]) -> Outcome {
    let cfg = load_config(config)?;
    let names = if names.is_empty() { cfg.experiment.norms.clone() } else { names.to_vec() };
    let specs = names
        .iter()
        .map(|n| NormSpec::parse(n).map_err(|e| Failure::Config(e.to_string())))
        .collect::<Outcome<Vec<_>>>()?;
    let snap = read_snapshot(snapshot)?;
    let g = snap.state.grid();
    println!("snapshot: dim {}, n {}, t {}, gamma {}", g.dim(), g.n(), snap.t, snap.gamma);
    let mut out = serde_json::Map::new();
    for (name, spec) in names.iter().zip(specs) {
        let (r, m) = (norm(&snap.state.rho, spec), norm(&snap.state.m, spec));
        println!("{:>8}: density {r:.12e}  momentum {m:.12e}", spec.label());
        out.insert(name.clone(), serde_json::json!({ "density": r, "momentum": m }));
    }
    println!("{}", serde_json::Value::Object(out));
    Ok(())
}

fn init_threads() {
    let threads = std::env::var("SNS_THREADS").ok().and_then(|v| v.parse::<usize>().ok()).unwrap_or(0);
    if threads > 0 {
        // Only fails if a pool already exists.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_threads();
    let result = match &cli.command {
        Command::Simulate(c) => cmd_simulate(c),
        Command::Ensemble(c) => cmd_ensemble(c),
        Command::Stability(c) => cmd_stability(c),
        Command::Verify { common, scale, only } => cmd_verify(common, scale.as_deref(), only),
        Command::Norms { snapshot, config, norms } => cmd_norms(snapshot, config.as_deref(), norms),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Config(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
