//! Command-line entry point.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::analysis::{
    demand_shape_report, estimate_contraction, mean_daily_cost, storage_cycle_report, trace_imv,
    verify_mfe, AgentClass, ContractionOptions,
};
use crate::io::scenario::{load_scenario, Scenario};
use crate::io::tracefile::{find_runs, read_run, write_run, Manifest};
use crate::network::random::random_instance;
use crate::network::{estimate_lmp_lipschitz, kkt_residuals, solve_ed, DemandVector, KKT_TOLERANCE};
use crate::sim::{
    expected_consumer_mwh, expected_idle_prosumer_mwh, expected_renewables, network_with_renewables,
    run_mfe_iteration, run_simulation, Mode, SimError,
};

#[derive(Debug, Parser)]
#[command(name = "gridmf", version, about = "Storage aggregators in a nodal market")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate with learning storage agents.
    Run(RunArgs),
    /// Iterate the limit-mode fixed point and check it.
    Mfe(MfeArgs),
    /// Simulate with storage disabled.
    Baseline(RunArgs),
    /// Compute metrics from saved traces.
    Analyze(AnalyzeArgs),
    /// Dispatch fuzzing, Lipschitz ratios and the contraction estimate.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Scenario file or bundled name.
    #[arg(long)]
    scenario: String,
    /// Run a single seed.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Run the first N seeds of the scenario.
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    days: Option<usize>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Also write per-agent records.
    #[arg(long)]
    record_agents: bool,
    /// Also write mean-field records (limit mode).
    #[arg(long)]
    record_mean_fields: bool,
}

#[derive(Debug, Args)]
struct MfeArgs {
    #[arg(long)]
    scenario: String,
    /// Maximum number of days.
    #[arg(long, default_value_t = 200)]
    days: usize,
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    /// Tolerance for the equilibrium checks.
    #[arg(long, default_value_t = 1e-3)]
    verify_tol: f64,
    /// Write the report as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    FiniteAgent,
    LimitMeanField,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Metric {
    Imv,
    Cost,
    Shape,
    Storage,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// A run directory, or a directory of runs.
    #[arg(long)]
    trace: PathBuf,
    #[arg(long, value_enum)]
    metric: Metric,
    /// `lastNd` or `all`.
    #[arg(long, default_value = "last3d")]
    window: String,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(long, default_value = "toy_1bus")]
    scenario: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random dispatch instances to fuzz.
    #[arg(long, default_value_t = 200)]
    instances: usize,
    /// Demand pairs per hour for the LMP Lipschitz ratio.
    #[arg(long, default_value_t = 200)]
    pairs: usize,
}

/// Parses `argv` (including the program name) and runs the command.
/// Returns 0 on success, 2 on usage errors and 1 on runtime errors.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let res = match cli.command {
        Command::Run(a) => cmd_run(a, true),
        Command::Baseline(a) => cmd_run(a, false),
        Command::Mfe(a) => cmd_mfe(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Verify(a) => cmd_verify(a),
    };
    match res {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn pick_seeds(s: &Scenario, seed: Option<u64>, n: Option<usize>) -> Vec<u64> {
    if let Some(x) = seed {
        return vec![x];
    }
    let Some(n) = n else {
        return s.seeds.clone();
    };
    let mut out: Vec<u64> = s.seeds.iter().copied().take(n).collect();
    let mut next = s.seeds.iter().copied().max().map_or(0, |m| m + 1);
    while out.len() < n {
        out.push(next);
        next += 1;
    }
    out
}

fn cmd_run(a: RunArgs, storage: bool) -> Result<()> {
    let mut sc = load_scenario(&a.scenario)?;
    let cfg = &mut sc.config;
    if let Some(d) = a.days {
        cfg.n_days = d;
    }
    if let Some(m) = a.mode {
        cfg.mode = match m {
            ModeArg::FiniteAgent => Mode::FiniteAgent,
            ModeArg::LimitMeanField => Mode::LimitMeanField,
        };
    }
    if !storage {
        cfg.storage_enabled = false;
    }
    cfg.record_agents = a.record_agents;
    cfg.record_mean_fields = a.record_mean_fields;
    let hash = sc.config_hash();
    for (i, seed) in pick_seeds(&sc, a.seed, a.seeds).into_iter().enumerate() {
        let cfg = sc.with_seed(seed);
        let start = Instant::now();
        let trace = run_simulation(&cfg).with_context(|| format!("seed {seed}"))?;
        let manifest = Manifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            scenario: sc.name.clone(),
            config_hash: hash.clone(),
            seed,
            mode: cfg.mode,
            storage_enabled: cfg.storage_enabled,
            hours: cfg.hours,
            n_buses: cfg.buses.len(),
            n_days: cfg.n_days,
            wall_time_s: start.elapsed().as_secs_f64(),
            buses: trace.buses.clone(),
        };
        let dir = a.out.join(format!("run{i}"));
        write_run(&dir, &trace, &manifest)?;
        eprintln!("seed {seed}: {} ({:.1}s)", dir.display(), manifest.wall_time_s);
    }
    Ok(())
}

fn cmd_mfe(a: MfeArgs) -> Result<()> {
    let mut sc = load_scenario(&a.scenario)?;
    sc.config.mode = Mode::LimitMeanField;
    let cfg = &sc.config;
    let report = match run_mfe_iteration(cfg, a.tol, a.days, None) {
        Ok(r) => r,
        Err(SimError::MaxDaysExceeded { days, norms }) => {
            print_norms(&norms)?;
            bail!("no fixed point within {days} days (last norm {:e})", norms.last().unwrap_or(&f64::NAN));
        }
        Err(e) => return Err(e.into()),
    };
    print_norms(&report.norms)?;
    let v = verify_mfe(cfg, &report, a.verify_tol)?;
    eprintln!(
        "converged in {} days; optimality {:.2e} consistency {:.2e} price {:.2e}",
        report.days, v.optimality_residual, v.consistency_residual, v.price_residual
    );
    if let Some(path) = &a.out {
        let json = serde_json::json!({
            "scenario": sc.name,
            "config_hash": sc.config_hash(),
            "days": report.days,
            "norms": report.norms,
            "beliefs": report.beliefs,
            "verification": v,
        });
        std::fs::write(path, serde_json::to_string_pretty(&json)?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    if !v.all_ok() {
        bail!("equilibrium checks failed: {}", v.failures().join(", "));
    }
    Ok(())
}

fn print_norms(norms: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(std::io::stdout());
    w.write_record(["day", "norm"])?;
    for (d, n) in norms.iter().enumerate() {
        w.write_record([d.to_string(), n.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn parse_window(s: &str, n_days: usize) -> Result<usize> {
    if s == "all" {
        return Ok(n_days);
    }
    s.strip_prefix("last")
        .and_then(|r| r.strip_suffix('d'))
        .and_then(|n| n.parse().ok())
        .with_context(|| format!("bad window {s:?}, expected lastNd or all"))
}

fn cmd_analyze(a: AnalyzeArgs) -> Result<()> {
    let runs = find_runs(&a.trace)?;
    let mut w = csv::Writer::from_writer(std::io::stdout());
    let header: &[&str] = match a.metric {
        Metric::Imv => &["run", "seed", "imv"],
        Metric::Cost => &["run", "seed", "prosumer", "consumer", "total"],
        Metric::Shape => &[
            "run",
            "seed",
            "hour",
            "prosumer_mean",
            "prosumer_std",
            "consumer_mean",
            "consumer_std",
        ],
        Metric::Storage => &["run", "seed", "hour", "level", "flow", "belief"],
    };
    w.write_record(header)?;
    for dir in &runs {
        let (trace, m) = read_run(dir)?;
        let days = parse_window(&a.window, trace.n_days())?;
        let run = run_name(dir);
        let seed = m.seed.to_string();
        match a.metric {
            Metric::Imv => {
                let v = trace_imv(&trace, days)?;
                w.write_record([run, seed, v.to_string()])?;
            }
            Metric::Cost => {
                let p = mean_daily_cost(&trace, AgentClass::Prosumer, days)?;
                let c = mean_daily_cost(&trace, AgentClass::Consumer, days)?;
                w.write_record([run, seed, p.to_string(), c.to_string(), (p + c).to_string()])?;
            }
            Metric::Shape => {
                for h in demand_shape_report(&trace, days)? {
                    w.write_record([
                        run.clone(),
                        seed.clone(),
                        h.hour.to_string(),
                        h.prosumer_mean.to_string(),
                        h.prosumer_std.to_string(),
                        h.consumer_mean.to_string(),
                        h.consumer_std.to_string(),
                    ])?;
                }
            }
            Metric::Storage => {
                let s = storage_cycle_report(&trace, days)?;
                for h in 0..trace.hours {
                    w.write_record([
                        run.clone(),
                        seed.clone(),
                        h.to_string(),
                        s.level[h].to_string(),
                        s.flow[h].to_string(),
                        s.belief[h].to_string(),
                    ])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn run_name(dir: &Path) -> String {
    dir.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn cmd_verify(a: VerifyArgs) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut worst: f64 = 0.0;
    let mut solved = 0;
    for _ in 0..a.instances {
        let (net, d) = random_instance(&mut rng, 6, 8, 7);
        let sol = solve_ed(&net, &d)?;
        worst = worst.max(kkt_residuals(&net, &d, &sol).max());
        solved += 1;
    }
    println!("kkt_instances,{solved}");
    println!("kkt_max_residual,{worst:e}");

    let sc = load_scenario(&a.scenario)?;
    let cfg = &sc.config;
    let mut l_lambda: f64 = 0.0;
    for h in 0..cfg.hours {
        let net = network_with_renewables(&cfg.network, &expected_renewables(cfg, h));
        let base: Vec<f64> = cfg
            .buses
            .iter()
            .map(|b| expected_consumer_mwh(b, h) + expected_idle_prosumer_mwh(b, h))
            .collect();
        let mut r = ChaCha8Rng::seed_from_u64(a.seed.wrapping_add(h as u64));
        let mut perturb = || {
            use rand::Rng;
            DemandVector(base.iter().map(|x| x * (1.0 + r.gen_range(-0.2..0.2))).collect())
        };
        let rep = estimate_lmp_lipschitz(&net, || (perturb(), perturb()), a.pairs);
        l_lambda = l_lambda.max(rep.estimate);
    }
    println!("lmp_lipschitz,{l_lambda}");

    let est = estimate_contraction(
        cfg,
        &ContractionOptions {
            seed: a.seed,
            ..Default::default()
        },
    )?;
    println!("l1,{}", est.l1);
    println!("l2,{}", est.l2);
    println!("l3,{}", est.l3);
    println!("l_lambda,{}", est.l_lambda);
    println!("l_mf,{}", est.l_mf);
    println!("contraction_value,{}", est.contraction_value);
    if worst > KKT_TOLERANCE {
        bail!("KKT residual {worst:e} exceeds {KKT_TOLERANCE:e}");
    }
    Ok(())
}
