use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ratebound::config::Config;
use ratebound::par::{map_indices, Execution};
use ratebound::sim::{metrics, run_scenario, Case, Metrics, Trajectory};
use ratebound::verify::{self, CHECK_NAMES};
use ratebound::Error;

#[derive(Parser, Debug)]
#[command(
    name = "ratebound",
    version,
    about = "Rate-bounded adaptive control allocation: scenarios, checks and sweeps"
)]
struct Cli {
    /// TOML configuration; omitted sections use the ADMIRE defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Run batch work on one thread.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct SimOverrides {
    /// Integration step in seconds.
    #[arg(long)]
    dt: Option<f64>,

    /// Simulated horizon in seconds.
    #[arg(long)]
    duration: Option<f64>,

    /// Output directory.
    #[arg(long, env = "RATEBOUND_OUT", default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate one case and write trajectory.csv and metrics.txt.
    Run {
        #[arg(long, default_value = "III")]
        case: String,
        #[command(flatten)]
        sim: SimOverrides,
    },
    /// Run the sampled property checks.
    Verify {
        /// Restrict to these checks (comma separated or repeated).
        #[arg(long, value_delimiter = ',')]
        only: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a parameter grid and write one metrics row per point to sweep.csv.
    Sweep {
        /// Cases to sweep; defaults to the [sweep] section.
        #[arg(long, value_delimiter = ',')]
        case: Vec<String>,
        /// Uniform adaptation gains.
        #[arg(long, value_delimiter = ',')]
        gamma: Vec<f64>,
        /// Effectiveness loss fractions (0.3 = 30 % loss).
        #[arg(long, value_delimiter = ',')]
        fault_loss: Vec<f64>,
        #[command(flatten)]
        sim: SimOverrides,
    },
}

/// Exit statuses: 1 failed check or sweep row, 2 invalid input, 3 integration fault.
fn exit_code(err: &Error) -> u8 {
    match err {
        Error::IntegrationFault { .. } => 3,
        Error::Io(_) => 1,
        _ => 2,
    }
}

fn fail(err: Error) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(exit_code(&err))
}

fn load_config(path: Option<&Path>) -> Result<Config, Error> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

fn apply_overrides(cfg: &mut Config, sim: &SimOverrides) {
    if let Some(dt) = sim.dt {
        cfg.sim.dt = dt;
    }
    if let Some(d) = sim.duration {
        cfg.sim.duration = d;
    }
}

fn simulate(cfg: &Config, case: Case) -> Result<(Trajectory, Metrics), Error> {
    let scenario = cfg.scenario(case)?;
    let traj = run_scenario(&scenario)?;
    let m = metrics(&traj, &scenario)?;
    Ok((traj, m))
}

fn cmd_run(cfg: &Config, case: &str, out: &Path) -> Result<(), Error> {
    let case: Case = case.parse()?;
    let (traj, m) = simulate(cfg, case)?;
    fs::create_dir_all(out)?;
    let mut w = BufWriter::new(fs::File::create(out.join("trajectory.csv"))?);
    traj.write_csv(&mut w)?;
    w.flush()?;
    fs::write(out.join("metrics.txt"), m.to_report())?;
    print!("{}", m.to_report());
    Ok(())
}

fn cmd_verify(
    cfg: &Config,
    only: &[String],
    seed: Option<u64>,
    exec: Execution,
) -> Result<bool, Error> {
    if let Some(bad) = only.iter().find(|o| !CHECK_NAMES.contains(&o.as_str())) {
        return Err(Error::Config(format!(
            "unknown check '{bad}' (available: {})",
            CHECK_NAMES.join(", ")
        )));
    }
    let mut settings = cfg.verify.clone();
    if let Some(s) = seed {
        settings.seed = s;
    }
    let bounds = cfg.bounds()?;
    let reports = verify::run_checks(&bounds, &settings, only, exec);
    print!("{}", verify::render(&reports));
    Ok(reports.iter().all(|r| r.passed))
}

struct SweepPoint {
    case: Case,
    gamma: Option<f64>,
    fault_loss: Option<f64>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "base".to_string(), |x| format!("{x:?}"))
}

fn cmd_sweep(
    cfg: &Config,
    cases: &[String],
    gammas: &[f64],
    losses: &[f64],
    out: &Path,
    exec: Execution,
) -> Result<bool, Error> {
    let cases = if cases.is_empty() {
        &cfg.sweep.cases
    } else {
        cases
    };
    let cases = cases
        .iter()
        .map(|c| c.parse())
        .collect::<Result<Vec<Case>, _>>()?;
    let gammas: Vec<Option<f64>> = if gammas.is_empty() {
        if cfg.sweep.gamma.is_empty() {
            vec![None]
        } else {
            cfg.sweep.gamma.iter().copied().map(Some).collect()
        }
    } else {
        gammas.iter().copied().map(Some).collect()
    };
    let losses: Vec<Option<f64>> = if losses.is_empty() {
        if cfg.sweep.fault_loss.is_empty() {
            vec![None]
        } else {
            cfg.sweep.fault_loss.iter().copied().map(Some).collect()
        }
    } else {
        losses.iter().copied().map(Some).collect()
    };
    let mut points = Vec::new();
    for &case in &cases {
        for &gamma in &gammas {
            for &fault_loss in &losses {
                points.push(SweepPoint {
                    case,
                    gamma,
                    fault_loss,
                });
            }
        }
    }

    let rows = map_indices(exec, points.len(), |k| {
        let p = &points[k];
        let mut c = cfg.clone();
        if let Some(g) = p.gamma {
            c.allocator.gamma = vec![g; c.allocator.gamma.len()];
        }
        if let Some(l) = p.fault_loss {
            c.fault.effectiveness = vec![1.0 - l; c.fault.effectiveness.len()];
        }
        simulate(&c, p.case).map(|(_, m)| m)
    });

    fs::create_dir_all(out)?;
    let mut w = BufWriter::new(fs::File::create(out.join("sweep.csv"))?);
    writeln!(
        w,
        "case,gamma,fault_loss,status,tracking_worst_relative,post_fault_worst_relative,oscillation_total,max_applied_rate,max_command_rate,f_max,h_max,e2_residual"
    )?;
    let mut all_ok = true;
    for (p, row) in points.iter().zip(&rows) {
        let head = format!("{},{},{}", p.case, fmt_opt(p.gamma), fmt_opt(p.fault_loss));
        match row {
            Ok(m) => writeln!(
                w,
                "{head},ok,{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
                m.worst_relative_error(),
                m.post_fault_worst_relative(),
                m.oscillation_total,
                m.max_applied_rate.iter().cloned().fold(0.0, f64::max),
                m.max_command_rate.iter().cloned().fold(0.0, f64::max),
                m.f_max,
                m.h_max,
                m.e2_residual
            )?,
            Err(e) => {
                all_ok = false;
                let msg = e.to_string().replace(',', ";");
                writeln!(w, "{head},error: {msg},,,,,,,,")?;
            }
        }
    }
    w.flush()?;
    println!(
        "wrote {} rows to {}",
        points.len(),
        out.join("sweep.csv").display()
    );
    Ok(all_ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    let mut cfg = match load_config(cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    let outcome = match &cli.command {
        Command::Run { case, sim } => {
            apply_overrides(&mut cfg, sim);
            cmd_run(&cfg, case, &sim.out).map(|_| true)
        }
        Command::Verify { only, seed } => cmd_verify(&cfg, only, *seed, exec),
        Command::Sweep {
            case,
            gamma,
            fault_loss,
            sim,
        } => {
            apply_overrides(&mut cfg, sim);
            cmd_sweep(&cfg, case, gamma, fault_loss, &sim.out, exec)
        }
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => fail(e),
    }
}
