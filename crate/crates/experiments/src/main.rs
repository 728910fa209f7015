use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use trussbot::lattice::LatticeSpec;
use trussbot_experiments::ablation::parse_trials;
use trussbot_experiments::render::{render_frames, Trajectory};
use trussbot_experiments::scenario::{gradcheck, run_trials, worker_count, DesignFile};
use trussbot_experiments::{config_schema, run_scenario, Result, ScenarioConfig};

#[derive(Parser)]
#[command(name = "trussbot", version, about = "Co-design of truss-lattice walking robots")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario.
    Run {
        config: PathBuf,
        #[arg(long, default_value = "runs/latest")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Override the iteration budget.
        #[arg(long)]
        iters: Option<usize>,
        /// Override the rollout length.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Run lettered ablation trials (e.g. a..h or a,c,h) from a base config.
    Ablation {
        config: PathBuf,
        #[arg(long, default_value = "a..h")]
        trials: String,
        #[arg(long, default_value = "runs/ablation")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Render SVG frames from a trajectory CSV and a design file.
    Render {
        trajectory: PathBuf,
        design: PathBuf,
        #[arg(long, default_value = "frames")]
        out: PathBuf,
        #[arg(long, default_value_t = 256)]
        stride: usize,
    },
    /// Compare adjoint gradients with finite differences.
    Gradcheck {
        config: PathBuf,
        #[arg(long, default_value_t = 64)]
        steps: usize,
        #[arg(long, default_value_t = 20)]
        theta: usize,
        #[arg(long, default_value_t = 10)]
        z: usize,
        #[arg(long, default_value_t = 1e-6)]
        h: f64,
        /// Exit with status 1 when the largest relative error exceeds this.
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
    /// Print the JSON schema of scenario configs.
    Schema,
}

fn load(path: &Path, seed: Option<u64>, iters: Option<usize>, steps: Option<usize>) -> Result<ScenarioConfig> {
    let mut cfg = ScenarioConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(n) = iters {
        cfg.budgets.iterations = n;
    }
    if let Some(n) = steps {
        cfg.budgets.total_steps = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Run { config, out, seed, iters, steps } => {
            let cfg = load(&config, seed, iters, steps)?;
            let art = run_scenario(&cfg, &out)?;
            print!("{}", art.metrics.to_json());
            Ok(0)
        }
        Command::Ablation { config, trials, out, seed, iters, steps } => {
            let base = load(&config, seed, iters, steps)?;
            let trials = parse_trials(&trials)?;
            let results = run_trials(&base, &trials, &out, worker_count());
            let mut code = 0;
            let mut summary = serde_json::Map::new();
            for (t, r) in results {
                match r {
                    Ok(a) => {
                        println!("trial {t}: final displacement {:.4} m", a.metrics.final_displacement_m);
                        summary.insert(t.to_string(), serde_json::to_value(&a.metrics)?);
                    }
                    Err(e) => {
                        println!("trial {t}: failed: {e}");
                        code = code.max(e.exit_code());
                        summary.insert(t.to_string(), serde_json::json!({ "error": e.to_string() }));
                    }
                }
            }
            std::fs::write(out.join("ablation.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
            Ok(code)
        }
        Command::Render { trajectory, design, out, stride } => {
            let traj = Trajectory::read_csv(&trajectory)?;
            let df: DesignFile = serde_json::from_str(&std::fs::read_to_string(&design)?)?;
            let lattice: LatticeSpec = df.config.lattice()?;
            let ground = df.config.sim_config().ground;
            let frames = render_frames(&traj, &df.z, &lattice, &ground, &out, stride)?;
            println!("wrote {} frames to {}", frames.len(), out.display());
            Ok(0)
        }
        Command::Gradcheck { config, steps, theta, z, h, tol } => {
            let cfg = ScenarioConfig::load(&config)?;
            let report = gradcheck(&cfg, steps, theta, z, h)?;
            for e in &report.entries {
                println!(
                    "{}[{}]: adjoint {:+.6e} fd {:+.6e} rel {:.3e}",
                    e.param, e.index, e.adjoint, e.finite_difference, e.rel_error
                );
            }
            println!("max relative error {:.3e} over {} steps", report.max_rel_error, report.steps);
            Ok(if report.max_rel_error <= tol { 0 } else { 1 })
        }
        Command::Schema => {
            println!("{}", config_schema());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
