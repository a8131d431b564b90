//! Command-line front end: demonstrations, training, evaluation, single
//! rollouts and saliency maps.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use benchsim::{generate_demos_with, DemoDataset, DemoOptions, InitMode, Observation, TaskConfig, TaskId};
use clap::{Parser, Subcommand};
use dualdiff::pipeline::{evaluate, rollout, saliency, train_with_checkpoints, EvalSpec, PolicyBundle, TrainConfig, Variant};
use dualdiff::{Error, Result};

#[derive(Parser)]
#[command(name = "dualdiff", version, about = "Dual-branch diffusion policies on the planar-arm benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Record scripted-expert demonstrations.
    GenDemos {
        #[arg(long)]
        task: TaskId,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Fraction of episodes whose first grasp is forced to fail.
        #[arg(long, default_value_t = 0.0)]
        retry_fraction: f64,
    },
    /// Train a policy; writes `policy.ckpt` and periodic checkpoints into `--out`.
    Train {
        #[arg(long)]
        demos: PathBuf,
        /// TOML training configuration; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate policies over tasks, conditions and variants.
    Eval {
        /// One checkpoint per task.
        #[arg(long, num_args = 1.., required = true)]
        policy: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', required = true)]
        tasks: Vec<TaskId>,
        #[arg(long, value_delimiter = ',', default_value = "fixed,perturbed")]
        conditions: Vec<InitMode>,
        #[arg(long, value_delimiter = ',', default_value = "dual,visual-only,fused-only")]
        variants: Vec<Variant>,
        /// Execution horizons to sweep; defaults to each policy's own.
        #[arg(long, value_delimiter = ',')]
        horizons: Vec<usize>,
        #[arg(long, default_value_t = 40)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON report path; the table always goes to stdout.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run one episode and write its per-step trace as CSV.
    Rollout {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        task: TaskId,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "dual")]
        variant: Variant,
        #[arg(long, default_value = "fixed")]
        init: InitMode,
        #[arg(long)]
        trace: PathBuf,
    },
    /// Input-gradient saliency of the visual features for one observation.
    Saliency {
        #[arg(long)]
        policy: PathBuf,
        /// Observation as JSON.
        #[arg(long)]
        obs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_policy(path: &Path) -> Result<PolicyBundle> {
    PolicyBundle::load(path)
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenDemos {
            task,
            n,
            seed,
            out,
            retry_fraction,
        } => {
            let cfg = TaskConfig::new(task);
            let dataset = generate_demos_with(&cfg, n, seed, DemoOptions { retry_fraction })?;
            dataset.save(&out)?;
            println!("{} {task} episodes written to {}", dataset.episodes.len(), out.display());
        }
        Command::Train { demos, config, out } => {
            let cfg = match config {
                Some(path) => TrainConfig::from_file(&path)?,
                None => TrainConfig::default(),
            };
            let dataset = DemoDataset::load(&demos)?;
            let (_, report) = train_with_checkpoints(&dataset, &cfg, Some(&out))?;
            if let Some(last) = report.epochs.last() {
                println!("epoch {}: loss {:.5}", last.epoch, last.loss);
            }
            println!("policy written to {}", out.join("policy.ckpt").display());
        }
        Command::Eval {
            policy,
            tasks,
            conditions,
            variants,
            horizons,
            n,
            seed,
            report,
        } => {
            let policies = policy.iter().map(|p| load_policy(p)).collect::<Result<Vec<_>>>()?;
            let spec = EvalSpec {
                tasks,
                conditions,
                variants,
                episodes: n,
                seed,
                horizons,
            };
            let result = evaluate(|task, _| policies.iter().find(|p| p.task == task), &spec)?;
            print!("{}", result.to_table());
            if let Some(path) = report {
                fs::write(&path, result.to_json()?)?;
            }
        }
        Command::Rollout {
            policy,
            task,
            seed,
            variant,
            init,
            trace,
        } => {
            let policy = load_policy(&policy)?;
            let cfg = TaskConfig::new(task).with_init(init);
            let run = rollout(&policy, &cfg, seed, variant)?;
            run.trace.write_csv(fs::File::create(&trace)?)?;
            println!(
                "{task} seed {seed}: {} after {} steps",
                if run.trace.success() { "success" } else { "failure" },
                run.trace.len()
            );
        }
        Command::Saliency { policy, obs, out } => {
            let policy = load_policy(&policy)?;
            let text = fs::read_to_string(&obs)?;
            let obs: Observation =
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", obs.display())))?;
            let maps = saliency(&policy, &obs)?;
            fs::write(&out, serde_json::to_string(&maps)?)?;
        }
    }
    Ok(())
}
