//! `jssp`: solve, benchmark and train job-shop improvement policies.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 unreadable or
//! malformed input (instance, best-known table, config), 4 checkpoint that
//! cannot be loaded or does not match its configuration.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use jssp_core::exact::solve_exact;
use jssp_core::harness::{
    bench_dir, generate_instances, instance_files, instance_name, read_best_known, read_instance,
    run_method, scaling, solve_ensemble, solve_output, write_best_known, write_results_csv,
    write_scaling_csv, Format, Method, SolveOutput,
};
use jssp_core::rl::{train, TrainConfig, TrainError};
use jssp_core::{PolicyNet, Time};

const EXIT_RUNTIME: u8 = 1;
const EXIT_INPUT: u8 = 3;
const EXIT_CHECKPOINT: u8 = 4;

struct Failure {
    code: u8,
    error: anyhow::Error,
}

trait Classify<T> {
    fn input(self) -> Result<T, Failure>;
    fn checkpoint(self) -> Result<T, Failure>;
    fn runtime(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn input(self) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code: EXIT_INPUT,
            error: e.into(),
        })
    }

    fn checkpoint(self) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code: EXIT_CHECKPOINT,
            error: e.into(),
        })
    }

    fn runtime(self) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code: EXIT_RUNTIME,
            error: e.into(),
        })
    }
}

#[derive(Parser)]
#[command(
    name = "jssp",
    version,
    about = "Learned and classical improvement search for job-shop scheduling"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Standard,
    Taillard,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Standard => Format::Standard,
            FormatArg::Taillard => Format::Taillard,
        }
    }
}

#[derive(Args)]
struct Common {
    /// Improvement steps.
    #[arg(long, default_value_t = 500)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Instance file format.
    #[arg(long, value_enum, default_value = "standard")]
    format: FormatArg,
    /// Best-known makespans (`name,makespan`) used to report gaps.
    #[arg(long)]
    best_known: Option<PathBuf>,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Improve one instance with a policy or a classical rule and print the
    /// result as JSON.
    Solve {
        instance: PathBuf,
        /// Policy checkpoint; required for `--method policy`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "policy")]
        method: Method,
        #[command(flatten)]
        common: Common,
    },
    /// Run several policies on one instance and keep the best incumbent.
    SolveEnsemble {
        instance: PathBuf,
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Run a method on every instance of a directory and write a results CSV.
    Bench {
        dir: PathBuf,
        #[arg(long)]
        method: Method,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Time policy rollouts on random instances of every (jobs, machines)
    /// combination.
    Scaling {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [10, 20, 30, 40, 50, 60])]
        jobs: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [10])]
        machines: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        repetitions: usize,
        #[arg(long, default_value_t = 500)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write random instances with integer durations in [1, 99].
    Generate {
        #[arg(long)]
        jobs: usize,
        #[arg(long)]
        machines: usize,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "standard")]
        format: FormatArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a policy with n-step REINFORCE.
    Train {
        /// TOML file whose keys mirror the training configuration; defaults
        /// are used for missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for checkpoints and the training log.
        #[arg(long)]
        out: PathBuf,
        /// Continue from the last checkpoint in `--out`.
        #[arg(long)]
        resume: bool,
        /// Suppress per-validation progress lines.
        #[arg(long)]
        quiet: bool,
    },
    /// Optimal makespan by branch and bound (small instances only).
    Exact {
        instance: PathBuf,
        #[arg(long, value_enum, default_value = "standard")]
        format: FormatArg,
        #[arg(long, default_value_t = 50_000_000)]
        node_limit: u64,
    },
    /// Prove optimal makespans for every instance of a directory and write
    /// the solved ones as a best-known table.
    BestKnown {
        dir: PathBuf,
        #[arg(long, value_enum, default_value = "standard")]
        format: FormatArg,
        #[arg(long, default_value_t = 50_000_000)]
        node_limit: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", message(&f.error));
            ExitCode::from(f.code)
        }
    }
}

/// The error chain joined by ": ", skipping causes already spelled out by
/// the message before them.
fn message(error: &anyhow::Error) -> String {
    let mut parts: Vec<String> = Vec::new();
    for cause in error.chain() {
        let text = cause.to_string();
        if !parts.last().is_some_and(|p| p.contains(&text)) {
            parts.push(text);
        }
    }
    parts.join(": ")
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p)
                .with_context(|| format!("cannot create {}", p.display()))
                .runtime()?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn load_policy(path: &Path) -> Result<PolicyNet, Failure> {
    PolicyNet::load(path)
        .with_context(|| format!("cannot load checkpoint {}", path.display()))
        .checkpoint()
}

fn best_known(path: Option<&Path>) -> Result<BTreeMap<String, Time>, Failure> {
    path.map(read_best_known)
        .transpose()
        .input()
        .map(Option::unwrap_or_default)
}

fn write_json(out: Option<&Path>, value: &SolveOutput) -> Result<(), Failure> {
    let mut w = output(out)?;
    serde_json::to_writer_pretty(&mut w, value).runtime()?;
    writeln!(w).and_then(|_| w.flush()).runtime()
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Solve {
            instance,
            checkpoint,
            method,
            common,
        } => {
            let inst = read_instance(&instance, common.format.into()).input()?;
            let net = checkpoint.as_deref().map(load_policy).transpose()?;
            if method == Method::Policy && net.is_none() {
                return Err(anyhow!("--method policy needs --checkpoint")).input();
            }
            let name = instance_name(&instance);
            let best = best_known(common.best_known.as_deref())?
                .get(&name)
                .copied();
            let start = Instant::now();
            let run =
                run_method(&inst, method, common.steps, common.seed, net.as_ref()).runtime()?;
            let wall_ms = start.elapsed().as_secs_f64() * 1e3;
            let out = solve_output(
                &inst,
                &name,
                method,
                common.steps,
                common.seed,
                best,
                &run,
                wall_ms,
            );
            write_json(common.out.as_deref(), &out)
        }
        Command::SolveEnsemble {
            instance,
            checkpoints,
            common,
        } => {
            let inst = read_instance(&instance, common.format.into()).input()?;
            let nets = checkpoints
                .iter()
                .map(|p| load_policy(p))
                .collect::<Result<Vec<_>, _>>()?;
            let name = instance_name(&instance);
            let best = best_known(common.best_known.as_deref())?
                .get(&name)
                .copied();
            let start = Instant::now();
            let run = solve_ensemble(&inst, &nets, common.steps, common.seed)
                .expect("clap requires one checkpoint");
            let wall_ms = start.elapsed().as_secs_f64() * 1e3;
            let out = solve_output(
                &inst,
                &name,
                Method::Policy,
                common.steps,
                common.seed,
                best,
                &run,
                wall_ms,
            );
            write_json(common.out.as_deref(), &out)
        }
        Command::Bench {
            dir,
            method,
            checkpoint,
            common,
        } => {
            let net = checkpoint.as_deref().map(load_policy).transpose()?;
            if method == Method::Policy && net.is_none() {
                return Err(anyhow!("--method policy needs --checkpoint")).input();
            }
            let table = best_known(common.best_known.as_deref())?;
            let summary = bench_dir(
                &dir,
                common.format.into(),
                method,
                common.steps,
                &table,
                common.seed,
                net.as_ref(),
            )
            .input()?;
            write_results_csv(output(common.out.as_deref())?, &summary.results).runtime()?;
            let fmt = |v: Option<f64>, scale: f64, digits: usize| {
                v.map_or("-".to_string(), |x| format!("{:.*}", digits, x * scale))
            };
            eprintln!(
                "{} instances, mean gap {}%, mean wall {} ms",
                summary.results.len(),
                fmt(summary.mean_gap, 100.0, 2),
                fmt(summary.mean_wall_ms, 1.0, 1)
            );
            Ok(())
        }
        Command::Scaling {
            checkpoint,
            jobs,
            machines,
            repetitions,
            steps,
            seed,
            out,
        } => {
            let net = load_policy(&checkpoint)?;
            let sizes: Vec<(usize, usize)> = jobs
                .iter()
                .flat_map(|&j| machines.iter().map(move |&m| (j, m)))
                .collect();
            if sizes.iter().any(|&(j, m)| j == 0 || m == 0) {
                return Err(anyhow!("jobs and machines must be positive")).input();
            }
            let rows = scaling(&net, &sizes, repetitions, steps, seed);
            write_scaling_csv(output(out.as_deref())?, &rows).runtime()
        }
        Command::Generate {
            jobs,
            machines,
            count,
            seed,
            format,
            out,
        } => {
            if jobs == 0 || machines == 0 {
                return Err(anyhow!("jobs and machines must be positive")).input();
            }
            let files =
                generate_instances(jobs, machines, count, seed, &out, format.into()).runtime()?;
            eprintln!("wrote {} instances to {}", files.len(), out.display());
            Ok(())
        }
        Command::Train {
            config,
            seed,
            out,
            resume,
            quiet,
        } => {
            let mut cfg: TrainConfig = match &config {
                Some(path) => {
                    let text = std::fs::read_to_string(path)
                        .with_context(|| format!("cannot read {}", path.display()))
                        .input()?;
                    toml::from_str(&text)
                        .with_context(|| format!("invalid config {}", path.display()))
                        .input()?
                }
                None => TrainConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let outcome = train(&cfg, &out, resume, |row| {
                if !quiet {
                    eprintln!(
                        "instances {:>8}  validation {:>9.2}  reward {:>8.2}  {:>8.1}s",
                        row.instances_seen,
                        row.mean_validation_makespan,
                        row.mean_cumulative_reward,
                        row.wall_seconds
                    );
                }
            });
            match outcome {
                Ok(o) => {
                    eprintln!("best checkpoint: {}", o.best_path.display());
                    Ok(())
                }
                Err(e @ TrainError::Config(_)) => Err(e).input(),
                Err(e @ TrainError::Checkpoint(_)) => Err(e).checkpoint(),
                Err(e) => Err(e).runtime(),
            }
        }
        Command::Exact {
            instance,
            format,
            node_limit,
        } => {
            let inst = read_instance(&instance, format.into()).input()?;
            match solve_exact(&inst, node_limit) {
                Some(r) => {
                    println!(
                        "{} optimal {} ({} nodes)",
                        instance_name(&instance),
                        r.makespan,
                        r.nodes
                    );
                    Ok(())
                }
                None => Err(anyhow!(
                    "node limit {node_limit} reached before optimality was proven"
                ))
                .runtime(),
            }
        }
        Command::BestKnown {
            dir,
            format,
            node_limit,
            out,
        } => {
            let mut table = BTreeMap::new();
            for path in instance_files(&dir).input()? {
                let inst = read_instance(&path, format.into()).input()?;
                let name = instance_name(&path);
                match solve_exact(&inst, node_limit) {
                    Some(r) => {
                        eprintln!("{name}: {} ({} nodes)", r.makespan, r.nodes);
                        table.insert(name, r.makespan);
                    }
                    None => eprintln!("{name}: not proven within {node_limit} nodes, skipped"),
                }
            }
            write_best_known(&out, &table).runtime()
        }
    }
}
