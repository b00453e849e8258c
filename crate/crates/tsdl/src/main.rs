use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tsdl::experiments::{self, SweepAxis, SweepRow};
use tsdl::{Experiment, RunConfig, RunResult};

#[derive(Parser)]
#[command(name = "tsdl", version, about = "Train small networks in target space or weight space")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Two interlocked spirals with a shortcut MLP.
    Twospirals(RunArgs),
    /// Recall of a bit stream after a fixed delay.
    Bitstream(RunArgs),
    /// Sum of a bit stream and its delayed copy.
    Adder(RunArgs),
    /// MNIST digits with a small CNN.
    Mnist(RunArgs),
    /// Repeated runs over one hyperparameter and several seeds.
    Sweep(SweepArgs),
    /// Quick numerical self-checks.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args, Clone)]
struct RunArgs {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// weight, target-scu or target-ocu.
    #[arg(long)]
    param: Option<String>,
    /// sgd or adam.
    #[arg(long)]
    opt: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    batch: Option<String>,
    #[arg(long)]
    target_batch: Option<String>,
    #[arg(long)]
    iters: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    out: Option<String>,
    /// Any other configuration key, as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct SweepArgs {
    /// twospirals, bitstream, adder or mnist.
    experiment: String,
    /// lambda, nbar_b or N.
    #[arg(long)]
    axis: String,
    /// Comma-separated values of the axis.
    #[arg(long, value_delimiter = ',')]
    values: Vec<f64>,
    /// Seeds per value, counting up from the configured seed.
    #[arg(long, default_value_t = 5)]
    seeds: usize,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    threads: Option<usize>,
    #[command(flatten)]
    run: RunArgs,
}

fn build_config(experiment: Experiment, args: &RunArgs) -> Result<RunConfig, String> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
            let cfg = RunConfig::parse(&text).map_err(|e| format!("{}: {e}", path.display()))?;
            if cfg.experiment != experiment {
                return Err(format!(
                    "{} configures `{}`, not `{}`",
                    path.display(),
                    cfg.experiment.name(),
                    experiment.name()
                ));
            }
            cfg
        }
        None => RunConfig::defaults(experiment),
    };
    let flags = [
        ("param", &args.param),
        ("opt", &args.opt),
        ("lr", &args.lr),
        ("lambda", &args.lambda),
        ("batch", &args.batch),
        ("target_batch", &args.target_batch),
        ("iters", &args.iters),
        ("seed", &args.seed),
        ("out", &args.out),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, v).map_err(|e| e.to_string())?;
        }
    }
    for kv in &args.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| format!("--set expects KEY=VALUE, got `{kv}`"))?;
        cfg.set(k.trim(), v).map_err(|e| e.to_string())?;
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn report(result: &RunResult) -> ExitCode {
    match result.last() {
        Some(r) => println!(
            "iteration {}: loss {:.4}, train acc {:.4}, test acc {:.4}",
            r.iteration, r.loss, r.train_acc, r.test_acc
        ),
        None => println!("no iterations run"),
    }
    if let Some(it) = result.success_iteration {
        println!("success at iteration {it}");
    }
    match &result.error {
        Some(e) => {
            eprintln!("run failed: {e}");
            ExitCode::FAILURE
        }
        None => ExitCode::SUCCESS,
    }
}

fn print_sweep(axis: SweepAxis, rows: &[SweepRow]) {
    let mut buf = Vec::new();
    if experiments::write_sweep_csv(&mut buf, axis, rows).is_ok() {
        print!("{}", String::from_utf8_lossy(&buf));
    }
}

fn fail(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(2)
}

fn run_one(experiment: Experiment, args: &RunArgs) -> ExitCode {
    let cfg = match build_config(experiment, args) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    match experiments::run(&cfg) {
        Ok(result) => report(&result),
        Err(e) => fail(e),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Twospirals(a) => run_one(Experiment::TwoSpirals, &a),
        Command::Bitstream(a) => run_one(Experiment::Bitstream, &a),
        Command::Adder(a) => run_one(Experiment::Adder, &a),
        Command::Mnist(a) => run_one(Experiment::Mnist, &a),
        Command::Sweep(s) => {
            let experiment: Experiment = match s.experiment.parse() {
                Ok(e) => e,
                Err(e) => return fail(e),
            };
            let axis: SweepAxis = match s.axis.parse() {
                Ok(a) => a,
                Err(e) => return fail(e),
            };
            let cfg = match build_config(experiment, &s.run) {
                Ok(c) => c,
                Err(e) => return fail(e),
            };
            let threads = s
                .threads
                .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            match experiments::run_sweep(&cfg, axis, &s.values, s.seeds, threads) {
                Ok(rows) => {
                    print_sweep(axis, &rows);
                    if rows.iter().any(|r| r.failures > 0) {
                        ExitCode::FAILURE
                    } else {
                        ExitCode::SUCCESS
                    }
                }
                Err(e) => fail(e),
            }
        }
        Command::Verify { seed } => {
            let outcomes = tsdl_core::verification::quick_suite(seed);
            let mut ok = true;
            for o in &outcomes {
                println!("{} {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
                ok &= o.passed;
            }
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
