//! Training runs behind the CLI subcommands.

use std::path::{Path, PathBuf};
use std::time::Instant;

use tsdl_core::{Matrix, OptimizerState, Rng64};

use crate::config::{Experiment, RunConfig};
use crate::metrics::{self, MetricsRecord};
use crate::plot::{self, Series};

mod bitstream;
mod mnist;
mod sweep;
mod twospirals;

pub use bitstream::run_bitstream;
pub use mnist::{mnist_dir, run_mnist};
pub use sweep::{run_sweep, write_sweep_csv, SweepAxis, SweepRow};
pub use twospirals::run_two_spirals;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Core(#[from] tsdl_core::Error),
    #[error(transparent)]
    Data(#[from] crate::idx::IdxError),
    #[error("{0}")]
    MissingData(String),
    #[error("cannot write {path}: {source}")]
    Output { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Outcome of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub config: RunConfig,
    pub records: Vec<MetricsRecord>,
    /// The untrained network at iteration 0; not part of the CSV.
    pub initial: Option<MetricsRecord>,
    /// First evaluated iteration meeting the success criterion.
    pub success_iteration: Option<usize>,
    /// Diagnostic of a run that stopped on a numerical failure.
    pub error: Option<String>,
}

impl RunResult {
    pub fn succeeded(&self) -> bool {
        self.success_iteration.is_some()
    }

    /// The latest evaluation, falling back to the initial one.
    pub fn last(&self) -> Option<&MetricsRecord> {
        self.records.last().or(self.initial.as_ref())
    }

    pub fn final_train_acc(&self) -> f64 {
        self.last().map_or(f64::NAN, |r| r.train_acc)
    }

    pub fn final_test_acc(&self) -> f64 {
        self.last().map_or(f64::NAN, |r| r.test_acc)
    }

    pub fn best_test_acc(&self) -> f64 {
        self.records.iter().map(|r| r.test_acc).fold(f64::NAN, f64::max)
    }
}

/// Losses and accuracies at one evaluation point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Evaluation {
    pub loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
}

pub(crate) trait Task {
    fn step(&mut self, iteration: usize) -> tsdl_core::Result<()>;
    fn evaluate(&mut self) -> tsdl_core::Result<Evaluation>;
}

/// Whether an evaluation meets the success criterion of the experiment:
/// full training accuracy for two-spirals, test accuracy otherwise.
fn is_success(cfg: &RunConfig, e: &Evaluation) -> bool {
    match cfg.experiment {
        Experiment::TwoSpirals => e.train_acc >= cfg.success_acc,
        _ => e.test_acc >= cfg.success_acc,
    }
}

fn record(iteration: usize, e: &Evaluation, seconds: f64) -> MetricsRecord {
    MetricsRecord {
        iteration,
        loss: e.loss,
        train_acc: e.train_acc,
        test_acc: e.test_acc,
        seconds,
    }
}

pub(crate) fn train_loop(cfg: &RunConfig, task: &mut dyn Task) -> RunResult {
    let start = Instant::now();
    let every = cfg.effective_eval_every();
    let mut result = RunResult {
        config: cfg.clone(),
        records: Vec::new(),
        initial: None,
        success_iteration: None,
        error: None,
    };
    match task.evaluate() {
        Ok(ev) => result.initial = Some(record(0, &ev, 0.0)),
        Err(e) => {
            result.error = Some(format!("initial evaluation: {e}"));
            return result;
        }
    }
    for it in 1..=cfg.iters {
        if let Err(e) = task.step(it) {
            result.error = Some(format!("iteration {it}: {e}"));
            break;
        }
        if it % every != 0 && it != cfg.iters {
            continue;
        }
        let ev = match task.evaluate() {
            Ok(ev) => ev,
            Err(e) => {
                result.error = Some(format!("evaluation at iteration {it}: {e}"));
                break;
            }
        };
        result.records.push(record(it, &ev, start.elapsed().as_secs_f64()));
        if result.success_iteration.is_none() && is_success(cfg, &ev) {
            result.success_iteration = Some(it);
            if cfg.stop_on_success {
                break;
            }
        }
    }
    result
}

/// Sub-seed for one purpose of a run, so data, initialisation and batch
/// order are independent streams.
pub(crate) fn sub_seed(seed: u64, purpose: u64) -> u64 {
    let mut rng = Rng64::seed(seed);
    rng.fork(purpose).below(usize::MAX) as u64
}

/// Epoch-wise shuffled minibatches of `batch` indices out of `n`.
pub(crate) struct Batcher {
    rng: Rng64,
    order: Vec<usize>,
    pos: usize,
    batch: usize,
}

impl Batcher {
    pub fn new(n: usize, batch: usize, seed: u64) -> Self {
        Self {
            rng: Rng64::seed(seed),
            order: (0..n).collect(),
            pos: n,
            batch,
        }
    }

    /// The next minibatch; the full set when `batch` covers it.
    pub fn next_batch(&mut self) -> Vec<usize> {
        let n = self.order.len();
        if self.batch >= n {
            return (0..n).collect();
        }
        if self.pos + self.batch > n {
            self.rng.shuffle(&mut self.order);
            self.pos = 0;
        }
        let out = self.order[self.pos..self.pos + self.batch].to_vec();
        self.pos += self.batch;
        out
    }
}

/// A fixed random subset of `k` indices out of `n`, in increasing order
/// when `k == n`.
pub(crate) fn fixed_subset(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    if k < n {
        Rng64::seed(seed).shuffle(&mut idx);
        idx.truncate(k);
    }
    idx
}

pub(crate) fn optimizer(cfg: &RunConfig) -> OptimizerState {
    OptimizerState::new(cfg.opt, cfg.lr)
}

pub(crate) fn ensure_dir(dir: &Path) -> Result<(), RunError> {
    std::fs::create_dir_all(dir).map_err(|source| RunError::Output {
        path: dir.to_path_buf(),
        source,
    })
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), RunError> {
    std::fs::write(path, bytes).map_err(|source| RunError::Output {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `config.txt`, `metrics.csv` and `metrics.svg` into the output
/// directory, if one is configured.
pub(crate) fn write_outputs(result: &RunResult) -> Result<(), RunError> {
    let Some(dir) = &result.config.out else {
        return Ok(());
    };
    ensure_dir(dir)?;
    write_file(&dir.join("config.txt"), result.config.to_text().as_bytes())?;
    let mut csv = Vec::new();
    metrics::write_csv(&mut csv, &result.records)?;
    write_file(&dir.join("metrics.csv"), &csv)?;
    let pts = |f: fn(&MetricsRecord) -> f64| result.records.iter().map(|r| (r.iteration as f64, f(r))).collect();
    let series = [
        Series {
            name: "train accuracy",
            colour: "#1f77b4",
            points: pts(|r| r.train_acc),
        },
        Series {
            name: "test accuracy",
            colour: "#d62728",
            points: pts(|r| r.test_acc),
        },
    ];
    let title = format!("{} ({})", result.config.experiment.name(), result.config.param.name());
    write_file(&dir.join("metrics.svg"), plot::line_chart_svg(&title, "iteration", &series, 0.0, 1.0).as_bytes())?;
    if let Some(err) = &result.error {
        write_file(&dir.join("error.txt"), err.as_bytes())?;
    }
    Ok(())
}

/// Runs the experiment named in the configuration.
pub fn run(cfg: &RunConfig) -> Result<RunResult, RunError> {
    match cfg.experiment {
        Experiment::TwoSpirals => run_two_spirals(cfg),
        Experiment::Bitstream | Experiment::Adder => run_bitstream(cfg),
        Experiment::Mnist => run_mnist(cfg, &mnist_dir()),
    }
}

pub(crate) fn median(mut v: Vec<f64>) -> f64 {
    v.retain(|x| !x.is_nan());
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub(crate) fn accuracy(y: &Matrix, labels: &Matrix) -> f64 {
    tsdl_core::loss::accuracy(y, labels, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batcher_covers_each_epoch() {
        let mut b = Batcher::new(10, 5, 1);
        let mut seen: Vec<usize> = b.next_batch();
        seen.extend(b.next_batch());
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        assert_eq!(Batcher::new(4, 4, 1).next_batch(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(vec![]).is_nan());
    }

    #[test]
    fn sub_seeds_differ_by_purpose() {
        assert_ne!(sub_seed(1, 1), sub_seed(1, 2));
        assert_eq!(sub_seed(5, 3), sub_seed(5, 3));
    }
}
