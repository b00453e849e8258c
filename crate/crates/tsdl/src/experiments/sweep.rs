use std::io::Write;
use std::str::FromStr;
use std::sync::Mutex;

use super::{median, run, RunError, RunResult};
use crate::config::RunConfig;

/// Hyperparameter varied by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Lambda,
    /// Target batch size.
    NbarB,
    /// Delay of the recurrent tasks; widths follow automatically.
    Delay,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Lambda => "lambda",
            SweepAxis::NbarB => "nbar_b",
            SweepAxis::Delay => "N",
        }
    }

    fn apply(self, cfg: &mut RunConfig, value: f64) -> Result<(), RunError> {
        let key = match self {
            SweepAxis::Lambda => "lambda",
            SweepAxis::NbarB => "target_batch",
            SweepAxis::Delay => "delay",
        };
        cfg.set(key, &value.to_string())?;
        Ok(())
    }
}

impl FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "lambda" => Ok(SweepAxis::Lambda),
            "nbar_b" | "target_batch" => Ok(SweepAxis::NbarB),
            "N" | "delay" => Ok(SweepAxis::Delay),
            _ => Err(format!("unknown sweep axis `{s}` (lambda, nbar_b, N)")),
        }
    }
}

/// Job index, value index and outcome of one sweep run.
type Finished = (usize, usize, RunResult);

/// Aggregate over the seeds of one sweep value.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub runs: usize,
    pub successes: usize,
    /// Runs that stopped on a numerical failure.
    pub failures: usize,
    pub median_success_iteration: f64,
    pub median_train_acc: f64,
    pub median_test_acc: f64,
}

impl SweepRow {
    pub fn success_rate(&self) -> f64 {
        if self.runs == 0 {
            0.0
        } else {
            self.successes as f64 / self.runs as f64
        }
    }

    fn from_results(value: f64, results: &[RunResult]) -> Self {
        Self {
            value,
            runs: results.len(),
            successes: results.iter().filter(|r| r.succeeded()).count(),
            failures: results.iter().filter(|r| r.error.is_some()).count(),
            median_success_iteration: median(results.iter().filter_map(|r| r.success_iteration).map(|i| i as f64).collect()),
            median_train_acc: median(results.iter().map(RunResult::final_train_acc).collect()),
            median_test_acc: median(results.iter().map(RunResult::final_test_acc).collect()),
        }
    }
}

/// Runs `base` for every value and `seeds` consecutive seeds starting at
/// `base.seed`, in parallel. Per-run outputs go to
/// `<out>/<axis>=<value>/seed=<s>` when `base.out` is set.
pub fn run_sweep(base: &RunConfig, axis: SweepAxis, values: &[f64], seeds: usize, threads: usize) -> Result<Vec<SweepRow>, RunError> {
    let mut jobs = Vec::new();
    for (vi, &v) in values.iter().enumerate() {
        for s in 0..seeds as u64 {
            let mut cfg = base.clone();
            axis.apply(&mut cfg, v)?;
            cfg.seed = base.seed + s;
            cfg.out = base.out.as_ref().map(|d| d.join(format!("{}={v}", axis.name())).join(format!("seed={}", cfg.seed)));
            cfg.validate()?;
            jobs.push((vi, cfg));
        }
    }
    let next = Mutex::new(0usize);
    let done: Mutex<Vec<Finished>> = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..threads.max(1).min(jobs.len().max(1)) {
            scope.spawn(|| loop {
                let k = {
                    let mut n = next.lock().expect("job counter");
                    let k = *n;
                    *n += 1;
                    k
                };
                let Some((vi, cfg)) = jobs.get(k) else { break };
                // A run that cannot start is recorded as failed; the sweep goes on.
                let r = run(cfg).unwrap_or_else(|e| RunResult {
                    config: cfg.clone(),
                    records: Vec::new(),
                    initial: None,
                    success_iteration: None,
                    error: Some(e.to_string()),
                });
                done.lock().expect("results").push((k, *vi, r));
            });
        }
    });
    let mut done = done.into_inner().expect("results");
    done.sort_by_key(|(k, _, _)| *k);
    let mut grouped: Vec<Vec<RunResult>> = vec![Vec::new(); values.len()];
    for (_, vi, r) in done {
        grouped[vi].push(r);
    }
    let rows: Vec<SweepRow> = values.iter().zip(&grouped).map(|(&v, rs)| SweepRow::from_results(v, rs)).collect();
    if let Some(dir) = &base.out {
        super::ensure_dir(dir)?;
        let path = dir.join("sweep.csv");
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, axis, &rows)?;
        super::write_file(&path, &buf)?;
    }
    Ok(rows)
}

pub fn write_sweep_csv<W: Write>(out: W, axis: SweepAxis, rows: &[SweepRow]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        axis.name(),
        "runs",
        "successes",
        "success_rate",
        "median_success_iteration",
        "median_train_acc",
        "median_test_acc",
        "failures",
    ])?;
    for r in rows {
        w.write_record([
            format!("{:?}", r.value),
            r.runs.to_string(),
            r.successes.to_string(),
            format!("{:?}", r.success_rate()),
            format!("{:?}", r.median_success_iteration),
            format!("{:?}", r.median_train_acc),
            format!("{:?}", r.median_test_acc),
            r.failures.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
