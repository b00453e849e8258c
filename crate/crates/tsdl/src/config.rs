//! Run configuration as flat `key = value` text.
//!
//! Files hold one pair per line; `#` starts a comment. Every key has a
//! per-experiment default, so a file only needs the keys it changes. The
//! effective configuration is written back out with [`RunConfig::to_text`]
//! and parses to the same value.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use tsdl_core::{Activation, OptimizerKind};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("bad value `{value}` for `{key}`: {reason}")]
    BadValue { key: String, value: String, reason: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    TwoSpirals,
    Bitstream,
    Adder,
    Mnist,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Self::TwoSpirals => "twospirals",
            Self::Bitstream => "bitstream",
            Self::Adder => "adder",
            Self::Mnist => "mnist",
        }
    }
}

impl FromStr for Experiment {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "twospirals" => Ok(Self::TwoSpirals),
            "bitstream" => Ok(Self::Bitstream),
            "adder" => Ok(Self::Adder),
            "mnist" => Ok(Self::Mnist),
            _ => Err("expected twospirals, bitstream, adder or mnist".into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Param {
    Weight,
    TargetScu,
    TargetOcu,
}

impl Param {
    pub fn name(self) -> &'static str {
        match self {
            Self::Weight => "weight",
            Self::TargetScu => "target-scu",
            Self::TargetOcu => "target-ocu",
        }
    }
}

impl FromStr for Param {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.replace('_', "-").as_str() {
            "weight" => Ok(Self::Weight),
            "target-scu" => Ok(Self::TargetScu),
            "target-ocu" => Ok(Self::TargetOcu),
            _ => Err("expected weight, target-scu or target-ocu".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub param: Param,
    /// Dense layer widths (`2-5-5-5-2`); for recurrent nets `in-hidden-out`;
    /// for the CNN the dense head after flattening. Empty means automatic.
    pub widths: Vec<usize>,
    pub shortcuts: bool,
    pub activation: Activation,
    /// Conv blocks as `(kernel, channels, pool)`.
    pub conv: Vec<(usize, usize, usize)>,
    pub opt: OptimizerKind,
    pub lr: f64,
    pub lambda: f64,
    /// Training minibatch `n_b`.
    pub batch: usize,
    /// Target batch `n̄_b`.
    pub target_batch: usize,
    /// Target sequence length `n̄_t`; 0 uses the full stream length.
    pub target_steps: usize,
    pub sigma: f64,
    /// Replace the random initial targets with achievable ones.
    pub project: bool,
    pub dropout: f64,
    pub iters: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
    /// Bit delay `N`.
    pub delay: usize,
    pub train_count: usize,
    pub test_count: usize,
    /// 0 means `N + 50`.
    pub stream_len: usize,
    /// 0 means every iteration up to 1000 iterations, else every 10.
    pub eval_every: usize,
    pub success_acc: f64,
    pub stop_on_success: bool,
}

impl RunConfig {
    pub fn defaults(experiment: Experiment) -> Self {
        let base = Self {
            experiment,
            param: Param::TargetScu,
            widths: Vec::new(),
            shortcuts: false,
            activation: Activation::Tanh,
            conv: Vec::new(),
            opt: OptimizerKind::ADAM,
            lr: 0.001,
            lambda: 0.1,
            batch: 100,
            target_batch: 100,
            target_steps: 0,
            sigma: 1.0,
            project: true,
            dropout: 0.0,
            iters: 20_000,
            seed: 0,
            out: None,
            delay: 4,
            train_count: 2000,
            test_count: 500,
            stream_len: 0,
            eval_every: 0,
            success_acc: 0.99,
            stop_on_success: true,
        };
        match experiment {
            Experiment::TwoSpirals => Self {
                widths: vec![2, 5, 5, 5, 2],
                shortcuts: true,
                lr: 0.01,
                lambda: 0.001,
                batch: 194,
                target_batch: 194,
                iters: 4000,
                train_count: 194,
                test_count: 192,
                success_acc: 1.0,
                stop_on_success: false,
                ..base
            },
            Experiment::Bitstream => base,
            Experiment::Adder => Self { delay: 2, ..base },
            Experiment::Mnist => Self {
                widths: vec![32, 10],
                activation: Activation::LRelu,
                conv: vec![(3, 8, 2), (3, 16, 2)],
                lr: 0.01,
                sigma: 0.1,
                project: false,
                iters: 150,
                train_count: 5000,
                test_count: 1000,
                eval_every: 10,
                success_acc: 1.0,
                stop_on_success: false,
                ..base
            },
        }
    }

    /// Network widths with the automatic recurrent sizes filled in:
    /// `1-(N+3)-2` for recall and `1-(N+5)-2` for addition.
    pub fn effective_widths(&self) -> Vec<usize> {
        if !self.widths.is_empty() {
            return self.widths.clone();
        }
        match self.experiment {
            Experiment::Bitstream => vec![1, self.delay + 3, 2],
            Experiment::Adder => vec![1, self.delay + 5, 2],
            Experiment::TwoSpirals => vec![2, 5, 5, 5, 2],
            Experiment::Mnist => vec![32, 10],
        }
    }

    pub fn effective_stream_len(&self) -> usize {
        if self.stream_len == 0 {
            self.delay + 50
        } else {
            self.stream_len
        }
    }

    pub fn effective_eval_every(&self) -> usize {
        match self.eval_every {
            0 if self.iters <= 1000 => 1,
            0 => 10,
            n => n,
        }
    }

    pub fn is_recurrent(&self) -> bool {
        matches!(self.experiment, Experiment::Bitstream | Experiment::Adder)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let pairs = parse_pairs(text)?;
        let experiment = match pairs.iter().find(|(k, _)| k == "experiment") {
            Some((_, v)) => v.parse().map_err(|reason| bad("experiment", v, reason))?,
            None => return Err(ConfigError::Invalid("missing `experiment`".into())),
        };
        let mut cfg = Self::defaults(experiment);
        for (k, v) in &pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        match key {
            "experiment" => {
                let e: Experiment = v.parse().map_err(|r| bad(key, v, r))?;
                if e != self.experiment {
                    return Err(ConfigError::Invalid("the experiment cannot be changed by an override".into()));
                }
            }
            "param" => self.param = v.parse().map_err(|r| bad(key, v, r))?,
            "widths" => self.widths = parse_widths(v).map_err(|r| bad(key, v, r))?,
            "shortcuts" => self.shortcuts = num(key, v)?,
            "activation" => self.activation = Activation::parse(v).ok_or_else(|| bad(key, v, "expected tanh, lrelu or identity".into()))?,
            "conv" => self.conv = parse_conv(v).map_err(|r| bad(key, v, r))?,
            "opt" => self.opt = OptimizerKind::parse(v).ok_or_else(|| bad(key, v, "expected sgd or adam".into()))?,
            "lr" => self.lr = num(key, v)?,
            "lambda" => self.lambda = num(key, v)?,
            "batch" => self.batch = num(key, v)?,
            "target_batch" => self.target_batch = num(key, v)?,
            "target_steps" => self.target_steps = num(key, v)?,
            "sigma" => self.sigma = num(key, v)?,
            "project" => self.project = num(key, v)?,
            "dropout" => self.dropout = num(key, v)?,
            "iters" => self.iters = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "out" => self.out = if v.is_empty() { None } else { Some(PathBuf::from(v)) },
            "delay" => self.delay = num(key, v)?,
            "train_count" => self.train_count = num(key, v)?,
            "test_count" => self.test_count = num(key, v)?,
            "stream_len" => self.stream_len = num(key, v)?,
            "eval_every" => self.eval_every = num(key, v)?,
            "success_acc" => self.success_acc = num(key, v)?,
            "stop_on_success" => self.stop_on_success = num(key, v)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if !(self.lr > 0.0) {
            return fail("lr must be positive");
        }
        if !(self.lambda >= 0.0) {
            return fail("lambda must be non-negative");
        }
        if !(self.sigma > 0.0) {
            return fail("sigma must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must lie in [0, 1)");
        }
        if self.batch == 0 || self.target_batch == 0 {
            return fail("batch sizes must be positive");
        }
        if self.train_count == 0 || self.test_count == 0 {
            return fail("data set sizes must be positive");
        }
        if self.batch > self.train_count || self.target_batch > self.train_count {
            return fail("batch sizes cannot exceed the training set");
        }
        let widths = self.effective_widths();
        if widths.len() < 2 && self.experiment != Experiment::Mnist {
            return fail("a network needs at least two layers");
        }
        if self.is_recurrent() && widths.len() < 3 {
            return fail("a recurrent network needs a hidden layer");
        }
        if self.experiment == Experiment::Mnist && widths.is_empty() {
            return fail("the CNN needs at least an output layer");
        }
        if self.is_recurrent() && self.target_steps > self.effective_stream_len() {
            return fail("target_steps exceeds the stream length");
        }
        if self.is_recurrent() && self.effective_stream_len() <= self.delay {
            return fail("streams must be longer than the delay");
        }
        if !(0.0..=1.0).contains(&self.success_acc) {
            return fail("success_acc must lie in [0, 1]");
        }
        Ok(())
    }

    /// Every key in file form; [`RunConfig::parse`] reads it back unchanged.
    pub fn to_text(&self) -> String {
        let join = |w: &[usize]| w.iter().map(usize::to_string).collect::<Vec<_>>().join("-");
        let conv = self
            .conv
            .iter()
            .map(|(k, c, p)| format!("{k}-{c}-{p}"))
            .collect::<Vec<_>>()
            .join(",");
        let lines = [
            ("experiment", self.experiment.name().to_string()),
            ("param", self.param.name().to_string()),
            ("widths", join(&self.widths)),
            ("shortcuts", self.shortcuts.to_string()),
            ("activation", self.activation.name().to_string()),
            ("conv", conv),
            ("opt", self.opt.name().to_string()),
            ("lr", fmt_f64(self.lr)),
            ("lambda", fmt_f64(self.lambda)),
            ("batch", self.batch.to_string()),
            ("target_batch", self.target_batch.to_string()),
            ("target_steps", self.target_steps.to_string()),
            ("sigma", fmt_f64(self.sigma)),
            ("project", self.project.to_string()),
            ("dropout", fmt_f64(self.dropout)),
            ("iters", self.iters.to_string()),
            ("seed", self.seed.to_string()),
            ("out", self.out.as_ref().map(|p| p.display().to_string()).unwrap_or_default()),
            ("delay", self.delay.to_string()),
            ("train_count", self.train_count.to_string()),
            ("test_count", self.test_count.to_string()),
            ("stream_len", self.stream_len.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("success_acc", fmt_f64(self.success_acc)),
            ("stop_on_success", self.stop_on_success.to_string()),
        ];
        lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

/// Shortest text that parses back to the same `f64`.
fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

fn bad(key: &str, value: &str, reason: String) -> ConfigError {
    ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        reason,
    }
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    v.parse().map_err(|e: T::Err| bad(key, v, e.to_string()))
}

fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
        let k = k.trim();
        if k.is_empty() {
            return Err(ConfigError::Syntax { line: i + 1 });
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn parse_widths(v: &str) -> Result<Vec<usize>, String> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    let w: Vec<usize> = v.split('-').map(|p| p.trim().parse::<usize>().map_err(|e| e.to_string())).collect::<Result<_, _>>()?;
    if w.contains(&0) {
        return Err("widths must be positive".into());
    }
    Ok(w)
}

fn parse_conv(v: &str) -> Result<Vec<(usize, usize, usize)>, String> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|block| match parse_widths(block.trim().trim_matches(|c| c == '(' || c == ')'))?.as_slice() {
            &[k, c, p] => Ok((k, c, p)),
            _ => Err(format!("conv block `{block}` is not kernel-channels-pool")),
        })
        .collect()
}
