use std::path::{Path, PathBuf};

use tsdl_core::cnn::{self, CnnDropout, CnnSpec, CnnTargetParams, Images};
use tsdl_core::datasets::LabeledBatch;
use tsdl_core::ffnn::{Untangling, WeightParams};
use tsdl_core::{Matrix, OptimizerState, Rng64};

use super::{fixed_subset, optimizer, sub_seed, train_loop, write_outputs, Batcher, Evaluation, RunError, RunResult, Task};
use crate::config::{Param, RunConfig};
use crate::idx::load_mnist_idx;

pub const SIDE: usize = 28;
/// Training images scored at each evaluation.
const TRAIN_EVAL: usize = 1000;

/// `$TSDL_DATA_DIR/mnist`, or `data/mnist` when the variable is unset.
pub fn mnist_dir() -> PathBuf {
    std::env::var_os("TSDL_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
        .join("mnist")
}

fn load(dir: &Path, prefix: &str, count: usize) -> Result<(Images, Matrix), RunError> {
    let images = dir.join(format!("{prefix}-images-idx3-ubyte"));
    let labels = dir.join(format!("{prefix}-labels-idx1-ubyte"));
    if !images.exists() || !labels.exists() {
        return Err(RunError::MissingData(format!(
            "MNIST files not found in {}; set TSDL_DATA_DIR or run scripts/mnist_from_npm.py",
            dir.display()
        )));
    }
    let all = load_mnist_idx(&images, &labels)?;
    if all.len() < count {
        return Err(RunError::MissingData(format!("{} holds {} images, {count} requested", images.display(), all.len())));
    }
    let idx: Vec<usize> = (0..count).collect();
    let batch = all.select(&idx);
    Ok((to_images(&batch)?, batch.labels))
}

/// `784 × n` pixel columns as a single-channel image batch.
pub fn to_images(batch: &LabeledBatch) -> tsdl_core::Result<Images> {
    let n = batch.len();
    let data = Matrix::new(1, n * SIDE * SIDE, batch.inputs.transpose().into_data())?;
    Images::new(data, n, SIDE, SIDE)
}

pub fn cnn_spec(cfg: &RunConfig) -> tsdl_core::Result<CnnSpec> {
    let mut spec = CnnSpec::from_triples(SIDE, &cfg.conv, cfg.effective_widths())?;
    spec.hidden_activation = cfg.activation;
    Ok(spec)
}

enum Model {
    Weights(WeightParams),
    Targets { t: CnnTargetParams, mode: Untangling },
}

struct MnistTask<'c> {
    cfg: &'c RunConfig,
    spec: CnnSpec,
    train: Images,
    train_labels: Matrix,
    eval: Images,
    eval_labels: Matrix,
    test: Images,
    test_labels: Matrix,
    model: Model,
    opt: OptimizerState,
    batcher: Batcher,
    dropout_rng: Rng64,
}

impl MnistTask<'_> {
    fn weights(&self) -> tsdl_core::Result<WeightParams> {
        match &self.model {
            Model::Weights(w) => Ok(w.clone()),
            Model::Targets { t, mode } => cnn::cnn_targets_to_weights(&self.spec, t, self.cfg.lambda, *mode),
        }
    }

    fn masks(&mut self, batch: usize) -> tsdl_core::Result<Option<Vec<Option<Matrix>>>> {
        if self.cfg.dropout == 0.0 {
            return Ok(None);
        }
        let layers: Vec<usize> = (0..self.spec.conv.len()).collect();
        cnn::conv_dropout_masks(&self.spec, batch, &layers, self.cfg.dropout, &mut self.dropout_rng).map(Some)
    }
}

impl Task for MnistTask<'_> {
    fn step(&mut self, _iteration: usize) -> tsdl_core::Result<()> {
        let idx = self.batcher.next_batch();
        let x = self.train.select(&idx)?;
        let labels = self.train_labels.select_cols(&idx);
        let mx = self.masks(idx.len())?;
        let nbar = match &self.model {
            Model::Targets { t, .. } => Some(t.xbar.batch),
            Model::Weights(_) => None,
        };
        let mxbar = match nbar {
            Some(n) => self.masks(n)?,
            None => None,
        };
        match &mut self.model {
            Model::Weights(w) => {
                let (_, g) = cnn::cnn_weight_loss_and_gradient(&self.spec, w, &x, &labels, mx.as_deref())?;
                self.opt.step(&mut w.layers, &g)
            }
            Model::Targets { t, mode } => {
                let dropout = CnnDropout {
                    x: mx.as_deref(),
                    xbar: mxbar.as_deref(),
                };
                let (_, g) = cnn::cnn_target_loss_and_gradient(&self.spec, t, self.cfg.lambda, *mode, &x, &labels, dropout)?;
                self.opt.step(&mut t.targets, &g)
            }
        }
    }

    fn evaluate(&mut self) -> tsdl_core::Result<Evaluation> {
        let w = self.weights()?;
        let y = cnn::cnn_predict(&self.spec, &w, &self.eval)?;
        let yt = cnn::cnn_predict(&self.spec, &w, &self.test)?;
        Ok(Evaluation {
            loss: self.spec.output_head.loss(&y, &self.eval_labels)?,
            train_acc: super::accuracy(&y, &self.eval_labels),
            test_acc: super::accuracy(&yt, &self.test_labels),
        })
    }
}

/// MNIST classification with a small CNN, reading IDX files from `dir`.
/// Training accuracy and loss are measured on the first 1000 training
/// images.
pub fn run_mnist(cfg: &RunConfig, dir: &Path) -> Result<RunResult, RunError> {
    cfg.validate()?;
    let spec = cnn_spec(cfg)?;
    let (train, train_labels) = load(dir, "train", cfg.train_count)?;
    let (test, test_labels) = load(dir, "t10k", cfg.test_count)?;
    let k = TRAIN_EVAL.min(cfg.train_count);
    let eval = train.slice(0, k)?;
    let eval_labels = train_labels.slice_cols(0, k)?;
    let model = match cfg.param {
        Param::Weight => Model::Weights(cnn::init_cnn_weights(&spec, sub_seed(cfg.seed, 1))?),
        Param::TargetScu | Param::TargetOcu => {
            let mode = if cfg.param == Param::TargetScu { Untangling::Scu } else { Untangling::Ocu };
            let xbar = train.select(&fixed_subset(cfg.train_count, cfg.target_batch, sub_seed(cfg.seed, 2)))?;
            let mut t = cnn::init_cnn_targets(&spec, xbar, cfg.sigma, sub_seed(cfg.seed, 1))?;
            if cfg.project {
                t = cnn::project_cnn_targets(&spec, &t, cfg.lambda, mode)?;
            }
            Model::Targets { t, mode }
        }
    };
    let mut task = MnistTask {
        cfg,
        spec,
        batcher: Batcher::new(cfg.train_count, cfg.batch, sub_seed(cfg.seed, 3)),
        train,
        train_labels,
        eval,
        eval_labels,
        test,
        test_labels,
        model,
        opt: optimizer(cfg),
        dropout_rng: Rng64::seed(sub_seed(cfg.seed, 4)),
    };
    let result = train_loop(cfg, &mut task);
    write_outputs(&result)?;
    Ok(result)
}
