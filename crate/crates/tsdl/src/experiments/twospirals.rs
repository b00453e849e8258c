use tsdl_core::datasets::{gen_two_spirals, LabeledBatch};
use tsdl_core::ffnn::{
    self, DropoutPair, NetworkSpec, TargetParams, Untangling, WeightInit, WeightParams,
};
use tsdl_core::loss::softmax;
use tsdl_core::{Head, Matrix, OptimizerState, Rng64};

use super::{fixed_subset, optimizer, sub_seed, train_loop, write_file, write_outputs, Batcher, Evaluation, RunError, RunResult, Task};
use crate::config::{Param, RunConfig};
use crate::plot::Pixmap;

const MAP_SIZE: usize = 200;

enum Model {
    Weights(WeightParams),
    Targets { t: TargetParams, mode: Untangling },
}

struct SpiralTask<'c> {
    cfg: &'c RunConfig,
    spec: NetworkSpec,
    train: LabeledBatch,
    test: LabeledBatch,
    model: Model,
    opt: OptimizerState,
    batcher: Batcher,
    dropout_rng: Rng64,
}

impl SpiralTask<'_> {
    fn weights(&self) -> tsdl_core::Result<WeightParams> {
        match &self.model {
            Model::Weights(w) => Ok(w.clone()),
            Model::Targets { t, mode } => Ok(ffnn::targets_to_weights_masked(&self.spec, t, self.cfg.lambda, *mode, None)?.0),
        }
    }

    fn masks(&mut self, n: usize) -> tsdl_core::Result<Option<Vec<Matrix>>> {
        if self.cfg.dropout == 0.0 {
            return Ok(None);
        }
        ffnn::dropout_masks(&self.spec.hidden_shapes(n), self.cfg.dropout, &mut self.dropout_rng).map(Some)
    }
}

impl Task for SpiralTask<'_> {
    fn step(&mut self, _iteration: usize) -> tsdl_core::Result<()> {
        let idx = self.batcher.next_batch();
        let batch = self.train.select(&idx);
        let mx = self.masks(batch.len())?;
        match &mut self.model {
            Model::Weights(w) => {
                let (_, g) = ffnn::weight_gradient_masked(&self.spec, w, &batch.inputs, &batch.labels, mx.as_deref(), None)?;
                self.opt.step(&mut w.layers, &g)
            }
            Model::Targets { t, mode } => {
                let mode = *mode;
                let nbar = t.xbar.cols();
                let mxbar = if self.cfg.dropout == 0.0 {
                    None
                } else {
                    Some(ffnn::dropout_masks(&self.spec.hidden_shapes(nbar), self.cfg.dropout, &mut self.dropout_rng)?)
                };
                let dropout = DropoutPair {
                    x: mx.as_deref(),
                    xbar: mxbar.as_deref(),
                };
                let (_, g) = ffnn::target_loss_and_gradient(&self.spec, t, self.cfg.lambda, mode, &batch.inputs, &batch.labels, dropout)?;
                self.opt.step(&mut t.targets, &g)
            }
        }
    }

    fn evaluate(&mut self) -> tsdl_core::Result<Evaluation> {
        let w = self.weights()?;
        let tr = ffnn::forward(&self.spec, &w, &self.train.inputs)?;
        let te = ffnn::forward(&self.spec, &w, &self.test.inputs)?;
        Ok(Evaluation {
            loss: self.spec.output_head.loss(tr.output(), &self.train.labels)?,
            train_acc: super::accuracy(tr.output(), &self.train.labels),
            test_acc: super::accuracy(te.output(), &self.test.labels),
        })
    }
}

/// Class-1 probability over `[-1, 1]²` with the training points marked.
pub fn decision_map(spec: &NetworkSpec, w: &WeightParams, train: &LabeledBatch, size: usize) -> tsdl_core::Result<Pixmap> {
    let grid = Matrix::from_fn(2, size * size, |r, k| {
        let (x, y) = Pixmap::centre(size, size, k / size, k % size);
        if r == 0 {
            x
        } else {
            y
        }
    });
    let out = ffnn::forward(spec, w, &grid)?;
    let p = match spec.output_head {
        Head::SoftmaxXent => softmax(out.output()),
        Head::MseLinear => out.output().clone(),
    };
    let row = p.rows() - 1;
    let mut k = 0;
    let mut map = Pixmap::from_fn(size, size, |_, _| {
        k += 1;
        p[(row, k - 1)]
    });
    for (c, class) in train.classes().into_iter().enumerate() {
        let colour = if class == 0 { [220, 40, 40] } else { [40, 90, 220] };
        map.mark(train.inputs[(0, c)], train.inputs[(1, c)], colour);
    }
    Ok(map)
}

pub fn network_spec(cfg: &RunConfig) -> tsdl_core::Result<NetworkSpec> {
    NetworkSpec::new(cfg.effective_widths(), cfg.shortcuts, cfg.activation, Head::SoftmaxXent)
}

/// Two-spirals classification in weight or target space.
pub fn run_two_spirals(cfg: &RunConfig) -> Result<RunResult, RunError> {
    cfg.validate()?;
    let spec = network_spec(cfg)?;
    let (train, test) = gen_two_spirals();
    if cfg.batch > train.len() || cfg.target_batch > train.len() {
        return Err(RunError::MissingData(format!("batch sizes cannot exceed the {} training points", train.len())));
    }
    let model = match cfg.param {
        Param::Weight => Model::Weights(ffnn::init_weights(&spec, WeightInit::Glorot, sub_seed(cfg.seed, 1))?),
        Param::TargetScu | Param::TargetOcu => {
            let mode = if cfg.param == Param::TargetScu { Untangling::Scu } else { Untangling::Ocu };
            let xbar = train.inputs.select_cols(&fixed_subset(train.len(), cfg.target_batch, sub_seed(cfg.seed, 2)));
            let mut t = ffnn::init_targets(&spec, xbar, cfg.sigma, sub_seed(cfg.seed, 1))?;
            if cfg.project {
                t = ffnn::project_targets(&spec, &t, cfg.lambda)?;
            }
            Model::Targets { t, mode }
        }
    };
    let mut task = SpiralTask {
        cfg,
        spec,
        batcher: Batcher::new(train.len(), cfg.batch, sub_seed(cfg.seed, 3)),
        train,
        test,
        model,
        opt: optimizer(cfg),
        dropout_rng: Rng64::seed(sub_seed(cfg.seed, 4)),
    };
    let result = train_loop(cfg, &mut task);
    write_outputs(&result)?;
    if let Some(dir) = &cfg.out {
        if let Ok(w) = task.weights() {
            let map = decision_map(&task.spec, &w, &task.train, MAP_SIZE)?;
            write_file(&dir.join("decision_map.ppm"), &map.to_ppm())?;
        }
    }
    Ok(result)
}
