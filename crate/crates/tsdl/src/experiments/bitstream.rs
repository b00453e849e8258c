use tsdl_core::datasets::{gen_delay_adder, gen_delay_bitstream, SequenceBatch};
use tsdl_core::ffnn::{Untangling, WeightParams};
use tsdl_core::rnn::{self, RnnSpec, RnnTargetParams};
use tsdl_core::{Head, OptimizerState};

use super::{optimizer, sub_seed, train_loop, write_outputs, Batcher, Evaluation, RunError, RunResult, Task};
use crate::config::{Experiment, Param, RunConfig};

enum Model {
    Weights(WeightParams),
    Targets { t: RnnTargetParams, mode: Untangling },
}

struct StreamTask<'c> {
    cfg: &'c RunConfig,
    spec: RnnSpec,
    train: SequenceBatch,
    test: SequenceBatch,
    model: Model,
    opt: OptimizerState,
    batcher: Batcher,
}

impl StreamTask<'_> {
    fn weights(&self) -> tsdl_core::Result<WeightParams> {
        match &self.model {
            Model::Weights(w) => Ok(w.clone()),
            Model::Targets { t, mode: Untangling::Scu } => rnn::rnn_targets_to_weights_scu(&self.spec, t, self.cfg.lambda),
            Model::Targets { t, mode: Untangling::Ocu } => rnn::rnn_targets_to_weights_ocu(&self.spec, t, self.cfg.lambda),
        }
    }
}

impl Task for StreamTask<'_> {
    fn step(&mut self, _iteration: usize) -> tsdl_core::Result<()> {
        let batch = self.train.select(&self.batcher.next_batch());
        match &mut self.model {
            Model::Weights(w) => {
                let (_, g) = rnn::rnn_weight_loss_and_gradient(&self.spec, w, &batch.as_ref())?;
                self.opt.step(&mut w.layers, &g)
            }
            Model::Targets { t, mode } => {
                let (_, g) = rnn::rnn_target_loss_and_gradient(&self.spec, t, self.cfg.lambda, *mode, &batch.as_ref())?;
                self.opt.step(&mut t.targets, &g)
            }
        }
    }

    fn evaluate(&mut self) -> tsdl_core::Result<Evaluation> {
        let w = self.weights()?;
        let (loss, train_acc) = rnn::rnn_evaluate(&self.spec, &w, &self.train.as_ref())?;
        let (_, test_acc) = rnn::rnn_evaluate(&self.spec, &w, &self.test.as_ref())?;
        Ok(Evaluation { loss, train_acc, test_acc })
    }
}

/// Single-context-layer network from the `1-h-2` style width list.
pub fn rnn_spec(cfg: &RunConfig) -> tsdl_core::Result<RnnSpec> {
    let widths = cfg.effective_widths();
    let spec = RnnSpec {
        input_width: widths[0],
        layer_widths: widths[1..].to_vec(),
        context_layer: 3,
        hidden_activation: cfg.activation,
        output_head: Head::SoftmaxXent,
    };
    spec.validate()?;
    Ok(spec)
}

fn streams(cfg: &RunConfig, count: usize, seed: u64) -> tsdl_core::Result<SequenceBatch> {
    let len = cfg.effective_stream_len();
    match cfg.experiment {
        Experiment::Adder => gen_delay_adder(cfg.delay, count, len, seed),
        _ => gen_delay_bitstream(cfg.delay, count, len, seed),
    }
}

/// Delayed recall or delayed addition of random bit streams with a
/// recurrent network in weight or target space.
pub fn run_bitstream(cfg: &RunConfig) -> Result<RunResult, RunError> {
    cfg.validate()?;
    let spec = rnn_spec(cfg)?;
    let train = streams(cfg, cfg.train_count, sub_seed(cfg.seed, 10))?;
    let test = streams(cfg, cfg.test_count, sub_seed(cfg.seed, 11))?;
    let model = match cfg.param {
        Param::Weight => Model::Weights(rnn::init_rnn_weights(&spec, sub_seed(cfg.seed, 1))?),
        Param::TargetScu | Param::TargetOcu => {
            let mode = if cfg.param == Param::TargetScu { Untangling::Scu } else { Untangling::Ocu };
            // The first streams of the training set; they are already random.
            let steps = if cfg.target_steps == 0 { train.steps() } else { cfg.target_steps };
            let idx: Vec<usize> = (0..cfg.target_batch).collect();
            let xbar = train.select(&idx).inputs[..steps].to_vec();
            let mut t = rnn::init_rnn_targets(&spec, xbar, cfg.sigma, sub_seed(cfg.seed, 1))?;
            if cfg.project {
                t = rnn::project_rnn_targets(&spec, &t, cfg.lambda, mode)?;
            }
            Model::Targets { t, mode }
        }
    };
    let mut task = StreamTask {
        cfg,
        spec,
        batcher: Batcher::new(train.count(), cfg.batch, sub_seed(cfg.seed, 3)),
        train,
        test,
        model,
        opt: optimizer(cfg),
    };
    let result = train_loop(cfg, &mut task);
    write_outputs(&result)?;
    Ok(result)
}
