//! Recurrent networks in weight space and in target space.
//!
//! Layer 1 is the input, layer 2 receives the previous step's activations of
//! the context layer `c_L`, and layers `3..=nL` are ordinary layers. Layer 3
//! reads the bias, the input and the feedback; every later layer reads the
//! bias and the layer below it.
//!
//! Sequences over time are stored "rolled up": a matrix with `n · n_t`
//! columns whose `t`-th block of `n` columns belongs to step `t`.

use alloc::vec;
use alloc::vec::Vec;

use crate::activation::Activation;
use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::ffnn::{self, Untangling, WeightInit, WeightParams};
use crate::loss::{self, Head};
use crate::matrix::Matrix;
use crate::rng::Rng64;

#[derive(Debug, Clone, PartialEq)]
pub struct RnnSpec {
    pub input_width: usize,
    /// Widths of layers `3..=nL`; the last entry is the output width.
    pub layer_widths: Vec<usize>,
    /// `c_L`, the layer fed back to layer 2.
    pub context_layer: usize,
    pub hidden_activation: Activation,
    pub output_head: Head,
}

impl RnnSpec {
    /// One recurrent hidden layer between input and output, e.g. `1-(N+3)-2`.
    pub fn simple(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            input_width: input,
            layer_widths: vec![hidden, output],
            context_layer: 3,
            hidden_activation: Activation::Tanh,
            output_head: Head::SoftmaxXent,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_width == 0 || self.layer_widths.is_empty() || self.layer_widths.contains(&0) {
            return Err(Error::invalid("recurrent layer widths must be positive"));
        }
        if self.context_layer < 3 || self.context_layer > self.n_layers() {
            return Err(Error::invalid(alloc::format!(
                "context layer {} must lie in 3..={}",
                self.context_layer,
                self.n_layers()
            )));
        }
        Ok(())
    }

    pub fn n_layers(&self) -> usize {
        self.layer_widths.len() + 2
    }

    pub fn width(&self, j: usize) -> usize {
        match j {
            1 => self.input_width,
            2 => self.layer_widths[self.context_layer - 3],
            _ => self.layer_widths[j - 3],
        }
    }

    pub fn feeding_layers(&self, j: usize) -> Vec<usize> {
        if j == 3 {
            vec![1, 2]
        } else {
            vec![j - 1]
        }
    }

    pub fn stacked_width(&self, j: usize) -> usize {
        1 + self.feeding_layers(j).iter().map(|&k| self.width(k)).sum::<usize>()
    }

    pub fn activation(&self, j: usize) -> Activation {
        if j == self.n_layers() {
            Activation::Identity
        } else {
            self.hidden_activation
        }
    }

    /// Shapes of `W̃₃ .. W̃_nL`.
    pub fn weight_shapes(&self) -> Vec<(usize, usize)> {
        (3..=self.n_layers()).map(|j| (self.width(j), self.stacked_width(j))).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RnnTargetParams {
    /// Rolled-up `Tⱼ⁽:⁾` for `j = 3..=nL` at index `j − 3`, each `dⱼ × n̄_b·n̄_t`.
    pub targets: Vec<Matrix>,
    /// `X̄⁽¹⁾ .. X̄⁽ⁿ̄ᵗ⁾`, each `d₁ × n̄_b`.
    pub xbar: Vec<Matrix>,
}

impl RnnTargetParams {
    pub fn batch(&self) -> usize {
        self.xbar.first().map_or(0, |m| m.cols())
    }

    pub fn steps(&self) -> usize {
        self.xbar.len()
    }
}

/// Rolled-up sums and activations of one unrolled run.
#[derive(Debug, Clone, PartialEq)]
pub struct RnnTrace {
    /// `Sⱼ⁽:⁾` for `j = 3..=nL` at index `j − 3`.
    pub sums: Vec<Matrix>,
    /// `Aⱼ⁽:⁾` for `j = 1..=nL` at index `j − 1`.
    pub activations: Vec<Matrix>,
}

impl RnnTrace {
    /// Rolled-up output `Y⁽:⁾ = S_nL⁽:⁾`.
    pub fn output(&self) -> &Matrix {
        self.sums.last().expect("at least one weight layer")
    }
}

fn check_sequence(spec: &RnnSpec, x_seq: &[Matrix]) -> Result<usize> {
    let first = x_seq.first().ok_or_else(|| Error::invalid("empty input sequence"))?;
    let n = first.cols();
    for x in x_seq {
        if x.shape() != (spec.input_width, n) {
            return Err(Error::shapes("rnn input", (spec.input_width, n), x.shape()));
        }
    }
    Ok(n)
}

fn check_weight_vars(spec: &RnnSpec, w: &[Var<'_>]) -> Result<()> {
    let shapes = spec.weight_shapes();
    if w.len() != shapes.len() {
        return Err(Error::invalid("wrong number of recurrent weight layers"));
    }
    for (v, s) in w.iter().zip(&shapes) {
        if v.shape() != *s {
            return Err(Error::shapes("rnn weights", *s, v.shape()));
        }
    }
    Ok(())
}

/// Rolled-up sums and activations recorded on a tape.
pub struct TapeRnnTrace<'a> {
    pub sums: Vec<Var<'a>>,
    pub activations: Vec<Var<'a>>,
}

impl<'a> TapeRnnTrace<'a> {
    pub fn output(&self) -> &Var<'a> {
        self.sums.last().expect("at least one weight layer")
    }
}

/// Unrolled recurrent dynamics recorded on a tape. Layers up to `c_L` run
/// step by step; the exit layers after `c_L` see all steps at once.
pub fn tape_rnn_forward<'a>(tape: &'a Tape, spec: &RnnSpec, w: &[Var<'a>], x_seq: &[Matrix]) -> Result<TapeRnnTrace<'a>> {
    spec.validate()?;
    check_weight_vars(spec, w)?;
    forward_up_to(tape, spec, w, x_seq, spec.n_layers())
}

/// Runs layers `1..=nl` only; `w` may hold just the first `nl − 2` weights.
fn forward_up_to<'a>(tape: &'a Tape, spec: &RnnSpec, w: &[Var<'a>], x_seq: &[Matrix], nl: usize) -> Result<TapeRnnTrace<'a>> {
    let n = check_sequence(spec, x_seq)?;
    let cl = spec.context_layer;
    let ones = tape.constant(Matrix::ones(1, n));
    // Per-step values of layers 1..=cL.
    let mut step_sums: Vec<Vec<Var<'a>>> = vec![Vec::with_capacity(x_seq.len()); cl + 1];
    let mut step_acts: Vec<Vec<Var<'a>>> = vec![Vec::with_capacity(x_seq.len()); cl + 1];
    let mut context = tape.constant(Matrix::zeros(spec.width(2), n));
    for x in x_seq {
        let mut acts: Vec<Var<'a>> = Vec::with_capacity(cl);
        acts.push(tape.constant(x.clone()));
        acts.push(context.clone());
        for j in 3..=cl {
            let mut parts = vec![&ones];
            let feeding = spec.feeding_layers(j);
            for &k in &feeding {
                parts.push(&acts[k - 1]);
            }
            let b = tape.concat_rows(&parts)?;
            let s = tape.matmul(&w[j - 3], &b)?;
            let a = tape.activation(&s, spec.activation(j))?;
            step_sums[j].push(s);
            acts.push(a);
        }
        context = acts[cl - 1].clone();
        for (j, a) in acts.into_iter().enumerate() {
            step_acts[j + 1].push(a);
        }
    }
    let mut sums = Vec::with_capacity(nl - 2);
    let mut activations = Vec::with_capacity(nl);
    for j in 1..=cl {
        let refs: Vec<&Var<'a>> = step_acts[j].iter().collect();
        activations.push(tape.concat_cols(&refs)?);
    }
    for j in 3..=cl {
        let refs: Vec<&Var<'a>> = step_sums[j].iter().collect();
        sums.push(tape.concat_cols(&refs)?);
    }
    let all_ones = tape.constant(Matrix::ones(1, n * x_seq.len()));
    for j in cl + 1..=nl {
        let b = tape.concat_rows(&[&all_ones, &activations[j - 2]])?;
        let s = tape.matmul(&w[j - 3], &b)?;
        let a = tape.activation(&s, spec.activation(j))?;
        sums.push(s);
        activations.push(a);
    }
    Ok(TapeRnnTrace { sums, activations })
}

/// Unrolled recurrent dynamics over `x_seq`.
pub fn rnn_forward(spec: &RnnSpec, w: &WeightParams, x_seq: &[Matrix]) -> Result<RnnTrace> {
    let tape = Tape::new();
    let wv: Vec<Var<'_>> = w.layers.iter().map(|m| tape.constant(m.clone())).collect();
    let tr = tape_rnn_forward(&tape, spec, &wv, x_seq)?;
    Ok(RnnTrace {
        sums: tr.sums.iter().map(|v| v.value().clone()).collect(),
        activations: tr.activations.iter().map(|v| v.value().clone()).collect(),
    })
}

/// Splits a rolled-up matrix into its `steps` column blocks.
pub fn unroll(m: &Matrix, steps: usize) -> Result<Vec<Matrix>> {
    if steps == 0 || !m.cols().is_multiple_of(steps) {
        return Err(Error::invalid("column count is not a multiple of the step count"));
    }
    let n = m.cols() / steps;
    (0..steps).map(|t| m.slice_cols(t * n, (t + 1) * n)).collect()
}

/// Concatenates per-step matrices into one rolled-up matrix.
pub fn roll(parts: &[Matrix]) -> Result<Matrix> {
    let refs: Vec<&Matrix> = parts.iter().collect();
    Matrix::concat_cols(&refs)
}

fn check_targets(spec: &RnnSpec, t: &RnnTargetParams) -> Result<()> {
    spec.validate()?;
    let n = check_sequence(spec, &t.xbar)?;
    let cols = n * t.xbar.len();
    if t.targets.len() != spec.n_layers() - 2 {
        return Err(Error::invalid("wrong number of recurrent target matrices"));
    }
    for (i, tj) in t.targets.iter().enumerate() {
        let want = (spec.width(i + 3), cols);
        if tj.shape() != want {
            return Err(Error::shapes("rnn targets", want, tj.shape()));
        }
    }
    Ok(())
}

/// Targets-to-weights map recorded on a tape.
///
/// With [`Untangling::Scu`] the context layer is estimated as `g(T_cL)`,
/// layers are solved in order over the rolled-up stacks, and once `c_L` has
/// been solved the dynamics are rerun over `X̄` to obtain the true inputs
/// of the exit layers. With [`Untangling::Ocu`] every layer carries
/// `g(Tⱼ)` and there is no rerun.
pub fn tape_rnn_targets_to_weights<'a>(
    tape: &'a Tape,
    spec: &RnnSpec,
    targets: &[Var<'a>],
    xbar: &[Matrix],
    lambda: f64,
    mode: Untangling,
) -> Result<Vec<Var<'a>>> {
    spec.validate()?;
    let n = check_sequence(spec, xbar)?;
    let steps = xbar.len();
    let nl = spec.n_layers();
    let cl = spec.context_layer;
    if targets.len() != nl - 2 {
        return Err(Error::invalid("wrong number of recurrent target variables"));
    }
    let cols = n * steps;
    let ones = tape.constant(Matrix::ones(1, cols));
    let mut acts: Vec<Var<'a>> = Vec::with_capacity(nl);
    acts.push(tape.constant(roll(xbar)?));
    let context_estimate = tape.activation(&targets[cl - 3], spec.activation(cl))?;
    let a2 = if steps == 1 {
        tape.constant(Matrix::zeros(spec.width(2), n))
    } else {
        let zero = tape.constant(Matrix::zeros(spec.width(2), n));
        let head = tape.slice_cols(&context_estimate, 0, n * (steps - 1))?;
        tape.concat_cols(&[&zero, &head])?
    };
    acts.push(a2);
    let mut weights: Vec<Var<'a>> = Vec::with_capacity(nl - 2);
    for j in 3..=nl {
        let mut parts = vec![&ones];
        let feeding = spec.feeding_layers(j);
        for &k in &feeding {
            parts.push(&acts[k - 1]);
        }
        let b = tape.concat_rows(&parts)?;
        let tj = &targets[j - 3];
        let w = tape.least_squares(tj, &b, lambda)?;
        let a = match mode {
            Untangling::Scu => tape.activation(&tape.matmul(&w, &b)?, spec.activation(j))?,
            Untangling::Ocu => tape.activation(tj, spec.activation(j))?,
        };
        weights.push(w);
        acts.push(a);
        if mode == Untangling::Scu && j == cl && cl < nl {
            // Rerun the dynamics up to the context layer with the weights
            // solved so far, replacing the estimated activations.
            let rerun = forward_up_to(tape, spec, &weights, xbar, cl)?;
            for (k, a) in rerun.activations.into_iter().enumerate().skip(1) {
                acts[k] = a;
            }
        }
    }
    Ok(weights)
}

fn map_constant(spec: &RnnSpec, t: &RnnTargetParams, lambda: f64, mode: Untangling) -> Result<WeightParams> {
    check_targets(spec, t)?;
    let tape = Tape::new();
    let tv: Vec<Var<'_>> = t.targets.iter().map(|m| tape.constant(m.clone())).collect();
    let w = tape_rnn_targets_to_weights(&tape, spec, &tv, &t.xbar, lambda, mode)?;
    Ok(WeightParams {
        layers: w.iter().map(|v| v.value().clone()).collect(),
    })
}

/// Targets to weights with sequential untangling and the context correction.
pub fn rnn_targets_to_weights_scu(spec: &RnnSpec, t: &RnnTargetParams, lambda: f64) -> Result<WeightParams> {
    map_constant(spec, t, lambda, Untangling::Scu)
}

/// Fully optimistic targets to weights.
pub fn rnn_targets_to_weights_ocu(spec: &RnnSpec, t: &RnnTargetParams, lambda: f64) -> Result<WeightParams> {
    map_constant(spec, t, lambda, Untangling::Ocu)
}

/// Truncated-normal rolled-up targets.
pub fn init_rnn_targets(spec: &RnnSpec, xbar: Vec<Matrix>, sigma: f64, seed: u64) -> Result<RnnTargetParams> {
    spec.validate()?;
    let n = check_sequence(spec, &xbar)?;
    if !(sigma > 0.0) {
        return Err(Error::invalid("sigma must be positive"));
    }
    let cols = n * xbar.len();
    let mut rng = Rng64::seed(seed);
    let targets = (3..=spec.n_layers())
        .map(|j| rng.truncated_normal_matrix(spec.width(j), cols, sigma))
        .collect();
    Ok(RnnTargetParams { targets, xbar })
}

/// Replaces every `Tⱼ⁽:⁾` with the sums the solved weights actually produce
/// when the network is run over `X̄`.
pub fn project_rnn_targets(spec: &RnnSpec, t: &RnnTargetParams, lambda: f64, mode: Untangling) -> Result<RnnTargetParams> {
    let w = map_constant(spec, t, lambda, mode)?;
    let trace = rnn_forward(spec, &w, &t.xbar)?;
    Ok(RnnTargetParams {
        targets: trace.sums,
        xbar: t.xbar.clone(),
    })
}

/// Glorot-initialised weights with zero biases.
pub fn init_rnn_weights(spec: &RnnSpec, seed: u64) -> Result<WeightParams> {
    spec.validate()?;
    let mut rng = Rng64::seed(seed);
    let layers = spec
        .weight_shapes()
        .into_iter()
        .map(|(rows, cols)| ffnn::init_layer(&mut rng, rows, cols, WeightInit::Glorot))
        .collect();
    Ok(WeightParams { layers })
}

/// A batch of sequences with per-step loss weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceRef<'s> {
    pub inputs: &'s [Matrix],
    pub labels: &'s [Matrix],
    /// One weight per step; zero excludes the step from loss and accuracy.
    pub mask: &'s [f64],
}

impl SequenceRef<'_> {
    fn check(&self) -> Result<usize> {
        if self.inputs.len() != self.labels.len() || self.inputs.len() != self.mask.len() {
            return Err(Error::invalid("inputs, labels and mask must have one entry per step"));
        }
        Ok(self.inputs.first().map_or(0, |m| m.cols()))
    }

    /// Per-column weights of the rolled-up output.
    pub fn column_weights(&self) -> Vec<f64> {
        let n = self.inputs.first().map_or(0, |m| m.cols());
        self.mask.iter().flat_map(|&w| core::iter::repeat_n(w, n)).collect()
    }
}

fn tape_masked_loss<'a>(tape: &'a Tape, spec: &RnnSpec, y: &Var<'a>, seq: &SequenceRef<'_>) -> Result<Var<'a>> {
    seq.check()?;
    let labels = roll(seq.labels)?;
    let w = seq.column_weights();
    match spec.output_head {
        Head::SoftmaxXent => tape.softmax_xent(y, &labels, Some(&w)),
        Head::MseLinear => tape.mse(y, &labels, Some(&w)),
    }
}

/// Masked loss and its weight gradient (back-propagation through time).
pub fn rnn_weight_loss_and_gradient(spec: &RnnSpec, w: &WeightParams, seq: &SequenceRef<'_>) -> Result<(f64, Vec<Matrix>)> {
    let tape = Tape::new();
    let wv: Vec<Var<'_>> = w.layers.iter().map(|m| tape.leaf(m.clone())).collect();
    let tr = tape_rnn_forward(&tape, spec, &wv, seq.inputs)?;
    let loss = tape_masked_loss(&tape, spec, tr.output(), seq)?;
    let g = tape.backward(&loss)?;
    Ok((loss.value()[(0, 0)], g.wrt(&wv)))
}

/// Masked loss `L'(T)` and `∂L'/∂T` through the targets-to-weights map.
pub fn rnn_target_loss_and_gradient(
    spec: &RnnSpec,
    t: &RnnTargetParams,
    lambda: f64,
    mode: Untangling,
    seq: &SequenceRef<'_>,
) -> Result<(f64, Vec<Matrix>)> {
    check_targets(spec, t)?;
    let tape = Tape::new();
    let tv: Vec<Var<'_>> = t.targets.iter().map(|m| tape.leaf(m.clone())).collect();
    let w = tape_rnn_targets_to_weights(&tape, spec, &tv, &t.xbar, lambda, mode)?;
    let tr = tape_rnn_forward(&tape, spec, &w, seq.inputs)?;
    let loss = tape_masked_loss(&tape, spec, tr.output(), seq)?;
    let g = tape.backward(&loss)?;
    Ok((loss.value()[(0, 0)], g.wrt(&tv)))
}

/// Masked loss and masked accuracy of given weights.
pub fn rnn_evaluate(spec: &RnnSpec, w: &WeightParams, seq: &SequenceRef<'_>) -> Result<(f64, f64)> {
    seq.check()?;
    let trace = rnn_forward(spec, w, seq.inputs)?;
    let labels = roll(seq.labels)?;
    let cw = seq.column_weights();
    let (l, _) = spec.output_head.loss_and_grad(trace.output(), &labels, Some(&cw))?;
    Ok((l, loss::accuracy(trace.output(), &labels, Some(&cw))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ffnn::NetworkSpec;

    fn random_weights(spec: &RnnSpec, seed: u64) -> WeightParams {
        let mut rng = Rng64::seed(seed);
        WeightParams {
            layers: spec.weight_shapes().iter().map(|&(r, c)| rng.normal_matrix(r, c).scale(0.7)).collect(),
        }
    }

    fn random_seq(d: usize, n: usize, steps: usize, seed: u64) -> Vec<Matrix> {
        let mut rng = Rng64::seed(seed);
        (0..steps).map(|_| rng.normal_matrix(d, n)).collect()
    }

    /// Scalar-loop unrolled evaluation of a one-hidden-layer network.
    fn scalar_simple(w: &WeightParams, x_seq: &[Matrix], hidden: usize) -> Vec<Matrix> {
        let (w3, w4) = (&w.layers[0], &w.layers[1]);
        let n = x_seq[0].cols();
        let d_in = x_seq[0].rows();
        let mut h = vec![vec![0.0; n]; hidden];
        let mut out = Vec::new();
        for x in x_seq {
            let mut nh = vec![vec![0.0; n]; hidden];
            for i in 0..hidden {
                for p in 0..n {
                    let mut s = w3[(i, 0)];
                    for r in 0..d_in {
                        s += w3[(i, 1 + r)] * x[(r, p)];
                    }
                    for r in 0..hidden {
                        s += w3[(i, 1 + d_in + r)] * h[r][p];
                    }
                    nh[i][p] = libm::tanh(s);
                }
            }
            h = nh;
            out.push(Matrix::from_fn(w4.rows(), n, |o, p| {
                let mut s = w4[(o, 0)];
                for r in 0..hidden {
                    s += w4[(o, 1 + r)] * h[r][p];
                }
                s
            }));
        }
        out
    }

    #[test]
    fn zero_weights_give_zero_outputs() {
        let spec = RnnSpec::simple(1, 3, 2);
        let w = WeightParams {
            layers: spec.weight_shapes().iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
        };
        let tr = rnn_forward(&spec, &w, &random_seq(1, 4, 3, 1)).unwrap();
        assert_eq!(tr.output().max_abs(), 0.0);
    }

    #[test]
    fn zero_input_keeps_hidden_state_at_zero() {
        let spec = RnnSpec::simple(1, 3, 2);
        let mut w3 = Matrix::zeros(3, 5);
        for i in 0..3 {
            w3[(i, 2 + i)] = 1.0;
        }
        let w = WeightParams {
            layers: vec![w3, Matrix::zeros(2, 4)],
        };
        let xs: Vec<Matrix> = (0..4).map(|_| Matrix::zeros(1, 2)).collect();
        let tr = rnn_forward(&spec, &w, &xs).unwrap();
        assert_eq!(tr.activations[2].max_abs(), 0.0);
    }

    #[test]
    fn forward_matches_scalar_unroll() {
        let spec = RnnSpec::simple(1, 4, 2);
        let w = random_weights(&spec, 2);
        let xs = random_seq(1, 3, 5, 3);
        let tr = rnn_forward(&spec, &w, &xs).unwrap();
        let ys = unroll(tr.output(), 5).unwrap();
        for (a, b) in ys.iter().zip(scalar_simple(&w, &xs, 4)) {
            assert!(a.sub(&b).unwrap().max_abs() < 1e-12);
        }
    }

    fn captured_targets(spec: &RnnSpec, w: &WeightParams, xbar: Vec<Matrix>) -> RnnTargetParams {
        let tr = rnn_forward(spec, w, &xbar).unwrap();
        RnnTargetParams { targets: tr.sums, xbar }
    }

    #[test]
    fn round_trip_recovers_weights() {
        for spec in [
            RnnSpec::simple(1, 4, 2),
            RnnSpec {
                input_width: 2,
                layer_widths: vec![3, 3, 2],
                context_layer: 4,
                hidden_activation: Activation::Tanh,
                output_head: Head::SoftmaxXent,
            },
        ] {
            let w0 = random_weights(&spec, 4);
            let t = captured_targets(&spec, &w0, random_seq(spec.input_width, 6, 5, 5));
            let w = rnn_targets_to_weights_scu(&spec, &t, 1e-10).unwrap();
            for (a, b) in w.layers.iter().zip(&w0.layers) {
                assert!(a.sub(b).unwrap().max_abs() < 1e-6, "{:?} {}", spec.layer_widths, a.sub(b).unwrap().max_abs());
            }
            let w = rnn_targets_to_weights_ocu(&spec, &t, 1e-10).unwrap();
            for (a, b) in w.layers.iter().zip(&w0.layers) {
                assert!(a.sub(b).unwrap().max_abs() < 1e-6);
            }
        }
    }

    #[test]
    fn zero_targets_give_zero_weights() {
        let spec = RnnSpec::simple(1, 3, 2);
        let xbar = random_seq(1, 4, 3, 6);
        let t = RnnTargetParams {
            targets: vec![Matrix::zeros(3, 12), Matrix::zeros(2, 12)],
            xbar,
        };
        assert!(rnn_targets_to_weights_scu(&spec, &t, 0.1).unwrap().layers.iter().all(|m| m.max_abs() == 0.0));
        assert!(rnn_targets_to_weights_ocu(&spec, &t, 0.1).unwrap().layers.iter().all(|m| m.max_abs() == 0.0));
    }

    #[test]
    fn single_step_with_output_context_is_feed_forward() {
        let spec = RnnSpec {
            input_width: 2,
            layer_widths: vec![3, 2],
            context_layer: 4,
            hidden_activation: Activation::Tanh,
            output_head: Head::SoftmaxXent,
        };
        let mut rng = Rng64::seed(7);
        let xbar = vec![rng.normal_matrix(2, 8)];
        let t = init_rnn_targets(&spec, xbar.clone(), 1.0, 8).unwrap();
        let w = rnn_targets_to_weights_scu(&spec, &t, 0.01).unwrap();
        // Feed-forward net with inputs [x; 0]: the zero feedback rows take
        // no weight under the regularised solve.
        let ff = NetworkSpec::new(vec![4, 3, 2], false, Activation::Tanh, Head::SoftmaxXent).unwrap();
        let x_ff = Matrix::concat_rows(&[&xbar[0], &Matrix::zeros(2, 8)]).unwrap();
        let tp = ffnn::TargetParams {
            targets: t.targets.clone(),
            xbar: x_ff,
        };
        let (wf, _) = ffnn::targets_to_weights_scu(&ff, &tp, 0.01).unwrap();
        for (a, b) in w.layers.iter().zip(&wf.layers) {
            assert!(a.sub(b).unwrap().max_abs() < 1e-12);
        }
    }

    #[test]
    fn ocu_differs_from_scu_on_random_targets() {
        let spec = RnnSpec::simple(1, 3, 2);
        let t = init_rnn_targets(&spec, random_seq(1, 5, 4, 9), 1.0, 10).unwrap();
        let a = rnn_targets_to_weights_scu(&spec, &t, 0.1).unwrap();
        let b = rnn_targets_to_weights_ocu(&spec, &t, 0.1).unwrap();
        let d: f64 = a.layers.iter().zip(&b.layers).map(|(x, y)| x.sub(y).unwrap().frobenius_norm()).sum();
        assert!(d > 0.0);
    }

    #[test]
    fn gram_side_is_independent_of_steps() {
        let spec = RnnSpec::simple(1, 4, 2);
        for steps in [1, 3, 7] {
            let xbar = random_seq(1, 5, steps, 11);
            let t = init_rnn_targets(&spec, xbar, 1.0, 12).unwrap();
            let tape = Tape::new();
            let tv: Vec<Var<'_>> = t.targets.iter().map(|m| tape.leaf(m.clone())).collect();
            let before = tape.len();
            tape_rnn_targets_to_weights(&tape, &spec, &tv, &t.xbar, 0.1, Untangling::Scu).unwrap();
            assert!(tape.len() > before);
            // The stacked input of layer 3 has 1 + 1 + 4 rows for any step count.
            assert_eq!(spec.stacked_width(3), 6);
        }
    }

    #[test]
    fn masked_steps_have_zero_gradient() {
        let spec = RnnSpec::simple(1, 3, 2);
        let w = random_weights(&spec, 13);
        let xs = random_seq(1, 4, 3, 14);
        let labels: Vec<Matrix> = (0..3).map(|_| Matrix::from_fn(2, 4, |r, _| if r == 0 { 1.0 } else { 0.0 })).collect();
        let tape = Tape::new();
        let wv: Vec<Var<'_>> = w.layers.iter().map(|m| tape.constant(m.clone())).collect();
        let tr = tape_rnn_forward(&tape, &spec, &wv, &xs).unwrap();
        let y = tape.leaf(tr.output().value().clone());
        let seq = SequenceRef {
            inputs: &xs,
            labels: &labels,
            mask: &[0.0, 1.0, 1.0],
        };
        let loss = tape_masked_loss(&tape, &spec, &y, &seq).unwrap();
        let g = tape.backward(&loss).unwrap().get(&y);
        assert_eq!(g.slice_cols(0, 4).unwrap().max_abs(), 0.0);
        assert!(g.slice_cols(4, 12).unwrap().max_abs() > 0.0);
    }
}
