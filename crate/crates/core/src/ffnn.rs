//! Layered feed-forward networks in weight space and in target space.
//!
//! Layers are numbered from 1 (the input) to `nL` (the output). Weight
//! layers are `2..=nL`; `W̃ⱼ` stacks the bias column first, followed by one
//! block per feeding layer in increasing layer order. The stacked input
//! `B̃ⱼ` is built the same way from a row of ones and the activations.

use alloc::vec;
use alloc::vec::Vec;

use crate::activation::Activation;
use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::linalg;
use crate::loss::Head;
use crate::matrix::Matrix;
use crate::rng::Rng64;

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    /// `d₁ .. d_nL`.
    pub layer_widths: Vec<usize>,
    /// Every layer feeds every later layer.
    pub all_shortcuts: bool,
    pub hidden_activation: Activation,
    pub output_head: Head,
}

/// How targets of earlier layers are carried forward during the solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Untangling {
    /// Carry the achieved activations `g(Sⱼ)`.
    Scu,
    /// Carry the intended activations `g(Tⱼ)`.
    Ocu,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightParams {
    /// `W̃ⱼ` for `j = 2..=nL`, at index `j − 2`.
    pub layers: Vec<Matrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetParams {
    /// `Tⱼ` for `j = 2..=nL`, at index `j − 2`.
    pub targets: Vec<Matrix>,
    /// Fixed input used only by the targets-to-weights solve.
    pub xbar: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// `Sⱼ` for `j = 2..=nL`, at index `j − 2`.
    pub sums: Vec<Matrix>,
    /// `Aⱼ` for `j = 1..=nL`, at index `j − 1`. `A₁` is the input.
    pub activations: Vec<Matrix>,
}

impl ForwardTrace {
    /// Network output `Y = S_nL` (the head nonlinearity lives in the loss).
    pub fn output(&self) -> &Matrix {
        self.sums.last().expect("a network has at least one weight layer")
    }
}

/// Weight initialisation schemes for weight-space training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightInit {
    /// Uniform on `±sqrt(6 / (fan_in + fan_out))`.
    Glorot,
    /// Normal with std `sqrt(2 / fan_in)`.
    He,
}

impl NetworkSpec {
    pub fn new(
        layer_widths: Vec<usize>,
        all_shortcuts: bool,
        hidden_activation: Activation,
        output_head: Head,
    ) -> Result<Self> {
        let spec = Self {
            layer_widths,
            all_shortcuts,
            hidden_activation,
            output_head,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 {
            return Err(Error::invalid("a network needs at least two layers"));
        }
        if self.layer_widths.contains(&0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        Ok(())
    }

    /// `nL`.
    pub fn n_layers(&self) -> usize {
        self.layer_widths.len()
    }

    /// Width of layer `j` (1-based).
    pub fn width(&self, j: usize) -> usize {
        self.layer_widths[j - 1]
    }

    /// Non-bias layers feeding layer `j`, in increasing order.
    pub fn feeding_layers(&self, j: usize) -> Vec<usize> {
        if self.all_shortcuts {
            (1..j).collect()
        } else {
            vec![j - 1]
        }
    }

    /// Rows of `B̃ⱼ`: `1 + Σ d_k` over the feeding layers.
    pub fn stacked_width(&self, j: usize) -> usize {
        1 + self.feeding_layers(j).iter().map(|&k| self.width(k)).sum::<usize>()
    }

    /// Trace-level activation of layer `j`; the output layer is linear.
    pub fn activation(&self, j: usize) -> Activation {
        if j == self.n_layers() {
            Activation::Identity
        } else {
            self.hidden_activation
        }
    }

    pub fn weight_shapes(&self) -> Vec<(usize, usize)> {
        (2..=self.n_layers()).map(|j| (self.width(j), self.stacked_width(j))).collect()
    }

    /// Shapes of the hidden activations `A₂ .. A_{nL−1}` for a batch width.
    pub fn hidden_shapes(&self, batch: usize) -> Vec<(usize, usize)> {
        (2..self.n_layers()).map(|j| (self.width(j), batch)).collect()
    }

    pub fn weight_count(&self) -> usize {
        self.weight_shapes().iter().map(|(r, c)| r * c).sum()
    }
}

/// `B̃ⱼ` from the activations `A₁ ..` (index `k − 1`).
pub fn stack_inputs(spec: &NetworkSpec, j: usize, activations: &[Matrix]) -> Result<Matrix> {
    let n = activations[0].cols();
    let ones = Matrix::ones(1, n);
    let mut parts: Vec<&Matrix> = vec![&ones];
    for k in spec.feeding_layers(j) {
        parts.push(&activations[k - 1]);
    }
    Matrix::concat_rows(&parts)
}

fn check_weights(spec: &NetworkSpec, w: &WeightParams) -> Result<()> {
    let shapes = spec.weight_shapes();
    if w.layers.len() != shapes.len() {
        return Err(Error::invalid(alloc::format!(
            "expected {} weight layers, got {}",
            shapes.len(),
            w.layers.len()
        )));
    }
    for (m, s) in w.layers.iter().zip(&shapes) {
        if m.shape() != *s {
            return Err(Error::shapes("weights", *s, m.shape()));
        }
    }
    Ok(())
}

fn check_targets(spec: &NetworkSpec, t: &TargetParams) -> Result<()> {
    if t.xbar.rows() != spec.width(1) {
        return Err(Error::shapes("xbar", (spec.width(1), t.xbar.cols()), t.xbar.shape()));
    }
    if t.targets.len() != spec.n_layers() - 1 {
        return Err(Error::invalid(alloc::format!(
            "expected {} target matrices, got {}",
            spec.n_layers() - 1,
            t.targets.len()
        )));
    }
    for (i, tj) in t.targets.iter().enumerate() {
        let want = (spec.width(i + 2), t.xbar.cols());
        if tj.shape() != want {
            return Err(Error::shapes("targets", want, tj.shape()));
        }
    }
    Ok(())
}

fn check_masks(spec: &NetworkSpec, masks: Option<&[Matrix]>, batch: usize) -> Result<()> {
    if let Some(m) = masks {
        let shapes = spec.hidden_shapes(batch);
        if m.len() != shapes.len() || m.iter().zip(&shapes).any(|(a, s)| a.shape() != *s) {
            return Err(Error::invalid("dropout masks do not match the hidden layers"));
        }
    }
    Ok(())
}

fn apply_mask(a: Matrix, masks: Option<&[Matrix]>, j: usize, n_layers: usize) -> Result<Matrix> {
    match masks {
        Some(m) if j < n_layers => a.hadamard(&m[j - 2]),
        _ => Ok(a),
    }
}

/// Feed-forward pass.
pub fn forward(spec: &NetworkSpec, w: &WeightParams, x: &Matrix) -> Result<ForwardTrace> {
    forward_masked(spec, w, x, None)
}

/// Feed-forward pass with optional dropout masks on the hidden activations.
pub fn forward_masked(spec: &NetworkSpec, w: &WeightParams, x: &Matrix, masks: Option<&[Matrix]>) -> Result<ForwardTrace> {
    spec.validate()?;
    check_weights(spec, w)?;
    if x.rows() != spec.width(1) {
        return Err(Error::shapes("forward", (spec.width(1), x.cols()), x.shape()));
    }
    check_masks(spec, masks, x.cols())?;
    let nl = spec.n_layers();
    let mut activations = vec![x.clone()];
    let mut sums = Vec::with_capacity(nl - 1);
    for j in 2..=nl {
        let b = stack_inputs(spec, j, &activations)?;
        let s = w.layers[j - 2].matmul(&b)?;
        let a = apply_mask(spec.activation(j).apply(&s), masks, j, nl)?;
        sums.push(s);
        activations.push(a);
    }
    Ok(ForwardTrace { sums, activations })
}

/// Targets to weights, carrying achieved activations forward.
pub fn targets_to_weights_scu(spec: &NetworkSpec, t: &TargetParams, lambda: f64) -> Result<(WeightParams, ForwardTrace)> {
    targets_to_weights_masked(spec, t, lambda, Untangling::Scu, None)
}

/// Targets to weights, carrying `g(Tⱼ)` forward.
pub fn targets_to_weights_ocu(spec: &NetworkSpec, t: &TargetParams, lambda: f64) -> Result<WeightParams> {
    targets_to_weights_masked(spec, t, lambda, Untangling::Ocu, None).map(|(w, _)| w)
}

/// Targets to weights under either untangling rule. The returned trace holds
/// the achieved `Sⱼ = W̃ⱼB̃ⱼ` and the activations that were carried forward.
pub fn targets_to_weights_masked(
    spec: &NetworkSpec,
    t: &TargetParams,
    lambda: f64,
    mode: Untangling,
    masks: Option<&[Matrix]>,
) -> Result<(WeightParams, ForwardTrace)> {
    spec.validate()?;
    check_targets(spec, t)?;
    check_masks(spec, masks, t.xbar.cols())?;
    let nl = spec.n_layers();
    let mut activations = vec![t.xbar.clone()];
    let mut sums = Vec::with_capacity(nl - 1);
    let mut layers = Vec::with_capacity(nl - 1);
    for j in 2..=nl {
        let b = stack_inputs(spec, j, &activations)?;
        let tj = &t.targets[j - 2];
        let w = tj.matmul(&linalg::reg_pseudoinverse(&b, lambda)?)?;
        let s = w.matmul(&b)?;
        let carried = match mode {
            Untangling::Scu => &s,
            Untangling::Ocu => tj,
        };
        let a = apply_mask(spec.activation(j).apply(carried), masks, j, nl)?;
        layers.push(w);
        sums.push(s);
        activations.push(a);
    }
    Ok((WeightParams { layers }, ForwardTrace { sums, activations }))
}

/// Loss and `∂L/∂W̃ⱼ` by back-propagation.
pub fn weight_gradient(spec: &NetworkSpec, w: &WeightParams, x: &Matrix, labels: &Matrix) -> Result<(f64, Vec<Matrix>)> {
    weight_gradient_masked(spec, w, x, labels, None, None)
}

/// [`weight_gradient`] with optional dropout masks and loss column weights.
pub fn weight_gradient_masked(
    spec: &NetworkSpec,
    w: &WeightParams,
    x: &Matrix,
    labels: &Matrix,
    masks: Option<&[Matrix]>,
    col_weights: Option<&[f64]>,
) -> Result<(f64, Vec<Matrix>)> {
    let trace = forward_masked(spec, w, x, masks)?;
    let (loss, dy) = spec.output_head.loss_and_grad(trace.output(), labels, col_weights)?;
    let nl = spec.n_layers();
    let mut delta_a: Vec<Matrix> = trace.activations.iter().map(|a| Matrix::zeros(a.rows(), a.cols())).collect();
    delta_a[nl - 1] = dy;
    let mut grads = vec![Matrix::zeros(0, 0); nl - 1];
    for j in (2..=nl).rev() {
        let s = &trace.sums[j - 2];
        let mut ds = delta_a[j - 1].hadamard(&spec.activation(j).derivative_matrix(s))?;
        if let (Some(m), true) = (masks, j < nl) {
            ds = ds.hadamard(&m[j - 2])?;
        }
        let b = stack_inputs(spec, j, &trace.activations)?;
        grads[j - 2] = ds.matmul_nt(&b)?;
        let db = w.layers[j - 2].matmul_tn(&ds)?;
        scatter_stack(spec, j, &db, &mut delta_a)?;
    }
    Ok((loss, grads))
}

/// Adds the non-bias row blocks of `δB̃ⱼ` into the matching `δA_k`.
fn scatter_stack(spec: &NetworkSpec, j: usize, db: &Matrix, delta_a: &mut [Matrix]) -> Result<()> {
    let mut row = 1;
    for k in spec.feeding_layers(j) {
        let d = spec.width(k);
        if k >= 2 {
            let block = db.slice_rows(row, row + d)?;
            delta_a[k - 1].add_assign(&block)?;
        }
        row += d;
    }
    Ok(())
}

/// `∂L'/∂Tⱼ` from `∂L/∂W̃ⱼ` for the sequential untangling map, walking the
/// layers from the output back to layer 2.
pub fn target_gradient_manual(
    spec: &NetworkSpec,
    t: &TargetParams,
    lambda: f64,
    dl_dw: &[Matrix],
    scu_trace: &ForwardTrace,
) -> Result<Vec<Matrix>> {
    spec.validate()?;
    check_targets(spec, t)?;
    let nl = spec.n_layers();
    if scu_trace.sums.len() != nl - 1 || scu_trace.activations.len() != nl {
        return Err(Error::invalid("trace does not belong to this network"));
    }
    for (s, tj) in scu_trace.sums.iter().zip(&t.targets) {
        if s.shape() != tj.shape() {
            return Err(Error::shapes("target_gradient_manual", tj.shape(), s.shape()));
        }
    }
    let shapes = spec.weight_shapes();
    if dl_dw.len() != shapes.len() || dl_dw.iter().zip(&shapes).any(|(g, s)| g.shape() != *s) {
        return Err(Error::invalid("weight gradients do not match the network"));
    }
    let mut delta_a: Vec<Matrix> = scu_trace.activations.iter().map(|a| Matrix::zeros(a.rows(), a.cols())).collect();
    let mut out = vec![Matrix::zeros(0, 0); nl - 1];
    for j in (2..=nl).rev() {
        let s = &scu_trace.sums[j - 2];
        let tj = &t.targets[j - 2];
        let ds = delta_a[j - 1].hadamard(&spec.activation(j).derivative_matrix(s))?;
        let b = stack_inputs(spec, j, &scu_trace.activations)?;
        let b_pinv = linalg::reg_pseudoinverse(&b, lambda)?;
        let w = tj.matmul(&b_pinv)?;
        // M = ∂L/∂W̃ⱼ + δSⱼ B̃ⱼᵀ
        let m = dl_dw[j - 2].add(&ds.matmul_nt(&b)?)?;
        // ∂L'/∂Tⱼ = M (B̃ⱼ†)ᵀ
        let dt = m.matmul_nt(&b_pinv)?;
        // δB̃ⱼ = W̃ⱼᵀ(δSⱼ − ∂L'/∂Tⱼ) + (B̃B̃ᵀ + λI)⁻¹ Mᵀ (Tⱼ − Sⱼ)
        let mut db = w.matmul_tn(&ds.sub(&dt)?)?;
        let resid = m.matmul_tn(&tj.sub(s)?)?;
        let corr = linalg::spd_solve(&linalg::regularized_gram(&b, lambda), &resid)?;
        db.add_assign(&corr)?;
        scatter_stack(spec, j, &db, &mut delta_a)?;
        out[j - 2] = dt;
    }
    Ok(out)
}

/// Truncated-normal targets (±2σ), deterministic in `seed`.
pub fn init_targets(spec: &NetworkSpec, xbar: Matrix, sigma: f64, seed: u64) -> Result<TargetParams> {
    spec.validate()?;
    if !(sigma > 0.0) {
        return Err(Error::invalid("sigma must be positive"));
    }
    if xbar.rows() != spec.width(1) {
        return Err(Error::shapes("init_targets", (spec.width(1), xbar.cols()), xbar.shape()));
    }
    let mut rng = Rng64::seed(seed);
    let n = xbar.cols();
    let targets = (2..=spec.n_layers())
        .map(|j| rng.truncated_normal_matrix(spec.width(j), n, sigma))
        .collect();
    Ok(TargetParams { targets, xbar })
}

/// Replaces every `Tⱼ` with the `Sⱼ` achieved by the sequential solve.
pub fn project_targets(spec: &NetworkSpec, t: &TargetParams, lambda: f64) -> Result<TargetParams> {
    let (_, trace) = targets_to_weights_scu(spec, t, lambda)?;
    Ok(TargetParams {
        targets: trace.sums,
        xbar: t.xbar.clone(),
    })
}

/// Inverted-dropout keep masks, scaled by `1 / (1 − rate)`.
pub fn dropout_masks(shapes: &[(usize, usize)], rate: f64, rng: &mut Rng64) -> Result<Vec<Matrix>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(alloc::format!("dropout rate must be in [0, 1), got {rate}")));
    }
    let keep = 1.0 / (1.0 - rate);
    Ok(shapes
        .iter()
        .map(|&(r, c)| {
            if rate == 0.0 {
                Matrix::ones(r, c)
            } else {
                Matrix::from_fn(r, c, |_, _| if rng.uniform() < rate { 0.0 } else { keep })
            }
        })
        .collect())
}

/// Random weights; biases start at zero.
pub fn init_weights(spec: &NetworkSpec, scheme: WeightInit, seed: u64) -> Result<WeightParams> {
    spec.validate()?;
    let mut rng = Rng64::seed(seed);
    let layers = (2..=spec.n_layers())
        .map(|j| init_layer(&mut rng, spec.width(j), spec.stacked_width(j), scheme))
        .collect();
    Ok(WeightParams { layers })
}

/// One `fan_out x cols` weight matrix whose first column is a zero bias.
pub(crate) fn init_layer(rng: &mut Rng64, fan_out: usize, cols: usize, scheme: WeightInit) -> Matrix {
    let fan_in = cols - 1;
    Matrix::from_fn(fan_out, cols, |_, c| {
        if c == 0 {
            return 0.0;
        }
        match scheme {
            WeightInit::Glorot => {
                let a = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
                (2.0 * rng.uniform() - 1.0) * a
            }
            WeightInit::He => rng.normal() * libm::sqrt(2.0 / fan_in as f64),
        }
    })
}

/// Records the targets-to-weights map on a tape. `targets` are tape
/// variables for `T₂ .. T_nL`; returns the weight variables.
pub fn tape_targets_to_weights<'a>(
    tape: &'a Tape,
    spec: &NetworkSpec,
    targets: &[Var<'a>],
    xbar: &Matrix,
    lambda: f64,
    mode: Untangling,
    masks: Option<&[Matrix]>,
) -> Result<Vec<Var<'a>>> {
    spec.validate()?;
    let nl = spec.n_layers();
    if targets.len() != nl - 1 {
        return Err(Error::invalid("wrong number of target variables"));
    }
    check_masks(spec, masks, xbar.cols())?;
    let ones = tape.constant(Matrix::ones(1, xbar.cols()));
    let mut acts: Vec<Var<'a>> = vec![tape.constant(xbar.clone())];
    let mut weights = Vec::with_capacity(nl - 1);
    for j in 2..=nl {
        let mut parts = vec![&ones];
        let feeding = spec.feeding_layers(j);
        for &k in &feeding {
            parts.push(&acts[k - 1]);
        }
        let b = tape.concat_rows(&parts)?;
        let tj = &targets[j - 2];
        let w = tape.least_squares(tj, &b, lambda)?;
        let carried = match mode {
            Untangling::Scu => tape.matmul(&w, &b)?,
            Untangling::Ocu => tj.clone(),
        };
        let mut a = tape.activation(&carried, spec.activation(j))?;
        if let (Some(m), true) = (masks, j < nl) {
            a = tape.hadamard(&a, &tape.constant(m[j - 2].clone()))?;
        }
        weights.push(w);
        acts.push(a);
    }
    Ok(weights)
}

/// Records the feed-forward pass on a tape and returns `Y`.
pub fn tape_forward<'a>(
    tape: &'a Tape,
    spec: &NetworkSpec,
    weights: &[Var<'a>],
    x: &Matrix,
    masks: Option<&[Matrix]>,
) -> Result<Var<'a>> {
    let nl = spec.n_layers();
    if weights.len() != nl - 1 {
        return Err(Error::invalid("wrong number of weight variables"));
    }
    if x.rows() != spec.width(1) {
        return Err(Error::shapes("tape_forward", (spec.width(1), x.cols()), x.shape()));
    }
    check_masks(spec, masks, x.cols())?;
    let ones = tape.constant(Matrix::ones(1, x.cols()));
    let mut acts: Vec<Var<'a>> = vec![tape.constant(x.clone())];
    let mut y = None;
    for j in 2..=nl {
        let mut parts = vec![&ones];
        let feeding = spec.feeding_layers(j);
        for &k in &feeding {
            parts.push(&acts[k - 1]);
        }
        let b = tape.concat_rows(&parts)?;
        let s = tape.matmul(&weights[j - 2], &b)?;
        let mut a = tape.activation(&s, spec.activation(j))?;
        if let (Some(m), true) = (masks, j < nl) {
            a = tape.hadamard(&a, &tape.constant(m[j - 2].clone()))?;
        }
        if j == nl {
            y = Some(s);
        }
        acts.push(a);
    }
    Ok(y.expect("at least one weight layer"))
}

/// Records the head loss on a tape.
pub fn tape_loss<'a>(tape: &'a Tape, head: Head, y: &Var<'a>, labels: &Matrix, col_weights: Option<&[f64]>) -> Result<Var<'a>> {
    match head {
        Head::SoftmaxXent => tape.softmax_xent(y, labels, col_weights),
        Head::MseLinear => tape.mse(y, labels, col_weights),
    }
}

/// Optional dropout masks for the two passes of one target-space step.
#[derive(Debug, Clone, Copy, Default)]
pub struct DropoutPair<'m> {
    /// Masks for the training forward pass over `X`.
    pub x: Option<&'m [Matrix]>,
    /// Masks for the targets-to-weights solve over `X̄`.
    pub xbar: Option<&'m [Matrix]>,
}

/// Loss `L'(T)` and `∂L'/∂T` through autograd.
pub fn target_loss_and_gradient_autograd(
    spec: &NetworkSpec,
    t: &TargetParams,
    lambda: f64,
    mode: Untangling,
    x: &Matrix,
    labels: &Matrix,
    dropout: DropoutPair<'_>,
) -> Result<(f64, Vec<Matrix>)> {
    check_targets(spec, t)?;
    let tape = Tape::new();
    let tvars: Vec<Var<'_>> = t.targets.iter().map(|m| tape.leaf(m.clone())).collect();
    let w = tape_targets_to_weights(&tape, spec, &tvars, &t.xbar, lambda, mode, dropout.xbar)?;
    let y = tape_forward(&tape, spec, &w, x, dropout.x)?;
    let loss = tape_loss(&tape, spec.output_head, &y, labels, None)?;
    let grads = tape.backward(&loss)?;
    Ok((loss.value()[(0, 0)], grads.wrt(&tvars)))
}

/// Loss `L'(T)` and `∂L'/∂T` with the closed-form reverse pass. Only the
/// sequential rule without dropout has one; other cases use autograd.
pub fn target_loss_and_gradient(
    spec: &NetworkSpec,
    t: &TargetParams,
    lambda: f64,
    mode: Untangling,
    x: &Matrix,
    labels: &Matrix,
    dropout: DropoutPair<'_>,
) -> Result<(f64, Vec<Matrix>)> {
    if mode != Untangling::Scu || dropout.x.is_some() || dropout.xbar.is_some() {
        return target_loss_and_gradient_autograd(spec, t, lambda, mode, x, labels, dropout);
    }
    let (w, trace) = targets_to_weights_scu(spec, t, lambda)?;
    let (loss, dw) = weight_gradient(spec, &w, x, labels)?;
    let dt = target_gradient_manual(spec, t, lambda, &dw, &trace)?;
    Ok((loss, dt))
}

/// `L'(T)` without gradients.
pub fn target_loss(spec: &NetworkSpec, t: &TargetParams, lambda: f64, mode: Untangling, x: &Matrix, labels: &Matrix) -> Result<f64> {
    let (w, _) = targets_to_weights_masked(spec, t, lambda, mode, None)?;
    let trace = forward(spec, &w, x)?;
    spec.output_head.loss(trace.output(), labels)
}
