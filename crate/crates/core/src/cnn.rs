//! Convolutional networks in weight space and in target space.
//!
//! A batch of images is a `channels × (batch·h·w)` matrix whose columns run
//! batch-major, then row-major over pixels. Convolutions use stride 1 and
//! "same" zero padding and are computed as `W · A` on a patch matrix `A`
//! whose first row is all ones. Patch rows are ordered by kernel row, kernel
//! column, then input channel.

use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

use crate::activation::Activation;
use crate::autograd::{Tape, Var, GATHER_ZERO};
use crate::error::{Error, Result};
use crate::ffnn::{self, Untangling, WeightInit, WeightParams};
use crate::linalg;
use crate::loss::Head;
use crate::matrix::Matrix;
use crate::rng::Rng64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLayerSpec {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Max-pooling window and stride; 1 disables pooling.
    pub pool_k: usize,
}

impl ConvLayerSpec {
    /// Square kernel, e.g. `(3-16-2)` is `square(3, in, 16, 2)`.
    pub fn square(kernel: usize, in_channels: usize, out_channels: usize, pool_k: usize) -> Self {
        Self {
            kernel_h: kernel,
            kernel_w: kernel,
            in_channels,
            out_channels,
            pool_k,
        }
    }

    pub fn patch_rows(&self) -> usize {
        1 + self.kernel_h * self.kernel_w * self.in_channels
    }

    fn validate(&self) -> Result<()> {
        if self.kernel_h == 0 || self.kernel_w == 0 || self.in_channels == 0 || self.out_channels == 0 || self.pool_k == 0 {
            return Err(Error::invalid("convolution dimensions must be positive"));
        }
        Ok(())
    }
}

/// A batch of multi-channel images.
#[derive(Debug, Clone, PartialEq)]
pub struct Images {
    /// `channels × (batch·height·width)`.
    pub data: Matrix,
    pub batch: usize,
    pub height: usize,
    pub width: usize,
}

impl Images {
    pub fn new(data: Matrix, batch: usize, height: usize, width: usize) -> Result<Self> {
        if batch * height * width != data.cols() || height == 0 || width == 0 {
            return Err(Error::invalid(alloc::format!(
                "{} columns do not hold {batch} images of {height}x{width}",
                data.cols()
            )));
        }
        Ok(Self { data, batch, height, width })
    }

    pub fn channels(&self) -> usize {
        self.data.rows()
    }

    pub fn pixel(&self, c: usize, b: usize, y: usize, x: usize) -> f64 {
        self.data[(c, (b * self.height + y) * self.width + x)]
    }

    /// Images `start..end` of the batch.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        let px = self.height * self.width;
        Self::new(self.data.slice_cols(start * px, end * px)?, end - start, self.height, self.width)
    }

    /// Selected images, in the given order.
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        let px = self.height * self.width;
        let cols: Vec<usize> = idx.iter().flat_map(|&b| b * px..(b + 1) * px).collect();
        Self::new(self.data.select_cols(&cols), idx.len(), self.height, self.width)
    }
}

/// Gather index of the patch rows (without the bias row) for images of the
/// given size.
pub fn patch_index(layer: &ConvLayerSpec, batch: usize, height: usize, width: usize) -> Vec<u32> {
    let (kh, kw, ic) = (layer.kernel_h, layer.kernel_w, layer.in_channels);
    let n = batch * height * width;
    let (oy, ox) = ((kh - 1) / 2, (kw - 1) / 2);
    let mut index = vec![GATHER_ZERO; kh * kw * ic * n];
    for ky in 0..kh {
        for kx in 0..kw {
            for c in 0..ic {
                let row = (ky * kw + kx) * ic + c;
                let out = &mut index[row * n..(row + 1) * n];
                for b in 0..batch {
                    for y in 0..height {
                        let sy = y as isize + ky as isize - oy as isize;
                        if sy < 0 || sy >= height as isize {
                            continue;
                        }
                        for x in 0..width {
                            let sx = x as isize + kx as isize - ox as isize;
                            if sx < 0 || sx >= width as isize {
                                continue;
                            }
                            let src = c * n + (b * height + sy as usize) * width + sx as usize;
                            out[(b * height + y) * width + x] = src as u32;
                        }
                    }
                }
            }
        }
    }
    index
}

fn check_input(layer: &ConvLayerSpec, img: &Images) -> Result<()> {
    layer.validate()?;
    if img.channels() != layer.in_channels {
        return Err(Error::invalid(alloc::format!(
            "layer expects {} channels, images have {}",
            layer.in_channels,
            img.channels()
        )));
    }
    if img.data.len() > u32::MAX as usize - 1 {
        return Err(Error::TooLarge {
            what: "image batch",
            size: img.data.len(),
            cap: u32::MAX as usize - 1,
        });
    }
    Ok(())
}

fn gather_plain(src: &Matrix, rows: usize, cols: usize, index: &[u32]) -> Matrix {
    let s = src.data();
    let data = index.iter().map(|&i| if i == GATHER_ZERO { 0.0 } else { s[i as usize] }).collect();
    Matrix::new(rows, cols, data).expect("index length matches shape")
}

/// Patch matrix `(1 + kh·kw·ic) × (batch·h·w)` with a leading row of ones.
pub fn extract_patches(img: &Images, layer: &ConvLayerSpec) -> Result<Matrix> {
    check_input(layer, img)?;
    let n = img.data.cols();
    let index = patch_index(layer, img.batch, img.height, img.width);
    let p = gather_plain(&img.data, layer.patch_rows() - 1, n, &index);
    Matrix::concat_rows(&[&Matrix::ones(1, n), &p])
}

/// `g(W · A)` reshaped back to images of the patch geometry.
pub fn conv_forward(
    layer: &ConvLayerSpec,
    w: &Matrix,
    patches: &Matrix,
    batch: usize,
    height: usize,
    width: usize,
    g: Activation,
) -> Result<Images> {
    if w.shape() != (layer.out_channels, layer.patch_rows()) {
        return Err(Error::shapes("conv weights", (layer.out_channels, layer.patch_rows()), w.shape()));
    }
    let s = w.matmul(patches)?;
    Images::new(g.apply(&s), batch, height, width)
}

/// `W = T · A†` for a single convolution layer.
pub fn conv_targets_to_weights(t: &Matrix, patches: &Matrix, lambda: f64) -> Result<Matrix> {
    if t.cols() != patches.cols() {
        return Err(Error::shapes("conv targets", (t.rows(), patches.cols()), t.shape()));
    }
    t.matmul(&linalg::reg_pseudoinverse(patches, lambda)?)
}

/// Gather index of `k × k` max-pooling with stride `k`, chosen from `values`.
pub fn pool_index(values: &Matrix, batch: usize, height: usize, width: usize, k: usize) -> Result<Vec<u32>> {
    if k == 0 || !height.is_multiple_of(k) || !width.is_multiple_of(k) {
        return Err(Error::invalid(alloc::format!("pool size {k} does not divide {height}x{width}")));
    }
    let (ph, pw) = (height / k, width / k);
    let n = batch * height * width;
    let m = batch * ph * pw;
    let src = values.data();
    let mut index = Vec::with_capacity(values.rows() * m);
    for c in 0..values.rows() {
        for b in 0..batch {
            for py in 0..ph {
                for px in 0..pw {
                    let mut best = c * n + (b * height + py * k) * width + px * k;
                    for dy in 0..k {
                        for dx in 0..k {
                            let i = c * n + (b * height + py * k + dy) * width + px * k + dx;
                            if src[i] > src[best] {
                                best = i;
                            }
                        }
                    }
                    index.push(best as u32);
                }
            }
        }
    }
    Ok(index)
}

pub fn maxpool(img: &Images, k: usize) -> Result<Images> {
    let index = pool_index(&img.data, img.batch, img.height, img.width, k)?;
    let (ph, pw) = (img.height / k, img.width / k);
    let data = gather_plain(&img.data, img.channels(), img.batch * ph * pw, &index);
    Images::new(data, img.batch, ph, pw)
}

/// Gather index turning images into feature columns `(c·h·w) × batch`.
pub fn flatten_index(channels: usize, batch: usize, height: usize, width: usize) -> Vec<u32> {
    let px = height * width;
    let n = batch * px;
    let mut index = Vec::with_capacity(channels * n);
    for c in 0..channels {
        for p in 0..px {
            for b in 0..batch {
                index.push((c * n + b * px + p) as u32);
            }
        }
    }
    index
}

pub fn flatten(img: &Images) -> Matrix {
    let index = flatten_index(img.channels(), img.batch, img.height, img.width);
    gather_plain(&img.data, img.channels() * img.height * img.width, img.batch, &index)
}

/// Convolution blocks followed by a dense head.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnSpec {
    pub input_channels: usize,
    pub input_height: usize,
    pub input_width: usize,
    pub conv: Vec<ConvLayerSpec>,
    /// Widths of the dense layers after flattening; the last is the output.
    pub dense_widths: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_head: Head,
}

impl CnnSpec {
    /// `(kernel, channels, pool)` triples on square single-channel images.
    pub fn from_triples(side: usize, triples: &[(usize, usize, usize)], dense_widths: Vec<usize>) -> Result<Self> {
        let mut conv = Vec::with_capacity(triples.len());
        let mut ic = 1;
        for &(k, oc, p) in triples {
            conv.push(ConvLayerSpec::square(k, ic, oc, p));
            ic = oc;
        }
        let spec = Self {
            input_channels: 1,
            input_height: side,
            input_width: side,
            conv,
            dense_widths,
            hidden_activation: Activation::LRelu,
            output_head: Head::SoftmaxXent,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dense_widths.is_empty() || self.dense_widths.contains(&0) {
            return Err(Error::invalid("dense widths must be non-empty and positive"));
        }
        let mut c = self.input_channels;
        let (mut h, mut w) = (self.input_height, self.input_width);
        for layer in &self.conv {
            layer.validate()?;
            if layer.in_channels != c {
                return Err(Error::invalid("conv channel counts do not chain"));
            }
            if h % layer.pool_k != 0 || w % layer.pool_k != 0 {
                return Err(Error::invalid(alloc::format!("pool size {} does not divide {h}x{w}", layer.pool_k)));
            }
            c = layer.out_channels;
            h /= layer.pool_k;
            w /= layer.pool_k;
        }
        Ok(())
    }

    /// Input `(channels, h, w)` of every conv layer, then of the flatten step.
    pub fn geometry(&self) -> Vec<(usize, usize, usize)> {
        let mut out = vec![(self.input_channels, self.input_height, self.input_width)];
        for layer in &self.conv {
            let (_, h, w) = *out.last().expect("non-empty");
            out.push((layer.out_channels, h / layer.pool_k, w / layer.pool_k));
        }
        out
    }

    pub fn flat_width(&self) -> usize {
        let (c, h, w) = *self.geometry().last().expect("non-empty");
        c * h * w
    }

    /// Weight shapes: conv kernels first, then dense layers.
    pub fn weight_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes: Vec<(usize, usize)> = self.conv.iter().map(|l| (l.out_channels, l.patch_rows())).collect();
        let mut fan_in = self.flat_width();
        for &d in &self.dense_widths {
            shapes.push((d, fan_in + 1));
            fan_in = d;
        }
        shapes
    }

    /// Target shapes for a target batch of `nbar` images.
    pub fn target_shapes(&self, nbar: usize) -> Vec<(usize, usize)> {
        let geo = self.geometry();
        let mut shapes: Vec<(usize, usize)> = self
            .conv
            .iter()
            .zip(&geo)
            .map(|(l, &(_, h, w))| (l.out_channels, nbar * h * w))
            .collect();
        shapes.extend(self.dense_widths.iter().map(|&d| (d, nbar)));
        shapes
    }

    fn n_dense(&self) -> usize {
        self.dense_widths.len()
    }

    fn dense_activation(&self, i: usize) -> Activation {
        if i + 1 == self.n_dense() {
            Activation::Identity
        } else {
            self.hidden_activation
        }
    }

    /// Shapes of dropout masks on conv activations for a batch of `n` images.
    pub fn conv_mask_shapes(&self, n: usize) -> Vec<(usize, usize)> {
        self.conv
            .iter()
            .zip(self.geometry())
            .map(|(l, (_, h, w))| (l.out_channels, n * h * w))
            .collect()
    }
}

/// Dropout masks for the conv activations; `None` entries skip a layer.
pub type ConvMasks = [Option<Matrix>];

#[derive(Debug, Clone, PartialEq)]
pub struct CnnTargetParams {
    /// Conv targets (`oc × n̄_b·h·w`) followed by dense targets (`d × n̄_b`).
    pub targets: Vec<Matrix>,
    pub xbar: Images,
}

fn check_images(spec: &CnnSpec, img: &Images) -> Result<()> {
    if (img.channels(), img.height, img.width) != (spec.input_channels, spec.input_height, spec.input_width) {
        return Err(Error::invalid("images do not match the network input"));
    }
    Ok(())
}

fn apply_mask<'a>(tape: &'a Tape, a: Var<'a>, masks: Option<&ConvMasks>, i: usize) -> Result<Var<'a>> {
    match masks.and_then(|m| m.get(i)).and_then(|m| m.as_ref()) {
        Some(mask) => tape.hadamard(&a, &tape.constant(mask.clone())),
        None => Ok(a),
    }
}

/// Pools `a` (an image batch in matrix form) on the tape.
fn tape_pool<'a>(tape: &'a Tape, a: &Var<'a>, batch: usize, h: usize, w: usize, k: usize) -> Result<Var<'a>> {
    if k == 1 {
        return Ok(a.clone());
    }
    let index = pool_index(a.value(), batch, h, w, k)?;
    tape.gather(a, a.shape().0, batch * (h / k) * (w / k), Rc::new(index))
}

fn tape_patches<'a>(tape: &'a Tape, layer: &ConvLayerSpec, a: &Var<'a>, batch: usize, h: usize, w: usize) -> Result<Var<'a>> {
    let n = batch * h * w;
    let index = patch_index(layer, batch, h, w);
    let p = tape.gather(a, layer.patch_rows() - 1, n, Rc::new(index))?;
    tape.concat_rows(&[&tape.constant(Matrix::ones(1, n)), &p])
}

fn tape_flatten<'a>(tape: &'a Tape, a: &Var<'a>, batch: usize, c: usize, h: usize, w: usize) -> Result<Var<'a>> {
    let index = flatten_index(c, batch, h, w);
    tape.gather(a, c * h * w, batch, Rc::new(index))
}

/// Output logits of the network with the given weight variables.
pub fn tape_cnn_forward<'a>(tape: &'a Tape, spec: &CnnSpec, w: &[Var<'a>], x: &Images, masks: Option<&ConvMasks>) -> Result<Var<'a>> {
    Ok(tape_cnn_sums(tape, spec, w, x, masks)?.pop().expect("at least one dense layer"))
}

/// Pre-activation sums of every layer; the last entry is the output.
fn tape_cnn_sums<'a>(tape: &'a Tape, spec: &CnnSpec, w: &[Var<'a>], x: &Images, masks: Option<&ConvMasks>) -> Result<Vec<Var<'a>>> {
    spec.validate()?;
    check_images(spec, x)?;
    if w.len() != spec.conv.len() + spec.n_dense() {
        return Err(Error::invalid("wrong number of CNN weight layers"));
    }
    let geo = spec.geometry();
    let n = x.batch;
    let mut sums = Vec::with_capacity(w.len());
    let mut a = tape.constant(x.data.clone());
    for (i, layer) in spec.conv.iter().enumerate() {
        let (_, h, wd) = geo[i];
        let p = tape_patches(tape, layer, &a, n, h, wd)?;
        let s = tape.matmul(&w[i], &p)?;
        sums.push(s.clone());
        let act = apply_mask(tape, tape.activation(&s, spec.hidden_activation)?, masks, i)?;
        a = tape_pool(tape, &act, n, h, wd, layer.pool_k)?;
    }
    let (c, h, wd) = *geo.last().expect("non-empty");
    let mut a = tape_flatten(tape, &a, n, c, h, wd)?;
    let ones = tape.constant(Matrix::ones(1, n));
    for i in 0..spec.n_dense() {
        let b = tape.concat_rows(&[&ones, &a])?;
        let s = tape.matmul(&w[spec.conv.len() + i], &b)?;
        a = tape.activation(&s, spec.dense_activation(i))?;
        sums.push(s);
    }
    Ok(sums)
}

/// Pre-activation sums of every layer, in target layout.
pub fn cnn_sums(spec: &CnnSpec, w: &WeightParams, x: &Images) -> Result<Vec<Matrix>> {
    let tape = Tape::new();
    let wv: Vec<Var<'_>> = w.layers.iter().map(|m| tape.constant(m.clone())).collect();
    Ok(tape_cnn_sums(&tape, spec, &wv, x, None)?.iter().map(|v| v.value().clone()).collect())
}

/// Replaces the targets with the sums the solved weights produce on `X̄`.
pub fn project_cnn_targets(spec: &CnnSpec, t: &CnnTargetParams, lambda: f64, mode: Untangling) -> Result<CnnTargetParams> {
    let w = cnn_targets_to_weights(spec, t, lambda, mode)?;
    Ok(CnnTargetParams {
        targets: cnn_sums(spec, &w, &t.xbar)?,
        xbar: t.xbar.clone(),
    })
}

/// Targets-to-weights map of the whole network recorded on a tape.
/// `masks` apply to the conv activations of the target batch.
pub fn tape_cnn_targets_to_weights<'a>(
    tape: &'a Tape,
    spec: &CnnSpec,
    targets: &[Var<'a>],
    xbar: &Images,
    lambda: f64,
    mode: Untangling,
    masks: Option<&ConvMasks>,
) -> Result<Vec<Var<'a>>> {
    spec.validate()?;
    check_images(spec, xbar)?;
    let shapes = spec.target_shapes(xbar.batch);
    if targets.len() != shapes.len() {
        return Err(Error::invalid("wrong number of CNN target variables"));
    }
    for (t, s) in targets.iter().zip(&shapes) {
        if t.shape() != *s {
            return Err(Error::shapes("cnn targets", *s, t.shape()));
        }
    }
    let geo = spec.geometry();
    let n = xbar.batch;
    let mut weights = Vec::with_capacity(targets.len());
    let mut a = tape.constant(xbar.data.clone());
    for (i, layer) in spec.conv.iter().enumerate() {
        let (_, h, wd) = geo[i];
        let p = tape_patches(tape, layer, &a, n, h, wd)?;
        let w = tape.least_squares(&targets[i], &p, lambda)?;
        let s = match mode {
            Untangling::Scu => tape.matmul(&w, &p)?,
            Untangling::Ocu => targets[i].clone(),
        };
        weights.push(w);
        let act = apply_mask(tape, tape.activation(&s, spec.hidden_activation)?, masks, i)?;
        a = tape_pool(tape, &act, n, h, wd, layer.pool_k)?;
    }
    let (c, h, wd) = *geo.last().expect("non-empty");
    let mut a = tape_flatten(tape, &a, n, c, h, wd)?;
    let ones = tape.constant(Matrix::ones(1, n));
    for i in 0..spec.n_dense() {
        let t = &targets[spec.conv.len() + i];
        let b = tape.concat_rows(&[&ones, &a])?;
        let w = tape.least_squares(t, &b, lambda)?;
        let s = match mode {
            Untangling::Scu => tape.matmul(&w, &b)?,
            Untangling::Ocu => t.clone(),
        };
        weights.push(w);
        a = tape.activation(&s, spec.dense_activation(i))?;
    }
    Ok(weights)
}

pub fn cnn_targets_to_weights(spec: &CnnSpec, t: &CnnTargetParams, lambda: f64, mode: Untangling) -> Result<WeightParams> {
    let tape = Tape::new();
    let tv: Vec<Var<'_>> = t.targets.iter().map(|m| tape.constant(m.clone())).collect();
    let w = tape_cnn_targets_to_weights(&tape, spec, &tv, &t.xbar, lambda, mode, None)?;
    Ok(WeightParams {
        layers: w.iter().map(|v| v.value().clone()).collect(),
    })
}

/// Logits of a batch; large batches are processed in chunks.
pub fn cnn_predict(spec: &CnnSpec, w: &WeightParams, x: &Images) -> Result<Matrix> {
    const CHUNK: usize = 250;
    let mut parts = Vec::new();
    let mut start = 0;
    while start < x.batch {
        let end = (start + CHUNK).min(x.batch);
        let tape = Tape::new();
        let wv: Vec<Var<'_>> = w.layers.iter().map(|m| tape.constant(m.clone())).collect();
        let y = tape_cnn_forward(&tape, spec, &wv, &x.slice(start, end)?, None)?;
        parts.push(y.value().clone());
        start = end;
    }
    let refs: Vec<&Matrix> = parts.iter().collect();
    Matrix::concat_cols(&refs)
}

fn head_loss<'a>(tape: &'a Tape, head: Head, y: &Var<'a>, labels: &Matrix) -> Result<Var<'a>> {
    match head {
        Head::SoftmaxXent => tape.softmax_xent(y, labels, None),
        Head::MseLinear => tape.mse(y, labels, None),
    }
}

/// Loss and weight gradient on a batch.
pub fn cnn_weight_loss_and_gradient(
    spec: &CnnSpec,
    w: &WeightParams,
    x: &Images,
    labels: &Matrix,
    masks: Option<&ConvMasks>,
) -> Result<(f64, Vec<Matrix>)> {
    let tape = Tape::new();
    let wv: Vec<Var<'_>> = w.layers.iter().map(|m| tape.leaf(m.clone())).collect();
    let y = tape_cnn_forward(&tape, spec, &wv, x, masks)?;
    let loss = head_loss(&tape, spec.output_head, &y, labels)?;
    let g = tape.backward(&loss)?;
    Ok((loss.value()[(0, 0)], g.wrt(&wv)))
}

/// Dropout masks for both passes of one target-space step.
#[derive(Debug, Clone, Copy, Default)]
pub struct CnnDropout<'m> {
    pub x: Option<&'m ConvMasks>,
    pub xbar: Option<&'m ConvMasks>,
}

/// Loss `L'(T)` on a batch and its gradient with respect to the targets.
pub fn cnn_target_loss_and_gradient(
    spec: &CnnSpec,
    t: &CnnTargetParams,
    lambda: f64,
    mode: Untangling,
    x: &Images,
    labels: &Matrix,
    dropout: CnnDropout<'_>,
) -> Result<(f64, Vec<Matrix>)> {
    let tape = Tape::new();
    let tv: Vec<Var<'_>> = t.targets.iter().map(|m| tape.leaf(m.clone())).collect();
    let w = tape_cnn_targets_to_weights(&tape, spec, &tv, &t.xbar, lambda, mode, dropout.xbar)?;
    let y = tape_cnn_forward(&tape, spec, &w, x, dropout.x)?;
    let loss = head_loss(&tape, spec.output_head, &y, labels)?;
    let g = tape.backward(&loss)?;
    Ok((loss.value()[(0, 0)], g.wrt(&tv)))
}

/// Truncated-normal targets for the target batch `xbar`.
pub fn init_cnn_targets(spec: &CnnSpec, xbar: Images, sigma: f64, seed: u64) -> Result<CnnTargetParams> {
    spec.validate()?;
    check_images(spec, &xbar)?;
    if !(sigma > 0.0) {
        return Err(Error::invalid("sigma must be positive"));
    }
    let mut rng = Rng64::seed(seed);
    let targets = spec
        .target_shapes(xbar.batch)
        .into_iter()
        .map(|(r, c)| rng.truncated_normal_matrix(r, c, sigma))
        .collect();
    Ok(CnnTargetParams { targets, xbar })
}

/// He-initialised weights with zero biases.
pub fn init_cnn_weights(spec: &CnnSpec, seed: u64) -> Result<WeightParams> {
    spec.validate()?;
    let mut rng = Rng64::seed(seed);
    let layers = spec
        .weight_shapes()
        .into_iter()
        .map(|(r, c)| ffnn::init_layer(&mut rng, r, c, WeightInit::He))
        .collect();
    Ok(WeightParams { layers })
}

/// Inverted-dropout masks on the conv layers listed in `layers` (0-based).
pub fn conv_dropout_masks(spec: &CnnSpec, batch: usize, layers: &[usize], rate: f64, rng: &mut Rng64) -> Result<Vec<Option<Matrix>>> {
    let shapes = spec.conv_mask_shapes(batch);
    let drawn = ffnn::dropout_masks(&shapes, rate, rng)?;
    Ok(drawn
        .into_iter()
        .enumerate()
        .map(|(i, m)| if layers.contains(&i) { Some(m) } else { None })
        .collect())
}
