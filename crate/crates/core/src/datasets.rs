//! Synthetic benchmark data: two interlocked spirals and delayed bit streams.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::Rng64;
use crate::rnn::SequenceRef;

/// Inputs and one-hot (or real-valued) labels, one sample per column.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    pub inputs: Matrix,
    pub labels: Matrix,
}

impl LabeledBatch {
    pub fn new(inputs: Matrix, labels: Matrix) -> Result<Self> {
        if inputs.cols() != labels.cols() {
            return Err(Error::shapes("labeled batch", inputs.shape(), labels.shape()));
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.inputs.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            inputs: self.inputs.select_cols(idx),
            labels: self.labels.select_cols(idx),
        }
    }

    /// Index of the hot entry of every label column.
    pub fn classes(&self) -> Vec<usize> {
        self.labels.argmax_cols()
    }
}

/// One-hot encoding of class indices into `classes × n`.
pub fn one_hot(labels: &[usize], classes: usize) -> Result<Matrix> {
    let mut m = Matrix::zeros(classes, labels.len());
    for (c, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::invalid(alloc::format!("class {l} out of range for {classes} classes")));
        }
        m[(l, c)] = 1.0;
    }
    Ok(m)
}

/// Unscaled point `i` of the first spiral at a fractional index.
pub fn spiral_point(i: f64) -> (f64, f64) {
    let angle = i * PI / 16.0;
    let radius = 6.5 * (104.0 - i) / 104.0;
    (radius * libm::sin(angle), radius * libm::cos(angle))
}

fn spirals(indices: impl Iterator<Item = f64> + Clone) -> LabeledBatch {
    let n = indices.clone().count();
    let mut x = Matrix::zeros(2, 2 * n);
    let mut classes = vec![0usize; 2 * n];
    for (k, i) in indices.enumerate() {
        let (a, b) = spiral_point(i);
        x[(0, 2 * k)] = a / 6.5;
        x[(1, 2 * k)] = b / 6.5;
        x[(0, 2 * k + 1)] = -a / 6.5;
        x[(1, 2 * k + 1)] = -b / 6.5;
        classes[2 * k + 1] = 1;
    }
    LabeledBatch {
        inputs: x,
        labels: one_hot(&classes, 2).expect("two classes"),
    }
}

/// 194 training points on three revolutions of two spirals, plus 192 test
/// points at the angular midpoints. Coordinates are scaled into `[-1, 1]`;
/// columns alternate between the two spirals.
pub fn gen_two_spirals() -> (LabeledBatch, LabeledBatch) {
    let train = spirals((0..97).map(|i| i as f64));
    let test = spirals((0..96).map(|i| i as f64 + 0.5));
    (train, test)
}

/// Bit sequences with per-step one-hot labels and a loss mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch {
    /// One `1 × count` matrix of bits per step.
    pub inputs: Vec<Matrix>,
    /// One `2 × count` one-hot matrix per step.
    pub labels: Vec<Matrix>,
    pub mask: Vec<f64>,
}

impl SequenceBatch {
    pub fn steps(&self) -> usize {
        self.inputs.len()
    }

    pub fn count(&self) -> usize {
        self.inputs.first().map_or(0, |m| m.cols())
    }

    pub fn as_ref(&self) -> SequenceRef<'_> {
        SequenceRef {
            inputs: &self.inputs,
            labels: &self.labels,
            mask: &self.mask,
        }
    }

    /// The streams with the given indices.
    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            inputs: self.inputs.iter().map(|m| m.select_cols(idx)).collect(),
            labels: self.labels.iter().map(|m| m.select_cols(idx)).collect(),
            mask: self.mask.clone(),
        }
    }

    fn from_streams(streams: &[Vec<u8>], outputs: &[Vec<u8>], delay: usize) -> Self {
        let len = streams.first().map_or(0, Vec::len);
        let count = streams.len();
        let inputs = (0..len)
            .map(|t| Matrix::from_fn(1, count, |_, s| f64::from(streams[s][t])))
            .collect();
        let labels = (0..len)
            .map(|t| Matrix::from_fn(2, count, |r, s| if usize::from(outputs[s][t]) == r { 1.0 } else { 0.0 }))
            .collect();
        let mask = (0..len).map(|t| if t < delay { 0.0 } else { 1.0 }).collect();
        Self { inputs, labels, mask }
    }
}

/// Output bit `t` is input bit `t − N`; the first `N` outputs are zero and
/// masked out by the caller.
pub fn delay_outputs(bits: &[u8], n: usize) -> Vec<u8> {
    (0..bits.len()).map(|t| if t >= n { bits[t - n] } else { 0 }).collect()
}

/// Little-endian sum of the stream and its `N`-step delayed copy.
pub fn delay_adder_outputs(bits: &[u8], n: usize) -> Vec<u8> {
    let mut carry = 0;
    (0..bits.len())
        .map(|t| {
            let s = bits[t] + if t >= n { bits[t - n] } else { 0 } + carry;
            carry = s >> 1;
            s & 1
        })
        .collect()
}

fn random_streams(count: usize, len: usize, seed: u64) -> Vec<Vec<u8>> {
    let mut rng = Rng64::seed(seed);
    (0..count).map(|_| (0..len).map(|_| rng.bit()).collect()).collect()
}

/// Delay 0 is accepted as a plain echo task.
fn check_delay(n: usize, len: usize) -> Result<()> {
    if len <= n {
        return Err(Error::invalid("streams must be longer than the delay"));
    }
    Ok(())
}

/// `count` random streams of length `len` for the delayed-recall task.
pub fn gen_delay_bitstream(n: usize, count: usize, len: usize, seed: u64) -> Result<SequenceBatch> {
    check_delay(n, len)?;
    let streams = random_streams(count, len, seed);
    let outputs: Vec<Vec<u8>> = streams.iter().map(|s| delay_outputs(s, n)).collect();
    Ok(SequenceBatch::from_streams(&streams, &outputs, n))
}

/// `count` random streams of length `len` for the delayed-addition task.
pub fn gen_delay_adder(n: usize, count: usize, len: usize, seed: u64) -> Result<SequenceBatch> {
    check_delay(n, len)?;
    let streams = random_streams(count, len, seed);
    let outputs: Vec<Vec<u8>> = streams.iter().map(|s| delay_adder_outputs(s, n)).collect();
    Ok(SequenceBatch::from_streams(&streams, &outputs, n))
}

/// Stream length used for delay `N`.
pub fn default_stream_len(n: usize) -> usize {
    n + 50
}
