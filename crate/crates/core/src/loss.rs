//! Output heads: fused softmax cross-entropy and linear mean squared error.
//!
//! Both losses are averaged over batch columns. Optional per-column weights
//! implement loss masks; the average is then taken over the total weight.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Head {
    SoftmaxXent,
    MseLinear,
}

impl Head {
    pub fn loss(self, y: &Matrix, labels: &Matrix) -> Result<f64> {
        self.loss_and_grad(y, labels, None).map(|(l, _)| l)
    }

    /// Loss value and its gradient with respect to the head input `y`.
    pub fn loss_and_grad(
        self,
        y: &Matrix,
        labels: &Matrix,
        col_weights: Option<&[f64]>,
    ) -> Result<(f64, Matrix)> {
        match self {
            Head::SoftmaxXent => softmax_xent(y, labels, col_weights),
            Head::MseLinear => mse(y, labels, col_weights),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Head::SoftmaxXent => "softmax_xent",
            Head::MseLinear => "mse_linear",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "softmax_xent" | "xent" => Some(Head::SoftmaxXent),
            "mse_linear" | "mse" => Some(Head::MseLinear),
            _ => None,
        }
    }
}

fn check(y: &Matrix, labels: &Matrix, col_weights: Option<&[f64]>, op: &'static str) -> Result<()> {
    if y.shape() != labels.shape() {
        return Err(Error::shapes(op, y.shape(), labels.shape()));
    }
    if let Some(w) = col_weights {
        if w.len() != y.cols() {
            return Err(Error::shapes(op, y.shape(), (1, w.len())));
        }
    }
    Ok(())
}

fn weights_or_ones(n: usize, col_weights: Option<&[f64]>) -> (Vec<f64>, f64) {
    let w: Vec<f64> = match col_weights {
        Some(w) => w.to_vec(),
        None => alloc::vec![1.0; n],
    };
    let total = w.iter().sum();
    (w, total)
}

/// Column-wise softmax with the usual max shift.
pub fn softmax(y: &Matrix) -> Matrix {
    let mut out = y.clone();
    let (rows, cols) = y.shape();
    for c in 0..cols {
        let mut m = f64::NEG_INFINITY;
        for r in 0..rows {
            m = m.max(y[(r, c)]);
        }
        let mut z = 0.0;
        for r in 0..rows {
            let e = libm::exp(y[(r, c)] - m);
            out[(r, c)] = e;
            z += e;
        }
        for r in 0..rows {
            out[(r, c)] /= z;
        }
    }
    out
}

/// Fused softmax cross-entropy. Gradient `(softmax − labels) · w / Σw`.
pub fn softmax_xent(
    y: &Matrix,
    labels: &Matrix,
    col_weights: Option<&[f64]>,
) -> Result<(f64, Matrix)> {
    check(y, labels, col_weights, "softmax_xent")?;
    let (rows, cols) = y.shape();
    let (w, total) = weights_or_ones(cols, col_weights);
    let mut grad = Matrix::zeros(rows, cols);
    if total <= 0.0 {
        return Ok((0.0, grad));
    }
    let p = softmax(y);
    let mut loss = 0.0;
    for c in 0..cols {
        if w[c] == 0.0 {
            continue;
        }
        let mut m = f64::NEG_INFINITY;
        for r in 0..rows {
            m = m.max(y[(r, c)]);
        }
        let mut z = 0.0;
        for r in 0..rows {
            z += libm::exp(y[(r, c)] - m);
        }
        let lse = m + libm::log(z);
        let mut lc = 0.0;
        for r in 0..rows {
            let t = labels[(r, c)];
            if t != 0.0 {
                lc -= t * (y[(r, c)] - lse);
            }
            grad[(r, c)] = w[c] * (p[(r, c)] - t) / total;
        }
        loss += w[c] * lc;
    }
    Ok((loss / total, grad))
}

/// `(1/Σw) Σ_c w_c ‖y_c − labels_c‖²`.
pub fn mse(y: &Matrix, labels: &Matrix, col_weights: Option<&[f64]>) -> Result<(f64, Matrix)> {
    check(y, labels, col_weights, "mse")?;
    let (rows, cols) = y.shape();
    let (w, total) = weights_or_ones(cols, col_weights);
    let mut grad = Matrix::zeros(rows, cols);
    if total <= 0.0 {
        return Ok((0.0, grad));
    }
    let mut loss = 0.0;
    for r in 0..rows {
        for c in 0..cols {
            let d = y[(r, c)] - labels[(r, c)];
            loss += w[c] * d * d;
            grad[(r, c)] = 2.0 * w[c] * d / total;
        }
    }
    Ok((loss / total, grad))
}

/// Fraction of (weighted) columns whose argmax matches the label argmax.
pub fn accuracy(y: &Matrix, labels: &Matrix, col_weights: Option<&[f64]>) -> f64 {
    let pred = y.argmax_cols();
    let truth = labels.argmax_cols();
    let (w, total) = weights_or_ones(y.cols(), col_weights);
    if total <= 0.0 {
        return 0.0;
    }
    let hits: f64 = pred
        .iter()
        .zip(&truth)
        .zip(&w)
        .map(|((p, t), w)| if p == t { *w } else { 0.0 })
        .sum();
    hits / total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng64;

    fn onehot(classes: usize, idx: &[usize]) -> Matrix {
        Matrix::from_fn(classes, idx.len(), |r, c| if idx[c] == r { 1.0 } else { 0.0 })
    }

    #[test]
    fn uniform_logits_give_log_k() {
        let y = Matrix::zeros(4, 3);
        let (l, _) = softmax_xent(&y, &onehot(4, &[0, 1, 3]), None).unwrap();
        assert!((l - libm::log(4.0)).abs() < 1e-15);
    }

    #[test]
    fn large_logits_stay_finite() {
        let y = Matrix::from_rows(&[&[1000.0], &[-1000.0]]);
        let (l, g) = softmax_xent(&y, &onehot(2, &[1]), None).unwrap();
        assert!((l - 2000.0).abs() < 1e-9);
        assert!(g.is_finite());
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = Rng64::seed(21);
        let y = rng.normal_matrix(3, 4);
        let labels = onehot(3, &[0, 2, 1, 1]);
        let w = [1.0, 0.0, 1.0, 1.0];
        for head in [Head::SoftmaxXent, Head::MseLinear] {
            for weights in [None, Some(&w[..])] {
                let (_, g) = head.loss_and_grad(&y, &labels, weights).unwrap();
                let h = 1e-6;
                for i in 0..y.len() {
                    let mut p = y.clone();
                    p.data_mut()[i] += h;
                    let mut m = y.clone();
                    m.data_mut()[i] -= h;
                    let fd = (head.loss_and_grad(&p, &labels, weights).unwrap().0
                        - head.loss_and_grad(&m, &labels, weights).unwrap().0)
                        / (2.0 * h);
                    assert!((fd - g.data()[i]).abs() < 1e-8, "{head:?}");
                }
            }
        }
    }

    #[test]
    fn masked_columns_have_zero_gradient() {
        let mut rng = Rng64::seed(22);
        let y = rng.normal_matrix(2, 3);
        let (_, g) = softmax_xent(&y, &onehot(2, &[0, 1, 0]), Some(&[0.0, 1.0, 1.0])).unwrap();
        assert_eq!(g[(0, 0)], 0.0);
        assert_eq!(g[(1, 0)], 0.0);
    }

    #[test]
    fn accuracy_counts_argmax_hits() {
        let y = Matrix::from_rows(&[&[1.0, 0.0, 2.0], &[0.0, 1.0, 3.0]]);
        let acc = accuracy(&y, &onehot(2, &[0, 0, 1]), None);
        assert!((acc - 2.0 / 3.0).abs() < 1e-15);
    }
}
