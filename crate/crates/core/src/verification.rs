//! Independent oracles: central differences, the regularised pseudoinverse
//! identity, the first-order preconditioner view of a target step, and flop
//! counts of the weight solve.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::ffnn::{self, NetworkSpec, TargetParams, Untangling};
use crate::linalg;
use crate::matrix::Matrix;

/// Central-difference gradient of `f` at `params`.
pub fn finite_diff_gradient<F>(mut f: F, params: &[Matrix], h: f64) -> Result<Vec<Matrix>>
where
    F: FnMut(&[Matrix]) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::invalid("step size must be positive"));
    }
    let mut p = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for l in 0..params.len() {
        let mut g = Matrix::zeros(params[l].rows(), params[l].cols());
        for i in 0..params[l].len() {
            let x0 = p[l].data()[i];
            p[l].data_mut()[i] = x0 + h;
            let fp = f(&p)?;
            p[l].data_mut()[i] = x0 - h;
            let fm = f(&p)?;
            p[l].data_mut()[i] = x0;
            if !fp.is_finite() || !fm.is_finite() {
                return Err(Error::NonFinite("finite_diff_gradient"));
            }
            g.data_mut()[i] = (fp - fm) / (2.0 * h);
        }
        out.push(g);
    }
    Ok(out)
}

/// Largest elementwise `|a − b| / max(|b|, floor)` over matching lists.
pub fn max_relative_error(a: &[Matrix], b: &[Matrix], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.data().iter().zip(y.data()))
        .map(|(&x, &y)| (x - y).abs() / y.abs().max(floor))
        .fold(0.0, f64::max)
}

/// `‖A·A†·(A + λ(A⁺)ᵀ) − A‖_F` with `A†` the regularised and `A⁺` the
/// Moore–Penrose pseudoinverse.
pub fn check_lemma_identity(a: &Matrix, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::invalid("lemma identity needs lambda > 0"));
    }
    let dagger = linalg::reg_pseudoinverse(a, lambda)?;
    let mut a_ddag = a.clone();
    a_ddag.axpy(lambda, &linalg::moore_penrose_pinv(a).transpose())?;
    let lhs = a.matmul(&dagger)?.matmul(&a_ddag)?;
    Ok(lhs.sub(a)?.frobenius_norm())
}

/// Default cap on the number of target coordinates for [`preconditioner_step`].
pub const PRECONDITIONER_CAP: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct Preconditioned {
    /// `J = ∂W/∂T`, one row per weight entry and one column per target entry.
    pub jacobian: Matrix,
    /// `∂L/∂W` at `W = M(T)`.
    pub weight_gradient: Vec<Matrix>,
    /// `−η·J·Jᵀ·∂L/∂W`, shaped like the weights.
    pub predicted: Vec<Matrix>,
}

impl Preconditioned {
    pub fn preconditioner(&self) -> Matrix {
        self.jacobian.gram()
    }
}

fn flatten(ms: &[Matrix]) -> Vec<f64> {
    ms.iter().flat_map(|m| m.data().iter().copied()).collect()
}

fn unflatten(v: &[f64], like: &[Matrix]) -> Vec<Matrix> {
    let mut off = 0;
    like.iter()
        .map(|m| {
            let n = m.len();
            let out = Matrix::new(m.rows(), m.cols(), v[off..off + n].to_vec()).expect("length matches");
            off += n;
            out
        })
        .collect()
}

/// The weight change a target step of size `eta` produces to first order.
/// `J` is assembled row by row with one reverse sweep per weight entry.
pub fn preconditioner_step(
    spec: &NetworkSpec,
    t: &TargetParams,
    lambda: f64,
    x: &Matrix,
    labels: &Matrix,
    eta: f64,
    cap: usize,
) -> Result<Preconditioned> {
    if !(eta > 0.0) {
        return Err(Error::invalid("eta must be positive"));
    }
    let n_t: usize = t.targets.iter().map(Matrix::len).sum();
    if n_t > cap {
        return Err(Error::TooLarge {
            what: "preconditioner target coordinates",
            size: n_t,
            cap,
        });
    }
    let tape = Tape::new();
    let tv: Vec<Var<'_>> = t.targets.iter().map(|m| tape.leaf(m.clone())).collect();
    let wv = ffnn::tape_targets_to_weights(&tape, spec, &tv, &t.xbar, lambda, Untangling::Scu, None)?;
    let n_w: usize = wv.iter().map(|v| v.value().len()).sum();
    let mut jacobian = Matrix::zeros(n_w, n_t);
    let mut row = 0;
    for w in &wv {
        let (r, c) = w.shape();
        for i in 0..r * c {
            let mut seed = Matrix::zeros(r, c);
            seed.data_mut()[i] = 1.0;
            let g = tape.backward_with_seed(w, seed)?;
            jacobian.row_mut(row).copy_from_slice(&flatten(&g.wrt(&tv)));
            row += 1;
        }
    }
    let weights = ffnn::WeightParams {
        layers: wv.iter().map(|v| v.value().clone()).collect(),
    };
    let (_, dw) = ffnn::weight_gradient(spec, &weights, x, labels)?;
    let g = Matrix::new(n_w, 1, flatten(&dw))?;
    let step = jacobian.matmul(&jacobian.matmul_tn(&g)?)?.scale(-eta);
    let predicted = unflatten(step.data(), &dw);
    Ok(Preconditioned {
        jacobian,
        weight_gradient: dw,
        predicted,
    })
}

/// `‖ΔW_actual − ΔW_predicted‖` for one step size, where the actual change
/// is `M(T − η·∂L'/∂T) − M(T)`.
pub fn first_order_error(spec: &NetworkSpec, t: &TargetParams, lambda: f64, x: &Matrix, labels: &Matrix, eta: f64) -> Result<f64> {
    let pre = preconditioner_step(spec, t, lambda, x, labels, eta, PRECONDITIONER_CAP)?;
    let (w0, trace) = ffnn::targets_to_weights_scu(spec, t, lambda)?;
    let dt = ffnn::target_gradient_manual(spec, t, lambda, &pre.weight_gradient, &trace)?;
    let mut t1 = t.clone();
    for (tj, g) in t1.targets.iter_mut().zip(&dt) {
        tj.axpy(-eta, g)?;
    }
    let (w1, _) = ffnn::targets_to_weights_scu(spec, &t1, lambda)?;
    let mut sq = 0.0;
    for ((a, b), p) in w1.layers.iter().zip(&w0.layers).zip(&pre.predicted) {
        let d = a.sub(b)?.sub(p)?.frobenius_norm();
        sq += d * d;
    }
    Ok(libm::sqrt(sq))
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 || xs.iter().chain(ys).any(|&v| !(v > 0.0)) {
        return Err(Error::invalid("slope fit needs at least two positive pairs"));
    }
    let lx: Vec<f64> = xs.iter().map(|&v| libm::log(v)).collect();
    let ly: Vec<f64> = ys.iter().map(|&v| libm::log(v)).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    Ok(sxy / sxx)
}

/// Layer kinds of the flop model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlopLayer {
    Dense { inputs: u64, outputs: u64 },
    Conv { kernel_h: u64, kernel_w: u64, in_channels: u64, out_channels: u64, patches: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlopEstimate {
    /// Flops to form `W` by the faster pseudoinverse.
    pub weight_solve: u128,
    /// Flops to form `S = W·A` over the target batch.
    pub target_sums: u128,
    /// Flops of the weight-space forward pass over the training batch.
    pub weight_space: u128,
}

impl FlopEstimate {
    /// Target-space over weight-space cost of one layer.
    pub fn ratio(&self) -> f64 {
        (self.weight_solve + self.target_sums) as f64 / self.weight_space as f64
    }
}

/// `n_i³ + 2n_i²n̄_b + n_i·n_o·n̄_b` if `n_i < n̄_b`, else the same with
/// `n_i` and `n̄_b` swapped in the first two terms.
pub fn weight_solve_flops(n_i: u128, n_o: u128, nbar: u128) -> u128 {
    let cross = n_i * n_o * nbar;
    if n_i < nbar {
        n_i * n_i * n_i + 2 * n_i * n_i * nbar + cross
    } else {
        nbar * nbar * nbar + 2 * nbar * nbar * n_i + cross
    }
}

/// Flop counts of one layer with target batch `nbar` and training batch `nb`.
pub fn flop_estimate(layer: FlopLayer, nbar: u64, nb: u64) -> Result<FlopEstimate> {
    let (n_i, n_o, cols, train_cols) = match layer {
        FlopLayer::Dense { inputs, outputs } => (inputs, outputs, nbar as u128, nb as u128),
        FlopLayer::Conv {
            kernel_h,
            kernel_w,
            in_channels,
            out_channels,
            patches,
        } => (
            kernel_h * kernel_w * in_channels,
            out_channels,
            nbar as u128 * patches as u128,
            nb as u128 * patches as u128,
        ),
    };
    if n_i == 0 || n_o == 0 || cols == 0 || train_cols == 0 {
        return Err(Error::invalid("flop model dimensions must be positive"));
    }
    let (n_i, n_o) = (n_i as u128, n_o as u128);
    Ok(FlopEstimate {
        weight_solve: weight_solve_flops(n_i, n_o, cols),
        target_sums: n_i * n_o * cols,
        weight_space: n_i * n_o * train_cols,
    })
}

/// Outcome of one check of [`quick_suite`].
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// A few seconds of self-checks: gradients, pseudoinverse forms, the
/// lemma identity and the flop model.
pub fn quick_suite(seed: u64) -> Vec<CheckOutcome> {
    use crate::activation::Activation;
    use crate::loss::Head;
    use crate::rng::Rng64;
    use alloc::format;

    let mut out = Vec::new();
    let mut rng = Rng64::seed(seed);

    let grads = (|| -> Result<(f64, f64)> {
        let spec = NetworkSpec::new(vec![3, 4, 3, 2], true, Activation::Tanh, Head::SoftmaxXent)?;
        let t = ffnn::init_targets(&spec, rng.normal_matrix(3, 8), 1.0, seed)?;
        let x = rng.normal_matrix(3, 6);
        let labels = crate::datasets::one_hot(&[0, 1, 1, 0, 1, 0], 2)?;
        let (_, manual) = ffnn::target_loss_and_gradient(&spec, &t, 0.1, Untangling::Scu, &x, &labels, Default::default())?;
        let (_, auto) = ffnn::target_loss_and_gradient_autograd(&spec, &t, 0.1, Untangling::Scu, &x, &labels, Default::default())?;
        let fd = finite_diff_gradient(
            |p| {
                let tp = TargetParams {
                    targets: p.to_vec(),
                    xbar: t.xbar.clone(),
                };
                ffnn::target_loss(&spec, &tp, 0.1, Untangling::Scu, &x, &labels)
            },
            &t.targets,
            1e-5,
        )?;
        Ok((max_relative_error(&manual, &auto, 1e-6), max_relative_error(&manual, &fd, 1e-6)))
    })();
    match grads {
        Ok((a, f)) => out.push(CheckOutcome {
            name: "target gradient",
            passed: a <= 1e-8 && f <= 1e-4,
            detail: format!("manual vs autograd {a:.2e}, vs finite differences {f:.2e}"),
        }),
        Err(e) => out.push(CheckOutcome {
            name: "target gradient",
            passed: false,
            detail: format!("{e}"),
        }),
    }

    let mut worst_branch: f64 = 0.0;
    let mut worst_lemma: f64 = 0.0;
    for _ in 0..20 {
        let (r, c) = (1 + rng.below(8), 1 + rng.below(8));
        let a = rng.normal_matrix(r, c);
        for lambda in [1e-3, 0.1] {
            if let (Ok(w), Ok(tl)) = (
                linalg::reg_pseudoinverse_with(&a, lambda, linalg::PinvBranch::Wide),
                linalg::reg_pseudoinverse_with(&a, lambda, linalg::PinvBranch::Tall),
            ) {
                worst_branch = worst_branch.max(w.relative_distance(&tl, 1e-300));
            } else {
                worst_branch = f64::INFINITY;
            }
            let res = check_lemma_identity(&a, lambda).unwrap_or(f64::INFINITY);
            worst_lemma = worst_lemma.max(res / (1.0 + a.frobenius_norm()));
        }
    }
    out.push(CheckOutcome {
        name: "pseudoinverse forms",
        passed: worst_branch <= 1e-9,
        detail: format!("max relative difference {worst_branch:.2e}"),
    });
    out.push(CheckOutcome {
        name: "lemma identity",
        passed: worst_lemma <= 1e-8,
        detail: format!("max scaled residual {worst_lemma:.2e}"),
    });

    let flops = flop_estimate(FlopLayer::Dense { inputs: 2, outputs: 3 }, 5, 5).map(|f| f.weight_solve);
    out.push(CheckOutcome {
        name: "flop model",
        passed: flops == Ok(78),
        detail: format!("{flops:?}"),
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::Activation;
    use crate::loss::Head;
    use crate::rng::Rng64;

    #[test]
    fn quadratic_derivative() {
        let g = finite_diff_gradient(|p| Ok(p[0][(0, 0)] * p[0][(0, 0)]), &[Matrix::filled(1, 1, 3.0)], 1e-5).unwrap();
        assert!((g[0][(0, 0)] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let g = finite_diff_gradient(|_| Ok(2.5), &[Matrix::ones(2, 3)], 1e-4).unwrap();
        assert_eq!(g[0].max_abs(), 0.0);
        assert!(finite_diff_gradient(|_| Ok(1.0), &[Matrix::ones(1, 1)], 0.0).is_err());
        assert!(finite_diff_gradient(|_| Ok(f64::NAN), &[Matrix::ones(1, 1)], 1e-3).is_err());
    }

    #[test]
    fn lemma_trivial_cases() {
        for lambda in [1e-3, 0.5, 7.0] {
            assert!(check_lemma_identity(&Matrix::identity(4), lambda).unwrap() < 1e-14);
            assert_eq!(check_lemma_identity(&Matrix::zeros(3, 2), lambda).unwrap(), 0.0);
        }
        assert!(check_lemma_identity(&Matrix::identity(2), 0.0).is_err());
    }

    #[test]
    fn lemma_holds_for_rank_deficient_input() {
        let mut rng = Rng64::seed(1);
        let a = rng.normal_matrix(5, 2).matmul(&rng.normal_matrix(2, 6)).unwrap();
        let r = check_lemma_identity(&a, 0.1).unwrap();
        assert!(r < 1e-8 * (1.0 + a.frobenius_norm()), "{r}");
    }

    fn tiny() -> (NetworkSpec, TargetParams, Matrix, Matrix) {
        let spec = NetworkSpec::new(vec![2, 3, 2], false, Activation::Tanh, Head::SoftmaxXent).unwrap();
        let mut rng = Rng64::seed(2);
        let t = ffnn::init_targets(&spec, rng.normal_matrix(2, 6), 1.0, 3).unwrap();
        let x = rng.normal_matrix(2, 5);
        let labels = crate::datasets::one_hot(&[0, 1, 0, 1, 1], 2).unwrap();
        (spec, t, x, labels)
    }

    #[test]
    fn preconditioner_is_psd_and_caps_size() {
        let (spec, t, x, labels) = tiny();
        let p = preconditioner_step(&spec, &t, 0.1, &x, &labels, 1e-3, PRECONDITIONER_CAP).unwrap();
        assert_eq!(p.jacobian.shape(), (17, 30));
        let eig = linalg::symmetric_eigenvalues(&p.preconditioner()).unwrap();
        assert!(eig[0] > -1e-10);
        assert!(matches!(
            preconditioner_step(&spec, &t, 0.1, &x, &labels, 1e-3, 10),
            Err(Error::TooLarge { .. })
        ));
    }

    #[test]
    fn zero_weight_gradient_gives_zero_prediction() {
        let (spec, t, x, _) = tiny();
        // Labels equal to the softmax of the outputs make the gradient vanish.
        let (w, _) = ffnn::targets_to_weights_scu(&spec, &t, 0.1).unwrap();
        let y = ffnn::forward(&spec, &w, &x).unwrap();
        let soft = crate::loss::softmax(y.output());
        let p = preconditioner_step(&spec, &t, 0.1, &x, &soft, 1e-3, PRECONDITIONER_CAP).unwrap();
        assert!(p.predicted.iter().all(|m| m.max_abs() < 1e-14));
    }

    #[test]
    fn first_order_error_is_quadratic() {
        let (spec, t, x, labels) = tiny();
        let etas = [1e-3, 5e-4, 2.5e-4];
        let errs: Vec<f64> = etas.iter().map(|&e| first_order_error(&spec, &t, 0.1, &x, &labels, e).unwrap()).collect();
        let slope = loglog_slope(&etas, &errs).unwrap();
        assert!((1.7..=2.3).contains(&slope), "{slope}");
    }

    #[test]
    fn slope_of_exact_power_law() {
        let xs = [1.0, 2.0, 4.0];
        let ys = [3.0, 24.0, 192.0];
        assert!((loglog_slope(&xs, &ys).unwrap() - 3.0).abs() < 1e-12);
        assert!(loglog_slope(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn pinned_flop_counts() {
        let dense = |i, o, nbar| flop_estimate(FlopLayer::Dense { inputs: i, outputs: o }, nbar, nbar).unwrap().weight_solve;
        assert_eq!(dense(2, 3, 5), 78);
        assert_eq!(dense(6, 2, 4), 304);
        assert_eq!(dense(3, 1, 3), 90);
        let conv = |k, ic, oc, nbar, patches| {
            flop_estimate(
                FlopLayer::Conv {
                    kernel_h: k,
                    kernel_w: k,
                    in_channels: ic,
                    out_channels: oc,
                    patches,
                },
                nbar,
                nbar,
            )
            .unwrap()
            .weight_solve
        };
        assert_eq!(conv(3, 1, 8, 1, 4), 640);
        assert_eq!(conv(1, 2, 3, 2, 5), 148);
    }

    #[test]
    fn dense_layer_cost_is_about_four_nbar_over_nb() {
        let d = 20u64;
        let (nbar, nb) = (400u64, 100u64);
        let f = flop_estimate(FlopLayer::Dense { inputs: d, outputs: d }, nbar, nb).unwrap();
        assert!(f.weight_solve <= 4 * (d * d * nbar) as u128);
        // ratio = (d + 4 n̄_b) / n_b
        let approx = 4.0 * nbar as f64 / nb as f64;
        assert!((f.ratio() - approx).abs() <= d as f64 / nb as f64 + 1e-12);
    }

    #[test]
    fn quick_suite_passes() {
        for c in quick_suite(7) {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
