use tsdl_core::cnn::{self, CnnSpec, Images};
use tsdl_core::datasets::one_hot;
use tsdl_core::ffnn::{self, NetworkSpec, TargetParams, Untangling};
use tsdl_core::rnn::{self, RnnSpec, RnnTargetParams, SequenceRef};
use tsdl_core::verification::{finite_diff_gradient, max_relative_error};
use tsdl_core::{Activation, Head, Matrix, Rng64};

fn random_config(rng: &mut Rng64, case: usize) -> (NetworkSpec, TargetParams, Matrix, Matrix, f64) {
    let n_weight_layers = 2 + case % 3;
    let mut widths = vec![1 + rng.below(5)];
    for _ in 0..n_weight_layers {
        widths.push(2 + rng.below(5));
    }
    let act = if case.is_multiple_of(2) { Activation::Tanh } else { Activation::LRelu };
    let head = if case % 4 < 2 { Head::SoftmaxXent } else { Head::MseLinear };
    let spec = NetworkSpec::new(widths.clone(), (case / 2) % 2 == 1, act, head).unwrap();
    let nbar = 3 + rng.below(8);
    let n = 2 + rng.below(6);
    let t = ffnn::init_targets(&spec, rng.normal_matrix(widths[0], nbar), 1.0, case as u64).unwrap();
    let x = rng.normal_matrix(widths[0], n);
    let out = *widths.last().unwrap();
    let labels = match head {
        Head::SoftmaxXent => one_hot(&(0..n).map(|_| rng.below(out)).collect::<Vec<_>>(), out).unwrap(),
        Head::MseLinear => rng.normal_matrix(out, n),
    };
    let lambda = if case % 3 == 0 { 0.01 } else { 0.1 };
    (spec, t, x, labels, lambda)
}

#[test]
fn gradient_triangle_on_random_networks() {
    let mut rng = Rng64::seed(2024);
    for case in 0..24 {
        let (spec, t, x, labels, lambda) = random_config(&mut rng, case);
        let (_, manual) = ffnn::target_loss_and_gradient(&spec, &t, lambda, Untangling::Scu, &x, &labels, Default::default()).unwrap();
        let (_, auto) =
            ffnn::target_loss_and_gradient_autograd(&spec, &t, lambda, Untangling::Scu, &x, &labels, Default::default()).unwrap();
        let fd = finite_diff_gradient(
            |p| {
                let tp = TargetParams {
                    targets: p.to_vec(),
                    xbar: t.xbar.clone(),
                };
                ffnn::target_loss(&spec, &tp, lambda, Untangling::Scu, &x, &labels)
            },
            &t.targets,
            1e-5,
        )
        .unwrap();
        let e_auto = max_relative_error(&manual, &auto, 1e-6);
        let e_fd = max_relative_error(&manual, &fd, 1e-6);
        assert!(e_auto <= 1e-8, "case {case}: manual vs autograd {e_auto}");
        assert!(e_fd <= 1e-4, "case {case}: manual vs finite differences {e_fd}");
    }
}

#[test]
fn ocu_gradient_matches_finite_differences() {
    let mut rng = Rng64::seed(7);
    let (spec, t, x, labels, lambda) = random_config(&mut rng, 4);
    let (_, g) = ffnn::target_loss_and_gradient(&spec, &t, lambda, Untangling::Ocu, &x, &labels, Default::default()).unwrap();
    let fd = finite_diff_gradient(
        |p| {
            let tp = TargetParams {
                targets: p.to_vec(),
                xbar: t.xbar.clone(),
            };
            ffnn::target_loss(&spec, &tp, lambda, Untangling::Ocu, &x, &labels)
        },
        &t.targets,
        1e-5,
    )
    .unwrap();
    assert!(max_relative_error(&g, &fd, 1e-6) <= 1e-4);
}

#[test]
fn weight_gradient_matches_finite_differences() {
    let mut rng = Rng64::seed(8);
    let (spec, t, x, labels, lambda) = random_config(&mut rng, 5);
    let (w, _) = ffnn::targets_to_weights_scu(&spec, &t, lambda).unwrap();
    let (_, g) = ffnn::weight_gradient(&spec, &w, &x, &labels).unwrap();
    let fd = finite_diff_gradient(
        |p| {
            let wp = ffnn::WeightParams { layers: p.to_vec() };
            spec.output_head.loss(ffnn::forward(&spec, &wp, &x)?.output(), &labels)
        },
        &w.layers,
        1e-5,
    )
    .unwrap();
    assert!(max_relative_error(&g, &fd, 1e-6) <= 1e-5);
}

fn bit_sequences(steps: usize, n: usize, seed: u64) -> (Vec<Matrix>, Vec<Matrix>) {
    let mut rng = Rng64::seed(seed);
    let x: Vec<Matrix> = (0..steps).map(|_| Matrix::from_fn(1, n, |_, _| f64::from(rng.bit()))).collect();
    let y = (0..steps)
        .map(|t| {
            let prev = if t > 0 { x[t - 1].clone() } else { Matrix::zeros(1, n) };
            Matrix::from_fn(2, n, |r, c| if prev[(0, c)] as usize == r { 1.0 } else { 0.0 })
        })
        .collect();
    (x, y)
}

#[test]
fn rnn_target_gradient_matches_finite_differences() {
    let spec = RnnSpec::simple(1, 4, 2);
    let xbar: Vec<Matrix> = bit_sequences(4, 5, 1).0;
    let t = rnn::init_rnn_targets(&spec, xbar, 1.0, 2).unwrap();
    let (x, y) = bit_sequences(4, 3, 3);
    let mask = [0.0, 1.0, 1.0, 1.0];
    let seq = SequenceRef {
        inputs: &x,
        labels: &y,
        mask: &mask,
    };
    for mode in [Untangling::Scu, Untangling::Ocu] {
        let (_, g) = rnn::rnn_target_loss_and_gradient(&spec, &t, 0.1, mode, &seq).unwrap();
        let fd = finite_diff_gradient(
            |p| {
                let tp = RnnTargetParams {
                    targets: p.to_vec(),
                    xbar: t.xbar.clone(),
                };
                let w = match mode {
                    Untangling::Scu => rnn::rnn_targets_to_weights_scu(&spec, &tp, 0.1)?,
                    Untangling::Ocu => rnn::rnn_targets_to_weights_ocu(&spec, &tp, 0.1)?,
                };
                Ok(rnn::rnn_evaluate(&spec, &w, &seq)?.0)
            },
            &t.targets,
            1e-5,
        )
        .unwrap();
        let e = max_relative_error(&g, &fd, 1e-6);
        assert!(e <= 1e-4, "{mode:?}: {e}");
    }
}

#[test]
fn rnn_weight_gradient_matches_finite_differences() {
    let spec = RnnSpec::simple(1, 3, 2);
    let w = rnn::init_rnn_weights(&spec, 4).unwrap();
    let (x, y) = bit_sequences(5, 4, 5);
    let mask = [0.0, 1.0, 1.0, 1.0, 1.0];
    let seq = SequenceRef {
        inputs: &x,
        labels: &y,
        mask: &mask,
    };
    let (_, g) = rnn::rnn_weight_loss_and_gradient(&spec, &w, &seq).unwrap();
    let fd = finite_diff_gradient(
        |p| Ok(rnn::rnn_evaluate(&spec, &tsdl_core::ffnn::WeightParams { layers: p.to_vec() }, &seq)?.0),
        &w.layers,
        1e-5,
    )
    .unwrap();
    assert!(max_relative_error(&g, &fd, 1e-6) <= 1e-5);
}

#[test]
fn cnn_weight_gradient_matches_finite_differences() {
    let spec = CnnSpec::from_triples(4, &[(3, 2, 2)], vec![3, 2]).unwrap();
    let mut rng = Rng64::seed(9);
    let x = Images::new(rng.normal_matrix(1, 3 * 16), 3, 4, 4).unwrap();
    let labels = one_hot(&[0, 1, 1], 2).unwrap();
    let w = cnn::init_cnn_weights(&spec, 10).unwrap();
    let (_, g) = cnn::cnn_weight_loss_and_gradient(&spec, &w, &x, &labels, None).unwrap();
    let fd = finite_diff_gradient(
        |p| {
            let y = cnn::cnn_predict(&spec, &tsdl_core::ffnn::WeightParams { layers: p.to_vec() }, &x)?;
            spec.output_head.loss(&y, &labels)
        },
        &w.layers,
        1e-6,
    )
    .unwrap();
    assert!(max_relative_error(&g, &fd, 1e-5) <= 1e-4);
}
