use tsdl_core::cnn::{self, CnnSpec, CnnTargetParams, Images};
use tsdl_core::ffnn::{self, NetworkSpec, TargetParams, Untangling, WeightInit};
use tsdl_core::rnn::{self, RnnSpec, RnnTargetParams};
use tsdl_core::{Activation, Head, Rng64};

#[test]
fn ffnn_targets_from_a_forward_pass_recover_the_weights() {
    for (widths, shortcuts) in [(vec![3, 5, 4, 2], false), (vec![2, 4, 4, 3], true)] {
        let spec = NetworkSpec::new(widths, shortcuts, Activation::Tanh, Head::SoftmaxXent).unwrap();
        let w0 = ffnn::init_weights(&spec, WeightInit::Glorot, 1).unwrap();
        let xbar = Rng64::seed(2).normal_matrix(spec.width(1), 200);
        let trace = ffnn::forward(&spec, &w0, &xbar).unwrap();
        let t = TargetParams {
            targets: trace.sums,
            xbar,
        };
        for mode in [Untangling::Scu, Untangling::Ocu] {
            let (w, _) = ffnn::targets_to_weights_masked(&spec, &t, 1e-10, mode, None).unwrap();
            for (a, b) in w.layers.iter().zip(&w0.layers) {
                assert!(a.sub(b).unwrap().max_abs() < 1e-6, "{mode:?} {shortcuts} {}", a.sub(b).unwrap().max_abs());
            }
        }
    }
}

#[test]
fn rnn_targets_from_a_forward_pass_recover_the_weights() {
    let spec = RnnSpec::simple(1, 7, 2);
    let w0 = rnn::init_rnn_weights(&spec, 3).unwrap();
    let mut rng = Rng64::seed(4);
    let xbar: Vec<_> = (0..6).map(|_| rng.normal_matrix(1, 20)).collect();
    let trace = rnn::rnn_forward(&spec, &w0, &xbar).unwrap();
    let t = RnnTargetParams {
        targets: trace.sums,
        xbar,
    };
    let w = rnn::rnn_targets_to_weights_scu(&spec, &t, 1e-10).unwrap();
    for (a, b) in w.layers.iter().zip(&w0.layers) {
        assert!(a.sub(b).unwrap().max_abs() < 1e-6);
    }
    let p = rnn::project_rnn_targets(&spec, &t, 1e-10, Untangling::Scu).unwrap();
    for (a, b) in p.targets.iter().zip(&t.targets) {
        assert!(a.sub(b).unwrap().max_abs() < 1e-6);
    }
}

#[test]
fn cnn_targets_from_a_forward_pass_recover_the_outputs() {
    let spec = CnnSpec::from_triples(8, &[(3, 3, 2), (3, 4, 2)], vec![6, 3]).unwrap();
    let w0 = cnn::init_cnn_weights(&spec, 5).unwrap();
    let xbar = Images::new(Rng64::seed(6).normal_matrix(1, 30 * 64), 30, 8, 8).unwrap();
    let t = CnnTargetParams {
        targets: cnn::cnn_sums(&spec, &w0, &xbar).unwrap(),
        xbar: xbar.clone(),
    };
    let w = cnn::cnn_targets_to_weights(&spec, &t, 1e-10, Untangling::Scu).unwrap();
    for (a, b) in w.layers.iter().zip(&w0.layers) {
        assert!(a.sub(b).unwrap().max_abs() < 1e-6);
    }
}
