mod common;

use common::*;
use s2seg::network::{softmax_xent_scores, Head, LayerKind, LayerSpec, ModelOutput, ModelSpec, Network, Nonlinearity};

#[test]
fn single_layer_pair_gradient() {
    for seed in 0..3 {
        let e = check_segmentation_gradient(seed, 2, Nonlinearity::Identity);
        assert!(e < 1e-6, "seed {seed}: {e}");
    }
}

#[test]
fn three_layer_relu_gradient() {
    for seed in 10..13 {
        let e = check_segmentation_gradient(seed, 3, Nonlinearity::Relu);
        assert!(e < 1e-5, "seed {seed}: {e}");
    }
}

#[test]
fn classification_gradient() {
    let mut r = rng(77);
    let spec = ModelSpec::new(
        vec![
            LayerSpec::new(LayerKind::S2So3Conv, 1, 3, 5, 4, 0.6),
            LayerSpec::new(LayerKind::So3Conv, 3, 2, 4, 3, 0.8),
        ],
        Nonlinearity::Relu,
        Head::Classification { num_classes: 4 },
    )
    .unwrap();
    let net = Network::new(spec).unwrap();
    let p = net.init_params(&mut r);
    let x = random_signal(5, 1, &mut r);
    let loss = |q: &[f64]| {
        let (ModelOutput::Scores(s), _) = net.forward(q, &x).unwrap() else { unreachable!() };
        softmax_xent_scores(&s, 2).unwrap().0
    };
    let (out, tape) = net.forward(&p, &x).unwrap();
    let ModelOutput::Scores(s) = &out else { unreachable!() };
    let (_, g) = softmax_xent_scores(s, 2).unwrap();
    let analytic = net.backward(&p, &tape, &ModelOutput::Scores(g)).unwrap();
    let h = 1e-5;
    let fd: Vec<f64> = (0..p.len())
        .map(|i| {
            let mut q = p.clone();
            q[i] += h;
            let up = loss(&q);
            q[i] -= 2.0 * h;
            (up - loss(&q)) / (2.0 * h)
        })
        .collect();
    let e = max_rel_error(&analytic, &fd);
    assert!(e < 1e-5, "{e}");
}
