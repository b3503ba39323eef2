use fragnet::layers::{
    activation, batch_norm, conv1d, depthwise_conv1d, global_avgpool, group_norm, maxpool1d,
    pointwise_conv1d, Activation, Mode,
};
use fragnet::tensor::{Tape, Tensor, Var};
use fragnet::testutil::Lcg;
use proptest::prelude::*;

/// Standard kernel whose every `[in, out]` slice is the rank-one product of the depthwise
/// tap and the pointwise matrix: `W[t, m, n] = dw[t, m] * pw[m, n]`.
fn factored_kernel(dw: &Tensor<f64>, pw: &Tensor<f64>) -> Tensor<f64> {
    let (k, m) = (dw.shape()[0], dw.shape()[1]);
    let n = pw.shape()[1];
    let mut w = Vec::with_capacity(k * m * n);
    for t in 0..k {
        for c in 0..m {
            for o in 0..n {
                w.push(dw.data()[t * m + c] * pw.data()[c * n + o]);
            }
        }
    }
    Tensor::new(&[k, m, n], w).unwrap()
}

fn factorization_max_diff(rng: &mut Lcg) -> f64 {
    let b = 1 + rng.below(3);
    let l = 8 + rng.below(60);
    let k = 1 + 2 * rng.below(7);
    let m = 1 + rng.below(8);
    let n = 1 + rng.below(8);
    let stride = 1 + rng.below(4);
    let x = rng.tensor(&[b, l, m], -1.0, 1.0);
    let dw = rng.tensor(&[k, m], -1.0, 1.0);
    let pw = rng.tensor(&[m, n], -1.0, 1.0);
    let w = factored_kernel(&dw, &pw);
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let (dwv, pwv, wv) = (tape.constant(dw), tape.constant(pw), tape.constant(w));
    let d = depthwise_conv1d(&mut tape, xv, dwv, stride).unwrap();
    let sep = pointwise_conv1d(&mut tape, d, pwv, None, 1).unwrap();
    let std = conv1d(&mut tape, xv, wv, None, stride).unwrap();
    assert_eq!(tape.shape(sep), tape.shape(std));
    tape.value(sep)
        .data()
        .iter()
        .zip(tape.value(std).data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

#[test]
fn separable_equals_rank_factored_standard_conv() {
    let mut rng = Lcg::new(2024);
    for _ in 0..50 {
        let d = factorization_max_diff(&mut rng);
        assert!(d < 1e-5, "max abs diff {d}");
    }
}

type Layer = Box<dyn Fn(&mut Tape<f64>, Var) -> Var>;

fn layers(rng: &mut Lcg, c: usize) -> Vec<(&'static str, Layer)> {
    let w = rng.tensor(&[5, c, 3], -1.0, 1.0);
    let dw = rng.tensor(&[5, c], -1.0, 1.0);
    let pw = rng.tensor(&[c, 4], -1.0, 1.0);
    let gamma = rng.tensor(&[c], 0.5, 1.5);
    let beta = rng.tensor(&[c], -0.5, 0.5);
    let (g2, b2) = (gamma.clone(), beta.clone());
    vec![
        ("conv", Box::new(move |t: &mut Tape<f64>, x| {
            let w = t.constant(w.clone());
            conv1d(t, x, w, None, 2).unwrap()
        })),
        ("depthwise", Box::new(move |t: &mut Tape<f64>, x| {
            let w = t.constant(dw.clone());
            depthwise_conv1d(t, x, w, 1).unwrap()
        })),
        ("pointwise", Box::new(move |t: &mut Tape<f64>, x| {
            let w = t.constant(pw.clone());
            pointwise_conv1d(t, x, w, None, 1).unwrap()
        })),
        ("hardswish", Box::new(|t: &mut Tape<f64>, x| activation(t, x, Activation::Hardswish))),
        ("maxpool", Box::new(|t: &mut Tape<f64>, x| maxpool1d(t, x, 4, 4).unwrap())),
        ("avgpool", Box::new(|t: &mut Tape<f64>, x| global_avgpool(t, x).unwrap())),
        ("group_norm", Box::new(move |t: &mut Tape<f64>, x| {
            let (g, b) = (t.constant(gamma.clone()), t.constant(beta.clone()));
            group_norm(t, x, g, b, 2, 1e-5).unwrap()
        })),
        ("batch_norm_eval", Box::new(move |t: &mut Tape<f64>, x| {
            let (g, b) = (t.constant(g2.clone()), t.constant(b2.clone()));
            let mean = vec![0.1; c];
            let var = vec![0.8; c];
            batch_norm(t, x, g, b, &mean, &var, 1e-5, Mode::Eval).unwrap().0
        })),
    ]
}

fn batch_norm_train(t: &mut Tape<f64>, x: Var, c: usize) -> Var {
    let (g, b) = (t.constant(Tensor::ones(&[c])), t.constant(Tensor::zeros(&[c])));
    batch_norm(t, x, g, b, &vec![0.0; c], &vec![1.0; c], 1e-5, Mode::Train).unwrap().0
}

fn run(layer: &dyn Fn(&mut Tape<f64>, Var) -> Var, x: &Tensor<f64>) -> (Vec<usize>, Vec<f64>) {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let y = layer(&mut tape, xv);
    (tape.shape(y).to_vec(), tape.value(y).data().to_vec())
}

fn permute_rows(data: &[f64], rows: usize, perm: &[usize]) -> Vec<f64> {
    let w = data.len() / rows;
    perm.iter().flat_map(|&p| data[p * w..(p + 1) * w].iter().copied()).collect()
}

fn close(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn permuting_the_batch_permutes_outputs(seed in any::<u64>(), b in 2usize..6, l in 8usize..24) {
        let c = 4;
        let mut rng = Lcg::new(seed);
        let x = rng.tensor(&[b, l, c], -2.0, 2.0);
        let mut perm: Vec<usize> = (0..b).collect();
        for i in (1..b).rev() {
            perm.swap(i, rng.below(i + 1));
        }
        let xp = Tensor::new(&[b, l, c], permute_rows(x.data(), b, &perm)).unwrap();
        for (name, layer) in layers(&mut rng, c) {
            let (shape, y) = run(&layer, &x);
            let (_, yp) = run(&layer, &xp);
            prop_assert!(close(&permute_rows(&y, b, &perm), &yp), "{}", name);
            // batch independence: each row equals the layer applied to that sample alone
            let w = y.len() / b;
            for i in 0..b {
                let xi = Tensor::from_slice(&[1, l, c], &x.data()[i * l * c..(i + 1) * l * c]).unwrap();
                let (_, yi) = run(&layer, &xi);
                prop_assert!(close(&y[i * w..(i + 1) * w], &yi), "{} {:?}", name, shape);
            }
        }
    }

    #[test]
    fn batch_norm_training_mode_couples_samples(seed in any::<u64>(), b in 2usize..6) {
        let (l, c) = (6, 3);
        let mut rng = Lcg::new(seed);
        let x = rng.tensor(&[b, l, c], -2.0, 2.0);
        let layer = |t: &mut Tape<f64>, v| batch_norm_train(t, v, c);
        // still permutation equivariant
        let perm: Vec<usize> = (0..b).rev().collect();
        let xp = Tensor::new(&[b, l, c], permute_rows(x.data(), b, &perm)).unwrap();
        let (_, y) = run(&layer, &x);
        let (_, yp) = run(&layer, &xp);
        for (a, p) in permute_rows(&y, b, &perm).iter().zip(&yp) {
            prop_assert!((a - p).abs() < 1e-12);
        }
        // but the first sample's output moves when another sample changes
        let mut changed = x.clone();
        changed.data_mut()[(b - 1) * l * c..].iter_mut().for_each(|v| *v += 3.0);
        let (_, yc) = run(&layer, &changed);
        let w = l * c;
        let moved = y[..w].iter().zip(&yc[..w]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(moved > 1e-3, "batch norm in training mode should depend on the batch");
    }
}
