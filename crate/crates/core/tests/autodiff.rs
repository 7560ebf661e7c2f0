use cpdnet_core::autodiff::gradcheck::{gradcheck, DEFAULT_STEP};
use cpdnet_core::autodiff::{BnStats, Graph, Mode, Tensor};
use cpdnet_core::losses::{ClipMode, LossKind};
use cpdnet_core::rng::Stream;
use cpdnet_core::{Error, Matrix};

const TOL: f64 = 1e-6;

fn random(rows: usize, cols: usize, seed: u64) -> Matrix<f64> {
    let mut s = Stream::new(seed);
    Matrix::from_fn(rows, cols, |_, _| s.normal())
}

/// Weights the output with fixed random coefficients so every entry matters.
fn project(g: &mut Graph<f64>, y: cpdnet_core::autodiff::Var, seed: u64) -> cpdnet_core::autodiff::Var {
    let w = g.constant(random(g.shape(y).1, 1, seed));
    let col = g.affine(y, w, None).unwrap();
    let z = g.softplus(col);
    g.sum(z)
}

#[test]
fn affine_matches_finite_differences() {
    let inputs = [random(4, 3, 1), random(3, 2, 2), random(1, 2, 3)];
    let r = gradcheck(&inputs, DEFAULT_STEP, |g, v| {
        let y = g.affine(v[0], v[1], Some(v[2])).unwrap();
        project(g, y, 9)
    });
    assert!(r.max_rel_error() < TOL, "{:?}", r.rel_errors);
}

#[test]
fn add_scale_and_sum() {
    let inputs = [random(3, 2, 4), random(3, 2, 5)];
    let r = gradcheck(&inputs, DEFAULT_STEP, |g, v| {
        let a = g.add(v[0], v[1]).unwrap();
        let a = g.scale(a, -1.7);
        project(g, a, 6)
    });
    assert!(r.max_rel_error() < TOL, "{:?}", r.rel_errors);
}

#[test]
fn softplus_gradient_is_sigmoid() {
    let x = Matrix::<f64>::from_vec(1, 5, vec![-30.0, -1.5, 0.0, 2.0, 40.0]).unwrap();
    let mut g = Graph::new();
    let mut t = Tensor::param(x.clone());
    let v = g.input(&t);
    let y = g.softplus(v);
    let s = g.sum(y);
    g.backward(s).unwrap();
    g.accumulate_into(v, &mut t);
    for (gx, xv) in t.grad().unwrap().as_slice().iter().zip(x.as_slice()) {
        let sig = 1.0 / (1.0 + (-xv).exp());
        assert!((gx - sig).abs() < 1e-12);
    }
    assert!((g.value(y)[(0, 4)] - 40.0).abs() < 1e-12);
    let r = gradcheck(&[random(3, 3, 7)], DEFAULT_STEP, |g, v| {
        let y = g.softplus(v[0]);
        project(g, y, 8)
    });
    assert!(r.max_rel_error() < TOL, "{:?}", r.rel_errors);
}

#[test]
fn relu_away_from_the_kink() {
    // entries bounded away from zero
    let x = Matrix::from_fn(3, 4, |i, j| if (i + j) % 2 == 0 { 0.3 + i as f64 } else { -0.4 - j as f64 });
    let r = gradcheck(&[x], DEFAULT_STEP, |g, v| {
        let y = g.relu(v[0]);
        project(g, y, 10)
    });
    assert!(r.max_rel_error() < TOL, "{:?}", r.rel_errors);
}

#[test]
fn batchnorm_train_mode_matches_finite_differences() {
    let inputs = [random(6, 3, 11), random(1, 3, 12), random(1, 3, 13)];
    let r = gradcheck(&inputs, DEFAULT_STEP, |g, v| {
        let mut stats = BnStats::new(3);
        let y = g.batchnorm(v[0], v[1], v[2], &mut stats, Mode::Train).unwrap();
        project(g, y, 14)
    });
    assert!(r.max_rel_error() < 1e-5, "{:?}", r.rel_errors);
}

#[test]
fn batchnorm_eval_mode_matches_finite_differences() {
    let inputs = [random(4, 3, 15), random(1, 3, 16), random(1, 3, 17)];
    let r = gradcheck(&inputs, DEFAULT_STEP, |g, v| {
        let mut stats = BnStats { running_mean: vec![0.1, -0.2, 0.3], running_var: vec![0.5, 2.0, 1.0] };
        let y = g.batchnorm(v[0], v[1], v[2], &mut stats, Mode::Eval).unwrap();
        project(g, y, 18)
    });
    assert!(r.max_rel_error() < TOL, "{:?}", r.rel_errors);
}

#[test]
fn batchnorm_running_statistics() {
    let x = Matrix::from_vec(4, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let mut g = Graph::<f64>::new();
    let xv = g.constant(x);
    let gamma = g.constant(Matrix::filled(1, 1, 1.0));
    let beta = g.constant(Matrix::filled(1, 1, 0.0));
    let mut stats = BnStats::new(1);
    let y = g.batchnorm(xv, gamma, beta, &mut stats, Mode::Train).unwrap();
    // mean 2.5, biased var 1.25, unbiased 5/3
    assert!((stats.running_mean[0] - 0.25).abs() < 1e-15);
    assert!((stats.running_var[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-15);
    let out = g.value(y);
    let expected = (1.0 - 2.5) / (1.25f64 + 1e-5).sqrt();
    assert!((out[(0, 0)] - expected).abs() < 1e-12);

    let single = g.constant(Matrix::filled(1, 1, 3.0));
    assert_eq!(g.batchnorm(single, gamma, beta, &mut stats, Mode::Train).unwrap_err(), Error::BatchTooSmall(1));
    assert!(g.batchnorm(single, gamma, beta, &mut stats, Mode::Eval).is_ok());
}

#[test]
fn maxpool_gradient_is_one_hot_at_argmax() {
    let x = Matrix::from_vec(3, 2, vec![0.1, 5.0, 2.0, -1.0, 1.5, 4.0]).unwrap();
    let mut g = Graph::new();
    let mut t = Tensor::param(x);
    let v = g.input(&t);
    let m = g.maxpool_rows(v).unwrap();
    assert_eq!(g.value(m).as_slice(), &[2.0, 5.0]);
    let s = g.sum(m);
    g.backward(s).unwrap();
    g.accumulate_into(v, &mut t);
    assert_eq!(t.grad().unwrap().as_slice(), &[0.0, 1.0, 1.0, 0.0, 0.0, 0.0]);

    let r = gradcheck(&[random(7, 4, 19)], DEFAULT_STEP, |g, v| {
        let m = g.maxpool_segments(v[0], &[3, 4]).unwrap();
        project(g, m, 20)
    });
    assert!(r.max_rel_error() < TOL, "{:?}", r.rel_errors);
}

#[test]
fn maxpool_ties_go_to_the_lowest_row() {
    let x = Matrix::from_vec(3, 1, vec![1.0, 1.0, 1.0]).unwrap();
    let mut g = Graph::new();
    let mut t = Tensor::param(x);
    let v = g.input(&t);
    let m = g.maxpool_rows(v).unwrap();
    let s = g.sum(m);
    g.backward(s).unwrap();
    g.accumulate_into(v, &mut t);
    assert_eq!(t.grad().unwrap().as_slice(), &[1.0, 0.0, 0.0]);
}

#[test]
fn tile_and_concat_match_finite_differences() {
    let inputs = [random(5, 2, 21), random(1, 3, 22)];
    let r = gradcheck(&inputs, DEFAULT_STEP, |g, v| {
        let t = g.tile_row(v[1], 5).unwrap();
        let c = g.concat_cols(v[0], t).unwrap();
        project(g, c, 23)
    });
    assert!(r.max_rel_error() < TOL, "{:?}", r.rel_errors);

    let inputs = [random(2, 3, 24), random(7, 3, 25)];
    let r = gradcheck(&inputs, DEFAULT_STEP, |g, v| {
        let t = g.tile_segments(v[0], &[3, 4]).unwrap();
        let s = g.slice_rows(v[1], 0, 7).unwrap();
        let a = g.add(t, s).unwrap();
        let tail = g.slice_rows(a, 2, 4).unwrap();
        project(g, tail, 26)
    });
    assert!(r.max_rel_error() < TOL, "{:?}", r.rel_errors);
}

#[test]
fn chamfer_matches_finite_differences() {
    for (k, kind) in [
        LossKind::Chamfer,
        LossKind::Clipped { c: 0.5, mode: ClipMode::Cap },
        LossKind::Clipped { c: 0.05, mode: ClipMode::Floor },
    ]
    .into_iter()
    .enumerate()
    {
        let inputs = [random(5, 2, 30 + k as u64), random(6, 2, 40 + k as u64)];
        let r = gradcheck(&inputs, DEFAULT_STEP, |g, v| g.chamfer(v[0], v[1], kind).unwrap());
        assert!(r.max_rel_error() < 1e-5, "{kind:?}: {:?}", r.rel_errors);
    }
}

#[test]
fn shape_errors() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(random(3, 2, 1));
    let b = g.constant(random(3, 3, 2));
    assert!(matches!(g.affine(a, b, None), Err(Error::ShapeMismatch { op: "affine", .. })));
    assert!(matches!(g.add(a, b), Err(Error::ShapeMismatch { .. })));
    assert!(matches!(g.maxpool_segments(a, &[2]), Err(Error::ShapeMismatch { .. })));
    assert!(matches!(g.slice_rows(a, 2, 2), Err(Error::ShapeMismatch { .. })));
    assert!(matches!(g.tile_row(a, 2), Err(Error::ShapeMismatch { .. })));
    assert_eq!(g.chamfer(a, b, LossKind::Chamfer).unwrap_err(), Error::DimMismatch(2, 3));
}

#[test]
fn backward_needs_a_scalar_and_runs_once() {
    let mut g = Graph::<f64>::new();
    let t = Tensor::param(random(2, 2, 3));
    let v = g.input(&t);
    assert_eq!(g.backward(v).unwrap_err(), Error::NonScalarLoss(2, 2));
    let s = g.sum(v);
    g.backward(s).unwrap();
    assert_eq!(g.backward(s).unwrap_err(), Error::TapeConsumed);
}

#[test]
fn constants_receive_no_gradient() {
    let mut g = Graph::<f64>::new();
    let c = g.constant(random(2, 2, 4));
    let p = Tensor::param(random(2, 2, 5));
    let v = g.input(&p);
    let a = g.add(c, v).unwrap();
    let s = g.sum(a);
    g.backward(s).unwrap();
    assert!(g.grad(c).is_none());
    assert_eq!(g.grad(v).unwrap().as_slice(), &[1.0; 4]);
}

#[test]
fn shared_weights_sum_branch_gradients() {
    // One weight used by two branches gets the sum of both contributions.
    let w0 = random(2, 2, 6);
    let xa = random(3, 2, 7);
    let xb = random(4, 2, 8);
    let mut g = Graph::new();
    let mut w = Tensor::param(w0.clone());
    let wv = g.input(&w);
    let a = g.constant(xa.clone());
    let b = g.constant(xb.clone());
    let ya = g.affine(a, wv, None).unwrap();
    let yb = g.affine(b, wv, None).unwrap();
    let sa = g.sum(ya);
    let sb = g.sum(yb);
    let s = g.add(sa, sb).unwrap();
    g.backward(s).unwrap();
    g.accumulate_into(wv, &mut w);
    // d/dW sum(X W) = X^T 1
    let expected =
        Matrix::from_fn(2, 2, |i, _| (0..3).map(|r| xa[(r, i)]).sum::<f64>() + (0..4).map(|r| xb[(r, i)]).sum::<f64>());
    for (x, y) in w.grad().unwrap().as_slice().iter().zip(expected.as_slice()) {
        assert!((x - y).abs() < 1e-12);
    }

    let r = gradcheck(&[w0, xa], DEFAULT_STEP, |g, v| {
        let b = g.constant(xb.clone());
        let ya = g.affine(v[1], v[0], None).unwrap();
        let yb = g.affine(b, v[0], None).unwrap();
        let pa = g.maxpool_rows(ya).unwrap();
        let pb = g.maxpool_rows(yb).unwrap();
        let c = g.concat_cols(pa, pb).unwrap();
        project(g, c, 9)
    });
    assert!(r.max_rel_error() < TOL, "{:?}", r.rel_errors);
}

#[test]
fn single_precision_graph_runs() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(random(3, 2, 1).cast());
    let w = g.leaf(random(2, 2, 2).cast(), true);
    let y = g.affine(x, w, None).unwrap();
    let s = g.sum(y);
    g.backward(s).unwrap();
    assert_eq!(g.grad(w).unwrap().shape(), (2, 2));
}
