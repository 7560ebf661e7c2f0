use cpdnet_core::autodiff::{Graph, Mode};
use cpdnet_core::geometry::{PointSet, ShapePair};
use cpdnet_core::losses::{ClipMode, LossKind};
use cpdnet_core::model::{checkpoint, lipschitz_bound, Activation, NetworkParams, DESCRIPTOR_WIDTH};
use cpdnet_core::rng::Stream;
use cpdnet_core::synth::{base_shape, deform};
use cpdnet_core::train::loss_gradcheck;
use cpdnet_core::{Error, Matrix, Params64};

fn fish_pair(n: usize, seed: u64) -> ShapePair {
    let base = base_shape("fish", n, seed).unwrap();
    let target = deform(&base, 0.4, seed + 7).unwrap();
    ShapePair::new(base, target).unwrap()
}

fn permuted(ps: &PointSet, perm: &[usize]) -> PointSet {
    ps.select(perm).unwrap()
}

fn reversed(n: usize) -> Vec<usize> {
    (0..n).rev().collect()
}

#[test]
fn init_rejects_unsupported_dims() {
    assert_eq!(Params64::init(4, Activation::Relu, 0).unwrap_err(), Error::UnsupportedDim(4));
    assert_eq!(Params64::init(3, Activation::Relu, 5).unwrap(), Params64::init(3, Activation::Relu, 5).unwrap());
}

#[test]
fn fresh_network_drifts_are_finite_and_small() {
    for (dim, shape) in [(2, "fish"), (3, "sphere3d")] {
        let p = Params64::init(dim, Activation::Relu, 1).unwrap();
        let s = base_shape(shape, 64, 0).unwrap();
        let t = deform(&s, 0.5, 1).unwrap();
        let f = p.register(&s, &t).unwrap();
        assert_eq!(f.len(), 64);
        assert!(f.drifts.all_finite());
        assert!(f.drifts.max_abs() < 10.0, "{}", f.drifts.max_abs());
    }
}

#[test]
fn descriptor_is_order_invariant_and_ignores_duplicates() {
    let p = Params64::init(2, Activation::Relu, 2).unwrap();
    let s = base_shape("star", 40, 1).unwrap();
    let d = p.encode(&s).unwrap();
    assert_eq!(d.len(), DESCRIPTOR_WIDTH);
    assert_eq!(p.encode(&permuted(&s, &reversed(40))).unwrap(), d);
    let mut shuffle: Vec<usize> = (0..40).collect();
    Stream::new(9).shuffle(&mut shuffle);
    assert_eq!(p.encode(&permuted(&s, &shuffle)).unwrap(), d);
    let doubled = s.concat(&s).unwrap();
    assert_eq!(p.encode(&doubled).unwrap(), d);
}

#[test]
fn distinct_shapes_have_distinct_descriptors() {
    let p = Params64::init(2, Activation::Relu, 3).unwrap();
    let a = p.encode(&base_shape("fish", 64, 0).unwrap()).unwrap();
    let b = p.encode(&base_shape("grid2d", 64, 0).unwrap()).unwrap();
    assert!(a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-6));
}

#[test]
fn encode_checks_dimension() {
    let p = Params64::init(2, Activation::Relu, 0).unwrap();
    let s3 = base_shape("sphere3d", 16, 0).unwrap();
    assert_eq!(p.encode(&s3).unwrap_err(), Error::DimMismatch(3, 2));
}

#[test]
fn drifts_are_permutation_equivariant() {
    let p = Params64::init(2, Activation::Softplus, 4).unwrap();
    let pair = fish_pair(48, 2);
    let f = p.register_pair(&pair).unwrap();
    let mut perm: Vec<usize> = (0..48).collect();
    Stream::new(3).shuffle(&mut perm);
    let moved = p.register(&permuted(&pair.source, &perm), &pair.target).unwrap();
    for (i, &src) in perm.iter().enumerate() {
        assert_eq!(moved.drifts.row(i), f.drifts.row(src));
    }
}

#[test]
fn identical_points_get_identical_drifts() {
    let p = Params64::init(2, Activation::Relu, 5).unwrap();
    let base = base_shape("ellipse", 20, 0).unwrap();
    let s = base.concat(&base.select(&[3, 3]).unwrap()).unwrap();
    let f = p.register(&s, &base).unwrap();
    assert_eq!(f.drifts.row(3), f.drifts.row(20));
    assert_eq!(f.drifts.row(20), f.drifts.row(21));
}

#[test]
fn transformed_is_source_plus_drift() {
    let p = Params64::init(2, Activation::Relu, 6).unwrap();
    let pair = fish_pair(32, 3);
    let f = p.register_pair(&pair).unwrap();
    for i in 0..32 {
        for d in 0..2 {
            assert_eq!(f.transformed.point(i)[d], pair.source.point(i)[d] + f.drifts[(i, d)]);
        }
    }
}

#[test]
fn register_equals_encode_then_morph() {
    let p = Params64::init(2, Activation::Relu, 7).unwrap();
    let pair = fish_pair(32, 4);
    let l_s = p.encode(&pair.source).unwrap();
    let l_g = p.encode(&pair.target).unwrap();
    let via_morph = p.morph(&pair.source, &l_s, &l_g).unwrap();
    let direct = p.register_pair(&pair).unwrap();
    for (a, b) in via_morph.drifts.as_slice().iter().zip(direct.drifts.as_slice()) {
        assert!((a - b).abs() < 1e-12);
    }
}

/// The first morph layer applied to explicitly concatenated rows
/// `[x_i, L_S, L_G]` agrees with the factored evaluation.
#[test]
fn factored_first_layer_matches_concatenated_rows() {
    let p = Params64::init(2, Activation::Relu, 8).unwrap();
    let pair = fish_pair(24, 5);
    let l_s = p.encode(&pair.source).unwrap();
    let l_g = p.encode(&pair.target).unwrap();
    let field = p.morph(&pair.source, &l_s, &l_g).unwrap();

    let mut g = Graph::<f64>::new();
    let x = g.constant(pair.source.to_matrix());
    let globals: Vec<f64> = l_s.iter().chain(&l_g).copied().collect();
    let globals = g.constant(Matrix::from_vec(1, 2 * DESCRIPTOR_WIDTH, globals).unwrap());
    let tiled = g.tile_row(globals, 24).unwrap();
    let mut h = g.concat_cols(x, tiled).unwrap();
    // every row carries the same descriptors
    let rows = g.value(h).clone();
    for i in 1..24 {
        assert_eq!(&rows.row(i)[2..], &rows.row(0)[2..]);
    }
    let last = p.morph.len() - 1;
    for (k, layer) in p.morph.iter().enumerate() {
        let w = g.constant(layer.weight.value.clone());
        let b = g.constant(layer.bias.value.clone());
        h = g.affine(h, w, Some(b)).unwrap();
        if k < last {
            let bn = layer.bn.as_ref().unwrap();
            let gamma = g.constant(bn.gamma.value.clone());
            let beta = g.constant(bn.beta.value.clone());
            let mut stats = bn.stats.clone();
            h = g.batchnorm(h, gamma, beta, &mut stats, Mode::Eval).unwrap();
            h = g.relu(h);
        }
    }
    for (a, b) in g.value(h).as_slice().iter().zip(field.drifts.as_slice()) {
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
}

fn empirical_ratio(p: &Params64, source: &PointSet, target: &PointSet, probes: usize, seed: u64) -> f64 {
    let l_s = p.encode(source).unwrap();
    let l_g = p.encode(target).unwrap();
    let mut s = Stream::new(seed);
    let mut coords = Vec::with_capacity(probes * 4);
    for _ in 0..probes {
        let (x, y) = (s.uniform_in(-1.5, 1.5), s.uniform_in(-1.5, 1.5));
        let r = s.uniform_in(1e-6, 1e-3);
        let a = s.uniform_in(0.0, std::f64::consts::TAU);
        coords.extend([x, y, x + r * a.cos(), y + r * a.sin()]);
    }
    let probe_set = PointSet::new(2, coords).unwrap();
    let f = p.morph(&probe_set, &l_s, &l_g).unwrap();
    let mut worst = 0.0f64;
    for k in 0..probes {
        let (i, j) = (2 * k, 2 * k + 1);
        let dx = cpdnet_core::geometry::sq_dist(f.drifts.row(i), f.drifts.row(j)).sqrt();
        let d = cpdnet_core::geometry::sq_dist(probe_set.point(i), probe_set.point(j)).sqrt();
        worst = worst.max(dx / d);
    }
    worst
}

#[test]
fn drift_map_respects_the_lipschitz_bound() {
    for act in [Activation::Relu, Activation::Softplus] {
        let p = Params64::init(2, act, 9).unwrap();
        let pair = fish_pair(32, 6);
        let bound = lipschitz_bound(&p);
        assert!(bound.is_finite() && bound > 0.0);
        let ratio = empirical_ratio(&p, &pair.source, &pair.target, 1000, 1);
        assert!(ratio <= bound, "{act:?}: ratio {ratio} bound {bound}");
    }
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let p = NetworkParams::<f32>::init(2, Activation::Relu, 10).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.cpdn");
    checkpoint::save(&p, &path).unwrap();
    let q: NetworkParams<f32> = checkpoint::load(&path).unwrap();
    let pair = fish_pair(32, 7);
    assert_eq!(p.register_pair(&pair).unwrap(), q.register_pair(&pair).unwrap());
}

fn toy_pair() -> ShapePair {
    // Six well-separated source points and a perturbed target; no ties.
    let s = PointSet::new(2, vec![0.0, 0.1, 0.9, -0.2, -0.7, 0.5, 0.3, 0.8, -0.4, -0.9, 0.6, 0.45]).unwrap();
    let t = PointSet::new(2, vec![0.12, 0.05, 0.8, -0.35, -0.6, 0.62, 0.28, 0.95, -0.5, -0.8, 0.7, 0.3]).unwrap();
    ShapePair::new(s, t).unwrap()
}

fn second_toy_pair() -> ShapePair {
    let s = PointSet::new(2, vec![-0.2, 0.3, 0.5, 0.6, -0.8, -0.1, 0.1, -0.7, 0.75, -0.55, -0.35, 0.9]).unwrap();
    let t = PointSet::new(2, vec![-0.1, 0.45, 0.6, 0.5, -0.9, 0.05, 0.2, -0.6, 0.7, -0.7, -0.3, 0.8]).unwrap();
    ShapePair::new(s, t).unwrap()
}

/// Descriptors vary across pairs only, so a train-mode check needs two
/// pairs for the encoder to receive gradient through the morph batch norm.
#[test]
fn train_mode_loss_gradient_matches_finite_differences() {
    let p = Params64::init(2, Activation::Softplus, 11).unwrap();
    let (a, b) = (toy_pair(), second_toy_pair());
    let report = loss_gradcheck(&p, &[&a, &b], LossKind::Chamfer, Mode::Train, 1e-5, 16, 3).unwrap();
    assert_eq!(report.rel_errors.len(), 30);
    assert!(report.max_rel_error() < 1e-5, "{:?}", report.rel_errors);
    // the encoder's first weight really is exercised
    assert!(report.analytic[0].max_abs() > 1e-6);
    assert!(report.analytic.iter().all(|a| a.cols() == 16 || a.cols() < 16 && a.cols() > 0));
}

#[test]
fn eval_mode_loss_gradient_on_a_single_toy_pair() {
    let p = Params64::init(2, Activation::Softplus, 13).unwrap();
    let report = loss_gradcheck(&p, &[&toy_pair()], LossKind::Chamfer, Mode::Eval, 1e-5, 16, 5).unwrap();
    assert!(report.max_rel_error() < 1e-5, "{:?}", report.rel_errors);
    assert!(report.analytic[0].max_abs() > 1e-6);
}

#[test]
fn clipped_loss_gradient_matches_finite_differences() {
    let p = Params64::init(2, Activation::Softplus, 12).unwrap();
    let (a, b) = (toy_pair(), second_toy_pair());
    let kind = LossKind::Clipped { c: 0.1, mode: ClipMode::Cap };
    let report = loss_gradcheck(&p, &[&a, &b], kind, Mode::Train, 1e-5, 8, 4).unwrap();
    assert!(report.max_rel_error() < 1e-5, "{:?}", report.rel_errors);
}
