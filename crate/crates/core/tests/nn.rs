use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trackcast::nn::gradcheck::check_coordinates;
use trackcast::nn::{
    conv1d, mse_loss, AdamState, ConvKernel1D, GradientTape, ParamId, ParamStore, Tensor2, Tensor3,
};
use trackcast::Error;

fn random_tensor(rng: &mut ChaCha8Rng, c: usize, l: usize) -> Tensor2 {
    Tensor2::from_vec(c, l, (0..c * l).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

// Two conv layers, gates, concat and slices: every differentiable op appears at least once.
struct Toy {
    store: ParamStore,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    x: Tensor2,
    y: Tensor2,
}

impl Toy {
    fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let w1 = store.add_uniform("w1", vec![4, 2 * 3], 6, &mut rng).unwrap();
        let b1 = store.add_uniform("b1", vec![4, 1], 6, &mut rng).unwrap();
        let w2 = store.add_uniform("w2", vec![1, 4], 4, &mut rng).unwrap();
        let b2 = store.add_uniform("b2", vec![1, 1], 4, &mut rng).unwrap();
        let x = random_tensor(&mut rng, 2, 9);
        let y = random_tensor(&mut rng, 1, 7);
        Self { store, w1, b1, w2, b2, x, y }
    }

    fn loss(&self, store: &ParamStore) -> (f64, trackcast::nn::Gradients) {
        let mut t = GradientTape::new();
        let x = t.constant(self.x.clone());
        let w1 = t.param(store, self.w1);
        let b1 = t.param(store, self.b1);
        let w2 = t.param(store, self.w2);
        let b2 = t.param(store, self.b2);
        let h = t.conv1d(x, w1, Some(b1), 3).unwrap();
        let g = t.slice_rows(h, 0, 2).unwrap();
        let c = t.slice_rows(h, 2, 2).unwrap();
        let g = t.sigmoid(g).unwrap();
        let c = t.tanh(c).unwrap();
        let gc = t.mul(g, c).unwrap();
        let keep = t.one_minus(g).unwrap();
        let mixed = t.add(gc, keep).unwrap();
        let diff = t.sub(mixed, c).unwrap();
        let both = t.concat(&[mixed, diff]).unwrap();
        let scaled = t.row_affine(both, &[0.5, 2.0, -1.0, 1.5], &[0.1, 0.0, 0.3, -0.2]).unwrap();
        let out = t.linear(scaled, w2, Some(b2)).unwrap();
        let out = t.slice_cols(out, 1, 7).unwrap();
        let y = t.constant(self.y.clone());
        let loss = t.mse(out, y).unwrap();
        (t.scalar(loss), t.backward(loss, store).unwrap())
    }
}

#[test]
fn every_op_matches_central_differences() {
    for seed in 0..20 {
        let toy = Toy::new(seed);
        let (_, grads) = toy.loss(&toy.store);
        let coords: Vec<(ParamId, usize)> = toy
            .store
            .iter()
            .flat_map(|(id, p)| (0..p.len()).map(move |k| (id, k)))
            .collect();
        let mut store = toy.store.clone();
        let report = check_coordinates(&mut store, &grads, &coords, 1e-5, 1e-6, |s| toy.loss(s).0);
        for e in report {
            assert!(e.rel_error < 1e-4, "seed {seed}: {} [{}] {e:?}", e.param, e.index);
        }
    }
}

#[test]
fn backward_is_deterministic() {
    let toy = Toy::new(7);
    let (a, ga) = toy.loss(&toy.store);
    let (b, gb) = toy.loss(&toy.store);
    assert_eq!(a.to_bits(), b.to_bits());
    assert_eq!(ga, gb);
}

#[test]
fn adam_trajectory_is_bit_identical_across_reruns() {
    let run = || {
        let toy = Toy::new(3);
        let mut store = toy.store.clone();
        let mut adam = AdamState::with_defaults(&store);
        let mut losses = Vec::new();
        for _ in 0..25 {
            let (l, g) = toy.loss(&store);
            adam.update(&mut store, &g).unwrap();
            losses.push(l.to_bits());
        }
        (losses, store.iter().map(|(_, p)| p.data.clone()).collect::<Vec<_>>(), adam.step())
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    assert_eq!(a.2, 25);
    // The toy problem is smooth and small enough that Adam must make progress.
    assert!(f64::from_bits(a.0[24]) < f64::from_bits(a.0[0]));
}

#[test]
fn adam_rejects_bad_hyperparameters() {
    let store = ParamStore::new();
    assert!(matches!(AdamState::new(&store, 1e-3, 1.0, 0.999), Err(Error::Config(_))));
    assert!(matches!(AdamState::new(&store, 0.0, 0.9, 0.999), Err(Error::Config(_))));
    let s = AdamState::with_defaults(&store);
    assert_eq!(s.step(), 0);
}

#[test]
fn tensor_shape_errors() {
    assert!(matches!(Tensor2::from_vec(0, 3, vec![]), Err(Error::Dimension(_))));
    assert!(matches!(Tensor2::from_vec(2, 2, vec![0.0; 3]), Err(Error::Dimension(_))));
    assert!(Tensor2::from_rows(&[vec![1.0, 2.0], vec![3.0]]).is_err());
    assert!(matches!(Tensor3::from_vec(1, 1, 0, vec![]), Err(Error::Dimension(_))));
    let a = Tensor3::zeros(2, 1, 3);
    let b = Tensor3::zeros(2, 1, 4);
    assert!(matches!(mse_loss(&a, &b), Err(Error::Dimension(_))));
}

#[test]
fn tensor3_indexing_and_window() {
    let data: Vec<f64> = (0..24).map(f64::from).collect();
    let t = Tensor3::from_vec(4, 2, 3, data).unwrap();
    assert_eq!(t.get(2, 1, 0), 15.0);
    assert_eq!(t.slice(1).row(0), &[6.0, 7.0, 8.0]);
    let w = t.window(1, 2).unwrap();
    assert_eq!(w.dims(), (2, 2, 3));
    assert_eq!(w.get(0, 0, 0), 6.0);
    assert!(t.window(3, 2).is_err());
}

#[test]
fn tape_shape_errors() {
    let mut t = GradientTape::new();
    let a = t.constant(Tensor2::zeros(2, 3));
    let b = t.constant(Tensor2::zeros(3, 3));
    assert!(matches!(t.add(a, b), Err(Error::Dimension(_))));
    assert!(matches!(t.mse(a, b), Err(Error::Dimension(_))));
    assert!(t.slice_rows(a, 1, 2).is_err());
    assert!(t.slice_cols(a, 2, 2).is_err());
    let w = t.constant(Tensor2::zeros(1, 4));
    assert!(matches!(t.conv1d(a, w, None, 2), Err(Error::Config(_))));
    assert!(matches!(t.conv1d(a, w, None, 3), Err(Error::Dimension(_))));
}

fn kernel_strategy() -> impl Strategy<Value = (usize, usize, usize, Vec<f64>)> {
    (1usize..4, 1usize..4, prop_oneof![Just(1usize), Just(3), Just(5)]).prop_flat_map(|(o, i, w)| {
        (Just(o), Just(i), Just(w), prop::collection::vec(-2.0f64..2.0, o * i * w))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_is_linear_without_bias(
        (o, i, w, weights) in kernel_strategy(),
        len in 1usize..12,
        seed in any::<u64>(),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let k = ConvKernel1D::new(o, i, w, weights, vec![0.0; o]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_tensor(&mut rng, i, len);
        let y = random_tensor(&mut rng, i, len);
        let comb: Vec<f64> = x.data().iter().zip(y.data()).map(|(p, q)| a * p + b * q).collect();
        let lhs = conv1d(&Tensor2::from_vec(i, len, comb).unwrap(), &k).unwrap();
        let (cx, cy) = (conv1d(&x, &k).unwrap(), conv1d(&y, &k).unwrap());
        for (j, v) in lhs.data().iter().enumerate() {
            let rhs = a * cx.data()[j] + b * cy.data()[j];
            prop_assert!((v - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
        }
    }

    #[test]
    fn conv_is_translation_equivariant_in_the_interior(
        (o, i, w, weights) in kernel_strategy(),
        len in 8usize..20,
        s in 1usize..4,
        seed in any::<u64>(),
    ) {
        let k = ConvKernel1D::new(o, i, w, weights, vec![0.25; o]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_tensor(&mut rng, i, len);
        let mut shifted = Tensor2::zeros(i, len);
        for c in 0..i {
            for l in s..len {
                shifted.set(c, l, x.get(c, l - s));
            }
        }
        let (a, b) = (conv1d(&x, &k).unwrap(), conv1d(&shifted, &k).unwrap());
        let half = w / 2;
        // Output l of the shifted input reads input l-s-half..=l-s+half, all of which must be real data.
        for c in 0..o {
            for l in (s + 2 * half)..(len - half) {
                prop_assert_eq!(b.get(c, l), a.get(c, l - s));
            }
        }
    }

    #[test]
    fn mse_is_nonnegative_and_zero_only_on_equality(
        data in prop::collection::vec(-5.0f64..5.0, 12),
        bump in prop::option::of((0usize..12, 0.001f64..1.0)),
    ) {
        let p = Tensor3::from_vec(2, 2, 3, data.clone()).unwrap();
        let mut q = data;
        if let Some((k, d)) = bump {
            q[k] += d;
        }
        let q = Tensor3::from_vec(2, 2, 3, q).unwrap();
        let m = mse_loss(&p, &q).unwrap();
        prop_assert!(m >= 0.0);
        prop_assert_eq!(m == 0.0, bump.is_none());
    }
}
